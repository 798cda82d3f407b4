"""State-dependent diffusion through an invertible change of variables.

A map ``y = T(x, t)`` sends the data to a space where the diffusion is
constant; there the density is estimated with bridges as usual and the
Jacobian determinant of ``T`` at the observations converts it back. Ito's
lemma recovers the original-space drift and diffusion when needed.
"""
from __future__ import annotations

from typing import Protocol

import numpy as np

from .core import DensityUndefinedError, DiffusionSchedule, ObservationSet
from .girsanov import LogProbEstimate, log_prob, log_prob_gradients

_EPS_CBRT = np.finfo(np.float64).eps ** (1.0 / 3.0)


class InvertibleMap(Protocol):
    """Batched map ``T(., t)``: inputs are ``(M, d)`` states and ``M`` times."""

    dim: int
    param_count: int
    piecewise_linear: bool

    def forward(self, X, t) -> np.ndarray: ...

    def inverse(self, Y, t) -> np.ndarray: ...

    def jacobian(self, X, t) -> np.ndarray:
        """``dT/dx`` of shape ``(M, d, d)``."""

    def time_partial(self, Y, t) -> np.ndarray:
        """``d T^{-1} / dt`` at fixed ``y``, shape ``(M, d)``."""


class _Map:
    param_count = 0
    piecewise_linear = False

    @property
    def params(self):
        return np.zeros(0)

    def with_params(self, params):
        if np.size(params):
            raise ValueError(f"{type(self).__name__} has no parameters")
        return self

    def time_partial(self, Y, t):
        return np.zeros_like(np.asarray(Y, dtype=np.float64))

    def forward_pullback(self, X, t, cotangents):
        """Gradient of ``sum <cotangent, T(X)>`` with respect to the map parameters."""
        return np.zeros(self.param_count)

    def logdet_grad(self, X, t):
        """Gradient of ``sum_m log|det dT/dx (X_m)|`` with respect to the map parameters."""
        return np.zeros(self.param_count)


class IdentityMap(_Map):
    piecewise_linear = True

    def __init__(self, dim: int):
        self.dim = dim

    def forward(self, X, t):
        return np.array(X, dtype=np.float64)

    def inverse(self, Y, t):
        return np.array(Y, dtype=np.float64)

    def jacobian(self, X, t):
        X = np.asarray(X)
        return np.broadcast_to(np.eye(self.dim), (X.shape[0], self.dim, self.dim)).copy()


class AffineMap(_Map):
    """``T(x) = A x + b`` with ``A`` and ``b`` as parameters (``A`` row-major first)."""

    piecewise_linear = True

    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.array(A, dtype=np.float64))
        self.dim = self.A.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.array(b, dtype=np.float64).reshape(self.dim)
        self.param_count = self.dim * self.dim + self.dim

    @property
    def params(self):
        return np.concatenate([self.A.reshape(-1), self.b])

    def with_params(self, params):
        params = np.asarray(params, dtype=np.float64)
        n = self.dim * self.dim
        return AffineMap(params[:n].reshape(self.dim, self.dim), params[n:])

    def forward(self, X, t):
        return np.asarray(X, dtype=np.float64) @ self.A.T + self.b

    def inverse(self, Y, t):
        return np.linalg.solve(self.A, (np.asarray(Y, dtype=np.float64) - self.b).T).T

    def jacobian(self, X, t):
        return np.broadcast_to(self.A, (np.shape(X)[0], self.dim, self.dim)).copy()

    def forward_pullback(self, X, t, cotangents):
        C = np.asarray(cotangents, dtype=np.float64)
        return np.concatenate([(C.T @ np.asarray(X, dtype=np.float64)).reshape(-1), C.sum(axis=0)])

    def logdet_grad(self, X, t):
        m = np.shape(X)[0]
        return np.concatenate([m * np.linalg.inv(self.A).T.reshape(-1), np.zeros(self.dim)])


class ScaleMap(AffineMap):
    """``T(x) = a x`` for a scalar ``a`` (kept as an affine map)."""

    def __init__(self, a: float, dim: int = 1):
        super().__init__(a * np.eye(dim))


class LogMap(_Map):
    """Elementwise ``T(x) = scale * log(x)`` on the positive orthant."""

    def __init__(self, dim: int = 1, scale: float = 1.0):
        self.dim = dim
        self.scale = float(scale)

    def forward(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        if np.any(X <= 0):
            raise DensityUndefinedError("log map needs positive states")
        return self.scale * np.log(X)

    def inverse(self, Y, t):
        return np.exp(np.asarray(Y, dtype=np.float64) / self.scale)

    def jacobian(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        return np.einsum("mi,ij->mij", self.scale / X, np.eye(self.dim))


class DriftingFrameMap(_Map):
    """``T(x, t) = x - v t``: a frame moving with velocity ``v``."""

    piecewise_linear = True

    def __init__(self, velocity):
        self.v = np.array(velocity, dtype=np.float64).reshape(-1)
        self.dim = self.v.size

    def forward(self, X, t):
        return np.asarray(X, dtype=np.float64) - np.asarray(t, dtype=np.float64)[:, None] * self.v

    def inverse(self, Y, t):
        return np.asarray(Y, dtype=np.float64) + np.asarray(t, dtype=np.float64)[:, None] * self.v

    def jacobian(self, X, t):
        return np.broadcast_to(np.eye(self.dim), (np.shape(X)[0], self.dim, self.dim)).copy()

    def time_partial(self, Y, t):
        return np.broadcast_to(self.v, np.shape(Y)).copy()


def observation_logdet(tmap, obs: ObservationSet) -> float:
    """``sum_{n >= 2} log|det dT/dx (x_n, t_n)|``; the first point is conditioned on."""
    J = tmap.jacobian(obs.values[1:], obs.times[1:])
    sign, logdet = np.linalg.slogdet(J)
    if np.any(sign == 0) or not np.all(np.isfinite(logdet)):
        n = int(np.flatnonzero((sign == 0) | ~np.isfinite(logdet))[0]) + 1
        raise DensityUndefinedError(f"map Jacobian is singular at observation {n}")
    if np.any(logdet < np.log(1e-12)):
        n = int(np.flatnonzero(logdet < np.log(1e-12))[0]) + 1
        raise DensityUndefinedError(f"map Jacobian is numerically singular at observation {n}")
    return float(np.sum(logdet))


def transformed_observations(tmap, obs: ObservationSet) -> ObservationSet:
    return ObservationSet(obs.times, tmap.forward(obs.values, obs.times))


def transformed_log_prob(obs: ObservationSet, f_tilde, sigma: DiffusionSchedule, tmap, K: int = 100, dt_target: float = 0.01, seed: int = 0, workers=None) -> LogProbEstimate:
    """``log p_X`` for ``X = T^{-1}(Y)`` with ``dY = f_tilde dt + sigma dW``."""
    logdet = observation_logdet(tmap, obs)
    est = log_prob(transformed_observations(tmap, obs), f_tilde, sigma, K, dt_target, seed, workers)
    return LogProbEstimate(
        log_p=est.log_p + logdet,
        log_base=est.log_base + logdet,
        log_mean_weight=est.log_mean_weight,
        std_err_log=est.std_err_log,
        ess=est.ess,
        n_samples=est.n_samples,
        actions=est.actions,
    )


def transformed_log_prob_grad(obs, f_tilde, sigma, tmap, K=100, dt_target=0.01, seed=0, workers=None):
    """Estimate with gradients for the drift and the map parameters.

    Map parameters move the pinned bridge endpoints ``T(x_n)``; the bridge noise
    is held fixed, so the map gradient flows through the sampled paths.
    """
    logdet = observation_logdet(tmap, obs)
    est, grad = log_prob_gradients(transformed_observations(tmap, obs), f_tilde, sigma, K, dt_target, seed, workers, wrt_obs=True)
    g_map = tmap.forward_pullback(obs.values, obs.times, grad.obs) + tmap.logdet_grad(obs.values[1:], obs.times[1:])
    est = LogProbEstimate(est.log_p + logdet, est.log_base + logdet, est.log_mean_weight, est.std_err_log, est.ess, est.n_samples, est.actions)
    return est, grad.params, g_map


def _inverse_jacobian(tmap, y, t):
    x = tmap.inverse(y[None, :], np.array([t]))
    J = tmap.jacobian(x, np.array([t]))[0]
    sign, logdet = np.linalg.slogdet(J)
    if sign == 0 or logdet < np.log(1e-12):
        raise DensityUndefinedError("map Jacobian is singular; diffusion cannot be reconstructed")
    return np.linalg.inv(J)


def ito_correction(tmap, y, t, sigma_matrix) -> np.ndarray:
    """``1/2 sum_k D^2 T^{-1}(y)[s_k, s_k]`` for the columns ``s_k`` of ``sigma_matrix``.

    Second directional derivatives are central differences of the inverse
    map's Jacobian-vector products. Piecewise-linear maps return zero.
    """
    d = y.size
    if getattr(tmap, "piecewise_linear", False):
        return np.zeros(d)
    out = np.zeros(d)
    for k in range(sigma_matrix.shape[1]):
        v = sigma_matrix[:, k]
        nv = np.linalg.norm(v)
        if nv == 0:
            continue
        h = _EPS_CBRT * max(1.0, float(np.linalg.norm(y))) / nv
        plus = _inverse_jacobian(tmap, y + h * v, t) @ v
        minus = _inverse_jacobian(tmap, y - h * v, t) @ v
        out += (plus - minus) / (2.0 * h)
    return 0.5 * out


def reconstruct_sde(f_tilde, sigma: DiffusionSchedule, tmap, x, t: float = 0.0):
    """Original-space ``(f(x, t), g(x, t))`` from the transformed-space drift.

    ``f_i = dT^{-1}_i/dt + (dT^{-1}_i/dy_k) f~_k + 1/2 sigma_jk (d^2 T^{-1}_i / dy_j dy_l) sigma_lk``
    and ``g = (dT/dx)^{-1} sigma``, all evaluated at ``y = T(x, t)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = x.size
    tt = np.array([float(t)])
    y = tmap.forward(x[None, :], tt)[0]
    J = tmap.jacobian(x[None, :], tt)[0]
    sign, logdet = np.linalg.slogdet(J)
    if sign == 0 or logdet < np.log(1e-12):
        raise DensityUndefinedError(f"map Jacobian is singular at x={x}")
    J_inv = np.linalg.inv(J)
    s = np.diag(sigma.sigma_at(tt, d)[0])
    f_y = np.asarray(f_tilde.eval(y, float(t)), dtype=np.float64)
    drift = tmap.time_partial(y[None, :], tt)[0] + J_inv @ f_y + ito_correction(tmap, y, float(t), s)
    return drift, J_inv @ s
