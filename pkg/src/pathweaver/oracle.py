"""Closed-form references, benchmark vector fields and synthetic data."""
from __future__ import annotations

import numpy as np

from .core import DiffusionSchedule, ObservationSet, build_grid
from .drift import FunctionDrift, as_drift
from .integrator import euler_maruyama
from .rng import Role, normal_block

_LOG_2PI = np.log(2.0 * np.pi)

LORENZ_DEFAULT = (10.0, 28.0, 8.0 / 3.0)


def brownian_log_prob(sigma, obs: ObservationSet) -> float:
    """Closed-form ``log p(x_2..x_N | x_1)`` for ``dX = sigma dW`` (scalar or per-dimension ``sigma``)."""
    obs.require_pairs()
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    var = np.broadcast_to((sigma**2) * np.diff(obs.times)[:, None], (len(obs) - 1, obs.dim))
    inc = np.diff(obs.values, axis=0)
    return float(-0.5 * np.sum(inc**2 / var + np.log(var) + _LOG_2PI))


def ou_transition(theta: float, sigma: float, dt):
    """Mean factor and variance of an OU transition over ``dt``."""
    dt = np.asarray(dt, dtype=np.float64)
    decay = np.exp(-theta * dt)
    var = sigma**2 * -np.expm1(-2.0 * theta * dt) / (2.0 * theta)
    return decay, var


def ou_log_prob(theta: float, sigma, obs: ObservationSet) -> float:
    """Exact ``log p(x_2..x_N | x_1)`` for ``dX = -theta X dt + sigma dW``, dimensions independent."""
    if theta <= 0 or np.any(np.asarray(sigma) <= 0):
        raise ValueError("theta and sigma must be positive")
    obs.require_pairs()
    decay, var = ou_transition(theta, 1.0, np.diff(obs.times))
    var = var[:, None] * np.asarray(sigma, dtype=np.float64) ** 2
    resid = obs.values[1:] - decay[:, None] * obs.values[:-1]
    var = np.broadcast_to(var, resid.shape)
    return float(-0.5 * np.sum(resid**2 / var + np.log(var) + _LOG_2PI))


def gbm_log_prob(mu: float, sigma: float, obs: ObservationSet) -> float:
    """Exact log-normal ``log p(x_2..x_N | x_1)`` for ``dX = mu X dt + sigma X dW``."""
    obs.require_pairs()
    if np.any(obs.values <= 0):
        raise ValueError("geometric Brownian motion lives on positive values")
    logs = np.log(obs.values)
    dt = np.diff(obs.times)[:, None]
    mean = logs[:-1] + (mu - 0.5 * sigma**2) * dt
    var = sigma**2 * np.broadcast_to(dt, mean.shape)
    resid = logs[1:] - mean
    return float(-0.5 * np.sum(resid**2 / var + np.log(var) + _LOG_2PI) - np.sum(logs[1:]))


def gbm_sample(mu: float, sigma: float, x0, times, seed: int) -> ObservationSet:
    """Exact GBM values at ``times`` (no discretisation)."""
    times = np.asarray(times, dtype=np.float64)
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    z = normal_block(seed, np.array([0]), np.arange(1, times.size), Role.DATA, x0.size)[0]
    dt = np.diff(times)[:, None]
    steps = (mu - 0.5 * sigma**2) * dt + sigma * np.sqrt(dt) * z
    logs = np.log(x0) + np.vstack([np.zeros((1, x0.size)), np.cumsum(steps, axis=0)])
    return ObservationSet(times, np.exp(logs))


def lorenz_field(x, params=LORENZ_DEFAULT) -> np.ndarray:
    """Lorenz vector field; accepts a 3-vector or an ``(M, 3)`` batch."""
    s, rho, beta = params
    x = np.asarray(x, dtype=np.float64)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([s * (x2 - x1), x1 * (rho - x3) - x2, x1 * x2 - beta * x3], axis=-1)


def lorenz_jacobian(x, params=LORENZ_DEFAULT) -> np.ndarray:
    s, rho, beta = params
    x = np.asarray(x, dtype=np.float64)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    one, zero = np.ones_like(x1), np.zeros_like(x1)
    rows = [
        np.stack([-s * one, s * one, zero], axis=-1),
        np.stack([rho - x3, -one, -x1], axis=-1),
        np.stack([x2, x1, -beta * one], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def vdp_field(x, mu: float = 1.0) -> np.ndarray:
    """Van der Pol vector field ``(x2, mu (1 - x1^2) x2 - x1)``."""
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, mu * (1.0 - x1**2) * x2 - x1], axis=-1)


def lorenz_drift(params=LORENZ_DEFAULT) -> FunctionDrift:
    return FunctionDrift(lambda X, t: lorenz_field(X, params), 3, jac=lambda X, t: lorenz_jacobian(X, params))


def vdp_drift(mu: float = 1.0) -> FunctionDrift:
    return FunctionDrift(lambda X, t: vdp_field(X, mu), 2)


def standard_normal_x0(seed: int, n_paths: int, dim: int) -> np.ndarray:
    return normal_block(seed, np.arange(n_paths), np.array([0]), Role.INITIAL_STATE, dim)[:, 0]


def generate_sde_data(field, diffusion: DiffusionSchedule, n_paths: int, n_obs: int, horizon: float, x0_sampler=standard_normal_x0, seed: int = 0, dt_fine: float = 1e-3, dim: int | None = None, workers=None) -> list:
    """Euler-Maruyama on a fine grid, read off at ``n_obs`` equally spaced times in ``[0, horizon]``.

    No observation noise is added. ``x0_sampler(seed, n_paths, dim)`` supplies
    initial states.
    """
    f = as_drift(field, dim)
    d = f.dim if dim is None else dim
    times = np.linspace(0.0, horizon, n_obs)
    grid = build_grid(times, dt_fine)
    x0 = np.asarray(x0_sampler(seed, n_paths, d), dtype=np.float64).reshape(n_paths, d)
    paths = euler_maruyama(f, diffusion, x0, grid, n_paths, seed, workers)
    return [ObservationSet(times, paths.values[k, grid.obs_index]) for k in range(n_paths)]


def err_metric(f_learned, f_true, points) -> float:
    """``sum ||f_learned - f_true||^2 / sum ||f_true||^2`` over ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("err_metric needs at least one point")
    t = np.zeros(points.shape[0])
    truth = _evaluate(f_true, points, t)
    denom = float(np.sum(truth**2))
    if denom == 0.0:
        raise ZeroDivisionError("true field vanishes at every point; err_metric is undefined")
    diff = _evaluate(f_learned, points, t) - truth
    return float(np.sum(diff**2) / denom)


def _evaluate(field, X, t):
    if hasattr(field, "eval_batch"):
        return np.asarray(field.eval_batch(X, t))
    return np.asarray(field(X))
