"""Path-space importance sampling of observation densities.

For ``dX = f(X, t) dt + sigma(t) dW`` observed at ``(t_n, x_n)``,

    p_X(x_{1:N}) = p_Y(x_{1:N}) E[exp S[Y] | Y(t_n) = x_n],
    S[Y] = sum_t f_t^T sigma^-2 (Y_{t+dt} - Y_t) - 1/2 sum_t f_t^T sigma^-2 f_t dt,

where ``Y`` is the driftless process ``dY = sigma dW`` and the expectation is
over Brownian bridges through the observations. Drift values are taken at the
left end of each step (Ito). Averaging happens in the log domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import (
    PathEnsemble,
    bridge_layout,
    bridge_rows,
    interval_variances,
    log_base_density,
)
from .core import DiffusionSchedule, EstimationError, ObservationSet, build_grid
from .parallel import map_blocks, sample_blocks
from .rng import Role, derive_seed, normal_block


@dataclass(frozen=True)
class ActionBreakdown:
    alpha: np.ndarray
    beta: np.ndarray
    S: np.ndarray


@dataclass(frozen=True)
class LogProbEstimate:
    log_p: float
    log_base: float
    log_mean_weight: float
    std_err_log: float
    ess: float
    n_samples: int
    actions: ActionBreakdown | None = None


@dataclass(frozen=True)
class LogProbGradient:
    """Gradients of ``log p-hat``; ``obs`` and ``sigma`` only when requested."""

    params: np.ndarray
    obs: np.ndarray | None = None
    sigma: float | None = None


def logmeanexp(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.mean(np.exp(a - m))))


def summarize_weights(S):
    """``(logmeanexp(S), delta-method std error of it, ESS)``."""
    S = np.asarray(S, dtype=np.float64)
    m = np.max(S)
    if not np.isfinite(m):
        raise EstimationError("importance weights are all zero or non-finite")
    w = np.exp(S - m)
    mean = np.mean(w)
    lme = float(m + np.log(mean))
    se = float(np.std(w, ddof=1) / (np.sqrt(S.size) * mean)) if S.size > 1 else float("nan")
    ess = float(np.sum(w) ** 2 / np.sum(w * w))
    return lme, se, ess


class _StepData:
    """Grid quantities the action needs, flattened per step."""

    def __init__(self, grid, diffusion: DiffusionSchedule, d: int):
        self.t_left = np.asarray(grid.nodes[:-1])
        self.dt = np.asarray(grid.step_dt)
        self.prec = diffusion.step_precision(grid, d)
        self.prec_dt = self.prec * self.dt[:, None]


def _check_finite(F, offset):
    if not np.all(np.isfinite(F)):
        k, j = np.argwhere(~np.all(np.isfinite(F), axis=2))[0]
        raise EstimationError(
            f"drift is not finite for sample {offset + k} at node {j}", sample=int(offset + k), node=int(j)
        )


def _block_action(Y, f, steps: _StepData, offset=0):
    kb, T, d = Y.shape
    X = Y[:, :-1].reshape(-1, d)
    t = np.tile(steps.t_left, kb)
    F = np.asarray(f.eval_batch(X, t), dtype=np.float64).reshape(kb, T - 1, d)
    _check_finite(F, offset)
    dY = np.diff(Y, axis=1)
    alpha = np.sum(F * steps.prec * dY, axis=(1, 2))
    beta = np.sum(F * F * steps.prec_dt, axis=(1, 2))
    return F, alpha, beta


def action(paths: PathEnsemble, f, diffusion: DiffusionSchedule, workers: int | None = None) -> ActionBreakdown:
    """Discretised stochastic action of every path in ``paths``."""
    d = paths.dim
    diffusion.check_dim(d)
    steps = _StepData(paths.grid, diffusion, d)
    blocks = sample_blocks(paths.n_samples, paths.grid.n_nodes * d)
    parts = map_blocks(lambda b: _block_action(paths.values[b.start : b.stop], f, steps, b.start)[1:], blocks, workers)
    alpha = np.concatenate([p[0] for p in parts])
    beta = np.concatenate([p[1] for p in parts])
    return ActionBreakdown(alpha=alpha, beta=beta, S=alpha - 0.5 * beta)


class _Run:
    """One estimator evaluation; keeps per-block paths and drifts for gradients."""

    def __init__(self, obs, f, diffusion, K, dt_target, seed, workers, keep):
        if K < 1:
            raise ValueError("K must be >= 1")
        obs.require_pairs()
        d = obs.dim
        diffusion.check_dim(d)
        if getattr(f, "dim", d) != d:
            raise ValueError(f"drift dimension {f.dim} does not match observations ({d})")
        self.obs, self.f, self.diffusion, self.seed, self.workers = obs, f, diffusion, seed, workers
        self.grid = build_grid(obs, dt_target)
        self.layout = bridge_layout(self.grid, diffusion, d)
        self.steps = _StepData(self.grid, diffusion, d)
        self.blocks = sample_blocks(K, self.grid.n_nodes * d)

        def run(b):
            Y = bridge_rows(obs, self.grid, diffusion, seed, np.arange(b.start, b.stop), self.layout)
            F, alpha, beta = _block_action(Y, f, self.steps, b.start)
            return (Y, F, alpha, beta) if keep else (None, None, alpha, beta)

        parts = map_blocks(run, self.blocks, workers)
        self.Y = [p[0] for p in parts]
        self.F = [p[1] for p in parts]
        alpha = np.concatenate([p[2] for p in parts])
        beta = np.concatenate([p[3] for p in parts])
        self.actions = ActionBreakdown(alpha=alpha, beta=beta, S=alpha - 0.5 * beta)
        self.log_base = log_base_density(obs, diffusion)
        lme, se, ess = summarize_weights(self.actions.S)
        self.estimate = LogProbEstimate(
            log_p=self.log_base + lme,
            log_base=self.log_base,
            log_mean_weight=lme,
            std_err_log=se,
            ess=ess,
            n_samples=K,
            actions=self.actions,
        )

    def softmax(self):
        S = self.actions.S
        w = np.exp(S - np.max(S))
        return w / np.sum(w)

    def gradients(self, wrt_params=True, wrt_obs=False, wrt_sigma=False) -> LogProbGradient:
        f, steps, layout = self.f, self.steps, self.layout
        weights = self.softmax()
        need_path = wrt_obs or wrt_sigma
        if wrt_sigma and self.diffusion.kind != "scalar":
            raise NotImplementedError("sigma gradients are implemented for scalar diffusion only")
        sigma = float(self.diffusion.values) if wrt_sigma else None
        interp = layout.interpolant(self.obs.values) if wrt_sigma else None

        def run(i):
            b = self.blocks[i]
            Y, F = self.Y[i], self.F[i]
            kb, T, d = Y.shape
            w = weights[b.start : b.stop, None, None]
            resid = (np.diff(Y, axis=1) - F * steps.dt[:, None]) * steps.prec
            X = Y[:, :-1].reshape(-1, d)
            t = np.tile(steps.t_left, kb)
            cot = (w * resid).reshape(-1, d)
            g_params = f.pullback(X, t, cot) if wrt_params else None
            g_path, g_sig = None, 0.0
            if need_path:
                G = np.zeros_like(Y)
                G[:, :-1] = f.input_vjp(X, t, cot).reshape(kb, T - 1, d)
                fp = w * F * steps.prec
                G[:, :-1] -= fp
                G[:, 1:] += fp
                g_path = G.sum(axis=0)
                if wrt_sigma:
                    g_sig = float(np.sum(G * (Y - interp)) / sigma)
            return g_params, g_path, g_sig

        parts = map_blocks(run, list(range(len(self.blocks))), self.workers)
        g_params = None
        if wrt_params:
            g_params = np.zeros(f.param_count)
            for p in parts:
                g_params = g_params + p[0]
        g_obs = g_sigma = None
        var = interval_variances(self.obs, self.diffusion)
        inc = np.diff(self.obs.values, axis=0)
        if wrt_obs:
            G = np.zeros_like(self.obs.values)
            node_grad = np.zeros((self.grid.n_nodes, self.obs.dim))
            for p in parts:
                node_grad += p[1]
            np.add.at(G, layout.interval, (1.0 - layout.weight) * node_grad)
            np.add.at(G, layout.interval + 1, layout.weight * node_grad)
            r = inc / var
            G[:-1] += r
            G[1:] -= r
            g_obs = G
        if wrt_sigma:
            base = float(np.sum(inc**2 / (var * sigma)) - inc.size / sigma)
            drift_part = float(np.sum(weights * (-2.0 * self.actions.S / sigma)))
            g_sigma = base + drift_part + sum(p[2] for p in parts)
        return LogProbGradient(params=g_params, obs=g_obs, sigma=g_sigma)


def log_prob(obs: ObservationSet, f, diffusion: DiffusionSchedule, K: int = 100, dt_target: float = 0.01, seed: int = 0, workers: int | None = None) -> LogProbEstimate:
    """Importance-sampling estimate of ``log p_X(x_2..x_N | x_1)``."""
    return _Run(obs, f, diffusion, K, dt_target, seed, workers, keep=False).estimate


def log_prob_gradients(obs, f, diffusion, K=100, dt_target=0.01, seed=0, workers=None, wrt_obs=False, wrt_sigma=False):
    """Estimate plus the gradient of ``log p-hat`` (noise held fixed).

    The parameter gradient is ``sum_i softmax(S)_i grad S_i``; paths do not
    depend on the drift parameters, so one batched pullback suffices.
    ``wrt_obs`` adds the gradient with respect to the observation values
    (bridges move with their endpoints) and ``wrt_sigma`` the gradient with
    respect to a scalar diffusion, bridges rescaling with it.
    """
    run = _Run(obs, f, diffusion, K, dt_target, seed, workers, keep=True)
    return run.estimate, run.gradients(wrt_obs=wrt_obs, wrt_sigma=wrt_sigma)


def log_prob_grad(obs, f, diffusion, K=100, dt_target=0.01, seed=0, workers=None):
    est, grad = log_prob_gradients(obs, f, diffusion, K, dt_target, seed, workers)
    return est, grad.params


def marginalize_observation_noise(obs: ObservationSet, noise_std, seed: int, draw: int = 0):
    """One pseudo-observation set ``x~ ~ N(x, noise_std^2)`` and its log-weight.

    With additive Gaussian noise and the conjugate proposal centred on the
    data, ``p(x | x~) / q(x~)`` is identically one, so the log-weight is 0.
    """
    std = np.broadcast_to(np.asarray(noise_std, dtype=np.float64), (obs.dim,))
    if np.any(std < 0) or not np.all(np.isfinite(std)):
        raise ValueError("noise_std must be finite and non-negative")
    if np.all(std == 0):
        return obs, 0.0
    z = normal_block(seed, np.array([draw]), np.arange(len(obs)), Role.OBS_NOISE, obs.dim)[0]
    return obs.with_values(obs.values + std * z), 0.0


def marginal_log_prob(obs, f, diffusion, noise_std, n_draws=64, K=100, dt_target=0.01, seed=0, workers=None) -> LogProbEstimate:
    """``log E_q[p_X(x~)]`` over ``n_draws`` pseudo-observation sets.

    Each draw's density is itself a path-space estimate; the draws are combined
    in the log domain like importance weights.
    """
    logs = np.empty(n_draws)
    for r in range(n_draws):
        pseudo, log_w = marginalize_observation_noise(obs, noise_std, seed, draw=r)
        logs[r] = log_prob(pseudo, f, diffusion, K, dt_target, seed=derive_seed(seed, r), workers=workers).log_p + log_w
    lme, se, ess = summarize_weights(logs)
    return LogProbEstimate(log_p=lme, log_base=0.0, log_mean_weight=lme, std_err_log=se, ess=ess, n_samples=n_draws)
