"""Euler-Maruyama baseline: rollouts, trajectory MSE and its exact gradient.

Gradients come from reverse-mode differentiation through the unrolled rollout
with the noise held fixed. Memory is ``O(K T d)`` because every state is kept
for the backward sweep; an adjoint SDE would trade that for recomputation.
"""
from __future__ import annotations

import numpy as np

from .bridge import PathEnsemble
from .core import DiffusionSchedule, DivergenceError, ObservationSet, TimeGrid, build_grid
from .parallel import map_blocks, sample_blocks
from .rng import Role, derive_seed, normal_block


def _noise(grid, diffusion, seed, samples, d):
    z = normal_block(seed, samples, np.arange(1, grid.n_nodes), Role.EULER, d)
    return z * diffusion.step_scale(grid, d)


def _rollout(f, x0, grid: TimeGrid, noise, offset=0):
    kb, d = x0.shape
    X = np.empty((kb, grid.n_nodes, d))
    X[:, 0] = x0
    nodes, dt = grid.nodes, grid.step_dt
    for j in range(grid.n_steps):
        x = X[:, j]
        drift = f.eval_batch(x, np.full(kb, nodes[j]))
        nxt = x + drift * dt[j] + noise[:, j]
        if not np.all(np.isfinite(nxt)):
            k = int(np.argwhere(~np.all(np.isfinite(nxt), axis=1))[0, 0])
            raise DivergenceError(
                f"Euler-Maruyama state became non-finite at step {j + 1} (sample {offset + k})",
                step=j + 1,
                sample=offset + k,
            )
        X[:, j + 1] = nxt
    return X


def euler_maruyama(f, diffusion: DiffusionSchedule, x0, grid: TimeGrid, K: int, seed: int, workers: int | None = None) -> PathEnsemble:
    """``K`` trajectories of ``X <- X + f(X, t) dt + sigma sqrt(dt) z``.

    ``x0`` is either one ``d``-vector shared by all trajectories or a ``(K, d)`` array.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.shape[-1]
    diffusion.check_dim(d)
    x0 = np.broadcast_to(x0, (K, d))
    # sequential in time, so only the trajectory axis is split
    blocks = sample_blocks(K, d, block_rows=4096)

    def run(b):
        samples = np.arange(b.start, b.stop)
        return _rollout(f, x0[b.start : b.stop], grid, _noise(grid, diffusion, seed, samples, d), b.start)

    values = np.concatenate(map_blocks(run, blocks, workers), axis=0)
    return PathEnsemble(grid=grid, values=values, seed=seed, samples=np.arange(K, dtype=np.uint64))


def _mse_blocks(K, d):
    return sample_blocks(K, d, block_rows=4096)


def mse_loss(f, diffusion: DiffusionSchedule, obs: ObservationSet, K: int = 64, dt_target: float = 0.01, seed: int = 0, workers: int | None = None) -> float:
    """``1/(K (N-1)) sum_{k, n >= 2} |X^k(t_n) - x_n|^2`` with every rollout started at ``x_1``."""
    obs.require_pairs()
    d = obs.dim
    diffusion.check_dim(d)
    grid = build_grid(obs, dt_target)

    def run(b):
        samples = np.arange(b.start, b.stop)
        x0 = np.broadcast_to(obs.values[0], (len(samples), d))
        X = _rollout(f, x0, grid, _noise(grid, diffusion, seed, samples, d), b.start)
        return np.sum((X[:, grid.obs_index[1:]] - obs.values[1:]) ** 2)

    # same block partial sums as mse_grad, so the two losses agree bit for bit
    parts = map_blocks(run, _mse_blocks(K, d), workers)
    return float(sum(parts) * (1.0 / (K * (len(obs) - 1))))


def mse_grad(f, diffusion: DiffusionSchedule, obs: ObservationSet, K: int = 64, dt_target: float = 0.01, seed: int = 0, workers: int | None = None):
    """``(mse_loss, gradient)`` by backpropagation through the rollout."""
    obs.require_pairs()
    d = obs.dim
    diffusion.check_dim(d)
    grid = build_grid(obs, dt_target)
    scale = 1.0 / (K * (len(obs) - 1))
    target = np.full((grid.n_nodes, d), np.nan)
    target[grid.obs_index[1:]] = obs.values[1:]
    is_obs = np.zeros(grid.n_nodes, dtype=bool)
    is_obs[grid.obs_index[1:]] = True
    nodes, dt = grid.nodes, grid.step_dt

    def run(b):
        samples = np.arange(b.start, b.stop)
        kb = len(samples)
        x0 = np.broadcast_to(obs.values[0], (kb, d))
        X = _rollout(f, x0, grid, _noise(grid, diffusion, seed, samples, d), b.start)
        loss = np.sum((X[:, grid.obs_index[1:]] - obs.values[1:]) ** 2)
        g = np.zeros(f.param_count)
        adj = np.zeros((kb, d))
        for j in range(grid.n_steps, 0, -1):
            if is_obs[j]:
                adj = adj + 2.0 * scale * (X[:, j] - target[j])
            # X_j = X_{j-1} + f(X_{j-1}) dt + noise
            gp, gx = f.vjp(X[:, j - 1], np.full(kb, nodes[j - 1]), adj * dt[j - 1])
            g = g + gp
            adj = adj + gx
        return loss, g

    parts = map_blocks(run, _mse_blocks(K, d), workers)
    loss = sum(p[0] for p in parts) * scale
    grad = np.zeros(f.param_count)
    for p in parts:
        grad = grad + p[1]
    return float(loss), grad


def two_point_dataset(gap: float, dim: int, seed: int) -> ObservationSet:
    """Two standard-normal observations ``gap`` apart."""
    x = normal_block(seed, np.array([0]), np.arange(2), Role.DATA, dim)[0]
    return ObservationSet(np.array([0.0, gap]), x)


def gradient_variance_probe(f, diffusion, obs_gap: float, method: str, repeats: int, seed: int, K: int = 64, dt: float = 0.01, obs: ObservationSet | None = None, workers: int | None = None, seeds=None) -> np.ndarray:
    """Per-parameter sample variance of independent-seed loss gradients.

    ``method`` is ``"integrator-mse"`` (gradient of the rollout MSE) or
    ``"path-integral"`` (gradient of ``-log p-hat / N``). Both losses average
    over ``K`` trajectories. Repeat ``r`` uses the seed ``derive_seed(seed, r)``
    unless ``seeds`` lists them explicitly; the dataset is fixed by ``seed``
    alone unless given.
    """
    from .girsanov import log_prob_grad

    if repeats < 2:
        raise ValueError("repeats must be >= 2")
    if seeds is None:
        seeds = [derive_seed(seed, r) for r in range(repeats)]
    elif len(seeds) != repeats:
        raise ValueError(f"expected {repeats} seeds, got {len(seeds)}")
    if obs is None:
        obs = two_point_dataset(obs_gap, f.dim, seed)
    grads = np.empty((repeats, f.param_count))
    for r, s in enumerate(seeds):
        if method == "integrator-mse":
            grads[r] = mse_grad(f, diffusion, obs, K, dt, s, workers)[1]
        elif method == "path-integral":
            grads[r] = -log_prob_grad(obs, f, diffusion, K, dt, s, workers)[1] / len(obs)
        else:
            raise ValueError(f"unknown method {method!r}")
    return np.var(grads, axis=0, ddof=1)
