"""Brownian motion and Gauss-Markov bridges pinned to observations.

Bridges are produced by sampling the unconditional process and then applying
the additive two-point correction

    Y~_t = Y_t + K(t, tau) K(tau, tau)^{-1} (y - Y_tau),   tau = (t0, T),

independently on each inter-observation interval (the Markov property makes
the intervals independent given their endpoints).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DegenerateBridgeError, DiffusionSchedule, ObservationSet, TimeGrid
from .parallel import map_blocks, sample_blocks
from .rng import Role, normal_block

KernelFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_LOG_2PI = np.log(2.0 * np.pi)


def brownian_kernel(sigma: float = 1.0, origin: float = 0.0) -> KernelFn:
    """``k(s, t) = sigma^2 (min(s, t) - origin)`` for a motion started at ``origin``."""

    def k(s, t):
        return sigma**2 * (np.minimum(s, t) - origin)

    return k


def ou_kernel(theta: float, sigma: float) -> KernelFn:
    """Stationary Ornstein-Uhlenbeck covariance, a Gauss-Markov kernel."""

    def k(s, t):
        return sigma**2 / (2.0 * theta) * np.exp(-theta * np.abs(np.asarray(s) - np.asarray(t)))

    return k


@dataclass(frozen=True)
class PathEnsemble:
    """``values[k, j]`` is sample ``k`` at grid node ``j``.

    ``samples`` holds the counter-RNG sample index of each row, so a row can be
    regenerated on its own from ``(seed, samples[k])``.
    """

    grid: TimeGrid
    values: np.ndarray
    seed: int
    samples: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


def two_point_coefficients(kernel: KernelFn, times, t0: float, t_end: float):
    """Weights ``(a, b)`` with ``Y~ = Y + a (y0 - Y_t0) + b (yT - Y_T)``.

    A kernel with ``k(t0, t0) = 0`` describes a process pinned at ``t0``; the
    correction then takes the limit of a vanishing start variance, which is
    ``b = k(t, T) / k(T, T)`` and ``a = 1 - b``.
    """
    times = np.asarray(times, dtype=np.float64)
    k00 = float(kernel(t0, t0))
    k0T = float(kernel(t0, t_end))
    kTT = float(kernel(t_end, t_end))
    kt0 = kernel(times, t0)
    ktT = kernel(times, t_end)
    det = k00 * kTT - k0T**2
    if k00 > 0 and kTT > 0 and det > 1e-14 * k00 * kTT:
        a = (kt0 * kTT - ktT * k0T) / det
        b = (ktT * k00 - kt0 * k0T) / det
        return a, b
    if k00 == 0 and k0T == 0 and kTT > 0:
        b = ktT / kTT
        return 1.0 - b, b
    raise DegenerateBridgeError(
        f"endpoint Gram matrix is singular: k(t0,t0)={k00}, k(t0,T)={k0T}, k(T,T)={kTT}"
    )


def condition_two_point(path, times, kernel: KernelFn, start, end) -> np.ndarray:
    """Pin ``path`` (``(T, d)`` or ``(K, T, d)``) to ``start=(t0, y0)`` and ``end=(T, yT)``.

    ``t0`` and ``T`` must be entries of ``times``; the returned path equals the
    pinned values there exactly.
    """
    path = np.asarray(path, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    (t0, y0), (t_end, y_end) = start, end
    i0 = np.flatnonzero(times == t0)
    i1 = np.flatnonzero(times == t_end)
    if i0.size != 1 or i1.size != 1:
        raise ValueError("endpoint times must each occur exactly once in `times`")
    i0, i1 = int(i0[0]), int(i1[0])
    a, b = two_point_coefficients(kernel, times, t0, t_end)
    y0 = np.asarray(y0, dtype=np.float64)
    y_end = np.asarray(y_end, dtype=np.float64)
    d0 = y0 - path[..., i0, :]
    d1 = y_end - path[..., i1, :]
    out = path + a[:, None] * d0[..., None, :] + b[:, None] * d1[..., None, :]
    out[..., i0, :] = y0
    out[..., i1, :] = y_end
    return out


def sample_brownian(grid: TimeGrid, diffusion: DiffusionSchedule, seed: int, sample: int = 0, dim: int = 1) -> np.ndarray:
    """Unconditional ``dY = sigma dW`` on ``grid`` from ``Y = 0`` at the first node."""
    return brownian_rows(grid, diffusion, seed, np.array([sample]), dim)[0]


def brownian_rows(grid: TimeGrid, diffusion: DiffusionSchedule, seed: int, samples, dim: int) -> np.ndarray:
    """Unconditional paths for several sample indices, ``(len(samples), T, d)``."""
    z = normal_block(seed, samples, np.arange(1, grid.n_nodes), Role.BRIDGE, dim)
    steps = z * diffusion.step_scale(grid, dim)
    out = np.zeros((len(samples), grid.n_nodes, dim))
    np.cumsum(steps, axis=1, out=out[:, 1:])
    return out


@dataclass(frozen=True)
class BridgeLayout:
    """Per-node interval membership and interpolation weight.

    Node ``j`` lies in interval ``interval[j]`` spanning nodes ``start[j]`` to
    ``end[j]``; ``weight[j]`` is the fraction of that interval's variance
    accumulated by node ``j`` (``(t - t_n) / (t_{n+1} - t_n)`` for constant
    diffusion). The bridge is ``L + noise`` with
    ``L = (1 - weight) x_n + weight x_{n+1}``.
    """

    interval: np.ndarray
    start: np.ndarray
    end: np.ndarray
    weight: np.ndarray

    def interpolant(self, obs_values) -> np.ndarray:
        x = np.asarray(obs_values, dtype=np.float64)
        return (1.0 - self.weight) * x[self.interval] + self.weight * x[self.interval + 1]


def bridge_layout(grid: TimeGrid, diffusion: DiffusionSchedule, dim: int) -> BridgeLayout:
    n_int = grid.steps.size
    interval = np.append(grid.step_interval, n_int - 1)
    local = np.append(grid.step_local, grid.steps[-1])
    start = grid.obs_index[interval]
    end = grid.obs_index[interval + 1]
    if diffusion.kind == "piecewise":
        cv = np.zeros((grid.n_nodes, dim))
        np.cumsum(diffusion.step_variance(grid, dim), axis=0, out=cv[1:])
        weight = (cv - cv[start]) / (cv[end] - cv[start])
    else:
        frac = local / grid.steps[interval]
        weight = np.broadcast_to(frac[:, None], (grid.n_nodes, dim)).copy()
    return BridgeLayout(interval=interval, start=start, end=end, weight=weight)


def bridge_rows(obs: ObservationSet, grid: TimeGrid, diffusion: DiffusionSchedule, seed: int, samples, layout: BridgeLayout | None = None) -> np.ndarray:
    """Bridge samples for the given counter-RNG sample indices, ``(len(samples), T, d)``."""
    d = obs.dim
    layout = layout or bridge_layout(grid, diffusion, d)
    samples = np.asarray(samples, dtype=np.uint64)
    w = brownian_rows(grid, diffusion, seed, samples, d)
    local = w - w[:, layout.start]
    span = w[:, layout.end] - w[:, layout.start]
    x = obs.values
    y = local + (1.0 - layout.weight) * x[layout.interval] + layout.weight * (x[layout.interval + 1] - span)
    y[:, grid.obs_index] = x
    return y


def sample_bridge_ensemble(obs: ObservationSet, grid: TimeGrid, diffusion: DiffusionSchedule, K: int, seed: int, workers: int | None = None) -> PathEnsemble:
    """``K`` independent bridges through every observation."""
    obs.require_pairs()
    diffusion.check_dim(obs.dim)
    if not np.array_equal(grid.obs_times, obs.times):
        raise ValueError("grid was built for different observation times")
    layout = bridge_layout(grid, diffusion, obs.dim)
    blocks = sample_blocks(K, grid.n_nodes * obs.dim)
    parts = map_blocks(lambda b: bridge_rows(obs, grid, diffusion, seed, np.arange(b.start, b.stop), layout), blocks, workers)
    values = np.concatenate(parts, axis=0)
    return PathEnsemble(grid=grid, values=values, seed=seed, samples=np.arange(K, dtype=np.uint64))


def interval_variances(obs: ObservationSet, diffusion: DiffusionSchedule) -> np.ndarray:
    return diffusion.variance(obs.times[:-1], obs.times[1:], obs.dim)


def log_base_density(obs: ObservationSet, diffusion: DiffusionSchedule) -> float:
    """``log p_Y(x_2..x_N | x_1)`` for the driftless process ``dY = sigma dW``.

    The driftless process has no marginal for its starting point, so the
    density is conditional on the first observation.
    """
    obs.require_pairs()
    diffusion.check_dim(obs.dim)
    var = interval_variances(obs, diffusion)
    inc = np.diff(obs.values, axis=0)
    return float(-0.5 * np.sum(inc**2 / var + np.log(var) + _LOG_2PI))
