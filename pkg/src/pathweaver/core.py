"""Observations, integration grids, diffusion schedules and shared errors."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PathweaverError(Exception):
    pass


class ObservationError(PathweaverError, ValueError):
    pass


class DegenerateBridgeError(PathweaverError, ValueError):
    pass


class EstimationError(PathweaverError, ArithmeticError):
    """Non-finite drift or action. ``sample`` and ``node`` locate the first offender."""

    def __init__(self, message, sample=None, node=None):
        super().__init__(message)
        self.sample = sample
        self.node = node


class DivergenceError(PathweaverError, ArithmeticError):
    def __init__(self, message, step=None, sample=None):
        super().__init__(message)
        self.step = step
        self.sample = sample


class DensityUndefinedError(PathweaverError, ValueError):
    pass


@dataclass(frozen=True)
class ObservationSet:
    """Ordered ``(t_n, x_n)`` pairs.

    Repeated times carrying identical values are collapsed; repeated times with
    different values are rejected, since the bridge density is singular there.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=np.float64).reshape(-1)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != times.shape[0]:
            raise ObservationError(
                f"values must be N x d with N={times.shape[0]}, got shape {values.shape}"
            )
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ObservationError("observations must be finite")
        if times.size > 1:
            gaps = np.diff(times)
            if np.any(gaps < 0):
                raise ObservationError("observation times must be increasing")
            dup = np.flatnonzero(gaps == 0)
            if dup.size:
                if np.any(values[dup] != values[dup + 1]):
                    bad = times[dup[np.any(values[dup] != values[dup + 1], axis=1)][0]]
                    raise ObservationError(f"conflicting values observed at t={bad}")
                keep = np.ones(times.size, dtype=bool)
                keep[dup + 1] = False
                times, values = times[keep], values[keep]
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    def require_pairs(self):
        if len(self) < 2:
            raise ObservationError("at least two observations are needed for a path probability")

    def with_values(self, values) -> "ObservationSet":
        return ObservationSet(self.times, values)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"x{i + 1}" for i in range(self.dim)])
            for t, row in zip(self.times, self.values):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "ObservationSet":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0].strip() != "t":
                raise ObservationError(f"{path}: header must start with 't'")
            rows = [[float(v) for v in row] for row in reader if row]
        data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
        return cls(data[:, 0], data[:, 1:])


@dataclass(frozen=True)
class TimeGrid:
    """Integration nodes with every observation time as an exact node.

    Interval ``n`` is split into ``steps[n]`` equal steps; its nodes are
    ``t_n + j * (t_{n+1} - t_n) / steps[n]`` and its last node is ``t_{n+1}``
    itself.
    """

    nodes: np.ndarray
    obs_index: np.ndarray
    steps: np.ndarray
    obs_times: np.ndarray
    step_dt: np.ndarray = field(repr=False)
    step_interval: np.ndarray = field(repr=False)
    step_local: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_steps(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def local_dt(self) -> np.ndarray:
        """Step size of each inter-observation interval."""
        return np.diff(self.obs_times) / self.steps


def steps_for_gap(gap: float, dt_target: float) -> int:
    ratio = gap / dt_target
    # absorb representation error so that e.g. 0.05 / 0.01 gives 5 steps, not 6
    return max(1, math.ceil(ratio * (1.0 - 1e-12) - 1e-12))


def build_grid(obs, dt_target: float) -> TimeGrid:
    """Per-interval uniform subdivision with ``ceil(gap / dt_target)`` steps."""
    if not dt_target > 0:
        raise ValueError(f"dt_target must be positive, got {dt_target}")
    times = obs.times if isinstance(obs, ObservationSet) else np.asarray(obs, dtype=np.float64)
    if times.size < 2:
        raise ObservationError("a grid needs at least two observation times")
    gaps = np.diff(times)
    if np.any(gaps <= 0):
        raise ObservationError("observation times must be strictly increasing")
    steps = np.array([steps_for_gap(g, dt_target) for g in gaps], dtype=np.int64)
    nodes = np.empty(int(steps.sum()) + 1)
    obs_index = np.zeros(times.size, dtype=np.int64)
    pos = 0
    for n, m in enumerate(steps):
        t0, t1 = times[n], times[n + 1]
        nodes[pos : pos + m] = t0 + np.arange(m) * ((t1 - t0) / m)
        pos += m
        obs_index[n + 1] = pos
    nodes[-1] = times[-1]
    step_dt = np.repeat(gaps / steps, steps)
    step_interval = np.repeat(np.arange(steps.size), steps)
    step_local = np.concatenate([np.arange(m) for m in steps])
    for arr in (nodes, obs_index, steps, step_dt, step_interval, step_local):
        arr.setflags(write=False)
    return TimeGrid(
        nodes=nodes,
        obs_index=obs_index,
        steps=steps,
        obs_times=np.array(times, dtype=np.float64),
        step_dt=step_dt,
        step_interval=step_interval,
        step_local=step_local,
    )


class DiffusionSchedule:
    """State-independent diffusion ``sigma(t)``, diagonal, strictly positive.

    ``kind`` is one of ``"scalar"``, ``"diagonal"`` or ``"piecewise"``. For the
    piecewise kind, ``values[p]`` applies on ``[breaks[p-1], breaks[p])`` with
    the first and last pieces extending to infinity.
    """

    def __init__(self, kind: str, values, breaks=None):
        values = np.array(values, dtype=np.float64)
        if kind == "scalar":
            if values.size != 1:
                raise ValueError("scalar diffusion takes one value")
            values = values.reshape(())
        elif kind == "diagonal":
            values = values.reshape(-1)
        elif kind == "piecewise":
            breaks = np.array(breaks, dtype=np.float64).reshape(-1)
            if values.ndim == 1:
                values = values[:, None]
            if values.shape[0] != breaks.size + 1:
                raise ValueError("piecewise diffusion needs one more value row than breakpoints")
            if np.any(np.diff(breaks) <= 0):
                raise ValueError("breakpoints must be strictly increasing")
        else:
            raise ValueError(f"unknown diffusion kind {kind!r}")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("diffusion entries must be finite and strictly positive")
        values.setflags(write=False)
        self.kind = kind
        self.values = values
        self.breaks = breaks
        if kind == "piecewise":
            sq = values**2
            cum = np.zeros((breaks.size, values.shape[1]))
            for p in range(1, breaks.size):
                cum[p] = cum[p - 1] + sq[p] * (breaks[p] - breaks[p - 1])
            self._cum = cum

    @classmethod
    def scalar(cls, sigma: float) -> "DiffusionSchedule":
        return cls("scalar", sigma)

    @classmethod
    def diagonal(cls, sigmas) -> "DiffusionSchedule":
        return cls("diagonal", sigmas)

    @classmethod
    def piecewise(cls, breaks, values) -> "DiffusionSchedule":
        return cls("piecewise", values, breaks)

    def __repr__(self):
        extra = f", breaks={self.breaks.tolist()}" if self.kind == "piecewise" else ""
        return f"DiffusionSchedule({self.kind!r}, {self.values.tolist()}{extra})"

    def scaled(self, factor: float) -> "DiffusionSchedule":
        return DiffusionSchedule(self.kind, self.values * factor, self.breaks)

    def check_dim(self, d: int):
        width = 1 if self.kind == "scalar" else self.values.shape[-1]
        if width not in (1, d):
            raise ValueError(f"diffusion has {width} components, state has {d}")

    def sigma_at(self, t, d: int) -> np.ndarray:
        """``sigma(t)`` as an ``(len(t), d)`` array."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if self.kind == "piecewise":
            piece = np.searchsorted(self.breaks, t, side="right")
            out = self.values[piece]
        else:
            out = np.broadcast_to(self.values, (t.size, d) if self.kind == "scalar" else (t.size, self.values.size))
        return np.broadcast_to(out, (t.size, d)).copy()

    def _cumulative(self, t):
        piece = np.searchsorted(self.breaks, t, side="right")
        anchor = self.breaks[np.maximum(piece - 1, 0)]
        base = self._cum[np.maximum(piece - 1, 0)]
        return base + self.values[piece] ** 2 * (t - anchor)[:, None]

    def variance(self, t0, t1, d: int) -> np.ndarray:
        """``int_{t0}^{t1} sigma^2 dt`` per dimension, shape ``(len(t0), d)``."""
        t0 = np.atleast_1d(np.asarray(t0, dtype=np.float64))
        t1 = np.atleast_1d(np.asarray(t1, dtype=np.float64))
        if self.kind == "piecewise":
            out = self._cumulative(t1) - self._cumulative(t0)
            same = np.searchsorted(self.breaks, t0, side="right") == np.searchsorted(self.breaks, t1, side="right")
            if np.any(same):
                piece = np.searchsorted(self.breaks, t0[same], side="right")
                out[same] = self.values[piece] ** 2 * (t1[same] - t0[same])[:, None]
            return np.broadcast_to(out, (t0.size, d)).copy()
        return np.broadcast_to((self.values**2) * (t1 - t0)[:, None], (t0.size, d)).copy()

    def scale(self, t0, t1, d: int) -> np.ndarray:
        """Standard deviation of a Brownian increment over each ``[t0, t1]``.

        Constant kinds use ``sigma * sqrt(dt)`` so single Euler steps reproduce
        the textbook update bit-for-bit.
        """
        t0 = np.atleast_1d(np.asarray(t0, dtype=np.float64))
        t1 = np.atleast_1d(np.asarray(t1, dtype=np.float64))
        if self.kind == "piecewise":
            return np.sqrt(self.variance(t0, t1, d))
        return np.broadcast_to(self.values * np.sqrt(t1 - t0)[:, None], (t0.size, d)).copy()

    def step_variance(self, grid: TimeGrid, d: int) -> np.ndarray:
        if self.kind == "piecewise":
            return self.variance(grid.nodes[:-1], grid.nodes[1:], d)
        return np.broadcast_to((self.values**2) * grid.step_dt[:, None], (grid.n_steps, d)).copy()

    def step_scale(self, grid: TimeGrid, d: int) -> np.ndarray:
        if self.kind == "piecewise":
            return np.sqrt(self.step_variance(grid, d))
        return np.broadcast_to(self.values * np.sqrt(grid.step_dt)[:, None], (grid.n_steps, d)).copy()

    def step_precision(self, grid: TimeGrid, d: int) -> np.ndarray:
        """Inverse of the step-averaged ``sigma^2``; ``sigma^-2`` for constant kinds."""
        if self.kind == "piecewise":
            return grid.step_dt[:, None] / self.step_variance(grid, d)
        return np.broadcast_to(1.0 / self.values**2, (grid.n_steps, d)).copy()
