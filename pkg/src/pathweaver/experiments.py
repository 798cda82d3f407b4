"""Desk-scale experiment drivers behind the command line.

Each ``cmd_*`` takes a fully resolved config dict and returns a :class:`Report`
(CSV columns, rows and a few summary checks). Writing files is the caller's
job. Column lists are part of the output contract; changing them means
bumping the matching entry of ``SCHEMA_VERSIONS``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DiffusionSchedule, DivergenceError, EstimationError, ObservationSet, build_grid
from .drift import LinearDrift, ZeroDrift
from .girsanov import log_prob, log_prob_grad
from .integrator import gradient_variance_probe, mse_grad, mse_loss
from .nn import MLP, AdamState, MlpSpec, NonFiniteGradientError, adam_step
from .oracle import (
    LORENZ_DEFAULT,
    brownian_log_prob,
    err_metric,
    generate_sde_data,
    lorenz_drift,
    lorenz_field,
    ou_log_prob,
    vdp_drift,
)
from .rng import derive_seed

SCHEMA_VERSIONS = {
    "ou-check": 1,
    "lorenz-train": 1,
    "grad-variance": 1,
    "parallel-bench": 1,
    "generate-data": 1,
}

DEFAULTS = {
    "ou-check": {
        "thetas": (0.5, 1.0, 2.0),
        "sigma": 1.0,
        "dims": (1, 2, 4, 8, 16, 32),
        "n_obs": (4, 10, 20),
        "horizon": 10.0,
        "K": 100,
        "dt": 0.01,
        "repeats": 100,
    },
    "lorenz-train": {
        "n_paths": 2,
        "n_obs": 100,
        "horizon": 10.0,
        "data_sigma": 0.15,
        "dt_fine": 0.001,
        "model_sigma": 1.0,
        "layers": (3, 32, 256, 32, 3),
        "iterations": 500,
        "integrator_iterations": 500,
        "K": 16,
        "dt": 0.01,
        "lr": 0.001,
        "methods": ("path-integral", "integrator"),
    },
    "grad-variance": {
        "gaps": (0.01, 0.1, 1.0, 10.0),
        "features": 20,
        "hidden": 64,
        "sigma": 1.0,
        "K": 64,
        "dt": 0.01,
        "repeats": 64,
        "methods": ("integrator-mse", "path-integral"),
    },
    "parallel-bench": {
        "worker_counts": (1, 2, 4),
        "K": 1000,
        "horizon": 10.0,
        "dt": 0.01,
        "dim": 3,
        "hidden": 32,
        "sigma": 1.0,
        "mse_K": 64,
    },
    "generate-data": {
        "system": "lorenz",
        "n_paths": 16,
        "n_obs": 200,
        "horizon": 10.0,
        "sigma": 0.15,
        "dt_fine": 0.001,
    },
}

COLUMNS = {
    "ou-check": ["theta", "drift", "d", "n_obs", "mean", "std", "analytic", "rel_error", "rel_std"],
    "lorenz-train": ["method", "iteration", "wall_time", "iter_time", "loss", "err_metric", "mse"],
    "grad-variance": ["method", "gap", "max_variance", "median_variance", "n_params", "repeats"],
    "parallel-bench": ["method", "workers", "K", "T", "evaluations", "seconds", "throughput", "speedup", "identical"],
    "generate-data": ["path", "file", "n_obs", "dim"],
}


@dataclass
class Report:
    name: str
    rows: list
    summary: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    @property
    def columns(self):
        return COLUMNS[self.name]


def sine_observations(n_obs: int, dim: int, horizon: float = 10.0) -> ObservationSet:
    """``x_n = sin(pi t_n / 10)`` on ``n_obs`` evenly spaced times, copied to every dimension."""
    t = np.linspace(0.0, horizon, n_obs)
    x = np.sin(np.pi / 10.0 * t)
    return ObservationSet(t, np.repeat(x[:, None], dim, axis=1))


def ou_estimates(theta, sigma, obs, K, dt, repeats, seed, workers=None) -> np.ndarray:
    """``repeats`` independent estimates of the OU log density ``dX = -theta X dt + sigma dW``."""
    f = LinearDrift(-theta, obs.dim) if theta else ZeroDrift(obs.dim)
    diffusion = DiffusionSchedule.scalar(sigma)
    return np.array([log_prob(obs, f, diffusion, K, dt, derive_seed(seed, r), workers).log_p for r in range(repeats)])


def cmd_ou_check(config) -> Report:
    c = config
    rows = []
    for d in c["dims"]:
        for n in c["n_obs"]:
            obs = sine_observations(n, d, c["horizon"])
            # control: zero drift is estimated exactly, so the error is exactly 0
            est = ou_estimates(0.0, c["sigma"], obs, c["K"], c["dt"], 2, c["seed"], c["workers"])
            exact = brownian_log_prob(c["sigma"], obs)
            rows.append(_ou_row(0.0, "zero", d, n, est, exact))
            for theta in c["thetas"]:
                seed = derive_seed(c["seed"], d, n, int(round(theta * 1000)))
                est = ou_estimates(theta, c["sigma"], obs, c["K"], c["dt"], c["repeats"], seed, c["workers"])
                rows.append(_ou_row(theta, "ou", d, n, est, ou_log_prob(theta, c["sigma"], obs)))
    return Report("ou-check", rows)


def _ou_row(theta, drift, d, n, est, exact):
    mean, std = float(np.mean(est)), float(np.std(est, ddof=1))
    return {
        "theta": theta,
        "drift": drift,
        "d": d,
        "n_obs": n,
        "mean": mean,
        "std": std,
        "analytic": exact,
        "rel_error": abs(mean - exact) / abs(exact),
        "rel_std": std / abs(exact),
    }


def lorenz_dataset(c) -> list:
    field = lorenz_drift(LORENZ_DEFAULT)
    return generate_sde_data(
        field, DiffusionSchedule.scalar(c["data_sigma"]), c["n_paths"], c["n_obs"], c["horizon"],
        seed=c["seed"], dt_fine=c["dt_fine"], dim=3, workers=c["workers"],
    )


def path_integral_objective(f, diffusion, data, K, dt, seed, workers=None):
    """Mean over trajectories of ``-log p-hat / N`` and its parameter gradient."""
    loss, grad = 0.0, np.zeros(f.param_count)
    for i, obs in enumerate(data):
        est, g = log_prob_grad(obs, f, diffusion, K, dt, derive_seed(seed, i), workers)
        loss -= est.log_p / len(obs)
        grad -= g / len(obs)
    return loss / len(data), grad / len(data)


def integrator_objective(f, diffusion, data, K, dt, seed, workers=None):
    """Mean over trajectories of the rollout MSE and its parameter gradient."""
    loss, grad = 0.0, np.zeros(f.param_count)
    for i, obs in enumerate(data):
        l, g = mse_grad(f, diffusion, obs, K, dt, derive_seed(seed, i), workers)
        loss += l
        grad += g
    return loss / len(data), grad / len(data)


OBJECTIVES = {"path-integral": path_integral_objective, "integrator": integrator_objective}


def train(method, f, diffusion, data, iterations, K, dt, lr, seed, workers=None, eval_seed=None, on_row=None):
    """Adam on one objective. Returns ``(trained drift, rows)``.

    Row 0 is the initial model. ``mse`` is always the rollout MSE on fixed
    evaluation noise so both methods are scored the same way.
    """
    objective = OBJECTIVES[method]
    points = np.concatenate([obs.values for obs in data])
    eval_seed = derive_seed(seed, 0xE7A1) if eval_seed is None else eval_seed
    state = AdamState.init(f.param_count, lr=lr)
    rows, wall = [], 0.0

    def record(it, loss, dt_iter):
        try:
            mse = float(np.mean([mse_loss(f, diffusion, obs, K, dt, derive_seed(eval_seed, i), workers) for i, obs in enumerate(data)]))
        except DivergenceError:
            mse = float("inf")
        row = {"method": method, "iteration": it, "wall_time": wall, "iter_time": dt_iter, "loss": loss, "err_metric": err_metric(f, _lorenz_true, points), "mse": mse}
        rows.append(row)
        if on_row:
            on_row(row)

    record(0, float("nan"), 0.0)
    for it in range(1, iterations + 1):
        start = time.perf_counter()
        loss, grad = objective(f, diffusion, data, K, dt, derive_seed(seed, it), workers)
        params, state = adam_step(state, f.params, grad)
        f = f.with_params(params)
        elapsed = time.perf_counter() - start
        wall += elapsed
        if it == iterations or it % 25 == 0:
            record(it, loss, elapsed)
    return f, rows


def _lorenz_true(X):
    return lorenz_field(X, LORENZ_DEFAULT)


def cmd_lorenz_train(config) -> Report:
    c = config
    data = lorenz_dataset(c)
    spec = MlpSpec(tuple(c["layers"]), init_seed=c["seed"])
    diffusion = DiffusionSchedule.scalar(c["model_sigma"])
    rows, summary = [], {}
    for method in c["methods"]:
        iters = c["iterations"] if method == "path-integral" else c["integrator_iterations"]
        try:
            _, r = train(method, MLP(spec), diffusion, data, iters, c["K"], c["dt"], c["lr"], c["seed"], c["workers"])
        except (DivergenceError, EstimationError, NonFiniteGradientError) as exc:
            summary[f"{method}_error"] = str(exc)
            continue
        rows.extend(r)
        trained = [row for row in r if row["iteration"] > 0]
        summary[f"{method}_err_initial"] = r[0]["err_metric"]
        summary[f"{method}_err_final"] = r[-1]["err_metric"]
        summary[f"{method}_sec_per_iter"] = trained[-1]["wall_time"] / trained[-1]["iteration"] if trained else float("nan")
    return Report("lorenz-train", rows, summary)


def probe_network(features=20, hidden=64, seed=0) -> MLP:
    """The fixed gradient-variance probe: ``features -> hidden -> features`` ReLU MLP."""
    return MLP(MlpSpec((features, hidden, features), init_seed=seed))


def cmd_grad_variance(config) -> Report:
    c = config
    f = probe_network(c["features"], c["hidden"], c["seed"])
    diffusion = DiffusionSchedule.scalar(c["sigma"])
    rows = []
    for method in c["methods"]:
        for gap in c["gaps"]:
            try:
                var = gradient_variance_probe(f, diffusion, gap, method, c["repeats"], c["seed"], K=c["K"], dt=c["dt"], workers=c["workers"])
                vmax, vmed = float(np.max(var)), float(np.median(var))
            except (DivergenceError, EstimationError):
                vmax = vmed = float("inf")
            rows.append({"method": method, "gap": gap, "max_variance": vmax, "median_variance": vmed, "n_params": f.param_count, "repeats": c["repeats"]})
    summary = {}
    by = {(r["method"], r["gap"]): r["max_variance"] for r in rows}
    for gap in c["gaps"]:
        if ("integrator-mse", gap) in by and ("path-integral", gap) in by:
            summary[f"ratio_gap_{gap:g}"] = by[("integrator-mse", gap)] / by[("path-integral", gap)]
    return Report("grad-variance", rows, summary)


def bench_problem(c):
    obs = ObservationSet(np.array([0.0, c["horizon"]]), np.zeros((2, c["dim"])))
    f = MLP(MlpSpec((c["dim"], c["hidden"], c["hidden"], c["dim"]), init_seed=c["seed"]))
    return obs, f, DiffusionSchedule.scalar(c["sigma"])


def cmd_parallel_bench(config) -> Report:
    c = config
    obs, f, diffusion = bench_problem(c)
    T = build_grid(obs, c["dt"]).n_steps
    rows = []
    for method in ("path-integral", "integrator"):
        K = c["K"] if method == "path-integral" else c["mse_K"]
        reference, base = None, None
        for w in c["worker_counts"]:
            start = time.perf_counter()
            if method == "path-integral":
                est = log_prob(obs, f, diffusion, K, c["dt"], c["seed"], w)
                out = np.concatenate([[est.log_p], est.actions.S])
            else:
                out = np.array([mse_loss(f, diffusion, obs, K, c["dt"], c["seed"], w)])
            seconds = time.perf_counter() - start
            reference = out if reference is None else reference
            base = seconds if base is None else base
            rows.append({
                "method": method, "workers": w, "K": K, "T": T, "evaluations": K * T, "seconds": seconds,
                "throughput": K * T / seconds, "speedup": base / seconds, "identical": bool(np.array_equal(out, reference)),
            })
    summary = {"all_identical": all(r["identical"] for r in rows)}
    return Report("parallel-bench", rows, summary)


SYSTEMS = {
    "lorenz": (lambda: lorenz_drift(LORENZ_DEFAULT), 3),
    "vdp": (lambda: vdp_drift(1.0), 2),
    "ou": (lambda: LinearDrift(-1.0, 1), 1),
}


def cmd_generate_data(config, out_dir=None) -> Report:
    c = config
    if c["system"] not in SYSTEMS:
        raise ValueError(f"unknown system {c['system']!r}; choose from {sorted(SYSTEMS)}")
    make, dim = SYSTEMS[c["system"]]
    data = generate_sde_data(make(), DiffusionSchedule.scalar(c["sigma"]), c["n_paths"], c["n_obs"], c["horizon"], seed=c["seed"], dt_fine=c["dt_fine"], dim=dim, workers=c["workers"])
    rows, files = [], {}
    for i, obs in enumerate(data):
        name = f"path_{i:03d}.csv"
        files[name] = obs
        rows.append({"path": i, "file": name, "n_obs": len(obs), "dim": obs.dim})
    if out_dir is not None:
        for name, obs in files.items():
            obs.to_csv(Path(out_dir) / name)
    return Report("generate-data", rows, files=files)


COMMANDS = {
    "ou-check": cmd_ou_check,
    "lorenz-train": cmd_lorenz_train,
    "grad-variance": cmd_grad_variance,
    "parallel-bench": cmd_parallel_bench,
    "generate-data": cmd_generate_data,
}
