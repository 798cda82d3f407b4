import numpy as np
import pytest

from conftest import fd_gradient, max_rel_error
from pathweaver.bridge import brownian_rows
from pathweaver.core import DiffusionSchedule, DivergenceError, ObservationSet, build_grid
from pathweaver.drift import FunctionDrift, LinearDrift, ZeroDrift
from pathweaver.integrator import euler_maruyama, gradient_variance_probe, mse_grad, mse_loss, two_point_dataset
from pathweaver.nn import MLP, MlpSpec
from pathweaver.rng import RngKey, Role, normal_draw


def test_one_step_is_the_definition():
    grid = build_grid(np.array([0.0, 0.2]), 1.0)
    f = MLP(MlpSpec((2, 4, 2), init_seed=0))
    x0 = np.array([0.3, -0.1])
    paths = euler_maruyama(f, DiffusionSchedule.scalar(0.7), x0, grid, 3, seed=5)
    for k in range(3):
        z = np.array([normal_draw(RngKey(5, k, 1, Role.EULER, i)) for i in range(2)])
        expected = x0 + f.eval(x0, 0.0) * 0.2 + 0.7 * np.sqrt(0.2) * z
        np.testing.assert_array_equal(paths.values[k, 1], expected)


def test_zero_drift_matches_brownian_motion():
    grid = build_grid(np.array([0.0, 1.0]), 0.05)
    x0 = np.array([2.0])
    em = euler_maruyama(ZeroDrift(1), DiffusionSchedule.scalar(1.0), x0, grid, 40000, seed=1).values[:, :, 0]
    bm = brownian_rows(grid, DiffusionSchedule.scalar(1.0), 2, np.arange(40000), 1)[:, :, 0] + 2.0
    for j in (5, 10, 20):
        a, b = em[:, j], bm[:, j]
        se = np.sqrt(a.var() / a.size + b.var() / b.size)
        assert abs(a.mean() - b.mean()) < 3 * se
        se_v = np.sqrt(2.0 / a.size) * np.hypot(a.var(), b.var())
        assert abs(a.var() - b.var()) < 3 * se_v


@pytest.mark.parametrize("dt", [0.5, 0.1, 0.01])
def test_weak_convergence_of_zero_drift(dt):
    grid = build_grid(np.array([0.0, 1.0]), dt)
    end = euler_maruyama(ZeroDrift(1), DiffusionSchedule.scalar(1.5), [0.0], grid, 50000, seed=3).values[:, -1, 0]
    assert abs(end.mean()) < 3 * 1.5 / np.sqrt(end.size)
    assert abs(end.var(ddof=1) - 2.25) < 3 * 2.25 * np.sqrt(2.0 / (end.size - 1))


def test_ode_limit():
    grid = build_grid(np.array([0.0, 1.0]), 1e-3)
    end = euler_maruyama(LinearDrift(-1.0, 1), DiffusionSchedule.scalar(1e-10), [1.0], grid, 2, seed=0).values[:, -1, 0]
    assert np.all(np.abs(end - np.exp(-1.0)) < 1e-2)


def test_divergence_reports_step():
    grid = build_grid(np.array([0.0, 5.0]), 0.1)
    f = FunctionDrift(lambda X, t: X**3, 1)
    with pytest.raises(DivergenceError) as info, np.errstate(over="ignore", invalid="ignore"):
        euler_maruyama(f, DiffusionSchedule.scalar(0.1), [3.0], grid, 4, seed=0)
    assert 1 <= info.value.step <= grid.n_steps
    assert info.value.sample is not None


def test_mse_brownian_endpoint():
    obs = ObservationSet([0.0, 1.0], [[0.0], [0.0]])
    K = 40000
    loss = mse_loss(ZeroDrift(1), DiffusionSchedule.scalar(1.0), obs, K, 0.1, seed=7)
    # X_1^2 is chi-square(1) with variance 2
    assert abs(loss - 1.0) < 3 * np.sqrt(2.0 / K)


def test_mse_deterministic_limit():
    t = np.linspace(0.0, 2.0, 5)
    obs = ObservationSet(t, np.exp(-t)[:, None])
    losses = [mse_loss(LinearDrift(-1.0, 1), DiffusionSchedule.scalar(1e-9), obs, 2, dt, seed=0) for dt in (0.1, 0.01, 0.001)]
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-6


def test_mse_worker_invariance():
    obs = two_point_dataset(0.5, 3, seed=2)
    f = MLP(MlpSpec((3, 8, 3), init_seed=1))
    ref = mse_grad(f, DiffusionSchedule.scalar(1.0), obs, 9000, 0.01, 4, workers=1)
    for w in (2, 4):
        loss, g = mse_grad(f, DiffusionSchedule.scalar(1.0), obs, 9000, 0.01, 4, workers=w)
        assert loss == ref[0]
        assert np.array_equal(g, ref[1])
        assert mse_loss(f, DiffusionSchedule.scalar(1.0), obs, 9000, 0.01, 4, workers=w) == ref[0]


def test_linear_drift_one_step_gradient_by_hand():
    obs = ObservationSet([0.0, 0.1], [[0.5], [0.8]])
    theta, K, dt = 0.7, 6, 0.1
    loss, g = mse_grad(LinearDrift(theta, 1), DiffusionSchedule.scalar(0.4), obs, K, 1.0, seed=11)
    X1 = euler_maruyama(LinearDrift(theta, 1), DiffusionSchedule.scalar(0.4), [0.5], build_grid(obs, 1.0), K, 11).values[:, 1, 0]
    assert loss == pytest.approx(np.mean((X1 - 0.8) ** 2), rel=1e-15)
    np.testing.assert_allclose(g, [np.mean(2 * (X1 - 0.8) * 0.5 * dt)], rtol=1e-14)


def test_gradient_vanishes_at_quadratic_minimum():
    obs = ObservationSet([0.0, 0.1], [[0.5], [0.8]])
    K, x0, dt = 10, 0.5, 0.1
    sched = DiffusionSchedule.scalar(0.4)
    noise = euler_maruyama(ZeroDrift(1), sched, [x0], build_grid(obs, 1.0), K, 3).values[:, 1, 0] - x0
    theta_star = np.mean(0.8 - x0 - noise) / (x0 * dt)
    _, g = mse_grad(LinearDrift(theta_star, 1), sched, obs, K, 1.0, seed=3)
    assert abs(g[0]) <= 1e-6


def test_mlp_gradient_matches_finite_differences():
    obs = ObservationSet(np.array([0.0, 0.3, 0.5]), np.array([[0.1, 0.4], [0.6, -0.2], [0.0, 0.3]]))
    f = MLP(MlpSpec((2, 16, 16, 2), init_seed=4))
    sched = DiffusionSchedule.scalar(0.5)
    loss, g = mse_grad(f, sched, obs, 16, 0.01, 2)
    assert loss == mse_loss(f, sched, obs, 16, 0.01, 2)
    fd = fd_gradient(lambda p: mse_loss(f.with_params(p), sched, obs, 16, 0.01, 2), f.params, 1e-6)
    assert max_rel_error(g, fd) <= 1e-4


def test_probe_contract():
    f = MLP(MlpSpec((3, 8, 3), init_seed=0))
    sched = DiffusionSchedule.scalar(1.0)
    with pytest.raises(ValueError):
        gradient_variance_probe(f, sched, 0.1, "integrator-mse", 1, 0)
    with pytest.raises(ValueError):
        gradient_variance_probe(f, sched, 0.1, "adjoint", 2, 0)
    for method in ("integrator-mse", "path-integral"):
        var = gradient_variance_probe(f, sched, 0.1, method, 2, 0, K=4, seeds=[17, 17])
        assert var.shape == (f.param_count,)
        assert np.all(var == 0)
        var = gradient_variance_probe(f, sched, 0.1, method, 3, 0, K=4)
        assert np.all(var >= 0) and np.any(var > 0)


def test_probe_variance_is_unbiased_sample_variance():
    f = MLP(MlpSpec((2, 4, 2), init_seed=0))
    sched = DiffusionSchedule.scalar(1.0)
    obs = two_point_dataset(0.2, 2, 0)
    seeds = [3, 4, 5]
    var = gradient_variance_probe(f, sched, 0.2, "integrator-mse", 3, 0, K=2, seeds=seeds)
    grads = np.array([mse_grad(f, sched, obs, 2, 0.01, s)[1] for s in seeds])
    np.testing.assert_allclose(var, grads.var(axis=0, ddof=1), rtol=1e-14)
