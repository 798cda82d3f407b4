import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from pathweaver.bridge import (
    brownian_kernel,
    brownian_rows,
    condition_two_point,
    log_base_density,
    ou_kernel,
    sample_bridge_ensemble,
    sample_brownian,
    two_point_coefficients,
)
from pathweaver.core import DegenerateBridgeError, DiffusionSchedule, ObservationSet, build_grid
from pathweaver.rng import RngKey, Role, normal_draw


def _obs(times, values):
    return ObservationSet(np.asarray(times, float), np.asarray(values, float))


def test_brownian_starts_at_zero_and_single_step_is_one_draw():
    grid = build_grid(np.array([0.0, 1.0]), 1.0)
    path = sample_brownian(grid, DiffusionSchedule.scalar(1.0), seed=3, sample=2)
    assert path[0, 0] == 0.0
    assert path[1, 0] == normal_draw(RngKey(3, 2, 1, Role.BRIDGE, 0))


def test_brownian_tiny_sigma_stays_put():
    grid = build_grid(np.array([0.0, 1.0]), 0.01)
    paths = brownian_rows(grid, DiffusionSchedule.scalar(1e-8), 0, np.arange(1000), 1)
    assert np.max(np.abs(paths)) <= 1e-6


def test_brownian_terminal_variance():
    grid = build_grid(np.array([0.0, 1.0]), 0.1)
    paths = brownian_rows(grid, DiffusionSchedule.scalar(2.0), 11, np.arange(100000), 1)
    assert abs(np.var(paths[:, -1, 0], ddof=1) - 4.0) < 0.06


def test_brownian_increments_use_piecewise_sigma():
    sched = DiffusionSchedule.piecewise([0.5], [[1.0], [3.0]])
    grid = build_grid(np.array([0.0, 1.0]), 0.25)
    paths = brownian_rows(grid, sched, 5, np.arange(50000), 1)
    inc = np.diff(paths[:, :, 0], axis=1)
    expected = np.array([0.25, 0.25, 2.25, 2.25])
    se = expected * np.sqrt(2.0 / 50000)
    assert np.all(np.abs(inc.var(axis=0, ddof=1) - expected) < 4 * se)


def test_min_kernel_coefficient_is_t_over_T():
    t = np.linspace(0.0, 2.0, 41)
    a, b = two_point_coefficients(brownian_kernel(1.7), t, 0.0, 2.0)
    np.testing.assert_allclose(b, t / 2.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a, 1.0 - t / 2.0, rtol=0, atol=1e-12)


def test_min_kernel_reduction_on_a_path():
    grid = build_grid(np.array([0.0, 3.0]), 0.01)
    Y = sample_brownian(grid, DiffusionSchedule.scalar(1.0), 8, dim=2)
    yT = np.array([0.4, -1.3])
    out = condition_two_point(Y, grid.nodes, brownian_kernel(1.0), (0.0, np.zeros(2)), (3.0, yT))
    ref = Y + (grid.nodes / 3.0)[:, None] * (yT - Y[-1])
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)
    assert np.all(out[-1] == yT)


def test_conditioning_on_own_values_is_identity():
    t = np.linspace(0.0, 1.0, 11)
    Y = np.cumsum(np.random.default_rng(0).normal(size=(11, 1)), axis=0)
    for kernel in (brownian_kernel(1.0, origin=-1.0), ou_kernel(0.7, 1.3)):
        out = condition_two_point(Y, t, kernel, (0.0, Y[0]), (1.0, Y[-1]))
        np.testing.assert_allclose(out, Y, atol=1e-13)


def _dense_conditional(cov, idx_obs, y):
    """Gaussian conditioning of a zero-mean vector on ``x[idx_obs] = y``."""
    rest = np.setdiff1d(np.arange(cov.shape[0]), idx_obs)
    S11 = cov[np.ix_(rest, rest)]
    S12 = cov[np.ix_(rest, idx_obs)]
    S22 = cov[np.ix_(idx_obs, idx_obs)]
    gain = S12 @ np.linalg.inv(S22)
    return rest, gain @ y, S11 - gain @ S12.T


@pytest.mark.parametrize("kernel", [ou_kernel(0.8, 1.2), brownian_kernel(1.5, origin=-0.5)])
def test_two_point_update_matches_dense_conditioning(kernel):
    # the corrected path is linear in Y, so its mean and covariance are exact
    t = np.array([0.0, 0.2, 0.5, 0.9, 1.3])
    cov = kernel(t[:, None], t[None, :])
    a, b = two_point_coefficients(kernel, t, 0.0, 1.3)
    y = np.array([0.3, -0.8])
    P = np.zeros((2, t.size))
    P[0, 0] = P[1, -1] = 1.0
    A = np.eye(t.size) - np.outer(a, P[0]) - np.outer(b, P[1])
    mean = a * y[0] + b * y[1]
    covar = A @ cov @ A.T
    rest, m_ref, c_ref = _dense_conditional(cov, np.array([0, t.size - 1]), y)
    np.testing.assert_allclose(mean[rest], m_ref, atol=1e-12)
    np.testing.assert_allclose(covar[np.ix_(rest, rest)], c_ref, atol=1e-12)


def test_three_node_midpoint_against_dense_gaussian():
    # Brownian motion from 0 at times (0.3, 0.7, 1.0), pinned at the outer two
    t = np.array([0.3, 0.7, 1.0])
    y = np.array([0.5, -0.2])
    cov = np.minimum(t[:, None], t[None, :])
    _, m_ref, c_ref = _dense_conditional(cov, np.array([0, 2]), y)
    grid_t = np.concatenate([[0.0], t])
    z = np.random.default_rng(1).normal(size=(100000, 3, 1))
    Y = np.concatenate([np.zeros((100000, 1, 1)), np.cumsum(z * np.sqrt(np.diff(grid_t))[None, :, None], axis=1)], axis=1)
    out = condition_two_point(Y[:, 1:], t, brownian_kernel(1.0), (0.3, y[:1]), (1.0, y[1:]))
    mid = out[:, 1, 0]
    se_mean = np.sqrt(c_ref[0, 0] / mid.size)
    se_var = c_ref[0, 0] * np.sqrt(2.0 / (mid.size - 1))
    assert abs(mid.mean() - m_ref[0]) < 3 * se_mean
    assert abs(mid.var(ddof=1) - c_ref[0, 0]) < 3 * se_var


def test_degenerate_endpoints_raise():
    t = np.array([0.0, 0.5, 1.0])
    with pytest.raises(DegenerateBridgeError):
        two_point_coefficients(brownian_kernel(1.0), t, 0.0, 0.0)
    with pytest.raises(DegenerateBridgeError):
        two_point_coefficients(ou_kernel(1.0, 1.0), t, 0.5, 0.5)


@st.composite
def obs_sets(draw, max_n=6, max_d=3):
    n = draw(st.integers(2, max_n))
    d = draw(st.integers(1, max_d))
    gaps = draw(st.lists(st.floats(0.05, 2.0), min_size=n - 1, max_size=n - 1))
    t = np.concatenate([[0.0], np.cumsum(gaps)])
    vals = draw(st.lists(st.floats(-5, 5), min_size=n * d, max_size=n * d))
    return ObservationSet(t, np.array(vals).reshape(n, d))


@given(obs=obs_sets(), seed=st.integers(0, 2**64 - 1))
@settings(max_examples=40, deadline=None)
def test_ensemble_endpoints_exact(obs, seed):
    grid = build_grid(obs, 0.1)
    ens = sample_bridge_ensemble(obs, grid, DiffusionSchedule.scalar(1.3), 3, seed)
    for k in range(3):
        assert np.array_equal(ens.values[k][grid.obs_index], obs.values)


def test_ensemble_endpoints_exact_piecewise():
    obs = _obs([0.0, 0.7, 2.0], [[0.1, 1.0], [0.9, -1.0], [0.3, 0.2]])
    grid = build_grid(obs, 0.05)
    sched = DiffusionSchedule.piecewise([0.5, 1.1], [[1.0, 0.5], [2.0, 1.0], [0.3, 0.7]])
    ens = sample_bridge_ensemble(obs, grid, sched, 5, 0)
    assert np.all(ens.values[:, grid.obs_index] == obs.values)


def test_bridge_midpoint_variance_and_mean():
    obs = _obs([0.0, 1.0], [[0.0], [0.0]])
    grid = build_grid(obs, 0.05)
    ens = sample_bridge_ensemble(obs, grid, DiffusionSchedule.scalar(1.0), 100000, 42)
    mid = ens.values[:, 10, 0]
    se_var = 0.25 * np.sqrt(2.0 / (mid.size - 1))
    assert abs(np.var(mid, ddof=1) - 0.25) < 3 * se_var


def test_bridge_mean_is_linear_interpolation():
    obs = _obs([0.0, 0.5, 2.0], [[1.0], [-1.0], [2.0]])
    grid = build_grid(obs, 0.1)
    ens = sample_bridge_ensemble(obs, grid, DiffusionSchedule.scalar(0.8), 100000, 7)
    interp = np.interp(grid.nodes, obs.times, obs.values[:, 0])
    mean = ens.values[:, :, 0].mean(axis=0)
    se = ens.values[:, :, 0].std(axis=0, ddof=1) / np.sqrt(100000)
    inner = se > 0
    assert np.all(np.abs(mean - interp)[inner] < 3.5 * se[inner])
    np.testing.assert_array_equal(mean[~inner], interp[~inner])


def test_markov_decomposition():
    # one bridge over [0, 2] conditioned also at t=1 equals two independent bridges
    sigma, K = 1.0, 40000
    grid_full = build_grid(np.array([0.0, 2.0]), 0.25)
    Y = brownian_rows(grid_full, DiffusionSchedule.scalar(sigma), 3, np.arange(K), 1)[:, :, 0]
    t = grid_full.nodes
    cov = sigma**2 * np.minimum(t[1:, None], t[None, 1:])
    # condition Y at nodes 4 (t=1) and 8 (t=2) on the values (0.5, 0) with dense algebra
    idx = np.array([3, 7])
    rest, gain_mean, _ = _dense_conditional(cov, idx, np.array([0.5, 0.0]))
    S12 = cov[np.ix_(rest, idx)] @ np.linalg.inv(cov[np.ix_(idx, idx)])
    Yc = Y[:, 1:].copy()
    Yc[:, rest] = Yc[:, rest] + (np.array([0.5, 0.0]) - Yc[:, idx]) @ S12.T
    obs = _obs([0.0, 1.0, 2.0], [[0.0], [0.5], [0.0]])
    ens = sample_bridge_ensemble(obs, build_grid(obs, 0.25), DiffusionSchedule.scalar(sigma), K, 99)
    two = ens.values[:, 1:, 0]
    for j in rest:
        a, b = Yc[:, j], two[:, j]
        se = np.sqrt(a.var() / K + b.var() / K)
        assert abs(a.mean() - b.mean()) < 4 * se
        f = stats.f.sf(max(a.var(), b.var()) / min(a.var(), b.var()), K - 1, K - 1)
        assert f > 1e-3


def test_worker_count_invariance():
    obs = _obs([0.0, 0.4, 1.0], [[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
    grid = build_grid(obs, 0.001)
    base = sample_bridge_ensemble(obs, grid, DiffusionSchedule.scalar(1.0), 64, 5, workers=1)
    for w in (2, 3, 4):
        other = sample_bridge_ensemble(obs, grid, DiffusionSchedule.scalar(1.0), 64, 5, workers=w)
        assert np.array_equal(base.values, other.values)


def test_log_base_density_examples():
    s1 = DiffusionSchedule.scalar(1.0)
    assert log_base_density(_obs([0, 1], [[0], [0]]), s1) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)
    val = log_base_density(_obs([0, 4], [[0], [2]]), DiffusionSchedule.scalar(2.0))
    assert val == pytest.approx(-0.5 * np.log(32 * np.pi) - 4 / 32, abs=1e-13)
    assert val == pytest.approx(stats.norm(0, 4).logpdf(2.0), abs=1e-13)
    assert round(val, 4) == -2.4302


@given(obs=obs_sets(max_n=6, max_d=2), sigma=st.floats(0.2, 3.0))
@settings(max_examples=40, deadline=None)
def test_log_base_density_against_dense_gaussian(obs, sigma):
    # joint density of x_2..x_N given x_1 from the full covariance matrix
    t = obs.times
    cov = sigma**2 * (np.minimum(t[1:, None], t[None, 1:]) - t[0])
    ref = sum(
        stats.multivariate_normal(np.full(len(t) - 1, obs.values[0, i]), cov).logpdf(obs.values[1:, i])
        for i in range(obs.dim)
    )
    got = log_base_density(obs, DiffusionSchedule.scalar(sigma))
    assert abs(got - ref) <= 1e-10 * max(1.0, abs(ref))
