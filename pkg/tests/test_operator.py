import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridincentive.acpf import DimensionMismatch
from gridincentive.operator import (DualState, OperatorConfig, certify_step_sizes, dual_step,
                                    incentive_signals, jacobian, kkt_residual, metric_weights,
                                    network_gradient, network_objective, regularized_lagrangian,
                                    row_sum_screen, scaled_jacobian, weighted_norm)
from gridincentive.oracle import saddle_point

from conftest import random_feeder, single_pv_fixture


def test_network_objective_examples():
    assert network_objective(np.ones(4)) == 0.0
    assert network_objective(np.array([1.05, 0.95])) == pytest.approx(0.0025)


@given(v=st.lists(st.floats(0.8, 1.2), min_size=1, max_size=6))
def test_network_gradient_finite_difference(v):
    v = np.array(v)
    h = 1e-6
    fd = [(network_objective(v + h * e) - network_objective(v - h * e)) / (2 * h)
          for e in np.eye(len(v))]
    np.testing.assert_allclose(network_gradient(v), fd, atol=1e-8)


def test_dual_step_examples():
    cfg = OperatorConfig.uniform(2)
    mu = dual_step(DualState.zeros(2), np.array([1.0, 1.02]), cfg)
    assert mu.stacked.tolist() == [0.0] * 4
    mu = dual_step(DualState.zeros(1), np.array([1.06]), OperatorConfig.uniform(1))
    assert mu.mu_hi[0] == pytest.approx(1e-4)
    assert mu.mu_lo[0] == 0.0


@given(seed=st.integers(0, 10_000), eps2=st.floats(0, 1), phi=st.floats(1e-8, 1))
def test_dual_step_nonnegative(seed, eps2, phi):
    rng = np.random.default_rng(seed)
    mu = DualState(*rng.uniform(0, 5, (2, 5)))
    v = rng.uniform(0.8, 1.2, 5)
    out = dual_step(mu, v, OperatorConfig.uniform(5, eps2=eps2, phi=phi))
    assert np.all(out.stacked >= 0)


def test_dual_state_validation():
    with pytest.raises(ValueError):
        DualState(np.array([-1.0]), np.array([0.0]))
    with pytest.raises(DimensionMismatch):
        dual_step(DualState.zeros(2), np.ones(3), OperatorConfig.uniform(2))


def test_signal_examples(fixture3):
    _, model, _, cfg = fixture3
    a, b = incentive_signals(DualState.zeros(3), np.full(3, 1.04), model, cfg)
    assert a.tolist() == [0.0] * 3 and b.tolist() == [0.0] * 3
    mu = DualState(np.zeros(3), np.eye(3)[1])
    a, b = incentive_signals(mu, np.ones(3), model, cfg.replace(gamma=1.0))
    np.testing.assert_array_equal(a, -model.R[:, 1])
    np.testing.assert_array_equal(b, -model.X[:, 1])


def test_config_validation():
    with pytest.raises(ValueError):
        OperatorConfig.uniform(2, v_lo=1.05, v_hi=0.95)
    with pytest.raises(ValueError):
        OperatorConfig.uniform(2, phi=0.0)
    with pytest.raises(ValueError):
        OperatorConfig.uniform(2, gamma=-1.0)


def test_kkt_zero_at_unconstrained_optimum(fixture3):
    _, model, pool, cfg = fixture3
    p, q = pool.uncontrolled()
    z = np.concatenate([p, q])
    wide = cfg.replace(v_lo=np.full(3, 0.5), v_hi=np.full(3, 1.5))
    v = model.R @ p + model.X @ q + model.a
    assert kkt_residual(z, DualState.zeros(3), v, model, pool, wide) == 0.0


def test_kkt_small_at_oracle(fixture3):
    _, model, pool, cfg = fixture3
    sol = saddle_point(model, pool, cfg)
    mu = sol.mu_star
    v = model.R @ sol.p + model.X @ sol.q + model.a
    assert kkt_residual(sol.z_star, mu, v, model, pool, cfg) <= 1e-6


def test_kkt_detects_perturbation(fixture3):
    _, model, pool, cfg = fixture3
    sol = saddle_point(model, pool, cfg)
    mu = sol.mu_star
    z = sol.z_star.copy()
    z[0] -= 0.01
    v = model.R @ z[:3] + model.X @ z[3:] + model.a
    assert kkt_residual(z, mu, v, model, pool, cfg) > 1e-3


def test_lagrangian_is_saddle(fixture3):
    _, model, pool, cfg = fixture3
    sol = saddle_point(model, pool, cfg)
    mu = sol.mu_star
    base = regularized_lagrangian(sol.z_star, mu, model, pool, cfg)
    rng = np.random.default_rng(0)
    for _ in range(50):
        pp, qq = pool.project(*(np.split(sol.z_star, 2) + rng.normal(0, 0.05, (2, 3))))
        assert regularized_lagrangian(np.concatenate([pp, qq]), mu, model, pool, cfg) >= base - 1e-10
        m2 = DualState(*np.maximum(np.stack([mu.mu_lo, mu.mu_hi]) + rng.normal(0, 1, (2, 3)), 0))
        assert regularized_lagrangian(sol.z_star, m2, model, pool, cfg) <= base + 1e-10


def test_jacobian_matches_finite_difference_of_unprojected_map():
    rng = np.random.default_rng(3)
    _, model, pool = random_feeder(rng, 3)
    cfg = OperatorConfig.uniform(3, gamma=0.7, eps1=0.02, eps2=0.03)
    n = 3

    def step(y):
        p, q, lo, hi = np.split(y, 4)
        v = model.R @ p + model.X @ q + model.a
        mu = DualState(lo, hi)
        al, be = incentive_signals(mu, v, model, cfg)
        gp, gq = pool.cost_gradient(p, q)
        out = np.concatenate([p - cfg.eps1 * (gp - al), q - cfg.eps1 * (gq - be),
                              lo + cfg.eps2 * (cfg.v_lo - v - cfg.phi * lo),
                              hi + cfg.eps2 * (v - cfg.v_hi - cfg.phi * hi)])
        return out

    y = np.concatenate([rng.normal(0, 0.1, 2 * n), rng.uniform(1, 2, 2 * n)])
    fd = np.column_stack([(step(y + 1e-6 * e) - step(y - 1e-6 * e)) / 2e-6 for e in np.eye(4 * n)])
    np.testing.assert_allclose(jacobian(model, pool, cfg), fd, atol=1e-8)


def test_metric_weights_and_norm():
    cfg = OperatorConfig.uniform(2, eps1=0.02, eps2=0.01)
    assert metric_weights(2, cfg).tolist() == [1, 1, 1, 1, 2, 2, 2, 2]
    assert weighted_norm(np.array([0, 0, 0, 0, 1, 0, 0, 0.0]), cfg) == pytest.approx(2 ** 0.5)


def test_certify_rejects_zero_steps(fixture3):
    _, model, pool, cfg = fixture3
    c = certify_step_sizes(model, pool, cfg.replace(eps1=0.0, eps2=0.0))
    assert not c.certified
    assert (0, "eps1_positive") in c.violated and (0, "eps2_positive") in c.violated


def test_certify_single_line_example():
    model, _, pool = single_pv_fixture()
    cfg = OperatorConfig.uniform(1, eps1=0.01, eps2=0.01)
    # every per-bus row-sum inequality holds at these steps
    assert row_sum_screen(model, pool, cfg) == []
    # yet the linearized map is not a contraction in any of the tested norms
    c = certify_step_sizes(model, pool, cfg)
    assert not c.certified
    assert c.modulus > 1.0
    assert c.row_sum == pytest.approx(np.abs(jacobian(model, pool, cfg)).sum(axis=1).max())
    assert c.row_sum > 1.0
    ok = certify_step_sizes(model, pool, cfg.replace(eps1=0.001))
    assert ok.certified and ok.modulus < 1.0


def test_certified_modulus_is_spectral_norm(fixture3):
    _, model, pool, cfg = fixture3
    c = certify_step_sizes(model, pool, cfg)
    assert c.certified
    assert c.modulus == pytest.approx(np.linalg.norm(scaled_jacobian(model, pool, cfg), 2))
    assert 0.999 < c.modulus < 1.0


@given(seed=st.integers(0, 1000))
def test_certificate_bounds_linear_map(seed):
    rng = np.random.default_rng(seed)
    _, model, pool = random_feeder(rng, 3)
    cfg = OperatorConfig.uniform(3, eps1=0.05, eps2=0.05, phi=0.5)
    c = certify_step_sizes(model, pool, cfg)
    J = jacobian(model, pool, cfg)
    d = rng.normal(size=12)
    assert weighted_norm(J @ d, cfg) <= c.modulus * weighted_norm(d, cfg) + 1e-12
