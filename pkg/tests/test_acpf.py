import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from gridincentive.acpf import (DimensionMismatch, FeederPlant, InjectionVector, NoConvergence,
                                branch_flow_residuals, estimate_model_error, linear_voltage,
                                solve_branch_flow)
from gridincentive.feeder import Bus, Line, SensitivityModel, build_topology, compute_sensitivity

from conftest import random_feeder


def line_feeder(r=0.1, x=0.1, v0=1.0, load=(0.0, 0.0)):
    return build_topology([Bus(0), Bus(1, *load)], [Line(0, 1, r, x)], v0)


def test_flat_solution_at_no_load():
    top = line_feeder()
    s = solve_branch_flow(top, InjectionVector.zeros(1))
    assert s.v.tolist() == [1.0, 1.0]
    assert s.P.tolist() == [0.0] and s.Q.tolist() == [0.0] and s.l.tolist() == [0.0]


def _single_line_oracle(r, x, v0, p, q):
    """Receiving-end voltage of one line by root-finding on the voltage equation."""
    # bus 1 injects (p, q); sending-end flows P = -p + r l, Q = -q + x l, l = (P^2+Q^2)/v0^2
    def resid(l):
        P, Q = -p + r * l, -q + x * l
        return l * v0 ** 2 - P ** 2 - Q ** 2
    l = brentq(resid, 0.0, 0.5)
    P, Q = -p + r * l, -q + x * l
    return math.sqrt(v0 ** 2 - 2 * (r * P + x * Q) + (r * r + x * x) * l)


@pytest.mark.parametrize("r, x, p, q", [(0.1, 0.0, -0.1, 0.0), (0.1, 0.1, -0.2, -0.1),
                                        (0.05, 0.02, 0.3, 0.1)])
def test_single_line_against_hand_solution(r, x, p, q):
    top = line_feeder(r, x)
    s = solve_branch_flow(top, InjectionVector([p], [q]), tol=1e-12)
    assert s.v[1] == pytest.approx(_single_line_oracle(r, x, 1.0, p, q), abs=1e-10)
    if x == 0.0:
        assert s.v[1] == pytest.approx(1.0 - 0.1 * 0.1, abs=2e-3)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_residuals_below_tolerance(seed, n):
    rng = np.random.default_rng(seed)
    top, _, _ = random_feeder(rng, n)
    inj = InjectionVector(rng.uniform(-0.3, 0.3, n), rng.uniform(-0.2, 0.2, n))
    s = solve_branch_flow(top, inj)
    res = branch_flow_residuals(top, inj, s)
    assert max(res.values()) <= 1e-8
    assert np.all(s.v > 0)


def test_collapse_raises():
    top = line_feeder(r=0.5, x=0.5)
    with pytest.raises(NoConvergence):
        solve_branch_flow(top, InjectionVector([-3.0], [-3.0]))


def test_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        solve_branch_flow(line_feeder(), InjectionVector.zeros(1), tol=0.0)


def test_deterministic():
    rng = np.random.default_rng(4)
    top, _, _ = random_feeder(rng, 5)
    inj = InjectionVector(rng.uniform(-0.2, 0.2, 5), rng.uniform(-0.1, 0.1, 5))
    a, b = solve_branch_flow(top, inj), solve_branch_flow(top, inj)
    assert a.v.tobytes() == b.v.tobytes()


def test_plant_load_override_matches_rebuilt_topology():
    rng = np.random.default_rng(1)
    top, _, _ = random_feeder(rng, 4)
    pl, ql = rng.uniform(0, 0.1, 4), rng.uniform(0, 0.05, 4)
    inj = InjectionVector(rng.uniform(0, 0.2, 4), np.zeros(4))
    v1 = FeederPlant(top).solve(inj, pl, ql).v
    v2 = solve_branch_flow(top.with_loads(pl, ql), inj).v
    np.testing.assert_array_equal(v1, v2)


def test_linear_voltage_examples():
    m = SensitivityModel(np.array([[0.1]]), np.array([[0.1]]), np.array([1.0]))
    assert linear_voltage(m, InjectionVector.zeros(1)).tolist() == [1.0]
    assert linear_voltage(m, InjectionVector([0.2], [-0.1]))[0] == pytest.approx(1.01)
    with pytest.raises(DimensionMismatch):
        linear_voltage(m, InjectionVector.zeros(2))


@given(seed=st.integers(0, 1000))
def test_linear_voltage_superposition(seed):
    rng = np.random.default_rng(seed)
    _, m, _ = random_feeder(rng, 4)
    z1 = InjectionVector(*rng.normal(size=(2, 4)))
    z2 = InjectionVector(*rng.normal(size=(2, 4)))
    lhs = linear_voltage(m, z1 + z2) - m.a
    rhs = (linear_voltage(m, z1) - m.a) + (linear_voltage(m, z2) - m.a)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_model_error_zero_at_no_load():
    top = line_feeder()
    assert estimate_model_error(top, compute_sensitivity(top), [InjectionVector.zeros(1)]) == 0.0


def test_model_error_on_grid_and_monotone():
    top = line_feeder()
    m = compute_sensitivity(top)
    grid = [InjectionVector([p], [q]) for p in np.linspace(-0.1, 0.1, 5)
            for q in np.linspace(-0.1, 0.1, 5)]
    e_all = estimate_model_error(top, m, grid)
    assert 0.0 < e_all < 0.01
    oracle = max(abs(_single_line_oracle(0.1, 0.1, 1.0, z.p[0], z.q[0])
                     - linear_voltage(m, z)[0]) for z in grid)
    assert e_all == pytest.approx(oracle, abs=1e-8)
    assert estimate_model_error(top, m, grid[:7]) <= e_all


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_light_load_agreement(seed, n):
    rng = np.random.default_rng(seed)
    top, _, _ = random_feeder(rng, n, load=0.0)
    m = compute_sensitivity(top)
    samples = [InjectionVector(*rng.uniform(-0.02, 0.02, (2, n))) for _ in range(5)]
    assert estimate_model_error(top, m, samples) <= 2e-3


def test_injection_validation():
    with pytest.raises(DimensionMismatch):
        InjectionVector([0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        InjectionVector([np.nan], [0.0])
