import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridincentive.acpf import InjectionVector, solve_branch_flow
from gridincentive.feeder import (Bus, CycleDetected, DisconnectedBus, DuplicateId,
                                  InvalidElement, Line, build_topology, compute_sensitivity)

from conftest import random_feeder


def chain(n, r=0.1, x=0.1, v0=1.0):
    return build_topology([Bus(i) for i in range(n + 1)],
                          [Line(i, i + 1, r, x) for i in range(n)], v0)


def test_single_line_path():
    top = chain(1)
    assert top.n == 1
    assert top.path(1) == ((0, 1),)


def test_chain_path():
    assert chain(2).path(2) == ((0, 1), (1, 2))


@pytest.mark.parametrize("lines, exc", [
    ([Line(0, 1, 0.1, 0.1), Line(1, 2, 0.1, 0.1), Line(2, 0, 0.1, 0.1)], CycleDetected),
    ([Line(0, 1, 0.1, 0.1)], DisconnectedBus),
    ([Line(0, 1, 0.1, 0.1), Line(1, 1, 0.1, 0.1)], CycleDetected),
    ([Line(0, 1, 0.0, 0.0), Line(1, 2, 0.1, 0.1)], InvalidElement),
    ([Line(0, 1, -0.1, 0.1), Line(1, 2, 0.1, 0.1)], InvalidElement),
    ([Line(0, 1, 0.1, 0.1), Line(1, 7, 0.1, 0.1)], InvalidElement),
])
def test_rejects_bad_trees(lines, exc):
    with pytest.raises(exc):
        build_topology([Bus(0), Bus(1), Bus(2)], lines, 1.0)


def test_duplicate_ids():
    with pytest.raises(DuplicateId) as info:
        build_topology([Bus(0), Bus(1), Bus(1)], [Line(0, 1, 0.1, 0.1)], 1.0)
    assert info.value.bus == 1


def test_lines_reoriented_from_root():
    top = build_topology([Bus(0), Bus(1), Bus(2)], [Line(2, 1, 0.1, 0.2), Line(1, 0, 0.1, 0.1)],
                         1.0)
    assert [(ln.from_bus, ln.to_bus) for ln in top.lines] == [(0, 1), (1, 2)]


def test_single_line_sensitivity():
    m = compute_sensitivity(chain(1))
    assert m.R.tolist() == [[0.1]]
    assert m.X.tolist() == [[0.1]]
    assert m.a.tolist() == [1.0]


@pytest.mark.parametrize("v0", [1.0, 1.05])
def test_chain_sensitivity(v0):
    m = compute_sensitivity(chain(2, r=0.1, x=0.05, v0=v0))
    np.testing.assert_allclose(m.R, np.array([[0.1, 0.1], [0.1, 0.2]]) / v0)
    np.testing.assert_allclose(m.X, np.array([[0.05, 0.05], [0.05, 0.1]]) / v0)


def _fd_sensitivity(top, h=1e-6):
    n = top.n
    R = np.zeros((n, n))
    X = np.zeros((n, n))
    for j in range(n):
        for M, which in ((R, "p"), (X, "q")):
            e = np.zeros(n)
            e[j] = h
            up = InjectionVector(e, np.zeros(n)) if which == "p" else InjectionVector(np.zeros(n), e)
            dn = InjectionVector(-e, np.zeros(n)) if which == "p" else InjectionVector(np.zeros(n), -e)
            vp = solve_branch_flow(top, up, tol=1e-13, max_iter=500).v_nodes
            vm = solve_branch_flow(top, dn, tol=1e-13, max_iter=500).v_nodes
            M[:, j] = (vp - vm) / (2 * h)
    return R, X


@pytest.mark.parametrize("top", [chain(1), chain(2, r=0.1, x=0.1)])
def test_sensitivity_matches_finite_differences(top):
    m = compute_sensitivity(top)
    R, X = _fd_sensitivity(top)
    np.testing.assert_allclose(m.R, R, atol=1e-3)
    np.testing.assert_allclose(m.X, X, atol=1e-3)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_sensitivity_structure(seed, n):
    top, m, _ = random_feeder(np.random.default_rng(seed), n)
    assert len(top.lines) == len(top.buses) - 1
    np.testing.assert_array_equal(m.R, m.R.T)
    np.testing.assert_array_equal(m.X, m.X.T)
    assert np.all(m.R >= 0) and np.all(m.X >= 0)
    assert np.all(np.diag(m.R) > 0) and np.all(np.diag(m.X) > 0)
    assert np.all(np.diag(m.R)[:, None] >= m.R - 1e-15)
    assert np.all((m.a > 0.8) & (m.a < 1.2))


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_linear_model_close_to_nonlinear(seed, n):
    rng = np.random.default_rng(seed)
    top, m, _ = random_feeder(rng, n)
    z = rng.uniform(-0.05, 0.05, 2 * n)
    v = solve_branch_flow(top, InjectionVector(z[:n], z[n:])).v_nodes
    vhat = m.R @ z[:n] + m.X @ z[n:] + m.a
    assert np.max(np.abs(v - vhat)) <= 5e-3


def test_with_loads_rebuilds_offset():
    top = chain(2)
    m = compute_sensitivity(top.with_loads([0.1, 0.2], [0.0, 0.0]))
    np.testing.assert_allclose(m.a, 1.0 - m.R @ np.array([0.1, 0.2]))


def test_model_is_read_only():
    m = compute_sensitivity(chain(2))
    with pytest.raises(ValueError):
        m.R[0, 0] = 1.0
