"""Nonlinear branch-flow solver and the linear voltage model.

The nonlinear solve is the "physical plant" used by the online loop; the
affine map is what the operator believes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels
from .feeder import FeederTopology, SensitivityModel


class NoConvergence(RuntimeError):
    """The sweep did not reach the residual target (likely voltage collapse)."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"branch flow not converged after {iterations} iterations "
                         f"(residual {residual:.3e})")


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InjectionVector:
    """Controllable net injections at buses 1..N (generation positive)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise DimensionMismatch(f"p {p.shape} and q {q.shape} must be equal 1-D shapes")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("injections must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def zeros(cls, n: int) -> "InjectionVector":
        return cls(np.zeros(n), np.zeros(n))

    def __add__(self, other: "InjectionVector") -> "InjectionVector":
        return InjectionVector(self.p + other.p, self.q + other.q)


@dataclass(frozen=True, eq=False)
class BranchFlowState:
    """Solved operating point.

    ``P``, ``Q``, ``l`` are per line in the topology's stored order; ``v``
    holds all buses ``0..N`` with ``v[0] = v0``.
    """

    P: np.ndarray
    Q: np.ndarray
    l: np.ndarray
    v: np.ndarray
    iterations: int
    residual: float

    @property
    def v_nodes(self) -> np.ndarray:
        """Voltages of buses 1..N, aligned with the sensitivity model."""
        return self.v[1:]


def _net_injection(topology: FeederTopology, inj: InjectionVector):
    if inj.p.shape[0] != topology.n:
        raise DimensionMismatch(f"expected {topology.n} injections, got {inj.p.shape[0]}")
    p = np.zeros(topology.n + 1)
    q = np.zeros(topology.n + 1)
    p[1:] = inj.p - topology.p_load
    q[1:] = inj.q - topology.q_load
    return p, q


class FeederPlant:
    """Branch-flow solver bound to one feeder, for repeated solves.

    Line arrays are extracted once; base loads may be swapped per call,
    which is how the online loop models time-varying demand.
    """

    def __init__(self, topology: FeederTopology, tol: float = 1e-8, max_iter: int = 200):
        if not tol > 0:
            raise ValueError("tol must be positive")
        self.topology = topology
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self._frm = topology.frm
        self._to = topology.to
        self._r = topology.r
        self._x = topology.x
        self._p_load = topology.p_load
        self._q_load = topology.q_load

    @property
    def n(self) -> int:
        return self.topology.n

    def solve(self, inj: InjectionVector, p_load: np.ndarray | None = None,
              q_load: np.ndarray | None = None, warm_l: np.ndarray | None = None) -> BranchFlowState:
        """Solve with optional replacement demands for buses 1..N."""
        n = self.topology.n
        if inj.p.shape[0] != n:
            raise DimensionMismatch(f"expected {n} injections, got {inj.p.shape[0]}")
        pl = self._p_load if p_load is None else np.asarray(p_load, dtype=float)
        ql = self._q_load if q_load is None else np.asarray(q_load, dtype=float)
        if pl.shape != (n,) or ql.shape != (n,):
            raise DimensionMismatch("load vectors must have one entry per bus")
        p = np.zeros(n + 1)
        q = np.zeros(n + 1)
        p[1:] = inj.p - pl
        q[1:] = inj.q - ql
        ne = self._r.shape[0]
        P = np.zeros(ne)
        Q = np.zeros(ne)
        L = np.zeros(ne) if warm_l is None else np.array(warm_l, dtype=float)
        v = np.empty(n + 1)
        if ne == 0:
            v[0] = self.topology.v0
            return BranchFlowState(P, Q, L, v, 0, 0.0)
        iters, res = kernels.sweep(self._frm, self._to, self._r, self._x, p, q,
                                   self.topology.v0, self.tol, self.max_iter, P, Q, L, v)
        if not res <= self.tol:
            raise NoConvergence(iters, res)
        return BranchFlowState(P, Q, L, v, iters, res)


def solve_branch_flow(topology: FeederTopology, inj: InjectionVector, tol: float = 1e-8,
                      max_iter: int = 200, warm_l: np.ndarray | None = None) -> BranchFlowState:
    """Backward/forward sweep on the branch-flow equations.

    Base loads are subtracted from ``inj`` before solving. Starting from a
    flat profile (zero line currents) unless ``warm_l`` is given.

    Raises
    ------
    NoConvergence
        If the residual stays above ``tol`` or a squared voltage turns
        non-positive.
    """
    return FeederPlant(topology, tol, max_iter).solve(inj, warm_l=warm_l)


def branch_flow_residuals(topology: FeederTopology, inj: InjectionVector,
                          state: BranchFlowState) -> dict:
    """Max-norm residual of each branch-flow equation at ``state``.

    Evaluated directly from the equations, independently of the solver.
    """
    p, q = _net_injection(topology, inj)
    frm, to, r, x = topology.frm, topology.to, topology.r, topology.x
    P, Q, L = state.P, state.Q, state.l
    v2 = state.v ** 2
    outP = np.zeros(topology.n + 1)
    outQ = np.zeros(topology.n + 1)
    np.add.at(outP, frm, P)
    np.add.at(outQ, frm, Q)
    res_p = P - (-p[to] + outP[to] + r * L)
    res_q = Q - (-q[to] + outQ[to] + x * L)
    res_v = v2[to] - (v2[frm] - 2 * (r * P + x * Q) + (r ** 2 + x ** 2) * L)
    res_l = L * v2[frm] - P ** 2 - Q ** 2

    def mx(a):
        return float(np.max(np.abs(a), initial=0.0))

    return {"active": mx(res_p), "reactive": mx(res_q), "voltage": mx(res_v), "current": mx(res_l)}


def linear_voltage(model: SensitivityModel, inj: InjectionVector) -> np.ndarray:
    """Evaluate ``R p + X q + a``."""
    if inj.p.shape[0] != model.n:
        raise DimensionMismatch(f"model has {model.n} buses, injection has {inj.p.shape[0]}")
    return model.R @ inj.p + model.X @ inj.q + model.a


def estimate_model_error(topology: FeederTopology, model: SensitivityModel,
                         sample_set: Iterable[InjectionVector], tol: float = 1e-8,
                         max_iter: int = 200) -> float:
    """Largest gap between nonlinear and linear voltages over the samples."""
    e = 0.0
    for inj in sample_set:
        v = solve_branch_flow(topology, inj, tol, max_iter).v_nodes
        e = max(e, float(np.max(np.abs(v - linear_voltage(model, inj)))))
    return e
