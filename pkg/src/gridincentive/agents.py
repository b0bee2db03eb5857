"""Customer-side logic: feasible sets, costs, projections and best responses.

An agent only ever sees its own set and cost plus the price pair the
operator sends it; it returns a setpoint and nothing else.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import kernels

PV = "PV"
STORAGE = "Storage"
VFD = "VFD"
KINDS = (PV, STORAGE, VFD)

_KERNEL_KIND = {PV: 0, STORAGE: 0, VFD: 1}


class EmptySet(ValueError):
    """A feasible set has no points, e.g. ``p_min > p_max`` after an update."""


@dataclass(frozen=True)
class FeasibleSet:
    """Interval in p intersected with the disk of radius ``eta``.

    For ``VFD`` the reactive component is pinned to zero and ``eta`` is
    ignored.
    """

    kind: str
    p_min: float
    p_max: float
    eta: float = math.inf

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown device kind {self.kind!r}")
        if not self.p_min <= self.p_max:
            raise EmptySet(f"p_min={self.p_min} exceeds p_max={self.p_max}")
        if self.kind != VFD:
            if not self.eta > 0:
                raise ValueError("eta must be positive")
            if self.p_min > self.eta or self.p_max < -self.eta:
                raise EmptySet(f"interval [{self.p_min}, {self.p_max}] misses the disk "
                               f"of radius {self.eta}")

    @classmethod
    def pv(cls, p_av: float, eta: float) -> "FeasibleSet":
        return cls(PV, 0.0, float(p_av), float(eta))

    @classmethod
    def storage(cls, p_min: float, p_max: float, eta: float) -> "FeasibleSet":
        return cls(STORAGE, float(p_min), float(p_max), float(eta))

    @classmethod
    def vfd(cls, p_min: float, p_max: float) -> "FeasibleSet":
        return cls(VFD, float(p_min), float(p_max), math.inf)

    @property
    def code(self) -> int:
        return _KERNEL_KIND[self.kind]

    @property
    def radius(self) -> float:
        """Disk radius passed to the kernels (box half-width for VFD)."""
        if self.kind == VFD:
            return max(abs(self.p_min), abs(self.p_max), 1.0)
        return self.eta

    def contains(self, sp: "Setpoint", tol: float = 1e-10) -> bool:
        if not self.p_min - tol <= sp.p <= self.p_max + tol:
            return False
        if self.kind == VFD:
            return abs(sp.q) <= tol
        return math.hypot(sp.p, sp.q) <= self.eta + tol


@dataclass(frozen=True)
class CostParams:
    """Quadratic discomfort ``c_p (p_ref - p)^2 + c_q q^2``."""

    c_p: float = 3.0
    c_q: float = 1.0
    p_ref: float = 0.0

    def __post_init__(self):
        if not (self.c_p > 0 and self.c_q > 0):
            raise ValueError("cost weights must be strictly positive")


@dataclass(frozen=True)
class Setpoint:
    p: float
    q: float


@dataclass(frozen=True)
class IncentiveSignal:
    alpha: float
    beta: float


def cost_value(params: CostParams, sp: Setpoint) -> float:
    return params.c_p * (params.p_ref - sp.p) ** 2 + params.c_q * sp.q ** 2


def cost_gradient(params: CostParams, sp: Setpoint) -> tuple[float, float]:
    return -2.0 * params.c_p * (params.p_ref - sp.p), 2.0 * params.c_q * sp.q


def project(fset: FeasibleSet, point: Setpoint) -> Setpoint:
    """Euclidean projection onto ``fset`` by exact case analysis."""
    p, q = kernels.project_point(float(point.p), float(point.q), fset.p_min, fset.p_max,
                                 fset.radius, fset.code)
    return Setpoint(p, q)


def _disk_weighted(pt: float, qt: float, wp: float, wq: float, eta: float) -> tuple[float, float]:
    """Minimise ``wp (p-pt)^2 + wq (q-qt)^2`` on the circle of radius eta.

    Assumes ``(pt, qt)`` lies outside the disk, so the multiplier is
    positive and the secular equation has a unique root.
    """
    def excess(nu):
        return (wp * pt / (wp + nu)) ** 2 + (wq * qt / (wq + nu)) ** 2 - eta * eta

    hi = math.sqrt(2.0) * max(wp * abs(pt), wq * abs(qt)) / eta + 1.0
    nu = brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    p, q = wp * pt / (wp + nu), wq * qt / (wq + nu)
    s = eta / math.hypot(p, q)  # remove the last rounding from the root
    return p * s, q * s


def best_response(fset: FeasibleSet, params: CostParams, signal: IncentiveSignal) -> Setpoint:
    """Unique minimiser of ``C(z) - alpha p - beta q`` over ``fset``.

    The objective is a weighted distance to its stationary point, so the
    minimiser is found among the few active-set candidates of the 2-D
    geometry and the cheapest feasible one is kept.
    """
    cp, cq = params.c_p, params.c_q
    pt = params.p_ref + signal.alpha / (2.0 * cp)
    qt = signal.beta / (2.0 * cq)
    lo, hi = fset.p_min, fset.p_max
    pc = min(max(pt, lo), hi)
    if fset.kind == VFD:
        return Setpoint(pc, 0.0)
    eta = fset.eta
    if pc * pc + qt * qt <= eta * eta:
        return Setpoint(pc, qt)

    def obj(p, q):
        return cp * (p - pt) ** 2 + cq * (q - qt) ** 2

    cands = []
    if pt * pt + qt * qt > eta * eta:
        p, q = _disk_weighted(pt, qt, cp, cq, eta)
        if lo <= p <= hi:
            cands.append((p, q))
    for b in (lo, hi):
        if abs(b) <= eta:
            s = math.sqrt(eta * eta - b * b)
            cands.append((b, min(max(qt, -s), s)))
    if not cands:
        raise EmptySet("no feasible candidate")
    p, q = min(cands, key=lambda c: obj(*c))
    return Setpoint(p, q)


def primal_step(fset: FeasibleSet, params: CostParams, z: Setpoint, signal: IncentiveSignal,
                eps1: float) -> Setpoint:
    """One projected-gradient step ``[z - eps1 (grad C(z) - s)]``."""
    if eps1 < 0:
        raise ValueError("eps1 must be nonnegative")
    gp, gq = cost_gradient(params, z)
    return project(fset, Setpoint(z.p - eps1 * (gp - signal.alpha),
                                  z.q - eps1 * (gq - signal.beta)))


@dataclass(frozen=True)
class DerAgent:
    """A device at one bus.

    For storage, ``capacity`` (p.u. x hours) and ``soc`` drive the interval
    bounds; ``p_rating`` caps charge/discharge power.
    """

    bus: int
    feasible: FeasibleSet
    cost: CostParams
    capacity: float | None = None
    soc: float | None = None
    p_rating: float | None = None

    @property
    def kind(self) -> str:
        return self.feasible.kind

    def project(self, point: Setpoint) -> Setpoint:
        return project(self.feasible, point)

    def best_response(self, signal: IncentiveSignal) -> Setpoint:
        return best_response(self.feasible, self.cost, signal)

    def primal_step(self, z: Setpoint, signal: IncentiveSignal, eps1: float) -> Setpoint:
        return primal_step(self.feasible, self.cost, z, signal, eps1)

    def with_availability(self, p_av: float) -> "DerAgent":
        """PV only: new available power, which is also the cost reference."""
        if self.kind != PV:
            return self
        p_av = max(float(p_av), 0.0)
        return replace(self, feasible=FeasibleSet.pv(p_av, self.feasible.eta),
                       cost=replace(self.cost, p_ref=p_av))

    def storage_bounds(self, h: float) -> tuple[float, float]:
        """Power interval for a slot of ``h`` seconds given the charge state."""
        rating = self.p_rating if self.p_rating is not None else self.feasible.eta
        hours = h / 3600.0
        p_max = min(rating, self.soc / hours)
        p_min = -min(rating, (self.capacity - self.soc) / hours)
        return p_min, p_max

    def after_slot(self, p: float, h: float) -> "DerAgent":
        """Storage only: integrate the charge state and refresh the bounds.

        Positive ``p`` discharges into the grid.
        """
        if self.kind != STORAGE:
            return self
        soc = min(max(self.soc - p * h / 3600.0, 0.0), self.capacity)
        nxt = replace(self, soc=soc)
        lo, hi = nxt.storage_bounds(h)
        return replace(nxt, feasible=FeasibleSet.storage(lo, hi, self.feasible.eta))


def storage_agent(bus: int, capacity: float, soc: float, eta: float, h: float,
                  cost: CostParams | None = None, p_rating: float | None = None) -> DerAgent:
    """Build a storage agent whose bounds reflect its current charge."""
    if not 0 <= soc <= capacity:
        raise ValueError("soc must lie in [0, capacity]")
    a = DerAgent(bus, FeasibleSet.storage(-eta, eta, eta), cost or CostParams(p_ref=0.0),
                 capacity, soc, p_rating)
    lo, hi = a.storage_bounds(h)
    return replace(a, feasible=FeasibleSet.storage(lo, hi, eta))


class AgentPool:
    """All buses' devices as flat arrays for the vectorised kernels.

    Buses without a device get the singleton set ``{(0, 0)}`` with unit
    cost weights, which leaves the optimum unaffected.
    """

    def __init__(self, agents: Sequence[DerAgent], n: int, filler: CostParams | None = None):
        self.n = n
        slots: list[DerAgent | None] = [None] * n
        for ag in agents:
            if not 1 <= ag.bus <= n:
                raise ValueError(f"agent bus {ag.bus} outside 1..{n}")
            if slots[ag.bus - 1] is not None:
                raise ValueError(f"two agents at bus {ag.bus}")
            slots[ag.bus - 1] = ag
        fill = filler or CostParams(3.0, 1.0, 0.0)
        self.agents = tuple(slots)
        self._fill = fill
        full = [a if a is not None else DerAgent(i + 1, FeasibleSet.vfd(0.0, 0.0), fill)
                for i, a in enumerate(slots)]
        self._full = tuple(full)
        self.kind = np.array([a.feasible.code for a in full], dtype=np.int32)
        self.lo = np.array([a.feasible.p_min for a in full], dtype=float)
        self.hi = np.array([a.feasible.p_max for a in full], dtype=float)
        self.eta = np.array([a.feasible.radius for a in full], dtype=float)
        self.cp = np.array([a.cost.c_p for a in full], dtype=float)
        self.cq = np.array([a.cost.c_q for a in full], dtype=float)
        self.pref = np.array([a.cost.p_ref for a in full], dtype=float)

    def __iter__(self):
        return iter(self._full)

    def __len__(self):
        return self.n

    @property
    def devices(self) -> tuple:
        """Real devices only, in bus order."""
        return tuple(a for a in self.agents if a is not None)

    @property
    def hessian_diag(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-bus curvature ``(2 c_p, 2 c_q)`` for step-size certification."""
        return 2.0 * self.cp, 2.0 * self.cq

    @property
    def strong_monotonicity(self) -> float:
        return 2.0 * float(min(self.cp.min(), self.cq.min()))

    def project(self, p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out_p = np.empty(self.n)
        out_q = np.empty(self.n)
        kernels.project_all(np.ascontiguousarray(p, dtype=float),
                            np.ascontiguousarray(q, dtype=float),
                            self.kind, self.lo, self.hi, self.eta, out_p, out_q)
        return out_p, out_q

    def primal_step(self, p, q, alpha, beta, eps1: float) -> tuple[np.ndarray, np.ndarray]:
        out_p = np.empty(self.n)
        out_q = np.empty(self.n)
        kernels.primal_step_all(np.ascontiguousarray(p, dtype=float),
                                np.ascontiguousarray(q, dtype=float),
                                np.ascontiguousarray(alpha, dtype=float),
                                np.ascontiguousarray(beta, dtype=float), float(eps1),
                                self.kind, self.lo, self.hi, self.eta, self.cp, self.cq,
                                self.pref, out_p, out_q)
        return out_p, out_q

    def best_response(self, alpha, beta) -> tuple[np.ndarray, np.ndarray]:
        pts = [a.best_response(IncentiveSignal(float(al), float(be)))
               for a, al, be in zip(self._full, alpha, beta)]
        return np.array([s.p for s in pts]), np.array([s.q for s in pts])

    def cost(self, p, q) -> float:
        return float(np.sum(self.cp * (self.pref - p) ** 2 + self.cq * q ** 2))

    def cost_gradient(self, p, q) -> tuple[np.ndarray, np.ndarray]:
        return -2.0 * self.cp * (self.pref - p), 2.0 * self.cq * q

    def uncontrolled(self) -> tuple[np.ndarray, np.ndarray]:
        """Devices at their private optimum: full availability, unity power factor."""
        return self.project(self.pref, np.zeros(self.n))

    def replaced(self, agents: Sequence[DerAgent]) -> "AgentPool":
        return AgentPool(agents, self.n, self._fill)

    def with_availability(self, p_av: np.ndarray) -> "AgentPool":
        """Refresh every PV device from a length-N availability vector."""
        return self.replaced([a.with_availability(p_av[a.bus - 1]) for a in self.devices])

    def after_slot(self, p: np.ndarray, h: float) -> "AgentPool":
        return self.replaced([a.after_slot(float(p[a.bus - 1]), h) for a in self.devices])
