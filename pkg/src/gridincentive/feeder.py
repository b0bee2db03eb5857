"""Radial feeder topology and the linear voltage-sensitivity model.

Buses are indexed ``0..N`` with bus 0 the substation. Controllable and load
quantities live on buses ``1..N``, which map to row ``id - 1`` of every
N-vector and N x N matrix in the package.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class TopologyError(ValueError):
    """Base class for rejected feeder descriptions."""


class CycleDetected(TopologyError):
    def __init__(self, line):
        self.line = line
        super().__init__(f"line {line} closes a cycle")


class DisconnectedBus(TopologyError):
    def __init__(self, bus):
        self.bus = bus
        super().__init__(f"bus {bus} is not reachable from the substation")


class DuplicateId(TopologyError):
    def __init__(self, bus):
        self.bus = bus
        super().__init__(f"bus id {bus} appears more than once")


class InvalidElement(TopologyError):
    """A bus or line violates a local invariant (bad impedance, unknown id)."""

    def __init__(self, element, rule):
        self.element = element
        self.rule = rule
        super().__init__(f"{element}: {rule}")


@dataclass(frozen=True)
class Bus:
    """A feeder node with its fixed (uncontrollable) demand in p.u."""

    id: int
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class Line:
    """Series branch between two buses, impedance in p.u."""

    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True, eq=False)
class FeederTopology:
    """Validated radial feeder.

    Construct through :func:`build_topology`. ``lines`` are stored oriented
    away from the substation and in breadth-first order, so a forward pass
    over them visits every parent before its children.
    """

    buses: tuple
    lines: tuple
    v0: float
    parent: np.ndarray = field(repr=False)
    parent_line: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        """Number of non-substation buses."""
        return len(self.buses) - 1

    @property
    def frm(self) -> np.ndarray:
        return np.array([ln.from_bus for ln in self.lines], dtype=np.int64)

    @property
    def to(self) -> np.ndarray:
        return np.array([ln.to_bus for ln in self.lines], dtype=np.int64)

    @property
    def r(self) -> np.ndarray:
        return np.array([ln.r for ln in self.lines], dtype=float)

    @property
    def x(self) -> np.ndarray:
        return np.array([ln.x for ln in self.lines], dtype=float)

    @property
    def p_load(self) -> np.ndarray:
        return np.array([b.p_load for b in self.buses[1:]], dtype=float)

    @property
    def q_load(self) -> np.ndarray:
        return np.array([b.q_load for b in self.buses[1:]], dtype=float)

    def path(self, bus: int) -> tuple:
        """Lines ``(from, to)`` on the unique route from bus 0 to ``bus``."""
        out = []
        j = bus
        while j != 0:
            ln = self.lines[self.parent_line[j]]
            out.append((ln.from_bus, ln.to_bus))
            j = int(self.parent[j])
        return tuple(reversed(out))

    def path_matrix(self) -> np.ndarray:
        """Incidence ``A[i-1, e] = 1`` iff line ``e`` lies on the path to bus ``i``."""
        A = np.zeros((self.n, len(self.lines)))
        for i in range(1, self.n + 1):
            j = i
            while j != 0:
                A[i - 1, self.parent_line[j]] = 1.0
                j = int(self.parent[j])
        return A

    def with_loads(self, p_load: Sequence[float], q_load: Sequence[float]) -> "FeederTopology":
        """Copy with bus demands replaced (length-N vectors for buses 1..N)."""
        buses = [self.buses[0]] + [
            Bus(b.id, float(p), float(q)) for b, p, q in zip(self.buses[1:], p_load, q_load)
        ]
        return build_topology(buses, self.lines, self.v0)


def build_topology(buses: Iterable[Bus], lines: Iterable[Line], v0: float) -> FeederTopology:
    """Validate a radial feeder and precompute its tree structure.

    Parameters
    ----------
    buses : iterable of Bus
        Must contain ids ``0..N`` exactly once each.
    lines : iterable of Line
        Undirected; orientation is recomputed from the substation.
    v0 : float
        Substation voltage magnitude, p.u.

    Raises
    ------
    DuplicateId, CycleDetected, DisconnectedBus, InvalidElement
    """
    buses = list(buses)
    lines = list(lines)
    if not buses:
        raise InvalidElement("buses", "at least the substation is required")
    if not v0 > 0:
        raise InvalidElement("v0", "substation voltage must be positive")
    seen = set()
    for b in buses:
        if b.id in seen:
            raise DuplicateId(b.id)
        seen.add(b.id)
    n = len(buses) - 1
    if seen != set(range(n + 1)):
        missing = sorted(set(range(n + 1)) - seen)
        raise InvalidElement("buses", f"ids must be 0..{n}; missing {missing}")
    by_id = sorted(buses, key=lambda b: b.id)

    adj = {i: [] for i in range(n + 1)}
    for e, ln in enumerate(lines):
        for end in (ln.from_bus, ln.to_bus):
            if end not in adj:
                raise InvalidElement(f"line {e}", f"unknown bus {end}")
        if ln.from_bus == ln.to_bus:
            raise CycleDetected((ln.from_bus, ln.to_bus))
        if ln.r < 0 or ln.x < 0 or (ln.r == 0 and ln.x == 0):
            raise InvalidElement(f"line ({ln.from_bus},{ln.to_bus})",
                                 "need r >= 0, x >= 0, not both zero")
        adj[ln.from_bus].append((ln.to_bus, e))
        adj[ln.to_bus].append((ln.from_bus, e))

    parent = np.full(n + 1, -1, dtype=np.int64)
    parent_line = np.full(n + 1, -1, dtype=np.int64)
    depth = np.zeros(n + 1, dtype=np.int64)
    visited = {0}
    used = set()
    oriented = []
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j, e in adj[i]:
            if e in used:
                continue
            used.add(e)
            if j in visited:
                raise CycleDetected((lines[e].from_bus, lines[e].to_bus))
            visited.add(j)
            parent[j] = i
            parent_line[j] = len(oriented)
            depth[j] = depth[i] + 1
            oriented.append(Line(i, j, float(lines[e].r), float(lines[e].x)))
            queue.append(j)
    if len(used) != len(lines):
        # an unused edge lives in a component unreachable from bus 0
        e = next(e for e in range(len(lines)) if e not in used)
        bad = lines[e].from_bus if lines[e].from_bus not in visited else lines[e].to_bus
        if bad in visited:
            raise CycleDetected((lines[e].from_bus, lines[e].to_bus))
        raise DisconnectedBus(bad)
    if len(visited) != n + 1:
        raise DisconnectedBus(min(set(range(n + 1)) - visited))

    return FeederTopology(tuple(by_id), tuple(oriented), float(v0), parent, parent_line, depth)


@dataclass(frozen=True, eq=False)
class SensitivityModel:
    """Affine voltage map ``v_hat = R p + X q + a`` over buses 1..N."""

    R: np.ndarray
    X: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        for m in (self.R, self.X, self.a):
            m.setflags(write=False)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def M(self) -> np.ndarray:
        """The stacked ``[R X]`` block acting on ``(p, q)``."""
        return np.hstack([self.R, self.X])


def compute_sensitivity(topology: FeederTopology) -> SensitivityModel:
    """Linearized sensitivities of bus voltages to nodal injections.

    ``R[i, j]`` is the resistance shared by the root paths of buses i and j,
    divided by ``v0``; ``X`` is built the same way from reactances. Base
    loads are folded into the offset so that ``a`` is the linear-model
    voltage with zero controllable injection.
    """
    A = topology.path_matrix()
    v0 = topology.v0
    R = (A * topology.r) @ A.T / v0
    X = (A * topology.x) @ A.T / v0
    R = 0.5 * (R + R.T)
    X = 0.5 * (X + X.T)
    a = v0 - R @ topology.p_load - X @ topology.q_load
    return SensitivityModel(np.ascontiguousarray(R), np.ascontiguousarray(X), a)
