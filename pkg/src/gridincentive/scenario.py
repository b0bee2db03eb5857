"""Scenario files, run configuration, synthetic profiles and the bundled
37-node feeder.

Feeders are JSON documents with bases in the header, bus demands in p.u.
and line impedances in ohms. Timelines are long-format CSV, one row per
(slot, bus). Run configurations are ``key = value`` text files.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import PV, STORAGE, VFD, AgentPool, CostParams, DerAgent, FeasibleSet, storage_agent
from .feeder import Bus, FeederTopology, Line, TopologyError, build_topology
from .operator import OperatorConfig


class ParseError(ValueError):
    """Malformed input text; ``line`` is 1-based (0 when unknown)."""

    def __init__(self, line: int, message: str):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class ValidationError(ValueError):
    """Well-formed input that breaks a scenario rule."""

    def __init__(self, entity: str, rule: str):
        self.entity = entity
        self.rule = rule
        super().__init__(f"{entity}: {rule}")


def _num(x: float) -> float:
    """Round to 12 significant digits, the precision of every written file."""
    return float(f"{float(x):.12g}")


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{float(x):.12g}"


# ---------------------------------------------------------------- feeder

@dataclass(frozen=True, eq=False)
class FeederSpec:
    """A feeder with its devices and the bases its file was written in."""

    topology: FeederTopology
    agents: tuple
    base_kv: float
    base_kva: float

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def z_base(self) -> float:
        """Impedance base in ohms."""
        return self.base_kv ** 2 * 1000.0 / self.base_kva

    def pool(self) -> AgentPool:
        return AgentPool(self.agents, self.n)

    def p_av(self) -> np.ndarray:
        """Availability of every PV device in the file, zero elsewhere."""
        out = np.zeros(self.n)
        for a in self.agents:
            if a.kind == PV:
                out[a.bus - 1] = a.feasible.p_max
        return out


def _need(obj: dict, key: str, entity: str):
    if key not in obj:
        raise ValidationError(entity, f"missing field '{key}'")
    return obj[key]


def _real(obj: dict, key: str, entity: str, default=None) -> float:
    val = obj.get(key, default) if default is not None else _need(obj, key, entity)
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ValidationError(entity, f"'{key}' must be a finite number")
    return float(val)


def _der_from_json(d: dict, n: int, h: float) -> DerAgent:
    ent = f"der at bus {d.get('bus')}"
    bus = _need(d, "bus", "der")
    if not isinstance(bus, int) or not 1 <= bus <= n:
        raise ValidationError(ent, f"bus must be an existing non-substation bus (1..{n})")
    kind = _need(d, "kind", ent)
    cost_kw = dict(c_p=_real(d, "c_p", ent, 3.0), c_q=_real(d, "c_q", ent, 1.0))
    try:
        if kind == PV:
            eta = _real(d, "eta", ent)
            p_av = _real(d, "p_av", ent, 0.0)
            if p_av < 0:
                raise ValidationError(ent, "p_av must be nonnegative")
            return DerAgent(bus, FeasibleSet.pv(p_av, eta), CostParams(p_ref=p_av, **cost_kw))
        if kind == STORAGE:
            rating = d.get("p_rating")
            return storage_agent(bus, _real(d, "capacity", ent), _real(d, "soc", ent),
                                 _real(d, "eta", ent), h,
                                 CostParams(p_ref=_real(d, "p_ref", ent, 0.0), **cost_kw),
                                 None if rating is None else _real(d, "p_rating", ent))
        if kind == VFD:
            return DerAgent(bus, FeasibleSet.vfd(_real(d, "p_min", ent), _real(d, "p_max", ent)),
                            CostParams(p_ref=_real(d, "p_ref", ent, 0.0), **cost_kw))
    except ValidationError:
        raise
    except ValueError as exc:
        raise ValidationError(ent, str(exc)) from exc
    raise ValidationError(ent, f"unknown kind '{kind}' (expected {PV}, {STORAGE} or {VFD})")


def _der_to_json(a: DerAgent) -> dict:
    out = {"bus": a.bus, "kind": a.kind, "c_p": _num(a.cost.c_p), "c_q": _num(a.cost.c_q)}
    if a.kind == PV:
        out.update(eta=_num(a.feasible.eta), p_av=_num(a.feasible.p_max))
    elif a.kind == STORAGE:
        out.update(eta=_num(a.feasible.eta), capacity=_num(a.capacity), soc=_num(a.soc),
                   p_ref=_num(a.cost.p_ref))
        if a.p_rating is not None:
            out["p_rating"] = _num(a.p_rating)
    else:
        out.update(p_min=_num(a.feasible.p_min), p_max=_num(a.feasible.p_max),
                   p_ref=_num(a.cost.p_ref))
    return out


def parse_feeder(text: str, h: float = 1.0) -> FeederSpec:
    """Build a feeder from JSON text.

    ``h`` (seconds) sets the slot length used for storage power bounds.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.msg) from exc
    if not isinstance(doc, dict):
        raise ParseError(1, "top level must be an object")
    base_kv = _real(doc, "base_kv", "header")
    base_kva = _real(doc, "base_kva", "header")
    v0 = _real(doc, "v0", "header")
    if base_kv <= 0 or base_kva <= 0:
        raise ValidationError("header", "bases must be positive")
    zb = base_kv ** 2 * 1000.0 / base_kva
    buses, lines = [], []
    for j, b in enumerate(_need(doc, "buses", "feeder")):
        ent = f"bus entry {j}"
        bid = _need(b, "id", ent)
        if not isinstance(bid, int):
            raise ValidationError(ent, "id must be an integer")
        buses.append(Bus(bid, _real(b, "p_load", ent, 0.0), _real(b, "q_load", ent, 0.0)))
    for j, ln in enumerate(_need(doc, "lines", "feeder")):
        ent = f"line entry {j}"
        frm, to = _need(ln, "from", ent), _need(ln, "to", ent)
        lines.append(Line(frm, to, _real(ln, "r_ohm", ent) / zb, _real(ln, "x_ohm", ent) / zb))
    try:
        top = build_topology(buses, lines, v0)
    except TopologyError as exc:
        raise ValidationError("topology", str(exc)) from exc
    if top.buses[0].p_load != 0 or top.buses[0].q_load != 0:
        raise ValidationError("bus 0", "the substation carries no load")
    ders = [_der_from_json(d, top.n, h) for d in doc.get("ders", [])]
    seen = set()
    for a in ders:
        if a.bus in seen:
            raise ValidationError(f"der at bus {a.bus}", "one device per bus")
        seen.add(a.bus)
    return FeederSpec(top, tuple(sorted(ders, key=lambda a: a.bus)), base_kv, base_kva)


def load_feeder(path, h: float = 1.0) -> FeederSpec:
    return parse_feeder(Path(path).read_text(), h)


def dump_feeder(spec: FeederSpec) -> str:
    """Canonical JSON text; loading it back reproduces ``spec``."""
    zb = spec.z_base
    top = spec.topology
    # lines are written in the order the topology stores them
    doc = {
        "base_kv": _num(spec.base_kv),
        "base_kva": _num(spec.base_kva),
        "v0": _num(top.v0),
        "buses": [{"id": b.id, "p_load": _num(b.p_load), "q_load": _num(b.q_load)}
                  for b in top.buses],
        "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r_ohm": _num(ln.r * zb),
                   "x_ohm": _num(ln.x * zb)} for ln in top.lines],
        "ders": [_der_to_json(a) for a in spec.agents],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# ---------------------------------------------------------------- timeline

@dataclass(frozen=True, eq=False)
class ScenarioTimeline:
    """Per-slot demands, PV availability, limits and deviation weight.

    Arrays have one row per slot and one column per bus ``1..N``. ``NaN``
    in ``gamma``, ``v_lo`` or ``v_hi`` means "use the run configuration".
    """

    h: float
    p_load: np.ndarray
    q_load: np.ndarray
    p_av: np.ndarray
    gamma: np.ndarray
    v_lo: np.ndarray | None = None
    v_hi: np.ndarray | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValidationError("timeline", "slot_duration must be positive")
        shp = np.shape(self.p_load)
        for name in ("p_load", "q_load", "p_av"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape != shp:
                raise ValidationError("timeline", f"{name} must be a (slots, buses) array")
            if not np.all(np.isfinite(arr)):
                raise ValidationError("timeline", f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if np.any(self.p_av < 0):
            raise ValidationError("timeline", "p_av must be nonnegative")
        g = np.asarray(self.gamma, dtype=float)
        if g.shape != (shp[0],):
            raise ValidationError("timeline", "gamma needs one entry per slot")
        if np.any(g < 0):
            raise ValidationError("timeline", "gamma must be nonnegative")
        object.__setattr__(self, "gamma", g)
        for name in ("v_lo", "v_hi"):
            val = getattr(self, name)
            if val is not None:
                arr = np.asarray(val, dtype=float)
                if arr.shape != shp:
                    raise ValidationError("timeline", f"{name} must match the load shape")
                object.__setattr__(self, name, arr)

    @property
    def n_slots(self) -> int:
        return self.p_load.shape[0]

    @property
    def n(self) -> int:
        return self.p_load.shape[1]

    @classmethod
    def static(cls, n_slots: int, p_load, q_load, p_av, h: float = 1.0,
               gamma: float = float("nan")) -> "ScenarioTimeline":
        """The same conditions repeated ``n_slots`` times."""
        rep = lambda x: np.tile(np.asarray(x, dtype=float), (n_slots, 1))  # noqa: E731
        return cls(h, rep(p_load), rep(q_load), rep(p_av), np.full(n_slots, gamma))

    def window(self, start: int, stop: int) -> "ScenarioTimeline":
        sl = slice(start, stop)
        return ScenarioTimeline(self.h, self.p_load[sl], self.q_load[sl], self.p_av[sl],
                                self.gamma[sl], None if self.v_lo is None else self.v_lo[sl],
                                None if self.v_hi is None else self.v_hi[sl])


_TL_COLS = ("slot", "bus", "p_load", "q_load", "p_av", "v_lo", "v_hi", "gamma")


def parse_timeline(text: str, feeder: FeederSpec) -> ScenarioTimeline:
    """Read long-format CSV. Missing (slot, bus) rows keep the feeder's values."""
    lines = text.splitlines()
    h = None
    body_start = 0
    for i, raw in enumerate(lines):
        s = raw.strip()
        if s.startswith("#"):
            key, _, val = s[1:].partition("=")
            if key.strip() == "slot_duration":
                try:
                    h = float(val)
                except ValueError:
                    raise ParseError(i + 1, f"bad slot_duration '{val.strip()}'") from None
            body_start = i + 1
            continue
        if s:
            break
        body_start = i + 1
    if h is None:
        raise ParseError(1, "missing '# slot_duration=<seconds>' header")
    reader = csv.reader(lines[body_start:])
    try:
        header = [c.strip() for c in next(reader)]
    except StopIteration:
        raise ParseError(body_start + 1, "missing column header") from None
    for c in ("slot", "bus"):
        if c not in header:
            raise ParseError(body_start + 1, f"column '{c}' is required")
    unknown = set(header) - set(_TL_COLS)
    if unknown:
        raise ParseError(body_start + 1, f"unknown columns {sorted(unknown)}")
    col = {c: header.index(c) for c in header}
    n = feeder.n
    recs = []
    for j, row in enumerate(reader):
        ln = body_start + 2 + j
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(ln, f"expected {len(header)} fields, got {len(row)}")
        try:
            slot = int(row[col["slot"]])
            bus = int(row[col["bus"]])
            vals = {c: (float(row[col[c]]) if row[col[c]].strip() else math.nan)
                    for c in _TL_COLS[2:] if c in col}
        except ValueError as exc:
            raise ParseError(ln, str(exc)) from None
        if not 1 <= bus <= n:
            raise ValidationError(f"timeline row {ln}", f"bus {bus} does not exist")
        if slot < 0:
            raise ValidationError(f"timeline row {ln}", "slot must be nonnegative")
        recs.append((slot, bus, vals, ln))
    if not recs:
        raise ValidationError("timeline", "no slots")
    S = max(r[0] for r in recs) + 1
    present = {r[0] for r in recs}
    if len(present) != S:
        raise ValidationError("timeline", "slots must be numbered 0..S-1 without gaps")
    top = feeder.topology
    pl = np.tile(top.p_load, (S, 1))
    ql = np.tile(top.q_load, (S, 1))
    pav = np.tile(feeder.p_av(), (S, 1))
    vlo = np.full((S, n), math.nan) if "v_lo" in col else None
    vhi = np.full((S, n), math.nan) if "v_hi" in col else None
    gam = np.full(S, math.nan)
    gam_set = np.zeros(S, bool)
    for slot, bus, vals, ln in recs:
        i = bus - 1
        for name, arr in (("p_load", pl), ("q_load", ql), ("p_av", pav)):
            if not math.isnan(vals.get(name, math.nan)):
                arr[slot, i] = vals[name]
        if vlo is not None:
            vlo[slot, i] = vals["v_lo"]
        if vhi is not None:
            vhi[slot, i] = vals["v_hi"]
        g = vals.get("gamma", math.nan)
        if gam_set[slot] and not (g == gam[slot] or (math.isnan(g) and math.isnan(gam[slot]))):
            raise ValidationError(f"timeline row {ln}", f"conflicting gamma in slot {slot}")
        gam[slot] = g
        gam_set[slot] = True
    if vlo is not None and vhi is not None:
        both = ~np.isnan(vlo) & ~np.isnan(vhi)
        if np.any(vlo[both] >= vhi[both]):
            raise ValidationError("timeline", "v_lo must be below v_hi")
    return ScenarioTimeline(h, pl, ql, pav, gam, vlo, vhi)


def load_timeline(path, feeder: FeederSpec) -> ScenarioTimeline:
    return parse_timeline(Path(path).read_text(), feeder)


def dump_timeline(tl: ScenarioTimeline) -> str:
    """Canonical CSV text with every (slot, bus) pair written out."""
    buf = io.StringIO()
    buf.write(f"# slot_duration={tl.h:.12g}\n")
    cols = ["slot", "bus", "p_load", "q_load", "p_av"]
    if tl.v_lo is not None:
        cols.append("v_lo")
    if tl.v_hi is not None:
        cols.append("v_hi")
    cols.append("gamma")
    buf.write(",".join(cols) + "\n")
    for m in range(tl.n_slots):
        g = _fmt(tl.gamma[m])
        for i in range(tl.n):
            parts = [str(m), str(i + 1), _fmt(tl.p_load[m, i]), _fmt(tl.q_load[m, i]),
                     _fmt(tl.p_av[m, i])]
            if tl.v_lo is not None:
                parts.append(_fmt(tl.v_lo[m, i]))
            if tl.v_hi is not None:
                parts.append(_fmt(tl.v_hi[m, i]))
            parts.append(g)
            buf.write(",".join(parts) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------- run config

@dataclass(frozen=True)
class RunConfig:
    """Algorithm parameters and run settings.

    ``tol`` and ``max_iter`` govern the offline solver; ``out`` is the
    directory for traces and summaries.
    """

    eps1: float = 0.01
    eps2: float = 0.01
    phi: float = 1e-4
    gamma: float = 0.0
    K: int = 1
    seed: int = 0
    tol: float = 1e-9
    max_iter: int = 10_000_000
    out: str = "out"
    v_lo: float = 0.95
    v_hi: float = 1.05
    v_nom: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("config", "K must be at least 1")
        if not (self.eps1 > 0 and self.eps2 > 0 and self.phi > 0 and self.tol > 0):
            raise ValidationError("config", "eps1, eps2, phi and tol must be positive")
        if self.gamma < 0:
            raise ValidationError("config", "gamma must be nonnegative")
        if self.max_iter < 1:
            raise ValidationError("config", "max_iter must be positive")
        if not self.v_lo < self.v_hi:
            raise ValidationError("config", "v_lo must be below v_hi")

    def operator_config(self, n: int) -> OperatorConfig:
        return OperatorConfig.uniform(n, self.v_lo, self.v_hi, gamma=self.gamma, phi=self.phi,
                                      v_nom=self.v_nom, eps1=self.eps1, eps2=self.eps2)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def parse_config(text: str) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    kw = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ParseError(i, f"expected key = value, got '{s}'")
        key, val = (x.strip() for x in s.split("=", 1))
        if key not in types:
            raise ValidationError("config", f"unknown key '{key}'")
        try:
            if types[key] in ("int", int):
                kw[key] = int(val)
            elif types[key] in ("float", float):
                kw[key] = float(val)
            else:
                kw[key] = val
        except ValueError:
            raise ParseError(i, f"bad value for {key}: '{val}'") from None
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    out = []
    for f in fields(RunConfig):
        val = getattr(cfg, f.name)
        out.append(f"{f.name} = {val:.12g}" if isinstance(val, float) else f"{f.name} = {val}")
    return "\n".join(out) + "\n"


def load_scenario(feeder_path, timeline_path=None, config_path=None):
    """Read and validate a feeder, an optional timeline and an optional config.

    Returns
    -------
    (FeederTopology, AgentPool, ScenarioTimeline or None, RunConfig)
    """
    cfg = load_config(config_path) if config_path is not None else RunConfig()
    h = 1.0
    if timeline_path is not None:
        head = Path(timeline_path).read_text()
        for raw in head.splitlines():
            s = raw.strip()
            if s.startswith("#") and s[1:].partition("=")[0].strip() == "slot_duration":
                try:
                    h = float(s[1:].partition("=")[2])
                except ValueError:
                    pass
                break
    spec = load_feeder(feeder_path, h)
    tl = load_timeline(timeline_path, spec) if timeline_path is not None else None
    return spec.topology, spec.pool(), tl, cfg


# ---------------------------------------------------------------- synthetic profiles

@dataclass(frozen=True)
class NodeProfile:
    """Per-bus scale of the synthetic profiles (PV capacity and reference demand, p.u.)."""

    bus: int
    pv_capacity: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class ProfileShape:
    """Shape of the synthetic day.

    PV availability is ``pv_capacity * peak * bell(t)`` times a common
    cloud factor ``exp(x_t)``, where ``x`` is a mean-reverting process with
    stationary standard deviation ``cloud_volatility``. Demand is the
    per-bus peak times a morning/evening double hump.
    """

    day_curve: str = "bell"
    cloud_volatility: float = 0.0
    peak: float = 0.9
    peak_hour: float = 12.5
    width_hours: float = 2.5
    start_hour: float = 11.0
    slot_seconds: float = 1.0
    reversion_seconds: float = 300.0
    gamma: float = float("nan")


def bell_curve(hours: np.ndarray, shape: ProfileShape) -> np.ndarray:
    """Clear-sky availability in [0, 1], zero before 6h and after 19h."""
    hours = np.asarray(hours, dtype=float)
    if shape.day_curve == "bell":
        b = np.exp(-0.5 * ((hours - shape.peak_hour) / shape.width_hours) ** 2)
    elif shape.day_curve == "flat":
        b = np.ones_like(hours)
    else:
        raise ValueError(f"unknown day curve '{shape.day_curve}'")
    return np.where((hours >= 6.0) & (hours <= 19.0), b, 0.0)


def load_curve(hours: np.ndarray) -> np.ndarray:
    """Demand multiplier with a morning and a larger evening peak."""
    hours = np.asarray(hours, dtype=float)
    return (0.6 + 0.3 * np.exp(-0.5 * ((hours - 8.0) / 1.5) ** 2)
            + 0.5 * np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2))


def synth_profiles(seed: int, n_slots: int, nodes: Sequence[NodeProfile],
                   shape: ProfileShape = ProfileShape(), n: int | None = None) -> ScenarioTimeline:
    """Deterministic synthetic timeline.

    Parameters
    ----------
    nodes : sequence of NodeProfile
        Buses not listed get zero demand and no PV.
    n : int, optional
        Number of non-substation buses; defaults to the largest listed bus.
    """
    if n_slots < 1:
        raise ValueError("n_slots must be at least 1")
    n = max(nd.bus for nd in nodes) if n is None else n
    rng = np.random.default_rng(seed)
    h = shape.slot_seconds
    hours = shape.start_hour + np.arange(n_slots) * h / 3600.0
    x = np.zeros(n_slots)
    if shape.cloud_volatility > 0:
        theta = h / shape.reversion_seconds
        kick = shape.cloud_volatility * math.sqrt(1.0 - (1.0 - theta) ** 2)
        xi = rng.standard_normal(n_slots)
        for k in range(1, n_slots):
            x[k] = (1.0 - theta) * x[k - 1] + kick * xi[k]
    sun = shape.peak * bell_curve(hours, shape)
    cloud = np.exp(x)
    lc = load_curve(hours)
    cap = np.zeros(n)
    pl = np.zeros(n)
    ql = np.zeros(n)
    for nd in nodes:
        if not 1 <= nd.bus <= n:
            raise ValueError(f"bus {nd.bus} outside 1..{n}")
        cap[nd.bus - 1] = nd.pv_capacity
        pl[nd.bus - 1] = nd.p_load
        ql[nd.bus - 1] = nd.q_load
    p_av = np.minimum(np.outer(sun * cloud, cap), cap[None, :])
    return ScenarioTimeline(h, np.outer(lc, pl), np.outer(lc, ql), p_av,
                            np.full(n_slots, shape.gamma))


# ---------------------------------------------------------------- IEEE 37-node feeder

# phase-c self impedance of the overhead/underground configurations, ohm/mile
_IEEE37_CONFIG = {"721": (0.2926, 0.1973), "722": (0.4751, 0.2973),
                  "723": (1.2936, 0.6713), "724": (2.0952, 0.7758)}
# (from, to, length ft, configuration); "XFM" is the 500 kVA in-line transformer
_IEEE37_LINES = (
    (799, 701, 1850, "721"), (701, 702, 960, "722"), (702, 705, 400, "724"),
    (702, 713, 360, "723"), (702, 703, 1320, "722"), (703, 727, 240, "724"),
    (703, 730, 600, "723"), (704, 714, 80, "724"), (704, 720, 800, "723"),
    (705, 742, 320, "724"), (705, 712, 240, "724"), (706, 725, 280, "724"),
    (707, 724, 760, "724"), (707, 722, 120, "724"), (708, 733, 320, "723"),
    (708, 732, 320, "724"), (709, 731, 600, "723"), (709, 708, 320, "723"),
    (710, 735, 200, "724"), (710, 736, 1280, "724"), (711, 741, 400, "723"),
    (711, 740, 200, "724"), (713, 704, 520, "723"), (714, 718, 520, "724"),
    (720, 707, 920, "724"), (720, 706, 600, "723"), (727, 744, 280, "723"),
    (730, 709, 200, "723"), (733, 734, 560, "723"), (734, 737, 640, "723"),
    (734, 710, 520, "724"), (737, 738, 400, "723"), (738, 711, 400, "723"),
    (744, 728, 200, "724"), (744, 729, 280, "724"), (775, 709, 0, "XFM"),
)
_IEEE37_XFM = (0.0009, 0.0181, 500.0)  # r, x in p.u. on the transformer's own kVA
# phase-c spot loads, kW and kvar
_IEEE37_LOADS = {701: (350, 175), 712: (85, 40), 713: (85, 40), 720: (85, 40), 722: (21, 10),
                 727: (42, 21), 728: (42, 21), 730: (85, 40), 732: (42, 21), 734: (42, 21),
                 735: (85, 40), 740: (85, 40), 741: (42, 21)}
IEEE37_PV_BUSES = (4, 7, 10, 13, 17, 20, 22, 23, 26, 28, 29, 30, 31, 32, 33, 34, 35, 36)
# inverter ratings in placement-list order, kVA
IEEE37_PV_KVA = tuple(300.0 if k == 2 else 350.0 if k in (14, 15) else 200.0
                      for k in range(len(IEEE37_PV_BUSES)))


def ieee37_node_index() -> dict:
    """Original node label to bus index; 799 is the substation."""
    ids = sorted({e for ln in _IEEE37_LINES for e in ln[:2]} - {799})
    idx = {799: 0}
    idx.update({b: i + 1 for i, b in enumerate(ids)})
    return idx


def build_ieee37_phase_c(base_kv: float = 4.8, base_kva: float = 2500.0, v0: float = 1.0,
                         cost: CostParams = CostParams(3.0, 1.0)) -> FeederSpec:
    """Single-phase reduction of the 37-node test feeder (phase c).

    Nodes are renumbered ``799 -> 0`` and the rest in ascending label order.
    PV inverters sit at :data:`IEEE37_PV_BUSES` with ratings
    :data:`IEEE37_PV_KVA` and are created at full availability.
    """
    idx = ieee37_node_index()
    zb = base_kv ** 2 * 1000.0 / base_kva
    lines = []
    for a, b, ft, conf in _IEEE37_LINES:
        if conf == "XFM":
            r_pu, x_pu, kva = _IEEE37_XFM
            r, x = r_pu * base_kva / kva, x_pu * base_kva / kva
        else:
            r, x = (c * ft / 5280.0 / zb for c in _IEEE37_CONFIG[conf])
        lines.append(Line(idx[a], idx[b], r, x))
    buses = [Bus(0)] + [Bus(i, _IEEE37_LOADS.get(lab, (0, 0))[0] / base_kva,
                            _IEEE37_LOADS.get(lab, (0, 0))[1] / base_kva)
                        for lab, i in sorted(idx.items(), key=lambda kv: kv[1]) if i > 0]
    top = build_topology(buses, lines, v0)
    agents = tuple(DerAgent(bus, FeasibleSet.pv(kva / base_kva, kva / base_kva),
                            replace(cost, p_ref=kva / base_kva))
                   for bus, kva in zip(IEEE37_PV_BUSES, IEEE37_PV_KVA))
    return FeederSpec(top, agents, base_kv, base_kva)


def ieee37_nodes(spec: FeederSpec) -> list:
    """Synthetic-profile scales for the 37-node feeder: PV capacity equals the rating."""
    cap = {a.bus: a.feasible.eta for a in spec.agents}
    top = spec.topology
    return [NodeProfile(i, cap.get(i, 0.0), float(top.p_load[i - 1]), float(top.q_load[i - 1]))
            for i in range(1, top.n + 1)]


# ---------------------------------------------------------------- bundled data

def data_path(name: str) -> Path:
    """Location of a bundled data file."""
    return Path(str(resources.files("gridincentive") / "data" / name))
