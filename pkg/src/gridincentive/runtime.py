"""Offline and online drivers for the incentive-based primal-dual scheme,
plus the contraction, model-mismatch and tracking diagnostics.

The offline driver iterates on the linear voltage model until the iterate
stops moving. The online driver performs ``K`` iterations per timeslot and
takes voltages from the nonlinear branch-flow plant.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .acpf import FeederPlant, InjectionVector, NoConvergence
from .agents import AgentPool
from .feeder import FeederTopology, SensitivityModel
from .operator import (Certificate, DualState, OperatorConfig, certify_step_sizes, dual_step,
                       incentive_signals, local_rate, regularized_lagrangian,
                       scaled_jacobian, weighted_norm)
from .operator import kkt_residual as _kkt
from .oracle import NotConverged as _OracleNotConverged
from .oracle import OracleSolution, saddle_point

log = logging.getLogger(__name__)


class NotConverged(_OracleNotConverged):
    """``max_iter`` iterations ran without meeting the stopping tolerance."""

    def __init__(self, max_iter: int, diagnostics: "RunDiagnostics", state: "IterateState"):
        self.max_iter = max_iter
        self.diagnostics = diagnostics
        self.state = state
        last = float(diagnostics.dy[-1]) if diagnostics.dy.size else float("nan")
        super().__init__(f"no convergence within {max_iter} iterations "
                         f"(last step {last:.3e})", last)


class UncertifiedStepSizes(ValueError):
    def __init__(self, certificate: Certificate):
        self.certificate = certificate
        super().__init__(f"step sizes not certified (modulus {certificate.modulus:.9f}, "
                         f"violations {list(certificate.violated)[:4]})")


@dataclass(frozen=True, eq=False)
class IterateState:
    """Primal-dual iterate with the prices and voltages that accompany it.

    ``z`` stacks ``(p, q)``, ``s`` stacks ``(alpha, beta)``. ``v`` is the
    voltage the operator last used (linear prediction offline, measurement
    online).
    """

    z: np.ndarray
    mu: DualState
    s: np.ndarray
    v: np.ndarray
    k: int = 0
    t: int = 0

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def p(self) -> np.ndarray:
        return self.z[:self.n]

    @property
    def q(self) -> np.ndarray:
        return self.z[self.n:]

    @property
    def alpha(self) -> np.ndarray:
        return self.s[:self.n]

    @property
    def beta(self) -> np.ndarray:
        return self.s[self.n:]

    @property
    def y(self) -> np.ndarray:
        """``(p, q, mu_lo, mu_hi)`` as one vector."""
        return np.concatenate([self.z, self.mu.stacked])


def _empty():
    return np.zeros(0)


@dataclass(eq=False)
class RunDiagnostics:
    """Per-iteration histories and per-run summary numbers.

    Histories may be decimated (see ``stride``); entry ``j`` then refers to
    iteration ``(j + 1) * stride``.
    """

    dy: np.ndarray = field(default_factory=_empty)
    lagrangian: np.ndarray = field(default_factory=_empty)
    kkt: np.ndarray = field(default_factory=_empty)
    violation: np.ndarray = field(default_factory=_empty)
    stride: int = 1
    iterations: int = 0
    converged: bool = False
    certified: bool | None = None
    modulus: float = float("nan")
    delta_hat: float = float("nan")
    e: float = float("nan")
    rho_hat: float = float("nan")
    sigma_hat: float = float("nan")
    bound_lhs: float = float("nan")
    bound_rhs: float = float("nan")
    slack: float = float("nan")
    wall_time: float = float("nan")

    def summary(self) -> dict:
        keys = ("iterations", "converged", "certified", "modulus", "delta_hat", "e",
                "rho_hat", "sigma_hat", "bound_lhs", "bound_rhs", "slack", "wall_time")
        out = {}
        for k in keys:
            val = getattr(self, k)
            out[k] = val if isinstance(val, (bool, type(None))) else (
                int(val) if isinstance(val, (int, np.integer)) else float(val))
        return out


def _signals(mu: DualState, v: np.ndarray, model: SensitivityModel, cfg: OperatorConfig):
    al, be = incentive_signals(mu, v, model, cfg)
    return np.concatenate([al, be])


def initial_state(model: SensitivityModel, agents: AgentPool, cfg: OperatorConfig) -> IterateState:
    """Devices at their private optimum, zero multipliers, consistent prices."""
    p, q = agents.uncontrolled()
    z = np.concatenate([p, q])
    v = model.R @ p + model.X @ q + model.a
    mu = DualState.zeros(model.n)
    return IterateState(z, mu, _signals(mu, v, model, cfg), v)


# ---------------------------------------------------------------- offline

def offline_solve(topology: FeederTopology | None, model: SensitivityModel, agents: AgentPool,
                  cfg: OperatorConfig, tol: float = 1e-9, max_iter: int = 10_000_000, *,
                  acknowledge_uncertified: bool = False, init: IterateState | None = None,
                  record: str = "dy", stride: int = 1, trajectory: bool = False,
                  fused: bool = True, chunk: int = 1 << 16):
    """Iterate the primal-dual scheme on the linear model until it settles.

    Parameters
    ----------
    topology : FeederTopology or None
        Only used to check sizes; the offline scheme never touches the plant.
    tol : float
        Stop once the Euclidean step ``||y(k+1) - y(k)||`` is at most this.
    record : {"none", "dy", "full"}
        Which per-iteration histories to keep. ``"full"`` also evaluates the
        regularized Lagrangian, the KKT residual and the worst voltage
        violation at every iteration.
    stride : int
        Keep every ``stride``-th history entry.
    trajectory : bool
        Also return the (decimated) iterates as a ``(k, 4N)`` array.
    fused : bool
        Use the compiled loop. ``False`` runs the reference loop that calls
        the agent and operator functions separately, which is slow but keeps
        each side's data private.

    Returns
    -------
    state, diagnostics[, trajectory]

    Raises
    ------
    UncertifiedStepSizes
        Unless ``acknowledge_uncertified`` is set.
    NotConverged
        After ``max_iter`` iterations; diagnostics and state are attached.
    """
    if record not in ("none", "dy", "full"):
        raise ValueError("record must be 'none', 'dy' or 'full'")
    if topology is not None and topology.n != model.n:
        raise ValueError("topology and model sizes differ")
    if stride < 1 or max_iter < 1:
        raise ValueError("stride and max_iter must be positive")
    t0 = time.perf_counter()
    cert = certify_step_sizes(model, agents, cfg)
    if not cert.certified and not acknowledge_uncertified:
        raise UncertifiedStepSizes(cert)
    st = init if init is not None else initial_state(model, agents, cfg)
    n = model.n
    p = np.array(st.p, dtype=float)
    q = np.array(st.q, dtype=float)
    mlo = np.array(st.mu.mu_lo, dtype=float)
    mhi = np.array(st.mu.mu_hi, dtype=float)
    al = np.array(st.alpha, dtype=float)
    be = np.array(st.beta, dtype=float)
    vhat = model.R @ p + model.X @ q + model.a
    chunk = max(stride, (chunk // stride) * stride)
    hist = {k: [] for k in ("dy", "lag", "kkt", "viol", "traj")}
    done_total = 0
    converged = False
    R = np.ascontiguousarray(model.R)
    X = np.ascontiguousarray(model.X)
    a = np.ascontiguousarray(model.a)
    while done_total < max_iter and not converged:
        m = min(chunk, max_iter - done_total)

        def buf(on, shape=()):
            return np.empty((m,) + shape) if on else np.empty((0,) + shape)

        dyb = buf(record != "none")
        lagb = buf(record == "full")
        kktb = buf(record == "full")
        violb = buf(record == "full")
        trb = buf(trajectory, (4 * n,))
        if fused:
            done, converged = kernels.offline_iterate(
                p, q, mlo, mhi, al, be, vhat, agents.kind, agents.lo, agents.hi, agents.eta,
                agents.cp, agents.cq, agents.pref, R, X, a, cfg.v_lo, cfg.v_hi,
                float(cfg.v_nom), float(cfg.gamma), float(cfg.phi), float(cfg.eps1),
                float(cfg.eps2), m, float(tol), dyb, lagb, kktb, violb,
                trb if trajectory else np.empty((0, 4 * n)))
            converged = bool(converged)
        else:
            done, converged = _reference_iterate(p, q, mlo, mhi, al, be, vhat, model, agents,
                                                 cfg, m, tol, dyb, lagb, kktb, violb, trb)
        base = done_total
        done_total += done
        off = (stride - 1 - base) % stride
        for key, b in (("dy", dyb), ("lag", lagb), ("kkt", kktb), ("viol", violb),
                       ("traj", trb)):
            if b.shape[0]:
                hist[key].append(b[off:done:stride].copy())

    def cat(key, shape=()):
        return np.concatenate(hist[key]) if hist[key] else np.zeros((0,) + shape)

    mu = DualState(mlo, mhi)
    final = IterateState(np.concatenate([p, q]), mu, np.concatenate([al, be]), vhat.copy(),
                         done_total, 0)
    diag = RunDiagnostics(cat("dy"), cat("lag"), cat("kkt"), cat("viol"), stride, done_total,
                          converged, cert.certified, cert.modulus)
    diag.wall_time = time.perf_counter() - t0
    if not converged:
        raise NotConverged(max_iter, diag, final)
    if trajectory:
        return final, diag, cat("traj", (4 * n,))
    return final, diag


def _reference_iterate(p, q, mlo, mhi, al, be, vhat, model, agents, cfg, m, tol,
                       dyb, lagb, kktb, violb, trb):
    n = model.n
    for k in range(m):
        # agents see only their own setpoint and price
        pn, qn = agents.primal_step(p, q, al, be, cfg.eps1)
        # the operator sees only voltages and its model
        mu = dual_step(DualState(mlo, mhi), vhat, cfg)
        s = _signals(mu, vhat, model, cfg)
        dy = float(np.sqrt(np.sum((pn - p) ** 2 + (qn - q) ** 2
                                  + (mu.mu_lo - mlo) ** 2 + (mu.mu_hi - mhi) ** 2)))
        p[:], q[:] = pn, qn
        mlo[:], mhi[:] = mu.mu_lo, mu.mu_hi
        al[:], be[:] = s[:n], s[n:]
        vhat[:] = model.R @ p + model.X @ q + model.a
        if dyb.shape[0]:
            dyb[k] = dy
        if violb.shape[0]:
            violb[k] = max(0.0, float(np.max(vhat - cfg.v_hi)), float(np.max(cfg.v_lo - vhat)))
        if lagb.shape[0]:
            lagb[k] = regularized_lagrangian(np.concatenate([p, q]), mu, model, agents, cfg)
        if kktb.shape[0]:
            kktb[k] = _kkt(np.concatenate([p, q]), mu, vhat, model, agents, cfg)
        if trb.shape[0]:
            trb[k] = np.concatenate([p, q, mlo, mhi])
        if dy <= tol:
            return k + 1, True
    return m, False


# ---------------------------------------------------------------- contraction

def t_hat(y: np.ndarray, model: SensitivityModel, agents: AgentPool,
          cfg: OperatorConfig) -> np.ndarray:
    """One synchronous primal-dual step on the linear model.

    Every component of the output is computed from the same input ``y``.
    """
    n = model.n
    y = np.asarray(y, dtype=float)
    p, q = y[:n], y[n:2 * n]
    mu = DualState(y[2 * n:3 * n], y[3 * n:])
    v = model.R @ p + model.X @ q + model.a
    al, be = incentive_signals(mu, v, model, cfg)
    pn, qn = agents.primal_step(p, q, al, be, cfg.eps1)
    mn = dual_step(mu, v, cfg)
    return np.concatenate([pn, qn, mn.mu_lo, mn.mu_hi])


def _random_point(rng, agents: AgentPool, n: int, mu_scale: float) -> np.ndarray:
    span = np.maximum(agents.eta, 1e-3)
    p, q = agents.project(rng.uniform(-1.5, 1.5, n) * span, rng.uniform(-1.5, 1.5, n) * span)
    mu = rng.uniform(0.0, mu_scale, 2 * n) * (rng.random(2 * n) < 0.7)
    return np.concatenate([p, q, mu])


def empirical_contraction(model: SensitivityModel, agents: AgentPool, cfg: OperatorConfig,
                          n_pairs: int = 1000, seed: int = 0, mu_scale: float = 20.0) -> float:
    """Largest observed ratio ``||T(y) - T(y')|| / ||y - y'||`` in the certified norm.

    Half of the pairs are independent draws from the domain, half are small
    perturbations of a draw. One extra pair probes the direction the linear
    part stretches most, starting from a point whose multipliers are all
    positive and whose setpoints are interior.
    """
    rng = np.random.default_rng(seed)
    n = model.n
    best = 0.0
    for j in range(n_pairs):
        y = _random_point(rng, agents, n, mu_scale)
        if j % 2 == 0:
            y2 = _random_point(rng, agents, n, mu_scale)
        else:
            d = rng.standard_normal(4 * n) * 10.0 ** rng.uniform(-4, 0)
            y2 = y + d
            y2[:2 * n] = np.concatenate(agents.project(y2[:n], y2[n:2 * n]))
            y2[2 * n:] = np.maximum(y2[2 * n:], 0.0)
        den = weighted_norm(y - y2, cfg)
        if den == 0.0:
            continue
        num = weighted_norm(t_hat(y, model, agents, cfg) - t_hat(y2, model, agents, cfg), cfg)
        best = max(best, num / den)
    best = max(best, _probe_ratio(model, agents, cfg, mu_scale))
    return best


def _probe_ratio(model, agents, cfg, mu_scale):
    n = model.n
    Jt = scaled_jacobian(model, agents, cfg)
    _, _, vt = np.linalg.svd(Jt)
    d = np.sqrt(np.concatenate([np.ones(2 * n), np.full(2 * n, cfg.eps1 / cfg.eps2)]))
    direction = vt[0] / d
    # interior base point: strictly inside every device set, multipliers positive
    p0 = np.where(agents.kind == 1, 0.5 * (agents.lo + agents.hi), 0.5 * agents.hi)
    q0 = np.zeros(n)
    y = np.concatenate([p0, q0, np.full(2 * n, 0.5 * mu_scale)])
    best = 0.0
    for h in (1e-6, 1e-4):
        y2 = y + h * direction
        den = weighted_norm(y - y2, cfg)
        num = weighted_norm(t_hat(y, model, agents, cfg) - t_hat(y2, model, agents, cfg), cfg)
        if den > 0:
            best = max(best, num / den)
    return best


# ---------------------------------------------------------------- time-varying instances

@dataclass(frozen=True, eq=False)
class SlotInstance:
    """The optimization problem of one timeslot."""

    model: SensitivityModel
    agents: AgentPool
    cfg: OperatorConfig
    p_load: np.ndarray
    q_load: np.ndarray


def slot_instance(topology: FeederTopology, model: SensitivityModel, agents: AgentPool,
                  cfg: OperatorConfig, timeline, m: int,
                  gamma: float | None = None) -> SlotInstance:
    """Instance of slot ``m``: new offset, availabilities, weight and limits."""
    pl = np.asarray(timeline.p_load[m], dtype=float)
    ql = np.asarray(timeline.q_load[m], dtype=float)
    a = topology.v0 - model.R @ pl - model.X @ ql
    mod = SensitivityModel(model.R, model.X, a)
    pool = agents.with_availability(timeline.p_av[m])
    g = timeline.gamma[m] if gamma is None else gamma
    kw = {}
    if not np.isnan(g):
        kw["gamma"] = float(g)
    if timeline.v_lo is not None:
        kw["v_lo"] = np.where(np.isnan(timeline.v_lo[m]), cfg.v_lo, timeline.v_lo[m])
    if timeline.v_hi is not None:
        kw["v_hi"] = np.where(np.isnan(timeline.v_hi[m]), cfg.v_hi, timeline.v_hi[m])
    return SlotInstance(mod, pool, cfg.replace(**kw) if kw else cfg, pl, ql)


@dataclass(eq=False)
class OnlineTrace:
    """Every iteration of an online run, one row per (slot, iteration).

    Row ``m * K + (k - 1)`` holds the state after iteration ``k`` of slot
    ``m``: setpoints ``z(k)``, prices ``s(k)``, multipliers ``mu(k)`` and
    the voltage measured with ``z(k)`` in place.
    """

    K: int
    t: np.ndarray
    k: np.ndarray
    p: np.ndarray
    q: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    v: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    dy: np.ndarray
    model_error: np.ndarray
    plant_failed: np.ndarray
    slot_certified: np.ndarray
    diagnostics: RunDiagnostics
    context: dict = field(default_factory=dict, repr=False)

    @property
    def n_slots(self) -> int:
        return self.slot_certified.shape[0]

    @property
    def n(self) -> int:
        return self.p.shape[1]

    def rows_at_slot_end(self) -> np.ndarray:
        return np.arange(self.n_slots) * self.K + self.K - 1

    def y_final(self) -> np.ndarray:
        """``(p, q, mu_lo, mu_hi)`` at the end of every slot, shape ``(S, 4N)``."""
        r = self.rows_at_slot_end()
        return np.hstack([self.p[r], self.q[r], self.mu_lo[r], self.mu_hi[r]])

    def state(self, row: int) -> IterateState:
        return IterateState(np.concatenate([self.p[row], self.q[row]]),
                            DualState(self.mu_lo[row], self.mu_hi[row]),
                            np.concatenate([self.alpha[row], self.beta[row]]),
                            self.v[row].copy(), int(self.k[row]), int(self.t[row]))

    def slot_end_states(self) -> list:
        return [self.state(r) for r in self.rows_at_slot_end()]

    def vmax_per_slot(self) -> np.ndarray:
        return self.v[self.rows_at_slot_end()].max(axis=1)

    def columns(self) -> list:
        n = self.n
        cols = ["t", "k"]
        for name in ("p", "q", "alpha", "beta", "v", "mu_lo", "mu_hi"):
            cols += [f"{name}_{i}" for i in range(1, n + 1)]
        return cols + ["dy", "model_error", "max_violation", "plant_failed"]

    def table(self) -> np.ndarray:
        ctx = self.context
        vlo = ctx.get("v_lo_rows")
        vhi = ctx.get("v_hi_rows")
        viol = np.maximum(0.0, np.maximum((self.v - vhi).max(axis=1),
                                          (vlo - self.v).max(axis=1)))
        return np.column_stack([self.t, self.k, self.p, self.q, self.alpha, self.beta, self.v,
                                self.mu_lo, self.mu_hi, self.dy, self.model_error, viol,
                                self.plant_failed.astype(float)])


def online_run(topology: FeederTopology, model: SensitivityModel, agents: AgentPool, timeline,
               cfg: OperatorConfig, K: int = 1, *, plant: str = "nonlinear",
               init: IterateState | None = None, gamma: float | None = None,
               recertify: bool = True) -> OnlineTrace:
    """Run ``K`` primal-dual iterations per timeslot against a plant.

    Each slot starts from the previous slot's final iterate. Iteration
    ``k`` performs the device step with the current prices, updates the
    multipliers and prices from the voltage measured at the current
    setpoints, and then measures the voltage at the new setpoints.

    Parameters
    ----------
    plant : {"nonlinear", "linear"}
        ``"linear"`` measures voltages with the slot's linear model, which
        removes the model mismatch.
    init : IterateState, optional
        State before the first slot; defaults to the private optima of slot
        0 with zero multipliers and prices.
    gamma : float, optional
        Overrides the voltage-deviation weight of every slot.
    recertify : bool
        Re-run the step-size certificate whenever a slot's weight, limits
        or costs differ from the previous slot's and flag failures.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if plant not in ("nonlinear", "linear"):
        raise ValueError("plant must be 'nonlinear' or 'linear'")
    S = int(timeline.n_slots)
    if S < 1:
        raise ValueError("timeline has no slots")
    n = model.n
    t0 = time.perf_counter()
    fp = FeederPlant(topology)
    rows = S * K
    out = {name: np.empty((rows, n)) for name in ("p", "q", "alpha", "beta", "v", "mu_lo", "mu_hi",
                                                   "vlo", "vhi")}
    dy = np.empty(rows)
    merr = np.empty(rows)
    failed = np.zeros(rows, bool)
    slot_ok = np.ones(S, bool)
    last_key = None
    last_ok = True
    pool = agents

    inst0 = slot_instance(topology, model, pool, cfg, timeline, 0, gamma)
    if init is None:
        st = initial_state(inst0.model, inst0.agents, inst0.cfg)
        p, q = st.p.copy(), st.q.copy()
        mu = st.mu
        s = st.s.copy()
    else:
        p, q = init.p.copy(), init.q.copy()
        mu = init.mu
        s = init.s.copy()
    v_prev = None

    def measure(inst, pp, qq):
        lin = inst.model.R @ pp + inst.model.X @ qq + inst.model.a
        if plant == "linear":
            return lin, 0.0, False
        try:
            v = fp.solve(InjectionVector(pp, qq), inst.p_load, inst.q_load).v_nodes
        except NoConvergence as exc:
            log.warning("plant did not converge (%s); keeping last voltage", exc)
            return None, float("nan"), True
        return v, float(np.max(np.abs(v - lin))), False

    row = 0
    for m in range(S):
        inst = inst0 if m == 0 else slot_instance(topology, model, pool, cfg, timeline, m, gamma)
        c = inst.cfg
        if recertify:
            key = (c.gamma, c.eps1, c.eps2, c.phi, c.v_lo.tobytes(), c.v_hi.tobytes(),
                   inst.agents.cp.tobytes(), inst.agents.cq.tobytes())
            if key != last_key:
                last_ok = certify_step_sizes(inst.model, inst.agents, c).certified
                last_key = key
            slot_ok[m] = last_ok
        # measurement at the carried-over setpoints under this slot's conditions
        pi, qi = inst.agents.project(p, q)
        v, _, bad = measure(inst, pi, qi)
        if bad:
            v = v_prev if v_prev is not None else inst.model.a.copy()
        for k in range(1, K + 1):
            al, be = s[:n], s[n:]
            pn, qn = inst.agents.primal_step(p, q, al, be, c.eps1)
            mun = dual_step(mu, v, c)
            sn = _signals(mun, v, inst.model, c)
            step = float(np.sqrt(np.sum((pn - p) ** 2) + np.sum((qn - q) ** 2)
                                 + np.sum((mun.mu_lo - mu.mu_lo) ** 2)
                                 + np.sum((mun.mu_hi - mu.mu_hi) ** 2)))
            p, q, mu, s = pn, qn, mun, sn
            vn, err, bad = measure(inst, p, q)
            if bad:
                vn = v
            v_prev = v = vn
            out["p"][row] = p
            out["q"][row] = q
            out["alpha"][row] = s[:n]
            out["beta"][row] = s[n:]
            out["v"][row] = v
            out["mu_lo"][row] = mu.mu_lo
            out["mu_hi"][row] = mu.mu_hi
            out["vlo"][row] = c.v_lo
            out["vhi"][row] = c.v_hi
            dy[row] = step
            merr[row] = err
            failed[row] = bad
            row += 1
        pool = pool.after_slot(p, timeline.h)

    tt = np.repeat(np.arange(S), K)
    kk = np.tile(np.arange(1, K + 1), S)
    viol = np.maximum(0.0, np.maximum((out["v"] - out["vhi"]).max(axis=1),
                                      (out["vlo"] - out["v"]).max(axis=1)))
    diag = RunDiagnostics(dy=dy, violation=viol, iterations=rows, converged=True,
                          certified=bool(slot_ok.all()))
    diag.e = float(np.nanmax(merr)) if np.any(np.isfinite(merr)) else float("nan")
    diag.wall_time = time.perf_counter() - t0
    ctx = dict(topology=topology, model=model, agents=agents, timeline=timeline, cfg=cfg,
               gamma=gamma, plant=plant, v_lo_rows=out["vlo"], v_hi_rows=out["vhi"])
    return OnlineTrace(K, tt, kk, out["p"], out["q"], out["alpha"], out["beta"], out["v"],
                       out["mu_lo"], out["mu_hi"], dy, merr, failed, slot_ok, diag, ctx)


def uncontrolled_voltages(topology: FeederTopology, model: SensitivityModel, agents: AgentPool,
                          timeline, slots: Sequence[int] | None = None) -> np.ndarray:
    """Voltages with every device at its private optimum, one row per slot."""
    fp = FeederPlant(topology)
    idx = range(timeline.n_slots) if slots is None else slots
    rows = []
    for m in idx:
        pool = agents.with_availability(timeline.p_av[m])
        p, q = pool.uncontrolled()
        rows.append(fp.solve(InjectionVector(p, q), timeline.p_load[m], timeline.q_load[m]).v_nodes)
    return np.array(rows)


# ---------------------------------------------------------------- tracking analysis

def mismatch_vector(model: SensitivityModel, cfg: OperatorConfig, e: float) -> np.ndarray:
    """Worst-case gap between one nonlinear-plant step and one linear step.

    Ordered like ``y``: setpoint entries first, then one ``eps2 * e`` per
    multiplier.
    """
    n = model.n
    w = (cfg.gamma + cfg.eps2) * e
    d1 = cfg.eps1 * w * model.R.sum(axis=1)
    d2 = cfg.eps1 * w * model.X.sum(axis=1)
    return np.concatenate([d1, d2, np.full(2 * n, cfg.eps2 * e)])


def slot_oracles(trace: OnlineTrace, slots: Sequence[int] | None = None,
                 stride: int = 1) -> dict:
    """Oracle saddle points of the linear-model problem for sampled slots.

    Slots with identical data reuse one solve.
    """
    ctx = trace.context
    tl = ctx["timeline"]
    idx = list(range(0, tl.n_slots, stride)) if slots is None else list(slots)
    cache = {}
    out = {}
    for m in idx:
        inst = slot_instance(ctx["topology"], ctx["model"], ctx["agents"], ctx["cfg"], tl, m,
                             ctx["gamma"])
        key = (inst.model.a.tobytes(), inst.agents.hi.tobytes(), inst.agents.lo.tobytes(),
               inst.agents.pref.tobytes(), inst.cfg.gamma, inst.cfg.v_lo.tobytes(),
               inst.cfg.v_hi.tobytes())
        if key not in cache:
            cache[key] = saddle_point(inst.model, inst.agents, inst.cfg)
        out[m] = cache[key]
    return out


def tracking_bound_report(trace: OnlineTrace, oracle_per_slot: Mapping[int, OracleSolution], *,
                          window: float = 0.8, delta_hat: float | None = None,
                          n_pairs: int = 1000, seed: int = 0) -> RunDiagnostics:
    """Compare the online tracking error with its theoretical cap.

    The left side is the largest distance between a slot's final iterate
    and that slot's oracle over the trailing ``window`` fraction of sampled
    slots. The right side is ``|rho|/(1 - D) + sigma D^K/(1 - D^K)`` with
    ``D`` the empirical contraction modulus, ``sigma`` the largest oracle
    move between consecutive sampled slots (divided by their spacing) and
    ``rho`` built from the largest observed model error. All distances use
    the certified norm.
    """
    ctx = trace.context
    cfg0 = ctx["cfg"]
    slots = sorted(oracle_per_slot)
    if not slots:
        raise ValueError("no oracle solutions given")
    yK = trace.y_final()
    insts = {m: slot_instance(ctx["topology"], ctx["model"], ctx["agents"], cfg0,
                              ctx["timeline"], m, ctx["gamma"]) for m in slots}
    if delta_hat is None:
        probe = sorted({slots[0], slots[len(slots) // 2], slots[-1]})
        delta_hat = max(empirical_contraction(insts[m].model, insts[m].agents, insts[m].cfg,
                                              n_pairs, seed) for m in probe)
    e = trace.diagnostics.e
    e = 0.0 if not np.isfinite(e) else e
    rho = max(weighted_norm(mismatch_vector(insts[m].model, insts[m].cfg, e), insts[m].cfg)
              for m in slots)
    sigma = 0.0
    for a_, b_ in zip(slots[:-1], slots[1:]):
        d = weighted_norm(oracle_per_slot[b_].y - oracle_per_slot[a_].y, insts[b_].cfg)
        sigma = max(sigma, d / (b_ - a_))
    first = int(np.floor((1.0 - window) * trace.n_slots))
    tail = [m for m in slots if m >= first]
    lhs = max(weighted_norm(yK[m] - oracle_per_slot[m].y, insts[m].cfg) for m in tail)
    K = trace.K
    D = float(delta_hat)
    if D < 1.0:
        rhs = rho / (1.0 - D) + (sigma * D ** K / (1.0 - D ** K) if sigma > 0 else 0.0)
    else:
        rhs = float("inf")
    diag = RunDiagnostics(dy=trace.dy, violation=trace.diagnostics.violation,
                          iterations=trace.diagnostics.iterations, converged=True,
                          certified=trace.diagnostics.certified)
    diag.delta_hat = D
    diag.e = e
    diag.rho_hat = rho
    diag.sigma_hat = sigma
    diag.bound_lhs = lhs
    diag.bound_rhs = rhs
    diag.slack = rhs - lhs
    diag.wall_time = trace.diagnostics.wall_time
    return diag


def regularization_gap_report(instance, phi_list: Sequence[float],
                              phi_zero: float = 1e-12) -> list:
    """Distance between regularized and unregularized optima against its bound.

    ``instance`` is a ``(model, agents, cfg)`` triple or a :class:`SlotInstance`.
    Each row reports ``gap = ||z_phi - z0||^2`` and
    ``bound = phi / (2 c) * (||mu0||^2 - ||mu_phi||^2)`` where ``c`` is the
    strong-monotonicity constant of the device costs.
    """
    if isinstance(instance, SlotInstance):
        model, agents, cfg = instance.model, instance.agents, instance.cfg
    else:
        model, agents, cfg = instance
    if model.n > 6:
        raise ValueError("regularization report is limited to feeders with at most 6 buses")
    ref = saddle_point(model, agents, cfg, phi=phi_zero)
    c = agents.strong_monotonicity
    rows = []
    for phi in phi_list:
        sol = saddle_point(model, agents, cfg, phi=phi)
        gap = float(np.sum((sol.z_star - ref.z_star) ** 2))
        bound = phi / (2.0 * c) * (float(np.sum(ref.mu_star.stacked ** 2))
                                   - float(np.sum(sol.mu_star.stacked ** 2)))
        rows.append({"phi": float(phi), "gap": gap, "bound": bound, "slack": bound - gap,
                     "holds": bool(gap <= bound + 1e-10),
                     "mu_norm_sq": float(np.sum(ref.mu_star.stacked ** 2)),
                     "mu_phi_norm_sq": float(np.sum(sol.mu_star.stacked ** 2))})
    return rows


# ---------------------------------------------------------------- step-size scale

def free_coordinates(agents: AgentPool, z: np.ndarray, h: float = 1e-7) -> np.ndarray:
    """Setpoint coordinates that can move both ways without leaving their set."""
    n = agents.n
    z = np.asarray(z, dtype=float)
    free = np.zeros(2 * n, bool)
    for j in range(2 * n):
        ok = True
        for sgn in (1.0, -1.0):
            w = z.copy()
            w[j] += sgn * h
            pp, qq = agents.project(w[:n], w[n:])
            ok &= bool(np.max(np.abs(np.concatenate([pp, qq]) - w)) <= 1e-3 * h)
        free[j] = ok
    return free


def critical_step(model: SensitivityModel, agents: AgentPool, cfg: OperatorConfig,
                  solution: OracleSolution | None = None, lo: float = 1e-9, hi: float = 1.0,
                  num: int = 721) -> float:
    """Primal step that minimizes the local convergence rate near the optimum.

    The map is linearized on the active set of the oracle solution and its
    spectral radius is scanned over a logarithmic grid of ``eps1`` with
    ``eps2`` fixed. Beyond the returned value, larger primal steps stop
    speeding up the slowest mode.
    """
    sol = solution if solution is not None else saddle_point(model, agents, cfg)
    free = free_coordinates(agents, sol.z_star)
    act_hi = sol.mu_star.mu_hi > 0
    act_lo = sol.mu_star.mu_lo > 0
    grid = np.logspace(np.log10(lo), np.log10(hi), num)
    rates = [local_rate(model, agents, cfg.replace(eps1=float(e)), act_hi, act_lo, free)
             for e in grid]
    return float(grid[int(np.argmin(rates))])
