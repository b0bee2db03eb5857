"""Network-operator logic: dual updates, incentive prices, KKT checks and
step-size certification.

The operator sees voltages, the sensitivity model and setpoints. Device
curvature enters only through :meth:`AgentPool.hessian_diag`, which the
certificate needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .acpf import DimensionMismatch
from .feeder import SensitivityModel


@dataclass(frozen=True, eq=False)
class DualState:
    """Multipliers of the lower and upper voltage limits."""

    mu_lo: np.ndarray
    mu_hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.mu_lo, dtype=float)
        hi = np.asarray(self.mu_hi, dtype=float)
        if lo.shape != hi.shape:
            raise DimensionMismatch("mu_lo and mu_hi differ in shape")
        if np.any(lo < 0) or np.any(hi < 0):
            raise ValueError("multipliers must be nonnegative")
        object.__setattr__(self, "mu_lo", lo)
        object.__setattr__(self, "mu_hi", hi)

    @classmethod
    def zeros(cls, n: int) -> "DualState":
        return cls(np.zeros(n), np.zeros(n))

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.mu_lo, self.mu_hi])

    @property
    def diff(self) -> np.ndarray:
        """``mu_lo - mu_hi``, the composite price on voltage."""
        return self.mu_lo - self.mu_hi


@dataclass(frozen=True, eq=False)
class OperatorConfig:
    """Limits, weights and step sizes of the primal-dual scheme."""

    v_lo: np.ndarray
    v_hi: np.ndarray
    gamma: float = 0.0
    phi: float = 1e-4
    v_nom: float = 1.0
    eps1: float = 0.01
    eps2: float = 0.01

    def __post_init__(self):
        lo = np.asarray(self.v_lo, dtype=float)
        hi = np.asarray(self.v_hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("v_lo and v_hi must be equal-length vectors")
        if np.any(lo >= hi):
            raise ValueError("need v_lo < v_hi at every bus")
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("step sizes must be nonnegative")
        object.__setattr__(self, "v_lo", lo)
        object.__setattr__(self, "v_hi", hi)

    @classmethod
    def uniform(cls, n: int, v_lo: float = 0.95, v_hi: float = 1.05, **kw) -> "OperatorConfig":
        return cls(np.full(n, float(v_lo)), np.full(n, float(v_hi)), **kw)

    @property
    def n(self) -> int:
        return self.v_lo.shape[0]

    def replace(self, **kw) -> "OperatorConfig":
        args = dict(v_lo=self.v_lo, v_hi=self.v_hi, gamma=self.gamma, phi=self.phi,
                    v_nom=self.v_nom, eps1=self.eps1, eps2=self.eps2)
        args.update(kw)
        return OperatorConfig(**args)


def network_objective(v: np.ndarray, v_nom: float = 1.0) -> float:
    """Half the squared deviation from nominal voltage."""
    d = np.asarray(v, dtype=float) - v_nom
    return 0.5 * float(d @ d)


def network_gradient(v: np.ndarray, v_nom: float = 1.0) -> np.ndarray:
    return np.asarray(v, dtype=float) - v_nom


def dual_step(mu: DualState, v: np.ndarray, cfg: OperatorConfig) -> DualState:
    """Projected dual ascent on the regularized Lagrangian."""
    v = np.asarray(v, dtype=float)
    if v.shape != mu.mu_lo.shape:
        raise DimensionMismatch("voltage and multiplier sizes differ")
    lo = np.maximum(mu.mu_lo + cfg.eps2 * (cfg.v_lo - v - cfg.phi * mu.mu_lo), 0.0)
    hi = np.maximum(mu.mu_hi + cfg.eps2 * (v - cfg.v_hi - cfg.phi * mu.mu_hi), 0.0)
    return DualState(lo, hi)


def incentive_signals(mu: DualState, v: np.ndarray, model: SensitivityModel,
                      cfg: OperatorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus prices ``(alpha, beta)`` on active and reactive power."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != model.n or mu.mu_lo.shape[0] != model.n:
        raise DimensionMismatch("signal inputs do not match the model size")
    w = mu.diff - cfg.gamma * network_gradient(v, cfg.v_nom)
    return model.R @ w, model.X @ w


def _split(z: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    if z.shape != (2 * n,):
        raise DimensionMismatch(f"expected stacked setpoints of length {2 * n}")
    return np.ascontiguousarray(z[:n]), np.ascontiguousarray(z[n:])


def kkt_residual(z: np.ndarray, mu: DualState, v_hat: np.ndarray, model: SensitivityModel,
                 agents, cfg: OperatorConfig) -> float:
    """Max-norm residual of the regularized optimality system.

    Stationarity is measured by the projected-gradient residual, the
    multipliers by the natural residual; feasibility, complementarity and
    sign conditions are included as well. With ``phi`` tiny this is the
    unregularized KKT system.
    """
    p, q = _split(z, model.n)
    return float(kernels.kkt_residual(
        p, q, np.ascontiguousarray(mu.mu_lo), np.ascontiguousarray(mu.mu_hi),
        np.ascontiguousarray(v_hat, dtype=float), agents.kind, agents.lo, agents.hi,
        agents.eta, agents.cp, agents.cq, agents.pref, model.R, model.X, cfg.v_lo, cfg.v_hi,
        cfg.v_nom, cfg.gamma, cfg.phi))


def regularized_lagrangian(z: np.ndarray, mu: DualState, model: SensitivityModel, agents,
                           cfg: OperatorConfig) -> float:
    p, q = _split(z, model.n)
    v = model.R @ p + model.X @ q + model.a
    val = agents.cost(p, q) + cfg.gamma * network_objective(v, cfg.v_nom)
    val += mu.mu_lo @ (cfg.v_lo - v) + mu.mu_hi @ (v - cfg.v_hi)
    return float(val - 0.5 * cfg.phi * (mu.mu_lo @ mu.mu_lo + mu.mu_hi @ mu.mu_hi))


# ---------------------------------------------------------------- certification

def jacobian(model: SensitivityModel, agents, cfg: OperatorConfig) -> np.ndarray:
    """Jacobian of the unprojected primal-dual map in ``y = (p, q, mu_lo, mu_hi)``."""
    n = model.n
    M = model.M
    G = np.vstack([-M, M])
    hp, hq = agents.hessian_diag
    H = np.diag(np.concatenate([hp, hq])) + cfg.gamma * (M.T @ M)
    J = np.empty((4 * n, 4 * n))
    J[:2 * n, :2 * n] = np.eye(2 * n) - cfg.eps1 * H
    J[:2 * n, 2 * n:] = -cfg.eps1 * G.T
    J[2 * n:, :2 * n] = cfg.eps2 * G
    J[2 * n:, 2 * n:] = (1.0 - cfg.eps2 * cfg.phi) * np.eye(2 * n)
    return J


def metric_weights(n: int, cfg: OperatorConfig) -> np.ndarray:
    """Diagonal of the norm in which the map is certified.

    Setpoints get weight 1 and multipliers ``eps1 / eps2``; projections onto
    per-device sets and the nonnegative orthant stay nonexpansive in it.
    """
    ratio = cfg.eps1 / cfg.eps2 if cfg.eps2 > 0 else 1.0
    return np.concatenate([np.ones(2 * n), np.full(2 * n, ratio)])


def weighted_norm(y: np.ndarray, cfg: OperatorConfig) -> float:
    y = np.asarray(y, dtype=float)
    w = metric_weights(y.shape[0] // 4, cfg)
    return float(np.sqrt(np.sum(w * y * y)))


def scaled_jacobian(model: SensitivityModel, agents, cfg: OperatorConfig) -> np.ndarray:
    d = np.sqrt(metric_weights(model.n, cfg))
    return d[:, None] * jacobian(model, agents, cfg) / d[None, :]


_COLUMN_IDS = ("p_column", "q_column", "mu_lo_column", "mu_hi_column")


@dataclass(frozen=True)
class Certificate:
    """Outcome of :func:`certify_step_sizes`.

    ``modulus`` bounds the Lipschitz constant of the primal-dual map in the
    weighted norm. ``violated`` lists ``(bus, condition)`` pairs; bus 0
    marks network-wide conditions. ``screen`` holds the failed per-bus
    row-sum inequalities, an informational test that is neither necessary
    nor sufficient here.
    """

    certified: bool
    modulus: float
    violated: tuple = ()
    screen: tuple = ()
    row_sum: float = float("nan")
    weights: np.ndarray = field(default=None, repr=False, compare=False)


def row_sum_screen(model: SensitivityModel, agents, cfg: OperatorConfig) -> list:
    """Per-bus row-sum inequalities on the plain Jacobian; returns failures."""
    e1, e2, phi = cfg.eps1, cfg.eps2, cfg.phi
    hp, hq = agents.hessian_diag
    sr = model.R.sum(axis=1)
    sx = model.X.sum(axis=1)
    fails = []
    # curvature of C_i + gamma D along p_i and q_i, D seen through the linear model
    dd = cfg.gamma * np.einsum("ij,ij->j", model.M, model.M)
    n = model.n
    for i in range(n):
        a = e1 * (hp[i] + dd[i])
        b = e1 * (hq[i] + dd[n + i])
        checks = {
            "dual_step_r": e2 < 1.0 / (2.0 * sr[i]),
            "primal_p_dominance": a > 2.0 * e2 * sr[i],
            "primal_p_upper": a + 2.0 * e2 * sr[i] < 2.0,
            "dual_step_x": e2 < 1.0 / (2.0 * sx[i]),
            "primal_q_dominance": b > 2.0 * e2 * sx[i],
            "primal_q_upper": b + 2.0 * e2 * sx[i] < 2.0,
            "primal_step_rx": e1 < 1.0 / (sr[i] + sx[i]),
            "mu_dominance": e1 * (sr[i] + sx[i]) > e2 * phi,
            "mu_upper": e1 * (sr[i] + sx[i]) + e2 * phi < 2.0,
        }
        fails.extend((i + 1, k) for k, ok in checks.items() if not ok)
    return fails


def certify_step_sizes(model: SensitivityModel, agents, cfg: OperatorConfig) -> Certificate:
    """Decide whether the primal-dual map is a contraction.

    The map is affine up to projections, so its Lipschitz constant in the
    weighted norm is at most the spectral norm of the scaled Jacobian.
    Certification requires that norm below one. Per-bus column norms below
    one are necessary conditions and are reported individually.
    """
    n = model.n
    violated = []
    if not cfg.eps1 > 0:
        violated.append((0, "eps1_positive"))
    if not cfg.eps2 > 0:
        violated.append((0, "eps2_positive"))
    Jt = scaled_jacobian(model, agents, cfg)
    col = np.linalg.norm(Jt, axis=0)
    for blk, name in enumerate(_COLUMN_IDS):
        for i in range(n):
            if not col[blk * n + i] < 1.0:
                violated.append((i + 1, name))
    modulus = float(np.linalg.norm(Jt, 2))
    if not modulus < 1.0:
        violated.append((0, "contraction"))
    row_sum = float(np.max(np.sum(np.abs(jacobian(model, agents, cfg)), axis=1)))
    return Certificate(not violated, modulus, tuple(violated),
                       tuple(row_sum_screen(model, agents, cfg)), row_sum,
                       metric_weights(n, cfg))


def local_rate(model: SensitivityModel, agents, cfg: OperatorConfig, active_hi: np.ndarray,
               active_lo: np.ndarray | None = None, free: np.ndarray | None = None) -> float:
    """Spectral radius of the primal-dual map linearized on an active set.

    ``active_hi``/``active_lo`` flag binding voltage limits; ``free`` flags
    setpoint coordinates (length 2N) not held by their own set. One minus
    this number is the asymptotic per-iteration contraction.
    """
    n = model.n
    free = np.ones(2 * n, bool) if free is None else np.asarray(free, bool)
    active_lo = np.zeros(n, bool) if active_lo is None else np.asarray(active_lo, bool)
    keep = np.concatenate([free, np.asarray(active_lo, bool), np.asarray(active_hi, bool)])
    J = jacobian(model, agents, cfg)[np.ix_(keep, keep)]
    return float(np.max(np.abs(np.linalg.eigvals(J))))
