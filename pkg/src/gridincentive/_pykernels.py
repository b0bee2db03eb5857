"""Pure-Python/numpy twins of the compiled kernels in ``_ckernels.pyx``.

Used when the extension is not built or when ``GRIDINCENTIVE_PUREPY=1``.
Signatures and in-place semantics match the compiled module exactly.
"""
import math

import numpy as np

BACKEND = "python"

SET_DISK = 0
SET_LINE = 1


def project_point(p, q, lo, hi, eta, kind):
    if kind == SET_LINE:
        return min(max(p, lo), hi), 0.0
    pc = min(max(p, lo), hi)
    if pc * pc + q * q <= eta * eta:
        return pc, q
    n = math.hypot(p, q)
    if n > eta:
        pd, qd = p * eta / n, q * eta / n
    else:
        pd, qd = p, q
    if lo <= pd <= hi:
        return pd, qd
    # both the disk and one p-bound are active
    best, out = math.inf, (pc, 0.0)
    for b in (lo, hi):
        if abs(b) <= eta:
            s = math.sqrt(eta * eta - b * b)
            qq = min(max(q, -s), s)
            d = (b - p) ** 2 + (qq - q) ** 2
            if d < best:
                best, out = d, (b, qq)
    return out


def _project_vec(p, q, kind, lo, hi, eta):
    """Vectorised form of :func:`project_point` over agents."""
    line = kind == SET_LINE
    pc = np.clip(p, lo, hi)
    out_p = pc.copy()
    out_q = np.where(line, 0.0, q)
    done = line | (pc * pc + q * q <= eta * eta)
    if done.all():
        return out_p, out_q
    n = np.hypot(p, q)
    scale = np.where(n > eta, eta / np.where(n > 0, n, 1.0), 1.0)
    pd, qd = p * scale, q * scale
    disk_ok = ~done & (lo <= pd) & (pd <= hi)
    out_p = np.where(disk_ok, pd, out_p)
    out_q = np.where(disk_ok, qd, out_q)
    done = done | disk_ok
    if done.all():
        return out_p, out_q
    for i in np.flatnonzero(~done):
        out_p[i], out_q[i] = project_point(p[i], q[i], lo[i], hi[i], eta[i], kind[i])
    return out_p, out_q


def project_all(p, q, kind, lo, hi, eta, out_p, out_q):
    pp, qq = _project_vec(np.asarray(p), np.asarray(q), np.asarray(kind),
                          np.asarray(lo), np.asarray(hi), np.asarray(eta))
    out_p[:] = pp
    out_q[:] = qq


def primal_step_all(p, q, alpha, beta, eps1, kind, lo, hi, eta, cp, cq, pref, out_p, out_q):
    gp = -2.0 * cp * (pref - p) - alpha
    gq = 2.0 * cq * q - beta
    project_all(p - eps1 * gp, q - eps1 * gq, kind, lo, hi, eta, out_p, out_q)


def kkt_residual(p, q, mlo, mhi, vhat, kind, lo, hi, eta, cp, cq, pref, R, X,
                 vlo, vhi, vnom, gamma, phi):
    w = gamma * (vhat - vnom) + mhi - mlo
    gp = -2.0 * cp * (pref - p) + R @ w
    gq = 2.0 * cq * q + X @ w
    pp, qq = _project_vec(p - gp, q - gq, kind, lo, hi, eta)
    glo = vlo - vhat - phi * mlo
    ghi = vhat - vhi - phi * mhi
    parts = [
        np.abs(p - pp), np.abs(q - qq),
        np.abs(mlo - np.maximum(mlo + glo, 0.0)), np.abs(mhi - np.maximum(mhi + ghi, 0.0)),
        glo, ghi, np.abs(mlo * glo), np.abs(mhi * ghi), -mlo, -mhi,
    ]
    return max(0.0, max(float(np.max(v)) for v in parts))


def _lagrangian(p, q, mlo, mhi, vhat, cp, cq, pref, vlo, vhi, vnom, gamma, phi):
    val = np.sum(cp * (pref - p) ** 2 + cq * q * q)
    val += 0.5 * gamma * np.sum((vhat - vnom) ** 2)
    val += mlo @ (vlo - vhat) + mhi @ (vhat - vhi)
    val -= 0.5 * phi * (mlo @ mlo + mhi @ mhi)
    return float(val)


def offline_iterate(p, q, mlo, mhi, alpha, beta, vhat, kind, lo, hi, eta, cp, cq, pref,
                    R, X, a, vlo, vhi, vnom, gamma, phi, eps1, eps2, max_iter, tol,
                    dy_hist, lag_hist, kkt_hist, viol_hist, traj):
    n = p.shape[0]
    rec = dy_hist.shape[0] >= max_iter
    rec_lag = lag_hist.shape[0] >= max_iter
    rec_kkt = kkt_hist.shape[0] >= max_iter
    rec_viol = viol_hist.shape[0] >= max_iter
    rec_traj = traj.shape[0] >= max_iter
    pn = np.empty(n)
    qn = np.empty(n)
    done, converged = 0, False
    for k in range(max_iter):
        primal_step_all(p, q, alpha, beta, eps1, kind, lo, hi, eta, cp, cq, pref, pn, qn)
        nlo = np.maximum(mlo + eps2 * (vlo - vhat - phi * mlo), 0.0)
        nhi = np.maximum(mhi + eps2 * (vhat - vhi - phi * mhi), 0.0)
        dy = math.sqrt(float(np.sum((nlo - mlo) ** 2 + (nhi - mhi) ** 2
                                    + (pn - p) ** 2 + (qn - q) ** 2)))
        mlo[:] = nlo
        mhi[:] = nhi
        w = nlo - nhi - gamma * (vhat - vnom)
        alpha[:] = R @ w
        beta[:] = X @ w
        p[:] = pn
        q[:] = qn
        vhat[:] = R @ p + X @ q + a
        done = k + 1
        if rec:
            dy_hist[k] = dy
        if rec_viol:
            viol_hist[k] = max(0.0, float(np.max(vhat - vhi)), float(np.max(vlo - vhat)))
        if rec_lag:
            lag_hist[k] = _lagrangian(p, q, mlo, mhi, vhat, cp, cq, pref, vlo, vhi,
                                      vnom, gamma, phi)
        if rec_kkt:
            kkt_hist[k] = kkt_residual(p, q, mlo, mhi, vhat, kind, lo, hi, eta, cp, cq,
                                       pref, R, X, vlo, vhi, vnom, gamma, phi)
        if rec_traj:
            traj[k, :n] = p
            traj[k, n:2 * n] = q
            traj[k, 2 * n:3 * n] = mlo
            traj[k, 3 * n:] = mhi
        if dy <= tol:
            converged = True
            break
    return done, converged


def sweep(frm, to, r, x, p, q, v0, tol, max_iter, P, Q, L, v):
    nb = p.shape[0]
    ne = r.shape[0]
    v2 = np.empty(nb)
    res = math.inf
    done = 0
    z2 = r * r + x * x
    for it in range(max_iter):
        done = it + 1
        accP = np.zeros(nb)
        accQ = np.zeros(nb)
        for e in range(ne - 1, -1, -1):
            j = to[e]
            P[e] = -p[j] + accP[j] + r[e] * L[e]
            Q[e] = -q[j] + accQ[j] + x[e] * L[e]
            accP[frm[e]] += P[e]
            accQ[frm[e]] += Q[e]
        v2[0] = v0 * v0
        collapsed = False
        for e in range(ne):
            i, j = frm[e], to[e]
            v2[j] = v2[i] - 2.0 * (r[e] * P[e] + x[e] * Q[e]) + z2[e] * L[e]
            if v2[j] <= 0.0:
                collapsed = True
                break
        if collapsed:
            res = math.inf
            break
        L[:] = (P * P + Q * Q) / v2[frm]
        accP[:] = 0.0
        accQ[:] = 0.0
        res = 0.0
        for e in range(ne - 1, -1, -1):
            j = to[e]
            res = max(res, abs(P[e] - (-p[j] + accP[j] + r[e] * L[e])),
                      abs(Q[e] - (-q[j] + accQ[j] + x[e] * L[e])))
            accP[frm[e]] += P[e]
            accQ[frm[e]] += Q[e]
        drop = v2[frm] - 2.0 * (r * P + x * Q) + z2 * L
        res = max(res, float(np.max(np.abs(v2[to] - drop), initial=0.0)),
                  float(np.max(np.abs(L * v2[frm] - P * P - Q * Q), initial=0.0)))
        if res <= tol:
            break
    v[:] = np.sqrt(np.maximum(v2, 0.0))
    return done, res
