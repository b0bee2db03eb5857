# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Mirrors :mod:`gridincentive._pykernels` function by function; the two are
checked against each other in the test suite.
"""
from libc.math cimport sqrt, fabs, hypot, INFINITY

import numpy as np

cdef enum:
    SET_DISK = 0  # p-interval intersected with the disk of radius eta
    SET_LINE = 1  # p-interval, q pinned to zero

BACKEND = "cython"


cdef inline double _clamp(double v, double lo, double hi) noexcept nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef void _project(double p, double q, double lo, double hi, double eta, int kind,
                   double* po, double* qo) noexcept nogil:
    cdef double pc, n, pd, qd, best, b, s, qq, d
    cdef int side
    if kind == SET_LINE:
        po[0] = _clamp(p, lo, hi)
        qo[0] = 0.0
        return
    pc = _clamp(p, lo, hi)
    if pc * pc + q * q <= eta * eta:
        po[0] = pc
        qo[0] = q
        return
    n = hypot(p, q)
    if n > eta:
        pd = p * eta / n
        qd = q * eta / n
    else:
        pd = p
        qd = q
    if lo <= pd <= hi:
        po[0] = pd
        qo[0] = qd
        return
    # both the disk and one p-bound are active
    best = INFINITY
    po[0] = pc
    qo[0] = 0.0
    for side in range(2):
        b = lo if side == 0 else hi
        if fabs(b) <= eta:
            s = sqrt(eta * eta - b * b)
            qq = _clamp(q, -s, s)
            d = (b - p) * (b - p) + (qq - q) * (qq - q)
            if d < best:
                best = d
                po[0] = b
                qo[0] = qq


def project_point(double p, double q, double lo, double hi, double eta, int kind):
    cdef double po, qo
    _project(p, q, lo, hi, eta, kind, &po, &qo)
    return po, qo


def project_all(const double[::1] p, const double[::1] q, const int[::1] kind,
                const double[::1] lo, const double[::1] hi, const double[::1] eta,
                double[::1] out_p, double[::1] out_q):
    cdef Py_ssize_t i, n = p.shape[0]
    with nogil:
        for i in range(n):
            _project(p[i], q[i], lo[i], hi[i], eta[i], kind[i], &out_p[i], &out_q[i])


cdef inline void _primal(const double[::1] p, const double[::1] q,
                         const double[::1] alpha, const double[::1] beta, double eps1,
                         const int[::1] kind, const double[::1] lo, const double[::1] hi,
                         const double[::1] eta, const double[::1] cp, const double[::1] cq,
                         const double[::1] pref, double[::1] out_p, double[::1] out_q) noexcept nogil:
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gp, gq
    for i in range(n):
        gp = -2.0 * cp[i] * (pref[i] - p[i]) - alpha[i]
        gq = 2.0 * cq[i] * q[i] - beta[i]
        _project(p[i] - eps1 * gp, q[i] - eps1 * gq, lo[i], hi[i], eta[i], kind[i],
                 &out_p[i], &out_q[i])


def primal_step_all(const double[::1] p, const double[::1] q,
                    const double[::1] alpha, const double[::1] beta, double eps1,
                    const int[::1] kind, const double[::1] lo, const double[::1] hi,
                    const double[::1] eta, const double[::1] cp, const double[::1] cq,
                    const double[::1] pref, double[::1] out_p, double[::1] out_q):
    with nogil:
        _primal(p, q, alpha, beta, eps1, kind, lo, hi, eta, cp, cq, pref, out_p, out_q)


cdef inline void _affine(const double[:, ::1] R, const double[:, ::1] X,
                         const double[::1] a, const double[::1] p, const double[::1] q,
                         double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j, n = a.shape[0]
    cdef double acc
    for i in range(n):
        acc = a[i]
        for j in range(n):
            acc += R[i, j] * p[j] + X[i, j] * q[j]
        out[i] = acc


cdef double _kkt(const double[::1] p, const double[::1] q, const double[::1] mlo,
                 const double[::1] mhi, const double[::1] vhat,
                 const int[::1] kind, const double[::1] lo, const double[::1] hi,
                 const double[::1] eta, const double[::1] cp, const double[::1] cq,
                 const double[::1] pref, const double[:, ::1] R, const double[:, ::1] X,
                 const double[::1] vlo, const double[::1] vhi, double vnom,
                 double gamma, double phi, double[::1] w) noexcept nogil:
    cdef Py_ssize_t i, j, n = p.shape[0]
    cdef double res = 0.0, gp, gq, pp, qq, glo, ghi, t
    for i in range(n):
        w[i] = gamma * (vhat[i] - vnom) + mhi[i] - mlo[i]
    for i in range(n):
        gp = -2.0 * cp[i] * (pref[i] - p[i])
        gq = 2.0 * cq[i] * q[i]
        for j in range(n):
            gp += R[i, j] * w[j]
            gq += X[i, j] * w[j]
        _project(p[i] - gp, q[i] - gq, lo[i], hi[i], eta[i], kind[i], &pp, &qq)
        t = fabs(p[i] - pp)
        if t > res:
            res = t
        t = fabs(q[i] - qq)
        if t > res:
            res = t
        glo = vlo[i] - vhat[i] - phi * mlo[i]
        ghi = vhat[i] - vhi[i] - phi * mhi[i]
        t = fabs(mlo[i] - (mlo[i] + glo if mlo[i] + glo > 0.0 else 0.0))
        if t > res:
            res = t
        t = fabs(mhi[i] - (mhi[i] + ghi if mhi[i] + ghi > 0.0 else 0.0))
        if t > res:
            res = t
        if glo > res:
            res = glo
        if ghi > res:
            res = ghi
        t = fabs(mlo[i] * glo)
        if t > res:
            res = t
        t = fabs(mhi[i] * ghi)
        if t > res:
            res = t
        if -mlo[i] > res:
            res = -mlo[i]
        if -mhi[i] > res:
            res = -mhi[i]
    return res


def kkt_residual(const double[::1] p, const double[::1] q, const double[::1] mlo,
                 const double[::1] mhi, const double[::1] vhat,
                 const int[::1] kind, const double[::1] lo, const double[::1] hi,
                 const double[::1] eta, const double[::1] cp, const double[::1] cq,
                 const double[::1] pref, const double[:, ::1] R, const double[:, ::1] X,
                 const double[::1] vlo, const double[::1] vhi, double vnom,
                 double gamma, double phi):
    cdef double[::1] w = np.empty(p.shape[0])
    return _kkt(p, q, mlo, mhi, vhat, kind, lo, hi, eta, cp, cq, pref, R, X,
                vlo, vhi, vnom, gamma, phi, w)


cdef double _lagrangian(const double[::1] p, const double[::1] q, const double[::1] mlo,
                        const double[::1] mhi, const double[::1] vhat,
                        const double[::1] cp, const double[::1] cq, const double[::1] pref,
                        const double[::1] vlo, const double[::1] vhi, double vnom,
                        double gamma, double phi) noexcept nogil:
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double val = 0.0
    for i in range(n):
        val += cp[i] * (pref[i] - p[i]) * (pref[i] - p[i]) + cq[i] * q[i] * q[i]
        val += 0.5 * gamma * (vhat[i] - vnom) * (vhat[i] - vnom)
        val += mlo[i] * (vlo[i] - vhat[i]) + mhi[i] * (vhat[i] - vhi[i])
        val -= 0.5 * phi * (mlo[i] * mlo[i] + mhi[i] * mhi[i])
    return val


def offline_iterate(double[::1] p, double[::1] q, double[::1] mlo, double[::1] mhi,
                    double[::1] alpha, double[::1] beta, double[::1] vhat,
                    const int[::1] kind, const double[::1] lo, const double[::1] hi,
                    const double[::1] eta, const double[::1] cp, const double[::1] cq,
                    const double[::1] pref, const double[:, ::1] R, const double[:, ::1] X,
                    const double[::1] a, const double[::1] vlo, const double[::1] vhi,
                    double vnom, double gamma, double phi, double eps1, double eps2,
                    long max_iter, double tol,
                    double[::1] dy_hist, double[::1] lag_hist, double[::1] kkt_hist,
                    double[::1] viol_hist, double[:, ::1] traj):
    """Run up to ``max_iter`` synchronous agent/operator rounds in place.

    State ``(p, q, mlo, mhi, alpha, beta, vhat)`` enters at iteration k and
    leaves at the last iteration performed. History buffers shorter than
    ``max_iter`` switch the matching diagnostic off. Returns
    ``(iterations, converged)``.
    """
    cdef Py_ssize_t n = p.shape[0], i, j
    cdef long k, done = 0
    cdef bint converged = False
    cdef bint rec = dy_hist.shape[0] >= max_iter
    cdef bint rec_lag = lag_hist.shape[0] >= max_iter
    cdef bint rec_kkt = kkt_hist.shape[0] >= max_iter
    cdef bint rec_viol = viol_hist.shape[0] >= max_iter
    cdef bint rec_traj = traj.shape[0] >= max_iter
    cdef double[::1] pn = np.empty(n)
    cdef double[::1] qn = np.empty(n)
    cdef double[::1] w = np.empty(n)
    cdef double dy, t, nlo, nhi, viol
    with nogil:
        for k in range(max_iter):
            _primal(p, q, alpha, beta, eps1, kind, lo, hi, eta, cp, cq, pref, pn, qn)
            dy = 0.0
            for i in range(n):
                nlo = mlo[i] + eps2 * (vlo[i] - vhat[i] - phi * mlo[i])
                nhi = mhi[i] + eps2 * (vhat[i] - vhi[i] - phi * mhi[i])
                if nlo < 0.0:
                    nlo = 0.0
                if nhi < 0.0:
                    nhi = 0.0
                dy += (nlo - mlo[i]) * (nlo - mlo[i]) + (nhi - mhi[i]) * (nhi - mhi[i])
                dy += (pn[i] - p[i]) * (pn[i] - p[i]) + (qn[i] - q[i]) * (qn[i] - q[i])
                mlo[i] = nlo
                mhi[i] = nhi
                w[i] = nlo - nhi - gamma * (vhat[i] - vnom)
            for i in range(n):
                t = 0.0
                for j in range(n):
                    t += R[i, j] * w[j]
                alpha[i] = t
                t = 0.0
                for j in range(n):
                    t += X[i, j] * w[j]
                beta[i] = t
            for i in range(n):
                p[i] = pn[i]
                q[i] = qn[i]
            _affine(R, X, a, p, q, vhat)
            dy = sqrt(dy)
            done = k + 1
            if rec:
                dy_hist[k] = dy
            if rec_viol:
                viol = 0.0
                for i in range(n):
                    if vhat[i] - vhi[i] > viol:
                        viol = vhat[i] - vhi[i]
                    if vlo[i] - vhat[i] > viol:
                        viol = vlo[i] - vhat[i]
                viol_hist[k] = viol
            if rec_lag:
                lag_hist[k] = _lagrangian(p, q, mlo, mhi, vhat, cp, cq, pref, vlo, vhi,
                                          vnom, gamma, phi)
            if rec_kkt:
                kkt_hist[k] = _kkt(p, q, mlo, mhi, vhat, kind, lo, hi, eta, cp, cq, pref,
                                   R, X, vlo, vhi, vnom, gamma, phi, w)
            if rec_traj:
                for i in range(n):
                    traj[k, i] = p[i]
                    traj[k, n + i] = q[i]
                    traj[k, 2 * n + i] = mlo[i]
                    traj[k, 3 * n + i] = mhi[i]
            if dy <= tol:
                converged = True
                break
    return done, converged


def sweep(const long[::1] frm, const long[::1] to, const double[::1] r, const double[::1] x,
          const double[::1] p, const double[::1] q, double v0, double tol, long max_iter,
          double[::1] P, double[::1] Q, double[::1] L, double[::1] v):
    """Backward/forward sweep on a radial feeder; lines sorted root-first.

    ``L`` is used as the initial guess for squared currents. Returns
    ``(iterations, residual)``; a non-positive squared voltage yields
    residual ``inf``.
    """
    cdef Py_ssize_t nb = p.shape[0], ne = r.shape[0], e, i, j
    cdef long it, done = 0
    cdef double res = INFINITY, t, z2
    cdef double[::1] v2 = np.empty(nb)
    cdef double[::1] accP = np.empty(nb)
    cdef double[::1] accQ = np.empty(nb)
    with nogil:
        for it in range(max_iter):
            done = it + 1
            for i in range(nb):
                accP[i] = 0.0
                accQ[i] = 0.0
            for e in range(ne - 1, -1, -1):
                j = to[e]
                P[e] = -p[j] + accP[j] + r[e] * L[e]
                Q[e] = -q[j] + accQ[j] + x[e] * L[e]
                accP[frm[e]] += P[e]
                accQ[frm[e]] += Q[e]
            v2[0] = v0 * v0
            for e in range(ne):
                i = frm[e]
                j = to[e]
                z2 = r[e] * r[e] + x[e] * x[e]
                v2[j] = v2[i] - 2.0 * (r[e] * P[e] + x[e] * Q[e]) + z2 * L[e]
                if v2[j] <= 0.0:
                    res = INFINITY
                    break
            else:
                for e in range(ne):
                    L[e] = (P[e] * P[e] + Q[e] * Q[e]) / v2[frm[e]]
                res = 0.0
                for i in range(nb):
                    accP[i] = 0.0
                    accQ[i] = 0.0
                for e in range(ne - 1, -1, -1):
                    j = to[e]
                    t = fabs(P[e] - (-p[j] + accP[j] + r[e] * L[e]))
                    if t > res:
                        res = t
                    t = fabs(Q[e] - (-q[j] + accQ[j] + x[e] * L[e]))
                    if t > res:
                        res = t
                    accP[frm[e]] += P[e]
                    accQ[frm[e]] += Q[e]
                for e in range(ne):
                    i = frm[e]
                    j = to[e]
                    z2 = r[e] * r[e] + x[e] * x[e]
                    t = fabs(v2[j] - (v2[i] - 2.0 * (r[e] * P[e] + x[e] * Q[e]) + z2 * L[e]))
                    if t > res:
                        res = t
                    t = fabs(L[e] * v2[i] - P[e] * P[e] - Q[e] * Q[e])
                    if t > res:
                        res = t
                if res <= tol:
                    break
                continue
            break
        for i in range(nb):
            v[i] = sqrt(v2[i]) if v2[i] > 0.0 else 0.0
    return done, res
