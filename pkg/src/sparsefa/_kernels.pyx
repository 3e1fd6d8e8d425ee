# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled coordinate-descent kernel; mirrors ``_kernels_py``."""

from libc.math cimport fabs, sqrt, log, INFINITY

cimport numpy as cnp
import numpy as np

cnp.import_array()


cdef inline double _soft(double z, double r) nogil:
    if z > r:
        return z - r
    if z < -r:
        return z + r
    return 0.0


cdef inline double _scad_value(double t, double z, double scale, double rho, double gamma) nogil:
    cdef double pen
    if t <= rho:
        pen = rho * t
    elif t <= gamma * rho:
        pen = (2.0 * gamma * rho * t - t * t - rho * rho) / (2.0 * (gamma - 1.0))
    else:
        pen = 0.5 * rho * rho * (gamma + 1.0)
    return 0.5 * (t - z) * (t - z) + scale * pen


cdef double _threshold(double z, double scale, double rho, double gamma, int code) nogil:
    cdef double r, az, sgn, g, best_t, best_v, curv, t, v
    cdef double cands[4]
    cdef int nc, c
    if z == 0.0 or rho == 0.0 or scale == 0.0:
        return z
    r = scale * rho
    if code == 0:
        return _soft(z, r)
    az = fabs(z)
    sgn = 1.0 if z > 0 else -1.0
    if code == 1:
        g = gamma / scale
        if g > 1.0:
            if az > r * g:
                return z
            return _soft(z, r) / (1.0 - 1.0 / g)
        if az * az > r * r * g:
            return z
        return 0.0
    best_t = 0.0
    best_v = 0.5 * az * az
    cands[0] = min(max(az - r, 0.0), rho)
    cands[1] = max(az, gamma * rho)
    nc = 2
    curv = 1.0 - scale / (gamma - 1.0)
    if curv > 0:
        t = (az * (gamma - 1.0) - scale * gamma * rho) / (gamma - 1.0 - scale)
        cands[2] = min(max(t, rho), gamma * rho)
        nc = 3
    else:
        cands[2] = rho
        cands[3] = gamma * rho
        nc = 4
    for c in range(nc):
        t = cands[c]
        v = _scad_value(t, az, scale, rho, gamma)
        if v < best_v - 1e-15 * max(1.0, best_v):
            best_t = t
            best_v = v
    return sgn * best_t


def scaled_threshold(double z, double scale, double rho, double gamma, int code):
    return _threshold(z, scale, rho, gamma, code)


cdef double _pen_value(double t, double rho, double gamma, int code) noexcept nogil:
    t = fabs(t)
    if code == 0 or rho == 0.0:
        return rho * t
    if code == 1:
        if t < rho * gamma:
            return rho * (t - t * t / (2.0 * rho * gamma))
        return 0.5 * rho * rho * gamma
    if t <= rho:
        return rho * t
    if t <= gamma * rho:
        return (2.0 * gamma * rho * t - t * t - rho * rho) / (2.0 * (gamma - 1.0))
    return 0.5 * rho * rho * (gamma + 1.0)


cdef double _step(double z, double cur, double scale, double rho, double gamma, int code, int mode) noexcept nogil:
    cdef double lit, f_lit, f_cur
    if mode == 0:
        return _threshold(z, scale, rho, gamma, code)
    lit = _threshold(z, 1.0, scale * rho, gamma, code)
    if mode == 1 or code == 0:
        return lit
    f_lit = 0.5 * (lit - z) * (lit - z) + scale * _pen_value(lit, rho, gamma, code)
    f_cur = 0.5 * (cur - z) * (cur - z) + scale * _pen_value(cur, rho, gamma, code)
    if f_lit <= f_cur + 1e-14 * (fabs(f_cur) + 1.0):
        return lit
    return _threshold(z, scale, rho, gamma, code)


def coordinate_step(double z, double cur, double scale, double rho, double gamma, int code, int mode):
    return _step(z, cur, scale, rho, gamma, code, mode)


def cd_sweep(double[:, ::1] Lam, const double[:, ::1] B, const double[:, ::1] A,
             const double[::1] psi, double rho, double gamma, int code, int mode,
             double tol, int max_sweeps):
    cdef Py_ssize_t p = Lam.shape[0], m = Lam.shape[1]
    cdef Py_ssize_t i, j, k
    cdef int sweeps, worst = 0
    cdef double acc, z, new, d, delta, ajj, ps
    with nogil:
        for i in range(p):
            ps = psi[i]
            sweeps = 0
            while sweeps < max_sweeps:
                sweeps += 1
                delta = 0.0
                for j in range(m):
                    ajj = A[j, j]
                    acc = B[i, j]
                    for k in range(m):
                        if k != j:
                            acc = acc - A[j, k] * Lam[i, k]
                    z = acc / ajj
                    new = _step(z, Lam[i, j], ps / ajj, rho, gamma, code, mode)
                    d = fabs(new - Lam[i, j])
                    if d > delta:
                        delta = d
                    Lam[i, j] = new
                if delta < tol:
                    break
            if sweeps > worst:
                worst = sweeps
    return worst


# ---------------------------------------------------------------------------
# Full EM loop. All matrices are small (m x m) except S (p x p) and the p x m
# loading-shaped work arrays; every dense helper below works on m x m blocks.
# ---------------------------------------------------------------------------

cdef double LOG_2PI = 1.8378770664093453


cdef int _chol(double[:, ::1] a, double[:, ::1] l, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= l[j, k] * l[j, k]
        if not s > 0.0:
            return -1
        l[j, j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= l[i, k] * l[j, k]
            l[i, j] = s / l[j, j]
        for i in range(j):
            l[i, j] = 0.0
    return 0


cdef void _chol_inv(double[:, ::1] l, double[:, ::1] out, double[::1] y, Py_ssize_t n) noexcept nogil:
    """out = (L L^T)^{-1}."""
    cdef Py_ssize_t c, i, k
    cdef double s
    for c in range(n):
        for i in range(n):
            s = 1.0 if i == c else 0.0
            for k in range(i):
                s -= l[i, k] * y[k]
            y[i] = s / l[i, i]
        for i in range(n - 1, -1, -1):
            s = y[i]
            for k in range(i + 1, n):
                s -= l[k, i] * out[k, c]
            out[i, c] = s / l[i, i]


cdef class _Work:
    cdef public object Q, U, K, QSQ, Lphi, inner, Linner, Minv, B, A, T1, T2, y
    cdef public object P, Lp, Pinv, PinvA, G
    cdef public object x, g, xn, gn, d, H, s, yv, Hy

    def __init__(self, Py_ssize_t p, Py_ssize_t m):
        cdef Py_ssize_t q = m * (m - 1) // 2
        self.Q = np.zeros((p, m)); self.U = np.zeros((p, m)); self.B = np.zeros((p, m))
        for name in ("K", "QSQ", "Lphi", "inner", "Linner", "Minv", "A", "T1", "T2",
                     "P", "Lp", "Pinv", "PinvA", "G"):
            setattr(self, name, np.zeros((m, m)))
        self.y = np.zeros(m)
        for name in ("x", "g", "xn", "gn", "d", "s", "yv", "Hy"):
            setattr(self, name, np.zeros(max(q, 1)))
        self.H = np.zeros((max(q, 1), max(q, 1)))


cdef int _refresh(double[:, ::1] S, double[:, ::1] Lam, double[::1] psi, double[:, ::1] Phi,
                  double[:, ::1] Q, double[:, ::1] U, double[:, ::1] K, double[:, ::1] QSQ,
                  double[:, ::1] Lphi, double[:, ::1] inner, double[:, ::1] Linner,
                  double[:, ::1] T1, double[:, ::1] T2, double[::1] y,
                  double n_obs, double* loglik) noexcept nogil:
    """Cache Q = Psi^{-1} Lam, U = S Q, K, Q^T S Q and the capacitance factor; set loglik."""
    cdef Py_ssize_t p = Lam.shape[0], m = Lam.shape[1]
    cdef Py_ssize_t i, j, k, l
    cdef double s, q, logdet, tr
    for i in range(p):
        for j in range(m):
            Q[i, j] = Lam[i, j] / psi[i]
            U[i, j] = 0.0
    for k in range(p):
        for j in range(m):
            q = Q[k, j]
            if q != 0.0:
                for i in range(p):
                    U[i, j] += S[k, i] * q
    for j in range(m):
        for l in range(m):
            s = 0.0
            for i in range(p):
                s += Lam[i, j] * Q[i, l]
            K[j, l] = s
            s = 0.0
            for i in range(p):
                s += Q[i, j] * U[i, l]
            QSQ[j, l] = s
    if _chol(Phi, Lphi, m) != 0:
        return -2
    # inner = I + Lphi^T K Lphi ; T2 = Lphi^T QSQ Lphi
    for j in range(m):
        for l in range(m):
            s = 0.0
            q = 0.0
            for k in range(m):
                s += K[j, k] * Lphi[k, l]
                q += QSQ[j, k] * Lphi[k, l]
            T1[j, l] = s
            T2[j, l] = q
    for j in range(m):
        for l in range(m):
            s = 0.0
            q = 0.0
            for k in range(m):
                s += Lphi[k, j] * T1[k, l]
                q += Lphi[k, j] * T2[k, l]
            inner[j, l] = s + (1.0 if j == l else 0.0)
            T1[j, l] = q
    if _chol(inner, Linner, m) != 0:
        return -3
    logdet = 0.0
    tr = 0.0
    for i in range(p):
        logdet += log(psi[i])
        tr += S[i, i] / psi[i]
    for j in range(m):
        logdet += 2.0 * log(Linner[j, j])
    # tr(inner^{-1} T1) with T1 = Lphi^T QSQ Lphi
    _chol_inv(Linner, T2, y, m)
    for j in range(m):
        for l in range(m):
            tr -= T2[j, l] * T1[l, j]
    loglik[0] = -0.5 * n_obs * (p * LOG_2PI + logdet + tr)
    return 0


cdef void _estep(double[:, ::1] Lphi, double[:, ::1] Linner, double[:, ::1] U, double[:, ::1] QSQ,
                 double[:, ::1] Minv, double[:, ::1] B, double[:, ::1] A,
                 double[:, ::1] T1, double[:, ::1] T2, double[::1] y) noexcept nogil:
    cdef Py_ssize_t p = U.shape[0], m = U.shape[1]
    cdef Py_ssize_t i, j, k, l
    cdef double s
    _chol_inv(Linner, T2, y, m)
    # Minv = Lphi inner^{-1} Lphi^T
    for j in range(m):
        for l in range(m):
            s = 0.0
            for k in range(m):
                s += Lphi[j, k] * T2[k, l]
            T1[j, l] = s
    for j in range(m):
        for l in range(m):
            s = 0.0
            for k in range(m):
                s += T1[j, k] * Lphi[l, k]
            Minv[j, l] = s
    for j in range(m):
        for l in range(j):
            s = 0.5 * (Minv[j, l] + Minv[l, j])
            Minv[j, l] = s
            Minv[l, j] = s
    for i in range(p):
        for j in range(m):
            s = 0.0
            for k in range(m):
                s += U[i, k] * Minv[k, j]
            B[i, j] = s
    # A = Minv + Minv QSQ Minv
    for j in range(m):
        for l in range(m):
            s = 0.0
            for k in range(m):
                s += Minv[j, k] * QSQ[k, l]
            T1[j, l] = s
    for j in range(m):
        for l in range(m):
            s = 0.0
            for k in range(m):
                s += T1[j, k] * Minv[k, l]
            A[j, l] = Minv[j, l] + s
    for j in range(m):
        for l in range(j):
            s = 0.5 * (A[j, l] + A[l, j])
            A[j, l] = s
            A[l, j] = s


cdef double _phi_eval(double[::1] x, double[:, ::1] A, double[:, ::1] P, double[:, ::1] Lp,
                      double[:, ::1] Pinv, double[:, ::1] PinvA, double[:, ::1] G,
                      double[::1] y, double[::1] grad) noexcept nogil:
    """log|Phi| + tr(Phi^{-1} A) and its gradient in the off-diagonal entries."""
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t j, l, k, idx
    cdef double f, s
    idx = 0
    for j in range(m):
        P[j, j] = 1.0
        for l in range(j + 1, m):
            P[j, l] = x[idx]
            P[l, j] = x[idx]
            idx += 1
    if _chol(P, Lp, m) != 0:
        return INFINITY
    _chol_inv(Lp, Pinv, y, m)
    f = 0.0
    for j in range(m):
        f += 2.0 * log(Lp[j, j])
    for j in range(m):
        for l in range(m):
            s = 0.0
            for k in range(m):
                s += Pinv[j, k] * A[k, l]
            PinvA[j, l] = s
        f += PinvA[j, j]
    for j in range(m):
        for l in range(m):
            s = 0.0
            for k in range(m):
                s += PinvA[j, k] * Pinv[k, l]
            G[j, l] = Pinv[j, l] - s
    idx = 0
    for j in range(m):
        for l in range(j + 1, m):
            grad[idx] = G[j, l] + G[l, j]
            idx += 1
    return f


cdef int _phi_bfgs(double[:, ::1] A, double[:, ::1] Phi, _Work w, double tol, int max_iter):
    """In-place BFGS update of Phi; returns 1 when the gradient test is met."""
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t q = m * (m - 1) // 2
    cdef double[::1] x = w.x, g = w.g, xn = w.xn, gn = w.gn, d = w.d, s = w.s, yv = w.yv, Hy = w.Hy, y = w.y
    cdef double[:, ::1] H = w.H, P = w.P, Lp = w.Lp, Pinv = w.Pinv, PinvA = w.PinvA, G = w.G
    cdef Py_ssize_t i, j, l, idx
    cdef int it, ls, converged = 0
    cdef double f, fn, slope, step, gmax, sy, yHy, r
    if q == 0:
        return 1
    with nogil:
        idx = 0
        for j in range(m):
            for l in range(j + 1, m):
                x[idx] = Phi[j, l]
                idx += 1
        f = _phi_eval(x, A, P, Lp, Pinv, PinvA, G, y, g)
        if f == INFINITY:
            for i in range(q):
                x[i] = 0.0
            f = _phi_eval(x, A, P, Lp, Pinv, PinvA, G, y, g)
        for i in range(q):
            for j in range(q):
                H[i, j] = 1.0 if i == j else 0.0
        for it in range(max_iter):
            gmax = 0.0
            for i in range(q):
                if fabs(g[i]) > gmax:
                    gmax = fabs(g[i])
            if gmax <= tol:
                converged = 1
                break
            slope = 0.0
            for i in range(q):
                r = 0.0
                for j in range(q):
                    r -= H[i, j] * g[j]
                d[i] = r
                slope += g[i] * r
            if slope >= 0.0:
                slope = 0.0
                for i in range(q):
                    for j in range(q):
                        H[i, j] = 1.0 if i == j else 0.0
                    d[i] = -g[i]
                    slope -= g[i] * g[i]
            step = 1.0
            fn = INFINITY
            for ls in range(60):
                for i in range(q):
                    xn[i] = x[i] + step * d[i]
                fn = _phi_eval(xn, A, P, Lp, Pinv, PinvA, G, y, gn)
                if fn <= f + 1e-4 * step * slope:
                    break
                step *= 0.5
            if not fn <= f + 1e-4 * step * slope:
                break
            sy = 0.0
            for i in range(q):
                s[i] = xn[i] - x[i]
                yv[i] = gn[i] - g[i]
                sy += s[i] * yv[i]
            if sy > 1e-12:
                # H <- (I - r s y^T) H (I - r y s^T) + r s s^T
                r = 1.0 / sy
                yHy = 0.0
                for i in range(q):
                    Hy[i] = 0.0
                    for j in range(q):
                        Hy[i] += H[i, j] * yv[j]
                    yHy += yv[i] * Hy[i]
                for i in range(q):
                    for j in range(q):
                        H[i, j] = H[i, j] - r * (s[i] * Hy[j] + Hy[i] * s[j]) + (r * r * yHy + r) * s[i] * s[j]
            for i in range(q):
                x[i] = xn[i]
                g[i] = gn[i]
            f = fn
        idx = 0
        for j in range(m):
            Phi[j, j] = 1.0
            for l in range(j + 1, m):
                Phi[j, l] = x[idx]
                Phi[l, j] = x[idx]
                idx += 1
    return converged


def phi_bfgs(A, Phi, double tol=1e-6, int max_iter=200):
    """Compiled counterpart of ``em.phi_update``; returns ``(Phi, converged)``."""
    cdef Py_ssize_t m = A.shape[0]
    out = np.array(Phi, dtype=float, order="C")
    w = _Work(1, m)
    conv = _phi_bfgs(np.array(A, dtype=float, order="C"), out, w, tol, max_iter)
    return out, bool(conv)


def em_fit(S, Lam_in, psi_in, Phi_in, double rho, double gamma, int code, int mode,
           double eta, double n_obs, double em_tol, double cd_tol, int max_em_iter,
           int max_cd_sweeps, bint orthogonal, double phi_tol):
    """Run the EM loop; returns ``(status, Lambda, Psi, Phi, trace, loglik, iterations, converged)``.

    status: 0 ok, -1 nonpositive unique variance, -2 Phi not PD, -3 capacitance not PD.
    """
    cdef double[:, ::1] S_ = np.array(S, dtype=float, order="C")
    Lam_arr = np.array(Lam_in, dtype=float, order="C")
    psi_arr = np.array(psi_in, dtype=float)
    Phi_arr = np.array(Phi_in, dtype=float, order="C")
    cdef double[:, ::1] Lam = Lam_arr
    cdef double[::1] psi = psi_arr
    cdef double[:, ::1] Phi = Phi_arr
    cdef Py_ssize_t p = Lam.shape[0], m = Lam.shape[1]
    cdef Py_ssize_t i, j, k
    cdef _Work w = _Work(p, m)
    cdef double[:, ::1] Q = w.Q, U = w.U, K = w.K, QSQ = w.QSQ, Lphi = w.Lphi, inner = w.inner
    cdef double[:, ::1] Linner = w.Linner, Minv = w.Minv, B = w.B, A = w.A, T1 = w.T1, T2 = w.T2
    cdef double[::1] y = w.y
    psi_new_arr = np.zeros(p)
    cdef double[::1] psi_new = psi_new_arr
    cdef double ll = 0.0, obj, new_obj, pen, etaterm, s, quad
    cdef int status, it = 0, converged = 0
    trace = []

    status = _refresh(S_, Lam, psi, Phi, Q, U, K, QSQ, Lphi, inner, Linner, T1, T2, y, n_obs, &ll)
    if status != 0:
        return status, Lam_arr, psi_arr, Phi_arr, trace, ll, 0, False
    obj = ll - n_obs * _penalty_sum(Lam, rho, gamma, code) - 0.5 * n_obs * eta * _trace_ratio(S_, psi)
    trace.append(obj)
    for it in range(1, max_em_iter + 1):
        _estep(Lphi, Linner, U, QSQ, Minv, B, A, T1, T2, y)
        cd_sweep(Lam, B, A, psi, rho, gamma, code, mode, cd_tol, max_cd_sweeps)
        with nogil:
            for i in range(p):
                s = S_[i, i] * (1.0 + eta)
                for j in range(m):
                    s -= 2.0 * Lam[i, j] * B[i, j]
                    quad = 0.0
                    for k in range(m):
                        quad += A[j, k] * Lam[i, k]
                    s += Lam[i, j] * quad
                psi_new[i] = s
        for i in range(p):
            if not psi_new[i] > 0.0:
                return -1, Lam_arr, psi_arr, Phi_arr, trace, ll, it, False
            psi[i] = psi_new[i]
        if not orthogonal:
            _phi_bfgs(A, Phi, w, phi_tol, 200)
        status = _refresh(S_, Lam, psi, Phi, Q, U, K, QSQ, Lphi, inner, Linner, T1, T2, y, n_obs, &ll)
        if status != 0:
            return status, Lam_arr, psi_arr, Phi_arr, trace, ll, it, False
        new_obj = ll - n_obs * _penalty_sum(Lam, rho, gamma, code) - 0.5 * n_obs * eta * _trace_ratio(S_, psi)
        trace.append(new_obj)
        if fabs(new_obj - obj) <= em_tol * fabs(obj):
            obj = new_obj
            converged = 1
            break
        obj = new_obj
    return 0, Lam_arr, psi_arr, Phi_arr, trace, ll, it, bool(converged)


cdef double _penalty_sum(double[:, ::1] Lam, double rho, double gamma, int code) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s = 0.0
    for i in range(Lam.shape[0]):
        for j in range(Lam.shape[1]):
            s += _pen_value(Lam[i, j], rho, gamma, code)
    return s


cdef double _trace_ratio(double[:, ::1] S, double[::1] psi) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(psi.shape[0]):
        s += S[i, i] / psi[i]
    return s
