# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled E-step and 2PL M-step kernels.

Same contracts as ``lcirt._fallback``; every loop runs without the GIL so
independent EM starts can share a thread pool.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, fmax, fmin, isfinite

cnp.import_array()

ctypedef unsigned char u8

cdef double _FISHER_RIDGE = 1e-6
cdef int _MAX_HALVINGS = 40
cdef double _Q_SLACK = 1e-13


cdef inline double _softplus(double x) noexcept nogil:
    return fmax(x, 0.0) + log1p(exp(-fabs(x)))


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e = exp(-fabs(x))
    if x >= 0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


cdef inline double _clip(double x, double lo, double hi) noexcept nogil:
    return fmin(fmax(x, lo), hi)


def log_marginal(const u8[:, ::1] Y, const double[:, ::1] log_lam,
                 const double[:, ::1] log_1m, const double[::1] log_pi):
    cdef Py_ssize_t n = Y.shape[0], J = Y.shape[1], k = log_pi.shape[0]
    cdef Py_ssize_t i, j, c
    cdef double m, tot, y
    out_arr = np.empty(n)
    diff_arr = np.empty((J, k))
    base_arr = np.empty(k)
    a_arr = np.empty(k)
    cdef double[::1] out = out_arr, base = base_arr, a = a_arr
    cdef double[:, ::1] diff = diff_arr
    with nogil:
        for c in range(k):
            base[c] = log_pi[c]
            for j in range(J):
                base[c] += log_1m[j, c]
        for j in range(J):
            for c in range(k):
                diff[j, c] = log_lam[j, c] - log_1m[j, c]
        for i in range(n):
            for c in range(k):
                a[c] = base[c]
            for j in range(J):
                y = Y[i, j]
                for c in range(k):
                    a[c] += y * diff[j, c]
            m = a[0]
            for c in range(1, k):
                if a[c] > m:
                    m = a[c]
            tot = 0.0
            for c in range(k):
                tot += exp(a[c] - m)
            out[i] = m + log(tot)
    return out_arr


def estep(const u8[:, ::1] Y, const double[:, ::1] log_lam,
          const double[:, ::1] log_1m, const double[::1] log_pi):
    """Fused E-step: posteriors plus the sufficient statistics ``N`` and ``S``."""
    cdef Py_ssize_t n = Y.shape[0], J = Y.shape[1], k = log_pi.shape[0]
    cdef Py_ssize_t i, j, c
    cdef double m, tot, y, loglik = 0.0
    post_arr = np.empty((n, k))
    N_arr = np.zeros(k)
    S_arr = np.zeros((J, k))
    diff_arr = np.empty((J, k))
    base_arr = np.empty(k)
    a_arr = np.empty(k)
    cdef double[:, ::1] post = post_arr, S = S_arr, diff = diff_arr
    cdef double[::1] N = N_arr, base = base_arr, a = a_arr
    with nogil:
        for c in range(k):
            base[c] = log_pi[c]
            for j in range(J):
                base[c] += log_1m[j, c]
        for j in range(J):
            for c in range(k):
                diff[j, c] = log_lam[j, c] - log_1m[j, c]
        for i in range(n):
            for c in range(k):
                a[c] = base[c]
            for j in range(J):
                y = Y[i, j]
                for c in range(k):
                    a[c] += y * diff[j, c]
            m = a[0]
            for c in range(1, k):
                if a[c] > m:
                    m = a[c]
            tot = 0.0
            for c in range(k):
                a[c] = exp(a[c] - m)
                tot += a[c]
            loglik += m + log(tot)
            for c in range(k):
                post[i, c] = a[c] / tot
                N[c] += post[i, c]
            for j in range(J):
                y = Y[i, j]
                for c in range(k):
                    S[j, c] += y * post[i, c]
    return loglik, post_arr, N_arr, S_arr


cdef double _q_item(Py_ssize_t j, double g, double b, Py_ssize_t d,
                    const double[::1] N, const double[:, ::1] S,
                    const double[:, ::1] theta) noexcept nogil:
    cdef Py_ssize_t c, k = N.shape[0]
    cdef double eta, q = 0.0
    for c in range(k):
        eta = g * (theta[c, d] - b)
        q += S[j, c] * eta - N[c] * _softplus(eta)
    return q


cdef double _item_block(const double[::1] N, const double[:, ::1] S,
                        const Py_ssize_t[::1] dims, const u8[::1] free,
                        double[::1] gamma, double[::1] beta, const double[:, ::1] theta,
                        double gmin, double gmax, double bmax) noexcept nogil:
    cdef Py_ssize_t J = dims.shape[0], k = N.shape[0]
    cdef Py_ssize_t j, c, d, h
    cdef double g, b, u, eta, p, r, w, g_gam, g_bet, a_, c_, b_ex, b_fi
    cdef double det, off, ridge, d_gam, d_bet, dec, q_old, q_new, floor, t, cg, cb
    cdef double total = 0.0
    cdef bint exact, lock_g, lock_b
    for j in range(J):
        if not free[j]:
            continue
        d = dims[j]
        g = gamma[j]
        b = beta[j]
        g_gam = 0.0; g_bet = 0.0; a_ = 0.0; c_ = 0.0; b_ex = 0.0; b_fi = 0.0; q_old = 0.0
        for c in range(k):
            u = theta[c, d] - b
            eta = g * u
            p = _sigmoid(eta)
            r = S[j, c] - N[c] * p
            w = N[c] * p * (1.0 - p)
            g_gam += r * u
            g_bet += r
            a_ += w * u * u
            c_ += w
            b_ex += r - w * g * u
            b_fi -= w * g * u
            q_old += S[j, c] * eta - N[c] * _softplus(eta)
        g_bet *= -g
        c_ *= g * g
        det = a_ * c_ - b_ex * b_ex
        exact = (a_ > 0) and (det > 1e-12 * a_ * c_)
        off = b_ex if exact else b_fi
        det = a_ * c_ - off * off
        ridge = 0.0
        if not exact and not (det > 1e-12 * a_ * c_):
            ridge = _FISHER_RIDGE * (a_ + c_) + 1e-12
        a_ += ridge
        c_ += ridge
        det = a_ * c_ - off * off
        d_gam = (c_ * g_gam - off * g_bet) / det
        d_bet = (a_ * g_bet - off * g_gam) / det
        lock_g = (g >= gmax and g_gam > 0) or (g <= gmin and g_gam < 0)
        lock_b = (b >= bmax and g_bet > 0) or (b <= -bmax and g_bet < 0)
        if lock_g:
            d_gam = 0.0
            d_bet = 0.0 if lock_b else g_bet / c_
        elif lock_b:
            d_bet = 0.0
            d_gam = g_gam / a_
        dec = g_gam * d_gam + g_bet * d_bet
        if not (isfinite(d_gam) and isfinite(d_bet)) or not (dec > 0):
            continue
        total += dec
        floor = q_old - _Q_SLACK * (1.0 + fabs(q_old))
        t = 1.0
        for h in range(_MAX_HALVINGS):
            cg = _clip(g + t * d_gam, gmin, gmax)
            cb = _clip(b + t * d_bet, -bmax, bmax)
            q_new = _q_item(j, cg, cb, d, N, S, theta)
            if q_new >= floor:
                gamma[j] = cg
                beta[j] = cb
                break
            t *= 0.5
    return total


cdef double _q_cell(Py_ssize_t c, double th, const Py_ssize_t[::1] items,
                    Py_ssize_t lo, Py_ssize_t hi, const double[::1] N, const double[:, ::1] S,
                    const double[::1] gamma, const double[::1] beta) noexcept nogil:
    cdef Py_ssize_t m, j
    cdef double eta, q = 0.0
    for m in range(lo, hi):
        j = items[m]
        eta = gamma[j] * (th - beta[j])
        q += S[j, c] * eta - N[c] * _softplus(eta)
    return q


cdef double _theta_block(const double[::1] N, const double[:, ::1] S,
                         const Py_ssize_t[::1] items, const Py_ssize_t[::1] starts,
                         const double[::1] gamma, const double[::1] beta,
                         double[:, ::1] theta, double tmax) noexcept nogil:
    cdef Py_ssize_t k = theta.shape[0], s = theta.shape[1]
    cdef Py_ssize_t c, d, m, j, h
    cdef double th, eta, p, grad, curv, step, dec, q_old, q_new, floor, t, cand
    cdef double total = 0.0
    for d in range(s):
        for c in range(k):
            th = theta[c, d]
            grad = 0.0
            curv = 0.0
            q_old = 0.0
            for m in range(starts[d], starts[d + 1]):
                j = items[m]
                eta = gamma[j] * (th - beta[j])
                p = _sigmoid(eta)
                grad += gamma[j] * (S[j, c] - N[c] * p)
                curv += gamma[j] * gamma[j] * N[c] * p * (1.0 - p)
                q_old += S[j, c] * eta - N[c] * _softplus(eta)
            if not (curv > 0):
                continue
            step = grad / curv
            if not isfinite(step):
                continue
            if (th >= tmax and grad > 0) or (th <= -tmax and grad < 0):
                continue
            dec = grad * step
            if not (dec > 0):
                continue
            total += dec
            floor = q_old - _Q_SLACK * (1.0 + fabs(q_old))
            t = 1.0
            for h in range(_MAX_HALVINGS):
                cand = _clip(th + t * step, -tmax, tmax)
                q_new = _q_cell(c, cand, items, starts[d], starts[d + 1], N, S, gamma, beta)
                if q_new >= floor:
                    theta[c, d] = cand
                    break
                t *= 0.5
    return total


def q_2pl(const double[::1] N, const double[:, ::1] S, const Py_ssize_t[::1] dims,
          const double[::1] gamma, const double[::1] beta, const double[:, ::1] theta):
    cdef Py_ssize_t J = dims.shape[0]
    cdef Py_ssize_t j
    cdef double q = 0.0
    with nogil:
        for j in range(J):
            q += _q_item(j, gamma[j], beta[j], dims[j], N, S, theta)
    return q


def mstep_2pl(N_in, S_in, dims_in, free_in, gamma_in, beta_in, theta_in,
              double gmin, double gmax, double bmax, double tmax,
              double inner_tol, int max_inner):
    cdef const double[::1] N = np.ascontiguousarray(N_in, dtype=np.float64)
    cdef const double[:, ::1] S = np.ascontiguousarray(S_in, dtype=np.float64)
    dims_arr = np.ascontiguousarray(dims_in, dtype=np.intp)
    cdef const Py_ssize_t[::1] dims = dims_arr
    cdef const u8[::1] free = np.ascontiguousarray(free_in, dtype=np.uint8)
    gamma_arr = np.array(gamma_in, dtype=np.float64)
    beta_arr = np.array(beta_in, dtype=np.float64)
    theta_arr = np.array(theta_in, dtype=np.float64, order="C")
    cdef double[::1] gamma = gamma_arr, beta = beta_arr
    cdef double[:, ::1] theta = theta_arr
    cdef Py_ssize_t s = theta_arr.shape[1]
    order = np.argsort(dims_arr, kind="stable")
    starts_arr = np.searchsorted(dims_arr[order], np.arange(s + 1)).astype(np.intp)
    cdef const Py_ssize_t[::1] items = np.ascontiguousarray(order, dtype=np.intp)
    cdef const Py_ssize_t[::1] starts = starts_arr
    cdef int cycles = 0, it
    cdef double dec
    cdef bint finite = True
    cdef Py_ssize_t j, c
    with nogil:
        for it in range(1, max_inner + 1):
            cycles = it
            dec = _item_block(N, S, dims, free, gamma, beta, theta, gmin, gmax, bmax)
            dec += _theta_block(N, S, items, starts, gamma, beta, theta, tmax)
            for j in range(gamma.shape[0]):
                if not (isfinite(gamma[j]) and isfinite(beta[j])):
                    finite = False
            for c in range(theta.shape[0]):
                for j in range(s):
                    if not isfinite(theta[c, j]):
                        finite = False
            if not finite:
                break
            if dec < inner_tol:
                break
    if not finite:
        raise FloatingPointError("non-finite parameter in 2PL M-step")
    return gamma_arr, beta_arr, theta_arr, cycles
