"""Pure numpy implementation of the hot kernels.

Mirrors ``lcirt._core`` function for function; ``lcirt.kernels`` picks
whichever is available at import time.
"""

import numpy as np

_FISHER_RIDGE = 1e-6
_MAX_HALVINGS = 40
# Relative rounding allowance of the ascent test, so steps at the optimum are not
# rejected on noise.
_Q_SLACK = 1e-13


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _class_logjoint(Y, log_lam, log_1m, log_pi):
    Yf = Y.astype(float)
    return Yf @ (log_lam - log_1m) + (log_1m.sum(axis=0) + log_pi)


def log_marginal(Y, log_lam, log_1m, log_pi):
    """Per-row ``log p(y_i)`` of a Bernoulli mixture."""
    a = _class_logjoint(Y, log_lam, log_1m, log_pi)
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def estep(Y, log_lam, log_1m, log_pi):
    """E-step of a Bernoulli mixture.

    Returns ``(loglik, posteriors, N, S)`` with ``N[c] = sum_i post[i, c]``
    and ``S[j, c] = sum_i post[i, c] * y[i, j]``.
    """
    a = _class_logjoint(Y, log_lam, log_1m, log_pi)
    m = a.max(axis=1, keepdims=True)
    e = np.exp(a - m)
    tot = e.sum(axis=1, keepdims=True)
    post = e / tot
    loglik = float((m[:, 0] + np.log(tot[:, 0])).sum())
    N = post.sum(axis=0)
    S = Y.T.astype(float) @ post
    return loglik, post, N, S


def _item_q(S, N, eta):
    return (S * eta - N * softplus(eta)).sum(axis=-1)


def _item_block(N, S, dims, free, gamma, beta, theta, gmin, gmax, bmax):
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return 0.0
    T = theta[:, dims[idx]].T
    Sj = S[idx]
    g, b = gamma[idx], beta[idx]
    u = T - b[:, None]
    eta = g[:, None] * u
    p = sigmoid(eta)
    r = Sj - N * p
    w = N * p * (1.0 - p)
    g_gam = (r * u).sum(axis=1)
    g_bet = -g * r.sum(axis=1)
    a = (w * u * u).sum(axis=1)
    c = g * g * w.sum(axis=1)
    b_exact = (r - w * g[:, None] * u).sum(axis=1)
    b_fish = -(w * g[:, None] * u).sum(axis=1)
    det_exact = a * c - b_exact * b_exact
    exact = (a > 0) & (det_exact > 1e-12 * a * c)
    off = np.where(exact, b_exact, b_fish)
    det = a * c - off * off
    weak = ~exact & ~(det > 1e-12 * a * c)
    ridge = np.where(weak, _FISHER_RIDGE * (a + c) + 1e-12, 0.0)
    a2, c2 = a + ridge, c + ridge
    det = a2 * c2 - off * off
    d_gam = (c2 * g_gam - off * g_bet) / det
    d_bet = (a2 * g_bet - off * g_gam) / det
    # bound-active coordinates are frozen; the other one gets a 1-D Newton step
    lock_g = ((g >= gmax) & (g_gam > 0)) | ((g <= gmin) & (g_gam < 0))
    lock_b = ((b >= bmax) & (g_bet > 0)) | ((b <= -bmax) & (g_bet < 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        d_gam = np.where(lock_g, 0.0, np.where(lock_b, g_gam / a2, d_gam))
        d_bet = np.where(lock_b, 0.0, np.where(lock_g, g_bet / c2, d_bet))
    decrement = g_gam * d_gam + g_bet * d_bet
    bad = ~(np.isfinite(d_gam) & np.isfinite(d_bet))
    d_gam = np.where(bad, 0.0, d_gam)
    d_bet = np.where(bad, 0.0, d_bet)
    decrement = np.where(bad, 0.0, decrement)

    q_old = _item_q(Sj, N, eta)
    floor = q_old - _Q_SLACK * (1.0 + np.abs(q_old))
    pending = ~bad & (decrement > 0)
    new_g, new_b = g.copy(), b.copy()
    t = 1.0
    for _ in range(_MAX_HALVINGS):
        if not pending.any():
            break
        cg = np.clip(g + t * d_gam, gmin, gmax)
        cb = np.clip(b + t * d_bet, -bmax, bmax)
        q_new = _item_q(Sj, N, cg[:, None] * (T - cb[:, None]))
        ok = pending & (q_new >= floor)
        new_g = np.where(ok, cg, new_g)
        new_b = np.where(ok, cb, new_b)
        pending &= ~ok
        t *= 0.5
    gamma[idx] = new_g
    beta[idx] = new_b
    return float(np.maximum(decrement, 0.0).sum())


def _theta_block(N, S, dims, gamma, beta, theta, tmax):
    k, s = theta.shape
    onehot = np.zeros((dims.size, s))
    onehot[np.arange(dims.size), dims] = 1.0
    T = theta[:, dims].T
    eta = gamma[:, None] * (T - beta[:, None])
    p = sigmoid(eta)
    r = S - N * p
    w = N * p * (1.0 - p)
    grad = ((gamma[:, None] * r).T @ onehot)
    curv = ((gamma[:, None] ** 2 * w).T @ onehot)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(curv > 0, grad / curv, 0.0)
    bad = ~np.isfinite(step)
    step[bad] = 0.0
    step[((theta >= tmax) & (grad > 0)) | ((theta <= -tmax) & (grad < 0))] = 0.0
    decrement = grad * step

    def cell_q(th):
        e = gamma[:, None] * (th[:, dims].T - beta[:, None])
        return ((S * e - N * softplus(e)).T @ onehot)

    q_old = cell_q(theta)
    floor = q_old - _Q_SLACK * (1.0 + np.abs(q_old))
    pending = (decrement > 0) & ~bad
    new = theta.copy()
    t = 1.0
    for _ in range(_MAX_HALVINGS):
        if not pending.any():
            break
        cand = np.clip(theta + t * step, -tmax, tmax)
        q_new = cell_q(cand)
        ok = pending & (q_new >= floor)
        new = np.where(ok, cand, new)
        pending &= ~ok
        t *= 0.5
    theta[:] = new
    return float(np.maximum(decrement, 0.0).sum())


def q_2pl(N, S, dims, gamma, beta, theta):
    """Item part of the expected complete-data log-likelihood of the 2PL model."""
    eta = gamma[:, None] * (theta[:, dims].T - beta[:, None])
    return float((S * eta - N * softplus(eta)).sum())


def mstep_2pl(N, S, dims, free, gamma, beta, theta, gmin, gmax, bmax, tmax, inner_tol, max_inner):
    """Blockwise safeguarded Newton ascent of the 2PL M-step objective.

    Cycles item ``(gamma, beta)`` updates and ability-cell updates until the
    summed Newton decrement drops below ``inner_tol``. Returns updated copies
    ``(gamma, beta, theta, cycles)``.
    """
    gamma = np.array(gamma, dtype=float)
    beta = np.array(beta, dtype=float)
    theta = np.array(theta, dtype=float)
    dims = np.asarray(dims, dtype=np.intp)
    free = np.asarray(free, dtype=bool)
    cycles = 0
    for cycles in range(1, max_inner + 1):
        dec = _item_block(N, S, dims, free, gamma, beta, theta, gmin, gmax, bmax)
        dec += _theta_block(N, S, dims, gamma, beta, theta, tmax)
        if not (np.isfinite(gamma).all() and np.isfinite(beta).all() and np.isfinite(theta).all()):
            raise FloatingPointError("non-finite parameter in 2PL M-step")
        if dec < inner_tol:
            break
    return gamma, beta, theta, cycles
