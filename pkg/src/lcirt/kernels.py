"""Backend selection for the hot kernels.

The compiled ``lcirt._core`` extension is used when importable; otherwise
the numpy implementation in ``lcirt._fallback`` is used. Setting
``LCIRT_BACKEND=python`` forces the fallback.
"""

import os

import numpy as np

from lcirt import _fallback

if os.environ.get("LCIRT_BACKEND", "").lower() == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from lcirt import _core as _impl
    except ImportError:
        _impl = _fallback
        BACKEND = "python"
    else:
        BACKEND = "cython"

softplus = _fallback.softplus
sigmoid = _fallback.sigmoid


def _as_inputs(Y, log_lam, log_1m, log_pi):
    return (
        np.ascontiguousarray(Y, dtype=np.uint8),
        np.ascontiguousarray(log_lam, dtype=np.float64),
        np.ascontiguousarray(log_1m, dtype=np.float64),
        np.ascontiguousarray(log_pi, dtype=np.float64),
    )


def estep(Y, log_lam, log_1m, log_pi):
    """Returns ``(loglik, posteriors, N, S)``; see ``lcirt._fallback.estep``."""
    return _impl.estep(*_as_inputs(Y, log_lam, log_1m, log_pi))


def log_marginal(Y, log_lam, log_1m, log_pi):
    return _impl.log_marginal(*_as_inputs(Y, log_lam, log_1m, log_pi))


def mstep_2pl(N, S, dims, free, gamma, beta, theta, gmin, gmax, bmax, tmax, inner_tol, max_inner):
    return _impl.mstep_2pl(
        np.ascontiguousarray(N, dtype=np.float64),
        np.ascontiguousarray(S, dtype=np.float64),
        np.ascontiguousarray(dims, dtype=np.intp),
        np.ascontiguousarray(free, dtype=np.uint8),
        gamma, beta, theta, float(gmin), float(gmax), float(bmax), float(tmax),
        float(inner_tol), int(max_inner),
    )


def q_2pl(N, S, dims, gamma, beta, theta):
    return _impl.q_2pl(
        np.ascontiguousarray(N, dtype=np.float64),
        np.ascontiguousarray(S, dtype=np.float64),
        np.ascontiguousarray(dims, dtype=np.intp),
        np.ascontiguousarray(gamma, dtype=np.float64),
        np.ascontiguousarray(beta, dtype=np.float64),
        np.ascontiguousarray(theta, dtype=np.float64),
    )
