"""Unconstrained latent class model for binary items, fitted by EM."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from lcirt import kernels
from lcirt.config import FitConfig
from lcirt.data import ResponseMatrix
from lcirt.errors import NumericalError, StartAborted

log = logging.getLogger(__name__)

EMPTY_CLASS = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LcParams:
    """Class weights ``pi_c`` and a ``J x k`` matrix of success probabilities."""

    weights: np.ndarray
    success_probs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        lam = np.asarray(self.success_probs, dtype=float)
        if w.ndim != 1 or lam.ndim != 2 or lam.shape[1] != w.size:
            raise ValueError(f"weights {w.shape} and success_probs {lam.shape} do not match")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("class weights must be non-negative and sum to 1")
        if ((lam < 0) | (lam > 1)).any() or not np.isfinite(lam).all():
            raise ValueError("success probabilities must lie in [0, 1]")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "success_probs", _frozen(lam))

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def J(self) -> int:
        return self.success_probs.shape[0]

    def permute(self, order: Sequence[int]) -> "LcParams":
        order = np.asarray(order)
        return LcParams(self.weights[order], self.success_probs[:, order])


@dataclass(frozen=True, eq=False)
class LcFit:
    params: LcParams
    loglik: float
    n_params: int
    bic: float
    posteriors: np.ndarray
    n_iterations: int
    converged: bool
    class_order: tuple[int, ...]
    n: int
    start: str = "deterministic"
    seed: int | None = None
    loglik_trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.params.k


@dataclass
class EmRun:
    """Outcome of one EM start (before class reordering)."""

    weights: np.ndarray
    success_probs: np.ndarray
    loglik: float
    n_iterations: int
    converged: bool
    trace: list[float]
    start: str = ""
    seed: int | None = None


def lc_n_params(k: int, J: int) -> int:
    """Free parameters of the LC model: ``k*J`` probabilities and ``k-1`` weights."""
    return k * J + (k - 1)


def bic(loglik: float, n_params: int, n: int) -> float:
    return -2.0 * loglik + n_params * math.log(n)


def _log_params(weights, lam):
    with np.errstate(divide="ignore"):
        return np.log(lam), np.log1p(-lam), np.log(weights)


def lc_loglik(params: LcParams, data: ResponseMatrix | np.ndarray) -> float:
    """Observed-data log-likelihood, accumulated in log space."""
    Y = data.values if isinstance(data, ResponseMatrix) else np.asarray(data)
    if Y.ndim != 2 or Y.shape[1] != params.J:
        raise ValueError(f"data has {Y.shape[-1]} items, parameters have {params.J}")
    return float(kernels.log_marginal(Y, *_log_params(params.weights, params.success_probs)).sum())


def run_lc_em(
    Y: np.ndarray,
    weights: np.ndarray,
    success_probs: np.ndarray,
    config: FitConfig,
    max_iterations: int | None = None,
) -> EmRun:
    """Iterate EM from the given start until the log-likelihood settles.

    Converged means ``|delta loglik| < tolerance`` with no parameter moving
    by more than ``param_tolerance``. A class whose weight falls
    below 1e-10 aborts the start with :class:`StartAborted`.
    """
    eps = config.epsilon
    max_it = config.max_iterations if max_iterations is None else max_iterations
    pi = np.asarray(weights, dtype=float).copy()
    lam = np.clip(np.asarray(success_probs, dtype=float), eps, 1 - eps)
    n = Y.shape[0]
    ll, post, N, S = kernels.estep(Y, *_log_params(pi, lam))
    if not math.isfinite(ll):
        raise NumericalError("non-finite log-likelihood at the starting values (iteration 0)")
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_it + 1):
        new_pi = N / n
        moved_pi = np.abs(new_pi - pi).max()
        pi = new_pi
        if pi.min() < EMPTY_CLASS:
            raise StartAborted(f"class {int(pi.argmin()) + 1} emptied at iteration {it}")
        new_lam = np.clip(S / N, eps, 1 - eps)
        moved = max(np.abs(new_lam - lam).max(), moved_pi)
        lam = new_lam
        new_ll, post, N, S = kernels.estep(Y, *_log_params(pi, lam))
        if not math.isfinite(new_ll):
            raise NumericalError(f"non-finite log-likelihood at iteration {it}")
        trace.append(new_ll)
        delta = new_ll - ll
        ll = new_ll
        if abs(delta) < config.tolerance and moved < config.param_tolerance:
            converged = True
            break
    return EmRun(pi, lam, ll, it, converged, trace)


def deterministic_start(Y: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform weights; column means shifted on the logit scale, one shift per class."""
    means = np.clip(Y.mean(axis=0), 0.02, 0.98)
    shifts = np.linspace(-1.0, 1.0, k) if k > 1 else np.zeros(1)
    logit = np.log(means / (1 - means))
    lam = 1.0 / (1.0 + np.exp(-(logit[:, None] + shifts[None, :])))
    if k == 1:
        lam = Y.mean(axis=0)[:, None].astype(float)
    return np.full(k, 1.0 / k), lam


def start_rng(seed: int, start: int) -> np.random.Generator:
    """Philox stream for random start ``start`` (1-based) of a fit seeded with ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, start])))


def random_start(Y: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    lam = rng.uniform(0.05, 0.95, size=(Y.shape[1], k))
    w = rng.uniform(1.0, 2.0, size=k)
    return w / w.sum(), lam


def parallel_map(fn: Callable, items: Iterable, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def best_run(runs: Sequence, what: str):
    """Highest log-likelihood among completed starts; ties go to the earlier start."""
    done = [r for r in runs if not isinstance(r, Exception)]
    if not done:
        reasons = "; ".join(str(r) for r in runs)
        raise NumericalError(f"every start of the {what} fit failed: {reasons}")
    return max(enumerate(done), key=lambda pair: (pair[1].loglik, -pair[0]))[1]


def _lc_starts(Y: np.ndarray, k: int, config: FitConfig):
    yield "deterministic", None, deterministic_start(Y, k)
    for r in range(1, config.n_random_starts + 1):
        yield f"random-{r}", r, random_start(Y, k, start_rng(config.seed, r))


def em_fit_lc(data: ResponseMatrix, k: int, config: FitConfig | None = None) -> LcFit:
    """Fit a ``k``-class LC model from one deterministic and several random starts.

    The best start by log-likelihood is kept and its classes are ordered by
    increasing success probability of the first item.
    """
    config = config or FitConfig()
    Y = data.values
    n, J = Y.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of subjects n={n}")

    def attempt(start):
        label, r, (pi0, lam0) = start
        try:
            run = run_lc_em(Y, pi0, lam0, config)
        except StartAborted as exc:
            log.debug("LC k=%d start %s aborted: %s", k, label, exc)
            return exc
        run.start = label
        run.seed = None if r is None else config.seed
        return run

    runs = parallel_map(attempt, _lc_starts(Y, k, config), config.threads)
    run = best_run(runs, f"k={k} LC")
    return finalize_lc(Y, run, config)


def finalize_lc(Y: np.ndarray, run: EmRun, config: FitConfig) -> LcFit:
    n, J = Y.shape
    k = run.weights.size
    order = np.argsort(run.success_probs[0], kind="stable")
    params = LcParams(run.weights[order] / run.weights.sum(), run.success_probs[:, order])
    ll, post, _, _ = kernels.estep(Y, *_log_params(params.weights, params.success_probs))
    m = lc_n_params(k, J)
    if not run.converged:
        log.warning("LC k=%d did not converge in %d iterations", k, run.n_iterations)
    return LcFit(
        params=params,
        loglik=ll,
        n_params=m,
        bic=bic(ll, m, n),
        posteriors=_frozen(post),
        n_iterations=run.n_iterations,
        converged=run.converged,
        class_order=tuple(int(c) for c in order),
        n=n,
        start=run.start,
        seed=run.seed,
        loglik_trace=tuple(run.trace),
    )


@dataclass(frozen=True)
class BicRow:
    k: int
    loglik: float
    n_params: int
    bic: float


@dataclass(frozen=True, eq=False)
class BicTable:
    rows: tuple[BicRow, ...]
    selected: int
    fits: dict = field(repr=False, default_factory=dict)


def select_k(data: ResponseMatrix, k_range: Iterable[int], config: FitConfig | None = None) -> BicTable:
    """Fit each ``k`` and pick the one with the smallest BIC (smaller ``k`` on ties)."""
    config = config or FitConfig()
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    fits = {}
    for k in ks:
        try:
            fits[k] = em_fit_lc(data, k, config)
        except NumericalError as exc:
            raise NumericalError(f"k={k}: {exc}") from exc
        log.info("k=%d loglik=%.3f bic=%.3f", k, fits[k].loglik, fits[k].bic)
    rows = tuple(BicRow(k, fits[k].loglik, fits[k].n_params, fits[k].bic) for k in ks)
    selected = min(rows, key=lambda r: (r.bic, r.k)).k
    return BicTable(rows, selected, fits)


def posterior_assign(fit: LcFit | LcParams, y) -> np.ndarray:
    """Posterior class probabilities for one response vector."""
    params = fit.params if isinstance(fit, LcFit) else fit
    y = np.asarray(y)
    if y.shape != (params.J,):
        raise ValueError(f"response vector must have length {params.J}")
    _, post, _, _ = kernels.estep(y[None, :], *_log_params(params.weights, params.success_probs))
    return post[0]
