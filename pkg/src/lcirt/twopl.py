"""Multidimensional 2PL latent class model.

Each class ``c`` has an ability ``theta[c, d]`` on every dimension ``d`` and
the success probability of item ``j`` is

    logit(lambda[j, c]) = gamma[j] * (theta[c, d(j)] - beta[j])

with the lowest-index item of every dimension anchored at ``gamma = 1``,
``beta = 0``. Fitted by EM whose M-step is a blockwise safeguarded Newton
ascent (see ``lcirt._fallback.mstep_2pl``).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from lcirt import kernels
from lcirt.config import FitConfig
from lcirt.data import DimensionPartition, ResponseMatrix
from lcirt.errors import DataValidationError, NumericalError, StartAborted
from lcirt.lc import (
    EMPTY_CLASS,
    LcFit,
    best_run,
    bic,
    deterministic_start,
    parallel_map,
    random_start,
    run_lc_em,
    start_rng,
)

log = logging.getLogger(__name__)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TwoPlParams:
    weights: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    partition: DimensionPartition

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        th = np.asarray(self.theta, dtype=float)
        p = self.partition
        if th.ndim != 2 or th.shape != (w.size, p.s):
            raise ValueError(f"theta must be k x s = {w.size} x {p.s}, got {th.shape}")
        if g.shape != (p.J,) or b.shape != (p.J,):
            raise ValueError(f"gamma and beta must have one entry per item ({p.J})")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("class weights must be non-negative and sum to 1")
        if not (g > 0).all() or not np.isfinite(g).all():
            raise ValueError("discrimination parameters must be positive and finite")
        if not (np.isfinite(b).all() and np.isfinite(th).all()):
            raise ValueError("difficulties and abilities must be finite")
        anchors = p.anchors()
        if not ((g[anchors] == 1.0).all() and (b[anchors] == 0.0).all()):
            raise ValueError("anchor items must have gamma = 1 and beta = 0 exactly")
        for name, value in (("weights", w), ("gamma", g), ("beta", b), ("theta", th)):
            object.__setattr__(self, name, _frozen(value))

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def s(self) -> int:
        return self.partition.s

    @property
    def J(self) -> int:
        return self.partition.J

    @property
    def anchors(self) -> np.ndarray:
        return self.partition.anchors()

    def free_mask(self) -> np.ndarray:
        free = np.ones(self.J, dtype=bool)
        free[self.anchors] = False
        return free

    def permute(self, order: Sequence[int]) -> "TwoPlParams":
        order = np.asarray(order)
        return TwoPlParams(self.weights[order], self.gamma, self.beta, self.theta[order], self.partition)


@dataclass(frozen=True, eq=False)
class TwoPlFit:
    params: TwoPlParams
    loglik: float
    n_params: int
    bic: float
    posteriors: np.ndarray
    converged: bool
    n_iterations: int
    n: int
    start: str = "deterministic"
    seed: int | None = None
    loglik_trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.params.k


def twopl_prob(gamma, beta, theta):
    """``logistic(gamma * (theta - beta))``, stable for large arguments."""
    gamma = np.asarray(gamma, dtype=float)
    if (gamma <= 0).any():
        raise ValueError("gamma must be positive")
    out = kernels.sigmoid(gamma * (np.asarray(theta, dtype=float) - np.asarray(beta, dtype=float)))
    return float(out) if out.ndim == 0 else out


def linear_predictor(params: TwoPlParams) -> np.ndarray:
    """``J x k`` matrix of ``gamma_j (theta_{c,d(j)} - beta_j)``."""
    dims = params.partition.dims
    return params.gamma[:, None] * (params.theta[:, dims].T - params.beta[:, None])


def implied_lambda(params: TwoPlParams) -> np.ndarray:
    """``J x k`` success probabilities implied by the 2PL parameters."""
    return kernels.sigmoid(linear_predictor(params))


def twopl_n_params(k: int, s: int, J: int) -> int:
    """Weights, abilities, and the free ``(gamma, beta)`` of non-anchor items."""
    return (k - 1) + k * s + 2 * (J - s)


def _log_terms(eta, weights):
    with np.errstate(divide="ignore"):
        return -kernels.softplus(-eta), -kernels.softplus(eta), np.log(weights)


def twopl_loglik(params: TwoPlParams, data: ResponseMatrix | np.ndarray) -> float:
    Y = data.values if isinstance(data, ResponseMatrix) else np.asarray(data)
    if Y.ndim != 2 or Y.shape[1] != params.J:
        raise ValueError(f"data has {Y.shape[-1]} items, parameters have {params.J}")
    return float(kernels.log_marginal(Y, *_log_terms(linear_predictor(params), params.weights)).sum())


@dataclass
class TwoPlRun:
    weights: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    loglik: float
    n_iterations: int
    converged: bool
    trace: list[float]
    start: str = ""
    seed: int | None = None


def run_2pl_em(
    Y: np.ndarray,
    partition: DimensionPartition,
    weights,
    gamma,
    beta,
    theta,
    config: FitConfig,
    max_iterations: int | None = None,
) -> TwoPlRun:
    """EM iterations from one start.

    Stops when the log-likelihood change is below ``tolerance`` and no
    parameter moved by more than ``param_tolerance``.
    """
    n = Y.shape[0]
    dims = partition.dims
    free = np.ones(partition.J, dtype=bool)
    free[partition.anchors()] = False
    pi = np.asarray(weights, dtype=float).copy()
    gamma = np.asarray(gamma, dtype=float).copy()
    beta = np.asarray(beta, dtype=float).copy()
    theta = np.asarray(theta, dtype=float).copy()
    gamma[~free], beta[~free] = 1.0, 0.0

    def loglik_and_stats(pi, gamma, beta, theta):
        eta = gamma[:, None] * (theta[:, dims].T - beta[:, None])
        return kernels.estep(Y, *_log_terms(eta, pi))

    ll, post, N, S = loglik_and_stats(pi, gamma, beta, theta)
    if not math.isfinite(ll):
        raise NumericalError("non-finite log-likelihood at the starting values (iteration 0)")
    trace = [ll]
    converged = False
    max_it = config.max_iterations if max_iterations is None else max_iterations
    it = 0
    for it in range(1, max_it + 1):
        new_pi = N / n
        if new_pi.min() < EMPTY_CLASS:
            raise StartAborted(f"class {int(new_pi.argmin()) + 1} emptied at iteration {it}")
        try:
            g2, b2, t2, _ = kernels.mstep_2pl(
                N, S, dims, free, gamma, beta, theta,
                config.gamma_min, config.gamma_max, config.beta_max, config.theta_max,
                config.inner_tolerance, config.max_inner,
            )
        except FloatingPointError as exc:
            raise StartAborted(f"{exc} at iteration {it}") from None
        new_ll, post, N, S = loglik_and_stats(new_pi, g2, b2, t2)
        if not math.isfinite(new_ll):
            raise NumericalError(f"non-finite log-likelihood at iteration {it}")
        moved = max(
            np.abs(new_pi - pi).max(), np.abs(g2 - gamma).max(),
            np.abs(b2 - beta).max(), np.abs(t2 - theta).max(),
        )
        pi, gamma, beta, theta = new_pi, g2, b2, t2
        trace.append(new_ll)
        delta = new_ll - ll
        ll = new_ll
        if abs(delta) < config.tolerance and moved < config.param_tolerance:
            converged = True
            break
    return TwoPlRun(pi, gamma, beta, theta, ll, it, converged, trace)


def initial_abilities(lam: np.ndarray, partition: DimensionPartition, theta_max: float) -> np.ndarray:
    """Class-wise logit of the mean success probability of each group."""
    groups = partition.groups()
    means = np.stack([lam[g].mean(axis=0) for g in groups], axis=1)
    means = np.clip(means, 0.01, 0.99)
    return np.clip(np.log(means / (1 - means)), -theta_max, theta_max)


def _prefit_start(Y, partition, k, config, r):
    if r is None:
        pi0, lam0 = deterministic_start(Y, k)
    else:
        pi0, lam0 = random_start(Y, k, start_rng(config.seed, r))
    if config.prefit_iterations > 0:
        run = run_lc_em(Y, pi0, lam0, config, max_iterations=config.prefit_iterations)
        pi0, lam0 = run.weights, run.success_probs
    theta0 = initial_abilities(lam0, partition, config.theta_max)
    J = partition.J
    return pi0, np.ones(J), np.zeros(J), theta0


def em_fit_2pl(
    data: ResponseMatrix,
    partition: DimensionPartition,
    k: int,
    config: FitConfig | None = None,
    warm_start: TwoPlParams | None = None,
) -> TwoPlFit:
    """Fit the 2PL model with ``k`` classes on the given item partition.

    Starts are one deterministic LC pre-fit, ``config.n_random_starts``
    random LC pre-fits and, when given, ``warm_start``. The best start is
    kept and its classes ordered by the success probability of item 1.
    """
    config = config or FitConfig()
    Y = data.values
    n, J = Y.shape
    if k < 2:
        raise ValueError("the 2PL model needs k >= 2 classes (abilities are class contrasts)")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of subjects n={n}")
    if partition.J != J:
        raise DataValidationError(f"partition covers {partition.J} items, data has {J}")

    starts: list[tuple[str, object]] = [("deterministic", None)]
    starts += [(f"random-{r}", r) for r in range(1, config.n_random_starts + 1)]
    if warm_start is not None:
        if warm_start.k != k or warm_start.partition != partition:
            raise ValueError("warm start must have the same k and partition")
        starts.insert(0, ("warm", "warm"))

    def attempt(start):
        label, r = start
        try:
            if r == "warm":
                init = (warm_start.weights, warm_start.gamma, warm_start.beta, warm_start.theta)
            else:
                init = _prefit_start(Y, partition, k, config, r)
            run = run_2pl_em(Y, partition, *init, config)
        except StartAborted as exc:
            log.debug("2PL k=%d start %s aborted: %s", k, label, exc)
            return exc
        run.start = label
        run.seed = config.seed if isinstance(r, int) else None
        return run

    runs = parallel_map(attempt, starts, config.threads)
    return finalize_2pl(Y, partition, best_run(runs, f"k={k} 2PL"))


def finalize_2pl(Y: np.ndarray, partition: DimensionPartition, run: TwoPlRun) -> TwoPlFit:
    n, J = Y.shape
    k = run.weights.size
    order = np.argsort(run.theta[:, partition.dims[0]], kind="stable")
    params = TwoPlParams(run.weights[order] / run.weights.sum(), run.gamma, run.beta, run.theta[order], partition)
    ll, post, _, _ = kernels.estep(Y, *_log_terms(linear_predictor(params), params.weights))
    m = twopl_n_params(k, partition.s, J)
    if not run.converged:
        log.warning("2PL k=%d s=%d did not converge in %d iterations", k, partition.s, run.n_iterations)
    return TwoPlFit(
        params=params,
        loglik=ll,
        n_params=m,
        bic=bic(ll, m, n),
        posteriors=_frozen(post),
        converged=run.converged,
        n_iterations=run.n_iterations,
        n=n,
        start=run.start,
        seed=run.seed,
        loglik_trace=tuple(run.trace),
    )


@dataclass(frozen=True, eq=False)
class CorrelationResult:
    matrix: np.ndarray
    undefined: np.ndarray

    @property
    def s(self) -> int:
        return self.matrix.shape[0]


def weighted_correlation(theta, weights) -> CorrelationResult:
    """Correlations between ability columns, weighting classes by ``weights``.

    Pairs involving a dimension with zero weighted variance are NaN and
    flagged in ``undefined``.
    """
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    dev = theta - w @ theta
    cov = (dev * w[:, None]).T @ dev
    var = np.diag(cov).copy()
    zero = var <= 1e-300
    sd = np.sqrt(np.where(zero, 1.0, var))
    corr = cov / np.outer(sd, sd)
    undefined = zero[:, None] | zero[None, :]
    corr[undefined] = np.nan
    np.fill_diagonal(corr, 1.0)
    np.fill_diagonal(undefined, False)
    corr = np.clip(corr, -1.0, 1.0)
    return CorrelationResult(_frozen(corr), undefined)


def ability_correlations(fit: TwoPlFit | TwoPlParams) -> CorrelationResult:
    params = fit.params if isinstance(fit, TwoPlFit) else fit
    return weighted_correlation(params.theta, params.weights)


@dataclass(frozen=True)
class NestingReport:
    lc_loglik: float
    twopl_loglik: float
    gap: float
    within_bound: bool

    @property
    def optimizer_failure(self) -> bool:
        return not self.within_bound


def nested_loglik_bound(lc: LcFit, pl: TwoPlFit, slack: float = 1e-6) -> NestingReport:
    """Check that the constrained 2PL fit does not beat the unconstrained LC fit."""
    if lc.k != pl.k:
        raise ValueError(f"class counts differ: LC k={lc.k}, 2PL k={pl.k}")
    if lc.n != pl.n or lc.params.J != pl.params.J:
        raise ValueError("fits were computed on different data")
    gap = lc.loglik - pl.loglik
    ok = gap >= -slack
    if not ok:
        log.warning("2PL log-likelihood exceeds the LC one by %.3g: LC optimizer failure", -gap)
    return NestingReport(lc.loglik, pl.loglik, gap, ok)


def expected_complete_loglik(params: TwoPlParams, N: np.ndarray, S: np.ndarray) -> float:
    """Item part of the expected complete-data log-likelihood given ``N`` and ``S``."""
    eta = linear_predictor(params)
    return float((S * eta - N * kernels.softplus(eta)).sum())


def sufficient_statistics(fit_or_params, data: ResponseMatrix):
    params = fit_or_params.params if isinstance(fit_or_params, TwoPlFit) else fit_or_params
    eta = linear_predictor(params)
    _, _, N, S = kernels.estep(data.values, *_log_terms(eta, params.weights))
    return N, S


def expected_complete_score(params: TwoPlParams, N: np.ndarray, S: np.ndarray):
    """Analytic gradient of the expected complete-data log-likelihood.

    Returns ``(d_gamma, d_beta, d_theta)``; entries for anchor items are 0.
    """
    dims = params.partition.dims
    u = params.theta[:, dims].T - params.beta[:, None]
    eta = params.gamma[:, None] * u
    r = S - N * kernels.sigmoid(eta)
    d_gamma = (r * u).sum(axis=1)
    d_beta = -params.gamma * r.sum(axis=1)
    free = params.free_mask()
    d_gamma[~free] = 0.0
    d_beta[~free] = 0.0
    d_theta = np.zeros_like(params.theta)
    for d, g in enumerate(params.partition.groups()):
        d_theta[:, d] = (params.gamma[g, None] * r[g]).sum(axis=0)
    return d_gamma, d_beta, d_theta
