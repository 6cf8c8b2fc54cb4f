"""Likelihood-ratio tests between nested 2PL structures and agglomerative
clustering of item groups into dimensions.

Merging two anchored dimensions removes ``k`` ability parameters and frees
the absorbed anchor's discrimination and difficulty, so the test has
``k - 2`` degrees of freedom.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from lcirt import kernels
from lcirt.config import FitConfig
from lcirt.data import DimensionPartition, ResponseMatrix
from lcirt.errors import DataValidationError, NumericalError
from lcirt.lc import parallel_map
from lcirt.special import chi2_sf
from lcirt.twopl import TwoPlFit, TwoPlParams, _log_terms, em_fit_2pl, linear_predictor, twopl_n_params

log = logging.getLogger(__name__)

LR_SLACK = 1e-6


@dataclass(frozen=True)
class LrTestResult:
    lr: float
    df: int
    p_value: float
    full_partition: DimensionPartition
    reduced_partition: DimensionPartition
    full_loglik: float
    reduced_loglik: float
    pattern_lr: float

    @property
    def optimizer_failure(self) -> bool:
        """Reduced model fitted better than its parent by more than the slack."""
        return self.lr < -LR_SLACK


def _group_sets(partition: DimensionPartition) -> set[frozenset[int]]:
    return {frozenset(int(j) for j in g) for g in partition.groups()}


def merged_pair(full: DimensionPartition, reduced: DimensionPartition) -> tuple[int, int]:
    """1-based groups of ``full`` that were collapsed to obtain ``reduced``."""
    if full.J != reduced.J or reduced.s != full.s - 1:
        raise DataValidationError(
            f"reduced partition ({reduced.s} groups) is not one merge away from the full one ({full.s} groups)"
        )
    fg, rg = _group_sets(full), _group_sets(reduced)
    gone = fg - rg
    new = rg - fg
    if len(gone) != 2 or len(new) != 1 or frozenset().union(*gone) != next(iter(new)):
        raise DataValidationError("reduced partition is not obtained by merging exactly two groups")
    index = {frozenset(int(j) for j in g): d for d, g in enumerate(full.groups(), 1)}
    a, b = sorted(index[g] for g in gone)
    return a, b


def pattern_loglik(params: TwoPlParams, patterns: np.ndarray, counts: np.ndarray) -> float:
    """``sum_y n(y) log p(y)`` over distinct observed patterns."""
    logp = kernels.log_marginal(patterns, *_log_terms(linear_predictor(params), params.weights))
    return float(counts @ logp)


def lr_test(data: ResponseMatrix, full: TwoPlFit, reduced: TwoPlFit) -> LrTestResult:
    """Likelihood-ratio test of ``reduced`` (two groups merged) against ``full``.

    The statistic is reported as ``2 * (full.loglik - reduced.loglik)``; the
    pattern-sum form is stored alongside as a cross-check.
    """
    k = full.k
    if reduced.k != k:
        raise DataValidationError(f"class counts differ: full k={k}, reduced k={reduced.k}")
    if full.n != data.n or reduced.n != data.n or full.params.J != data.J or reduced.params.J != data.J:
        raise DataValidationError("both fits must be computed on the supplied data")
    df = k - 2
    if df <= 0:
        raise DataValidationError(
            f"k={k} leaves {df} degrees of freedom: with two classes a merged dimension "
            "loses no information and the test is degenerate"
        )
    fp, rp = full.params.partition, reduced.params.partition
    if _group_sets(fp) != _group_sets(rp):
        merged_pair(fp, rp)
        drop = twopl_n_params(k, fp.s, fp.J) - twopl_n_params(k, rp.s, rp.J)
        if drop != df:
            raise AssertionError(f"parameter bookkeeping gives {drop} restrictions, expected {df}")
    lr = 2.0 * (full.loglik - reduced.loglik)
    patterns, counts = np.unique(data.values, axis=0, return_counts=True)
    pattern_lr = 2.0 * (pattern_loglik(full.params, patterns, counts) - pattern_loglik(reduced.params, patterns, counts))
    if lr < -LR_SLACK:
        log.warning("LR = %.3g is negative: the reduced fit beats its parent (optimizer failure)", lr)
    p = chi2_sf(max(lr, 0.0), df)
    return LrTestResult(lr, df, p, fp, rp, full.loglik, reduced.loglik, pattern_lr)


@dataclass(frozen=True)
class MergeStep:
    h: int
    s: int
    pair: tuple[tuple[int, ...], tuple[int, ...]]
    partition: DimensionPartition
    lr: float
    p_value: float
    loglik: float


@dataclass(frozen=True, eq=False)
class DendrogramPath:
    initial: DimensionPartition
    initial_loglik: float
    steps: tuple[MergeStep, ...]
    alpha: float
    selected_h: int
    fits: dict = field(default_factory=dict, repr=False)

    @property
    def selected(self) -> DimensionPartition:
        """Partition after the last accepted merge (the initial one if none)."""
        return self.initial if self.selected_h == 0 else self.steps[self.selected_h - 1].partition

    @property
    def selected_fit(self) -> TwoPlFit | None:
        return self.fits.get(self.selected_h)


class ClusteringFailed(NumericalError):
    """An inner fit failed; ``path`` holds the merges completed so far."""

    def __init__(self, message, path: DendrogramPath):
        super().__init__(message)
        self.path = path


def select_step(steps, alpha: float) -> int:
    """Number of leading merges accepted: stop before the first significant LR."""
    h = 0
    for step in steps:
        if step.p_value < alpha:
            break
        h = step.h
    return h


def align_merge(params: TwoPlParams, a: int, b: int, merged: DimensionPartition, config: FitConfig) -> TwoPlParams:
    """Starting values for the model with groups ``a`` and ``b`` collapsed.

    The group whose anchor has the lower index keeps its ability scale. The
    other group's abilities are regressed on it across classes with weights
    ``pi``, ``theta_b ~ u + v theta_a``, and its items are re-expressed on
    the kept scale: ``gamma' = gamma v``, ``beta' = (beta - u) / v``.
    """
    old = params.partition
    anchors = old.anchors()
    keep, absorb = (a, b) if anchors[a - 1] < anchors[b - 1] else (b, a)
    w = params.weights
    x = params.theta[:, keep - 1]
    y = params.theta[:, absorb - 1]
    xm, ym = w @ x, w @ y
    sxx = w @ (x - xm) ** 2
    v = (w @ ((x - xm) * (y - ym))) / sxx if sxx > 1e-12 else 1.0
    if not v > 0.05:
        v = 1.0
    u = ym - v * xm
    gamma = params.gamma.copy()
    beta = params.beta.copy()
    moved = old.groups()[absorb - 1]
    gamma[moved] = np.clip(gamma[moved] * v, config.gamma_min, config.gamma_max)
    beta[moved] = np.clip((beta[moved] - u) / v, -config.beta_max, config.beta_max)
    theta = np.empty((params.k, merged.s))
    for d, lab in enumerate(merged.labels):
        src = next(g for g, old_lab in enumerate(old.labels, 1) if set(old_lab) <= set(lab) and g != absorb)
        theta[:, d] = params.theta[:, src - 1]
    new_anchors = merged.anchors()
    gamma[new_anchors], beta[new_anchors] = 1.0, 0.0
    return TwoPlParams(w, gamma, beta, theta, merged)


def embed_split(params: TwoPlParams, full: DimensionPartition) -> TwoPlParams:
    """Exact image of a merged-model fit in the model where one group is split.

    ``full`` must split one group of ``params.partition`` in two. The split-off
    part takes its anchor ``j`` from the merged fit: its abilities become
    ``gamma_j (theta - beta_j)`` and its items are rescaled so every success
    probability is unchanged. Used to start the larger model at the smaller
    one's optimum.
    """
    reduced = params.partition
    a, b = merged_pair(full, reduced)
    fgroups = full.groups()
    merged_d = int(reduced.dims[fgroups[a - 1][0]])
    theta = np.empty((params.k, full.s))
    gamma = params.gamma.copy()
    beta = params.beta.copy()
    for d, items in enumerate(fgroups):
        src = int(reduced.dims[items[0]])
        theta[:, d] = params.theta[:, src]
        if src != merged_d:
            continue
        j = items[0]
        if j == reduced.anchors()[merged_d]:
            continue
        gj, bj = gamma[j], beta[j]
        theta[:, d] = gj * (params.theta[:, src] - bj)
        beta[items] = gj * (beta[items] - bj)
        gamma[items] = gamma[items] / gj
    anchors = full.anchors()
    gamma[anchors], beta[anchors] = 1.0, 0.0
    return TwoPlParams(params.weights, gamma, beta, theta, full)


def _fit_candidate(data, parent: TwoPlFit, a, b, k, config):
    merged = parent.params.partition.merge(a, b)
    if config.merge_start == "cold":
        return em_fit_2pl(data, merged, k, config.with_overrides(threads=1))
    warm = align_merge(parent.params, a, b, merged, config)
    cold = config.with_overrides(n_random_starts=0, threads=1)
    return em_fit_2pl(data, merged, k, cold, warm_start=warm)


def cluster_dimensions(
    data: ResponseMatrix,
    initial: DimensionPartition,
    k: int,
    alpha: float | None = None,
    config: FitConfig | None = None,
    initial_fit: TwoPlFit | None = None,
) -> DendrogramPath:
    """Agglomerative search for the number of dimensions.

    At every level all pairwise merges of the current groups are fitted
    (by default a warm start from the parent plus one deterministic cold
    start; ``config.merge_start="cold"`` refits every candidate from the
    full set of starts) and the
    merge with the smallest LR is taken; ties go to the lexicographically
    smallest pair of group labels. The search runs down to one group and
    the selected partition is the one reached before the first merge whose
    LR is significant at ``alpha``.
    """
    config = config or FitConfig()
    alpha = config.alpha if alpha is None else alpha
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if initial.s < 2:
        raise DataValidationError("the initial partition needs at least two groups")
    if k < 3:
        raise DataValidationError(f"k={k}: the LR test needs k >= 3 (df = k - 2)")
    if initial_fit is None:
        initial_fit = em_fit_2pl(data, initial, k, config)
    elif initial_fit.params.partition != initial or initial_fit.k != k:
        raise ValueError("initial_fit does not match the initial partition and k")

    fits = {0: initial_fit}
    steps: list[MergeStep] = []
    parent = initial_fit
    h = 0

    def partial():
        return DendrogramPath(initial, initial_fit.loglik, tuple(steps), alpha, select_step(steps, alpha), fits)

    while parent.params.partition.s > 1:
        h += 1
        part = parent.params.partition
        pairs = list(combinations(range(1, part.s + 1), 2))
        try:
            cands = parallel_map(lambda ab: _fit_candidate(data, parent, ab[0], ab[1], k, config), pairs, config.threads)
        except NumericalError as exc:
            raise ClusteringFailed(f"merge level h={h}: {exc}", partial()) from exc
        scored = []
        for (a, b), fit in zip(pairs, cands):
            test = lr_test(data, parent, fit)
            label = (part.labels[a - 1], part.labels[b - 1])
            scored.append((test.lr, label, fit, test))
            log.debug("h=%d merge %s lr=%.4f", h, label, test.lr)
        lr, label, fit, test = min(scored, key=lambda t: (t[0], t[1]))
        steps.append(MergeStep(h, fit.params.partition.s, label, fit.params.partition, lr, test.p_value, fit.loglik))
        fits[h] = fit
        log.info("h=%d s=%d %s LR=%.3f p=%.3f", h, fit.params.partition.s, fit.params.partition.describe(), lr, test.p_value)
        parent = fit
    return partial()


# Rendering


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _label(lab) -> str:
    return "{" + ",".join(map(str, lab)) + "}"


def emit_dendrogram(path: DendrogramPath, fmt: str = "text") -> str:
    """Deterministic text tree or Graphviz ``dot`` document.

    Merge heights are the cumulative LR (negative statistics count as 0).
    """
    if not path.steps:
        raise ValueError("dendrogram path is empty")
    leaves = [lab for lab in path.initial.labels]
    heights = np.cumsum([max(s.lr, 0.0) for s in path.steps])
    if fmt == "text":
        lines = [
            f"# dendrogram leaves={len(leaves)} merges={len(path.steps)} alpha={path.alpha:g}",
            "leaves " + " ".join(_label(lab) for lab in leaves),
        ]
        for step, height in zip(path.steps, heights):
            mark = " *" if step.h == path.selected_h else ""
            lines.append(
                f"merge h={step.h} s={step.s} {_label(step.pair[0])} + {_label(step.pair[1])} "
                f"lr={_fmt(step.lr)} p={_fmt(step.p_value)} height={_fmt(height)}{mark}"
            )
        lines.append(f"selected s={path.selected.s} {path.selected.describe()}")
        return "\n".join(lines) + "\n"
    if fmt == "dot":
        node = {}
        lines = ["digraph dendrogram {", "  rankdir=BT;", "  node [shape=box];"]
        for lab in leaves:
            node[lab] = f"g{'_'.join(map(str, lab))}"
            lines.append(f'  {node[lab]} [label="{_label(lab)}", height_lr=0];')
        for step, height in zip(path.steps, heights):
            merged = tuple(sorted(step.pair[0] + step.pair[1]))
            node[merged] = f"m{step.h}"
            style = ", style=bold" if step.h <= path.selected_h else ""
            lines.append(
                f'  m{step.h} [shape=ellipse, label="h={step.h} LR={step.lr:.3f} p={step.p_value:.3f}", '
                f"height_lr={height:.6f}{style}];"
            )
            lines.append(f"  {node[step.pair[0]]} -> m{step.h};")
            lines.append(f"  {node[step.pair[1]]} -> m{step.h};")
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown dendrogram format {fmt!r}; expected 'text' or 'dot'")


_MERGE = re.compile(
    r"merge h=(\d+) s=(\d+) \{([\d,]+)\} \+ \{([\d,]+)\} lr=(\S+) p=(\S+) height=(\S+)( \*)?$"
)


def parse_dendrogram_text(text: str) -> list[tuple[int, tuple[int, ...], tuple[int, ...], float]]:
    """Merge sequence ``(h, left, right, lr)`` from :func:`emit_dendrogram` text."""
    out = []
    for line in text.splitlines():
        m = _MERGE.match(line)
        if m:
            left = tuple(int(x) for x in m.group(3).split(","))
            right = tuple(int(x) for x in m.group(4).split(","))
            out.append((int(m.group(1)), left, right, float(m.group(5))))
    if not out:
        raise ValueError("no merge lines found")
    return out

