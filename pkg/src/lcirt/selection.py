"""Discriminant-power indices and threshold-based item retention."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from lcirt.data import DimensionPartition
from lcirt.lc import LcFit
from lcirt.twopl import TwoPlFit


@dataclass(frozen=True)
class DiscriminantRow:
    index: int
    code: str
    dimension: int
    raw: float
    relative: float
    mean: float | None = None
    std: float | None = None
    is_max: bool = False
    tied: bool = False
    degenerate: bool = False


@dataclass(frozen=True)
class DiscriminantReport:
    """Per-item raw and within-dimension relative discriminant scores.

    ``source`` is ``"lc"`` (raw score = range of class success
    probabilities) or ``"2pl"`` (raw score = estimated discrimination).
    """

    rows: tuple[DiscriminantRow, ...]
    source: str
    s: int

    @property
    def relative(self) -> np.ndarray:
        return np.array([r.relative for r in self.rows])

    @property
    def raw(self) -> np.ndarray:
        return np.array([r.raw for r in self.rows])

    @property
    def dimensions(self) -> np.ndarray:
        return np.array([r.dimension for r in self.rows])


def relative_scores(raw: Sequence[float], dimensions: Sequence[int]):
    """Divide each score by the largest score of its dimension.

    Returns ``(relative, is_max, tied, degenerate)`` arrays. A dimension whose
    largest score is 0 gets relative scores of 0 and the degenerate flag.
    """
    raw = np.asarray(raw, dtype=float)
    dims = np.asarray(dimensions)
    relative = np.zeros_like(raw)
    is_max = np.zeros(raw.size, dtype=bool)
    tied = np.zeros(raw.size, dtype=bool)
    degenerate = np.zeros(raw.size, dtype=bool)
    for d in np.unique(dims):
        idx = np.flatnonzero(dims == d)
        top = raw[idx].max()
        if top <= 0:
            degenerate[idx] = True
            continue
        relative[idx] = raw[idx] / top
        winners = idx[raw[idx] == top]
        relative[winners] = 1.0
        is_max[winners] = True
        if winners.size > 1:
            tied[winners] = True
    return relative, is_max, tied, degenerate


def _codes(codes, J):
    return tuple(codes) if codes is not None else tuple(f"Y{j + 1}" for j in range(J))


def discriminant_lc(fit: LcFit, partition: DimensionPartition, codes: Sequence[str] | None = None) -> DiscriminantReport:
    """Range-based index from LC success probabilities, with weighted mean and sd."""
    lam = np.asarray(fit.params.success_probs)
    w = np.asarray(fit.params.weights)
    if partition.J != lam.shape[0]:
        raise ValueError(f"partition covers {partition.J} items, fit has {lam.shape[0]}")
    spread = lam.max(axis=1) - lam.min(axis=1)
    mean = lam @ w
    std = np.sqrt(((lam - mean[:, None]) ** 2) @ w)
    rel, is_max, tied, degenerate = relative_scores(spread, partition.assignment)
    codes = _codes(codes, partition.J)
    rows = tuple(
        DiscriminantRow(j + 1, codes[j], partition.assignment[j], float(spread[j]), float(rel[j]),
                        float(mean[j]), float(std[j]), bool(is_max[j]), bool(tied[j]), bool(degenerate[j]))
        for j in range(partition.J)
    )
    return DiscriminantReport(rows, "lc", partition.s)


def discriminant_2pl(fit: TwoPlFit, codes: Sequence[str] | None = None) -> DiscriminantReport:
    """Discrimination relative to the most discriminating item of the same dimension."""
    params = fit.params
    gamma = np.asarray(params.gamma)
    part = params.partition
    rel, is_max, tied, degenerate = relative_scores(gamma, part.assignment)
    codes = _codes(codes, part.J)
    rows = tuple(
        DiscriminantRow(j + 1, codes[j], part.assignment[j], float(gamma[j]), float(rel[j]),
                        is_max=bool(is_max[j]), tied=bool(tied[j]), degenerate=bool(degenerate[j]))
        for j in range(part.J)
    )
    return DiscriminantReport(rows, "2pl", part.s)


@dataclass(frozen=True)
class Selection:
    threshold: float
    retained: tuple[int, ...]
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return len(self.retained)


def apply_threshold(report: DiscriminantReport, t: float) -> Selection:
    """Retain items whose relative score is at least ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    keep = tuple(r.index for r in report.rows if r.relative >= t)
    kept_dims = [r.dimension for r in report.rows if r.relative >= t]
    counts = tuple(kept_dims.count(d) for d in range(1, report.s + 1))
    return Selection(float(t), keep, counts)


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[Selection, ...]
    s: int


DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(11))


def threshold_sweep(report: DiscriminantReport, grid: Iterable[float] = DEFAULT_GRID) -> SweepTable:
    """Item counts per dimension for each threshold of ``grid``."""
    return SweepTable(tuple(apply_threshold(report, float(t)) for t in grid), report.s)


def report_from_scores(raw, dimensions, codes=None, source="table") -> DiscriminantReport:
    """Report built directly from raw scores, e.g. a published table column."""
    raw = np.asarray(raw, dtype=float)
    dims = [int(d) for d in dimensions]
    rel, is_max, tied, degenerate = relative_scores(raw, dims)
    codes = _codes(codes, raw.size)
    rows = tuple(
        DiscriminantRow(j + 1, codes[j], dims[j], float(raw[j]), float(rel[j]), is_max=bool(is_max[j]),
                        tied=bool(tied[j]), degenerate=bool(degenerate[j]))
        for j in range(raw.size)
    )
    return DiscriminantReport(rows, source, max(dims))


def report_from_relative(relative, dimensions, codes=None, source="table") -> DiscriminantReport:
    """Report whose relative scores are given as is (raw scores unknown)."""
    rel = np.asarray(relative, dtype=float)
    dims = [int(d) for d in dimensions]
    codes = _codes(codes, rel.size)
    rows = tuple(
        DiscriminantRow(j + 1, codes[j], dims[j], float("nan"), float(rel[j]), is_max=bool(rel[j] == 1.0))
        for j in range(rel.size)
    )
    return DiscriminantReport(rows, source, max(dims))
