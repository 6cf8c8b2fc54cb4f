"""Deterministic CSV/JSON serialization of fits and report tables.

Tables use fixed decimals; fit files use the shortest round-trip float
representation, so refits from the same inputs give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from lcirt.data import DimensionPartition
from lcirt.dimensionality import DendrogramPath
from lcirt.lc import BicTable, LcFit, LcParams
from lcirt.selection import DiscriminantReport, Selection, SweepTable
from lcirt.twopl import CorrelationResult, TwoPlFit, TwoPlParams


def fnum(x: float, digits: int = 6) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "NA"
    out = f"{x:.{digits}f}"
    return "0." + "0" * digits if out == "-0." + "0" * digits else out


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def bic_table_csv(table: BicTable) -> str:
    return _csv(["k", "loglik", "m", "bic"], ([r.k, fnum(r.loglik, 3), r.n_params, fnum(r.bic, 3)] for r in table.rows))


def lc_fit_json(fit: LcFit, codes: Sequence[str]) -> str:
    return _json({
        "model": "lc",
        "k": fit.k,
        "n": fit.n,
        "J": fit.params.J,
        "loglik": fit.loglik,
        "n_params": fit.n_params,
        "bic": fit.bic,
        "converged": fit.converged,
        "n_iterations": fit.n_iterations,
        "start": fit.start,
        "item_codes": list(codes),
        "weights": _floats(fit.params.weights),
        "success_probs": _floats(fit.params.success_probs),
    })


def twopl_fit_json(fit: TwoPlFit, codes: Sequence[str]) -> str:
    p = fit.params
    return _json({
        "model": "2pl",
        "k": fit.k,
        "s": p.s,
        "n": fit.n,
        "J": p.J,
        "loglik": fit.loglik,
        "n_params": fit.n_params,
        "bic": fit.bic,
        "converged": fit.converged,
        "n_iterations": fit.n_iterations,
        "start": fit.start,
        "item_codes": list(codes),
        "assignment": list(p.partition.assignment),
        "labels": [list(lab) for lab in p.partition.labels],
        "weights": _floats(p.weights),
        "gamma": _floats(p.gamma),
        "beta": _floats(p.beta),
        "theta": _floats(p.theta),
    })


def load_fit_json(path: str | Path):
    """Parameters and item codes from a fit file: ``(LcParams | TwoPlParams, codes)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        codes = tuple(doc["item_codes"])
        if doc["model"] == "lc":
            return LcParams(np.array(doc["weights"]), np.array(doc["success_probs"])), codes
        if doc["model"] == "2pl":
            labels = tuple(tuple(lab) for lab in doc["labels"]) if "labels" in doc else None
            part = DimensionPartition(tuple(doc["assignment"]), labels)
            params = TwoPlParams(
                np.array(doc["weights"]), np.array(doc["gamma"]), np.array(doc["beta"]), np.array(doc["theta"]), part
            )
            return params, codes
    except KeyError as exc:
        raise ValueError(f"{path}: fit file is missing field {exc.args[0]!r}") from None
    raise ValueError(f"{path}: unknown model kind {doc.get('model')!r}")


def lc_discriminant_csv(report: DiscriminantReport) -> str:
    rows = (
        [r.index, r.code, r.dimension, fnum(r.mean, 3), fnum(r.std, 3), fnum(r.raw, 3), fnum(r.relative, 3),
         int(r.degenerate)]
        for r in report.rows
    )
    return _csv(["j", "code", "dimension", "mean", "std", "M", "D", "degenerate"], rows)


def twopl_discriminant_csv(report: DiscriminantReport, params: TwoPlParams) -> str:
    order = sorted(report.rows, key=lambda r: (r.dimension, r.index))
    rows = (
        [r.dimension, r.index, r.code, fnum(params.gamma[r.index - 1], 3), fnum(params.beta[r.index - 1], 3),
         fnum(r.relative, 3)]
        for r in order
    )
    return _csv(["dimension", "j", "code", "gamma", "beta", "Dstar"], rows)


def sweep_csv(table: SweepTable) -> str:
    header = ["threshold"] + [f"dim{d}" for d in range(1, table.s + 1)] + ["overall"]
    return _csv(header, ([f"{r.threshold:.1f}", *r.counts, r.total] for r in table.rows))


def selected_items_csv(selection: Selection, report: DiscriminantReport) -> str:
    """Retained items with their (renumbered) group, readable as a partition file."""
    kept = [r for r in report.rows if r.index in set(selection.retained)]
    present = sorted({r.dimension for r in kept})
    remap = {d: i for i, d in enumerate(present, 1)}
    return _csv(["item_code", "group_index"], ([r.code, remap[r.dimension]] for r in kept))


def path_csv(path: DendrogramPath) -> str:
    rows = (
        [s.h, s.s, s.partition.describe(), fnum(s.lr, 3), fnum(s.p_value, 3), int(s.h == path.selected_h)]
        for s in path.steps
    )
    return _csv(["h", "s", "clusters", "LR", "p_value", "selected"], rows)


def abilities_csv(params: TwoPlParams) -> str:
    header = ["class"] + [f"dim{d}" for d in range(1, params.s + 1)] + ["weight"]
    rows = ([c + 1, *(fnum(t, 3) for t in params.theta[c]), fnum(params.weights[c], 3)] for c in range(params.k))
    return _csv(header, rows)


def correlations_csv(result: CorrelationResult) -> str:
    """Lower triangle, rows = second dimension, columns = first dimension."""
    s = result.s
    rows = ([d2 + 1, *(fnum(result.matrix[d2, d1], 3) for d1 in range(d2 + 1))] for d2 in range(s))
    return _csv(["dimension"] + [str(d) for d in range(1, s + 1)], rows)


def partition_csv(partition: DimensionPartition, codes: Sequence[str]) -> str:
    return partition.to_csv(codes)
