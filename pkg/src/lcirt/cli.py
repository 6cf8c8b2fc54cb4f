"""Batch command-line front end.

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 numerical
failure. Failures print a JSON error document on standard output; logs go
to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from lcirt import report
from lcirt.config import FitConfig
from lcirt.data import DimensionPartition, ItemMeta, load_dataset, load_partition, restrict, with_partition
from lcirt.dimensionality import ClusteringFailed, cluster_dimensions, emit_dendrogram
from lcirt.errors import DataValidationError, LcirtError, NumericalError, PipelineError
from lcirt.lc import LcParams, em_fit_lc, select_k
from lcirt.selection import (
    DEFAULT_GRID,
    apply_threshold,
    discriminant_2pl,
    discriminant_lc,
    report_from_scores,
    threshold_sweep,
)
from lcirt.simulate import load_spec, simulate
from lcirt.twopl import TwoPlParams, ability_correlations, em_fit_2pl, nested_loglik_bound

log = logging.getLogger("lcirt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_k_range(text: str) -> list[int]:
    """``"1..7"``, ``"3"`` or ``"2,4,6"``."""
    text = text.strip()
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    try:
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            ks = list(range(lo, hi + 1))
        else:
            ks = [int(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"invalid k range {text!r}; expected e.g. 1..7") from None
    if not ks or min(ks) < 1:
        raise UsageError(f"invalid k range {text!r}: needs at least one k >= 1")
    return ks


def _config(args) -> FitConfig:
    base = FitConfig.from_json(args.config) if args.config else FitConfig()
    return base.with_overrides(
        seed=args.seed, threads=args.threads, n_random_starts=args.random_starts,
        max_iterations=args.max_iterations, alpha=getattr(args, "alpha", None),
    )


def _load(args):
    data = load_dataset(args.data)
    partition = None
    if getattr(args, "partition", None):
        partition = load_partition(args.partition, data.items)
        data = with_partition(data, partition)
    return data, partition


def _emit(text: str, out: str | None):
    if out:
        report.write_text(out, text)
    else:
        sys.stdout.write(text)


# Commands


def cmd_select_k(args) -> int:
    config = _config(args)
    data, _ = _load(args)
    table = select_k(data, parse_k_range(args.k), config)
    _emit(report.bic_table_csv(table), args.out)
    print(f"selected: {table.selected}")
    return EXIT_OK


def cmd_fit_lc(args) -> int:
    config = _config(args)
    data, partition = _load(args)
    fit = em_fit_lc(data, int(args.k), config)
    _emit(report.lc_fit_json(fit, data.codes), args.out)
    if args.report:
        part = partition or DimensionPartition.single(data.J)
        report.write_text(args.report, report.lc_discriminant_csv(discriminant_lc(fit, part, data.codes)))
    return EXIT_OK


def cmd_fit_2pl(args) -> int:
    config = _config(args)
    data, partition = _load(args)
    fit = em_fit_2pl(data, partition, int(args.k), config)
    _emit(report.twopl_fit_json(fit, data.codes), args.out)
    if args.report:
        report.write_text(args.report, report.twopl_discriminant_csv(discriminant_2pl(fit, data.codes), fit.params))
    return EXIT_OK


def cmd_select_items(args) -> int:
    params, codes = report.load_fit_json(args.fit)
    if isinstance(params, LcParams):
        if args.partition:
            part = load_partition(args.partition, [ItemMeta(j + 1, c) for j, c in enumerate(codes)])
        else:
            part = DimensionPartition.single(params.J)
        lam = params.success_probs
        rep = report_from_scores(lam.max(axis=1) - lam.min(axis=1), part.assignment, codes, "lc")
    else:
        rep = report_from_scores(params.gamma, params.partition.assignment, codes, "2pl")
    selection = apply_threshold(rep, args.threshold)
    _emit(report.selected_items_csv(selection, rep), args.out)
    if args.sweep:
        report.write_text(args.sweep, report.sweep_csv(threshold_sweep(rep, DEFAULT_GRID)))
    log.info("retained %d of %d items at threshold %g", selection.total, len(rep.rows), args.threshold)
    return EXIT_OK


def _write_clustering(out: Path, path, codes):
    report.write_text(out / "table6_clustering.csv", report.path_csv(path))
    report.write_text(out / "dendrogram.txt", emit_dendrogram(path, "text"))
    report.write_text(out / "dendrogram.dot", emit_dendrogram(path, "dot"))
    report.write_text(out / "selected_partition.csv", path.selected.to_csv(codes))


def cmd_cluster_dims(args) -> int:
    config = _config(args)
    data, partition = _load(args)
    out = Path(args.out_dir)
    try:
        path = cluster_dimensions(data, partition, int(args.k), config.alpha, config)
    except ClusteringFailed as exc:
        if exc.path.steps:
            _write_clustering(out, exc.path, data.codes)
        raise
    _write_clustering(out, path, data.codes)
    report.write_text(out / "2pl_fit_selected.json", report.twopl_fit_json(path.selected_fit, data.codes))
    print(f"selected: s={path.selected.s} {path.selected.describe()}")
    return EXIT_OK


def cmd_correlations(args) -> int:
    params, _ = report.load_fit_json(args.fit)
    if not isinstance(params, TwoPlParams):
        raise DataValidationError(f"{args.fit} holds an LC fit; correlations need a 2PL fit")
    result = ability_correlations(params)
    _emit(report.correlations_csv(result), args.out)
    if args.abilities:
        report.write_text(args.abilities, report.abilities_csv(params))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        spec = load_spec(args.spec)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise DataValidationError(f"{args.spec}: {exc}") from None
    if args.seed is not None:
        spec = type(spec)(spec.params, spec.n, args.seed, spec.item_codes)
    sim = simulate(spec)
    _emit(sim.data.to_csv(), args.out)
    return EXIT_OK


def run_pipeline(data_path, partition_path, out_dir, k_range, threshold, config, irt_k=None) -> dict:
    """All stages in order, writing each stage's artifacts as soon as it completes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    completed: list[str] = []

    def stage(name):
        completed.append(name)
        log.info("stage %s done", name)

    try:
        data = load_dataset(data_path)
        partition = load_partition(partition_path, data.items)
        data = with_partition(data, partition)
        codes = data.codes
        report.write_text(out / "config.json", json.dumps(
            {"config": config.to_dict(), "k_range": list(k_range), "threshold": threshold, "irt_k": irt_k},
            indent=2) + "\n")
        stage("config")

        table = select_k(data, k_range, config)
        k = table.selected
        report.write_text(out / "table3_bic.csv", report.bic_table_csv(table))
        report.write_text(out / "lc_fit.json", report.lc_fit_json(table.fits[k], codes))
        stage("select-k")

        lc_rep = discriminant_lc(table.fits[k], partition, codes)
        report.write_text(out / "table4_lc_items.csv", report.lc_discriminant_csv(lc_rep))
        report.write_text(out / "table4_lc_sweep.csv", report.sweep_csv(threshold_sweep(lc_rep)))
        stage("lc-items")

        k_irt = irt_k or k
        full = em_fit_2pl(data, partition, k_irt, config)
        pl_rep = discriminant_2pl(full, codes)
        report.write_text(out / "2pl_fit_all_items.json", report.twopl_fit_json(full, codes))
        report.write_text(out / "table5_2pl_items.csv", report.twopl_discriminant_csv(pl_rep, full.params))
        report.write_text(out / "table7_2pl_sweep.csv", report.sweep_csv(threshold_sweep(pl_rep)))
        if k_irt in table.fits:
            nest = nested_loglik_bound(table.fits[k_irt], full)
            report.write_text(out / "nesting.json", json.dumps(
                {"lc_loglik": nest.lc_loglik, "twopl_loglik": nest.twopl_loglik, "gap": nest.gap,
                 "within_bound": nest.within_bound}, indent=2) + "\n")
        stage("fit-2pl")

        selection = apply_threshold(pl_rep, threshold)
        report.write_text(out / "selected_items.csv", report.selected_items_csv(selection, pl_rep))
        sub = restrict(data, selection.retained)
        sub_part = partition.restrict(selection.retained)
        stage("select-items")

        if sub is data:
            refit = full
        else:
            refit = em_fit_2pl(sub, sub_part, k_irt, config)
        report.write_text(out / "2pl_fit_selected_items.json", report.twopl_fit_json(refit, sub.codes))
        stage("refit")

        if sub_part.s >= 2:
            try:
                path = cluster_dimensions(sub, sub_part, k_irt, config.alpha, config, initial_fit=refit)
            except ClusteringFailed as exc:
                if exc.path.steps:
                    _write_clustering(out, exc.path, sub.codes)
                raise
            _write_clustering(out, path, sub.codes)
            final = path.selected_fit
        else:
            final = refit
        report.write_text(out / "2pl_fit_final.json", report.twopl_fit_json(final, sub.codes))
        stage("cluster-dims")

        report.write_text(out / "table8_abilities.csv", report.abilities_csv(final.params))
        report.write_text(out / "table9_correlations.csv", report.correlations_csv(ability_correlations(final)))
        stage("correlations")
    except (LcirtError, ValueError, OSError) as exc:
        raise PipelineError(f"pipeline stopped after {completed[-1] if completed else 'start'}: {exc}",
                            completed, exc) from exc
    return {"completed": completed, "k_lc": k, "k_irt": k_irt, "s_final": final.params.s}


def cmd_pipeline(args) -> int:
    config = _config(args)
    summary = run_pipeline(
        args.data, args.partition, args.out_dir, parse_k_range(args.k), args.threshold, config, args.irt_k
    )
    print(f"selected: k={summary['k_lc']} s={summary['s_final']}")
    return EXIT_OK


# Parser


def _common(p, fit=True):
    p.add_argument("--config", help="JSON file with FitConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    if fit:
        p.add_argument("--random-starts", type=int, help="random EM starts besides the deterministic one")
        p.add_argument("--max-iterations", type=int)
    else:
        p.set_defaults(random_starts=None, max_iterations=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcirt", description="Latent class and multidimensional 2PL item analysis.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("select-k", help="BIC table over a range of class counts")
    p.add_argument("--data", required=True)
    p.add_argument("--k", default="1..7")
    p.add_argument("--out")
    _common(p)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("fit-lc", help="fit one LC model")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--partition", help="item_code,group_index file for the discriminant report")
    p.add_argument("--out")
    p.add_argument("--report", help="write the per-item discriminant table here")
    _common(p)
    p.set_defaults(func=cmd_fit_lc)

    p = sub.add_parser("fit-2pl", help="fit the multidimensional 2PL model")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--report", help="write the per-item parameter table here")
    _common(p)
    p.set_defaults(func=cmd_fit_2pl)

    p = sub.add_parser("select-items", help="threshold the discriminant index of a saved fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--partition", help="item groups for an LC fit")
    p.add_argument("--out")
    p.add_argument("--sweep", help="write counts for thresholds 0.0..1.0 here")
    p.set_defaults(func=cmd_select_items)

    p = sub.add_parser("cluster-dims", help="agglomerative LR clustering of item groups")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out-dir", required=True)
    _common(p)
    p.set_defaults(func=cmd_cluster_dims)

    p = sub.add_parser("correlations", help="weighted ability correlations of a saved 2PL fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--out")
    p.add_argument("--abilities", help="write the class ability table here")
    p.set_defaults(func=cmd_correlations)

    p = sub.add_parser("simulate", help="generate a dataset from a JSON generator spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pipeline", help="run every stage and write a report bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", default="1..7")
    p.add_argument("--irt-k", type=int, help="class count of the 2PL stages (default: BIC choice)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--alpha", type=float)
    _common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _error_document(exc: BaseException, code: int) -> str:
    doc = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    if isinstance(exc, PipelineError):
        doc["error"]["completed_stages"] = list(exc.completed)
        if exc.cause is not None:
            doc["error"]["cause"] = type(exc.cause).__name__
    return json.dumps(doc, indent=2)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PipelineError) and exc.cause is not None:
        return exit_code_for(exc.cause)
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (DataValidationError, ValueError, OSError, json.JSONDecodeError)):
        return EXIT_DATA
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(_error_document(exc, EXIT_USAGE))
        return EXIT_USAGE
    logging.basicConfig(stream=sys.stderr, level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, LcirtError, ValueError, OSError, ArithmeticError) as exc:
        code = exit_code_for(exc)
        log.debug("command failed", exc_info=True)
        print(_error_document(exc, code))
        return code


if __name__ == "__main__":
    sys.exit(main())
