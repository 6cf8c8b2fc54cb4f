"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary of the run.
"""

import csv
import itertools
import math
import time

import numpy as np
import pytest
from conftest import (
    ACCEPTANCE_LINES,
    DATA_DIR,
    best_permutation_error,
    naive_2pl_lambda,
    naive_lc_loglik,
    null_merge_2pl,
    random_twopl,
    recovery_2pl,
    redundant_groups_2pl,
    well_separated_lc,
)
from scipy import integrate

from lcirt.cli import run_pipeline
from lcirt.config import FitConfig
from lcirt.data import DimensionPartition
from lcirt.dimensionality import cluster_dimensions, embed_split, lr_test
from lcirt.lc import LcParams, bic, em_fit_lc, lc_loglik, lc_n_params
from lcirt.selection import relative_scores, report_from_relative, report_from_scores, threshold_sweep
from lcirt.simulate import GeneratorSpec, simulate
from lcirt.special import chi2_sf
from lcirt.twopl import (
    TwoPlParams,
    em_fit_2pl,
    expected_complete_loglik,
    sufficient_statistics,
    twopl_loglik,
)

TABLE3 = [  # k, loglik, m, BIC
    (1, -37175.939, 89, 75013.842),
    (2, -32773.208, 179, 66877.781),
    (3, -31444.523, 269, 64889.813),
    (4, -30432.381, 359, 63534.930),
    (5, -29875.393, 449, 63090.356),
    (6, -29423.379, 539, 62855.730),
    (7, -29159.367, 629, 62997.107),
]
TABLE7 = [  # threshold, counts for dimensions 1..8, overall
    (0.0, 13, 5, 21, 18, 15, 8, 6, 3, 89),
    (0.1, 13, 5, 18, 18, 1, 7, 4, 3, 69),
    (0.2, 13, 4, 15, 17, 1, 5, 4, 3, 62),
    (0.3, 13, 4, 8, 16, 1, 5, 3, 3, 53),
    (0.4, 12, 3, 6, 11, 1, 3, 3, 2, 41),
    (0.5, 11, 3, 4, 10, 1, 1, 3, 2, 35),
    (0.6, 9, 3, 3, 8, 1, 1, 2, 1, 28),
    (0.7, 6, 2, 2, 6, 1, 1, 2, 1, 21),
    (0.8, 4, 2, 2, 5, 1, 1, 1, 1, 17),
    (0.9, 2, 1, 1, 3, 1, 1, 1, 1, 11),
    (1.0, 1, 1, 1, 1, 1, 1, 1, 1, 8),
]
LC_SWEEP_ROWS = {  # threshold: counts for dimensions 1..8, overall, from the LC-based count table
    0.0: (13, 5, 21, 17, 16, 8, 6, 3, 89),
    1.0: (1, 1, 1, 1, 1, 1, 1, 1, 1),
}


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _rows(name):
    with open(DATA_DIR / name, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# 1-3: arithmetic on published tables


def test_criterion_01_bic_arithmetic():
    start = time.perf_counter()
    errors = [abs(bic(ll, m, 1699) - expected) for _, ll, m, expected in TABLE3]
    elapsed = time.perf_counter() - start
    ok = max(errors) <= 0.01 and elapsed < 1e-3
    record(1, ok, f"max |BIC - table| = {max(errors):.4f} (limit 0.01), {elapsed * 1e3:.3f} ms")


def test_criterion_02_parameter_count():
    got = [lc_n_params(k, 89) for k, *_ in TABLE3]
    expected = [m for _, _, m, _ in TABLE3]
    record(2, got == expected, f"m_k for k=1..7 = {got}")


def test_criterion_03_ratio_indices():
    t4 = _rows("paper_table4.csv")
    rel, *_ = relative_scores([float(r["M"]) for r in t4], [int(r["dimension"]) for r in t4])
    d_err = np.abs(rel - [float(r["D"]) for r in t4])
    t5 = _rows("paper_table5.csv")
    rel5, *_ = relative_scores([float(r["gamma"]) for r in t5], [int(r["dimension"]) for r in t5])
    ds_err = np.abs(rel5 - [float(r["Dstar"]) for r in t5])
    tol = 0.001 + 1e-9
    flagged = [f"{r['code']} (D* {r['Dstar']} vs {v:.4f})" for r, v, e in zip(t5, rel5, ds_err) if e > tol]
    # rows named in the dimension-7 question are reported, whatever their status
    dim7 = [f"{r['code']}: gamma={r['gamma']} D*={r['Dstar']} recomputed={v:.3f}"
            for r, v in zip(t5, rel5) if r["dimension"] == "7"]
    print("dimension 7 rows:", "; ".join(dim7))
    ok = len(t4) == 89 and d_err.max() <= tol and len(t5) == 89 and not flagged
    record(3, ok, f"D max err {d_err.max():.4f} over 89 items; D* max err {ds_err.max():.4f}; "
                  f"flagged rows: {flagged or 'none'}")


# 4-5: likelihood oracles and EM monotonicity


def test_criterion_04_likelihood_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        k, J, n = int(rng.integers(1, 5)), int(rng.integers(2, 11)), int(rng.integers(1, 51))
        Y = rng.integers(0, 2, size=(n, J))
        lc = LcParams(rng.dirichlet(np.ones(k)), rng.uniform(0.01, 0.99, (J, k)))
        got = lc_loglik(lc, Y)
        worst = max(worst, abs(got - naive_lc_loglik(Y, lc.weights, lc.success_probs)) / max(1.0, abs(got)))
        pl = random_twopl(rng, k, int(rng.integers(1, min(3, J) + 1)), J)
        lam = naive_2pl_lambda(pl.gamma, pl.beta, pl.theta, pl.partition.assignment)
        got = twopl_loglik(pl, Y)
        worst = max(worst, abs(got - naive_lc_loglik(Y, pl.weights, lam)) / max(1.0, abs(got)))
    elapsed = time.perf_counter() - start
    record(4, worst < 1e-12 and elapsed < 5, f"max scaled error {worst:.2e} on 100 LC + 100 2PL instances, "
                                            f"{elapsed:.2f} s")


@pytest.mark.slow
def test_criterion_05_em_monotone():
    start = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(55)
    config = FitConfig(n_random_starts=0)
    for seed in range(50):
        lc = LcParams(rng.dirichlet(np.ones(3)), rng.uniform(0.1, 0.9, (8, 3)))
        data = simulate(GeneratorSpec(lc, 400, seed)).data
        fit = em_fit_lc(data, 3, config)
        worst = min(worst, float(np.diff(fit.loglik_trace).min()))
    for seed in range(50):
        pl = random_twopl(rng, 3, 2, 8)
        data = simulate(GeneratorSpec(pl, 400, seed)).data
        fit = em_fit_2pl(data, pl.partition, 3, config)
        worst = min(worst, float(np.diff(fit.loglik_trace).min()))
    elapsed = time.perf_counter() - start
    record(5, worst >= -1e-8 and elapsed < 60,
           f"largest decrease {-worst:.2e} over 50 LC + 50 2PL fits, {elapsed:.1f} s")


# 6-7: recovery and score check


@pytest.fixture(scope="module")
def recovery_2pl_fits():
    truth = recovery_2pl()
    start = time.perf_counter()
    fits = []
    for seed in range(10):
        data = simulate(GeneratorSpec(truth, 3000, seed)).data
        fits.append((data, em_fit_2pl(data, truth.partition, 3)))
    return truth, fits, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_06_recovery(recovery_2pl_fits):
    truth_lc = well_separated_lc()
    start = time.perf_counter()
    lc_errors = []
    for seed in range(100, 110):
        data = simulate(GeneratorSpec(truth_lc, 2000, seed)).data
        fit = em_fit_lc(data, 3)
        lc_errors.append(best_permutation_error(fit.params.success_probs, truth_lc.success_probs, axis=1))
    lc_time = time.perf_counter() - start
    lc_pass = sum(e < 0.05 for e in lc_errors)

    truth, fits, pl_time = recovery_2pl_fits
    free = truth.free_mask()
    pl_pass = 0
    details = []
    for _, fit in fits:
        g_err = float((np.abs(fit.params.gamma - truth.gamma) / truth.gamma)[free].max())
        t_err = min(float(np.abs(fit.params.theta[list(p)] - truth.theta).max())
                    for p in itertools.permutations(range(3)))
        pl_pass += g_err < 0.15 and t_err < 0.2
        details.append(f"{g_err:.3f}/{t_err:.3f}")
    print("2PL gamma rel / theta abs errors:", ", ".join(details))
    total = lc_time + pl_time
    ok = lc_pass >= 9 and pl_pass >= 8 and total < 300
    record(6, ok, f"LC {lc_pass}/10 (max err {max(lc_errors):.3f}), 2PL {pl_pass}/10, {total:.1f} s")


def _finite_difference_score(params, N, S, h, config):
    """Central differences of the expected complete-data log-likelihood, free and off-bound only."""
    grads = []

    def q(gamma, beta, theta):
        return expected_complete_loglik(TwoPlParams(params.weights, gamma, beta, theta, params.partition), N, S)

    base = (params.gamma, params.beta, params.theta)
    free = params.free_mask()
    bounds = ((config.gamma_min, config.gamma_max), (-config.beta_max, config.beta_max),
              (-config.theta_max, config.theta_max))
    for which, arr in enumerate(base):
        for idx in np.ndindex(arr.shape):
            if which < 2 and not free[idx[0]]:
                continue
            lo, hi = bounds[which]
            if arr[idx] - h <= lo or arr[idx] + h >= hi:
                continue
            plus, minus = [a.copy() for a in base], [a.copy() for a in base]
            plus[which][idx] += h
            minus[which][idx] -= h
            grads.append((q(*plus) - q(*minus)) / (2 * h))
    return np.array(grads)


def test_criterion_07_score_check(recovery_2pl_fits):
    _, fits, _ = recovery_2pl_fits
    config = FitConfig()
    worst = 0.0
    converged = 0
    for data, fit in fits:
        if not fit.converged:
            continue
        converged += 1
        N, S = sufficient_statistics(fit, data)
        worst = max(worst, float(np.abs(_finite_difference_score(fit.params, N, S, 1e-5, config)).max()))
    ok = converged == len(fits) and worst < 1e-4
    record(7, ok, f"max |central-difference gradient| {worst:.2e} at {converged} converged fits (limit 1e-4)")


# 8-10: LR test, chi-square tail, clustering


@pytest.mark.slow
def test_criterion_08_lr_identity_and_calibration():
    truth = null_merge_2pl()
    one = truth.partition
    two = DimensionPartition((1,) * 5 + (2,) * 5)
    config = FitConfig(n_random_starts=2)
    start = time.perf_counter()
    rejections, identity, lrs = 0, 0.0, []
    for r in range(200):
        data = simulate(GeneratorSpec(truth, 1000, 1000 + r)).data
        reduced = em_fit_2pl(data, one, 3, config)
        full = em_fit_2pl(data, two, 3, config, warm_start=embed_split(reduced.params, two))
        test = lr_test(data, full, reduced)
        identity = max(identity, abs(test.lr - test.pattern_lr))
        rejections += test.p_value < 0.05
        lrs.append(test.lr)
    elapsed = time.perf_counter() - start
    rate = rejections / 200
    ok = identity < 1e-8 and 0.025 <= rate <= 0.10 and elapsed < 600
    record(8, ok, f"pattern-sum identity err {identity:.1e}; null rejection rate {rate:.3f} "
                  f"(mean LR {np.mean(lrs):.3f}, df=1), {elapsed:.0f} s")


def _quadrature_sf(x, df):
    if x == 0:
        return 1.0
    k = df / 2.0
    log_norm = -k * math.log(2.0) - math.lgamma(k)

    def pdf(t):
        return math.exp(log_norm + (k - 1) * math.log(t) - t / 2) if t > 0 else (0.5 if df == 2 else 0.0)

    upper, _ = integrate.quad(pdf, x, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
    if upper < 0.5:
        return upper
    lower, _ = integrate.quad(pdf, 0.0, x, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 1.0 - lower


def test_criterion_09_chi2_tail():
    xs = np.linspace(0.0, 50.0, 201)
    closed = max(abs(chi2_sf(x, 2) - math.exp(-x / 2)) for x in xs)
    quad = max(abs(chi2_sf(x, df) - _quadrature_sf(x, df)) for df in range(1, 11) for x in xs[::4])
    table6 = chi2_sf(0.379, 4)
    ok = closed < 1e-12 and quad < 1e-8 and abs(table6 - 0.984) <= 0.005
    record(9, ok, f"df=2 closed-form err {closed:.1e}; quadrature err {quad:.1e}; sf(0.379, 4) = {table6:.4f}")


@pytest.mark.slow
def test_criterion_10_clustering():
    truth = redundant_groups_2pl()
    nominal = DimensionPartition((1,) * 4 + (2,) * 4 + (3,) * 4)
    config = FitConfig(n_random_starts=4)
    start = time.perf_counter()
    hits = []
    for seed in range(10):
        data = simulate(GeneratorSpec(truth, 2000, seed)).data
        path = cluster_dimensions(data, nominal, 3, 0.05, config)
        hits.append(path.steps[0].pair == ((1,), (2,)) and path.selected.s == 2)
    elapsed = time.perf_counter() - start
    record(10, sum(hits) >= 8 and elapsed < 300,
           f"redundant pair merged first and s=2 selected on {sum(hits)}/10 seeds, {elapsed:.1f} s")


# 11-12: selection structure and determinism


def test_criterion_11_selection_properties():
    rng = np.random.default_rng(11)
    structural = True
    for _ in range(200):
        J = int(rng.integers(1, 40))
        dims = rng.integers(1, 6, J)
        dims[: min(J, 5)] = np.arange(1, min(J, 5) + 1)
        raw = rng.uniform(0, 3, J)
        raw[rng.random(J) < 0.1] = 0.0
        report = report_from_scores(raw, dims)
        rows = threshold_sweep(report).rows
        counts = np.array([r.counts for r in rows])
        structural &= bool((np.diff(counts, axis=0) <= 0).all())
        structural &= rows[0].total == J
        structural &= rows[-1].retained == tuple(r.index for r in report.rows if r.is_max)

    t5 = _rows("paper_table5.csv")
    dims = [int(r["dimension"]) for r in t5]
    sweep = threshold_sweep(report_from_relative([float(r["Dstar"]) for r in t5], dims))
    ours = [(s.threshold, *s.counts, s.total) for s in sweep.rows]
    group_sizes = tuple(dims.count(d) for d in range(1, 9))
    rows_0_1 = ours[0][1:9] == group_sizes and ours[-1][1:] == (1,) * 8 + (8,)
    exact = ours == [tuple(map(float, r[:1])) + r[1:] for r in TABLE7]

    # the LC-based count table is reported, not asserted: its extreme rows disagree with its own item table
    t4 = _rows("paper_table4.csv")
    lc = threshold_sweep(report_from_relative([float(r["D"]) for r in t4], [int(r["dimension"]) for r in t4]))
    for t, published in LC_SWEEP_ROWS.items():
        row = next(s for s in lc.rows if s.threshold == t)
        got = (*row.counts, row.total)
        if got != published:
            print(f"LC count table row {t}: recomputed {got}, published {published}")

    ok = structural and rows_0_1 and exact
    record(11, ok, f"monotone/0-keeps-all/1-keeps-maxima on 200 random reports: {structural}; "
                   f"Table 7 rows 0.0 and 1.0 structure: {rows_0_1}; full Table 7 from D*: {exact}")


def test_criterion_12_determinism(tmp_path):
    truth = redundant_groups_2pl()
    codes = tuple(f"Q{j + 1}" for j in range(12))
    data = simulate(GeneratorSpec(truth, 1500, 7, codes)).data
    data_path = tmp_path / "data.csv"
    data.save(data_path)
    part_path = tmp_path / "partition.csv"
    part_path.write_text(DimensionPartition((1,) * 4 + (2,) * 4 + (3,) * 4).to_csv(codes))
    config = FitConfig(seed=99, n_random_starts=3, threads=2)
    bundles = []
    for run in ("a", "b"):
        out = tmp_path / run
        run_pipeline(data_path, part_path, out, [1, 2, 3, 4], 0.5, config)
        bundles.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = bundles[0] == bundles[1]
    diff = [name for name in bundles[0] if bundles[0][name] != bundles[1].get(name)]
    record(12, same and len(bundles[0]) >= 15,
           f"{len(bundles[0])} files byte-identical across two runs: {same}{' ' + str(diff) if diff else ''}")
