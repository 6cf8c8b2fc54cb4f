import math
import os
import subprocess
import sys

import numpy as np
import pytest
from conftest import best_permutation_error, naive_lc_loglik, well_separated_lc
from hypothesis import given, settings
from hypothesis import strategies as st

from lcirt.config import FitConfig
from lcirt.data import ResponseMatrix
from lcirt.errors import NumericalError, StartAborted
from lcirt.lc import (
    LcParams,
    bic,
    em_fit_lc,
    lc_loglik,
    lc_n_params,
    posterior_assign,
    run_lc_em,
    select_k,
)
from lcirt.simulate import GeneratorSpec, simulate


def test_single_bernoulli():
    params = LcParams(np.array([1.0]), np.array([[0.5]]))
    assert lc_loglik(params, np.array([[1]])) == pytest.approx(-0.693147, abs=1e-6)


def test_identical_classes_equal_one_class():
    rng = np.random.default_rng(0)
    lam = rng.uniform(0.1, 0.9, size=(5, 1))
    Y = rng.integers(0, 2, size=(20, 5))
    one = LcParams(np.array([1.0]), lam)
    two = LcParams(np.array([0.5, 0.5]), np.hstack([lam, lam]))
    assert lc_loglik(two, Y) == pytest.approx(lc_loglik(one, Y), abs=1e-12)


@given(st.integers(1, 4), st.integers(1, 10), st.integers(1, 50), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_loglik_matches_naive_oracle(k, J, n, seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.01, 0.99, size=(J, k))
    w = rng.dirichlet(np.ones(k))
    Y = rng.integers(0, 2, size=(n, J))
    got = lc_loglik(LcParams(w, lam), Y)
    assert got == pytest.approx(naive_lc_loglik(Y, w, lam), abs=1e-12 * max(1.0, abs(got)))


def test_loglik_permutation_invariant():
    rng = np.random.default_rng(3)
    params = LcParams(rng.dirichlet(np.ones(4)), rng.uniform(0.1, 0.9, (6, 4)))
    Y = rng.integers(0, 2, size=(40, 6))
    assert lc_loglik(params.permute([2, 0, 3, 1]), Y) == pytest.approx(lc_loglik(params, Y), abs=1e-10)


def test_loglik_shape_mismatch():
    params = LcParams(np.array([1.0]), np.full((3, 1), 0.5))
    with pytest.raises(ValueError, match="items"):
        lc_loglik(params, np.zeros((2, 4), dtype=np.uint8))


def test_loglik_no_underflow_for_many_items():
    params = LcParams(np.array([0.5, 0.5]), np.full((400, 2), 0.01))
    Y = np.ones((2, 400), dtype=np.uint8)
    value = lc_loglik(params, Y)
    assert math.isfinite(value)
    assert value == pytest.approx(2 * 400 * math.log(0.01))


def test_n_params_and_bic_identity():
    assert [lc_n_params(k, 89) for k in range(1, 8)] == [89, 179, 269, 359, 449, 539, 629]
    assert bic(-37175.939, 89, 1699) == pytest.approx(75013.842, abs=0.01)
    assert bic(-29423.379, 539, 1699) == pytest.approx(62855.730, abs=0.01)


def test_one_class_is_column_means():
    rng = np.random.default_rng(0)
    data = ResponseMatrix((rng.random((500, 6)) < 0.3).astype(np.uint8))
    fit = em_fit_lc(data, 1, FitConfig(n_random_starts=0))
    expected = np.clip(data.values.mean(axis=0), 1e-6, 1 - 1e-6)
    np.testing.assert_allclose(fit.params.success_probs[:, 0], expected, atol=1e-15)
    assert fit.converged


def test_separable_patterns():
    Y = np.array([[1, 1, 1, 0, 0, 0]] * 30 + [[0, 0, 0, 1, 1, 1]] * 20, dtype=np.uint8)
    fit = em_fit_lc(ResponseMatrix(Y), 2, FitConfig(n_random_starts=3))
    post = fit.posteriors
    assert (np.isclose(post, 0, atol=1e-6) | np.isclose(post, 1, atol=1e-6)).all()
    lam = fit.params.success_probs
    # class order puts the low first-item class first
    np.testing.assert_allclose(lam[:, 0], [0, 0, 0, 1, 1, 1], atol=1e-5)
    np.testing.assert_allclose(lam[:, 1], [1, 1, 1, 0, 0, 0], atol=1e-5)
    np.testing.assert_allclose(fit.params.weights, [0.4, 0.6], atol=1e-9)


def test_fit_invariants():
    data = simulate(GeneratorSpec(well_separated_lc(), 600, 1)).data
    fit = em_fit_lc(data, 3, FitConfig(n_random_starts=3))
    np.testing.assert_allclose(fit.posteriors.sum(axis=1), 1.0, atol=1e-10)
    assert fit.bic == -2 * fit.loglik + fit.n_params * math.log(data.n)
    assert fit.n_params == 3 * 15 + 2
    assert np.all(np.diff(fit.params.success_probs[0]) >= 0)
    assert sorted(fit.class_order) == [0, 1, 2]
    assert abs(fit.params.weights.sum() - 1) < 1e-12
    assert (fit.params.success_probs >= 1e-6).all() and (fit.params.success_probs <= 1 - 1e-6).all()


def test_recovery_single_seed():
    truth = well_separated_lc()
    data = simulate(GeneratorSpec(truth, 2000, 100)).data
    fit = em_fit_lc(data, 3)
    assert best_permutation_error(fit.params.success_probs, truth.success_probs, axis=1) < 0.05


def test_em_monotone_every_start():
    rng = np.random.default_rng(4)
    data = simulate(GeneratorSpec(LcParams(rng.dirichlet(np.ones(3)), rng.uniform(0.1, 0.9, (8, 3))), 300, 2)).data
    cfg = FitConfig()
    from lcirt.lc import random_start, start_rng

    for r in range(1, 6):
        w0, lam0 = random_start(data.values, 3, start_rng(0, r))
        trace = np.array(run_lc_em(data.values, w0, lam0, cfg).trace)
        assert np.diff(trace).min() >= -1e-10


def test_deterministic_and_thread_independent():
    data = simulate(GeneratorSpec(well_separated_lc(), 400, 5)).data
    a = em_fit_lc(data, 3, FitConfig(n_random_starts=4, threads=1))
    b = em_fit_lc(data, 3, FitConfig(n_random_starts=4, threads=4))
    assert a.loglik == b.loglik
    assert np.array_equal(a.params.success_probs, b.params.success_probs)
    assert a.start == b.start


def test_k_greater_than_n_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        em_fit_lc(ResponseMatrix(np.array([[1, 0], [0, 1]])), 3)


def test_empty_class_aborts_start():
    Y = np.ones((10, 3), dtype=np.uint8)
    with pytest.raises(StartAborted, match="emptied at iteration 1"):
        run_lc_em(Y, np.array([1 - 1e-12, 1e-12]), np.full((3, 2), 0.5), FitConfig())


def test_all_starts_failing_is_numerical_error(monkeypatch):
    import lcirt.lc as lc

    def boom(*args, **kwargs):
        raise StartAborted("class 2 emptied at iteration 3")

    monkeypatch.setattr(lc, "run_lc_em", boom)
    with pytest.raises(NumericalError, match="every start"):
        em_fit_lc(ResponseMatrix(np.eye(4, dtype=np.uint8)), 2, FitConfig(n_random_starts=1))


def test_select_k_structure_and_ties():
    data = simulate(GeneratorSpec(well_separated_lc(), 800, 3)).data
    table = select_k(data, range(1, 5), FitConfig(n_random_starts=3))
    assert [r.k for r in table.rows] == [1, 2, 3, 4]
    assert table.selected == 3
    assert [r.n_params for r in table.rows] == [lc_n_params(k, 15) for k in range(1, 5)]


def test_select_k_single():
    data = simulate(GeneratorSpec(well_separated_lc(), 200, 3)).data
    table = select_k(data, [3], FitConfig(n_random_starts=1))
    assert len(table.rows) == 1 and table.selected == 3


@pytest.mark.slow
def test_select_k_prefers_one_class_on_homogeneous_data():
    params = LcParams(np.array([1.0]), np.full((8, 1), 0.3))
    picks = [
        select_k(simulate(GeneratorSpec(params, 2000, seed)).data, range(1, 4), FitConfig(n_random_starts=2)).selected
        for seed in range(10)
    ]
    assert picks.count(1) >= 9


def test_posterior_assign_cases():
    sym = LcParams(np.array([0.5, 0.5]), np.array([[0.2, 0.8], [0.8, 0.2]]))
    np.testing.assert_allclose(posterior_assign(sym, [1, 1]), [0.5, 0.5], atol=1e-15)
    degenerate = LcParams(np.array([1.0, 0.0, 0.0]), np.full((2, 3), 0.5))
    np.testing.assert_allclose(posterior_assign(degenerate, [0, 1]), [1.0, 0.0, 0.0])
    rng = np.random.default_rng(9)
    params = LcParams(rng.dirichlet(np.ones(3)), rng.uniform(0.05, 0.95, (5, 3)))
    y = np.array([1, 0, 1, 1, 0])
    joint = params.weights * np.prod(np.where(y[:, None] == 1, params.success_probs, 1 - params.success_probs), axis=0)
    np.testing.assert_allclose(posterior_assign(params, y), joint / joint.sum(), atol=1e-12)
    with pytest.raises(ValueError, match="length"):
        posterior_assign(params, [1, 0])


def test_python_backend_gives_same_fit():
    code = (
        "import numpy as np\n"
        "from lcirt.lc import em_fit_lc\nfrom lcirt.config import FitConfig\n"
        "from lcirt.simulate import GeneratorSpec, simulate\nfrom lcirt.lc import LcParams\n"
        "lam = np.full((8, 2), 0.2); lam[:, 1] = 0.8\n"
        "d = simulate(GeneratorSpec(LcParams(np.array([0.4, 0.6]), lam), 300, 1)).data\n"
        "f = em_fit_lc(d, 2, FitConfig(n_random_starts=2))\n"
        "print(repr(f.loglik))\n"
    )
    outs = {}
    for backend in ("python", "default"):
        env = dict(os.environ, LCIRT_BACKEND=backend)
        outs[backend] = float(subprocess.check_output([sys.executable, "-c", code], env=env, text=True))
    assert outs["python"] == pytest.approx(outs["default"], abs=1e-9)
