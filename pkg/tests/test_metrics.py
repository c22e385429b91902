import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from reliroute.errors import InputError
from reliroute.metrics import (
    auc,
    auprc,
    brier,
    ccc,
    classification_report,
    ece,
    empirical_coverage,
    f1_accuracy,
    f1_score,
    hanley_mcneil_ci,
    icc21,
    multiclass_auc,
    regression_metrics,
    round_floats,
    wilson_ci,
)


def test_regression_perfect_fit():
    r = regression_metrics([1, 2, 3], [1, 2, 3])
    assert (r.mae, r.rmse, r.r2, r.ccc) == (0, 0, 1, 1)


def test_regression_hand_example():
    r = regression_metrics([0, 2], [1, 1])
    assert (r.mae, r.rmse, r.r2) == (1, 1, 0)


def test_regression_shift_breaks_concordance():
    y = np.array([1.0, 2.0, 4.0, 7.0])
    r = regression_metrics(y, y + 3)
    assert r.pearson == pytest.approx(1.0)
    assert r.ccc < 1


def test_regression_constant_target_r2_absent():
    assert regression_metrics([2, 2, 2], [1, 2, 3]).r2 is None


def test_spearman_average_ranks():
    r = regression_metrics([1, 2, 2, 3], [1, 2, 2, 3])
    assert r.spearman == pytest.approx(1.0)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=30))
def test_rmse_at_least_mae(pairs):
    y, yhat = zip(*pairs)
    r = regression_metrics(y, yhat)
    assert r.rmse >= r.mae - 1e-9 * max(1.0, r.mae)


def test_auc_examples():
    assert auc([0.9, 0.8], [0.1, 0.2]) == 1
    assert auc([0.5], [0.5]) == 0.5
    assert auc([0.9, 0.4], [0.5, 0.1]) == 0.75
    assert auc([], [0.1]) is None


@given(st.lists(st.integers(0, 20), min_size=1, max_size=15), st.lists(st.integers(0, 20), min_size=1, max_size=15))
def test_auc_monotone_transform_invariant(pos, neg):
    a = auc(pos, neg)
    assert a == pytest.approx(auc(np.exp(np.array(pos) / 4.0), np.exp(np.array(neg) / 4.0)), abs=1e-12)
    assert a == pytest.approx(oracles.pairwise_auc(pos, neg), abs=1e-12)


def test_hanley_mcneil_bounds():
    lo, hi = hanley_mcneil_ci(0.8, 30, 40)
    assert 0 <= lo < 0.8 < hi <= 1
    assert hanley_mcneil_ci(1.0, 5, 5) == (1.0, 1.0)


def test_wilson_reference_rows():
    lo, hi = wilson_ci(round(0.704 * 419), 419)
    assert (round(lo, 3), round(hi, 3)) == (0.659, 0.746)
    lo, hi = wilson_ci(round(0.640 * 50), 50)
    assert (round(lo, 3), round(hi, 3)) == (0.501, 0.759)


def test_wilson_perfect_score():
    lo, hi = wilson_ci(10, 10)
    assert (round(lo, 4), round(hi, 4)) == (0.7225, 1.0)
    assert (lo, hi) == pytest.approx(oracles.wilson_bounds(10, 10), abs=1e-12)


def test_wilson_empty():
    with pytest.raises(InputError):
        wilson_ci(0, 0)


@given(st.integers(1, 500).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_wilson_contains_phat(sn):
    s, n = sn
    lo, hi = wilson_ci(s, n)
    assert 0 <= lo <= s / n <= hi <= 1
    olo, ohi = oracles.wilson_bounds(s, n)
    assert lo == pytest.approx(olo, abs=1e-12) and hi == pytest.approx(ohi, abs=1e-12)


def test_f1_macro_and_binary():
    preds, labels = [0, 1, 1, 2], [0, 1, 2, 2]
    # class 0: 1.0; class 1: 2/3; class 2: 2/3
    assert f1_score(preds, labels) == pytest.approx((1 + 2 / 3 + 2 / 3) / 3)
    assert f1_score([1, 1, 0, 0], [1, 0, 1, 0], average="binary") == 0.5
    f1, acc = f1_accuracy(preds, labels)
    assert acc == 0.75


def test_auprc_examples():
    assert auprc([0.9, 0.8, 0.1], [True, True, False]) == 1
    assert auprc([0.3, 0.9, 0.1], [True, True, True]) == 1
    assert auprc([0.9, 0.8, 0.7], [True, False, True]) == pytest.approx(5 / 6, abs=1e-15)
    assert auprc([0.5], [False]) is None


def test_ece_examples():
    assert ece([[1.0, 0.0], [0.0, 1.0]], [0, 1]) == 0
    assert ece([[0.9, 0.1], [0.9, 0.1]], [0, 1]) == pytest.approx(0.4)


def test_ece_calibrated_by_construction():
    # each bin's mean confidence equals its accuracy
    probs = [[0.75, 0.25]] * 4 + [[0.5, 0.5]] * 2
    labels = [0, 0, 0, 1, 0, 1]
    assert ece(probs, labels) == pytest.approx(0.0, abs=1e-15)


def test_ece_bin_boundaries():
    # confidence exactly 1/15 sits in the first bin, just above it in the second
    p = 1 / 15
    assert ece([[p] * 15], [0]) == pytest.approx(oracles.loop_ece([[p] * 15], [0]))


def test_brier_examples():
    assert brier([[0, 1, 0]], [1]) == 0
    assert brier([[0.5, 0.5]], [0]) == 0.5
    assert brier([[0.6, 0.3, 0.1]], [0]) == pytest.approx(0.26)


@given(st.integers(0, 2**32 - 1))
def test_brier_bounds(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(4), size=10)
    y = rng.integers(0, 4, 10)
    assert 0 <= brier(p, y) <= 2


def test_icc_identical_columns():
    assert icc21([[1, 1], [2, 2], [5, 5]]) == pytest.approx(1.0)


def test_icc_offset_penalized():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    m = np.column_stack([x, x + 10])
    assert icc21(m) < 1
    assert np.corrcoef(m.T)[0, 1] == pytest.approx(1.0)


def test_icc_four_by_two():
    # definitional mean squares: MS_R = 10/3, MS_C = 2, MS_E = 0
    assert icc21([[1, 2], [2, 3], [3, 4], [4, 5]]) == pytest.approx(10 / 13, abs=1e-15)


def test_icc_degenerate_and_errors():
    assert icc21([[3, 3], [3, 3]]) == 1.0
    with pytest.raises(InputError):
        icc21([[1, 2]])
    with pytest.raises(InputError):
        icc21([[1, math.nan], [2, 3]])


def test_icc_target_reordering():
    m = np.array([[1, 2.5], [3, 3.1], [0.2, 1.0], [4, 4.4]])
    assert icc21(m) == pytest.approx(icc21(m[[2, 0, 3, 1]]), abs=1e-12)


def test_coverage_examples():
    assert empirical_coverage([1, 2], [[0, 3], [0, 3]]) == 1
    assert empirical_coverage([0], [[0, 1]]) == 1
    assert empirical_coverage([1, 2, 3], [[0, 1.5]] * 3) == pytest.approx(1 / 3)


def test_ccc_degenerate():
    assert ccc([1, 1], [1, 1]) is None


def test_multiclass_auc_binary_equals_pairwise():
    p = np.array([[0.2, 0.8], [0.6, 0.4], [0.3, 0.7], [0.9, 0.1]])
    y = np.array([1, 1, 0, 0])
    assert multiclass_auc(p, y) == auc([0.8, 0.4], [0.7, 0.1])


def test_classification_report_fields():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(3), size=50)
    y = rng.integers(0, 3, 50)
    rep = classification_report(p, y)
    for v in (rep.accuracy, rep.f1, rep.auc, rep.auprc, rep.ece):
        assert 0 <= v <= 1
    assert rep.accuracy_ci[0] <= rep.accuracy <= rep.accuracy_ci[1]
    assert rep.auc_ci is None


@given(st.integers(0, 2**32 - 1))
def test_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = 12
    p = rng.dirichlet(np.ones(3), size=n)
    y = rng.integers(0, 3, n)
    perm = rng.permutation(n)
    assert ece(p, y) == pytest.approx(ece(p[perm], y[perm]), abs=1e-12)
    assert brier(p, y) == pytest.approx(brier(p[perm], y[perm]), abs=1e-12)
    yr, yh = rng.normal(size=n), rng.normal(size=n)
    assert regression_metrics(yr, yh).mae == pytest.approx(regression_metrics(yr[perm], yh[perm]).mae)


def test_round_floats():
    assert round_floats({"a": [1.23456789, math.inf], "b": (np.float64(2.0000004),)}) == {
        "a": [1.234568, None], "b": [2.0]}
