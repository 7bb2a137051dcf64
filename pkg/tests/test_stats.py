import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from slotfilter import stats
from slotfilter.errors import UndefinedTestError, UsageError


def test_mcnemar_hand_values():
    assert stats.mcnemar_from_counts(10, 20)[0] == 2.7
    assert stats.mcnemar_from_counts(5, 5)[0] == 0.1


def test_mcnemar_p_value_example():
    assert abs(stats.chi2_sf(2.02, 1) - 0.16) <= 0.005


def test_mcnemar_from_bitmaps():
    a = [1, 1, 0, 0, 1, 0, 1]
    b = [0, 1, 1, 0, 0, 0, 1]
    assert stats.discordant_counts(a, b) == (2, 1)
    chi2, p = stats.mcnemar(a, b)
    assert chi2 == 0.0 and p == 1.0


def test_mcnemar_uncorrected():
    assert stats.mcnemar_from_counts(10, 20, correction=False)[0] == pytest.approx(100 / 30)


def test_mcnemar_undefined():
    with pytest.raises(UndefinedTestError):
        stats.mcnemar([1, 0, 1], [1, 0, 1])


def test_mcnemar_length_mismatch():
    with pytest.raises(UsageError):
        stats.mcnemar([1, 0], [1])


@given(st.integers(0, 500), st.integers(0, 500))
def test_mcnemar_symmetric(b, c):
    if b + c == 0:
        return
    assert stats.mcnemar_from_counts(b, c) == stats.mcnemar_from_counts(c, b)
    chi2, p = stats.mcnemar_from_counts(b, c)
    assert 0.0 < p <= 1.0


@given(st.floats(0, 700), st.integers(1, 30))
def test_chi2_sf_matches_scipy(x, df):
    want = sps.chi2.sf(x, df)
    got = stats.chi2_sf(x, df)
    assert abs(got - want) <= 1e-10 * max(want, 1e-300) or abs(got - want) < 1e-300


@given(st.floats(0.001, 60), st.floats(0.001, 60))
def test_chi2_sf_monotone(x, y):
    lo, hi = sorted((x, y))
    assert stats.chi2_sf(lo) >= stats.chi2_sf(hi)


def test_gamma_q_edges():
    assert stats.chi2_sf(0.0) == 1.0
    with pytest.raises(UsageError):
        stats.gamma_q(0.0, 1.0)


def test_aggregate_examples():
    assert stats.aggregate_seeds([90.0]) == (90.0, 90.0, 0.0)
    assert stats.aggregate_seeds([78.2, 78.5, 78.8]) == (78.5, 78.5, 0.3)


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=6))
def test_aggregate_permutation_invariant(vals):
    ref = stats.aggregate_seeds(vals)
    for perm in itertools.islice(itertools.permutations(vals), 10):
        assert stats.aggregate_seeds(list(perm)) == ref


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=6))
def test_aggregate_matches_numpy(vals):
    med, mean, std = stats.aggregate_seeds(vals)
    assert med == pytest.approx(np.median(vals), abs=1e-9)
    assert mean == pytest.approx(np.mean(vals), abs=1e-9)
    assert std == pytest.approx(np.std(vals, ddof=1), abs=1e-9)


def test_aggregate_reports_and_errors():
    class R:
        def __init__(self, a):
            self.accuracy = a
    assert stats.aggregate_seeds([R(1.0), R(3.0), R(2.0)])[0] == 2.0
    with pytest.raises(UsageError):
        stats.aggregate_seeds([])
