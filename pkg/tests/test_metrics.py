import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opesel.metrics import relative_regret_e, relative_regret_p, spearman_rank_correlation
from opesel.selection import select_estimator


def test_select_examples():
    assert select_estimator([3.0, 1.0, 2.0]) == 1
    assert select_estimator([5.0]) == 0
    assert select_estimator([2.0, 2.0, 2.0]) == 0
    with pytest.raises(ValueError):
        select_estimator([])


def test_regret_examples():
    assert relative_regret_e([1.0, 2.0], 0) == 0.0
    assert relative_regret_e([1.0, 2.0], 1) == pytest.approx(1.0)
    assert relative_regret_e([4.0, 1.0, 2.0], 2) == pytest.approx(1.0)
    with pytest.raises(ZeroDivisionError):
        relative_regret_e([0.0, 1.0], 1)
    assert relative_regret_p([0.5, 0.8], 1) == 0.0
    assert relative_regret_p([0.5, 0.8], 0) == pytest.approx(0.375)


def test_spearman_examples():
    assert spearman_rank_correlation([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman_rank_correlation([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman_rank_correlation([1, 2, 3, 4, 5], [1, 3, 2, 5, 4]) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        spearman_rank_correlation([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman_rank_correlation([1], [1])


def test_spearman_with_ties_uses_average_ranks():
    from scipy.stats import spearmanr
    a, b = [1, 2, 2, 3, 5], [2, 1, 4, 4, 3]
    assert spearman_rank_correlation(a, b) == pytest.approx(spearmanr(a, b).statistic)


vectors = st.lists(st.integers(-100, 100), min_size=2, max_size=15, unique=True)


@settings(max_examples=100, deadline=None)
@given(vectors, st.floats(0.01, 100))
def test_argmin_is_scale_invariant(v, c):
    assert select_estimator(np.abs(v)) == select_estimator(c * np.abs(np.array(v)))


@settings(max_examples=100, deadline=None)
@given(vectors)
def test_spearman_invariant_under_monotone_maps(v):
    v = np.array(v, dtype=float)
    other = np.arange(len(v))[::-1].astype(float)
    base = spearman_rank_correlation(v, other)
    assert spearman_rank_correlation(np.exp(v / 50), other) == pytest.approx(base)
    assert spearman_rank_correlation(v**3, other) == pytest.approx(base)
