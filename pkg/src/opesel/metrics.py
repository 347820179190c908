"""Evaluation metrics for estimator and policy selection."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def relative_regret_e(true_mse, selected: int) -> float:
    """Excess MSE of the selected estimator relative to the best one."""
    mse = np.asarray(true_mse, dtype=float)
    best = mse.min()
    if best <= 0:
        raise ZeroDivisionError("best true MSE is zero; relative regret is undefined")
    return float((mse[selected] - best) / best)


def relative_regret_p(true_values, selected: int) -> float:
    """Value shortfall of the selected policy relative to the best one."""
    v = np.asarray(true_values, dtype=float)
    best = v.max()
    if best <= 0:
        raise ZeroDivisionError("best policy value is not positive; relative regret is undefined")
    return float((best - v[selected]) / best)


def spearman_rank_correlation(a, b) -> float:
    """Pearson correlation of average-tie ranks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or a.shape != b.shape or a.size < 2:
        raise ValueError("need two equal-length vectors with at least two entries")
    ra, rb = rankdata(a) - (a.size + 1) / 2, rankdata(b) - (b.size + 1) / 2
    denom = np.sqrt(np.sum(ra * ra) * np.sum(rb * rb))
    if denom == 0:
        raise ValueError("rank correlation is undefined for a constant vector")
    return float(np.clip(np.sum(ra * rb) / denom, -1.0, 1.0))
