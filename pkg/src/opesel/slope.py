"""SLOPE: Lepski-style choice of an estimator's built-in hyperparameter."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError

SLOPE_FACTOR = math.sqrt(6.0) - 1.0
DEFAULT_DELTA = 0.05


def cnf_width(contributions: np.ndarray, delta: float = DEFAULT_DELTA) -> float:
    """Empirical-Bernstein half-width for the mean of ``contributions``.

    ``sqrt(2 Var ln(3/delta) / n) + 3 R ln(3/delta) / n`` where ``Var`` is the
    empirical (ddof=0) variance and ``R`` the largest absolute contribution.
    """
    c = np.asarray(contributions, dtype=float)
    n = c.size
    if n < 2:
        raise InsufficientDataError("confidence width needs at least two contributions")
    log_term = math.log(3.0 / delta)
    var = float(np.var(c))
    r = float(np.max(np.abs(c)))
    return math.sqrt(2.0 * var * log_term / n) + 3.0 * r * log_term / n


@dataclass(frozen=True)
class TuningProblem:
    """Point estimates and widths for an ordered hyperparameter list.

    Index 0 should be the least biased / widest candidate; widths are expected
    to be non-increasing along the list.
    """

    estimates: np.ndarray
    widths: np.ndarray

    def __post_init__(self) -> None:
        est = np.asarray(self.estimates, dtype=float)
        wid = np.asarray(self.widths, dtype=float)
        if est.ndim != 1 or est.shape != wid.shape or est.size == 0:
            raise ValueError("estimates and widths must be equal-length nonempty vectors")
        if np.any(wid < 0):
            raise ValueError("confidence widths must be nonnegative")
        object.__setattr__(self, "estimates", est)
        object.__setattr__(self, "widths", wid)

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.widths) <= 0))


def slope_select(problem: TuningProblem) -> int:
    """Return the 0-based index chosen by SLOPE.

    Candidates are scanned in order; the first index whose estimate leaves the
    envelope ``width_m + (sqrt(6) - 1) width_m'`` of some earlier candidate
    ends the scan, and the previous index is returned.
    """
    v, c = problem.estimates, problem.widths
    for m in range(1, v.size):
        gap = np.abs(v[m] - v[:m])
        if np.any(gap > c[m] + SLOPE_FACTOR * c[:m]):
            return m - 1
    return v.size - 1
