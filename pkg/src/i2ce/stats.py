"""Rank correlation statistics: Kendall tau-b, Spearman rho, Pearson r, and
pairwise correlation matrices over a metric score table.

Tau-b is computed with the sort-and-merge counting approach, so it stays
O(n log n) and exactly matches the all-pairs definition.  Degenerate inputs
(a constant series) raise DegenerateInputError instead of returning a
silent zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateInputError(ValueError):
    """The statistic is undefined for this input (e.g. constant series)."""


def _as_pair(xs, ys) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise ValueError(f"expected equal-length 1-D samples, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least two paired observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    return x, y


def _tie_pairs(sorted_vals: np.ndarray) -> int:
    total = 0
    run = 1
    for i in range(1, len(sorted_vals)):
        if sorted_vals[i] == sorted_vals[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


def _joint_tie_pairs(x_sorted: np.ndarray, y_sorted: np.ndarray) -> int:
    total = 0
    run = 1
    for i in range(1, len(x_sorted)):
        if x_sorted[i] == x_sorted[i - 1] and y_sorted[i] == y_sorted[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


def _count_inversions(a: np.ndarray) -> int:
    """Strict inversions (i < j with a[i] > a[j]) via bottom-up merge sort."""
    a = a.copy()
    buf = np.empty_like(a)
    n = len(a)
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    j += 1
                    inversions += mid - i
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            buf[k:k + (mid - i)] = a[i:mid]
            k += mid - i
            buf[k:k + (hi - j)] = a[j:hi]
            a[lo:hi] = buf[lo:hi]
        width *= 2
    return inversions


def kendall_tau(xs, ys) -> float:
    """Tie-corrected Kendall correlation (tau-b):
    (C - D) / sqrt((n0 - tx)(n0 - ty)) over all observation pairs."""
    x, y = _as_pair(xs, ys)
    n = len(x)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInputError("kendall tau is undefined for a constant series")
    order = np.lexsort((y, x))
    xs_, ys_ = x[order], y[order]
    n0 = n * (n - 1) // 2
    tx = _tie_pairs(xs_)
    ty = _tie_pairs(np.sort(y))
    txy = _joint_tie_pairs(xs_, ys_)
    discordant = _count_inversions(ys_)
    con_minus_dis = n0 - tx - ty + txy - 2 * discordant
    return con_minus_dis / np.sqrt(float(n0 - tx) * float(n0 - ty))


def average_ranks(xs) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    x = np.asarray(xs, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson_r(xs, ys) -> float:
    """Pearson correlation via raw moments.

    With num = n*Sxy - Sx*Sy and var terms dx, dy, the result is
    sign(num) * sqrt(num^2 / (dx*dy)): on integer-valued inputs every moment
    is an exact float, and affine rescaling multiplies num^2 and dx*dy by
    the same exact factor, so the correlation is exactly invariant.
    """
    x, y = _as_pair(xs, ys)
    n = len(x)
    sx, sy = x.sum(), y.sum()
    dx = n * (x * x).sum() - sx * sx
    dy = n * (y * y).sum() - sy * sy
    if dx <= 0 or dy <= 0:
        raise DegenerateInputError("pearson r is undefined for a zero-variance series")
    num = n * (x * y).sum() - sx * sy
    ratio = min((num * num) / (dx * dy), 1.0)
    return float(np.copysign(np.sqrt(ratio), num))


def spearman_rho(xs, ys) -> float:
    """Pearson correlation of the average-ranked data."""
    x, y = _as_pair(xs, ys)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInputError("spearman rho is undefined for a constant series")
    return pearson_r(average_ranks(x), average_ranks(y))


@dataclass
class CorrelationResult:
    kendall_tau: float
    spearman_rho: float
    pearson_r: float
    n: int


def correlate(xs, ys) -> CorrelationResult:
    x, y = _as_pair(xs, ys)
    return CorrelationResult(kendall_tau(x, y), spearman_rho(x, y), pearson_r(x, y), len(x))


@dataclass
class MatrixResult:
    names: list[str]
    kendall: np.ndarray
    spearman: np.ndarray
    pearson: np.ndarray
    flagged: list[tuple[str, str, str]]  # (statistic, column a, column b)

    def matrix(self, statistic: str) -> np.ndarray:
        return getattr(self, statistic)


def correlation_matrix(table: np.ndarray, names: list[str]) -> MatrixResult:
    """Pairwise statistics between every pair of metric columns.

    table is (items x metrics).  Diagonals are 1 by definition; cells whose
    statistic is undefined are NaN and listed in flagged.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] < 2 or table.shape[1] != len(names):
        raise ValueError(f"expected an (items >= 2) x {len(names)} score table, got {table.shape}")
    k = len(names)
    mats = {s: np.eye(k) for s in ("kendall", "spearman", "pearson")}
    fns = {"kendall": kendall_tau, "spearman": spearman_rho, "pearson": pearson_r}
    flagged = []
    for i in range(k):
        for j in range(i + 1, k):
            for stat, fn in fns.items():
                try:
                    value = fn(table[:, i], table[:, j])
                except DegenerateInputError:
                    value = np.nan
                    flagged.append((stat, names[i], names[j]))
                mats[stat][i, j] = mats[stat][j, i] = value
    return MatrixResult(list(names), mats["kendall"], mats["spearman"], mats["pearson"], flagged)
