"""
Summary statistics and rank tests for comparing per-seed run results.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

QUARTILE_METHOD = "linear interpolation at positions (n-1)*{0.25, 0.5, 0.75}"
EXACT_MAX_N = 16
TEST_CONVENTION = (
    "two-sided Mann-Whitney U with midranks; exact null distribution when "
    f"n_a + n_b <= {EXACT_MAX_N} and no ties, otherwise normal approximation "
    "with tie-corrected variance and 0.5 continuity correction"
)
_TINY = np.nextafter(0.0, 1.0)


@dataclass(frozen=True)
class SampleSummary:
    median: float
    q1: float
    q3: float
    n: int
    values: tuple[float, ...]


def summarise(values: Sequence[float]) -> SampleSummary:
    if len(values) == 0:
        raise ValueError("cannot summarise an empty sample")
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    return SampleSummary(float(med), float(q1), float(q3), len(v), tuple(v.tolist()))


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


@functools.lru_cache(maxsize=None)
def _u_counts(m: int, n: int) -> tuple[int, ...]:
    """Number of rank arrangements giving each U = 0..m*n for sample sizes m, n."""
    # f(m, n, u) = f(m-1, n, u-n) + f(m, n-1, u)
    if m == 0 or n == 0:
        return (1,)
    a = _u_counts(m - 1, n)
    b = _u_counts(m, n - 1)
    out = [0] * (m * n + 1)
    for u, c in enumerate(a):
        out[u + n] += c
    for u, c in enumerate(b):
        out[u] += c
    return tuple(out)


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """U statistic of ``a`` and the two-sided p-value."""
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise ValueError("both samples must be non-empty")
    combined = np.concatenate([np.asarray(a, float), np.asarray(b, float)])
    ranks = midranks(combined)
    u = float(ranks[:na].sum() - na * (na + 1) / 2)
    n = na + nb
    _, tie_sizes = np.unique(combined, return_counts=True)
    has_ties = bool((tie_sizes > 1).any())

    if n <= EXACT_MAX_N and not has_ties:
        counts = _u_counts(na, nb)
        k = int(round(u))
        lower = sum(counts[: k + 1])
        upper = sum(counts[k:])
        p = min(1.0, 2 * min(lower, upper) / math.comb(n, na))
        return u, max(p, _TINY)

    mean = na * nb / 2
    tie_term = float((tie_sizes**3 - tie_sizes).sum()) / (n * (n - 1))
    var = na * nb / 12 * ((n + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    z = max(abs(u - mean) - 0.5, 0.0) / math.sqrt(var)
    p = math.erfc(z / math.sqrt(2))
    return u, min(1.0, max(p, _TINY))


@dataclass
class ComparisonVerdict:
    best_group: str
    tied_with_best: set[str]
    p_values: dict[tuple[str, str], float] = field(default_factory=dict)
    summaries: dict[str, SampleSummary] = field(default_factory=dict)


def compare_groups(groups: Mapping[str, Sequence[float]], alpha: float = 0.05) -> ComparisonVerdict:
    """Find the group with the lowest median and the groups statistically tied with it."""
    if not groups:
        raise ValueError("no groups to compare")
    if any(len(v) == 0 for v in groups.values()):
        raise ValueError("every group needs at least one value")
    names = sorted(groups)
    summaries = {g: summarise(groups[g]) for g in names}
    best = min(names, key=lambda g: (summaries[g].median, g))
    p_values = {}
    for i, g in enumerate(names):
        for h in names[i + 1 :]:
            p = mann_whitney_u(groups[g], groups[h])[1]
            p_values[(g, h)] = p_values[(h, g)] = p
    tied = {best} | {g for g in names if g != best and p_values[(g, best)] >= alpha}
    return ComparisonVerdict(best, tied, p_values, summaries)
