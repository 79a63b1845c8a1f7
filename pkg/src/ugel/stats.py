"""Paired significance testing and per-round summaries.

The Wilcoxon signed-rank test enumerates all 2^n sign assignments exactly
for small n and falls back to a tie-corrected normal approximation (with
continuity correction) for larger n.  Zero differences are dropped; if all
differences are zero the result is degenerate with p = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["WilcoxonResult", "wilcoxon_signed_rank", "mean_and_std"]

EXACT_ENUMERATION_LIMIT = 12


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+, the sum of ranks of positive differences
    p_value: float
    n_nonzero: int
    method: str  # "exact", "normal" or "degenerate"
    degenerate: bool = False


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0])
    i = 0
    while i < values.shape[0]:
        j = i
        while j + 1 < values.shape[0] and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b, exact_limit: int = EXACT_ENUMERATION_LIMIT) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Exact null enumeration of all sign assignments for up to ``exact_limit``
    nonzero differences; normal approximation with tie and continuity
    corrections beyond that.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length 1-d sequences")
    if a.shape[0] < 5:
        raise ValueError("need at least 5 pairs")
    d = a - b
    nonzero = d != 0.0
    d = d[nonzero]
    n = d.shape[0]
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", True)

    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= exact_limit:
        masks = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
        w_all = masks @ ranks
        eps = 1e-9
        p_ge = float(np.mean(w_all >= w_plus - eps))
        p_le = float(np.mean(w_all <= w_plus + eps))
        p = min(1.0, 2.0 * min(p_ge, p_le))
        return WilcoxonResult(w_plus, p, n, "exact")

    mean_w = n * (n + 1) / 4.0
    var_w = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var_w -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    if var_w <= 0.0:
        return WilcoxonResult(w_plus, 1.0, n, "degenerate", True)
    dev = w_plus - mean_w
    # Continuity correction: shrink the deviation by half a step.
    dev_cc = max(abs(dev) - 0.5, 0.0)
    z = dev_cc / math.sqrt(var_w)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return WilcoxonResult(w_plus, p, n, "normal")


def mean_and_std(values) -> tuple[float, float]:
    """Mean and population standard deviation of a sequence."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot summarise an empty sequence")
    return float(v.mean()), float(v.std(ddof=0))
