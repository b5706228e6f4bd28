"""Summary statistics shared by the harness and the test suite."""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy import stats


def exponential_ks(samples: np.ndarray, rate: float) -> dict:
    """One-sample KS test of ``samples`` against Exp(rate)."""
    samples = np.asarray(samples, dtype=float)
    res = stats.kstest(samples, "expon", args=(0.0, 1.0 / rate))
    return {"statistic": float(res.statistic), "pvalue": float(res.pvalue), "n": int(samples.size)}


def ks_critical(n: int, alpha: float) -> float:
    """Exact critical value of the one-sample KS statistic at level ``alpha``."""
    return float(stats.kstwo.isf(alpha, n))


def pooled_moments(groups: Iterable[tuple[int, float, float]]) -> tuple[int, float | None, float | None]:
    """Combine (n, mean, sample variance) triples into the moments of the concatenated sample.

    Returns (n, mean, variance), the variance with the n - 1 denominator.
    """
    groups = [(int(n), m, v) for n, m, v in groups if n > 0]
    total = sum(n for n, _, _ in groups)
    if total == 0:
        return 0, None, None
    mean = sum(n * m for n, m, _ in groups) / total
    if total == 1:
        return 1, mean, 0.0
    ss = sum((n - 1) * v + n * (m - mean) ** 2 for n, m, v in groups)
    return total, mean, ss / (total - 1)


def pooled_stderr(groups: Iterable[tuple[int, float, float]]) -> float | None:
    n, _, var = pooled_moments(groups)
    return None if var is None else math.sqrt(var / n)
