"""Interval estimates and significance tests for benchmark numbers.

Proportions (compile rates) get Wilson score intervals, means (CodeBLEU)
get normal intervals, and two compile rates are compared with a pooled
two-proportion z-test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

_STD_NORMAL = NormalDist()


def norm_cdf(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_ppf(q: float) -> float:
    """Inverse of :func:`norm_cdf` for q in (0, 1)."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile must be in (0, 1), got {q}")
    return _STD_NORMAL.inv_cdf(q)


def z_for_confidence(confidence: float) -> float:
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    return norm_ppf(1.0 - (1.0 - confidence) / 2.0)


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lower: float
    upper: float
    confidence: float
    method: str  # "wilson" | "normal_mean"

    def __post_init__(self):
        if self.method not in ("wilson", "normal_mean"):
            raise ValueError(f"unknown interval method {self.method!r}")
        # 1e-12 slack: bounds are computed in floating point
        if not (self.lower - 1e-12 <= self.point <= self.upper + 1e-12):
            raise ValueError(f"interval does not bracket its point: {self}")

    @property
    def half_width(self) -> float:
        return (self.upper - self.lower) / 2.0


@dataclass(frozen=True)
class ZTestResult:
    z: float
    p_two_sided: float
    pooled_proportion: float
    degenerate: bool = False
    continuity_corrected: bool = False


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> IntervalEstimate:
    """Wilson score interval for ``successes`` out of ``n`` trials."""
    if n < 1:
        raise ValueError("wilson_interval needs n >= 1")
    if not 0 <= successes <= n:
        raise ValueError(f"successes must be within [0, n], got {successes}/{n}")
    z = z_for_confidence(confidence)
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    spread = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lower = max(0.0, center - spread)
    upper = min(1.0, center + spread)
    # the bounds are exact at the boundaries; keep them from drifting by an ulp
    if successes == 0:
        lower = 0.0
    if successes == n:
        upper = 1.0
    return IntervalEstimate(p, lower, upper, confidence, "wilson")


def normal_mean_ci(mean: float, sd: float, n: int, confidence: float = 0.95) -> IntervalEstimate:
    """``mean +/- z * sd / sqrt(n)``."""
    if n < 1:
        raise ValueError("normal_mean_ci needs n >= 1")
    if sd < 0:
        raise ValueError("sd must be non-negative")
    half = z_for_confidence(confidence) * sd / math.sqrt(n)
    return IntervalEstimate(mean, mean - half, mean + half, confidence, "normal_mean")


def two_proportion_z(s1: int, n1: int, s2: int, n2: int,
                     continuity_correction: bool = False) -> ZTestResult:
    """Pooled two-proportion z-test, two-sided.

    With ``continuity_correction`` the absolute difference is shrunk by
    ``(1/n1 + 1/n2) / 2`` (Yates), never past zero.
    """
    for s, n in ((s1, n1), (s2, n2)):
        if n < 1 or not 0 <= s <= n:
            raise ValueError(f"invalid proportion {s}/{n}")
    pooled = (s1 + s2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return ZTestResult(0.0, 1.0, pooled, degenerate=True,
                           continuity_corrected=continuity_correction)
    diff = s1 / n1 - s2 / n2
    if continuity_correction:
        shrunk = max(0.0, abs(diff) - 0.5 * (1 / n1 + 1 / n2))
        diff = math.copysign(shrunk, diff)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = diff / se
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return ZTestResult(z, min(1.0, max(0.0, p)), pooled,
                       continuity_corrected=continuity_correction)


@dataclass(frozen=True)
class ScoreSummary:
    n: int
    mean: float
    sd: float
    interval: IntervalEstimate
    min: float
    max: float


def aggregate_scores(scores: Sequence[float], confidence: float = 0.95) -> ScoreSummary:
    """Mean, sample SD (n-1), normal CI, and range of a score list."""
    xs = [float(s) for s in scores]
    if not xs:
        raise ValueError("aggregate_scores needs at least one score")
    n = len(xs)
    mean = math.fsum(xs) / n
    sd = math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / (n - 1)) if n > 1 else 0.0
    return ScoreSummary(n, mean, sd, normal_mean_ci(mean, sd, n, confidence), min(xs), max(xs))
