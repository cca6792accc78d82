"""Small statistical helpers shared by the Monte Carlo reports."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class ProportionEstimate:
    """A Bernoulli frequency with its 95% Wilson interval."""

    successes: int
    trials: int
    estimate: float
    lower: float
    upper: float

    @property
    def standard_error(self) -> float:
        if self.trials == 0:
            return float("nan")
        p = self.estimate
        return float(np.sqrt(p * (1.0 - p) / self.trials))

    def excludes_zero(self) -> bool:
        return self.lower > 0.0

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "ci_lower": self.lower,
            "ci_upper": self.upper,
            "successes": self.successes,
            "trials": self.trials,
        }


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(
        confidence_level=confidence, method="wilson"
    )
    return float(ci.low), float(ci.high)


def proportion(successes: int, trials: int, confidence: float = 0.95) -> ProportionEstimate:
    lower, upper = wilson_interval(successes, trials, confidence)
    estimate = successes / trials if trials > 0 else float("nan")
    return ProportionEstimate(int(successes), int(trials), float(estimate), lower, upper)


@dataclass(frozen=True)
class MeanEstimate:
    """Sample mean with a normal-approximation confidence interval."""

    estimate: float
    standard_error: float
    lower: float
    upper: float
    samples: int

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "standard_error": self.standard_error,
            "ci_lower": self.lower,
            "ci_upper": self.upper,
            "samples": self.samples,
        }


def mean_estimate(values, confidence: float = 0.95) -> MeanEstimate:
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(values.mean()) if n else float("nan")
    se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    return MeanEstimate(mean, se, mean - z * se, mean + z * se, n)


def two_sample_ks(first, second) -> Tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and p-value."""
    result = stats.ks_2samp(np.asarray(first, dtype=float), np.asarray(second, dtype=float))
    return float(result.statistic), float(result.pvalue)


def z_score(p1: float, se1: float, p2: float, se2: float) -> float:
    """z-score of the difference of two independent estimates."""
    scale = np.hypot(se1, se2)
    if scale == 0.0:
        return 0.0 if p1 == p2 else float("inf")
    return float(abs(p1 - p2) / scale)
