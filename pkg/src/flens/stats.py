"""Heteroscedastic equal-means testing for per-query similarity audits.

The workhorse is the Alexander-Govern ANOVA variant: each group mean is
compared to a variance-weighted grand mean via a one-sample t statistic,
each t is carried through Hill's normalizing transformation, and the sum
of squared normal scores is referred to a chi-square distribution with
p-1 degrees of freedom. Unlike classical ANOVA it does not assume equal
group variances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaincc

from .core import GroupLabels
from .errors import (
    DegenerateVariance,
    DomainError,
    EmptyInput,
    InsufficientSamples,
    ShapeError,
    ValidationError,
)


@dataclass(frozen=True, eq=False)
class GroupSamples:
    """Per-group lists of real observations for one query."""

    groups: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.groups) < 2:
            raise EmptyInput("need at least two groups of observations")
        frozen = []
        for g, sample in enumerate(self.groups):
            arr = np.asarray(sample, dtype=np.float64)
            if arr.ndim != 1:
                raise ShapeError(f"group {g} sample must be 1-d")
            if arr.size < 2:
                raise InsufficientSamples(f"group {g} has fewer than 2 observations")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"group {g} sample contains non-finite values")
            if np.var(arr) == 0.0:
                raise DegenerateVariance(f"group {g} sample has zero variance")
            arr = arr.copy()
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "groups", tuple(frozen))

    @property
    def group_count(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class TestResult:
    """Test statistic, its p-value, and the chi-square degrees of freedom."""

    statistic: float
    p_value: float
    degrees_of_freedom: int

    def __post_init__(self) -> None:
        if not self.statistic >= 0.0:
            raise ValidationError("statistic must be nonnegative")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValidationError("p-value must lie in [0, 1]")


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail chi-square probability via the regularized incomplete gamma."""
    if df < 1:
        raise DomainError(f"degrees of freedom must be positive, got {df}")
    if x < 0.0:
        raise DomainError(f"chi-square statistic must be nonnegative, got {x}")
    return float(gammaincc(df / 2.0, x / 2.0))


def alexander_govern(samples: GroupSamples | Sequence[Sequence[float]]) -> TestResult:
    """Equal-means test across groups allowing unequal variances.

    Returns the statistic A (sum of squared normalized scores) and its
    p-value from the chi-square distribution with p-1 degrees of freedom.
    """
    if not isinstance(samples, GroupSamples):
        samples = GroupSamples(tuple(np.asarray(s, dtype=np.float64) for s in samples))
    sizes = np.array([s.size for s in samples.groups], dtype=np.float64)
    means = np.array([s.mean() for s in samples.groups])
    # Squared standard errors of the group means (sample variance / n).
    se_sq = np.array([s.var(ddof=1) / s.size for s in samples.groups])
    weights = (1.0 / se_sq) / np.sum(1.0 / se_sq)
    grand_mean = np.sum(weights * means)
    t = (means - grand_mean) / np.sqrt(se_sq)
    # Hill's normalizing transformation of each one-sample t statistic.
    nu = sizes - 1.0
    a = nu - 0.5
    b = 48.0 * a**2
    c = np.sqrt(a * np.log1p(t**2 / nu))
    z = c + (c**3 + 3.0 * c) / b - (
        (4.0 * c**7 + 33.0 * c**5 + 240.0 * c**3 + 855.0 * c)
        / (10.0 * b**2 + 8.0 * b * c**4 + 1000.0 * b)
    )
    statistic = float(np.sum(z**2))
    df = samples.group_count - 1
    return TestResult(statistic=statistic, p_value=chi_square_sf(statistic, df), degrees_of_freedom=df)


@dataclass(frozen=True, eq=False)
class QueryGroupComparison:
    """Per-query test outcome plus the pairwise mean-similarity gaps.

    abs_mean_diff_x100 holds |mean_i - mean_j| scaled by 100, the
    convention used for similarity-gap heatmaps.
    """

    query_index: int
    test: TestResult
    group_means: np.ndarray
    abs_mean_diff_x100: np.ndarray

    def __post_init__(self) -> None:
        means = np.asarray(self.group_means, dtype=np.float64)
        diffs = np.asarray(self.abs_mean_diff_x100, dtype=np.float64)
        if diffs.shape != (means.size, means.size):
            raise ShapeError("pairwise matrix must be p x p")
        means.setflags(write=False)
        diffs.setflags(write=False)
        object.__setattr__(self, "group_means", means)
        object.__setattr__(self, "abs_mean_diff_x100", diffs)


def per_query_similarity_tests(
    similarities: np.ndarray, groups: GroupLabels
) -> list[QueryGroupComparison]:
    """Run the equal-means test on each query's similarity row, split by group."""
    sims = np.asarray(similarities, dtype=np.float64)
    if sims.ndim != 2:
        raise ShapeError(f"similarity matrix must be 2-d, got shape {sims.shape}")
    if sims.shape[1] != len(groups):
        raise ShapeError("similarity columns must match the number of labeled items")
    groups.require_all_groups()
    masks = [groups.labels == g for g in range(groups.group_count)]
    out = []
    for j in range(sims.shape[0]):
        row = sims[j]
        per_group = tuple(row[mask] for mask in masks)
        result = alexander_govern(per_group)
        means = np.array([g.mean() for g in per_group])
        diffs = np.abs(means[:, None] - means[None, :]) * 100.0
        out.append(
            QueryGroupComparison(
                query_index=j, test=result, group_means=means, abs_mean_diff_x100=diffs
            )
        )
    return out
