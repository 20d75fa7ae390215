"""Post-processing debiasing transforms fitted on a train split.

Two families:

* mutual-information dimension clipping: rank embedding dimensions by a
  plug-in MI estimate against the protected attribute and drop the most
  informative ones;
* fair PCA: a variance-maximizing orthonormal projection whose output has
  exactly zero empirical correlation with every demeaned group indicator
  on the train split.

The fitted map is a single shared transform: apply it unchanged to both
item and query embeddings. Transformed vectors are fed to cosine
similarity directly; no renormalization step is needed because cosine
normalizes per vector anyway.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingMatrix, GroupLabels, LabeledDataset
from .errors import (
    EmptyGroup,
    InvalidBins,
    NumericError,
    RankError,
    ShapeError,
    ValidationError,
)

log = logging.getLogger(__name__)

# Relative singular-value cutoff for rank decisions, and the residual /
# orthonormality tolerances the fitted projection must meet.
RANK_RTOL = 1e-10
ORTHONORMALITY_TOL = 1e-10
CONSTRAINT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MiClipTransform:
    """Boolean keep-mask over embedding dimensions plus the MI scores behind it."""

    keep_mask: np.ndarray
    mi_scores: np.ndarray

    def __post_init__(self) -> None:
        mask = np.asarray(self.keep_mask, dtype=bool)
        scores = np.asarray(self.mi_scores, dtype=np.float64)
        if mask.ndim != 1 or scores.shape != mask.shape:
            raise ShapeError("keep_mask and mi_scores must be aligned 1-d vectors")
        if int(mask.sum()) < 1:
            raise ValidationError("mask must retain at least one dimension")
        mask.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "keep_mask", mask)
        object.__setattr__(self, "mi_scores", scores)

    @property
    def input_dims(self) -> int:
        return int(self.keep_mask.size)

    @property
    def output_dims(self) -> int:
        return int(self.keep_mask.sum())

    @property
    def removed_dims(self) -> np.ndarray:
        return np.flatnonzero(~self.keep_mask)


@dataclass(frozen=True, eq=False)
class FairPcaTransform:
    """Centering vector and orthonormal-column projection matrix."""

    mean: np.ndarray
    projection: np.ndarray
    target_dim: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        proj = np.asarray(self.projection, dtype=np.float64)
        if mean.ndim != 1 or proj.ndim != 2 or proj.shape[0] != mean.size:
            raise ShapeError("mean must be length d and projection d x r")
        if proj.shape[1] != self.target_dim:
            raise ShapeError("projection column count must equal target_dim")
        gram = proj.T @ proj
        if np.max(np.abs(gram - np.eye(self.target_dim))) > ORTHONORMALITY_TOL:
            raise ValidationError("projection columns are not orthonormal")
        mean.setflags(write=False)
        proj.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "projection", proj)

    @property
    def input_dims(self) -> int:
        return int(self.mean.size)


def _equal_frequency_bins(column: np.ndarray, bins: int) -> np.ndarray:
    """Assign each value a bin index using interior quantile edges.

    Duplicate edges collapse, so heavily tied columns land in fewer
    effective bins and a constant column lands in exactly one.
    """
    probs = np.linspace(0.0, 1.0, bins + 1)[1:-1]
    edges = np.unique(np.quantile(column, probs))
    return np.searchsorted(edges, column, side="right")


def _plugin_mi(binned: np.ndarray, labels: np.ndarray, n_bins: int, n_groups: int) -> float:
    """Maximum-likelihood mutual information (nats) of a binned contingency table."""
    joint = np.bincount(binned * n_groups + labels, minlength=n_bins * n_groups)
    joint = joint.reshape(n_bins, n_groups).astype(np.float64)
    n = joint.sum()
    row = joint.sum(axis=1, keepdims=True)
    col = joint.sum(axis=0, keepdims=True)
    nonzero = joint > 0
    mi = np.sum(joint[nonzero] / n * np.log(joint[nonzero] * n / (row @ col)[nonzero]))
    return max(float(mi), 0.0)


def estimate_mi_per_dimension(
    train: EmbeddingMatrix, groups: GroupLabels, bins: int = 32
) -> np.ndarray:
    """Per-dimension plug-in MI between equal-frequency-binned values and group labels.

    Returns nonnegative estimates in nats. The estimate carries the usual
    plug-in positive bias of roughly (bins-1)(p-1)/(2n); that bias is shared
    across dimensions so the ranking it feeds is unaffected.
    """
    if bins < 2:
        raise InvalidBins(f"need at least 2 bins, got {bins}")
    n = train.rows
    if n < bins:
        raise InvalidBins(f"need at least as many items ({n}) as bins ({bins})")
    if len(groups) != n:
        raise ShapeError("group labels length differs from embedding rows")
    if np.any(groups.counts() == 0):
        raise EmptyGroup("every group must be present to estimate MI")
    p = groups.group_count
    labels = groups.labels
    scores = np.empty(train.dims, dtype=np.float64)
    for dim in range(train.dims):
        binned = _equal_frequency_bins(train.values[:, dim], bins)
        scores[dim] = _plugin_mi(binned, labels, bins + 1, p)
    return scores


def fit_mi_clip(train: LabeledDataset, m: int, bins: int = 32) -> MiClipTransform:
    """Rank dimensions by MI on the train split and cut the d-m most informative.

    Ties cut the lower dimension index first, which makes the family of
    masks over different m nested.
    """
    d = train.embeddings.dims
    if not 1 <= m < d:
        raise RankError(f"retained dimension count m={m} must satisfy 1 <= m < d={d}")
    idx = np.flatnonzero(train.train_mask)
    if idx.size == 0:
        raise EmptyGroup("train split is empty")
    scores = estimate_mi_per_dimension(
        train.embeddings.take(idx), train.protected.take(idx), bins=bins
    )
    cut_order = np.lexsort((np.arange(d), -scores))
    keep = np.ones(d, dtype=bool)
    keep[cut_order[: d - m]] = False
    return MiClipTransform(keep_mask=keep, mi_scores=scores)


def apply_mi_clip(transform: MiClipTransform, embeddings: EmbeddingMatrix) -> EmbeddingMatrix:
    """Keep the masked-in columns, preserving their original order."""
    if embeddings.dims != transform.input_dims:
        raise ShapeError(
            f"transform expects d={transform.input_dims}, got d={embeddings.dims}"
        )
    return EmbeddingMatrix(embeddings.values[:, transform.keep_mask])


def _demeaned_onehot(groups: GroupLabels) -> np.ndarray:
    onehot = np.zeros((len(groups), groups.group_count))
    onehot[np.arange(len(groups)), groups.labels] = 1.0
    return onehot - onehot.mean(axis=0)


def fit_fair_pca(train: LabeledDataset, target_dim: int | None = None) -> FairPcaTransform:
    """Fit a group-uncorrelated PCA projection on the train split.

    Steps: center the data, build the demeaned one-hot group matrix (rank
    p-1), take an orthonormal basis R of the null space of its cross-product
    with the data via SVD, run standard PCA inside that feasible subspace,
    and compose the two maps. The projected train data then has exactly zero
    empirical covariance with every demeaned group indicator.

    target_dim defaults to d - (p-1), the maximal feasible rank. Numerically
    rank-deficient constraints are dropped (logged), never inflated.
    """
    idx = np.flatnonzero(train.train_mask)
    if idx.size == 0:
        raise EmptyGroup("train split is empty")
    x = train.embeddings.values[idx]
    groups = train.protected.take(idx)
    groups.require_all_groups()
    n, d = x.shape
    p = groups.group_count
    max_rank = d - (p - 1)
    r = max_rank if target_dim is None else int(target_dim)
    if not 1 <= r <= max_rank:
        raise RankError(
            f"target_dim={r} infeasible: must be in [1, d-(p-1)] = [1, {max_rank}]"
        )
    if n <= d:
        warnings.warn(
            f"fitting fair PCA with n={n} <= d={d}; constraints may overfit",
            stacklevel=2,
        )
    mean = x.mean(axis=0)
    centered = x - mean
    demeaned = _demeaned_onehot(groups)
    constraints = demeaned.T @ centered
    _, sing, vt = np.linalg.svd(constraints, full_matrices=True)
    # Noise floor: a constraint matrix at round-off scale is inactive, so the
    # relative rank threshold must not promote pure noise to rank.
    noise_floor = 1e-12 * max(
        np.linalg.norm(demeaned) * np.linalg.norm(centered), 1.0
    )
    if sing.size == 0 or sing[0] <= noise_floor:
        rank = 0
    else:
        rank = int(np.count_nonzero(sing > RANK_RTOL * sing[0]))
    if rank < p - 1:
        log.info("constraint matrix rank %d < p-1 = %d; dropping dependent constraints", rank, p - 1)
    basis = vt[rank:].T
    projected = centered @ basis
    # full_matrices so low-variance directions pad the basis when n-1 < r
    _, _, pc_vt = np.linalg.svd(projected, full_matrices=True)
    if pc_vt.shape[0] < r:
        raise RankError(f"only {pc_vt.shape[0]} feasible directions for target_dim={r}")
    components = pc_vt[:r].T
    # Deterministic sign: largest-magnitude entry of each component positive.
    flips = np.sign(components[np.argmax(np.abs(components), axis=0), np.arange(r)])
    flips[flips == 0] = 1.0
    projection = basis @ (components * flips)
    transform = FairPcaTransform(mean=mean, projection=projection, target_dim=r)
    residual = np.max(np.abs(constraints @ projection)) if constraints.size else 0.0
    if residual > CONSTRAINT_TOL * max(1.0, float(np.abs(constraints).max(initial=0.0))):
        raise NumericError(f"fair PCA constraint residual {residual:.3e} too large")
    return transform


def apply_fair_pca(transform: FairPcaTransform, embeddings: EmbeddingMatrix) -> EmbeddingMatrix:
    """Center with the fitted train mean and project onto the fitted basis."""
    if embeddings.dims != transform.input_dims:
        raise ShapeError(
            f"transform expects d={transform.input_dims}, got d={embeddings.dims}"
        )
    return EmbeddingMatrix((embeddings.values - transform.mean) @ transform.projection)
