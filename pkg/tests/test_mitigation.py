"""Mitigation transform tests: MI clipping and fair PCA."""

import math

import numpy as np
import pytest

from flens.core import TRAIN, EmbeddingMatrix, GroupLabels, LabeledDataset
from flens.errors import EmptyGroup, InvalidBins, RankError, ShapeError
from flens.mitigation import (
    apply_fair_pca,
    apply_mi_clip,
    estimate_mi_per_dimension,
    fit_fair_pca,
    fit_mi_clip,
)
from flens.synth import SynthSpec, generate


def all_train_dataset(values: np.ndarray, labels: np.ndarray, p: int) -> LabeledDataset:
    return LabeledDataset(
        embeddings=EmbeddingMatrix(values),
        protected=GroupLabels(labels, p),
        split=np.full(values.shape[0], TRAIN, dtype="<U5"),
    )


class TestMiEstimation:
    def test_binary_label_dimension_is_ln2(self):
        n = 1000
        labels = np.tile([0, 1], n // 2)
        values = np.where(labels == 0, -1.0, 1.0)[:, None] + np.zeros((n, 3))
        values[:, 1:] = np.random.default_rng(0).normal(size=(n, 2))
        mi = estimate_mi_per_dimension(EmbeddingMatrix(values), GroupLabels(labels, 2))
        assert mi[0] == pytest.approx(math.log(2.0), abs=1e-9)

    def test_three_group_index_dimension_is_ln3(self):
        n = 999
        labels = np.tile([0, 1, 2], n // 3)
        values = np.column_stack([labels.astype(float), np.zeros(n)])
        values[:, 1] = np.random.default_rng(1).normal(size=n)
        mi = estimate_mi_per_dimension(EmbeddingMatrix(values), GroupLabels(labels, 3))
        assert mi[0] == pytest.approx(math.log(3.0), abs=1e-9)

    def test_independent_dimension_near_zero(self):
        n = 10000
        rng = np.random.default_rng(2)
        labels = np.tile([0, 1], n // 2)
        values = rng.normal(size=(n, 1))
        mi = estimate_mi_per_dimension(EmbeddingMatrix(values), GroupLabels(labels, 2))
        assert 0.0 <= mi[0] < 0.01

    def test_constant_dimension_is_zero(self):
        values = np.column_stack([np.full(64, 3.25), np.arange(64.0)])
        labels = np.tile([0, 1], 32)
        mi = estimate_mi_per_dimension(EmbeddingMatrix(values), GroupLabels(labels, 2))
        assert mi[0] == 0.0

    def test_invalid_bins(self):
        values = np.random.default_rng(3).normal(size=(50, 2))
        labels = np.tile([0, 1], 25)
        with pytest.raises(InvalidBins):
            estimate_mi_per_dimension(EmbeddingMatrix(values), GroupLabels(labels, 2), bins=1)
        with pytest.raises(InvalidBins):
            estimate_mi_per_dimension(EmbeddingMatrix(values), GroupLabels(labels, 2), bins=51)


class TestMiClip:
    def _planted(self, n=1200, d=16, strength=6.0, seed=5):
        return generate(
            SynthSpec(n=n, d=d, p=2, bias_dims=(0, 1), bias_strength=strength, seed=seed)
        )

    def test_removes_planted_dimensions(self):
        ds = self._planted()
        transform = fit_mi_clip(ds, m=ds.embeddings.dims - 2)
        assert sorted(transform.removed_dims.tolist()) == [0, 1]

    def test_boundary_removes_single_highest(self):
        ds = self._planted()
        transform = fit_mi_clip(ds, m=ds.embeddings.dims - 1)
        scores = transform.mi_scores
        assert transform.removed_dims.tolist() == [int(np.argmax(scores))]

    def test_paper_scale_mask_sizes(self):
        # d = 512 with m in {400, 256} cuts 112 and 256 dimensions
        rng = np.random.default_rng(6)
        n, d = 640, 512
        labels = np.tile([0, 1], n // 2)
        values = rng.normal(size=(n, d))
        ds = all_train_dataset(values, labels, 2)
        for m, expected_cut in ((400, 112), (256, 256)):
            transform = fit_mi_clip(ds, m=m)
            assert transform.output_dims == m
            assert transform.removed_dims.size == expected_cut

    def test_nested_masks(self):
        ds = self._planted()
        d = ds.embeddings.dims
        masks = {m: fit_mi_clip(ds, m=m).keep_mask for m in (2, 5, 9, 14, d - 1)}
        ms = sorted(masks)
        for small, large in zip(ms, ms[1:]):
            kept_small = set(np.flatnonzero(masks[small]))
            kept_large = set(np.flatnonzero(masks[large]))
            assert kept_small <= kept_large

    def test_invalid_m(self):
        ds = self._planted()
        with pytest.raises(RankError):
            fit_mi_clip(ds, m=0)
        with pytest.raises(RankError):
            fit_mi_clip(ds, m=ds.embeddings.dims)

    def test_apply_keeps_column_order(self):
        ds = self._planted()
        transform = fit_mi_clip(ds, m=ds.embeddings.dims - 2)
        clipped = apply_mi_clip(transform, ds.embeddings)
        kept = np.flatnonzero(transform.keep_mask)
        assert np.array_equal(clipped.values, ds.embeddings.values[:, kept])

    def test_apply_dimension_mismatch(self):
        ds = self._planted()
        transform = fit_mi_clip(ds, m=8)
        with pytest.raises(ShapeError):
            apply_mi_clip(transform, EmbeddingMatrix(np.ones((3, 5))))

    def test_kept_mi_below_removed_mi(self):
        ds = self._planted()
        transform = fit_mi_clip(ds, m=10)
        idx = np.flatnonzero(ds.train_mask)
        re_scores = estimate_mi_per_dimension(
            ds.embeddings.take(idx), ds.protected.take(idx)
        )
        kept = re_scores[transform.keep_mask]
        removed = re_scores[~transform.keep_mask]
        assert kept.max() <= removed.min() + 1e-12


def demeaned_onehot(labels: np.ndarray, p: int) -> np.ndarray:
    onehot = np.zeros((labels.size, p))
    onehot[np.arange(labels.size), labels] = 1.0
    return onehot - onehot.mean(axis=0)


class TestFairPca:
    def test_matches_standard_pca_when_constraint_inactive(self):
        # stacking identical blocks per group makes group means exactly equal
        rng = np.random.default_rng(10)
        block = rng.normal(size=(80, 6))
        values = np.vstack([block, block])
        labels = np.repeat([0, 1], 80)
        ds = all_train_dataset(values, labels, 2)
        r = 3
        transform = fit_fair_pca(ds, target_dim=r)
        centered = values - values.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        standard = vt[:r].T
        # compare subspaces via projector difference (spectral norm = sin of largest angle)
        diff = transform.projection @ transform.projection.T - standard @ standard.T
        assert np.linalg.norm(diff, 2) < 1e-8

    def test_two_cluster_means_equalized(self):
        rng = np.random.default_rng(11)
        n = 400
        labels = np.tile([0, 1], n // 2)
        values = rng.normal(size=(n, 2))
        values[:, 0] += np.where(labels == 0, -4.0, 4.0)
        ds = all_train_dataset(values, labels, 2)
        transform = fit_fair_pca(ds, target_dim=1)
        projected = apply_fair_pca(transform, ds.embeddings).values
        mean_gap = abs(projected[labels == 0].mean() - projected[labels == 1].mean())
        assert mean_gap < 1e-10

    @pytest.mark.parametrize("p", [2, 7])
    def test_uncorrelated_with_group_indicators(self, p):
        ds = generate(SynthSpec(n=2000, d=64, p=p, bias_dims=(0, 1, 2), bias_strength=4.0, seed=12))
        transform = fit_fair_pca(ds)
        idx = np.flatnonzero(ds.train_mask)
        projected = apply_fair_pca(transform, ds.embeddings).values[idx]
        indicators = demeaned_onehot(ds.protected.labels[idx], p)
        for dim in range(projected.shape[1]):
            for g in range(p):
                corr = np.corrcoef(projected[:, dim], indicators[:, g])[0, 1]
                assert abs(corr) < 1e-6

    def test_orthonormality(self):
        ds = generate(SynthSpec(n=500, d=16, p=3, bias_dims=(0,), bias_strength=3.0, seed=13))
        transform = fit_fair_pca(ds)
        gram = transform.projection.T @ transform.projection
        assert np.max(np.abs(gram - np.eye(transform.target_dim))) < 1e-10

    def test_variance_optimality_among_feasible(self):
        rng = np.random.default_rng(14)
        ds = generate(SynthSpec(n=800, d=12, p=2, bias_dims=(0,), bias_strength=5.0, seed=15))
        r = 4
        transform = fit_fair_pca(ds, target_dim=r)
        idx = np.flatnonzero(ds.train_mask)
        x = ds.embeddings.values[idx]
        centered = x - x.mean(axis=0)
        cov = centered.T @ centered / (centered.shape[0] - 1)
        constraints = demeaned_onehot(ds.protected.labels[idx], 2).T @ centered
        _, sing, vt = np.linalg.svd(constraints, full_matrices=True)
        rank = int(np.sum(sing > 1e-10 * sing[0]))
        null_basis = vt[rank:].T
        fitted_variance = np.trace(transform.projection.T @ cov @ transform.projection)
        for _ in range(25):
            random_directions = rng.normal(size=(null_basis.shape[1], r))
            q, _ = np.linalg.qr(random_directions)
            candidate = null_basis @ q[:, :r]
            cand_variance = np.trace(candidate.T @ cov @ candidate)
            assert fitted_variance >= cand_variance - 1e-8

    def test_apply_is_deterministic_on_train(self):
        ds = generate(SynthSpec(n=300, d=8, p=2, bias_dims=(0,), bias_strength=4.0, seed=16))
        transform = fit_fair_pca(ds)
        a = apply_fair_pca(transform, ds.embeddings).values
        b = apply_fair_pca(transform, ds.embeddings).values
        assert np.array_equal(a, b)

    def test_zero_vector_shows_centering(self):
        ds = generate(SynthSpec(n=300, d=8, p=2, bias_dims=(0,), bias_strength=4.0, seed=17))
        transform = fit_fair_pca(ds)
        zero = EmbeddingMatrix(np.zeros((1, 8)))
        out = apply_fair_pca(transform, zero).values[0]
        assert np.allclose(out, -transform.mean @ transform.projection, atol=1e-12)

    def test_projection_column_round_trip(self):
        ds = generate(SynthSpec(n=300, d=8, p=2, bias_dims=(0,), bias_strength=4.0, seed=18))
        transform = fit_fair_pca(ds)
        for j in (0, transform.target_dim - 1):
            probe_vec = transform.mean + transform.projection[:, j]
            out = apply_fair_pca(transform, EmbeddingMatrix(probe_vec[None, :])).values[0]
            expected = np.zeros(transform.target_dim)
            expected[j] = 1.0
            assert np.allclose(out, expected, atol=1e-10)
            assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-10)

    def test_target_dim_too_large(self):
        ds = generate(SynthSpec(n=300, d=8, p=3, bias_dims=(0,), bias_strength=4.0, seed=19))
        with pytest.raises(RankError):
            fit_fair_pca(ds, target_dim=7)  # max feasible is d - (p-1) = 6

    def test_warns_when_n_not_above_d(self):
        rng = np.random.default_rng(20)
        values = rng.normal(size=(24, 30))
        labels = np.tile([0, 1], 12)
        ds = all_train_dataset(values, labels, 2)
        with pytest.warns(UserWarning):
            fit_fair_pca(ds, target_dim=2)

    def test_apply_dimension_mismatch(self):
        ds = generate(SynthSpec(n=300, d=8, p=2, bias_dims=(0,), bias_strength=4.0, seed=21))
        transform = fit_fair_pca(ds)
        with pytest.raises(ShapeError):
            apply_fair_pca(transform, EmbeddingMatrix(np.ones((2, 9))))

    def test_fit_requires_train_split(self):
        # default split tags everything as test data
        ds = LabeledDataset(
            embeddings=EmbeddingMatrix(np.random.default_rng(22).normal(size=(20, 4))),
            protected=GroupLabels(np.tile([0, 1], 10), 2),
        )
        with pytest.raises(EmptyGroup):
            fit_fair_pca(ds)
        with pytest.raises(EmptyGroup):
            fit_mi_clip(ds, m=2)
