import numpy as np
import pytest

import oracles
from dtofkit import (
    AffinityField,
    AggregationWeights,
    DegenerateFitError,
    DepthBins,
    SparseDepth,
    ValidationError,
    bin_centers,
    bins_to_depth,
    fit_scale_shift,
    inverse_to_relative,
    propagate_step,
    refine,
)
from dtofkit.refine import kernel_offsets


class TestDepthBins:
    def test_two_equal_bins(self):
        bins = DepthBins([0.5, 0.5], 0.0, 4.0)
        np.testing.assert_allclose(bin_centers(bins), [1.0, 3.0])

    def test_single_bin_midpoint(self):
        np.testing.assert_allclose(bin_centers(DepthBins([1.0], 0.0, 4.0)), [2.0])

    def test_zero_width_bin_gives_nondecreasing_centers(self):
        centers = bin_centers(DepthBins([0.5, 0.0, 0.5], 0.0, 4.0))
        assert np.all(np.diff(centers) >= 0)
        np.testing.assert_allclose(centers, [1.0, 2.0, 3.0])

    def test_rejects_unnormalized(self):
        with pytest.raises(ValidationError):
            DepthBins([0.5, 0.6], 0.0, 4.0)

    def test_rejects_negative_width(self):
        with pytest.raises(ValidationError):
            DepthBins([1.5, -0.5], 0.0, 4.0)

    def test_uniform_constructor(self):
        bins = DepthBins.uniform(128, 0.0, 10.0)
        assert bins.n == 128
        centers = bin_centers(bins)
        assert np.all(np.diff(centers) > 0)


class TestBinsToDepth:
    def test_one_hot_reproduces_center(self):
        bins = DepthBins([0.25, 0.25, 0.5], 0.0, 8.0)
        centers = bin_centers(bins)
        for i in range(3):
            w = np.zeros(3)
            w[i] = 1.0
            assert bins_to_depth(bins, w) == centers[i]

    def test_even_mixture(self):
        bins = DepthBins([0.5, 0.5], 0.0, 4.0)
        assert bins_to_depth(bins, [0.5, 0.5]) == pytest.approx(2.0)

    def test_weighted_mixture(self):
        bins = DepthBins([0.5, 0.5], 0.0, 4.0)
        assert bins_to_depth(bins, [0.25, 0.75]) == pytest.approx(2.5)

    def test_per_pixel_weights(self):
        bins = DepthBins([0.5, 0.5], 0.0, 4.0)
        w = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        np.testing.assert_allclose(bins_to_depth(bins, w), [[1.0, 3.0]])

    def test_output_in_center_range(self):
        rng = np.random.default_rng(0)
        widths = rng.random(16)
        bins = DepthBins(widths / widths.sum(), 0.5, 9.5)
        centers = bin_centers(bins)
        w = rng.random((32, 16))
        w /= w.sum(axis=1, keepdims=True)
        depths = bins_to_depth(bins, w)
        assert np.all(depths >= centers[0] - 1e-12)
        assert np.all(depths <= centers[-1] + 1e-12)

    def test_rejects_unnormalized_weights(self):
        bins = DepthBins([0.5, 0.5], 0.0, 4.0)
        with pytest.raises(ValidationError):
            bins_to_depth(bins, [0.4, 0.4])


class TestInverseToRelative:
    def test_unit(self):
        assert inverse_to_relative(np.array(1.0), epsilon=0.0) == 1.0

    def test_far_region_cap(self):
        assert inverse_to_relative(np.array(0.0)) == pytest.approx(1e6)

    def test_direct_value(self):
        assert inverse_to_relative(np.array(0.25)) == pytest.approx(3.99998, abs=1e-5)

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            inverse_to_relative(np.array([-0.1]))


class TestFitScaleShift:
    def _sparse(self, d_inv, points):
        return SparseDepth.from_points(d_inv.shape[1], d_inv.shape[0], points)

    def test_self_consistent_inverse(self):
        rng = np.random.default_rng(1)
        d_inv = rng.uniform(0.1, 2.0, (8, 8))
        pts = [(r, c, 1.0 / d_inv[r, c]) for r, c in [(0, 0), (3, 4), (7, 7), (2, 6)]]
        fit = fit_scale_shift(d_inv, self._sparse(d_inv, pts))
        assert fit.scale == pytest.approx(1.0, abs=1e-9)
        assert fit.shift == pytest.approx(0.0, abs=1e-9)
        assert fit.residual_rms < 1e-12

    def test_two_point_exact_solve(self):
        d_inv = np.array([[0.5, 1.0]])
        fit = fit_scale_shift(d_inv, self._sparse(d_inv, [(0, 0, 2.0), (0, 1, 1.0)]))
        assert fit.scale == pytest.approx(1.0, abs=1e-12)
        assert fit.shift == pytest.approx(0.0, abs=1e-12)

    def test_two_point_with_shift(self):
        d_inv = np.array([[0.5, 1.0]])
        sparse = self._sparse(d_inv, [(0, 0, 1.0 / 0.6), (0, 1, 1.0 / 1.1)])
        fit = fit_scale_shift(d_inv, sparse)
        assert fit.scale == pytest.approx(1.0, abs=1e-9)
        assert fit.shift == pytest.approx(0.1, abs=1e-9)

    def test_aligned_map_matches_fit(self):
        rng = np.random.default_rng(2)
        d_inv = rng.uniform(0.2, 1.5, (6, 6))
        pts = [(r, c, 1.0 / (2.0 * d_inv[r, c] + 0.25)) for r, c in [(0, 1), (2, 3), (5, 5)]]
        fit = fit_scale_shift(d_inv, self._sparse(d_inv, pts))
        np.testing.assert_allclose(fit.aligned.data, 1.0 / (2.0 * d_inv + 0.25), rtol=1e-9)

    def test_degenerate_constant_dinv(self):
        d_inv = np.full((4, 4), 0.7)
        with pytest.raises(DegenerateFitError):
            fit_scale_shift(d_inv, self._sparse(d_inv, [(0, 0, 1.0), (1, 1, 2.0)]))

    def test_degenerate_single_point(self):
        d_inv = np.array([[0.5, 1.0]])
        with pytest.raises(DegenerateFitError):
            fit_scale_shift(d_inv, self._sparse(d_inv, [(0, 0, 1.0)]))

    def test_robust_rejects_outlier(self):
        rng = np.random.default_rng(3)
        d_inv = rng.uniform(0.2, 1.5, (10, 10))
        pts = [(r, c, 1.0 / d_inv[r, c]) for r in range(10) for c in range(10) if r != 0]
        pts.append((0, 0, 50.0))
        fit = fit_scale_shift(d_inv, self._sparse(d_inv, pts), robust=True)
        assert fit.n_rejected >= 1
        assert fit.scale == pytest.approx(1.0, abs=1e-6)


def normalized_affinity(kernel_size, height, width, rng):
    raw = rng.random((height, width, kernel_size**2 - 1))
    return AffinityField.from_neighbors(kernel_size, raw)


class TestAffinityField:
    def test_from_neighbors_scales_large_sums(self):
        raw = np.full((2, 2, 8), 1.0)
        field = AffinityField.from_neighbors(3, raw)
        np.testing.assert_allclose(field.neighbor_weights, 1.0 / 8.0)
        np.testing.assert_allclose(field.self_weight, 0.0, atol=1e-15)

    def test_from_neighbors_keeps_small_sums(self):
        raw = np.full((2, 2, 8), 0.0625)
        field = AffinityField.from_neighbors(3, raw)
        np.testing.assert_allclose(field.neighbor_weights, 0.0625)
        np.testing.assert_allclose(field.self_weight, 0.5)

    def test_normalization_invariant_enforced(self):
        with pytest.raises(ValidationError):
            AffinityField(3, np.full((2, 2), 0.9), np.full((2, 2, 8), 0.1))

    def test_rejects_unknown_kernel(self):
        with pytest.raises(ValidationError):
            AffinityField.identity(4, 2, 2)

    def test_offsets_row_major_without_center(self):
        offsets = kernel_offsets(3)
        assert offsets == [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
        assert len(kernel_offsets(7)) == 48


class TestPropagateStep:
    def test_identity_affinity(self):
        rng = np.random.default_rng(4)
        field = rng.random((5, 5))
        out = propagate_step(field, AffinityField.identity(3, 5, 5))
        np.testing.assert_array_equal(out, field)

    def test_constant_preserved(self):
        rng = np.random.default_rng(5)
        aff = normalized_affinity(5, 6, 6, rng)
        out = propagate_step(np.full((6, 6), 2.5), aff)
        np.testing.assert_allclose(out, 2.5, rtol=0, atol=1e-12)

    def test_center_hand_case(self):
        field = np.full((3, 3), 2.0)
        field[1, 1] = 4.0
        aff = AffinityField.from_neighbors(3, np.full((3, 3, 8), 0.0625))
        out = propagate_step(field, aff)
        assert out[1, 1] == pytest.approx(3.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        field = rng.uniform(0, 5, (6, 7))
        aff = normalized_affinity(3, 6, 7, rng)
        expected = oracles.propagate(
            field.tolist(),
            aff.self_weight.tolist(),
            aff.neighbor_weights.tolist(),
            aff.offsets,
        )
        np.testing.assert_allclose(propagate_step(field, aff), expected, rtol=1e-12)

    def test_maximum_principle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            field = rng.uniform(-3, 9, (8, 8))
            aff = normalized_affinity(rng.choice([3, 5, 7]), 8, 8, rng)
            out = propagate_step(field, aff)
            assert out.min() >= field.min() - 1e-12
            assert out.max() <= field.max() + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            propagate_step(np.zeros((3, 3)), AffinityField.identity(3, 4, 4))


class TestAggregationWeights:
    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            AggregationWeights([1.2, -0.2, 0.0], [1.0])

    def test_rejects_unnormalized(self):
        with pytest.raises(ValidationError):
            AggregationWeights([0.5, 0.4, 0.0], [1.0])

    def test_per_pixel_weights_accepted(self):
        tau = np.zeros((3, 2, 2))
        tau[0] = 1.0
        AggregationWeights(tau, [0.5, 0.25, 0.25])


class TestRefine:
    def test_tau_one_hot_at_zero_is_identity(self):
        rng = np.random.default_rng(8)
        field = rng.uniform(0, 5, (6, 6))
        affinities = {k: normalized_affinity(k, 6, 6, rng) for k in (3, 5, 7)}
        agg = AggregationWeights([1.0, 0.0, 0.0], [0.25, 0.25, 0.5])
        out = refine(field, affinities, agg, iterations=6)
        np.testing.assert_allclose(out, field, rtol=0, atol=1e-12)

    def test_identity_affinities_keep_input(self):
        rng = np.random.default_rng(9)
        field = rng.uniform(0, 5, (5, 5))
        affinities = {k: AffinityField.identity(k, 5, 5) for k in (3, 5, 7)}
        agg = AggregationWeights([0.25, 0.25, 0.5], [0.25, 0.25, 0.5])
        out = refine(field, affinities, agg, iterations=4)
        np.testing.assert_allclose(out, field, rtol=0, atol=1e-12)

    def test_single_kernel_two_steps_match_hand_iteration(self):
        field = np.full((3, 3), 2.0)
        field[1, 1] = 4.0
        aff = AffinityField.from_neighbors(3, np.full((3, 3, 8), 0.0625))
        agg = AggregationWeights([0.0, 0.0, 1.0], [1.0])
        out = refine(field, {3: aff}, agg, iterations=2)
        step1 = propagate_step(field, aff)
        step2 = propagate_step(step1, aff)
        np.testing.assert_allclose(out, step2, rtol=1e-15)

    def test_constant_fixpoint(self):
        rng = np.random.default_rng(10)
        affinities = {k: normalized_affinity(k, 6, 6, rng) for k in (3, 5, 7)}
        agg = AggregationWeights([0.2, 0.3, 0.5], [0.3, 0.3, 0.4])
        out = refine(np.full((6, 6), 1.5), affinities, agg, iterations=6)
        np.testing.assert_allclose(out, 1.5, rtol=0, atol=1e-12)

    def test_odd_iterations_rejected(self):
        aff = {3: AffinityField.identity(3, 3, 3)}
        agg = AggregationWeights([1.0, 0.0, 0.0], [1.0])
        with pytest.raises(ValidationError):
            refine(np.zeros((3, 3)), aff, agg, iterations=5)

    def test_sigma_length_must_match_kernels(self):
        aff = {3: AffinityField.identity(3, 3, 3)}
        agg = AggregationWeights([1.0, 0.0, 0.0], [0.5, 0.5])
        with pytest.raises(ValidationError):
            refine(np.zeros((3, 3)), aff, agg, iterations=2)
