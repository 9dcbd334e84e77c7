import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import constant_image
from consensuscal.calibrators import (
    CalibrationError,
    CalibrationModel,
    CalibratorKind,
    apply_model,
    calibrate_stack,
    fit_affine_color,
    fit_ccmf,
    fit_histogram_match,
    fit_linear,
    fit_model,
    fit_polynomial,
    isotonic_regression,
)
from consensuscal.consensus import build_consensus
from consensuscal.imaging import Image, ImageStack, histogram

KINDS = list(CalibratorKind)


def quantized(rng, shape):
    """Random image on the 8-bit grid."""
    return Image(rng.integers(0, 256, shape) / 255.0)


class TestLinear:
    def test_identity(self, rgb_pair):
        src, _ = rgb_pair
        coef = fit_linear(src, src).coefficients
        assert np.allclose(coef, [[1.0, 0.0]] * 3, atol=1e-12)

    def test_planted_gain_offset(self, rgb_pair):
        src, _ = rgb_pair
        ref = Image(0.5 * src.samples + 0.1)
        assert np.allclose(fit_linear(src, ref).coefficients, [[0.5, 0.1]] * 3, atol=1e-9)

    def test_against_exact_normal_equations(self, rng):
        src, ref = Image(rng.random((8, 8, 3))), Image(rng.random((8, 8, 3)))
        coef = fit_linear(src, ref).coefficients
        for c in range(3):
            s = src.samples[..., c].ravel()
            expect = oracles.lstsq_exact(np.column_stack([s, np.ones_like(s)]), ref.samples[..., c].ravel())
            assert np.allclose(coef[c], expect, rtol=1e-9, atol=0)

    def test_degenerate_channel(self):
        src = constant_image(0.3, c=1)
        ref = constant_image(0.5, c=1)
        model = fit_linear(src, ref)
        assert np.allclose(model.coefficients[0], [1.0, 0.2])
        assert model.diagnostics["degenerate"] == [0]

    def test_clamped_application(self):
        model = CalibrationModel("linear", 3, [[2.0, 0.0]] * 3)
        assert np.all(apply_model(constant_image(0.7), model).samples == 1.0)

    def test_unit_model_is_identity(self, rgb_pair):
        model = CalibrationModel("linear", 3, [[1.0, 0.0]] * 3)
        assert apply_model(rgb_pair[0], model) == rgb_pair[0]


class TestPolynomial:
    def test_degree_one_matches_linear(self, rgb_pair):
        src, ref = rgb_pair
        poly = fit_polynomial(src, ref, degree=1).coefficients
        lin = fit_linear(src, ref).coefficients
        assert np.allclose(poly[:, ::-1], lin, rtol=1e-9, atol=1e-12)

    def test_planted_cubic(self, rgb_pair):
        src, _ = rgb_pair
        ref = Image(src.samples**3)
        assert np.allclose(fit_polynomial(src, ref, degree=3).coefficients, [[0, 0, 0, 1]] * 3, atol=1e-6)

    def test_against_exact_vandermonde(self, rng):
        src, ref = Image(rng.random((8, 8, 3))), Image(rng.random((8, 8, 3)))
        model = fit_polynomial(src, ref, degree=3)
        for c in range(3):
            s = src.samples[..., c].ravel()
            v = np.vander(s, 4, increasing=True)
            expect = oracles.lstsq_exact(v, ref.samples[..., c].ravel())
            assert np.allclose(model.coefficients[c], expect, rtol=1e-9, atol=1e-9)
            assert np.allclose(v @ model.coefficients[c], v @ expect, atol=1e-8)

    def test_rank_reduction(self):
        src = Image(np.array([[0.2, 0.8]]))
        ref = Image(np.array([[0.1, 0.5]]))
        model = fit_polynomial(src, ref, degree=4)
        assert model.diagnostics["reduced_degree"] == {"0": 1}
        assert np.allclose(apply_model(src, model).samples, ref.samples, atol=1e-12)

    @pytest.mark.parametrize("degree", [0, 6])
    def test_degree_bounds(self, rgb_pair, degree):
        with pytest.raises(ValueError):
            fit_polynomial(*rgb_pair, degree=degree)


class TestAffine:
    def test_identity(self, rgb_pair):
        src, _ = rgb_pair
        expect = np.hstack([np.eye(3), np.zeros((3, 1))])
        assert np.allclose(fit_affine_color(src, src).coefficients, expect, atol=1e-9)

    def test_planted_permutation(self, rgb_pair):
        src, _ = rgb_pair
        perm = [2, 0, 1]
        ref = Image(src.samples[..., perm])
        expect = np.hstack([np.eye(3)[perm], np.zeros((3, 1))])
        assert np.allclose(fit_affine_color(src, ref).coefficients, expect, atol=1e-9)

    def test_grayscale_matches_linear(self, rng):
        src, ref = Image(rng.random((9, 9, 1))), Image(rng.random((9, 9, 1)))
        assert np.allclose(fit_affine_color(src, ref).coefficients, fit_linear(src, ref).coefficients, rtol=1e-9, atol=1e-12)

    def test_against_exact_normal_equations(self, rng):
        src, ref = Image(rng.random((6, 6, 3))), Image(rng.random((6, 6, 3)))
        coef = fit_affine_color(src, ref).coefficients
        x = np.hstack([src.samples.reshape(-1, 3), np.ones((36, 1))])
        for c in range(3):
            expect = oracles.lstsq_exact(x, ref.samples[..., c].ravel())
            assert np.allclose(coef[c], expect, rtol=1e-9, atol=1e-12)

    def test_constant_image_is_regularized(self):
        model = fit_affine_color(constant_image(0.3), constant_image(0.6))
        assert model.diagnostics["regularized"]
        assert np.allclose(apply_model(constant_image(0.3), model).samples, 0.6, atol=1e-6)


class TestIsotonic:
    def test_pools_violators(self):
        assert np.allclose(isotonic_regression([1.0, 3.0, 2.0, 4.0]), [1.0, 2.5, 2.5, 4.0])

    def test_weights(self):
        assert np.allclose(isotonic_regression([2.0, 1.0], [3.0, 1.0]), [1.75, 1.75])

    @given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-5, 5)))
    @settings(max_examples=60, deadline=None)
    def test_monotone_and_mean_preserving(self, y):
        fit = isotonic_regression(y)
        assert np.all(np.diff(fit) >= -1e-12)
        assert np.isclose(fit.sum(), y.sum(), atol=1e-9)


class TestCCMF:
    def test_identity_within_one_bin(self, rng):
        src = Image(rng.random((32, 32, 3)))
        table = fit_ccmf(src, src).table
        assert np.all(np.abs(table - np.arange(256) / 255) <= 1 / 255)

    def test_planted_shift(self, rng):
        src = Image(rng.random((64, 64, 3)) * 0.9)
        ref = Image(src.samples + 0.1)
        table = fit_ccmf(src, ref).table
        k = np.arange(256)
        inside = (k + 1) / 255 <= 0.9
        centre = (k + 0.5) / 255
        assert np.max(np.abs(table[:, inside] - (centre[inside] + 0.1))) <= 2 / 255

    def test_empty_bins_flagged(self):
        src = Image(np.array([[0.1, 0.5, 0.9]]))
        model = fit_ccmf(src, src)
        assert model.diagnostics["interpolated_bins"] == [253]

    @given(
        arrays(np.float64, (6, 6, 3), elements=st.floats(0, 1)),
        arrays(np.float64, (6, 6, 3), elements=st.floats(0, 1)),
    )
    @settings(max_examples=40, deadline=None)
    def test_table_monotone(self, a, b):
        assert np.all(np.diff(fit_ccmf(Image(a), Image(b)).table, axis=1) >= -1e-12)


class TestHistogramMatch:
    def test_identity_reproduces_histogram(self, rng):
        src = Image(rng.random((20, 20, 3)))
        out = apply_model(src, fit_histogram_match(src, src))
        assert np.array_equal(histogram(out).bins, histogram(src).bins)

    def test_constant_reference(self, rng):
        src = Image(rng.random((10, 10, 3)))
        out = apply_model(src, fit_histogram_match(src, constant_image(0.4, 10, 10)))
        assert np.all(out.samples == 0.4)

    def test_cdf_matches_reference(self, rng):
        # Every source pixel in its own bin, so the CDF match is tight.
        src = Image(rng.permutation(256).reshape(16, 16, 1) / 255.0)
        ref = Image(rng.random((16, 16, 1)) ** 2)
        out = apply_model(src, fit_histogram_match(src, ref))
        diff = histogram(out).cumulative() - histogram(ref).cumulative()
        assert np.max(np.abs(diff)) <= 1

    @given(st.integers(0, 2**32), st.integers(1, 20), st.integers(1, 20), st.floats(0.3, 3.0))
    @settings(max_examples=60, deadline=None)
    def test_emd_does_not_grow(self, seed, h, w, power):
        # Continuous random samples; a source whose mass sits in one bin
        # must map to a single level and can overshoot.
        rng = np.random.default_rng(seed)
        src, ref = Image(rng.random((h, w, 3))), Image(rng.random((h, w, 3)) ** power)
        out = apply_model(src, fit_histogram_match(src, ref))
        hr, hs, ho = histogram(ref).bins, histogram(src).bins, histogram(out).bins
        for c in range(3):
            assert oracles.emd_1d(ho[c], hr[c]) <= oracles.emd_1d(hs[c], hr[c])

    def test_tied_source_maps_to_one_level(self):
        src = constant_image(0.0, 2, 2, 1)
        ref = Image(np.array([[0.0, 0.0], [0.0, 1.0]]))
        out = apply_model(src, fit_histogram_match(src, ref))
        assert np.all(out.samples == 1.0)

    @given(
        arrays(np.float64, (6, 6, 3), elements=st.floats(0, 1)),
        arrays(np.float64, (6, 6, 3), elements=st.floats(0, 1)),
    )
    @settings(max_examples=40, deadline=None)
    def test_table_monotone(self, a, b):
        assert np.all(np.diff(fit_histogram_match(Image(a), Image(b)).table, axis=1) >= 0)


class TestCommon:
    @pytest.mark.parametrize("kind", KINDS)
    def test_self_fit_identity(self, rng, kind):
        img = quantized(rng, (24, 24, 3))
        out = apply_model(img, fit_model(img, img, kind))
        assert np.max(np.abs(out.samples - img.samples)) <= 1e-6

    @pytest.mark.parametrize("kind", KINDS)
    @given(
        arrays(np.float64, (5, 5, 3), elements=st.floats(0, 1)),
        arrays(np.float64, (5, 5, 3), elements=st.floats(0, 1)),
    )
    @settings(max_examples=20, deadline=None)
    def test_outputs_clamped(self, kind, a, b):
        out = apply_model(Image(a), fit_model(Image(a), Image(b), kind)).samples
        assert out.min() >= 0.0 and out.max() <= 1.0

    @pytest.mark.parametrize("kind", KINDS)
    def test_json_roundtrip(self, rgb_pair, kind):
        model = fit_model(*rgb_pair, kind)
        back = CalibrationModel.from_json(model.to_json())
        assert back.kind is model.kind
        assert np.array_equal(back.coefficients, model.coefficients)
        assert apply_model(rgb_pair[0], back) == apply_model(rgb_pair[0], model)

    def test_channel_mismatch(self, rgb_pair):
        model = fit_linear(*rgb_pair)
        with pytest.raises(ValueError):
            apply_model(constant_image(0.1, c=1), model)

    def test_stride_subsamples(self, rgb_pair):
        src, _ = rgb_pair
        ref = Image(0.5 * src.samples + 0.1)
        assert np.allclose(fit_linear(src, ref, stride=3).coefficients, [[0.5, 0.1]] * 3, atol=1e-9)


class TestCalibrateStack:
    @pytest.mark.parametrize("kind", KINDS)
    def test_identical_stack_is_unchanged(self, rng, kind):
        img = quantized(rng, (12, 12, 3))
        stack = ImageStack((img,) * 3)
        out = calibrate_stack(stack, build_consensus(stack, "median"), kind)
        for im in out.images:
            assert np.max(np.abs(im.samples - img.samples)) <= 1e-6

    @pytest.mark.parametrize("kind", KINDS)
    def test_order_equivariance(self, rng, kind):
        stack = ImageStack.from_array(rng.random((4, 8, 8, 3)))
        ref = build_consensus(stack, "mean").image
        perm = [2, 0, 3, 1]
        a = calibrate_stack(stack, ref, kind)
        b = calibrate_stack(ImageStack(tuple(stack[i] for i in perm)), ref, kind)
        assert all(b.images[j] == a.images[i] for j, i in enumerate(perm))

    def test_reference_shape_checked(self, rng):
        stack = ImageStack.from_array(rng.random((2, 4, 4, 3)))
        with pytest.raises(ValueError):
            calibrate_stack(stack, constant_image(0.5, 5, 5), "linear")

    def test_errors_carry_camera_index(self, rng):
        stack = ImageStack.from_array(rng.random((3, 4, 4, 3)))
        with pytest.raises(CalibrationError) as err:
            calibrate_stack(stack, stack[0], "polynomial", degree=9)
        assert err.value.camera == 0
