import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import constant_image
from consensuscal.distortion import (
    SEVERITY_PRESETS,
    AdditiveGaussianNoise,
    Brightness,
    ChannelGain,
    DistortionRecipe,
    DynamicRangeCompress,
    ExposureGamma,
    Saturation,
    ValueShift,
    apply_recipe,
    derive_seed,
    random_recipe,
    synthesize_stack,
)
from consensuscal.imaging import Image
from consensuscal.metrics import psnr

images = arrays(np.float64, (6, 5, 3), elements=st.floats(0.0, 1.0)).map(Image)
seeds = st.integers(0, 2**64 - 1)


@pytest.fixture
def truth(rng):
    return Image(rng.random((32, 32, 3)))


class TestApplyRecipe:
    def test_empty_recipe_is_identity(self, truth):
        out = apply_recipe(truth, DistortionRecipe((), seed=7))
        assert np.array_equal(out.samples, truth.samples)

    def test_channel_gain(self):
        out = apply_recipe(constant_image(0.25), DistortionRecipe((ChannelGain(0, 2.0),)))
        assert np.all(out.samples[..., 0] == 0.5)
        assert np.all(out.samples[..., 1:] == 0.25)

    def test_step_formulas(self):
        img = constant_image(0.25)
        assert np.allclose(apply_recipe(img, DistortionRecipe((ValueShift(2, 0.1),))).samples[..., 2], 0.35)
        assert np.allclose(apply_recipe(img, DistortionRecipe((Brightness(-0.05),))).samples, 0.2)
        assert np.allclose(apply_recipe(img, DistortionRecipe((ExposureGamma(2.0),))).samples, 0.0625)
        assert np.allclose(apply_recipe(img, DistortionRecipe((DynamicRangeCompress(0.1, 0.5),))).samples, 0.2)

    def test_saturation_keeps_gray(self):
        gray = constant_image(0.4)
        assert np.allclose(apply_recipe(gray, DistortionRecipe((Saturation(0.3),))).samples, 0.4)

    def test_saturation_on_grayscale_is_logged_noop(self, caplog):
        gray = constant_image(0.4, c=1)
        with caplog.at_level(logging.INFO, logger="consensuscal.distortion"):
            out = apply_recipe(gray, DistortionRecipe((Saturation(2.0),)))
        assert out == gray
        assert caplog.records

    def test_channel_out_of_range(self):
        with pytest.raises(ValueError):
            apply_recipe(constant_image(0.2, c=1), DistortionRecipe((ChannelGain(2, 1.5),)))

    @pytest.mark.parametrize(
        "step",
        [AdditiveGaussianNoise(-1.0), ChannelGain(0, -1.0), ExposureGamma(0.0), DynamicRangeCompress(0.6, 0.4)],
    )
    def test_invalid_parameters(self, step):
        with pytest.raises(ValueError):
            apply_recipe(constant_image(0.2), DistortionRecipe((step,)))

    @given(images, seeds)
    @settings(max_examples=40, deadline=None)
    def test_deterministic_and_clamped(self, img, seed):
        recipe = random_recipe(seed, "harsh")
        a, b = apply_recipe(img, recipe), apply_recipe(img, recipe)
        assert np.array_equal(a.samples, b.samples)
        assert a.samples.min() >= 0.0 and a.samples.max() <= 1.0

    @given(images, st.integers(0, 2), st.floats(0.01, 3.0), st.floats(-0.5, 0.5))
    @settings(max_examples=40, deadline=None)
    def test_channel_isolation(self, img, ch, factor, offset):
        for step in (ChannelGain(ch, factor), ValueShift(ch, offset)):
            out = apply_recipe(img, DistortionRecipe((step,))).samples
            others = [c for c in range(3) if c != ch]
            assert np.array_equal(out[..., others], img.samples[..., others])


class TestRandomRecipe:
    def test_same_seed_same_recipe(self):
        assert random_recipe(99) == random_recipe(99)

    def test_distinct_seeds_differ(self):
        recipes = [random_recipe(s).to_json().split('"steps"')[1] for s in range(100)]
        assert len(set(recipes)) == 100

    def test_unknown_severity(self):
        with pytest.raises(ValueError):
            random_recipe(0, "extreme")

    def test_first_step_is_channel_specific(self):
        for s in range(50):
            assert random_recipe(s).steps[0].kind in ("gain", "shift")

    def test_mild_is_gentler_than_harsh(self, truth):
        def mean_psnr(severity):
            return np.mean([psnr(truth, apply_recipe(truth, random_recipe(s, severity))) for s in range(20)])

        assert mean_psnr("mild") > mean_psnr("paper-like") > mean_psnr("harsh")

    @given(seeds, st.sampled_from(sorted(SEVERITY_PRESETS)))
    @settings(max_examples=50, deadline=None)
    def test_json_roundtrip(self, seed, severity):
        recipe = random_recipe(seed, severity)
        assert DistortionRecipe.from_json(recipe.to_json()) == recipe


class TestSynthesizeStack:
    def test_paper_sized_stack(self):
        truth = Image(np.random.default_rng(0).random((512, 512, 3)))
        syn = synthesize_stack(truth, 9, master_seed=1)
        assert len(syn.stack) == 9 and syn.stack.shape == (512, 512, 3)
        assert len(syn.recipes) == 9

    def test_zero_step_override(self, truth):
        syn = synthesize_stack(truth, 2, master_seed=5, severity="mild", steps_override=[])
        assert all(im == truth for im in syn.stack)

    def test_same_master_seed_is_bit_identical(self, truth):
        a = synthesize_stack(truth, 4, master_seed=123)
        b = synthesize_stack(truth, 4, master_seed=123)
        assert all(x == y for x, y in zip(a.stack, b.stack))
        assert a.recipes == b.recipes

    def test_recipe_seeds_follow_derivation(self, truth):
        syn = synthesize_stack(truth, 3, master_seed=77)
        assert [r.seed for r in syn.recipes] == [derive_seed(77, i) for i in range(3)]

    def test_needs_two_images(self, truth):
        with pytest.raises(ValueError):
            synthesize_stack(truth, 1, master_seed=0)
