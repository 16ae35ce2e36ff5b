import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from rsformer.errors import ConfigError, ContractError
from rsformer.synthesis import (
    ImagePair,
    RainParams,
    SnowParams,
    composite_rain,
    composite_snow,
    generate_rain_layer,
    generate_snow,
    procedural_scene,
    sample_rain_params,
    streak_kernel,
    synthesize_pair,
)


class TestRainParams:
    @pytest.mark.parametrize(
        "changes",
        [
            {"density": -0.1},
            {"density": 1.5},
            {"streak_length": 9},
            {"streak_length": 61},
            {"streak_length": 20.5},
            {"angle": 46.0},
            {"angle": -46.0},
            {"intensity": 0.0},
            {"intensity": 1.1},
        ],
    )
    def test_out_of_range(self, changes):
        with pytest.raises(ConfigError):
            RainParams(**changes)

    def test_sampled_params_are_valid(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert isinstance(sample_rain_params(rng), RainParams)


class TestStreaks:
    def test_horizontal_kernel(self):
        k = streak_kernel(11, 0.0)
        assert k.shape == (11, 11)
        assert k[5].sum() == 11 and k.sum() == 11

    def test_vertical_kernel(self):
        k = streak_kernel(11, 90.0)
        assert k[:, 5].sum() == 11 and k.sum() == 11

    def test_kernel_slope_sign(self):
        # positive angles rise to the right
        k = streak_kernel(21, 45.0)
        assert k[:10, 11:].sum() > 0 and k[11:, :10].sum() > 0
        assert k[:10, :10].sum() == 0 and k[11:, 11:].sum() == 0

    def test_layer_is_deterministic_and_bounded(self):
        p = RainParams(density=0.01, streak_length=15, angle=-10.0, intensity=0.7)
        a = generate_rain_layer(48, 40, p, seed=5)
        assert a.shape == (1, 1, 48, 40) and a.dtype == torch.float32
        assert torch.equal(a, generate_rain_layer(48, 40, p, seed=5))
        assert not torch.equal(a, generate_rain_layer(48, 40, p, seed=6))
        assert a.min() >= 0 and a.max() <= 0.7 + 1e-7 and a.max() > 0

    def test_zero_density_is_empty(self):
        layer = generate_rain_layer(32, 32, RainParams(density=0.0), seed=0)
        assert torch.equal(layer, torch.zeros_like(layer))

    def test_streaks_follow_angle(self):
        # a horizontal streak layer varies less along rows than along columns
        layer = generate_rain_layer(64, 64, RainParams(density=0.003, streak_length=30, angle=0.0), 1)[0, 0]
        along = (layer[:, 1:] - layer[:, :-1]).abs().mean()
        across = (layer[1:] - layer[:-1]).abs().mean()
        assert along < across

    def test_image_smaller_than_streak(self):
        with pytest.raises(ContractError):
            generate_rain_layer(8, 64, RainParams(streak_length=10), 0)


class TestComposite:
    def test_rain_adds_and_clips(self):
        clean = torch.full((1, 3, 4, 4), 0.8)
        rain = torch.zeros(1, 1, 4, 4)
        rain[0, 0, 0, 0] = 0.5
        out = composite_rain(clean, rain)
        assert out[0, :, 0, 0].tolist() == [1.0, 1.0, 1.0]
        assert torch.equal(out[0, :, 1:], clean[0, :, 1:])

    def test_no_snow_is_identity(self):
        x = torch.rand(1, 3, 8, 8)
        assert torch.equal(composite_snow(x, SnowParams.none(8, 8)), x)

    def test_full_snow_occludes_rain(self):
        clean = procedural_scene(32, 32, 0)
        snow = SnowParams(torch.ones(1, 1, 32, 32), torch.full((1, 3, 32, 32), 0.9))
        pair = synthesize_pair(clean, RainParams(density=0.02, streak_length=10), snow, seed=0)
        assert torch.allclose(pair.degraded, torch.full_like(clean, 0.9))

    def test_order_is_rain_then_snow(self):
        clean = procedural_scene(32, 32, 1)
        rain = RainParams(density=0.02, streak_length=10)
        snow = generate_snow(32, 32, seed=2, flakes=0.02)
        pair = synthesize_pair(clean, rain, snow, seed=3)
        layer = generate_rain_layer(32, 32, rain, 3)
        expected = composite_snow(composite_rain(clean, layer), snow)
        assert torch.equal(pair.degraded, expected)

    def test_snow_mask_shape_checked(self):
        with pytest.raises(ContractError):
            composite_snow(torch.rand(1, 3, 8, 8), SnowParams.none(8, 9))

    def test_snow_params_validated(self):
        with pytest.raises(ContractError):
            SnowParams(torch.full((1, 1, 2, 2), 1.5), torch.ones(1, 3, 2, 2))
        with pytest.raises(ContractError):
            SnowParams(torch.zeros(1, 3, 2, 2), torch.ones(1, 3, 2, 2))


class TestGenerators:
    @settings(max_examples=10, deadline=None)
    @given(h=st.integers(8, 40), w=st.integers(8, 40), seed=st.integers(0, 1000))
    def test_snow_ranges(self, h, w, seed):
        snow = generate_snow(h, w, seed)
        assert snow.mask.shape == (1, 1, h, w) and snow.aberration.shape == (1, 3, h, w)
        assert 0 <= snow.mask.min() and snow.mask.max() <= 1
        assert 0 <= snow.aberration.min() and snow.aberration.max() <= 1

    def test_snow_deterministic(self):
        a, b = generate_snow(20, 20, 4), generate_snow(20, 20, 4)
        assert torch.equal(a.mask, b.mask) and torch.equal(a.aberration, b.aberration)

    def test_scene_in_range(self):
        x = procedural_scene(30, 20, 7)
        assert x.shape == (1, 3, 30, 20)
        assert x.min() >= 0 and x.max() <= 1
        assert torch.equal(x, procedural_scene(30, 20, 7))

    def test_pair_provenance_and_nones(self):
        clean = procedural_scene(16, 16, 0)
        pair = synthesize_pair(clean, None, None, seed=9)
        assert torch.equal(pair.degraded, clean)
        assert pair.provenance == {"seed": 9, "rain": None, "snow_coverage": 0.0}

    def test_pair_shape_mismatch(self):
        with pytest.raises(ContractError, match="differ in shape"):
            ImagePair(torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 5))
