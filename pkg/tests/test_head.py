"""Tests for the matting head: config validation, deterministic
initialization, forward contract, and checkpoint round-trips."""

import numpy as np
import pytest
import torch

from iconmat.errors import ConfigurationError, DimensionError, ParameterError
from iconmat.head import (
    TOY_HEAD,
    HeadConfig,
    MattingHead,
    apply_parameters,
    build_head,
    extract_parameters,
    head_forward,
    init_parameters,
    load_head,
    save_head,
)


def _toy_inputs(rng, size=64, batch=1):
    """Feature/guidance tensors shaped for the TOY_HEAD profile."""
    cfg = HeadConfig(**TOY_HEAD)
    features, guidance = [], []
    for c, div in zip(cfg.feature_channels, cfg.scale_divisors):
        h = size // div
        features.append(torch.from_numpy(
            rng.standard_normal((batch, c, h, h)).astype(np.float32)))
        guidance.append(torch.from_numpy(
            rng.uniform(0, 1, (batch, 1, h, h)).astype(np.float32)))
    detail = torch.from_numpy(
        rng.uniform(0, 1, (batch, 4, size, size)).astype(np.float32))
    return features, guidance, detail


class TestHeadConfig:
    def test_defaults_are_valid(self):
        cfg = HeadConfig()
        assert cfg.scale_divisors == (32, 16, 8)
        assert 2 ** len(cfg.detail_channels) == cfg.scale_divisors[-1]

    def test_toy_profile_is_valid(self):
        cfg = HeadConfig(**TOY_HEAD)
        assert cfg.scale_divisors == (16, 8, 4)

    def test_meta_round_trip(self):
        cfg = HeadConfig(**TOY_HEAD)
        assert HeadConfig.from_meta(cfg.to_meta()) == cfg

    @pytest.mark.parametrize(
        "overrides",
        [
            dict(scale_divisors=()),
            dict(scale_divisors=(8, 16, 4)),
            dict(scale_divisors=(16, 16, 4)),
            dict(feature_channels=(16, 16)),
            dict(fusion_channels=(32, 16)),
            dict(fusion_channels=(32, 16, 0)),
            dict(detail_channels=(16,)),
            dict(norm="batch"),
            dict(activation="tanh"),
        ],
    )
    def test_rejects_bad_configs(self, overrides):
        kwargs = dict(TOY_HEAD)
        kwargs.update(overrides)
        with pytest.raises(ConfigurationError):
            HeadConfig(**kwargs)


class TestInitParameters:
    def test_same_seed_is_bitwise_identical(self, toy_head_config):
        a = init_parameters(toy_head_config)
        b = init_parameters(toy_head_config)
        assert sorted(a) == sorted(b)
        for name in a:
            assert np.array_equal(a[name], b[name])

    def test_different_seed_differs(self, toy_head_config):
        a = init_parameters(toy_head_config)
        other = HeadConfig(**{**TOY_HEAD, "seed": 1})
        b = init_parameters(other)
        changed = sum(not np.array_equal(a[n], b[n]) for n in a)
        assert changed > 0

    def test_biases_zero_and_norm_scales_one(self, toy_head_config):
        params = init_parameters(toy_head_config)
        for name, arr in params.items():
            if name.endswith(".bias"):
                assert not arr.any(), name
            elif arr.ndim == 1:
                assert np.array_equal(arr, np.ones_like(arr)), name

    def test_conv_weights_match_fan_in_scale(self, toy_head_config):
        params = init_parameters(toy_head_config)
        convs = {n: a for n, a in params.items() if a.ndim == 4}
        assert convs
        for name, arr in convs.items():
            fan_in = int(np.prod(arr.shape[1:]))
            expected_std = np.sqrt(2.0 / fan_in)
            # He-normal draws: sample std should sit near the target
            assert 0.5 * expected_std < arr.std() < 1.5 * expected_std, name

    def test_count_matches_module_parameters(self, toy_head_config):
        params = init_parameters(toy_head_config)
        head = MattingHead(toy_head_config)
        manifest_total = sum(int(np.prod(a.shape)) for a in params.values())
        module_total = sum(p.numel() for p in head.parameters())
        assert manifest_total == module_total


class TestApplyExtract:
    def test_round_trip(self, toy_head_config):
        params = init_parameters(toy_head_config)
        head = build_head(toy_head_config, params)
        out = extract_parameters(head)
        assert sorted(out) == sorted(params)
        for name in params:
            assert np.array_equal(out[name], params[name])

    def test_missing_parameter_rejected(self, toy_head_config):
        params = init_parameters(toy_head_config)
        params.pop(sorted(params)[0])
        head = MattingHead(toy_head_config)
        with pytest.raises(ConfigurationError):
            apply_parameters(head, params)

    def test_extra_parameter_rejected(self, toy_head_config):
        params = init_parameters(toy_head_config)
        params["bogus.weight"] = np.zeros(3, dtype=np.float32)
        head = MattingHead(toy_head_config)
        with pytest.raises(ConfigurationError):
            apply_parameters(head, params)

    def test_shape_mismatch_rejected(self, toy_head_config):
        params = init_parameters(toy_head_config)
        name = next(n for n, a in params.items() if a.ndim == 4)
        params[name] = params[name][:, :, :1, :1].copy()
        head = MattingHead(toy_head_config)
        with pytest.raises(DimensionError):
            apply_parameters(head, params)

    def test_non_finite_rejected(self, toy_head_config):
        params = init_parameters(toy_head_config)
        name = next(n for n, a in params.items() if a.ndim == 4)
        params[name] = params[name].copy()
        params[name].flat[0] = np.nan
        head = MattingHead(toy_head_config)
        with pytest.raises(ParameterError):
            apply_parameters(head, params)


class TestForward:
    def test_output_shape_and_range(self, toy_head):
        rng = np.random.default_rng(0)
        features, guidance, detail = _toy_inputs(rng)
        out = toy_head(features, guidance, detail)
        assert out.shape == (1, 1, 64, 64)
        vals = out.detach().numpy()
        assert vals.min() >= 0.0 and vals.max() <= 1.0

    def test_deterministic(self, toy_head):
        rng = np.random.default_rng(1)
        features, guidance, detail = _toy_inputs(rng)
        a = toy_head(features, guidance, detail).detach().numpy()
        b = toy_head(features, guidance, detail).detach().numpy()
        assert np.array_equal(a, b)

    def test_batch_dimension(self, toy_head):
        rng = np.random.default_rng(2)
        features, guidance, detail = _toy_inputs(rng, batch=3)
        out = toy_head(features, guidance, detail)
        assert out.shape == (3, 1, 64, 64)

    def test_rectangular_input(self, toy_head):
        rng = np.random.default_rng(3)
        cfg = toy_head.config
        features, guidance = [], []
        for c, div in zip(cfg.feature_channels, cfg.scale_divisors):
            features.append(torch.from_numpy(
                rng.standard_normal((1, c, 48 // div, 64 // div)).astype(np.float32)))
            guidance.append(torch.from_numpy(
                rng.uniform(0, 1, (1, 1, 48 // div, 64 // div)).astype(np.float32)))
        detail = torch.from_numpy(rng.uniform(0, 1, (1, 4, 48, 64)).astype(np.float32))
        out = toy_head(features, guidance, detail)
        assert out.shape == (1, 1, 48, 64)

    def test_wrong_scale_count_raises(self, toy_head):
        rng = np.random.default_rng(4)
        features, guidance, detail = _toy_inputs(rng)
        with pytest.raises(DimensionError):
            toy_head(features[:2], guidance[:2], detail)

    def test_guidance_changes_output(self, toy_head):
        rng = np.random.default_rng(5)
        features, guidance, detail = _toy_inputs(rng)
        base = toy_head(features, guidance, detail).detach().numpy()
        bumped = [g + 0.5 for g in guidance]
        out = toy_head(features, bumped, detail).detach().numpy()
        assert not np.array_equal(base, out)

    def test_gradients_flow_to_all_parameters(self, toy_head_config):
        head = build_head(toy_head_config)
        head.train()
        rng = np.random.default_rng(6)
        features, guidance, detail = _toy_inputs(rng, size=32)
        loss = head(features, guidance, detail).mean()
        loss.backward()
        for name, p in head.named_parameters():
            assert p.grad is not None, name
        total = sum(float(p.grad.abs().sum()) for p in head.parameters())
        assert total > 0.0


class TestHeadForwardFacade:
    def _numpy_inputs(self, rng, size=64):
        cfg = HeadConfig(**TOY_HEAD)
        image = rng.uniform(0, 1, (size, size, 3))
        features, maps = [], []
        for c, div in zip(cfg.feature_channels, cfg.scale_divisors):
            h = size // div
            features.append(rng.standard_normal((h, h, c)))
            maps.append(rng.uniform(0, 1, (h, h)))
        fused = rng.uniform(0, 1, (size // cfg.scale_divisors[-1],) * 2)
        return image, features, maps, fused

    def test_shape_and_range(self, toy_head):
        rng = np.random.default_rng(7)
        image, features, maps, fused = self._numpy_inputs(rng)
        alpha = head_forward(toy_head, image, features, maps, fused)
        assert alpha.shape == (64, 64)
        assert alpha.dtype == np.float64
        assert alpha.min() >= 0.0 and alpha.max() <= 1.0

    def test_deterministic(self, toy_head):
        rng = np.random.default_rng(8)
        image, features, maps, fused = self._numpy_inputs(rng)
        a = head_forward(toy_head, image, features, maps, fused)
        b = head_forward(toy_head, image, features, maps, fused)
        assert np.array_equal(a, b)

    def test_rejects_bad_image_shape(self, toy_head):
        rng = np.random.default_rng(9)
        _, features, maps, fused = self._numpy_inputs(rng)
        with pytest.raises(DimensionError):
            head_forward(toy_head, rng.uniform(0, 1, (64, 64)), features, maps, fused)

    def test_rejects_mismatched_guidance_grid(self, toy_head):
        rng = np.random.default_rng(10)
        image, features, maps, fused = self._numpy_inputs(rng)
        maps[0] = maps[0][:-1, :]
        with pytest.raises(DimensionError):
            head_forward(toy_head, image, features, maps, fused)

    def test_rejects_wrong_scale_count(self, toy_head):
        rng = np.random.default_rng(11)
        image, features, maps, fused = self._numpy_inputs(rng)
        with pytest.raises(DimensionError):
            head_forward(toy_head, image, features[:2], maps[:2], fused)


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path, toy_head_config):
        params = init_parameters(toy_head_config)
        path = tmp_path / "head.icmt"
        save_head(path, toy_head_config, params)
        config, loaded = load_head(path)
        assert config == toy_head_config
        assert sorted(loaded) == sorted(params)
        for name in params:
            assert np.array_equal(loaded[name], params[name])

    def test_loaded_parameters_apply_cleanly(self, tmp_path, toy_head_config):
        path = tmp_path / "head.icmt"
        save_head(path, toy_head_config, init_parameters(toy_head_config))
        config, params = load_head(path)
        head = build_head(config, params)
        rng = np.random.default_rng(12)
        features, guidance, detail = _toy_inputs(rng)
        out = head(features, guidance, detail)
        assert out.shape == (1, 1, 64, 64)

    def test_rejects_non_head_container(self, tmp_path):
        from iconmat.container import save_container

        path = tmp_path / "other.icmt"
        save_container(path, {"x": np.zeros(3)}, meta={"kind": "dump"})
        with pytest.raises(ConfigurationError):
            load_head(path)
