"""Trainable matting head.

Consumes backbone feature scales plus their guidance maps, fuses them
coarse to fine, and sharpens the result with a stride-2 detail stream
that sees the raw image and the fused guidance. Output is a sigmoid
alpha at image resolution.

Parameters are initialized from a numpy generator so the same seed
yields bitwise-identical weights on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .container import load_container, save_container
from .errors import ConfigurationError, DimensionError, ParameterError

TOY_HEAD = dict(
    feature_channels=(16, 16, 16),
    scale_divisors=(16, 8, 4),
    fusion_channels=(32, 16, 8),
    detail_channels=(16, 32),
)
DIFFUSION_HEAD = dict(
    feature_channels=(1280, 640, 320),
    scale_divisors=(32, 16, 8),
    fusion_channels=(256, 128, 64),
    detail_channels=(32, 64, 128),
)


@dataclass(frozen=True)
class HeadConfig:
    """Architecture of the matting head.

    Scales are coarsest first and must match the backend's grids.
    The detail stream halves resolution once per entry, so
    2 ** len(detail_channels) must equal the finest scale divisor.
    Defaults fit the diffusion backend; TOY_HEAD is the fast profile.
    """

    feature_channels: tuple = (1280, 640, 320)
    scale_divisors: tuple = (32, 16, 8)
    fusion_channels: tuple = (256, 128, 64)
    detail_channels: tuple = (32, 64, 128)
    norm: str = "group"
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if len(self.scale_divisors) < 1:
            raise ConfigurationError("need at least one feature scale")
        if list(self.scale_divisors) != sorted(self.scale_divisors, reverse=True):
            raise ConfigurationError(
                f"scale divisors must be coarsest first, got {self.scale_divisors}"
            )
        if len(set(self.scale_divisors)) != len(self.scale_divisors):
            raise ConfigurationError("scale divisors must be distinct")
        if len(self.feature_channels) != len(self.scale_divisors):
            raise ConfigurationError("one feature channel count per scale")
        if len(self.fusion_channels) != len(self.scale_divisors):
            raise ConfigurationError("one fusion width per scale")
        for c in (*self.feature_channels, *self.fusion_channels, *self.detail_channels):
            if int(c) < 1:
                raise ConfigurationError(f"channel counts must be positive, got {c}")
        if 2 ** len(self.detail_channels) != self.scale_divisors[-1]:
            raise ConfigurationError(
                "detail stream must reach the finest feature scale: "
                f"2**{len(self.detail_channels)} != {self.scale_divisors[-1]}"
            )
        if self.norm not in ("group", "none"):
            raise ConfigurationError(f"unknown norm {self.norm!r}")
        if self.activation not in ("relu", "gelu"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    def to_meta(self) -> dict:
        return {
            "feature_channels": list(self.feature_channels),
            "scale_divisors": list(self.scale_divisors),
            "fusion_channels": list(self.fusion_channels),
            "detail_channels": list(self.detail_channels),
            "norm": self.norm,
            "activation": self.activation,
            "seed": self.seed,
        }

    @staticmethod
    def from_meta(meta: dict) -> "HeadConfig":
        return HeadConfig(
            feature_channels=tuple(meta["feature_channels"]),
            scale_divisors=tuple(meta["scale_divisors"]),
            fusion_channels=tuple(meta["fusion_channels"]),
            detail_channels=tuple(meta["detail_channels"]),
            norm=meta["norm"],
            activation=meta["activation"],
            seed=int(meta["seed"]),
        )


def _norm_layer(kind: str, channels: int) -> nn.Module:
    if kind == "none":
        return nn.Identity()
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


def _act_layer(kind: str) -> nn.Module:
    return nn.ReLU(inplace=False) if kind == "relu" else nn.GELU()


def _conv_block(cin, cout, cfg: HeadConfig, stride=1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        _norm_layer(cfg.norm, cout),
        _act_layer(cfg.activation),
    )


class MattingHead(nn.Module):
    """Multi-scale fusion trunk plus an image-resolution detail stream."""

    def __init__(self, config: HeadConfig):
        super().__init__()
        self.config = config
        fuse = config.fusion_channels
        self.fuse_in = nn.ModuleList(
            nn.Sequential(
                _conv_block(c + 1, f, config),
                _conv_block(f, f, config),
            )
            for c, f in zip(config.feature_channels, fuse)
        )
        # one merge conv per upsample step between consecutive scales
        self.merge = nn.ModuleList(
            _conv_block(fuse[i] + fuse[i + 1], fuse[i + 1], config)
            for i in range(len(fuse) - 1)
        )
        detail = config.detail_channels
        stems = []
        cin = 4  # rgb + fused guidance
        for c in detail:
            stems.append(_conv_block(cin, c, config, stride=2))
            cin = c
        self.detail_stems = nn.ModuleList(stems)
        # climb back up: consume detail maps finest-feature first, then raw input
        ups = []
        cin = fuse[-1]
        for c in reversed(detail):
            ups.append(_conv_block(cin + c, c, config))
            cin = c
        self.up_blocks = nn.ModuleList(ups)
        self.final_merge = _conv_block(cin + 4, detail[0], config)
        self.out_conv = nn.Conv2d(detail[0], 1, 3, padding=1)

    def forward(self, features, guidance, detail_in):
        """features/guidance: per-scale (B,C,h,w)/(B,1,h,w), coarsest first.
        detail_in: (B,4,H,W). Returns (B,1,H,W) alpha.
        """
        cfg = self.config
        if len(features) != len(cfg.scale_divisors):
            raise DimensionError(
                f"expected {len(cfg.scale_divisors)} feature scales, got {len(features)}"
            )
        fused = [
            block(torch.cat([f, g], dim=1))
            for block, f, g in zip(self.fuse_in, features, guidance)
        ]
        x = fused[0]
        for i, block in enumerate(self.merge):
            target = fused[i + 1]
            x = F.interpolate(
                x, size=target.shape[-2:], mode="bilinear", align_corners=False
            )
            x = block(torch.cat([x, target], dim=1))

        details = []
        d = detail_in
        for stem in self.detail_stems:
            d = stem(d)
            details.append(d)

        for block, skip in zip(self.up_blocks, reversed(details)):
            x = F.interpolate(
                x, size=skip.shape[-2:], mode="bilinear", align_corners=False
            )
            x = block(torch.cat([x, skip], dim=1))
        x = F.interpolate(
            x, size=detail_in.shape[-2:], mode="bilinear", align_corners=False
        )
        x = self.final_merge(torch.cat([x, detail_in], dim=1))
        return torch.sigmoid(self.out_conv(x))


def init_parameters(config: HeadConfig) -> dict:
    """Deterministic He-normal init keyed only by the config seed."""
    head = MattingHead(config)
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, p in sorted(head.named_parameters(), key=lambda kv: kv[0]):
        shape = tuple(p.shape)
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float32)
        elif p.ndim == 1:
            # norm affine scale
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            params[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return params


def build_head(config: HeadConfig, params: dict | None = None) -> MattingHead:
    head = MattingHead(config)
    if params is None:
        params = init_parameters(config)
    apply_parameters(head, params)
    head.eval()
    return head


def apply_parameters(head: MattingHead, params: dict) -> None:
    named = dict(head.named_parameters())
    missing = sorted(set(named) - set(params))
    extra = sorted(set(params) - set(named))
    if missing or extra:
        raise ConfigurationError(
            f"parameter set mismatch: missing {missing[:3]}, extra {extra[:3]}"
        )
    with torch.no_grad():
        for name, p in named.items():
            arr = np.asarray(params[name], dtype=np.float32)
            if tuple(arr.shape) != tuple(p.shape):
                raise DimensionError(
                    f"shape mismatch for {name}: {arr.shape} vs {tuple(p.shape)}"
                )
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"non-finite values in parameter {name}")
            p.copy_(torch.from_numpy(arr.copy()))


def extract_parameters(head: MattingHead) -> dict:
    return {
        name: p.detach().cpu().numpy().copy() for name, p in head.named_parameters()
    }


def head_forward(head: MattingHead, image: np.ndarray, features, guidance_maps,
                 fused: np.ndarray) -> np.ndarray:
    """Numpy-facing forward pass for one image.

    image: (H, W, 3); features: per-scale (h, w, c) arrays coarsest
    first; guidance_maps: matching (h, w) maps; fused: map resized to
    (H, W) here. Returns an (H, W) float64 alpha in [0, 1].
    """
    from .gridops import resize_bilinear

    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"image must be (H, W, 3), got {image.shape}")
    if len(features) != len(guidance_maps):
        raise DimensionError("one guidance map per feature scale")
    feats = []
    maps = []
    for f, g in zip(features, guidance_maps):
        f = np.asarray(f)
        g = np.asarray(g)
        if f.shape[:2] != g.shape:
            raise DimensionError(
                f"guidance grid {g.shape} does not match feature grid {f.shape[:2]}"
            )
        feats.append(
            torch.from_numpy(np.array(f, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)
        )
        maps.append(
            torch.from_numpy(np.array(g, dtype=np.float32)).unsqueeze(0).unsqueeze(0)
        )
    full = resize_bilinear(np.asarray(fused, dtype=np.float64), image.shape[:2])
    stack = np.concatenate([image, full[..., None]], axis=2).astype(np.float32)
    detail = torch.from_numpy(stack).permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        alpha = head(feats, maps, detail)
    return alpha.squeeze(0).squeeze(0).numpy().astype(np.float64)


def save_head(path, config: HeadConfig, params: dict) -> None:
    save_container(path, params, meta={"kind": "head", "config": config.to_meta()})


def load_head(path):
    """Returns (config, params)."""
    arrays, meta = load_container(path)
    if meta.get("kind") != "head":
        raise ConfigurationError(f"{path} is not a head checkpoint")
    return HeadConfig.from_meta(meta["config"]), arrays
