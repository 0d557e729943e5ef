"""Adapter for a pretrained latent text-to-image diffusion U-Net.

The U-Net stays frozen and is probed as a feature extractor: the image is
encoded to a latent, noised to the configured timestep with a seeded draw,
and pushed through the denoiser once. Feature maps are tapped from the
configured decoder blocks (1-indexed over the flattened decoder resnets);
self-attention is captured per decoder stage, averaged over heads and
transformer blocks, then row-renormalized.

Model weights are loaded lazily; any import/download/load failure surfaces
as BackendError so callers can fall back or report exit codes cleanly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..core import ImagePlane
from ..errors import BackendError, ConfigurationError, DimensionError
from .base import AttentionScale, FeatureBundle, FeatureScale
from .schedule import NoiseSchedule, add_noise

DECODER_DEPTH = 11


@dataclass(frozen=True)
class DiffusionConfig:
    timestep: int = 200
    conditioning_text: str = ""
    noise_seed: int = 0
    checkpoint: str = "stabilityai/stable-diffusion-2-1"
    extraction_blocks: tuple[int, ...] = (5, 8, 11)
    inter_block: int = 5
    native_resolution: int = 768

    def __post_init__(self):
        if self.timestep < 0:
            raise ConfigurationError("timestep must be >= 0")
        if not self.extraction_blocks:
            raise ConfigurationError("need at least one extraction block")
        for b in self.extraction_blocks:
            if not 1 <= b <= DECODER_DEPTH:
                raise ConfigurationError(
                    f"extraction block {b} outside decoder depth 1..{DECODER_DEPTH}"
                )
        if self.inter_block not in self.extraction_blocks:
            raise ConfigurationError("inter_block must be one of extraction_blocks")
        if self.native_resolution % 8 != 0:
            raise ConfigurationError("native resolution must be a multiple of 8")


class DiffusionBackend:
    """Feature extraction from a frozen latent-diffusion checkpoint."""

    def __init__(self, config: DiffusionConfig | None = None):
        self.config = config or DiffusionConfig()
        self._models = None

    @property
    def native_resolution(self) -> int | None:
        return self.config.native_resolution

    def fingerprint(self) -> str:
        if self._models is not None:
            h = hashlib.sha256()
            unet = self._models["unet"]
            for name, param in sorted(unet.state_dict().items()):
                h.update(name.encode())
                h.update(param.detach().cpu().numpy().tobytes())
            return "diffusion:" + h.hexdigest()[:16]
        return "diffusion:" + hashlib.sha256(self.config.checkpoint.encode()).hexdigest()[:16]

    # -- lazy model loading -------------------------------------------------

    def _load(self):
        if self._models is not None:
            return self._models
        try:
            import torch
            from diffusers import AutoencoderKL, DDPMScheduler, UNet2DConditionModel
            from transformers import CLIPTextModel, CLIPTokenizer
        except ImportError as e:
            raise BackendError(f"diffusion backend dependencies unavailable: {e}") from e
        ckpt = self.config.checkpoint
        try:
            vae = AutoencoderKL.from_pretrained(ckpt, subfolder="vae")
            unet = UNet2DConditionModel.from_pretrained(ckpt, subfolder="unet")
            scheduler = DDPMScheduler.from_pretrained(ckpt, subfolder="scheduler")
            tokenizer = CLIPTokenizer.from_pretrained(ckpt, subfolder="tokenizer")
            text_encoder = CLIPTextModel.from_pretrained(ckpt, subfolder="text_encoder")
        except Exception as e:
            raise BackendError(f"cannot load checkpoint {ckpt!r}: {e}") from e
        vae.eval().requires_grad_(False)
        unet.eval().requires_grad_(False)
        text_encoder.eval().requires_grad_(False)
        schedule = NoiseSchedule(scheduler.alphas_cumprod.cpu().numpy())
        if not 0 <= self.config.timestep < len(schedule):
            raise ConfigurationError(
                f"timestep {self.config.timestep} outside schedule of {len(schedule)} steps"
            )
        self._models = {
            "torch": torch,
            "vae": vae,
            "unet": unet,
            "schedule": schedule,
            "tokenizer": tokenizer,
            "text_encoder": text_encoder,
        }
        return self._models

    def schedule(self) -> NoiseSchedule:
        return self._load()["schedule"]

    # -- extraction ---------------------------------------------------------

    def extract(self, image: ImagePlane) -> FeatureBundle:
        cfg = self.config
        if image.channels != 3:
            raise DimensionError("diffusion backend expects a 3-channel image")
        if image.height != cfg.native_resolution or image.width != cfg.native_resolution:
            raise DimensionError(
                f"image must be pre-sized to {cfg.native_resolution}px square, "
                f"got {image.height}x{image.width}"
            )
        models = self._load()
        torch = models["torch"]

        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(image.data)).float()
            x = (x.permute(2, 0, 1)[None] - 0.5) * 2.0
            posterior = models["vae"].encode(x).latent_dist
            z0 = posterior.mean * models["vae"].config.scaling_factor
            zt_np = add_noise(
                z0.cpu().numpy(), cfg.timestep, cfg.noise_seed, models["schedule"]
            )
            zt = torch.from_numpy(zt_np).float()

            prompt_embed = self._embed_text(models, cfg.conditioning_text)
            taps = _DecoderTaps(models["unet"])
            try:
                models["unet"](zt, cfg.timestep, encoder_hidden_states=prompt_embed)
            finally:
                taps.remove()

        return self._bundle_from_taps(taps)

    def _embed_text(self, models, text: str):
        torch = models["torch"]
        tokens = models["tokenizer"](
            [text], padding="max_length",
            max_length=models["tokenizer"].model_max_length,
            truncation=True, return_tensors="pt",
        )
        with torch.no_grad():
            return models["text_encoder"](tokens.input_ids)[0]

    def _bundle_from_taps(self, taps: "_DecoderTaps") -> FeatureBundle:
        cfg = self.config
        depth = len(taps.block_outputs)
        for b in cfg.extraction_blocks:
            if b > depth:
                raise ConfigurationError(
                    f"extraction block {b} exceeds checkpoint decoder depth {depth}"
                )
        features = []
        attention = []
        for block in sorted(cfg.extraction_blocks):
            feat = taps.block_outputs[block - 1]
            h, w = feat.shape[-2], feat.shape[-1]
            tensor = feat[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)
            features.append(FeatureScale(scale_id=block, tensor=tensor))
            attn = taps.attention_for(h * w)
            if attn is None:
                raise BackendError(f"no self-attention captured at block {block}")
            mat = attn.cpu().numpy().astype(np.float64)
            mat /= mat.sum(axis=1, keepdims=True)
            attention.append(AttentionScale(scale_id=block, grid_hw=(h, w), matrix=mat))
        return FeatureBundle(
            features=tuple(features),
            attention=tuple(attention),
            inter_scale_id=cfg.inter_block,
        )


class _DecoderTaps:
    """Forward hooks over the U-Net decoder.

    Collects every decoder resnet output in forward order (1-indexed when
    consumed) and head-averaged self-attention probabilities keyed by the
    number of spatial cells, averaged over the transformer blocks sharing a
    resolution.
    """

    def __init__(self, unet):
        self._handles = []
        self.block_outputs = []
        self._attn_sums = {}
        self._attn_counts = {}
        for up_block in unet.up_blocks:
            for resnet in up_block.resnets:
                self._handles.append(
                    resnet.register_forward_hook(self._on_resnet)
                )
            for attn in getattr(up_block, "attentions", []) or []:
                for tb in attn.transformer_blocks:
                    self._handles.append(
                        tb.attn1.register_forward_hook(self._make_attn_hook(tb.attn1))
                    )

    def _on_resnet(self, module, args, output):
        self.block_outputs.append(output.detach())

    def _make_attn_hook(self, attn_module):
        def hook(module, args, output):
            hidden = args[0]
            probs = _self_attention_probs(attn_module, hidden.detach())
            n = probs.shape[-1]
            if n in self._attn_sums:
                self._attn_sums[n] = self._attn_sums[n] + probs
                self._attn_counts[n] += 1
            else:
                self._attn_sums[n] = probs
                self._attn_counts[n] = 1
        return hook

    def attention_for(self, cells: int):
        if cells not in self._attn_sums:
            return None
        return self._attn_sums[cells] / self._attn_counts[cells]

    def remove(self):
        for h in self._handles:
            h.remove()


def _self_attention_probs(attn, hidden):
    """Head-averaged softmax(QK^T / sqrt(d)) of one self-attention module."""
    import torch

    q = attn.to_q(hidden)
    k = attn.to_k(hidden)
    batch, n, _ = q.shape
    heads = attn.heads
    q = q.reshape(batch, n, heads, -1).permute(0, 2, 1, 3)
    k = k.reshape(batch, n, heads, -1).permute(0, 2, 1, 3)
    scores = torch.matmul(q, k.transpose(-1, -2)) / (q.shape[-1] ** 0.5)
    probs = torch.softmax(scores, dim=-1)
    return probs.mean(dim=(0, 1))
