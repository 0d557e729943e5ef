"""Head training: losses, pair sampling, and a resumable loop.

Randomness is drawn from a fresh generator seeded with
[seed, iteration] each step, so a run stopped at iteration i and
resumed from its checkpoint replays iterations i+1..N exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import morphology
from .backend.base import FeatureBundle
from .container import load_container, save_container
from .core import ImagePlane
from .errors import (
    ConfigurationError,
    DegenerateSampleError,
    NonFiniteLossError,
    ParameterError,
)
from .head import (
    HeadConfig,
    MattingHead,
    apply_parameters,
    build_head,
    extract_parameters,
    init_parameters,
)
from .similarity import build_query, compute_guidance

LAPLACIAN_LEVELS = 5


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 4e-4
    weight_decay: float = 0.01
    batch_size: int = 8
    crop_size: int = 768
    iterations: int = 20000
    w_l1: float = 1.0
    w_laplacian: float = 1.0
    w_gradient: float = 1.0
    w_segmentation: float = 1.0
    erosion_radius: int = 10
    seed: int = 0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.iterations < 1 or self.crop_size < 1:
            raise ParameterError("batch size, iterations, and crop size must be >= 1")
        if self.checkpoint_every < 1:
            raise ParameterError("checkpoint interval must be >= 1")
        if self.erosion_radius < 1:
            raise ParameterError("erosion radius must be >= 1")

    def to_meta(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "crop_size": self.crop_size,
            "iterations": self.iterations,
            "w_l1": self.w_l1,
            "w_laplacian": self.w_laplacian,
            "w_gradient": self.w_gradient,
            "w_segmentation": self.w_segmentation,
            "erosion_radius": self.erosion_radius,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }

    @staticmethod
    def from_meta(meta: dict) -> "TrainConfig":
        return TrainConfig(**meta)


# ---------------------------------------------------------------- losses

_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _binomial_kernel(dtype, device):
    k = np.outer(_BINOMIAL, _BINOMIAL)
    return torch.as_tensor(k, dtype=dtype, device=device).view(1, 1, 5, 5)


def _blur(x, kernel):
    return F.conv2d(F.pad(x, (2, 2, 2, 2), mode="reflect"), kernel)


def _downsample(x, kernel):
    return _blur(x, kernel)[..., ::2, ::2]


def _upsample(x, kernel, out_hw):
    b, c, h, w = x.shape
    up = torch.zeros((b, c, 2 * h, 2 * w), dtype=x.dtype, device=x.device)
    up[..., ::2, ::2] = x
    up = _blur(up, kernel * 4.0)
    return up[..., : out_hw[0], : out_hw[1]]


def laplacian_pyramid(x, levels: int = LAPLACIAN_LEVELS):
    """Band-pass stack; the residual low-pass level is dropped.

    Stops early once a level is too small for the 5x5 kernel's reflect
    padding (min side < 3), so small crops get fewer bands.
    """
    kernel = _binomial_kernel(x.dtype, x.device)
    bands = []
    g = x
    for _ in range(levels):
        if min(g.shape[-2:]) < 3:
            break
        down = _downsample(g, kernel)
        up = _upsample(down, kernel, g.shape[-2:])
        bands.append(g - up)
        g = down
    return bands


def laplacian_loss(pred, target, levels: int = LAPLACIAN_LEVELS):
    """L1 per band, doubling the weight at each finer-to-coarser step."""
    loss = pred.new_zeros(())
    for s, (bp, bt) in enumerate(
        zip(laplacian_pyramid(pred, levels), laplacian_pyramid(target, levels))
    ):
        loss = loss + (2.0**s) * (bp - bt).abs().mean()
    return loss


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def _sobel(x):
    kx = torch.as_tensor(_SOBEL_X, dtype=x.dtype, device=x.device).view(1, 1, 3, 3)
    ky = kx.transpose(-1, -2)
    padded = F.pad(x, (1, 1, 1, 1), mode="reflect")
    return F.conv2d(padded, kx), F.conv2d(padded, ky)


def gradient_loss(pred, target):
    gxp, gyp = _sobel(pred)
    gxt, gyt = _sobel(target)
    return (gxp - gxt).abs().mean() + (gyp - gyt).abs().mean()


def matting_loss(pred, target, config: TrainConfig):
    """Weighted sum of absolute, band-pass, and edge terms.

    Returns (total, components) with float components for logging.
    """
    l1 = (pred - target).abs().mean()
    lap = laplacian_loss(pred, target)
    grad = gradient_loss(pred, target)
    total = config.w_l1 * l1 + config.w_laplacian * lap + config.w_gradient * grad
    return total, {
        "l1": float(l1.detach()),
        "laplacian": float(lap.detach()),
        "gradient": float(grad.detach()),
    }


def confident_area(mask: np.ndarray, radius: int) -> np.ndarray:
    """Pixels far enough from the boundary to trust a hard label."""
    fg = np.asarray(mask) > 0.5
    inner = morphology.erode(fg, radius)
    outer = morphology.erode(~fg, radius)
    return inner | outer


def segmentation_loss(pred, target_mask: np.ndarray, radius: int):
    """Masked L1 against a hard mask; boundary pixels carry no gradient."""
    target_mask = np.asarray(target_mask)
    if not np.all((target_mask == 0) | (target_mask == 1)):
        raise ParameterError("segmentation label must be strictly binary")
    conf = confident_area(target_mask, radius)
    if not conf.any():
        raise DegenerateSampleError("no confident pixels after boundary erosion")
    conf_t = torch.as_tensor(conf, dtype=pred.dtype, device=pred.device)
    hard = torch.as_tensor(
        (np.asarray(target_mask) > 0.5).astype(np.float64),
        dtype=pred.dtype,
        device=pred.device,
    )
    return ((pred.squeeze(0).squeeze(0) - hard).abs() * conf_t).sum() / conf_t.sum()


# ----------------------------------------------------------- pair sampling


@dataclass(frozen=True)
class TrainGroup:
    """One context group the sampler can draw from."""

    group_id: str
    kind: str  # "matting" | "segmentation"
    images: tuple  # of ImagePlane
    labels: tuple  # of (H, W) float64 arrays

    def __post_init__(self):
        if self.kind not in ("matting", "segmentation"):
            raise ParameterError(f"unknown group kind {self.kind!r}")
        if len(self.images) != len(self.labels):
            raise ParameterError("one label per image")


@dataclass(frozen=True)
class SamplePair:
    group_id: str
    kind: str
    reference_index: int
    target_index: int
    reference: np.ndarray  # (S, S, 3)
    reference_label: np.ndarray
    target: np.ndarray
    target_label: np.ndarray

    @property
    def ids(self) -> str:
        return f"{self.group_id}[ref={self.reference_index},tgt={self.target_index}]"


def _pad_reflect_to(arr: np.ndarray, size: int) -> np.ndarray:
    # np.pad reflect can only add dim-1 pixels per call; iterate for tiny inputs
    while arr.shape[0] < size or arr.shape[1] < size:
        py = min(size - arr.shape[0], arr.shape[0] - 1) if arr.shape[0] < size else 0
        px = min(size - arr.shape[1], arr.shape[1] - 1) if arr.shape[1] < size else 0
        if py == 0 and px == 0:
            raise ParameterError("cannot reflect-pad a 1-pixel axis")
        widths = [(0, py), (0, px)] + [(0, 0)] * (arr.ndim - 2)
        arr = np.pad(arr, widths, mode="reflect")
    return arr


def _crop(image: np.ndarray, label: np.ndarray, size: int, rng):
    image = _pad_reflect_to(image, size)
    label = _pad_reflect_to(label, size)
    top = int(rng.integers(0, image.shape[0] - size + 1))
    left = int(rng.integers(0, image.shape[1] - size + 1))
    return (
        image[top : top + size, left : left + size],
        label[top : top + size, left : left + size],
    )


def sample_pair(groups, config: TrainConfig, rng) -> SamplePair:
    """Draw group (weighted by member count), then reference and target
    uniformly and independently; they may coincide."""
    weights = np.array([len(g.images) for g in groups], dtype=np.float64)
    group = groups[int(rng.choice(len(groups), p=weights / weights.sum()))]
    ref_i = int(rng.integers(0, len(group.images)))
    tgt_i = int(rng.integers(0, len(group.images)))
    ref_img, ref_lab = _crop(
        group.images[int(ref_i)].data, group.labels[int(ref_i)], config.crop_size, rng
    )
    tgt_img, tgt_lab = _crop(
        group.images[int(tgt_i)].data, group.labels[int(tgt_i)], config.crop_size, rng
    )
    return SamplePair(
        group_id=group.group_id,
        kind=group.kind,
        reference_index=int(ref_i),
        target_index=int(tgt_i),
        reference=ref_img,
        reference_label=ref_lab,
        target=tgt_img,
        target_label=tgt_lab,
    )


# --------------------------------------------------------------- trainer


def _bundle_to_tensors(bundle: FeatureBundle, guidance):
    feats = [
        torch.from_numpy(np.array(f.tensor, dtype=np.float32)).permute(2, 0, 1).unsqueeze(0)
        for f in bundle.features
    ]
    maps = [
        torch.from_numpy(np.array(m, dtype=np.float32)).unsqueeze(0).unsqueeze(0)
        for m in guidance.per_scale
    ]
    return feats, maps


def _detail_input(image: np.ndarray, fused: np.ndarray):
    from .gridops import resize_bilinear

    full = resize_bilinear(fused, image.shape[:2])
    stack = np.concatenate([image, full[..., None]], axis=2).astype(np.float32)
    return torch.from_numpy(stack).permute(2, 0, 1).unsqueeze(0)


class Trainer:
    """Owns the head, the optimizer, and the step/checkpoint logic."""

    def __init__(self, backend, head_config: HeadConfig, train_config: TrainConfig,
                 groups, use_intra: bool = True, log=print):
        kept = []
        for g in groups:
            if len(g.images) == 0:
                log(f"warning: skipping empty group {g.group_id!r}")
                continue
            kept.append(g)
        groups = kept
        if not groups:
            raise ParameterError("no usable training groups")
        native = backend.native_resolution
        if native is not None and train_config.crop_size > native:
            raise ConfigurationError(
                f"crop size {train_config.crop_size} exceeds backend resolution {native}"
            )
        self.backend = backend
        self.head_config = head_config
        self.config = train_config
        self.groups = tuple(groups)
        self.use_intra = use_intra
        self.head = build_head(head_config, init_parameters(head_config))
        self.head.train()
        self.optimizer = torch.optim.AdamW(
            self.head.parameters(),
            lr=train_config.learning_rate,
            weight_decay=train_config.weight_decay,
        )
        self.iteration = 0
        self.fingerprint = backend.fingerprint()

    def _forward_pair(self, pair: SamplePair):
        ref = ImagePlane(pair.reference)
        tgt = ImagePlane(pair.target)
        ref_bundle = self.backend.extract(ref)
        tgt_bundle = self.backend.extract(tgt)
        roi = (pair.reference_label > 0.5).astype(np.float64)
        query = build_query(ref_bundle, roi)
        guidance = compute_guidance(query, tgt_bundle, use_intra=self.use_intra)
        feats, maps = _bundle_to_tensors(tgt_bundle, guidance)
        detail = _detail_input(pair.target, guidance.fused)
        return self.head(feats, maps, detail)

    def train_step(self, iteration: int) -> dict:
        """One optimizer update. Returns the loss record for logging."""
        rng = np.random.default_rng([self.config.seed, iteration])
        pairs = [sample_pair(self.groups, self.config, rng)
                 for _ in range(self.config.batch_size)]
        self.optimizer.zero_grad()
        record = {"l1": 0.0, "laplacian": 0.0, "gradient": 0.0, "segmentation": 0.0}
        total = None
        for pair in pairs:
            pred = self._forward_pair(pair)
            if pair.kind == "matting":
                # torch.tensor copies, so read-only label planes stay untouched
                target = torch.tensor(
                    pair.target_label, dtype=torch.float32
                ).unsqueeze(0).unsqueeze(0)
                loss, parts = matting_loss(pred, target, self.config)
                for k, v in parts.items():
                    record[k] += v / len(pairs)
            else:
                loss = self.config.w_segmentation * segmentation_loss(
                    pred, pair.target_label, self.config.erosion_radius
                )
                record["segmentation"] += float(loss.detach()) / len(pairs)
            total = loss if total is None else total + loss
        total = total / len(pairs)
        if not torch.isfinite(total):
            raise NonFiniteLossError(
                f"non-finite loss at iteration {iteration}",
                sample_ids=[p.ids for p in pairs],
            )
        total.backward()
        self.optimizer.step()
        self.iteration = iteration
        record["total"] = float(total.detach())
        return record

    # -- checkpointing ----------------------------------------------------

    def _optimizer_arrays(self):
        arrays = {}
        steps = {}
        named = sorted(dict(self.head.named_parameters()))
        state = self.optimizer.state
        params = dict(self.head.named_parameters())
        for name in named:
            st = state.get(params[name], {})
            if not st:
                continue
            arrays[f"opt.{name}.exp_avg"] = st["exp_avg"].numpy().copy()
            arrays[f"opt.{name}.exp_avg_sq"] = st["exp_avg_sq"].numpy().copy()
            steps[name] = float(st["step"])
        return arrays, steps

    def save_checkpoint(self, path) -> None:
        arrays = {f"head.{k}": v for k, v in extract_parameters(self.head).items()}
        opt_arrays, steps = self._optimizer_arrays()
        arrays.update(opt_arrays)
        meta = {
            "kind": "train_state",
            "iteration": self.iteration,
            "head_config": self.head_config.to_meta(),
            "train_config": self.config.to_meta(),
            "optimizer_steps": steps,
            "backend_fingerprint": self.fingerprint,
            "use_intra": self.use_intra,
        }
        save_container(path, arrays, meta=meta)

    def load_checkpoint(self, path) -> None:
        arrays, meta = load_container(path)
        if meta.get("kind") != "train_state":
            raise ConfigurationError(f"{path} is not a training checkpoint")
        if meta["backend_fingerprint"] != self.fingerprint:
            raise ConfigurationError(
                "checkpoint was written against a different backend configuration"
            )
        if meta["head_config"] != self.head_config.to_meta():
            raise ConfigurationError("checkpoint head architecture does not match")
        saved = dict(meta["train_config"])
        current = self.config.to_meta()
        saved.pop("iterations"), current.pop("iterations")  # extending a run is fine
        if saved != current:
            raise ConfigurationError("checkpoint training configuration does not match")
        head_params = {
            k[len("head.") :]: v for k, v in arrays.items() if k.startswith("head.")
        }
        apply_parameters(self.head, head_params)
        params = dict(self.head.named_parameters())
        for name, step in meta["optimizer_steps"].items():
            p = params[name]
            self.optimizer.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": torch.from_numpy(arrays[f"opt.{name}.exp_avg"].copy()),
                "exp_avg_sq": torch.from_numpy(arrays[f"opt.{name}.exp_avg_sq"].copy()),
            }
        self.iteration = int(meta["iteration"])


def run_training(trainer: Trainer, out_dir, iterations: int | None = None,
                 log=print) -> Path:
    """Drive the loop from trainer.iteration + 1. Returns the final
    head checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = trainer.config
    last = iterations if iterations is not None else config.iterations
    log_path = out_dir / "train_log.csv"
    new_log = not log_path.exists() or trainer.iteration == 0
    mode = "w" if new_log else "a"
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if new_log:
            writer.writerow(
                ["iter", "l1", "laplacian", "gradient", "segmentation", "total"]
            )
        for it in range(trainer.iteration + 1, last + 1):
            record = trainer.train_step(it)
            writer.writerow(
                [
                    it,
                    f"{record['l1']:.6f}",
                    f"{record['laplacian']:.6f}",
                    f"{record['gradient']:.6f}",
                    f"{record['segmentation']:.6f}",
                    f"{record['total']:.6f}",
                ]
            )
            if it % config.checkpoint_every == 0 or it == last:
                trainer.save_checkpoint(out_dir / f"train_state_{it:06d}.ckpt")
                fh.flush()
            if it % 50 == 0 or it == last:
                log(f"iter {it}/{last} total={record['total']:.4f}")
    from .head import save_head

    final = out_dir / "head_final.ckpt"
    save_head(final, trainer.head_config, extract_parameters(trainer.head))
    return final


def latest_checkpoint(out_dir) -> Path | None:
    candidates = sorted(Path(out_dir).glob("train_state_*.ckpt"))
    return candidates[-1] if candidates else None
