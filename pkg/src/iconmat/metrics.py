"""The four matting metrics and the fixed-reference evaluation protocol.

MSE is returned raw; the report carries a display-scale note because
published tables are inconsistent about the 1e-3 convention. SAD, Grad,
and Conn use the conventional ÷1000.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, EmptyPromptError, ValidationError
from .prompts import protocol_prompt

GRAD_SIGMA = 1.4
GRAD_TRUNCATE = 4.0
CONN_STEP = 0.1
CONN_TOLERANCE = 0.15
METRIC_NAMES = ("mse", "sad", "grad", "conn")


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim != 2:
        raise DimensionError(f"mattes must be 2D, got {pred.shape}")
    return pred, gt


def mse(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    return float(np.mean((pred - gt) ** 2))


def sad(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    return float(np.sum(np.abs(pred - gt)) / 1000.0)


def _gaussian_derivative_kernels():
    """Separable smoothing/derivative pair, L2-normalized as a 2D kernel."""
    halfsize = int(np.ceil(GRAD_TRUNCATE * GRAD_SIGMA))
    x = np.arange(-halfsize, halfsize + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * GRAD_SIGMA**2))
    dg = -x / (GRAD_SIGMA**2) * g
    kx = np.outer(g, dg)  # smooth rows, differentiate cols
    kx /= np.sqrt(np.sum(kx * kx))
    return kx, kx.T.copy()


def grad_metric(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    kx, ky = _gaussian_derivative_kernels()
    if pred.shape[0] < kx.shape[0] or pred.shape[1] < kx.shape[1]:
        raise DimensionError(
            f"image {pred.shape} smaller than gradient kernel {kx.shape}"
        )

    def amplitude(img):
        gx = ndimage.convolve(img, kx, mode="nearest")
        gy = ndimage.convolve(img, ky, mode="nearest")
        return np.sqrt(gx * gx + gy * gy)

    diff = amplitude(pred) - amplitude(gt)
    return float(np.sum(diff * diff) / 1000.0)


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(mask)  # 4-connectivity
    if count == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)  # first max wins ties


def conn_metric(pred, gt, step: float = CONN_STEP,
                tolerance: float = CONN_TOLERANCE, log=print) -> float:
    """Connectivity error via the threshold-sweep l_map formulation.

    If no threshold yields any joint foreground, connectivity is
    undefined; fall back to SAD and say so.
    """
    pred, gt = _check_pair(pred, gt)
    thresholds = np.arange(0.0, 1.0 + step / 2.0, step)
    l_map = -np.ones_like(pred)
    saw_foreground = False
    for i in range(1, len(thresholds)):
        joint = (pred >= thresholds[i]) & (gt >= thresholds[i])
        omega = _largest_component(joint)
        if omega.any():
            saw_foreground = True
        newly_cut = (l_map == -1) & ~omega
        l_map[newly_cut] = thresholds[i - 1]
    if not saw_foreground:
        log("warning: no joint foreground at any threshold; conn falls back to sad")
        return sad(pred, gt)
    l_map[l_map == -1] = 1.0

    def phi(alpha):
        d = alpha - l_map
        return 1.0 - d * (d >= tolerance)

    return float(np.sum(np.abs(phi(pred) - phi(gt))) / 1000.0)


def compute_all(pred, gt, log=print) -> dict:
    return {
        "mse": mse(pred, gt),
        "sad": sad(pred, gt),
        "grad": grad_metric(pred, gt),
        "conn": conn_metric(pred, gt, log=log),
    }


# ------------------------------------------------------------- protocol


@dataclass(frozen=True)
class MetricReport:
    round_index: int  # 1-based; 0 marks the cross-round average
    per_image: tuple  # of {"group_id", "image_id", metric values}
    per_group: dict
    overall: dict
    protocol: dict

    def __post_init__(self):
        for entry in self.per_image:
            for name in METRIC_NAMES:
                if entry[name] < 0:
                    raise ValidationError(f"negative metric {name} in report")


def _summarize(per_image, round_index, protocol) -> MetricReport:
    per_group: dict = {}
    for entry in per_image:
        per_group.setdefault(entry["group_id"], []).append(entry)
    group_means = {
        gid: {n: float(np.mean([e[n] for e in entries])) for n in METRIC_NAMES}
        for gid, entries in per_group.items()
    }
    if per_image:
        overall = {
            n: float(np.mean([e[n] for e in per_image])) for n in METRIC_NAMES
        }
    else:
        overall = {n: 0.0 for n in METRIC_NAMES}
    return MetricReport(
        round_index=round_index,
        per_image=tuple(per_image),
        per_group=group_means,
        overall=overall,
        protocol=protocol,
    )


def run_protocol(model, groups, prompt_kind: str, rounds: int = 3, seed: int = 0,
                 include_references: bool = False, log=print):
    """Fixed-reference evaluation: per round, prompts come from the
    designated reference labels; non-reference members are predicted
    and scored. Returns one MetricReport per round.

    `model(references, targets) -> alphas` where references is a list
    of (ImagePlane, RoiPrompt) and targets a list of ImagePlane.
    """
    reports = []
    for r in range(1, rounds + 1):
        rng = np.random.default_rng(seed + r)
        per_image = []
        reference_ids = {}
        for group in groups:
            labels_needed = list(group.reference_indices)
            target_idx = [
                i
                for i in range(len(group.images))
                if include_references or i not in group.reference_indices
            ]
            labels_needed += target_idx
            if any(group.labels[i] is None for i in labels_needed):
                log(f"warning: group {group.group_id!r} misses labels, skipped")
                continue
            try:
                references = [
                    (
                        group.images[i],
                        protocol_prompt(group.labels[i], prompt_kind, rng),
                    )
                    for i in group.reference_indices
                ]
            except EmptyPromptError:
                log(
                    f"warning: group {group.group_id!r} reference label is empty, skipped"
                )
                continue
            reference_ids[group.group_id] = [
                group.image_ids[i] for i in group.reference_indices
            ]
            if not target_idx:
                continue
            alphas = model(references, [group.images[i] for i in target_idx])
            for i, alpha in zip(target_idx, alphas):
                entry = {
                    "group_id": group.group_id,
                    "image_id": group.image_ids[i],
                }
                entry.update(compute_all(alpha, group.labels[i], log=log))
                per_image.append(entry)
        protocol = {
            "prompt_kind": prompt_kind,
            "seed": seed,
            "rounds": rounds,
            "reference_ids": reference_ids,
            "include_references": include_references,
            "mse_scale": "raw",
        }
        reports.append(_summarize(per_image, r, protocol))
    return reports


def average_reports(reports) -> MetricReport:
    """Element-wise mean across rounds; images aligned by (group, id)."""
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to average")
    keys = [(e["group_id"], e["image_id"]) for e in reports[0].per_image]
    for rep in reports[1:]:
        if [(e["group_id"], e["image_id"]) for e in rep.per_image] != keys:
            raise ValidationError("rounds cover different image sets")
    per_image = []
    for j, (gid, iid) in enumerate(keys):
        entry = {"group_id": gid, "image_id": iid}
        for n in METRIC_NAMES:
            entry[n] = float(np.mean([rep.per_image[j][n] for rep in reports]))
        per_image.append(entry)
    return _summarize(per_image, 0, dict(reports[0].protocol))


def write_report_json(report: MetricReport, path) -> None:
    doc = {
        "round_index": report.round_index,
        "per_image": list(report.per_image),
        "per_group": report.per_group,
        "overall": report.overall,
        "protocol": report.protocol,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def write_report_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group_id", "image_id", *METRIC_NAMES])
        for entry in report.per_image:
            writer.writerow(
                [entry["group_id"], entry["image_id"]]
                + [f"{entry[n]:.8f}" for n in METRIC_NAMES]
            )
        writer.writerow(
            ["overall", "", *[f"{report.overall[n]:.8f}" for n in METRIC_NAMES]]
        )
