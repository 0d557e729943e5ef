"""Context-group datasets: manifest, directory ingestion, category
aggregation for segmentation annotations, and pseudo-trimaps.

Layout rule: root/<group_id>/images/<stem>.<ext> with labels (if any)
under root/<group_id>/labels/<stem>.png and a per-group meta.json
holding {kind, category, reference_indices}.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import morphology, raster
from .core import ImagePlane
from .errors import ParameterError, ValidationError

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class GroupRecord:
    """Manifest entry for one context group; paths relative to root."""

    group_id: str
    kind: str
    members: tuple  # of {"image": str, "label": str | None}
    reference_indices: tuple = (0,)
    category: str | None = None

    def __post_init__(self):
        if self.kind not in ("matting", "segmentation"):
            raise ValidationError(f"unknown group kind {self.kind!r}")
        n = len(self.members)
        for idx in self.reference_indices:
            if not 0 <= idx < n:
                raise ValidationError(
                    f"reference index {idx} out of range for group {self.group_id!r}"
                )


@dataclass(frozen=True)
class Manifest:
    version: int
    split: str
    groups: tuple
    root: str = "."

    def __post_init__(self):
        ids = [g.group_id for g in self.groups]
        if len(set(ids)) != len(ids):
            raise ValidationError("group ids must be unique")

    @property
    def stats(self) -> dict:
        return {
            "groups": len(self.groups),
            "images": sum(len(g.members) for g in self.groups),
        }

    def to_json(self) -> str:
        doc = {
            "version": self.version,
            "split": self.split,
            "stats": self.stats,
            "groups": [
                {
                    "group_id": g.group_id,
                    "kind": g.kind,
                    "category": g.category,
                    "reference_indices": list(g.reference_indices),
                    "members": list(g.members),
                }
                for g in self.groups
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str, root: str = ".") -> "Manifest":
        doc = json.loads(text)
        groups = tuple(
            GroupRecord(
                group_id=g["group_id"],
                kind=g["kind"],
                members=tuple(g["members"]),
                reference_indices=tuple(g["reference_indices"]),
                category=g.get("category"),
            )
            for g in doc["groups"]
        )
        return Manifest(
            version=doc["version"], split=doc["split"], groups=groups, root=root
        )


def save_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(manifest.to_json())


def load_manifest(path) -> Manifest:
    path = Path(path)
    return Manifest.from_json(path.read_text(), root=str(path.parent))


@dataclass(frozen=True)
class LoadedGroup:
    """A group with pixels in memory, ready for training or evaluation."""

    group_id: str
    kind: str
    image_ids: tuple
    images: tuple  # of ImagePlane
    labels: tuple  # of (H, W) float64 or None
    reference_indices: tuple
    category: str | None = None


def load_group(manifest: Manifest, record: GroupRecord) -> LoadedGroup:
    root = Path(manifest.root)
    images = []
    labels = []
    ids = []
    for member in record.members:
        img_path = root / member["image"]
        images.append(raster.load_image(img_path))
        ids.append(Path(member["image"]).stem)
        if member.get("label"):
            lab = raster.load_gray(root / member["label"]).data
            if record.kind == "segmentation":
                lab = (lab > 0.5).astype(np.float64)
            labels.append(lab)
        else:
            labels.append(None)
    return LoadedGroup(
        group_id=record.group_id,
        kind=record.kind,
        image_ids=tuple(ids),
        images=tuple(images),
        labels=tuple(labels),
        reference_indices=record.reference_indices,
        category=record.category,
    )


def _read_meta(group_dir: Path) -> dict:
    meta_path = group_dir / "meta.json"
    meta = {"kind": "matting", "category": None, "reference_indices": [0]}
    if meta_path.exists():
        meta.update(json.loads(meta_path.read_text()))
    return meta


def ingest_tree(root, split: str = "test", log=print) -> Manifest:
    """One group per subdirectory; lexicographic order throughout."""
    root = Path(root)
    groups = []
    subdirs = sorted(p for p in root.iterdir() if p.is_dir()) if root.exists() else []
    for group_dir in subdirs:
        image_dir = group_dir / "images"
        if not image_dir.is_dir():
            continue
        meta = _read_meta(group_dir)
        label_dir = group_dir / "labels"
        members = []
        for img in raster.list_images(image_dir):
            label = None
            if label_dir.is_dir():
                candidate = label_dir / f"{img.stem}.png"
                if candidate.exists():
                    label = str(candidate.relative_to(root))
            if label is None:
                if meta["kind"] == "matting":
                    raise ValidationError(
                        f"matting group {group_dir.name!r}: no label for stem {img.stem!r}"
                    )
                log(
                    f"warning: segmentation group {group_dir.name!r}: "
                    f"skipping unlabeled image {img.stem!r}"
                )
                continue
            members.append({"image": str(img.relative_to(root)), "label": label})
        if not members:
            log(f"warning: group {group_dir.name!r} has no usable members, skipped")
            continue
        refs = tuple(int(i) for i in meta["reference_indices"])
        groups.append(
            GroupRecord(
                group_id=group_dir.name,
                kind=meta["kind"],
                members=tuple(members),
                reference_indices=refs,
                category=meta.get("category"),
            )
        )
    return Manifest(
        version=MANIFEST_VERSION, split=split, groups=tuple(groups), root=str(root)
    )


# ------------------------------------------------- category aggregation


def union_by_category(records) -> dict:
    """records: iterable of (image_path, instance_mask, category).

    Returns {category: {image_path: union mask}}. Empty instance masks
    contribute nothing; an image drops out only if all its instances
    are empty.
    """
    catalog: dict = {}
    for image_path, mask, category in records:
        mask = np.asarray(mask) > 0.5
        if not mask.any():
            continue
        per_image = catalog.setdefault(str(category), {})
        key = str(image_path)
        if key in per_image:
            if per_image[key].shape != mask.shape:
                raise ValidationError(
                    f"instance masks for {key!r} disagree on shape"
                )
            per_image[key] = per_image[key] | mask
        else:
            per_image[key] = mask
    return catalog


def aggregate_by_category(records, out_root, split: str = "train") -> Manifest:
    """Materialize per-category segmentation groups and ingest them."""
    out_root = Path(out_root)
    catalog = union_by_category(records)
    for category in sorted(catalog):
        group_dir = out_root / category
        (group_dir / "images").mkdir(parents=True, exist_ok=True)
        (group_dir / "labels").mkdir(parents=True, exist_ok=True)
        (group_dir / "meta.json").write_text(
            json.dumps(
                {
                    "kind": "segmentation",
                    "category": category,
                    "reference_indices": [0],
                },
                sort_keys=True,
            )
        )
        for image_path, mask in sorted(catalog[category].items()):
            src = Path(image_path)
            shutil.copyfile(src, group_dir / "images" / src.name)
            plane = ImagePlane(mask.astype(np.float64))
            raster.save_binary_mask(group_dir / "labels" / f"{src.stem}.png", plane)
    return ingest_tree(out_root, split=split)


# ---------------------------------------------------------- pseudo-trimap


def default_trimap_radius(image_hw, base: int = 10, base_size: int = 768) -> int:
    """10 px at 768, scaled linearly with the shorter side."""
    return max(1, round(base * min(image_hw) / base_size))


def pseudo_trimap(mask: np.ndarray, r_erode: int, r_dilate: int, log=print) -> np.ndarray:
    """Binary mask -> {1 fg, 0.5 unknown, 0 bg} by disk morphology."""
    if r_erode < 1 or r_dilate < 1:
        raise ParameterError(
            f"trimap radii must be >= 1, got erode={r_erode} dilate={r_dilate}"
        )
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError("trimap input mask must be binary")
    binary = mask > 0.5
    fg = morphology.erode(binary, r_erode)
    if binary.any() and not fg.any():
        dist = ndimage.distance_transform_edt(binary)
        peak = np.unravel_index(int(np.argmax(dist)), dist.shape)
        fg = np.zeros_like(binary)
        fg[peak] = True
        log(
            "warning: erosion removed the whole foreground; "
            f"keeping its innermost pixel at {peak}"
        )
    unknown = morphology.dilate(binary, r_dilate) & ~fg
    trimap = np.zeros(mask.shape, dtype=np.float64)
    trimap[unknown] = 0.5
    trimap[fg] = 1.0
    return trimap
