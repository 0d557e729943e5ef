"""Feature-dump files: run the similarity stage without a live backend.

One .npz container per image holds every feature scale and attention
matrix. Dumps are keyed by image content hash, so a DumpBackend serves
exactly the images it was primed with.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..core import ImagePlane
from ..errors import BackendError
from .base import AttentionScale, FeatureBundle, FeatureScale


def image_key(image: ImagePlane) -> str:
    return hashlib.sha256(image.data.tobytes()).hexdigest()[:32]


def save_bundle(path: str | Path, bundle: FeatureBundle) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    meta = {
        "inter_scale_id": bundle.inter_scale_id,
        "scales": [f.scale_id for f in bundle.features],
        "grids": {str(a.scale_id): list(a.grid_hw) for a in bundle.attention},
    }
    for f in bundle.features:
        arrays[f"feat_{f.scale_id}"] = f.tensor
    for a in bundle.attention:
        arrays[f"attn_{a.scale_id}"] = a.matrix
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_bundle(path: str | Path) -> FeatureBundle:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"].tobytes()).decode())
        features = tuple(
            FeatureScale(scale_id=sid, tensor=data[f"feat_{sid}"])
            for sid in meta["scales"]
        )
        attention = tuple(
            AttentionScale(
                scale_id=sid,
                grid_hw=tuple(meta["grids"][str(sid)]),
                matrix=data[f"attn_{sid}"],
            )
            for sid in meta["scales"]
        )
    return FeatureBundle(
        features=features, attention=attention, inter_scale_id=meta["inter_scale_id"]
    )


class DumpBackend:
    """Serves pre-extracted bundles from a dump directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    @property
    def native_resolution(self) -> int | None:
        return None

    def fingerprint(self) -> str:
        names = sorted(p.name for p in self.directory.glob("*.npz"))
        return "dumps:" + hashlib.sha256("".join(names).encode()).hexdigest()[:16]

    def record(self, image: ImagePlane, bundle: FeatureBundle) -> Path:
        path = self.directory / f"{image_key(image)}.npz"
        save_bundle(path, bundle)
        return path

    def extract(self, image: ImagePlane) -> FeatureBundle:
        path = self.directory / f"{image_key(image)}.npz"
        if not path.exists():
            raise BackendError(f"no feature dump for this image under {self.directory}")
        return load_bundle(path)
