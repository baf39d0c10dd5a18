"""Lossless persistence: PNG images with a JSON sidecar of the same basename."""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .model import AttributeVector, ObjectAsset, Provenance, SceneSample, StageRecord


def png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def array_from_png(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)))


def png_b64(arr: np.ndarray) -> str:
    return base64.b64encode(png_bytes(arr)).decode("ascii")


def array_from_b64(data: str) -> np.ndarray:
    return array_from_png(base64.b64decode(data))


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def _provenance_json(provenance: Provenance) -> list:
    return [rec.to_json() for rec in provenance]


def _provenance_from_json(items) -> Provenance:
    return tuple(StageRecord.from_json(rec) for rec in items)


def save_asset(asset: ObjectAsset, path: str | Path) -> Path:
    """Write an RGBA PNG plus a `.json` sidecar carrying provenance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(png_bytes(asset.pixels))
    meta = {"kind": "asset", "provenance": _provenance_json(asset.provenance)}
    _sidecar(path).write_text(json.dumps(meta, indent=2))
    return path


def load_asset(path: str | Path) -> ObjectAsset:
    path = Path(path)
    pixels = array_from_png(path.read_bytes())
    if pixels.ndim != 3 or pixels.shape[2] != 4:
        raise ValidationError("pixels", f"{path} is not an RGBA image")
    meta = json.loads(_sidecar(path).read_text())
    return ObjectAsset(pixels, _provenance_from_json(meta.get("provenance", [])))


def save_scene(scene: SceneSample, path: str | Path) -> Path:
    """Write an RGB PNG plus a `.json` sidecar with ground truth and provenance."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(png_bytes(scene.image))
    meta = {
        "kind": "scene",
        "gt_bbox": list(scene.gt_bbox),
        "gt_class": scene.gt_class,
        "attributes": scene.attributes.to_json(),
        "seed": scene.seed,
        "provenance": _provenance_json(scene.provenance),
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2))
    return path


def load_scene(path: str | Path) -> SceneSample:
    path = Path(path)
    image = array_from_png(path.read_bytes())
    meta = json.loads(_sidecar(path).read_text())
    return SceneSample(
        image=image,
        gt_bbox=tuple(meta["gt_bbox"]),
        gt_class=meta["gt_class"],
        attributes=AttributeVector.from_json(meta["attributes"]),
        seed=int(meta["seed"]),
        provenance=_provenance_from_json(meta.get("provenance", [])),
    )
