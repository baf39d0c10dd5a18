"""Corpus readers behind one interface, plus a deterministic demo corpus.

Two annotation styles are supported: COCO-style JSON (polygon and
uncompressed-RLE segmentations) and instance-map directories (one indexed
PNG of instance ids per image).  The demo corpus generator produces the
latter and is the test substrate for data prep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import ConfigError
from .glyph import fill_polygon


@dataclass(frozen=True)
class CorpusImage:
    """One annotated image: RGB pixels plus (label, mask) instances."""

    corpus_id: str
    image_id: str
    image: np.ndarray
    instances: tuple[tuple[str, np.ndarray], ...]


class CorpusReader:
    corpus_id: str

    def __iter__(self) -> Iterator[CorpusImage]:
        raise NotImplementedError


def polygons_to_mask(segmentation: list, height: int, width: int) -> np.ndarray:
    """Union of COCO polygon rings ([x1,y1,x2,y2,...] flat lists)."""
    mask = np.zeros((height, width), dtype=bool)
    for ring in segmentation:
        if len(ring) < 6:
            continue
        pts = [(float(ring[i]), float(ring[i + 1])) for i in range(0, len(ring), 2)]
        mask |= fill_polygon((height, width), pts)
    return mask


def rle_to_mask(rle: dict) -> np.ndarray:
    """Uncompressed COCO RLE (column-major run lengths starting with zeros)."""
    counts = rle["counts"]
    if isinstance(counts, str):
        raise ConfigError("compressed RLE is not supported; use polygons or raw counts")
    h, w = rle["size"]
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape((w, h)).T  # column-major


class CocoReader(CorpusReader):
    """Reads {root}/instances.json plus {root}/images/."""

    def __init__(self, root: str | Path, corpus_id: str = "coco"):
        self.root = Path(root)
        self.corpus_id = corpus_id
        ann_file = self.root / "instances.json"
        if not ann_file.exists():
            raise ConfigError(f"missing annotation file: {ann_file}")
        data = json.loads(ann_file.read_text())
        self.categories = {c["id"]: c["name"] for c in data.get("categories", [])}
        self.images = data.get("images", [])
        self.annotations: dict[int, list] = {}
        for ann in data.get("annotations", []):
            self.annotations.setdefault(ann["image_id"], []).append(ann)

    def __iter__(self) -> Iterator[CorpusImage]:
        for info in self.images:
            path = self.root / "images" / info["file_name"]
            image = np.asarray(Image.open(path).convert("RGB"))
            h, w = info.get("height", image.shape[0]), info.get("width", image.shape[1])
            instances = []
            for ann in self.annotations.get(info["id"], []):
                label = self.categories.get(ann["category_id"], str(ann["category_id"]))
                seg = ann.get("segmentation")
                if isinstance(seg, dict):
                    mask = rle_to_mask(seg)
                elif isinstance(seg, list):
                    mask = polygons_to_mask(seg, h, w)
                else:
                    continue
                if mask.any():
                    instances.append((label, mask))
            yield CorpusImage(self.corpus_id, str(info["id"]), image, tuple(instances))


class InstanceMapReader(CorpusReader):
    """Reads {root}/annotations.json where each entry names an image file,
    an instance-id map PNG, and the category of each id."""

    def __init__(self, root: str | Path, corpus_id: str = "instmap"):
        self.root = Path(root)
        self.corpus_id = corpus_id
        ann_file = self.root / "annotations.json"
        if not ann_file.exists():
            raise ConfigError(f"missing annotation file: {ann_file}")
        self.entries = json.loads(ann_file.read_text())

    def __iter__(self) -> Iterator[CorpusImage]:
        for entry in self.entries:
            image = np.asarray(Image.open(self.root / entry["image"]).convert("RGB"))
            inst_map = np.asarray(Image.open(self.root / entry["instance_map"]))
            instances = []
            for inst in entry["instances"]:
                mask = inst_map == int(inst["id"])
                if mask.any():
                    instances.append((inst["category"], mask))
            image_id = entry.get("id", Path(entry["image"]).stem)
            yield CorpusImage(self.corpus_id, str(image_id), image, tuple(instances))


def open_corpus(root: str | Path, fmt: str, corpus_id: str | None = None) -> CorpusReader:
    if fmt == "coco":
        return CocoReader(root, corpus_id or "coco")
    if fmt == "instmap":
        return InstanceMapReader(root, corpus_id or "instmap")
    raise ConfigError(f"unknown corpus format {fmt!r} (expected 'coco' or 'instmap')")


# ---------------------------------------------------------------------------
# Demo corpus


_DEMO_CLASSES = ("car", "truck", "bus", "person", "traffic light", "bicycle")


def make_demo_corpus(
    root: str | Path,
    n_images: int = 20,
    seed: int = 0,
    size: tuple[int, int] = (96, 64),
) -> Path:
    """Generate a small deterministic instance-map corpus for tests/demos.

    Each image holds 1-3 rectangular "objects" of street-scene classes on a
    shaded background; instance masks are exact by construction.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    w, h = size
    rng = np.random.default_rng(seed)
    entries = []
    for idx in range(n_images):
        shade = rng.integers(90, 180)
        ramp = np.linspace(shade, min(255, shade + 60), w, dtype=np.uint8)
        image = np.repeat(ramp[None, :, None], h, axis=0)
        image = np.repeat(image, 3, axis=2).copy()
        inst_map = np.zeros((h, w), dtype=np.uint8)
        instances = []
        for inst_id in range(1, int(rng.integers(1, 4)) + 1):
            bw = int(rng.integers(w // 8, w // 2))
            bh = int(rng.integers(h // 8, h // 2))
            x0 = int(rng.integers(0, w - bw))
            y0 = int(rng.integers(0, h - bh))
            color = rng.integers(0, 256, 3)
            image[y0 : y0 + bh, x0 : x0 + bw] = color
            inst_map[y0 : y0 + bh, x0 : x0 + bw] = inst_id
            label = _DEMO_CLASSES[int(rng.integers(0, len(_DEMO_CLASSES)))]
            instances.append({"id": inst_id, "category": label})
        # Later rectangles overwrite earlier ones; keep only ids still present.
        present = set(np.unique(inst_map)) - {0}
        instances = [i for i in instances if i["id"] in present]
        name = f"img_{idx:04d}"
        Image.fromarray(image).save(root / "images" / f"{name}.png")
        Image.fromarray(inst_map).save(root / "masks" / f"{name}.png")
        entries.append(
            {
                "id": name,
                "image": f"images/{name}.png",
                "instance_map": f"masks/{name}.png",
                "instances": instances,
            }
        )
    (root / "annotations.json").write_text(json.dumps(entries, indent=2))
    return root
