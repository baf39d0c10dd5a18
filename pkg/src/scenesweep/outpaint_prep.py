"""Fine-tuning dataset construction for the background outpainting model.

Builds (masked input, mask, target, caption) tuples from a segmentation
corpus: kept-instance masks are unioned into one binary mask, the masked
input is the target image with background pixels zeroed, and captions come
from a pluggable captioner.  This module only prepares data and emits the
training manifest plus hyperparameter config; no training happens here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .corpus import CorpusImage, CorpusReader
from .errors import SkipImage, ValidationError
from .model import derive_seed
from .stages import StageKind, register_backend

# Street-scene classes considered relevant per source corpus.
COCO_RELEVANT = ("car", "person", "truck", "bus", "traffic light", "bicycle", "motorcycle")
BDD_RELEVANT = ("rider", "car", "truck", "bus", "train", "motorcycle", "bicycle")

DROP_PROBABILITY = 0.5
COVER_THRESHOLD = 0.10


@dataclass(frozen=True)
class RelevantClassFilter:
    """Allowlist of instance labels worth keeping, per corpus."""

    allow: tuple[str, ...]

    def __post_init__(self):
        if not self.allow:
            raise ValidationError("allow", "class allowlist must be nonempty")
        object.__setattr__(self, "allow", tuple(self.allow))

    def __contains__(self, label: str) -> bool:
        return label in self.allow

    @classmethod
    def for_corpus(cls, corpus_id: str) -> "RelevantClassFilter":
        if corpus_id.startswith("bdd"):
            return cls(BDD_RELEVANT)
        return cls(COCO_RELEVANT)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters emitted alongside the manifest (training itself is
    out of scope here)."""

    training_steps: int = 15000
    lora_rank: int = 32
    batch_size: int = 8
    learning_rate: float = 1e-4

    def __post_init__(self):
        for name in ("training_steps", "lora_rank", "batch_size", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, "must be positive")

    def to_json(self) -> dict:
        return {
            "training_steps": self.training_steps,
            "lora_rank": self.lora_rank,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
        }


@dataclass(frozen=True)
class OutpaintSample:
    """One training tuple; masked_input == target * mask, pixel-exact."""

    target_image: np.ndarray
    mask: np.ndarray
    masked_input: np.ndarray
    caption: str
    source: tuple[str, str]  # (corpus id, image id)

    def __post_init__(self):
        if not self.caption:
            raise ValidationError("caption", "must be nonempty")
        if not self.mask.any():
            raise ValidationError("mask", "must keep at least one instance")
        expect = self.target_image * self.mask[:, :, None].astype(np.uint8)
        if not np.array_equal(self.masked_input, expect):
            raise ValidationError("masked_input", "must equal target * mask exactly")


def _filtered_masks(
    instances: Sequence[tuple[str, np.ndarray]], class_filter: RelevantClassFilter
) -> list[np.ndarray]:
    masks = [
        np.asarray(mask, dtype=bool)
        for label, mask in instances
        if label in class_filter
    ]
    if not masks:
        raise SkipImage("no instance passes the relevant-class filter")
    return masks


def drop_decisions(
    instances: Sequence[tuple[str, np.ndarray]],
    class_filter: RelevantClassFilter,
    seed: int,
) -> list[bool]:
    """Independent drop decision per relevant instance, in input order.

    An instance is drop-eligible iff the union of the *other* relevant
    instances covers at least 10% of the image area; eligible instances
    are dropped independently with probability 0.5, ineligible ones never.
    The decisions are exposed separately from build_mask because the
    keep-at-least-one guard applied there can veto a drop.
    """
    masks = _filtered_masks(instances, class_filter)
    shape = masks[0].shape
    area = shape[0] * shape[1]
    rng = np.random.default_rng(seed)
    decisions = []
    for i in range(len(masks)):
        others = np.zeros(shape, dtype=bool)
        for j, other in enumerate(masks):
            if j != i:
                others |= other
        eligible = others.sum() >= COVER_THRESHOLD * area
        decisions.append(bool(eligible and rng.random() < DROP_PROBABILITY))
    return decisions


def build_mask(
    instances: Sequence[tuple[str, np.ndarray]],
    class_filter: RelevantClassFilter,
    seed: int,
) -> np.ndarray:
    """Union of kept relevant-instance masks.

    Drop decisions come from drop_decisions(); at least one instance always
    survives (if every instance was dropped, the largest is restored).
    """
    masks = _filtered_masks(instances, class_filter)
    dropped = drop_decisions(instances, class_filter, seed)
    keep = [not d for d in dropped]
    if not any(keep):
        sizes = [int(m.sum()) for m in masks]
        keep[int(np.argmax(sizes))] = True
    out = np.zeros(masks[0].shape, dtype=bool)
    for flag, mask in zip(keep, masks):
        if flag:
            out |= mask
    return out


@register_backend(StageKind.CAPTION, "reference")
class ReferenceCaptioner:
    """Deterministic template captioner over the image's instance labels."""

    def __init__(self, config: Mapping = ()):
        self.config = dict(config)

    def run(self, image: np.ndarray, labels: Sequence[str], seed: int) -> str:
        uniq = sorted(set(labels))
        if not uniq:
            return "a photo of a street"
        if len(uniq) == 1:
            subject = f"a {uniq[0]}"
        else:
            subject = ", ".join(f"a {l}" for l in uniq[:-1]) + f" and a {uniq[-1]}"
        return f"a photo of {subject} on a street"


def make_sample(
    corpus_image: CorpusImage,
    class_filter: RelevantClassFilter,
    captioner,
    seed: int,
) -> OutpaintSample:
    """Build one training tuple; SkipImage when the image is unusable."""
    mask = build_mask(corpus_image.instances, class_filter, seed)
    target = np.asarray(corpus_image.image, dtype=np.uint8)
    masked_input = target * mask[:, :, None].astype(np.uint8)
    labels = [l for l, _ in corpus_image.instances if l in class_filter]
    try:
        caption = captioner.run(target, labels, seed)
    except Exception as exc:
        raise SkipImage(f"captioner failed: {exc}") from exc
    if not caption:
        raise SkipImage("captioner returned an empty caption")
    return OutpaintSample(
        target_image=target,
        mask=mask,
        masked_input=masked_input,
        caption=caption,
        source=(corpus_image.corpus_id, corpus_image.image_id),
    )


def prepare_dataset(
    reader: CorpusReader,
    class_filter: RelevantClassFilter,
    captioner,
    seed: int,
) -> tuple[list[OutpaintSample], list[tuple[str, str]]]:
    """All usable samples of a corpus plus (image_id, reason) skip log.

    Drop decisions are a pure function of (image id, seed): re-running
    yields an identical dataset regardless of iteration interleaving.
    """
    samples: list[OutpaintSample] = []
    skipped: list[tuple[str, str]] = []
    for corpus_image in reader:
        image_seed = derive_seed(seed, corpus_image.image_id)
        try:
            samples.append(make_sample(corpus_image, class_filter, captioner, image_seed))
        except SkipImage as exc:
            skipped.append((corpus_image.image_id, str(exc)))
    return samples, skipped


def emit_manifest(
    samples: Sequence[OutpaintSample],
    out_dir: str | Path,
    train_config: TrainConfig = TrainConfig(),
) -> Path:
    """Write PNG triples, a JSONL manifest and the training config JSON.

    Manifest lines: {"input_path", "mask_path", "target_path", "caption",
    "source"}; paths are relative to the output directory.
    """
    if not samples:
        raise ValidationError("samples", "must be nonempty")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    lines = []
    for sample in samples:
        stem = f"{sample.source[0]}_{sample.source[1]}"
        input_rel = f"images/{stem}_input.png"
        mask_rel = f"images/{stem}_mask.png"
        target_rel = f"images/{stem}_target.png"
        Image.fromarray(sample.masked_input).save(out_dir / input_rel)
        Image.fromarray(np.where(sample.mask, 255, 0).astype(np.uint8)).save(out_dir / mask_rel)
        Image.fromarray(sample.target_image).save(out_dir / target_rel)
        lines.append(
            json.dumps(
                {
                    "input_path": input_rel,
                    "mask_path": mask_rel,
                    "target_path": target_rel,
                    "caption": sample.caption,
                    "source": list(sample.source),
                },
                sort_keys=True,
            )
        )
    manifest_path.write_text("\n".join(lines) + "\n")
    (out_dir / "train_config.json").write_text(
        json.dumps(train_config.to_json(), indent=2, sort_keys=True)
    )
    return manifest_path
