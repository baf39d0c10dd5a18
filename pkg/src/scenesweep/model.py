"""Core value types: the attribute space, assets, scenes and result records.

Conventions used throughout the package:

* canvas coordinates: origin top-left, x rightward, y downward;
* boxes are axis-aligned, half-open ``[x1, x2) x [y1, y2)`` in pixels;
* images are 8-bit per channel; stages that compute in floating point
  round half away from zero on write-back.

All types are immutable value objects after construction (array fields are
copied and marked read-only), so they are safe to share between workers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional, Union

import numpy as np

from .errors import EmptyAsset, ValidationError

# Canonical attribute order; also the declaration order for grid expansion
# and the tie-break order for subgroup ranking.
ATTRIBUTE_NAMES: tuple[str, ...] = (
    "object_type",
    "object_color",
    "orientation_deg",
    "scale_factor",
    "location",
    "background",
)

# Sentinel color meaning "the recolor stage is skipped entirely".  Distinct
# from a marginalized color, which lives in SubgroupSpec.marginalized.
ORIGINAL = "original"

Box = tuple[int, int, int, int]


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    if x >= 0:
        return int(np.floor(x + 0.5))
    return -int(np.floor(-x + 0.5))


def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed so each consumer draws an independent random stream."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def quantize_u8(arr: np.ndarray) -> np.ndarray:
    """Float image -> uint8, rounding half away from zero (values >= 0)."""
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr).copy()
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# Backgrounds


@dataclass(frozen=True)
class PlainColor:
    """Plain-color background."""

    color: str

    def to_json(self) -> dict:
        return {"kind": "plain", "color": self.color}


@dataclass(frozen=True)
class Outpaint:
    """Background synthesized around the object from a text prompt."""

    prompt: str

    def to_json(self) -> dict:
        return {"kind": "outpaint", "prompt": self.prompt}


Background = Union[PlainColor, Outpaint]


def background_from_json(obj: Any) -> Background:
    """Accepts {"kind": ...} dicts or the "plain:grey" / "outpaint:..." shorthand."""
    if isinstance(obj, str):
        kind, _, rest = obj.partition(":")
        if kind == "plain" and rest:
            return PlainColor(rest)
        if kind == "outpaint" and rest:
            return Outpaint(rest)
        raise ValidationError("background", f"cannot parse {obj!r}")
    if isinstance(obj, Mapping):
        if obj.get("kind") == "plain":
            return PlainColor(str(obj["color"]))
        if obj.get("kind") == "outpaint":
            return Outpaint(str(obj["prompt"]))
    raise ValidationError("background", f"cannot parse {obj!r}")


# ---------------------------------------------------------------------------
# Attribute vectors


@dataclass(frozen=True)
class AttributeVector:
    """One coordinate of the controllable scene space, plus nothing else:
    the seed lives next to the vector, not inside it."""

    object_type: str
    object_color: str
    orientation_deg: float
    scale_factor: float
    location: tuple[float, float]
    background: Background

    def __post_init__(self):
        if not self.object_type:
            raise ValidationError("object_type", "must be a nonempty string")
        if not self.object_color:
            raise ValidationError("object_color", "must be a nonempty string")
        if not (-180.0 <= self.orientation_deg < 180.0):
            raise ValidationError(
                "orientation_deg",
                f"{self.orientation_deg} outside [-180, 180)",
            )
        if not self.scale_factor >= 1.0:
            raise ValidationError("scale_factor", f"{self.scale_factor} < 1.0")
        loc = tuple(float(v) for v in self.location)
        if len(loc) != 2:
            raise ValidationError("location", "must be a pair")
        if not all(0.0 <= v <= 1.0 for v in loc):
            raise ValidationError("location", f"{loc} outside [0, 1]^2")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "orientation_deg", float(self.orientation_deg))
        object.__setattr__(self, "scale_factor", float(self.scale_factor))
        if not isinstance(self.background, (PlainColor, Outpaint)):
            raise ValidationError("background", f"bad background {self.background!r}")

    def value_of(self, name: str):
        if name not in ATTRIBUTE_NAMES:
            raise ValidationError(name, "not an attribute name")
        return getattr(self, name)

    def with_value(self, name: str, value) -> "AttributeVector":
        if name not in ATTRIBUTE_NAMES:
            raise ValidationError(name, "not an attribute name")
        return replace(self, **{name: value})

    def to_json(self) -> dict:
        return {
            "object_type": self.object_type,
            "object_color": self.object_color,
            "orientation_deg": self.orientation_deg,
            "scale_factor": self.scale_factor,
            "location": list(self.location),
            "background": self.background.to_json(),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AttributeVector":
        return cls(
            object_type=str(obj["object_type"]),
            object_color=str(obj["object_color"]),
            orientation_deg=float(obj["orientation_deg"]),
            scale_factor=float(obj["scale_factor"]),
            location=tuple(float(v) for v in obj["location"]),
            background=background_from_json(obj["background"]),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def key(self) -> str:
        """Stable 16-hex digest identifying this vector in the results store."""
        return hashlib.sha1(self.canonical_json().encode()).hexdigest()[:16]


def canonical_value(value) -> Any:
    """Hashable, order-stable form of an attribute value for matching/sorting."""
    if isinstance(value, (PlainColor, Outpaint)):
        return ("background", json.dumps(value.to_json(), sort_keys=True))
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return value


# ---------------------------------------------------------------------------
# Subgroups


@dataclass(frozen=True)
class SubgroupSpec:
    """A partial attribute assignment plus the seed set it aggregates over.

    ``fixed`` pins attributes to values; ``marginalized`` names attributes
    explicitly aggregated over (rendered "-" in reports).  Attributes in
    neither set simply do not constrain matching.
    """

    fixed: tuple[tuple[str, Any], ...]
    marginalized: frozenset[str]
    seeds: tuple[int, ...]

    def __post_init__(self):
        for name in [k for k, _ in self.fixed] + list(self.marginalized):
            if name not in ATTRIBUTE_NAMES:
                raise ValidationError("fixed", f"unknown attribute {name!r}")
        fixed = tuple(sorted(self.fixed, key=lambda kv: ATTRIBUTE_NAMES.index(kv[0])))
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "marginalized", frozenset(self.marginalized))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        names = [k for k, _ in self.fixed]
        if len(set(names)) != len(names):
            raise ValidationError("fixed", "duplicate attribute name")
        if set(names) & self.marginalized:
            raise ValidationError(
                "marginalized", "overlaps the fixed attribute set"
            )
        if not self.seeds:
            raise ValidationError("seeds", "must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds", "must be distinct")

    @classmethod
    def of(
        cls,
        fixed: Mapping[str, Any],
        seeds: Iterable[int],
        marginalized: Iterable[str] = (),
    ) -> "SubgroupSpec":
        return cls(
            fixed=tuple(fixed.items()),
            marginalized=frozenset(marginalized),
            seeds=tuple(seeds),
        )

    @property
    def fixed_map(self) -> dict[str, Any]:
        return dict(self.fixed)

    def is_cell(self) -> bool:
        return len(self.fixed) == len(ATTRIBUTE_NAMES)

    def canonical_key(self) -> str:
        """Deterministic total-order key across subgroups."""
        parts = []
        for name in ATTRIBUTE_NAMES:
            if name in self.marginalized:
                parts.append((name, "-"))
            else:
                fm = self.fixed_map
                if name in fm:
                    parts.append((name, repr(canonical_value(fm[name]))))
                else:
                    parts.append((name, "*"))
        return json.dumps(parts)

    def to_json(self) -> dict:
        fixed = {}
        for name, value in self.fixed:
            if isinstance(value, (PlainColor, Outpaint)):
                fixed[name] = value.to_json()
            elif isinstance(value, tuple):
                fixed[name] = list(value)
            else:
                fixed[name] = value
        return {
            "fixed": fixed,
            "marginalized": sorted(self.marginalized),
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SubgroupSpec":
        fixed = {}
        for name, value in obj["fixed"].items():
            if name == "background":
                fixed[name] = background_from_json(value)
            elif name == "location":
                fixed[name] = tuple(float(v) for v in value)
            else:
                fixed[name] = value
        return cls.of(fixed, obj["seeds"], obj.get("marginalized", ()))


# ---------------------------------------------------------------------------
# Assets and scenes


@dataclass(frozen=True)
class StageRecord:
    """One provenance entry: which stage ran, with what parameters and seed."""

    stage: str
    params: tuple[tuple[str, Any], ...]
    seed: Optional[int] = None

    @classmethod
    def of(cls, stage: str, seed: Optional[int] = None, **params) -> "StageRecord":
        return cls(stage=stage, params=tuple(sorted(params.items())), seed=seed)

    def to_json(self) -> dict:
        return {"stage": self.stage, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_json(cls, obj: Mapping) -> "StageRecord":
        params = {
            k: tuple(v) if isinstance(v, list) else v
            for k, v in obj.get("params", {}).items()
        }
        return cls.of(obj["stage"], obj.get("seed"), **params)


Provenance = tuple[StageRecord, ...]


@dataclass(frozen=True)
class ObjectAsset:
    """An RGBA cutout; the unit flowing between synthesis stages.

    The mask is derived from the alpha channel on construction, so
    ``mask == (alpha > 0)`` holds by definition.
    """

    pixels: np.ndarray
    provenance: Provenance = ()
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ValidationError("pixels", "expected HxWx4 uint8 array")
        px = _frozen(px)
        mask = _frozen(px[:, :, 3] > 0)
        if not mask.any():
            raise EmptyAsset("asset has no pixel with alpha > 0")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[:, :, :3]

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[:, :, 3]

    @property
    def size(self) -> tuple[int, int]:
        """(width, height)"""
        return self.pixels.shape[1], self.pixels.shape[0]

    def with_record(self, record: StageRecord) -> "ObjectAsset":
        return ObjectAsset(self.pixels, self.provenance + (record,))


def mask_bbox(mask: np.ndarray) -> Box:
    """Tight half-open box (x1, y1, x2, y2) around the true pixels of a mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyAsset("empty mask has no bounding box")
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def tight_bbox(asset: ObjectAsset) -> Box:
    """Smallest axis-aligned box containing every mask pixel of the asset."""
    return mask_bbox(asset.mask)


@dataclass(frozen=True)
class PlacedObject:
    """A canvas-sized RGBA layer with the object scaled and positioned,
    plus the ground-truth box it realizes."""

    pixels: np.ndarray
    gt_bbox: Box
    scale_factor: float
    location: tuple[float, float]
    provenance: Provenance = ()

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ValidationError("pixels", "expected HxWx4 uint8 array")
        px = _frozen(px)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "gt_bbox", tuple(int(v) for v in self.gt_bbox))
        if mask_bbox(px[:, :, 3] > 0) != self.gt_bbox:
            raise ValidationError("gt_bbox", "not the tight box of alpha > 0 pixels")

    @property
    def mask(self) -> np.ndarray:
        return self.pixels[:, :, 3] > 0

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[:, :, :3]


@dataclass(frozen=True)
class SceneSample:
    """A composed RGB scene with exact ground truth and full provenance."""

    image: np.ndarray
    gt_bbox: Box
    gt_class: str
    attributes: AttributeVector
    seed: int
    provenance: Provenance = ()

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise ValidationError("image", "expected HxWx3 uint8 array")
        object.__setattr__(self, "image", _frozen(img))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        x1, y1, x2, y2 = (int(v) for v in self.gt_bbox)
        h, w = img.shape[:2]
        if not (0 <= x1 < x2 <= w and 0 <= y1 < y2 <= h):
            raise ValidationError(
                "gt_bbox", f"({x1},{y1},{x2},{y2}) not inside {w}x{h} image"
            )
        object.__setattr__(self, "gt_bbox", (x1, y1, x2, y2))


@dataclass(frozen=True)
class Detection:
    """One detector prediction in scene pixel coordinates."""

    class_label: str
    score: float
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError("score", f"{self.score} outside [0, 1]")
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ValidationError("bbox", f"{self.bbox} is not well-ordered")
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))


# ---------------------------------------------------------------------------
# Evaluation outcomes


@dataclass(frozen=True)
class EvalOutcome:
    """Per-sample verdict: correct, wrong class (with label), or false negative."""

    kind: str
    label: Optional[str] = None

    CORRECT = "correct"
    WRONG_CLASS = "wrong_class"
    FALSE_NEGATIVE = "false_negative"

    def __post_init__(self):
        if self.kind not in (self.CORRECT, self.WRONG_CLASS, self.FALSE_NEGATIVE):
            raise ValidationError("kind", f"unknown outcome kind {self.kind!r}")
        if self.kind == self.WRONG_CLASS and not self.label:
            raise ValidationError("label", "wrong_class outcome requires a label")
        if self.kind != self.WRONG_CLASS and self.label is not None:
            raise ValidationError("label", f"{self.kind} outcome carries no label")

    @classmethod
    def correct(cls) -> "EvalOutcome":
        return cls(cls.CORRECT)

    @classmethod
    def wrong_class(cls, label: str) -> "EvalOutcome":
        return cls(cls.WRONG_CLASS, label)

    @classmethod
    def false_negative(cls) -> "EvalOutcome":
        return cls(cls.FALSE_NEGATIVE)

    @property
    def is_error(self) -> bool:
        return self.kind != self.CORRECT

    def to_json(self) -> dict:
        return {"kind": self.kind, "label": self.label}

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvalOutcome":
        return cls(obj["kind"], obj.get("label"))


@dataclass(frozen=True)
class SubgroupResult:
    """Aggregated error statistics of one detector on one subgroup."""

    subgroup: SubgroupSpec
    detector_id: str
    n_samples: int
    n_errors: int
    top_wrong_class: Optional[tuple[str, int]] = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValidationError("n_samples", "must be >= 1")
        if not 0 <= self.n_errors <= self.n_samples:
            raise ValidationError("n_errors", "outside [0, n_samples]")
        if self.top_wrong_class is not None:
            label, count = self.top_wrong_class
            if count < 1 or count > self.n_errors:
                raise ValidationError("top_wrong_class", "count outside [1, n_errors]")
            object.__setattr__(self, "top_wrong_class", (str(label), int(count)))

    @property
    def error_rate(self) -> Fraction:
        return Fraction(self.n_errors, self.n_samples)

    def to_json(self) -> dict:
        return {
            "subgroup": self.subgroup.to_json(),
            "detector_id": self.detector_id,
            "n_samples": self.n_samples,
            "n_errors": self.n_errors,
            "error_rate": f"{self.n_errors}/{self.n_samples}",
            "top_wrong_class": list(self.top_wrong_class)
            if self.top_wrong_class
            else None,
        }
