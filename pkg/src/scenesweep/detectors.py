"""Detector adapters and per-sample evaluation.

Evaluation is object-centric: detections overlapping the ground truth are
filtered by score and IoU, and the single highest-scoring survivor decides
the verdict.  Detections elsewhere in the scene are ignored, not penalized.
"""

from __future__ import annotations

import json
import urllib.request
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ConfigError, DetectorError, ValidationError
from .model import Detection, EvalOutcome, Outpaint, PlainColor, SceneSample


@dataclass(frozen=True)
class MatchConfig:
    """Thresholds deciding which detections count as matching the object."""

    iou_threshold: float = 0.5
    score_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValidationError("iou_threshold", f"{self.iou_threshold} outside (0, 1]")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValidationError("score_threshold", f"{self.score_threshold} outside [0, 1]")

    def to_json(self) -> dict:
        return {"iou_threshold": self.iou_threshold, "score_threshold": self.score_threshold}


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two well-ordered boxes; 0.0 when degenerate."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(0.0, iw) * max(0.0, ih)
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return inter / union


def evaluate_sample(
    dets: Sequence[Detection], sample: SceneSample, cfg: MatchConfig
) -> EvalOutcome:
    """Verdict for one scene: survivors are detections with score and IoU
    above threshold; the highest-scoring one decides.  Ties break toward
    larger IoU, then lexicographically smaller class label."""
    survivors = []
    for det in dets:
        if det.score < cfg.score_threshold:
            continue
        overlap = iou(det.bbox, sample.gt_bbox)
        if overlap < cfg.iou_threshold:
            continue
        survivors.append((det, overlap))
    if not survivors:
        return EvalOutcome.false_negative()
    best, _ = min(survivors, key=lambda s: (-s[0].score, -s[1], s[0].class_label))
    if best.class_label == sample.gt_class:
        return EvalOutcome.correct()
    return EvalOutcome.wrong_class(best.class_label)


# ---------------------------------------------------------------------------
# Adapters


class DetectorAdapter:
    """Uniform detector surface: subclasses implement detect(scene)."""

    def __init__(
        self,
        detector_id: str,
        class_vocabulary: Sequence[str] = ("car",),
        score_threshold: float = 0.5,
        max_in_flight: int = 1,
    ):
        if "car" not in class_vocabulary:
            raise ValidationError("class_vocabulary", "must contain 'car'")
        if not 0.0 <= score_threshold <= 1.0:
            raise ValidationError("score_threshold", f"{score_threshold} outside [0, 1]")
        self.detector_id = detector_id
        self.class_vocabulary = tuple(class_vocabulary)
        self.score_threshold = float(score_threshold)
        self.max_in_flight = int(max_in_flight)

    def detect(self, scene: SceneSample) -> list[Detection]:
        raise NotImplementedError


def run_detector(adapter: DetectorAdapter, scene: SceneSample) -> list[Detection]:
    """Invoke an adapter, translating any failure into DetectorError."""
    if scene.image.ndim != 3 or scene.image.shape[2] != 3:
        raise ValidationError("image", "detector input must be an RGB scene")
    try:
        return list(adapter.detect(scene))
    except DetectorError:
        raise
    except Exception as exc:
        raise DetectorError(adapter.detector_id, str(exc)) from exc


# --- scripted mocks --------------------------------------------------------

_RULE_OPS = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "lt": lambda a, b: a < b,
    "lte": lambda a, b: a <= b,
    "gt": lambda a, b: a > b,
    "gte": lambda a, b: a >= b,
    "in": lambda a, b: a in b,
}


def _attribute_fields(scene: SceneSample) -> dict:
    attrs = scene.attributes
    fields = {
        "object_type": attrs.object_type,
        "object_color": attrs.object_color,
        "orientation_deg": attrs.orientation_deg,
        "scale_factor": attrs.scale_factor,
        "location_x": attrs.location[0],
        "location_y": attrs.location[1],
        "seed": scene.seed,
    }
    if isinstance(attrs.background, PlainColor):
        fields["background_kind"] = "plain"
        fields["background_color"] = attrs.background.color
    elif isinstance(attrs.background, Outpaint):
        fields["background_kind"] = "outpaint"
        fields["background_prompt"] = attrs.background.prompt
    return fields


def _conditions_hold(when: Mapping, fields: Mapping) -> bool:
    for field_name, conds in when.items():
        if field_name not in fields:
            return False
        value = fields[field_name]
        if not isinstance(conds, Mapping):
            conds = {"eq": conds}
        for op, ref in conds.items():
            if op not in _RULE_OPS:
                raise ConfigError(f"unknown rule operator {op!r}")
            if not _RULE_OPS[op](value, ref):
                return False
    return True


class ScriptedDetector(DetectorAdapter):
    """Rule-table mock: deterministic verdicts keyed on scene attributes.

    Each rule is {"when": {field: {op: value}, ...}, then either
    "wrong_label": str or "miss": true}.  The first matching rule fires;
    with no match the detector reports the ground truth box as "car".
    """

    def __init__(
        self,
        detector_id: str,
        rules: Sequence[Mapping] = (),
        score: float = 0.95,
        class_vocabulary: Sequence[str] = ("car",),
        score_threshold: float = 0.5,
    ):
        vocab = set(class_vocabulary) | {"car"}
        for rule in rules:
            if "when" not in rule or ("wrong_label" not in rule and not rule.get("miss")):
                raise ConfigError(f"bad scripted rule: {rule!r}")
            if "wrong_label" in rule:
                vocab.add(rule["wrong_label"])
        super().__init__(detector_id, sorted(vocab), score_threshold)
        self.rules = [dict(r) for r in rules]
        self.score = float(score)

    def detect(self, scene: SceneSample) -> list[Detection]:
        fields = _attribute_fields(scene)
        for rule in self.rules:
            if _conditions_hold(rule["when"], fields):
                if rule.get("miss"):
                    return []
                return [Detection(rule["wrong_label"], self.score, scene.gt_bbox)]
        return [Detection("car", self.score, scene.gt_bbox)]


class FailingDetector(DetectorAdapter):
    """Raises on every call; exercises the skipped-record path."""

    def __init__(self, detector_id: str = "broken"):
        super().__init__(detector_id)

    def detect(self, scene: SceneSample) -> list[Detection]:
        raise DetectorError(self.detector_id, "scripted failure")


class RemoteDetector(DetectorAdapter):
    """JSON-over-HTTP detector: posts {"detector_id", "image": png_base64},
    expects {"detections": [{"label", "score", "bbox": [x1,y1,x2,y2]}]}."""

    def __init__(
        self,
        detector_id: str,
        endpoint: str,
        timeout: float = 30.0,
        class_vocabulary: Sequence[str] = ("car",),
        score_threshold: float = 0.5,
        max_in_flight: int = 1,
    ):
        from .stages import resolve_endpoint

        super().__init__(detector_id, class_vocabulary, score_threshold, max_in_flight)
        self.endpoint = resolve_endpoint(endpoint)
        self.timeout = float(timeout)

    def detect(self, scene: SceneSample) -> list[Detection]:
        from .serialize import png_b64

        payload = {"detector_id": self.detector_id, "image": png_b64(scene.image)}
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode())
        except Exception as exc:
            raise DetectorError(self.detector_id, f"remote call failed: {exc}") from exc
        try:
            return [
                Detection(d["label"], float(d["score"]), tuple(d["bbox"]))
                for d in body["detections"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise DetectorError(self.detector_id, f"bad response payload: {exc}") from exc


def detector_from_config(cfg: Mapping) -> DetectorAdapter:
    """Build an adapter from a config dict ({"id", "kind", ...})."""
    kind = cfg.get("kind", "scripted")
    detector_id = cfg.get("id")
    if not detector_id:
        raise ConfigError("detector config requires an 'id'")
    if kind == "scripted":
        return ScriptedDetector(
            detector_id,
            rules=cfg.get("rules", ()),
            score=float(cfg.get("score", 0.95)),
        )
    if kind == "always_correct":
        return ScriptedDetector(detector_id)
    if kind == "failing":
        return FailingDetector(detector_id)
    if kind == "remote":
        if "endpoint" not in cfg:
            raise ConfigError("remote detector requires an 'endpoint'")
        return RemoteDetector(
            detector_id,
            endpoint=cfg["endpoint"],
            timeout=float(cfg.get("timeout", 30.0)),
            max_in_flight=int(cfg.get("max_in_flight", 1)),
        )
    raise ConfigError(f"unknown detector kind {kind!r}")
