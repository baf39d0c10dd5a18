"""Run configuration: one JSON file describing grid, detectors, match
thresholds, pipeline knobs, backends and report options.

The sweep echoes the whole configuration into the store manifest, so
`report` and `counterfactual` can run from the store path alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .detectors import DetectorAdapter, MatchConfig, detector_from_config
from .errors import ConfigError
from .pipeline import AdapterMap, PipelineConfig, default_adapters
from .report import ReportOptions
from .stages import StageAdapter, StageKind
from .sweep import GridSpec


def _match_from_json(obj: Mapping) -> MatchConfig:
    return MatchConfig(
        iou_threshold=float(obj.get("iou_threshold", 0.5)),
        score_threshold=float(obj.get("score_threshold", 0.5)),
    )


def adapters_from_json(obj: Mapping) -> AdapterMap:
    """{"segment": {"backend": "reference", "config": {...}}, ...} on top of
    reference defaults for unmentioned stages."""
    adapters = default_adapters()
    for stage_name, spec in obj.items():
        try:
            kind = StageKind(stage_name)
        except ValueError:
            raise ConfigError(f"unknown stage {stage_name!r} in adapters") from None
        adapters[kind] = StageAdapter.of(
            kind, spec.get("backend", "reference"), **spec.get("config", {})
        )
    return adapters


@dataclass
class RunConfig:
    grid: GridSpec
    detector_configs: list[dict]
    match: MatchConfig = MatchConfig()
    pipeline: PipelineConfig = PipelineConfig()
    adapter_configs: dict = field(default_factory=dict)
    store_path: Path = Path("results.jsonl")
    scene_dir: Optional[Path] = None
    save_scenes: bool = True
    workers: int = 1
    report: ReportOptions = ReportOptions()

    def build_detectors(self) -> dict[str, DetectorAdapter]:
        adapters = {}
        for cfg in self.detector_configs:
            adapter = detector_from_config(cfg)
            adapters[adapter.detector_id] = adapter
        missing = [d for d in self.grid.detectors if d not in adapters]
        if missing:
            raise ConfigError(f"grid names unconfigured detectors: {missing}")
        return adapters

    def build_adapters(self) -> AdapterMap:
        return adapters_from_json(self.adapter_configs)

    def to_manifest(self) -> dict:
        from . import __version__

        body = {
            "grid": self.grid.to_json(),
            "detectors": self.detector_configs,
            "match": self.match.to_json(),
            "pipeline": self.pipeline.to_json(),
            "adapters": self.adapter_configs,
            "report": self.report.to_json(),
            "save_scenes": self.save_scenes,
        }
        digest = hashlib.sha256(
            json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()
        return dict(body, config_digest=digest, backend_version=f"scenesweep {__version__}")

    @classmethod
    def from_json(cls, obj: Mapping, base_dir: Path = Path(".")) -> "RunConfig":
        if "grid" not in obj:
            raise ConfigError("run config requires a 'grid' section")
        if "detectors" not in obj:
            raise ConfigError("run config requires a 'detectors' section")
        scene_dir = obj.get("scene_dir")
        return cls(
            grid=GridSpec.from_json(obj["grid"]),
            detector_configs=list(obj["detectors"]),
            match=_match_from_json(obj.get("match", {})),
            pipeline=PipelineConfig.from_json(obj.get("pipeline", {})),
            adapter_configs=dict(obj.get("adapters", {})),
            store_path=base_dir / obj.get("store", "results.jsonl"),
            scene_dir=base_dir / scene_dir if scene_dir else None,
            save_scenes=bool(obj.get("save_scenes", True)),
            workers=int(obj.get("workers", 1)),
            report=ReportOptions.from_json(obj.get("report", {})),
        )

    @classmethod
    def from_manifest(cls, manifest: Mapping, store_path: Path) -> "RunConfig":
        cfg = cls.from_json(
            {
                "grid": manifest["grid"],
                "detectors": manifest["detectors"],
                "match": manifest.get("match", {}),
                "pipeline": manifest.get("pipeline", {}),
                "adapters": manifest.get("adapters", {}),
                "report": manifest.get("report", {}),
                "save_scenes": manifest.get("save_scenes", False),
            },
            base_dir=store_path.parent,
        )
        cfg.store_path = store_path
        return cfg


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_json(obj, base_dir=path.parent)
