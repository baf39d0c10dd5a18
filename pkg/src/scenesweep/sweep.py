"""Grid expansion and the sweep engine: render each (cell, seed) scene once,
evaluate every detector on it, and append records to the results store."""

from __future__ import annotations

import itertools
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .detectors import DetectorAdapter, MatchConfig, evaluate_sample, run_detector
from .errors import ConfigError, DetectorError, StageError
from .model import AttributeVector, Background, EvalOutcome, background_from_json
from .pipeline import AdapterMap, PipelineConfig, default_adapters, render_scene
from .serialize import save_scene
from .stages import requires_single_flight
from .store import CellResult, ResultsStore


@dataclass(frozen=True)
class GridSpec:
    """Per-attribute value lists, crossed with seeds and detectors."""

    object_types: tuple[str, ...]
    object_colors: tuple[str, ...]
    orientations_deg: tuple[float, ...]
    scale_factors: tuple[float, ...]
    locations: tuple[tuple[float, float], ...]
    backgrounds: tuple[Background, ...]
    seeds: tuple[int, ...]
    detectors: tuple[str, ...]

    def __post_init__(self):
        for name in (
            "object_types",
            "object_colors",
            "orientations_deg",
            "scale_factors",
            "locations",
            "backgrounds",
            "seeds",
            "detectors",
        ):
            if not getattr(self, name):
                raise ConfigError(f"grid list {name!r} must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("grid seeds must be distinct")
        object.__setattr__(
            self, "locations", tuple(tuple(float(v) for v in loc) for loc in self.locations)
        )

    @property
    def n_cells(self) -> int:
        return (
            len(self.object_types)
            * len(self.object_colors)
            * len(self.orientations_deg)
            * len(self.scale_factors)
            * len(self.locations)
            * len(self.backgrounds)
        )

    def value_lists(self) -> dict[str, tuple]:
        """Grid values keyed by canonical attribute name."""
        return {
            "object_type": self.object_types,
            "object_color": self.object_colors,
            "orientation_deg": self.orientations_deg,
            "scale_factor": self.scale_factors,
            "location": self.locations,
            "background": self.backgrounds,
        }

    def to_json(self) -> dict:
        return {
            "object_types": list(self.object_types),
            "object_colors": list(self.object_colors),
            "orientations_deg": list(self.orientations_deg),
            "scale_factors": list(self.scale_factors),
            "locations": [list(loc) for loc in self.locations],
            "backgrounds": [bg.to_json() for bg in self.backgrounds],
            "seeds": list(self.seeds),
            "detectors": list(self.detectors),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "GridSpec":
        try:
            return cls(
                object_types=tuple(obj["object_types"]),
                object_colors=tuple(obj["object_colors"]),
                orientations_deg=tuple(float(v) for v in obj["orientations_deg"]),
                scale_factors=tuple(float(v) for v in obj["scale_factors"]),
                locations=tuple(tuple(float(v) for v in loc) for loc in obj["locations"]),
                backgrounds=tuple(background_from_json(bg) for bg in obj["backgrounds"]),
                seeds=tuple(int(s) for s in obj["seeds"]),
                detectors=tuple(obj["detectors"]),
            )
        except KeyError as exc:
            raise ConfigError(f"grid config is missing key {exc}") from exc


def expand_grid(grid: GridSpec) -> list[AttributeVector]:
    """Cartesian product of the attribute lists in declaration (row-major)
    order: object_type varies slowest, background fastest."""
    cells = []
    for vt, vc, vo, vs, vl, vb in itertools.product(
        grid.object_types,
        grid.object_colors,
        grid.orientations_deg,
        grid.scale_factors,
        grid.locations,
        grid.backgrounds,
    ):
        cells.append(
            AttributeVector(
                object_type=vt,
                object_color=vc,
                orientation_deg=vo,
                scale_factor=vs,
                location=vl,
                background=vb,
            )
        )
    return cells


class SweepRunner:
    """Drives pipeline + detectors over a grid, appending to a ResultsStore.

    Scenes are rendered once per (cell, seed) and shared by all detectors,
    so every detector sees identical pixels.  Stage failures mark all
    affected records skipped (with the failing stage as reason) and the
    sweep continues; detector failures skip only that detector's record.
    """

    def __init__(
        self,
        detectors: Mapping[str, DetectorAdapter],
        store: ResultsStore,
        match_cfg: MatchConfig = MatchConfig(),
        adapters: Optional[AdapterMap] = None,
        pipeline_cfg: PipelineConfig = PipelineConfig(),
        scene_dir: Optional[Path] = None,
        save_scenes: bool = False,
        workers: int = 1,
    ):
        self.detectors = dict(detectors)
        self.store = store
        self.match_cfg = match_cfg
        self.adapters = adapters if adapters is not None else default_adapters()
        self.pipeline_cfg = pipeline_cfg
        self.scene_dir = Path(scene_dir) if scene_dir else None
        self.save_scenes = save_scenes
        self.workers = max(1, int(workers))
        # A backend that declares single_flight is not reentrant: all
        # pipeline runs are serialized through one lock in that case.
        self._render_lock = (
            threading.Lock()
            if any(requires_single_flight(a) for a in self.adapters.values())
            else None
        )
        # Each detector declares its max in-flight request count.
        self._detector_slots = {
            det_id: threading.Semaphore(max(1, adapter.max_in_flight))
            for det_id, adapter in self.detectors.items()
        }

    # -- scene handling -----------------------------------------------------

    def _scene_path(self, attrs: AttributeVector, seed: int) -> Optional[str]:
        if not (self.save_scenes and self.scene_dir):
            return None
        return str(self.scene_dir / f"{attrs.key()}_s{seed}.png")

    def _render(self, attrs: AttributeVector, seed: int):
        if self._render_lock is not None:
            with self._render_lock:
                scene = render_scene(attrs, seed, self.adapters, self.pipeline_cfg)
        else:
            scene = render_scene(attrs, seed, self.adapters, self.pipeline_cfg)
        path = self._scene_path(attrs, seed)
        if path:
            save_scene(scene, path)
        return scene, path

    # -- evaluation ---------------------------------------------------------

    def _evaluate_unit(self, attrs: AttributeVector, seed: int, detector_ids: Sequence[str]) -> dict:
        """Render one (cell, seed) and evaluate the given detectors."""
        counts = {"evaluated": 0, "skipped": 0, "reused": 0}
        pending = [
            d for d in detector_ids if not self.store.has((attrs.key(), seed, d))
        ]
        counts["reused"] = len(detector_ids) - len(pending)
        if not pending:
            return counts
        try:
            scene, path = self._render(attrs, seed)
        except StageError as exc:
            for det_id in pending:
                self.store.append(
                    CellResult(
                        attributes=attrs,
                        seed=seed,
                        detector_id=det_id,
                        outcome=None,
                        status="skipped",
                        reason=str(exc),
                    )
                )
            counts["skipped"] += len(pending)
            return counts
        for det_id in pending:
            adapter = self.detectors[det_id]
            try:
                with self._detector_slots[det_id]:
                    dets = run_detector(adapter, scene)
            except DetectorError as exc:
                self.store.append(
                    CellResult(
                        attributes=attrs,
                        seed=seed,
                        detector_id=det_id,
                        outcome=None,
                        scene_path=path,
                        status="skipped",
                        reason=str(exc),
                    )
                )
                counts["skipped"] += 1
                continue
            outcome = evaluate_sample(dets, scene, self.match_cfg)
            self.store.append(
                CellResult(
                    attributes=attrs,
                    seed=seed,
                    detector_id=det_id,
                    outcome=outcome,
                    scene_path=path,
                )
            )
            counts["evaluated"] += 1
        return counts

    def run(self, grid: GridSpec) -> dict:
        """Sweep the whole grid; resumable (existing store keys are kept)."""
        missing = [d for d in grid.detectors if d not in self.detectors]
        if missing:
            raise ConfigError(f"no adapter registered for detectors: {missing}")
        cells = expand_grid(grid)
        units = [(attrs, seed) for attrs in cells for seed in grid.seeds]
        totals = {"evaluated": 0, "skipped": 0, "reused": 0}

        def work(unit):
            attrs, seed = unit
            return self._evaluate_unit(attrs, seed, grid.detectors)

        if self.workers == 1:
            results = map(work, units)
            for counts in results:
                for k, v in counts.items():
                    totals[k] += v
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                for counts in pool.map(work, units):
                    for k, v in counts.items():
                        totals[k] += v
        totals["cells"] = len(cells)
        totals["records"] = totals["evaluated"] + totals["skipped"] + totals["reused"]
        return totals

    def evaluate_vector(
        self, attrs: AttributeVector, seeds: Sequence[int], detector_id: str
    ) -> list[Optional[EvalOutcome]]:
        """Outcomes of one detector on one vector across seeds.

        Reuses stored records when present; renders, evaluates and appends
        otherwise, so every evaluation is recoverable from the store.
        Entries are None for records skipped due to stage/detector errors.
        """
        outcomes: list[Optional[EvalOutcome]] = []
        for seed in seeds:
            key = (attrs.key(), seed, detector_id)
            existing = self.store.lookup(key)
            if existing is None:
                self._evaluate_unit(attrs, seed, [detector_id])
                existing = self.store.lookup(key)
            if existing is None or existing["status"] != "ok":
                outcomes.append(None)
            else:
                outcomes.append(EvalOutcome.from_json(existing["outcome"]))
        return outcomes


def run_sweep(
    grid: GridSpec,
    detectors: Mapping[str, DetectorAdapter],
    store: ResultsStore,
    match_cfg: MatchConfig = MatchConfig(),
    adapters: Optional[AdapterMap] = None,
    pipeline_cfg: PipelineConfig = PipelineConfig(),
    **kwargs,
) -> dict:
    runner = SweepRunner(
        detectors, store, match_cfg, adapters, pipeline_cfg, **kwargs
    )
    return runner.run(grid)
