"""scenesweep: controllable scene synthesis, attribute-grid sweeps over
object detectors, systematic-error discovery and counterfactual flips."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DetectorError,
    EmptyAsset,
    EmptySubgroup,
    PlacementError,
    ReportError,
    SceneSweepError,
    SegmentationFailed,
    SkipImage,
    StageError,
    ValidationError,
)
from .model import (
    ATTRIBUTE_NAMES,
    ORIGINAL,
    AttributeVector,
    Detection,
    EvalOutcome,
    ObjectAsset,
    Outpaint,
    PlacedObject,
    PlainColor,
    SceneSample,
    StageRecord,
    SubgroupResult,
    SubgroupSpec,
    mask_bbox,
    tight_bbox,
)
from .canny import EdgeMap, canny_edges
from .counterfactual import PerturbationSpec, default_spec, find_flip, neighbors
from .detectors import (
    DetectorAdapter,
    MatchConfig,
    RemoteDetector,
    ScriptedDetector,
    evaluate_sample,
    iou,
    run_detector,
)
from .analysis import (
    aggregate,
    average_error_rate,
    build_universe,
    detector_specific,
    format_percent,
    rank_subgroups,
)
from .pipeline import PipelineConfig, default_adapters, render_scene, run_pipeline
from .placement import compose_plain, outpaint, place
from .stages import StageAdapter, StageKind, recolor, rotate_view, segment, upscale
from .store import CellResult, ResultsStore
from .sweep import GridSpec, SweepRunner, expand_grid, run_sweep
