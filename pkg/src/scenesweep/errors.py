"""Exception hierarchy shared by all scenesweep modules."""

from __future__ import annotations


class SceneSweepError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SceneSweepError):
    """A domain value violates an invariant; names the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(SceneSweepError):
    """Invalid configuration value (unknown color, bad threshold, ...)."""


class EmptyAsset(SceneSweepError):
    """An object asset or mask with no foreground pixels."""


class StageError(SceneSweepError):
    """A synthesis stage failed; carries the stage identity."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class SegmentationFailed(StageError):
    def __init__(self, message: str = "no foreground object found"):
        super().__init__("segment", message)


class PlacementError(StageError):
    def __init__(self, message: str):
        super().__init__("place", message)


class DetectorError(SceneSweepError):
    """A detector adapter failed; carries the detector identity."""

    def __init__(self, detector_id: str, message: str):
        super().__init__(f"detector '{detector_id}': {message}")
        self.detector_id = detector_id


class EmptySubgroup(SceneSweepError):
    """A subgroup matched zero evaluated records."""


class ReportError(SceneSweepError):
    """Report generation failed (typically: empty results store)."""


class SkipImage(SceneSweepError):
    """A corpus image yields no usable training sample and is skipped."""
