"""Orchestrates the full synthesis chain: segment -> (canny -> recolor ->
re-segment) -> rotate -> upscale -> place -> background."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .canny import canny_edges
from .errors import ConfigError
from .glyph import render_start_image
from .model import (
    ORIGINAL,
    AttributeVector,
    Outpaint,
    PlainColor,
    SceneSample,
    StageRecord,
    derive_seed,
    mask_bbox,
)
from .placement import compose_plain, outpaint, place
from .stages import (
    StageAdapter,
    StageKind,
    flatten_to_rgb,
    recolor,
    rotate_view,
    segment,
    upscale,
)

AdapterMap = dict[StageKind, StageAdapter]


def default_adapters() -> AdapterMap:
    """Reference backends for every generative slot."""
    return {kind: StageAdapter.of(kind) for kind in StageKind}


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the synthesis chain that are not scene attributes."""

    canvas: tuple[int, int] = (480, 480)            # (W, H) of the final scene
    glyph_canvas: tuple[int, int] = (96, 72)        # (W, H) of the start image
    upscale_factor: int = 4
    start_color: str = "red"                        # body color before recolor
    canny_sigma: float = 1.4
    canny_low: float = 0.1
    canny_high: float = 0.2

    def to_json(self) -> dict:
        return {
            "canvas": list(self.canvas),
            "glyph_canvas": list(self.glyph_canvas),
            "upscale_factor": self.upscale_factor,
            "start_color": self.start_color,
            "canny_sigma": self.canny_sigma,
            "canny_low": self.canny_low,
            "canny_high": self.canny_high,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        kwargs = {}
        for key in (
            "canvas",
            "glyph_canvas",
            "upscale_factor",
            "start_color",
            "canny_sigma",
            "canny_low",
            "canny_high",
        ):
            if key in obj:
                value = obj[key]
                if key in ("canvas", "glyph_canvas"):
                    value = tuple(int(v) for v in value)
                kwargs[key] = value
        return cls(**kwargs)


def run_pipeline(
    start_image: np.ndarray,
    attrs: AttributeVector,
    adapters: AdapterMap,
    seed: int,
    config: PipelineConfig = PipelineConfig(),
) -> SceneSample:
    """Execute every stage the attribute vector requires, in order.

    The color-control block (canny, recolor, re-segment) runs only when
    object_color is a concrete color; the ORIGINAL sentinel skips it, so
    no recolor record appears in the provenance.  Any stage failure
    surfaces as a StageError naming the stage.
    """
    required = [StageKind.SEGMENT, StageKind.ROTATE_VIEW, StageKind.UPSCALE]
    if attrs.object_color != ORIGINAL:
        required.append(StageKind.RECOLOR)
    if isinstance(attrs.background, Outpaint):
        required.append(StageKind.OUTPAINT)
    missing = [kind.value for kind in required if kind not in adapters]
    if missing:
        raise ConfigError(f"no adapter configured for stages: {', '.join(missing)}")

    asset = segment(start_image, None, adapters[StageKind.SEGMENT], derive_seed(seed, "segment"))

    if attrs.object_color != ORIGINAL:
        edges = canny_edges(asset, config.canny_sigma, config.canny_low, config.canny_high)
        asset = asset.with_record(
            StageRecord.of(
                "canny",
                None,
                sigma=config.canny_sigma,
                low=config.canny_low,
                high=config.canny_high,
            )
        )
        asset = recolor(
            asset, edges, attrs.object_color, adapters[StageKind.RECOLOR], derive_seed(seed, "recolor")
        )
        # The recolored object is segmented again; the point hint is the
        # centroid of the mask it already has.
        x1, y1, x2, y2 = mask_bbox(asset.mask)
        ys, xs = np.nonzero(asset.mask)
        hint = (int(xs.mean()), int(ys.mean()))
        asset = segment(
            flatten_to_rgb(asset),
            hint,
            adapters[StageKind.SEGMENT],
            derive_seed(seed, "segment2"),
            provenance=asset.provenance,
        )

    asset = rotate_view(
        asset, attrs.orientation_deg, adapters[StageKind.ROTATE_VIEW], derive_seed(seed, "rotate")
    )
    asset = upscale(
        asset, config.upscale_factor, adapters[StageKind.UPSCALE], derive_seed(seed, "upscale")
    )
    placed = place(asset, attrs.scale_factor, attrs.location, config.canvas)

    if isinstance(attrs.background, PlainColor):
        return compose_plain(placed, attrs.background.color, attributes=attrs, seed=seed)
    return outpaint(
        placed,
        attrs.background.prompt,
        adapters[StageKind.OUTPAINT],
        derive_seed(seed, "outpaint"),
        attributes=attrs,
        sample_seed=seed,
    )


def render_scene(
    attrs: AttributeVector,
    seed: int,
    adapters: AdapterMap | None = None,
    config: PipelineConfig = PipelineConfig(),
) -> SceneSample:
    """Convenience entry point: procedural start image + full pipeline."""
    adapters = adapters if adapters is not None else default_adapters()
    start = render_start_image(
        attrs.object_type, seed, color=config.start_color, canvas=config.glyph_canvas
    )
    return run_pipeline(start, attrs, adapters, seed, config)
