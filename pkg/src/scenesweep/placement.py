"""Scale/position the object on a canvas and fill in the background."""

from __future__ import annotations

import zlib
from typing import Mapping

import numpy as np

from .errors import PlacementError, StageError, ValidationError
from .model import (
    AttributeVector,
    ObjectAsset,
    PlacedObject,
    SceneSample,
    StageRecord,
    mask_bbox,
    quantize_u8,
    round_half_away,
    tight_bbox,
)
from .palette import color_rgb
from .stages import (
    StageAdapter,
    StageKind,
    _guard,
    _RemoteBase,
    bilinear_resize,
    call_remote_stage,
    register_backend,
    resample_cutout,
    resolve_backend,
)


def place(
    asset: ObjectAsset,
    scale_factor: float,
    location: tuple[float, float],
    canvas: tuple[int, int],
) -> PlacedObject:
    """Downscale the object by `scale_factor` and center it at the
    normalized `location` on a (W, H) canvas.

    A center that would push the object off-canvas is translated minimally
    to fit; only an object that cannot fit at all is an error.  The ground
    truth box is the tight box of the placed mask.
    """
    if not scale_factor >= 1.0:
        raise ValidationError("scale_factor", f"{scale_factor} < 1.0")
    lx, ly = (float(v) for v in location)
    if not (0.0 <= lx <= 1.0 and 0.0 <= ly <= 1.0):
        raise ValidationError("location", f"({lx}, {ly}) outside [0, 1]^2")
    cw, ch = (int(v) for v in canvas)

    x1, y1, x2, y2 = tight_bbox(asset)
    cut = asset.pixels[y1:y2, x1:x2]
    tw = max(1, round_half_away((x2 - x1) / scale_factor))
    th = max(1, round_half_away((y2 - y1) / scale_factor))
    if tw > cw or th > ch:
        raise PlacementError(
            f"object {tw}x{th} does not fit the {cw}x{ch} canvas at scale {scale_factor}"
        )
    if scale_factor == 1.0:
        resized = np.array(cut)
    else:
        resized = resample_cutout(cut, th, tw, "box")
    px = min(max(round_half_away(lx * cw - tw / 2.0), 0), cw - tw)
    py = min(max(round_half_away(ly * ch - th / 2.0), 0), ch - th)

    layer = np.zeros((ch, cw, 4), dtype=np.uint8)
    layer[py : py + th, px : px + tw] = resized
    alive = layer[:, :, 3] > 0
    if not alive.any():
        raise PlacementError("object vanished after downscaling")
    record = StageRecord.of(
        "place", None, scale_factor=float(scale_factor), location=(lx, ly)
    )
    return PlacedObject(
        pixels=layer,
        gt_bbox=mask_bbox(alive),
        scale_factor=float(scale_factor),
        location=(lx, ly),
        provenance=asset.provenance + (record,),
    )


def compose_plain(
    placed: PlacedObject,
    color: str,
    *,
    attributes: AttributeVector,
    seed: int,
    gt_class: str = "car",
) -> SceneSample:
    """Alpha-composite the placed object over a plain palette color."""
    bg = color_rgb(color)
    h, w = placed.pixels.shape[:2]
    image = np.empty((h, w, 3), dtype=np.uint8)
    image[:] = np.array(bg, dtype=np.uint8)
    m = placed.mask
    image[m] = placed.rgb[m]
    record = StageRecord.of("compose_plain", None, color=color)
    return SceneSample(
        image=image,
        gt_bbox=placed.gt_bbox,
        gt_class=gt_class,
        attributes=attributes,
        seed=seed,
        provenance=placed.provenance + (record,),
    )


@register_backend(StageKind.OUTPAINT, "reference")
class ReferenceOutpainter:
    """Seeded procedural background: two-tone value noise keyed on
    (seed, prompt).  Stands in for a text-conditioned outpainting model."""

    def __init__(self, config: Mapping):
        self.grid = int(config.get("noise_grid", 16))

    def run(self, placed: PlacedObject, prompt: str, seed: int) -> np.ndarray:
        h, w = placed.pixels.shape[:2]
        rng = np.random.default_rng(
            [seed & 0xFFFFFFFF, zlib.crc32(prompt.encode())]
        )
        c0 = rng.integers(30, 226, 3).astype(np.float64)
        c1 = rng.integers(30, 226, 3).astype(np.float64)
        coarse = rng.random((h // self.grid + 2, w // self.grid + 2))
        t = bilinear_resize(coarse, h, w)
        return quantize_u8(c0 + t[:, :, None] * (c1 - c0))


@register_backend(StageKind.OUTPAINT, "remote")
class RemoteOutpainter(_RemoteBase):
    def run(self, placed: PlacedObject, prompt: str, seed: int) -> np.ndarray:
        cfg = dict(self.extra, prompt=prompt)
        out = call_remote_stage(
            self.endpoint,
            StageKind.OUTPAINT,
            {"object": placed.pixels},
            cfg,
            seed,
            self.timeout,
        )
        return out["scene"][:, :, :3]


def outpaint(
    placed: PlacedObject,
    prompt: str,
    adapter: StageAdapter,
    seed: int,
    *,
    attributes: AttributeVector,
    sample_seed: int,
    gt_class: str = "car",
) -> SceneSample:
    """Fill the background around the object from a text prompt.

    Whatever the backend returns, the object region (alpha > 0) is pasted
    back verbatim, so in-mask pixels are preserved bit-exactly and the
    ground truth box cannot drift.
    """
    if not prompt:
        raise ValidationError("prompt", "must be nonempty")
    backend = resolve_backend(adapter)
    background = _guard("outpaint", backend.run, placed, prompt, seed)
    h, w = placed.pixels.shape[:2]
    if background.shape[:2] != (h, w):
        raise StageError("outpaint", "backend returned a mismatched canvas")
    image = np.array(background[:, :, :3], dtype=np.uint8)
    m = placed.mask
    image[m] = placed.rgb[m]
    record = StageRecord.of("outpaint", seed, backend=adapter.backend_id, prompt=prompt)
    return SceneSample(
        image=image,
        gt_bbox=placed.gt_bbox,
        gt_class=gt_class,
        attributes=attributes,
        seed=sample_seed,
        provenance=placed.provenance + (record,),
    )
