"""Synthesis stages with pluggable backends.

Deterministic operations (placement, plain compositing, Canny) live in
their own modules; the four generative slots here (segment, recolor,
rotate_view, upscale) and outpainting route through a backend registry.
Every slot ships a deterministic procedural reference backend, plus a
"remote" backend speaking the JSON-over-HTTP stage protocol for real
generative models.
"""

from __future__ import annotations

import json
import math
import os
import urllib.request
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from .errors import ConfigError, SegmentationFailed, StageError, ValidationError
from .model import (
    ORIGINAL,
    ObjectAsset,
    Provenance,
    StageRecord,
    quantize_u8,
)
from .palette import color_rgb
from .regions import label_regions, largest_region, region_at
from .serialize import array_from_b64, png_b64


class StageKind(str, Enum):
    SEGMENT = "segment"
    RECOLOR = "recolor"
    ROTATE_VIEW = "rotate_view"
    UPSCALE = "upscale"
    OUTPAINT = "outpaint"
    CAPTION = "caption"


@dataclass(frozen=True)
class StageAdapter:
    """Selects a backend for one stage kind, with backend-specific config."""

    stage_kind: StageKind
    backend_id: str = "reference"
    config: tuple[tuple[str, object], ...] = ()

    @classmethod
    def of(cls, stage_kind: StageKind, backend_id: str = "reference", **config) -> "StageAdapter":
        return cls(stage_kind, backend_id, tuple(sorted(config.items())))

    @property
    def config_map(self) -> dict:
        return dict(self.config)


_REGISTRY: dict[tuple[StageKind, str], type] = {}


def register_backend(kind: StageKind, name: str):
    def deco(cls):
        _REGISTRY[(kind, name)] = cls
        return cls
    return deco


def resolve_backend(adapter: StageAdapter):
    key = (adapter.stage_kind, adapter.backend_id)
    if key not in _REGISTRY:
        raise ConfigError(
            f"no backend {adapter.backend_id!r} registered for stage "
            f"{adapter.stage_kind.value!r}"
        )
    return _REGISTRY[key](adapter.config_map)


def requires_single_flight(adapter: StageAdapter) -> bool:
    """True when the adapter's backend class declares `single_flight = True`
    (i.e. it is not reentrant and the orchestrator must serialize calls).
    Unregistered backends answer False here; resolution errors surface when
    the stage actually runs."""
    cls = _REGISTRY.get((adapter.stage_kind, adapter.backend_id))
    return bool(cls is not None and getattr(cls, "single_flight", False))


def _guard(stage: str, fn, *args, **kwargs):
    """Run a backend call, translating unexpected failures into StageError."""
    try:
        return fn(*args, **kwargs)
    except (StageError, ConfigError, ValidationError):
        raise
    except Exception as exc:
        raise StageError(stage, f"backend failure: {exc}") from exc


# ---------------------------------------------------------------------------
# Color space helpers (used by the reference recolor backend)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB [0,1] -> HSV with hue in [0,1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rc = (maxc - r) / delta
        gc = (maxc - g) / delta
        bc = (maxc - b) / delta
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta == 0, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    out = np.zeros(hsv.shape)
    for idx, (rr, gg, bb) in enumerate([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]):
        m = i == idx
        out[..., 0] = np.where(m, rr, out[..., 0])
        out[..., 1] = np.where(m, gg, out[..., 1])
        out[..., 2] = np.where(m, bb, out[..., 2])
    return out


# ---------------------------------------------------------------------------
# Resampling helpers shared by upscale and placement


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of a float (H,W) or (H,W,C) array, separable."""
    in_h, in_w = arr.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = ys - y0
    wx = xs - x0
    if arr.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    rows = arr[y0] + (arr[y1] - arr[y0]) * wy
    return rows[:, x0] + (rows[:, x1] - rows[:, x0]) * wx


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic overlap weights for area-average resampling."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = j * scale, (j + 1) * scale
        for i in range(int(math.floor(lo)), min(int(math.ceil(hi)), n_in)):
            w[j, i] = min(hi, i + 1.0) - max(lo, float(i))
    return w / scale


def box_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Area-average resampling of a float (H,W) or (H,W,C) array."""
    wy = _box_weights(arr.shape[0], out_h)
    wx = _box_weights(arr.shape[1], out_w)
    if arr.ndim == 2:
        return wy @ arr @ wx.T
    out = np.einsum("oi,ijc->ojc", wy, arr)
    return np.einsum("pj,ojc->opc", wx, out)


ALPHA_CUT = 127.0  # masks are re-binarized at alpha > 127 (half coverage)


def binarize_alpha(coverage: np.ndarray) -> np.ndarray:
    """Coverage fraction in [0,1] -> hard boolean mask."""
    return coverage * 255.0 > ALPHA_CUT


def resample_cutout(rgba: np.ndarray, out_h: int, out_w: int, method: str) -> np.ndarray:
    """Resize an RGBA cutout with premultiplied color and a hard alpha.

    method: "box" (area average, used for downscaling) or "bilinear".
    """
    rgb = rgba[:, :, :3].astype(np.float64)
    a = rgba[:, :, 3].astype(np.float64) / 255.0
    pre = rgb * a[:, :, None]
    resize = box_resize if method == "box" else bilinear_resize
    cov = resize(a, out_h, out_w)
    pre_r = resize(pre, out_h, out_w)
    mask = binarize_alpha(cov)
    safe = np.where(cov > 0, cov, 1.0)
    rgb_out = np.where(mask[:, :, None], pre_r / safe[:, :, None], 0.0)
    out = np.zeros((out_h, out_w, 4), dtype=np.uint8)
    out[:, :, :3] = quantize_u8(rgb_out)
    out[:, :, 3] = np.where(mask, 255, 0).astype(np.uint8)
    return out


def flatten_to_rgb(asset: ObjectAsset, background: tuple[int, int, int] = (255, 255, 255)) -> np.ndarray:
    """Composite a hard-alpha asset onto a constant background color."""
    out = np.empty(asset.pixels.shape[:2] + (3,), dtype=np.uint8)
    out[:] = np.array(background, dtype=np.uint8)
    out[asset.mask] = asset.rgb[asset.mask]
    return out


# ---------------------------------------------------------------------------
# Reference backends


@register_backend(StageKind.SEGMENT, "reference")
class ReferenceSegmenter:
    """Chroma-difference segmentation for procedural images: estimates the
    background color from the border and keeps pixels that differ from it."""

    def __init__(self, config: Mapping):
        self.tolerance = int(config.get("tolerance", 12))

    def run(self, image: np.ndarray, hint, seed: int) -> np.ndarray:
        h, w = image.shape[:2]
        border = np.concatenate(
            [image[0], image[-1], image[:, 0], image[:, -1]], axis=0
        )
        colors, counts = np.unique(border.reshape(-1, 3), axis=0, return_counts=True)
        bg = colors[np.argmax(counts)].astype(np.int16)
        diff = np.abs(image.astype(np.int16) - bg).max(axis=2)
        fg = diff > self.tolerance
        rgba = np.zeros((h, w, 4), dtype=np.uint8)
        rgba[:, :, :3] = image
        rgba[:, :, 3] = np.where(fg, 255, 0)
        return rgba


@register_backend(StageKind.RECOLOR, "reference")
class ReferenceRecolorer:
    """Replaces hue (and, for near-achromatic targets, saturation) inside
    the mask while preserving luminance; pixels outside the mask untouched."""

    def __init__(self, config: Mapping):
        self.config = dict(config)

    def run(self, asset: ObjectAsset, edges, color: str, seed: int) -> np.ndarray:
        target = np.array(color_rgb(color), dtype=np.float64) / 255.0
        th, ts, _tv = rgb_to_hsv(target)
        rgba = np.array(asset.pixels)
        m = asset.mask
        hsv = rgb_to_hsv(rgba[m, :3].astype(np.float64) / 255.0)
        hsv[:, 0] = th
        if ts < 0.25:
            hsv[:, 1] *= ts
        rgba[m, :3] = quantize_u8(hsv_to_rgb(hsv) * 255.0)
        return rgba


@register_backend(StageKind.ROTATE_VIEW, "reference")
class ReferenceRotator:
    """Exact in-plane rotation: array rotation for 90-degree multiples,
    nearest-neighbor resampling with an expanded canvas otherwise.  The
    output canvas is cropped to the rotated object's tight box."""

    def __init__(self, config: Mapping):
        self.config = dict(config)

    @staticmethod
    def _crop(rgba: np.ndarray) -> np.ndarray:
        alive = rgba[:, :, 3] > 0
        if not alive.any():
            return rgba
        ys, xs = np.nonzero(alive)
        return np.ascontiguousarray(
            rgba[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
        )

    def run(self, asset: ObjectAsset, angle_deg: float, seed: int) -> np.ndarray:
        if angle_deg == 0:
            return np.array(asset.pixels)
        if angle_deg % 90 == 0:
            return self._crop(np.rot90(asset.pixels, k=int(angle_deg // 90)))
        h, w = asset.pixels.shape[:2]
        theta = math.radians(angle_deg)
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        out_w = int(math.ceil(abs(w * cos_t) + abs(h * sin_t)))
        out_h = int(math.ceil(abs(w * sin_t) + abs(h * cos_t)))
        yy, xx = np.mgrid[0:out_h, 0:out_w]
        dx = xx + 0.5 - out_w / 2.0
        dy = yy + 0.5 - out_h / 2.0
        # y grows downward, so a positive (counterclockwise on screen)
        # angle maps through the transposed rotation matrix.
        sx = cos_t * dx - sin_t * dy + w / 2.0
        sy = sin_t * dx + cos_t * dy + h / 2.0
        ix = np.floor(sx).astype(int)
        iy = np.floor(sy).astype(int)
        inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        out = np.zeros((out_h, out_w, 4), dtype=np.uint8)
        out[inside] = asset.pixels[iy[inside], ix[inside]]
        return self._crop(out)


@register_backend(StageKind.UPSCALE, "reference")
class ReferenceUpscaler:
    """Deterministic bilinear resampling by an integer factor."""

    def __init__(self, config: Mapping):
        self.config = dict(config)

    def run(self, asset: ObjectAsset, factor: int, seed: int) -> np.ndarray:
        if factor == 1:
            return np.array(asset.pixels)
        h, w = asset.pixels.shape[:2]
        return resample_cutout(asset.pixels, h * factor, w * factor, "bilinear")


# ---------------------------------------------------------------------------
# Remote backends (JSON-over-HTTP stage protocol)


def call_remote_stage(
    endpoint: str,
    stage_kind: StageKind,
    images: dict[str, np.ndarray],
    config: Mapping,
    seed: int,
    timeout: float = 60.0,
) -> dict[str, np.ndarray]:
    """POST one stage request and decode the returned images.

    Request:  {"stage_kind", "seed", "config", "images": [{"name", "png_base64"}]}
    Response: {"images": [{"name", "png_base64"}], "error"?}
    PNG payloads are bit-exact on both legs.
    """
    payload = {
        "stage_kind": stage_kind.value,
        "seed": seed,
        "config": dict(config),
        "images": [{"name": n, "png_base64": png_b64(a)} for n, a in images.items()],
    }
    req = urllib.request.Request(
        endpoint,
        data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"},
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            body = json.loads(resp.read().decode())
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage_kind.value, f"remote call failed: {exc}") from exc
    if body.get("error"):
        raise StageError(stage_kind.value, f"remote backend error: {body['error']}")
    return {img["name"]: array_from_b64(img["png_base64"]) for img in body["images"]}


def resolve_endpoint(endpoint: str) -> str:
    """Endpoints may be given literally or as "env:VAR_NAME"."""
    if endpoint.startswith("env:"):
        var = endpoint[4:]
        value = os.environ.get(var)
        if not value:
            raise ConfigError(f"endpoint environment variable {var!r} is not set")
        return value
    return endpoint


class _RemoteBase:
    def __init__(self, config: Mapping):
        cfg = dict(config)
        try:
            self.endpoint = resolve_endpoint(cfg.pop("endpoint"))
        except KeyError:
            raise ConfigError("remote backend requires an 'endpoint' config key") from None
        self.timeout = float(cfg.pop("timeout", 60.0))
        self.extra = cfg


@register_backend(StageKind.SEGMENT, "remote")
class RemoteSegmenter(_RemoteBase):
    def run(self, image: np.ndarray, hint, seed: int) -> np.ndarray:
        cfg = dict(self.extra)
        if hint is not None:
            cfg["hint"] = list(hint)
        out = call_remote_stage(
            self.endpoint, StageKind.SEGMENT, {"image": image}, cfg, seed, self.timeout
        )
        return out["asset"]


@register_backend(StageKind.RECOLOR, "remote")
class RemoteRecolorer(_RemoteBase):
    def run(self, asset: ObjectAsset, edges, color: str, seed: int) -> np.ndarray:
        edge_img = np.where(edges.pixels, 255, 0).astype(np.uint8)
        cfg = dict(self.extra, color=color)
        out = call_remote_stage(
            self.endpoint,
            StageKind.RECOLOR,
            {"asset": asset.pixels, "edges": edge_img},
            cfg,
            seed,
            self.timeout,
        )
        return out["asset"]


@register_backend(StageKind.ROTATE_VIEW, "remote")
class RemoteRotator(_RemoteBase):
    def run(self, asset: ObjectAsset, angle_deg: float, seed: int) -> np.ndarray:
        cfg = dict(self.extra, angle_deg=angle_deg)
        out = call_remote_stage(
            self.endpoint, StageKind.ROTATE_VIEW, {"asset": asset.pixels}, cfg, seed, self.timeout
        )
        return out["asset"]


@register_backend(StageKind.UPSCALE, "remote")
class RemoteUpscaler(_RemoteBase):
    def run(self, asset: ObjectAsset, factor: int, seed: int) -> np.ndarray:
        cfg = dict(self.extra, factor=factor)
        out = call_remote_stage(
            self.endpoint, StageKind.UPSCALE, {"asset": asset.pixels}, cfg, seed, self.timeout
        )
        return out["asset"]


# ---------------------------------------------------------------------------
# Stage operations


def segment(
    image: np.ndarray,
    hint: Optional[tuple],
    adapter: StageAdapter,
    seed: int,
    provenance: Provenance = (),
) -> ObjectAsset:
    """Cut the foreground object out of an RGB image.

    The result's mask is reduced to a single 8-connected component: the one
    containing a point hint, the largest one intersecting a box hint, or
    the largest overall.
    """
    image = np.asarray(image)
    if image.size == 0 or image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError("image", "expected a nonempty HxWx3 image")
    backend = resolve_backend(adapter)
    rgba = _guard("segment", backend.run, image, hint, seed)
    fg = rgba[:, :, 3] > 0
    if not fg.any():
        raise SegmentationFailed()
    component = None
    if hint is not None and len(hint) == 2:
        component = region_at(fg, (int(hint[0]), int(hint[1])))
    elif hint is not None and len(hint) == 4:
        x1, y1, x2, y2 = (int(v) for v in hint)
        labels, count = label_regions(fg)
        best, best_size = 0, 0
        window = labels[y1:y2, x1:x2]
        for lab in range(1, count + 1):
            size = int((window == lab).sum())
            if size > best_size:
                best, best_size = lab, size
        component = (labels == best) if best else None
    if component is None:
        component = largest_region(fg)
    if component is None or not component.any():
        raise SegmentationFailed()
    out = np.array(rgba)
    out[:, :, 3] = np.where(component, rgba[:, :, 3], 0)
    record = StageRecord.of(
        "segment",
        seed,
        backend=adapter.backend_id,
        hint=tuple(hint) if hint is not None else None,
    )
    return ObjectAsset(out, tuple(provenance) + (record,))


def recolor(
    asset: ObjectAsset,
    edges,
    color: str,
    adapter: StageAdapter,
    seed: int,
) -> ObjectAsset:
    """Repaint the object to a named color, conditioned on its edge map.

    The ORIGINAL sentinel is an identity recolor (pixels unchanged, record
    still appended).  The object mask is a hard contract: a backend that
    changes it is rejected.
    """
    if edges.pixels.shape != asset.mask.shape:
        raise ConfigError(
            f"edge map {edges.pixels.shape} does not match asset {asset.mask.shape}"
        )
    record = StageRecord.of("recolor", seed, backend=adapter.backend_id, color=color)
    if color == ORIGINAL:
        return asset.with_record(record)
    color_rgb(color)  # unknown color -> ConfigError before any backend work
    backend = resolve_backend(adapter)
    rgba = _guard("recolor", backend.run, asset, edges, color, seed)
    if rgba.shape != asset.pixels.shape:
        raise StageError("recolor", "backend changed the asset dimensions")
    if not np.array_equal(rgba[:, :, 3] > 0, asset.mask):
        raise StageError("recolor", "backend changed the object mask")
    return ObjectAsset(rgba, asset.provenance + (record,))


def rotate_view(
    asset: ObjectAsset,
    angle_deg: float,
    adapter: StageAdapter,
    seed: int,
) -> ObjectAsset:
    """Rotate the object view by a signed angle in [-180, 180)."""
    if not (-180.0 <= angle_deg < 180.0):
        raise ValidationError("angle_deg", f"{angle_deg} outside [-180, 180)")
    backend = resolve_backend(adapter)
    rgba = _guard("rotate_view", backend.run, asset, float(angle_deg), seed)
    if not (rgba[:, :, 3] > 0).any():
        raise StageError("rotate_view", "rotation produced an empty mask")
    record = StageRecord.of(
        "rotate_view", seed, backend=adapter.backend_id, angle_deg=float(angle_deg)
    )
    return ObjectAsset(rgba, asset.provenance + (record,))


def upscale(
    asset: ObjectAsset,
    factor: int,
    adapter: StageAdapter,
    seed: int,
) -> ObjectAsset:
    """Increase asset resolution by an integer factor."""
    if int(factor) != factor or factor < 1:
        raise ConfigError(f"upscale factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    backend = resolve_backend(adapter)
    rgba = _guard("upscale", backend.run, asset, factor, seed)
    expect = (asset.pixels.shape[0] * factor, asset.pixels.shape[1] * factor, 4)
    if rgba.shape != expect:
        raise StageError("upscale", f"backend returned {rgba.shape}, expected {expect}")
    record = StageRecord.of("upscale", seed, backend=adapter.backend_id, factor=factor)
    return ObjectAsset(rgba, asset.provenance + (record,))
