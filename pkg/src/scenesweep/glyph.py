"""Procedural side-view car glyph renderer.

Draws a parametric car silhouette (body, cabin, window, wheels) with hard
edges on a white canvas and returns the exact foreground mask alongside the
image.  This is the deterministic stand-in for photographic start images:
every downstream mask claim can be checked against the renderer's own mask.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import ConfigError
from .palette import color_rgb

WINDOW_RGB = (185, 205, 220)
TIRE_RGB = (35, 35, 35)
HUB_RGB = (120, 120, 120)

# Silhouette proportions per car type.  All values are fractions: `length`
# and `height` of the drawable area, `cabin_frac` and `wheel_r` of the car
# height resp. drawable height, spans of the car length.
PROFILES: dict[str, dict] = {
    "sports car": dict(
        length=0.96, height=0.38, cabin_frac=0.40, wheel_r=0.15,
        cabin_span=(0.30, 0.64), roof_span=(0.38, 0.56), nose_drop=0.55,
    ),
    "sedan": dict(
        length=0.90, height=0.52, cabin_frac=0.45, wheel_r=0.14,
        cabin_span=(0.25, 0.70), roof_span=(0.33, 0.60), nose_drop=0.25,
    ),
    "smart car": dict(
        length=0.58, height=0.62, cabin_frac=0.52, wheel_r=0.15,
        cabin_span=(0.12, 0.80), roof_span=(0.22, 0.68), nose_drop=0.15,
    ),
    "SUV": dict(
        length=0.92, height=0.64, cabin_frac=0.48, wheel_r=0.15,
        cabin_span=(0.22, 0.78), roof_span=(0.28, 0.70), nose_drop=0.18,
    ),
    "coupe car": dict(
        length=0.86, height=0.44, cabin_frac=0.42, wheel_r=0.15,
        cabin_span=(0.30, 0.68), roof_span=(0.40, 0.58), nose_drop=0.45,
    ),
}

CAR_TYPES = tuple(PROFILES)


def fill_polygon(shape: tuple[int, int], points: list[tuple[float, float]]) -> np.ndarray:
    """Even-odd scanline rasterization at pixel centers; no antialiasing."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    xs = np.arange(w) + 0.5
    n = len(points)
    for y in range(h):
        yc = y + 0.5
        crossings = []
        for i in range(n):
            x0, y0 = points[i]
            x1, y1 = points[(i + 1) % n]
            if (y0 <= yc < y1) or (y1 <= yc < y0):
                t = (yc - y0) / (y1 - y0)
                crossings.append(x0 + t * (x1 - x0))
        crossings.sort()
        for a, b in zip(crossings[::2], crossings[1::2]):
            mask[y] |= (xs > a) & (xs < b)
    return mask


def fill_circle(shape: tuple[int, int], cx: float, cy: float, r: float) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r


def _jitter(rng: np.random.Generator, value: float, rel: float = 0.03) -> float:
    return value * (1.0 + rng.uniform(-rel, rel))


def render_glyph(
    object_type: str,
    color: str = "red",
    seed: int = 0,
    canvas: tuple[int, int] = (96, 72),
    margin: float = 0.04,
) -> tuple[np.ndarray, np.ndarray]:
    """Render a car glyph; returns (rgb uint8 HxWx3 on white, mask bool HxW).

    The seed applies small proportion jitter so distinct seeds yield
    distinct but equally valid silhouettes.
    """
    if object_type not in PROFILES:
        raise ConfigError(f"unknown object type: {object_type!r}")
    body_rgb = color_rgb(color)
    w, h = canvas
    rng = np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(object_type.encode())])
    p = PROFILES[object_type]

    x_lo, y_lo = margin * w, margin * h
    avail_w, avail_h = w - 2 * x_lo, h - 2 * y_lo
    length = min(_jitter(rng, p["length"]), 1.0) * avail_w
    car_h = min(_jitter(rng, p["height"], 0.05), 0.9) * avail_h
    wheel_r = _jitter(rng, p["wheel_r"], 0.05) * avail_h
    x0 = x_lo + (avail_w - length) / 2.0
    y_base = y_lo + avail_h
    y_skirt = y_base - wheel_r
    y_roof = y_base - car_h
    y_belt = y_roof + p["cabin_frac"] * car_h
    nd = p["nose_drop"] * (y_skirt - y_belt)

    body = [
        (x0, y_skirt),
        (x0, y_belt + nd),
        (x0 + 0.10 * length, y_belt),
        (x0 + 0.97 * length, y_belt),
        (x0 + length, y_belt + 0.3 * (y_skirt - y_belt)),
        (x0 + length, y_skirt),
    ]
    cs0, cs1 = p["cabin_span"]
    rs0, rs1 = p["roof_span"]
    cabin = [
        (x0 + cs0 * length, y_belt),
        (x0 + rs0 * length, y_roof),
        (x0 + rs1 * length, y_roof),
        (x0 + cs1 * length, y_belt),
    ]
    # Window: cabin shrunk toward its centroid, floor lifted off the beltline.
    cx = sum(pt[0] for pt in cabin) / 4.0
    cy = sum(pt[1] for pt in cabin) / 4.0
    window = [(cx + 0.72 * (px - cx), cy + 0.62 * (py - cy)) for px, py in cabin]

    shape = (h, w)
    body_m = fill_polygon(shape, body)
    cabin_m = fill_polygon(shape, cabin)
    window_m = fill_polygon(shape, window)
    wheel_front = fill_circle(shape, x0 + 0.22 * length, y_skirt, wheel_r)
    wheel_rear = fill_circle(shape, x0 + 0.78 * length, y_skirt, wheel_r)
    hub_front = fill_circle(shape, x0 + 0.22 * length, y_skirt, wheel_r * 0.45)
    hub_rear = fill_circle(shape, x0 + 0.78 * length, y_skirt, wheel_r * 0.45)

    rgb = np.full((h, w, 3), 255, dtype=np.uint8)
    rgb[body_m | cabin_m] = body_rgb
    rgb[window_m] = WINDOW_RGB
    rgb[wheel_front | wheel_rear] = TIRE_RGB
    rgb[hub_front | hub_rear] = HUB_RGB
    mask = body_m | cabin_m | wheel_front | wheel_rear
    return rgb, mask


def render_start_image(
    object_type: str,
    seed: int,
    color: str = "red",
    canvas: tuple[int, int] = (96, 72),
) -> np.ndarray:
    """Start-of-pipeline RGB image: one car glyph on a white background."""
    rgb, _ = render_glyph(object_type, color=color, seed=seed, canvas=canvas)
    return rgb
