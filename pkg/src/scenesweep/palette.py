"""Named color palette shared by the glyph renderer, recolor stage,
plain-background compositor and perturbation defaults."""

from __future__ import annotations

from .errors import ConfigError

# name -> (r, g, b), 8-bit
PALETTE: dict[str, tuple[int, int, int]] = {
    "white": (255, 255, 255),
    "black": (0, 0, 0),
    "grey": (128, 128, 128),
    "red": (220, 40, 40),
    "green": (60, 170, 70),
    "blue": (50, 90, 200),
    "yellow": (240, 210, 50),
    "orange": (240, 140, 40),
    "purple": (140, 70, 180),
    "pink": (240, 130, 180),
    "brown": (140, 90, 50),
    "cyan": (70, 200, 210),
}

# The evaluation setting's background palette: 11 plain colors.
BACKGROUND_COLORS: tuple[str, ...] = (
    "grey",
    "white",
    "black",
    "blue",
    "red",
    "green",
    "yellow",
    "orange",
    "purple",
    "brown",
    "pink",
)

# Colors usable as object body colors (white would be invisible on the
# white start-image canvas the reference segmenter assumes).
CAR_COLORS: tuple[str, ...] = tuple(c for c in PALETTE if c != "white")


def color_rgb(name: str) -> tuple[int, int, int]:
    try:
        return PALETTE[name]
    except KeyError:
        raise ConfigError(f"unknown color name: {name!r}") from None
