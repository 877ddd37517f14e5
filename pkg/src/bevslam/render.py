"""Raster export of semantic maps.

Maps are drawn point-by-point onto a white canvas with one fixed color
per category. Rendering writes pixels directly (no text, no timestamps,
no antialiasing), so the same cloud always produces byte-identical PNG
output.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageDraw

from .geometry import Pose2
from .semantic import SemanticLabel

LABEL_COLORS: dict[int, tuple[int, int, int]] = {
    int(SemanticLabel.LANE_LINE): (40, 90, 210),
    int(SemanticLabel.PARKING_SPOT): (30, 160, 70),
    int(SemanticLabel.ZEBRA_CROSSING): (220, 60, 50),
    int(SemanticLabel.INDICATING_ARROW): (240, 160, 20),
}

TRAJECTORY_COLOR = (170, 170, 170)


def render_map_image(
    xy: np.ndarray,
    labels: np.ndarray,
    pixels_per_meter: float = 20.0,
    padding: float = 1.0,
    trajectory: list[Pose2] | None = None,
) -> Image.Image:
    """Draw a labeled cloud (and optionally a trajectory) to an RGB image.

    The image covers the cloud's bounding box plus ``padding`` meters on
    every side; +x points right, +y points up.
    """
    pts = np.asarray(xy, dtype=float).reshape(-1, 2)
    labs = np.asarray(labels).reshape(-1)
    if pixels_per_meter <= 0.0 or padding < 0.0:
        raise ValueError("pixels_per_meter must be positive and padding non-negative")
    corners = [pts] if len(pts) else []
    if trajectory:
        corners.append(np.array([[p.x, p.y] for p in trajectory]))
    if not corners:
        raise ValueError("nothing to render")
    allpts = np.concatenate(corners)
    x0, y0 = allpts.min(axis=0) - padding
    x1, y1 = allpts.max(axis=0) + padding
    width = int(math.ceil((x1 - x0) * pixels_per_meter)) + 1
    height = int(math.ceil((y1 - y0) * pixels_per_meter)) + 1
    image = Image.new("RGB", (width, height), (255, 255, 255))

    def to_px(x: float, y: float) -> tuple[int, int]:
        return (
            int(round((x - x0) * pixels_per_meter)),
            int(round((y1 - y) * pixels_per_meter)),
        )

    if trajectory:
        draw = ImageDraw.Draw(image)
        draw.line([to_px(p.x, p.y) for p in trajectory], fill=TRAJECTORY_COLOR, width=1)

    px = image.load()
    for (x, y), label in zip(pts, labs):
        color = LABEL_COLORS.get(int(label))
        if color is None:
            continue
        u, v = to_px(float(x), float(y))
        if 0 <= u < width and 0 <= v < height:
            px[u, v] = color
    return image


def save_map_png(
    xy: np.ndarray,
    labels: np.ndarray,
    path,
    pixels_per_meter: float = 20.0,
    trajectory: list[Pose2] | None = None,
) -> None:
    render_map_image(xy, labels, pixels_per_meter, trajectory=trajectory).save(path, format="PNG")
