"""Raster drawing helpers.

Rasters are ``[H, W, N_CHANNELS]``.  Channel 0 holds the grayscale scene with
values in ``[0, CONTENT_MAX]``; every marker (the REF point and the option
labels A-D) owns a channel of its own, so a marker's identity never has to
be read off a gray level and markers never overwrite scene pixels.
"""

from __future__ import annotations

import numpy as np

from .geometry import Box

CONTENT_MAX = 0.6
SCENE = 0
MARKER_CHANNEL = {"REF": 1, "A": 2, "B": 3, "C": 4, "D": 5}
N_CHANNELS = 1 + len(MARKER_CHANNEL)
MARKER_VALUE = 1.0


def layered(scene: np.ndarray) -> np.ndarray:
    """Wrap a 2-D scene into an empty multi-channel raster."""
    img = np.zeros(scene.shape + (N_CHANNELS,))
    img[..., SCENE] = scene
    return img


def marker_plane(img: np.ndarray, label: str) -> np.ndarray:
    """Writable view of the channel that carries ``label``."""
    return img[..., MARKER_CHANNEL[label]]


def smooth_texture(rng: np.random.Generator, h: int, w: int, n_blobs: int = 6,
                   lo: float = 0.05, hi: float = CONTENT_MAX) -> np.ndarray:
    """Sum of random Gaussian blobs and a linear ramp, rescaled to ``[lo, hi]``."""
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    field = rng.uniform(-1, 1) * xs / w + rng.uniform(-1, 1) * ys / h
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sig = rng.uniform(0.08, 0.3) * max(h, w)
        amp = rng.uniform(-1.5, 1.5)
        field += amp * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sig ** 2))
    field += 0.15 * rng.standard_normal((h, w))
    f0, f1 = field.min(), field.max()
    return lo + (hi - lo) * (field - f0) / (f1 - f0 + 1e-12)


def draw_outline(img: np.ndarray, box: Box, value: float) -> None:
    img[box.y0, box.x0:box.x1] = value
    img[box.y1 - 1, box.x0:box.x1] = value
    img[box.y0:box.y1, box.x0] = value
    img[box.y0:box.y1, box.x1 - 1] = value


def fill_box(img: np.ndarray, box: Box, value: float) -> None:
    img[box.y0:box.y1, box.x0:box.x1] = value


def ellipse_mask(h: int, w: int, box: Box) -> np.ndarray:
    """Filled ellipse inscribed in ``box`` (pixel centres tested)."""
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    cx, cy = (box.x0 + box.x1 - 1) / 2, (box.y0 + box.y1 - 1) / 2
    rx, ry = (box.x1 - box.x0) / 2, (box.y1 - box.y0) / 2
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0


def tight_box(mask: np.ndarray) -> Box:
    ys, xs = np.nonzero(mask)
    return Box(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def disk_mask(h: int, w: int, cx: float, cy: float, r: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r


def put_marker(img: np.ndarray, x: float, y: float, value: float = MARKER_VALUE) -> tuple[int, int]:
    """Single-pixel marker at the rounded position; returns (col, row)."""
    c, r = int(round(x)), int(round(y))
    img[r, c] = value
    return c, r
