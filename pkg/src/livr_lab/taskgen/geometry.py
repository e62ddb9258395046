"""Boxes, IoU and planar homographies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Pixel box, half-open: covers columns [x0, x1) and rows [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.x0 and 0 <= self.y0 and self.x1 <= width and self.y1 <= height

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, v) -> "Box":
        return cls(*(int(x) for x in v))


def intersection(a: Box, b: Box) -> int:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    return max(0, w) * max(0, h)


def iou(a: Box, b: Box) -> float:
    inter = intersection(a, b)
    return inter / (a.area + b.area - inter)


def overlaps(a: Box, b: Box) -> bool:
    return intersection(a, b) > 0


def warp_point(H: np.ndarray, x: float, y: float) -> tuple[float, float]:
    """Image of (x, y) under the 3x3 homography ``H`` (column-vector convention)."""
    u, v, w = H @ np.array([x, y, 1.0])
    return float(u / w), float(v / w)


def warp_points(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    homog = np.hstack([pts, np.ones((len(pts), 1))]) @ H.T
    return homog[:, :2] / homog[:, 2:3]


def random_homography(rng: np.random.Generator, size: int, max_rot: float = 0.3,
                      scale: tuple[float, float] = (0.85, 1.15), shift: float = 3.0,
                      persp: float = 1.5e-3) -> np.ndarray:
    """Rotation/scale about the panel centre, a translation, and a mild perspective term."""
    c = (size - 1) / 2
    th = rng.uniform(-max_rot, max_rot)
    s = rng.uniform(*scale)
    A = np.array([[s * np.cos(th), -s * np.sin(th), 0.0],
                  [s * np.sin(th), s * np.cos(th), 0.0],
                  [0.0, 0.0, 1.0]])
    to_c = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1.0]])
    back = np.array([[1, 0, c + rng.uniform(-shift, shift)],
                     [0, 1, c + rng.uniform(-shift, shift)], [0, 0, 1.0]])
    P = np.eye(3)
    P[2, 0], P[2, 1] = rng.uniform(-persp, persp, size=2)
    H = back @ A @ P @ to_c
    return H / H[2, 2]


def warp_image(src: np.ndarray, H: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Inverse-map bilinear warp: ``out(p) = src(H^-1 p)``."""
    h, w = src.shape
    Hinv = np.linalg.inv(H)
    ys, xs = np.mgrid[0:h, 0:w]
    pts = warp_points(Hinv, np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float))
    sx, sy = pts[:, 0], pts[:, 1]
    x0, y0 = np.floor(sx).astype(int), np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    valid = (x0 >= 0) & (y0 >= 0) & (x0 + 1 < w) & (y0 + 1 < h)
    x0c, y0c = np.clip(x0, 0, w - 2), np.clip(y0, 0, h - 2)
    val = (src[y0c, x0c] * (1 - fx) * (1 - fy) + src[y0c, x0c + 1] * fx * (1 - fy)
           + src[y0c + 1, x0c] * (1 - fx) * fy + src[y0c + 1, x0c + 1] * fx * fy)
    return np.where(valid, val, fill).reshape(h, w)
