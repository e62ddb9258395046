"""Independent re-derivation of each example's gold answer from its raster and meta.

These checks deliberately avoid the generators' helpers: IoU is counted on
pixel masks, counts come from a flood fill, homographies are applied by
hand.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .render import MARKER_CHANNEL, MARKER_VALUE, SCENE


def _box_mask(box, h, w):
    m = np.zeros((h, w), dtype=bool)
    x0, y0, x1, y1 = box
    m[y0:y1, x0:x1] = True
    return m


def pixel_iou(a, b, h: int = 64, w: int = 64) -> float:
    ma, mb = _box_mask(a, h, w), _box_mask(b, h, w)
    return (ma & mb).sum() / (ma | mb).sum()


def flood_fill_count(mask: np.ndarray) -> int:
    """4-connected components of a boolean raster."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    n = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                n += 1
                seen[y, x] = True
                q = deque([(y, x)])
                while q:
                    cy, cx = q.popleft()
                    for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
    return n


def check_localization(ex) -> tuple[bool, str]:
    m = ex.meta
    h, w = ex.image.shape[:2]
    v = pixel_iou(m["gold_box"], m["distractor_box"], h, w)
    if not 0.2 <= v <= 0.5:
        return False, f"distractor IoU {v:.4f} outside [0.2, 0.5]"
    if m["boxes"][ex.answer] != m["gold_box"]:
        return False, "answer letter does not label the gold box"
    x0, y0, x1, y1 = m["gold_box"]
    plane = ex.image[..., MARKER_CHANNEL[ex.answer]]
    if not (np.all(plane[y0, x0:x1] == MARKER_VALUE) and np.all(plane[y0:y1, x0] == MARKER_VALUE)):
        return False, "gold outline not drawn in the answer's marker channel"
    scene = ex.image[..., SCENE]
    inside = scene[y0:y1, x0:x1]
    if inside.max() <= scene.max() - 1e-12 and inside.size:
        return False, "brightest scene pixel (the object) lies outside the gold box"
    frac = (x1 - x0) * (y1 - y0) / (h * w)
    if not 0.15 <= frac <= 0.5:
        return False, f"gold area fraction {frac:.3f} outside [0.15, 0.5]"
    return True, ""


def check_jigsaw(ex) -> tuple[bool, str]:
    m = ex.meta
    gx0, gy0, gx1, gy1 = m["gold_box"]
    dx0, dy0, dx1, dy1 = m["distractor_box"]
    img = ex.image[..., SCENE]
    if np.any(ex.image[..., SCENE + 1:] != 0.0):
        return False, "jigsaw raster carries markers"
    if np.any(img[gy0:gy1, gx0:gx1] != 0.0):
        return False, "bottom-right quadrant not blacked out"
    if (_box_mask(m["gold_box"], 64, 64) & _box_mask(m["distractor_box"], 64, 64)).any():
        return False, "distractor overlaps the gold quadrant"
    top, qw, qh = m["option_top"], m["option_width"], m["option_height"]
    opts = {"A": img[top:top + qh, :qw], "B": img[top:top + qh, qw:2 * qw]}
    crop = img[dy0:dy1, dx0:dx1]
    matching = [k for k, o in opts.items() if o.shape == crop.shape and np.array_equal(o, crop)]
    if matching != [("B" if ex.answer == "A" else "A")]:
        return False, "distractor option is not the non-answer option"
    return True, ""


def check_counting(ex) -> tuple[bool, str]:
    n = flood_fill_count(ex.image[..., SCENE] == ex.meta["target_level"])
    if n != ex.answer:
        return False, f"flood fill counts {n}, answer {ex.answer}"
    return True, ""


def _srgb_to_linear(v):
    v = np.asarray(v, dtype=float)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def check_reflectance(ex) -> tuple[bool, str]:
    m = ex.meta
    h, w = ex.image.shape[:2]
    for letter, (px, py) in zip("AB", m["points"]):
        if ex.image[int(round(py)), int(round(px)), MARKER_CHANNEL[letter]] != MARKER_VALUE:
            return False, f"marker {letter} missing at its point"
    seeds = np.asarray(m["seeds"])
    albedo = np.asarray(m["albedo_srgb"])
    ys, xs = np.mgrid[0:h, 0:w]
    field = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            d = (seeds[:, 0] - x) ** 2 + (seeds[:, 1] - y) ** 2
            field[y, x] = albedo[int(np.argmin(d))]
    r = m["radius"]
    Y = []
    for px, py in m["points"]:
        disk = (xs - px) ** 2 + (ys - py) ** 2 <= r * r
        Y.append(float(_srgb_to_linear(field[disk]).mean()))
    rel = abs(Y[0] - Y[1]) / max(Y[0], Y[1], 1e-8)
    want = "C" if rel <= 0.10 else ("A" if Y[0] < Y[1] else "B")
    if want != ex.answer:
        return False, f"rel={rel:.4f} gives {want}, stored {ex.answer}"
    return True, ""


def check_correspondence(ex) -> tuple[bool, str]:
    m = ex.meta
    H = np.asarray(m["homography"])
    rx, ry = m["ref"]
    den = H[2, 0] * rx + H[2, 1] * ry + H[2, 2]
    tx = (H[0, 0] * rx + H[0, 1] * ry + H[0, 2]) / den + m["panel_width"]
    ty = (H[1, 0] * rx + H[1, 1] * ry + H[1, 2]) / den
    cx, cy = m["candidates"][ex.answer]
    if np.hypot(cx - tx, cy - ty) > 1.0:
        return False, f"answer candidate {cx:.2f},{cy:.2f} vs warped REF {tx:.2f},{ty:.2f}"
    if ex.image[int(round(cy)), int(round(cx)), MARKER_CHANNEL[ex.answer]] != MARKER_VALUE:
        return False, "answer marker missing from the raster"
    pts = list(m["candidates"].values())
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if np.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]) < m["min_dist"]:
                return False, "candidates closer than the minimum distance"
    return True, ""


CHECKS = {
    "localization": check_localization,
    "jigsaw": check_jigsaw,
    "counting": check_counting,
    "reflectance": check_reflectance,
    "correspondence": check_correspondence,
}


def verify(ex) -> tuple[bool, str]:
    return CHECKS[ex.kind](ex)
