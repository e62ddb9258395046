"""Procedural perception tasks on small layered rasters (see ``render``).

Each generator draws everything from the ``rng`` it is handed; ``generate``
derives that stream from ``(seed, kind, index)`` so any example can be
rebuilt on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..seeding import substream
from ..vocab import OPTIONS, Vocabulary, build_vocab, encode_example
from .geometry import Box, iou, overlaps, random_homography, warp_image, warp_point
from .render import (CONTENT_MAX, disk_mask, draw_outline, ellipse_mask, layered,
                     marker_plane, put_marker, smooth_texture, tight_box)

KINDS = ("counting", "localization", "jigsaw", "reflectance", "correspondence")

PROMPTS: dict[str, list[str]] = {
    "counting": ["count", "how", "many", "square", "?"],
    "localization": ["localize", "which", "box", "fits", "the", "object", "?"],
    "jigsaw": ["jigsaw", "which", "patch", "fits", "?"],
    "reflectance": ["reflectance", "which", "point", "is", "darker", "?"],
    "correspondence": ["correspond", "which", "point", "matches", "ref", "?"],
    # registry only: these tasks need real-image semantics and have no generator
    "artstyle": ["artstyle", "which", "image", "matches", "?"],
    "semcorr": ["semcorr", "which", "point", "matches", "ref", "?"],
    "funccorr": ["funccorr", "which", "point", "matches", "ref", "?"],
    "vissim": ["vissim", "which", "image", "matches", "?"],
}

N_CHOICES = {"localization": 2, "jigsaw": 2, "reflectance": 3, "correspondence": 4}

SAME_THRESHOLD = 0.10


class GenerationError(RuntimeError):
    pass


@dataclass
class TaskExample:
    image: np.ndarray
    prompt: list[str]
    answer: object  # option letter or an integer count
    kind: str
    meta: dict = field(default_factory=dict)

    def tokens(self, vocab: Vocabulary | None = None) -> tuple[list[int], list[int]]:
        return encode_example(vocab or build_vocab(), self.prompt, self.answer)

    @property
    def prompt_tokens(self) -> list[int]:
        return self.tokens()[0]

    @property
    def answer_tokens(self) -> list[int]:
        return self.tokens()[1]


def _letters(rng: np.random.Generator, n: int) -> list[str]:
    return [OPTIONS[i] for i in rng.permutation(n)]


# ---------------------------------------------------------------- localization

def gen_localization(rng: np.random.Generator, size: int = 32, area_range=(0.15, 0.5),
                     iou_range=(0.2, 0.5), jitter_tries: int = 300,
                     shapes: tuple[str, ...] = ("rect", "ellipse"), texture: float = 0.2) -> TaskExample:
    """One filled shape; the gold box is its tight bound, the distractor a
    corner-jittered copy with IoU inside ``iou_range``.  ``texture`` is the
    peak level of the background clutter (0 gives a flat background)."""
    total = size * size
    for _ in range(100):
        bw = int(rng.integers(5, size - 3))
        bh = int(rng.integers(5, size - 3))
        if not area_range[0] <= bw * bh / total <= area_range[1]:
            continue
        x0 = int(rng.integers(1, size - bw))
        y0 = int(rng.integers(1, size - bh))
        frame = Box(x0, y0, x0 + bw, y0 + bh)
        shape = shapes[int(rng.integers(len(shapes)))]
        if shape == "ellipse":
            mask = ellipse_mask(size, size, frame)
        else:
            mask = np.zeros((size, size), dtype=bool)
            mask[frame.y0:frame.y1, frame.x0:frame.x1] = True
        gold = tight_box(mask)
        if not area_range[0] <= gold.area / total <= area_range[1]:
            continue
        distractor = None
        span = max(2, int(0.6 * max(gold.x1 - gold.x0, gold.y1 - gold.y0)))
        for _ in range(jitter_tries):
            d = rng.integers(-span, span + 1, size=4)
            try:
                cand = Box(gold.x0 + int(d[0]), gold.y0 + int(d[1]),
                           gold.x1 + int(d[2]), gold.y1 + int(d[3]))
            except ValueError:
                continue
            if cand.x1 - cand.x0 < 3 or cand.y1 - cand.y0 < 3 or not cand.inside(size, size):
                continue
            if iou_range[0] <= iou(gold, cand) <= iou_range[1]:
                distractor = cand
                break
        if distractor is None:
            continue
        scene = smooth_texture(rng, size, size, lo=0.0, hi=texture) if texture else np.zeros((size, size))
        scene[mask] = rng.uniform(0.35, CONTENT_MAX)
        img = layered(scene)
        gold_letter = "A" if rng.random() < 0.5 else "B"
        other = "B" if gold_letter == "A" else "A"
        draw_outline(marker_plane(img, other), distractor, 1.0)
        draw_outline(marker_plane(img, gold_letter), gold, 1.0)
        meta = {"gold_box": gold.as_list(), "distractor_box": distractor.as_list(),
                "boxes": {gold_letter: gold.as_list(), other: distractor.as_list()},
                "shape": shape, "iou": iou(gold, distractor)}
        return TaskExample(img, list(PROMPTS["localization"]), gold_letter, "localization", meta)
    raise GenerationError("localization: no scene satisfied the box constraints")


# ---------------------------------------------------------------- jigsaw

def jigsaw_heights(width: int) -> list[int]:
    """Even canvas heights within the [170, 230]/400 aspect band, scaled to ``width``."""
    lo, hi = 170 / 400 * width, 230 / 400 * width
    return [h for h in range(int(np.ceil(lo)), int(np.floor(hi)) + 1) if h % 2 == 0]


def gen_jigsaw(rng: np.random.Generator, width: int = 32, raster: int = 32,
               min_center_frac: float = 0.25) -> TaskExample:
    """Black out the bottom-right quadrant; choose between the true quadrant
    and a same-size crop that does not overlap it."""
    heights = jigsaw_heights(width)
    for _ in range(50):
        h = int(rng.choice(heights))
        qw, qh = width // 2, h // 2
        canvas = smooth_texture(rng, h, width, n_blobs=8)
        gold = Box(qw, qh, width, h)
        diag = float(np.hypot(width, h))
        gcx, gcy = gold.center
        cands = []
        for y0 in range(0, h - qh + 1):
            for x0 in range(0, width - qw + 1):
                b = Box(x0, y0, x0 + qw, y0 + qh)
                cx, cy = b.center
                if overlaps(b, gold):
                    continue
                if np.hypot(cx - gcx, cy - gcy) < min_center_frac * diag:
                    continue
                cands.append(b)
        if not cands:
            continue
        dist = cands[int(rng.integers(len(cands)))]
        gold_patch = canvas[gold.y0:gold.y1, gold.x0:gold.x1].copy()
        dist_patch = canvas[dist.y0:dist.y1, dist.x0:dist.x1].copy()
        masked = canvas.copy()
        masked[gold.y0:gold.y1, gold.x0:gold.x1] = 0.0
        scene = np.zeros((raster, width))
        scene[:h] = masked
        top = h + 2
        if top + qh > raster:
            raise GenerationError("jigsaw: raster too short for options")
        gold_letter = "A" if rng.random() < 0.5 else "B"
        left, right = (gold_patch, dist_patch) if gold_letter == "A" else (dist_patch, gold_patch)
        scene[top:top + qh, :qw] = left
        scene[top:top + qh, qw:2 * qw] = right
        img = layered(scene)
        meta = {"canvas_height": h, "gold_box": gold.as_list(), "distractor_box": dist.as_list(),
                "option_top": top, "option_width": qw, "option_height": qh,
                "min_center_dist": min_center_frac * diag}
        return TaskExample(img, list(PROMPTS["jigsaw"]), gold_letter, "jigsaw", meta)
    raise GenerationError("jigsaw: distractor constraints unsatisfiable")


# ---------------------------------------------------------------- counting

COUNT_RANGE = (2, 10)
TARGET_LEVEL = 0.55
DISTRACTOR_LEVEL = 0.3


def gen_counting(rng: np.random.Generator, size: int = 32, max_distractors: int = 3) -> TaskExample:
    """``c`` filled 3x3 squares (the targets) plus a few plus-sign distractors."""
    c = int(rng.integers(COUNT_RANGE[0], COUNT_RANGE[1] + 1))
    n_d = int(rng.integers(0, max_distractors + 1))
    radius = 1.5 * np.sqrt(2)  # bounding circle of a 3x3 square / plus sign
    for _ in range(50):
        centers: list[tuple[int, int]] = []
        for _ in range(400):
            if len(centers) == c + n_d:
                break
            x, y = (int(v) for v in rng.integers(2, size - 2, size=2))
            if all(np.hypot(x - u, y - v) >= 2 * radius + 1.5 for u, v in centers):
                centers.append((x, y))
        if len(centers) < c + n_d:
            continue
        scene = smooth_texture(rng, size, size, lo=0.0, hi=0.15)
        for i, (x, y) in enumerate(centers):
            if i < c:
                scene[y - 1:y + 2, x - 1:x + 2] = TARGET_LEVEL
            else:
                scene[y, x - 1:x + 2] = DISTRACTOR_LEVEL
                scene[y - 1:y + 2, x] = DISTRACTOR_LEVEL
        img = layered(scene)
        meta = {"count": c, "targets": [list(p) for p in centers[:c]],
                "distractors": [list(p) for p in centers[c:]],
                "target_level": TARGET_LEVEL, "radius": radius}
        return TaskExample(img, list(PROMPTS["counting"]), c, "counting", meta)
    raise GenerationError("counting: placement failed")


# ---------------------------------------------------------------- reflectance

def srgb_to_linear(v):
    v = np.asarray(v, dtype=float)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v):
    v = np.asarray(v, dtype=float)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * np.power(np.maximum(v, 0), 1 / 2.4) - 0.055)


def voronoi_labels(seeds: np.ndarray, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    d = (xs[None] - seeds[:, 0, None, None]) ** 2 + (ys[None] - seeds[:, 1, None, None]) ** 2
    return d.argmin(axis=0)


def relative_difference(ya: float, yb: float) -> float:
    return abs(ya - yb) / max(ya, yb, 1e-8)


def reflectance_label(ya: float, yb: float, threshold: float = SAME_THRESHOLD) -> str:
    """(A) A is darker, (B) B is darker, (C) about the same."""
    if relative_difference(ya, yb) <= threshold:
        return "C"
    return "A" if ya < yb else "B"


def gen_reflectance(rng: np.random.Generator, size: int = 32, radius: float = 2.0,
                    p_same: float = 0.25, min_sep: float = 8.0) -> TaskExample:
    """Piecewise-constant albedo under smooth shading; label from disk-averaged albedo luminance."""
    want = "C" if rng.random() < p_same else ("A" if rng.random() < 0.5 else "B")
    for _ in range(100):
        n = int(rng.integers(4, 8))
        seeds = rng.uniform(0, size, size=(n, 2))
        labels = voronoi_labels(seeds, size, size)
        pts = []
        for _ in range(200):
            x, y = rng.uniform(radius + 1, size - radius - 1, size=2)
            disk = disk_mask(size, size, x, y, radius)
            regs = np.unique(labels[disk])
            if len(regs) != 1:
                continue
            if pts and (regs[0] == pts[0][2] or np.hypot(x - pts[0][0], y - pts[0][1]) < min_sep):
                continue
            pts.append((float(x), float(y), int(regs[0])))
            if len(pts) == 2:
                break
        if len(pts) < 2:
            continue
        lin = rng.uniform(0.05, 0.9, size=n)
        ra, rb = pts[0][2], pts[1][2]
        if want == "C":
            lin[rb] = lin[ra] * (1 + rng.uniform(-0.07, 0.07))
        else:
            dark, light = (ra, rb) if want == "A" else (rb, ra)
            lin[light] = rng.uniform(0.3, 0.9)
            lin[dark] = lin[light] * rng.uniform(0.3, 0.75)
        lin = np.clip(lin, 0.0, 1.0)
        albedo_srgb = linear_to_srgb(lin)
        field_ = albedo_srgb[labels]
        ya = float(srgb_to_linear(field_[disk_mask(size, size, pts[0][0], pts[0][1], radius)]).mean())
        yb = float(srgb_to_linear(field_[disk_mask(size, size, pts[1][0], pts[1][1], radius)]).mean())
        if max(ya, yb) <= 1e-6:
            continue
        ys, xs = np.mgrid[0:size, 0:size].astype(float)
        g = rng.uniform(-0.5, 0.5, size=2)
        shading = 0.75 + 0.25 * np.tanh(g[0] * (xs - size / 2) / 8 + g[1] * (ys - size / 2) / 8)
        img = layered(CONTENT_MAX * linear_to_srgb(srgb_to_linear(field_) * shading))
        markers = {}
        for letter, (x, y, _) in zip("AB", pts):
            markers[letter] = list(put_marker(marker_plane(img, letter), x, y))
        label = reflectance_label(ya, yb)
        meta = {"points": [[pts[0][0], pts[0][1]], [pts[1][0], pts[1][1]]], "radius": radius,
                "seeds": seeds.tolist(), "albedo_srgb": albedo_srgb.tolist(),
                "Y": [ya, yb], "rel": relative_difference(ya, yb), "markers": markers}
        return TaskExample(img, list(PROMPTS["reflectance"]), label, "reflectance", meta)
    raise GenerationError("reflectance: could not place points")


# ---------------------------------------------------------------- correspondence

def gen_correspondence(rng: np.random.Generator, size: int = 32, H: np.ndarray | None = None,
                       margin: float = 5.0, safe: float = 3.0, min_dist: float = 7.0) -> TaskExample:
    """Source panel | warped target panel, REF on the source, four candidates on the target."""
    for _ in range(50):
        src = smooth_texture(rng, size, size, n_blobs=10)
        Hm = random_homography(rng, size) if H is None else np.asarray(H, dtype=float)
        tgt = warp_image(src, Hm)
        ref = true = None
        for _ in range(100):
            rx, ry = rng.uniform(margin, size - 1 - margin, size=2)
            tx, ty = warp_point(Hm, rx, ry)
            if safe <= tx <= size - 1 - safe and safe <= ty <= size - 1 - safe:
                ref, true = (float(rx), float(ry)), (tx, ty)
                break
        if ref is None:
            continue
        pts = [true]
        for _ in range(500):
            if len(pts) == 4:
                break
            cx, cy = rng.uniform(safe, size - 1 - safe, size=2)
            if all(np.hypot(cx - px, cy - py) >= min_dist for px, py in pts):
                pts.append((float(cx), float(cy)))
        if len(pts) < 4:
            continue
        letters = _letters(rng, 4)
        img = layered(np.concatenate([src, tgt], axis=1))
        put_marker(marker_plane(img, "REF"), ref[0], ref[1])
        cands = {}
        for letter, (px, py) in zip(letters, pts):
            put_marker(marker_plane(img, letter), px + size, py)
            cands[letter] = [px + size, py]
        meta = {"homography": Hm.tolist(), "ref": list(ref), "panel_width": size,
                "candidates": cands, "min_dist": min_dist}
        return TaskExample(img, list(PROMPTS["correspondence"]), letters[0], "correspondence", meta)
    raise GenerationError("correspondence: could not place candidates")


GENERATORS = {
    "counting": gen_counting,
    "localization": gen_localization,
    "jigsaw": gen_jigsaw,
    "reflectance": gen_reflectance,
    "correspondence": gen_correspondence,
}


def generate(kind: str, seed: int, index: int, **kwargs) -> TaskExample:
    """Example ``index`` of ``kind`` under ``seed``; pure in its arguments."""
    if kind not in GENERATORS:
        raise KeyError(f"unknown task kind {kind!r}; expected one of {KINDS}")
    ex = GENERATORS[kind](substream(seed, "datagen:" + kind, index), **kwargs)
    ex.meta.update(seed=int(seed), index=int(index))
    return ex
