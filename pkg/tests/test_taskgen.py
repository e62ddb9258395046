from collections import Counter

import numpy as np
import pytest

from livr_lab.taskgen.dataset import (SplitReader, generate_split, read_split, split_indices,
                                      verify_all, write_split)
from livr_lab.taskgen.generators import (COUNT_RANGE, KINDS, GenerationError, gen_correspondence,
                                         generate, jigsaw_heights, reflectance_label,
                                         relative_difference)
from livr_lab.taskgen.geometry import Box, iou, random_homography, warp_point
from livr_lab.taskgen.oracles import flood_fill_count, verify
from livr_lab.taskgen.render import MARKER_CHANNEL, N_CHANNELS, SCENE
from livr_lab.vocab import build_vocab, decode_answer


def test_iou_examples():
    a = Box(10, 10, 30, 30)
    assert iou(a, a) == 1.0
    assert iou(a, Box(40, 40, 50, 50)) == 0.0
    assert iou(a, Box(16, 16, 36, 36)) == pytest.approx(196 / 604, abs=1e-15)
    assert iou(a, Box(16, 16, 36, 36)) == iou(Box(16, 16, 36, 36), a)


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        Box(3, 3, 3, 5)


def test_reflectance_rule_examples():
    assert relative_difference(0.6, 0.6) == 0.0 and reflectance_label(0.6, 0.6) == "C"
    assert relative_difference(0.8, 0.4) == pytest.approx(0.5)
    assert reflectance_label(0.8, 0.4) == "B"
    assert relative_difference(0.5, 0.46) == pytest.approx(0.08)
    assert reflectance_label(0.5, 0.46) == "C"
    assert reflectance_label(0.2, 0.5) == "A"
    assert reflectance_label(0.0, 0.0) == "C"


@pytest.mark.parametrize("kind", KINDS)
def test_generation_is_deterministic(kind):
    a, b = generate(kind, 7, 3), generate(kind, 7, 3)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.prompt == b.prompt and a.answer == b.answer and a.meta == b.meta
    assert generate(kind, 7, 4).image.tobytes() != a.image.tobytes()


@pytest.mark.parametrize("kind", KINDS)
def test_oracles_accept_generated_examples(kind):
    exs = generate_split(kind, 11, range(150))
    n_ok, failures = verify_all(exs)
    assert failures == [] and n_ok == 150
    vocab = build_vocab()
    for ex in exs[:20]:
        assert ex.image.shape[2] == N_CHANNELS
        assert ex.image.min() >= 0.0 and ex.image.max() <= 1.0
        assert decode_answer(vocab, ex.answer_tokens) == ex.answer
        vocab.ids(ex.prompt)


@pytest.mark.parametrize("kind", KINDS)
def test_oracles_reject_wrong_answers(kind):
    ex = generate(kind, 2, 0)
    if kind == "counting":
        ex.answer = ex.answer + 1
    else:
        letters = {"localization": "AB", "jigsaw": "AB", "reflectance": "ABC",
                   "correspondence": "ABCD"}[kind]
        ex.answer = next(c for c in letters if c != ex.answer)
    ok, why = verify(ex)
    assert not ok and why


def test_localization_band_area_and_balance():
    exs = generate_split("localization", 0, range(1000))
    answers = Counter(ex.answer for ex in exs)
    assert abs(answers["A"] / 1000 - 0.5) <= 0.05
    for ex in exs:
        g, d = Box.from_list(ex.meta["gold_box"]), Box.from_list(ex.meta["distractor_box"])
        assert 0.2 <= iou(g, d) <= 0.5
        assert 0.15 <= g.area / (32 * 32) <= 0.5


def test_jigsaw_construction():
    assert all(13.6 <= h <= 18.4 for h in jigsaw_heights(32))
    for i in range(50):
        ex = generate("jigsaw", 0, i)
        x0, y0, x1, y1 = ex.meta["gold_box"]
        assert ex.image[y0:y1, x0:x1, SCENE].max() == 0.0
        assert iou(Box(x0, y0, x1, y1), Box.from_list(ex.meta["distractor_box"])) == 0.0
        assert (x1, y1) == (32, ex.meta["canvas_height"])


def test_counting_uniform_and_separated():
    counts = Counter(generate("counting", 5, i).answer for i in range(9000))
    assert set(counts) == set(range(COUNT_RANGE[0], COUNT_RANGE[1] + 1))
    for c in counts.values():
        assert 900 <= c <= 1100
    ex = generate("counting", 5, 0)
    pts = ex.meta["targets"] + ex.meta["distractors"]
    r = ex.meta["radius"]
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            assert np.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]) >= 2 * r


def test_flood_fill_counts_components():
    m = np.zeros((6, 6), bool)
    m[0, 0] = m[0, 1] = True
    m[2, 2] = True
    m[3, 3] = True  # diagonal neighbour is a separate component
    m[5, 0:6] = True
    assert flood_fill_count(m) == 4


def test_reflectance_roughly_one_quarter_same():
    exs = generate_split("reflectance", 3, range(400))
    frac = sum(ex.answer == "C" for ex in exs) / len(exs)
    assert 0.18 <= frac <= 0.32
    for ex in exs[:50]:
        assert ex.answer == reflectance_label(*ex.meta["Y"])


def test_correspondence_identity_and_translation():
    rng = np.random.default_rng(0)
    ex = gen_correspondence(rng, H=np.eye(3))
    rx, ry = ex.meta["ref"]
    assert ex.meta["candidates"][ex.answer] == pytest.approx([rx + 32, ry])
    H = np.array([[1.0, 0, 2.0], [0, 1.0, -3.0], [0, 0, 1.0]])
    ex = gen_correspondence(np.random.default_rng(1), H=H)
    rx, ry = ex.meta["ref"]
    assert ex.meta["candidates"][ex.answer] == pytest.approx([rx + 2 + 32, ry - 3])
    assert verify(ex)[0]
    assert ex.image[..., MARKER_CHANNEL["REF"]].sum() == 1.0


def test_correspondence_candidates_spread():
    for i in range(200):
        ex = generate("correspondence", 9, i)
        pts = list(ex.meta["candidates"].values())
        d = [np.hypot(p[0] - q[0], p[1] - q[1]) for k, p in enumerate(pts) for q in pts[k + 1:]]
        assert min(d) >= ex.meta["min_dist"]


def test_homography_maps_points():
    H = random_homography(np.random.default_rng(2), 32)
    x, y = warp_point(H, 4.0, 5.0)
    u, v, w = H @ [4.0, 5.0, 1.0]
    assert (x, y) == pytest.approx((u / w, v / w))


def test_unknown_kind_and_generation_error():
    with pytest.raises(KeyError):
        generate("mazes", 0, 0)
    assert issubclass(GenerationError, RuntimeError)


def test_splits_are_disjoint_and_round_trip(tmp_path):
    idx = split_indices(5, 3, 2)
    assert set(idx["train"]).isdisjoint(idx["val"]) and set(idx["val"]).isdisjoint(idx["test"])
    exs = generate_split("reflectance", 0, idx["val"])
    write_split(exs, tmp_path, "val")
    back = read_split(tmp_path, "val")
    assert len(back) == 3
    for a, b in zip(exs, back):
        assert a.image.tobytes() == b.image.tobytes() and a.answer == b.answer
        assert verify(b)[0]
    assert len(SplitReader(tmp_path, "val")) == 3
    with pytest.raises(FileNotFoundError):
        SplitReader(tmp_path, "train")
