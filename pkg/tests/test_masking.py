from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from livr_lab.masking import (VARIANTS, MaskPolicy, assert_policy, build_mask,
                              expected_allowed, load_mask_dump, reachability, reachable_dfs)
from livr_lab.vocab import build_layout, span_range

GOLDEN = Path(__file__).parent / "golden"

layouts = st.builds(
    lambda n_img, n_prompt, K, n_ans, placement, extra: build_layout(
        n_img, n_prompt, K, n_ans, placement).padded(n_img + n_prompt + K + n_ans + extra),
    st.integers(1, 5), st.integers(1, 4), st.integers(0, 4), st.integers(1, 3),
    st.sampled_from(["after_prompt", "before_prompt"]), st.integers(0, 3))
policies = st.builds(MaskPolicy, st.sampled_from(VARIANTS), st.booleans())


def small_layout():
    return build_layout(2, 2, 2, 2).padded(9)


@pytest.mark.parametrize("name,policy", [(v, MaskPolicy(v)) for v in VARIANTS]
                         + [("bottleneck_drop", MaskPolicy("bottleneck", True))])
def test_golden_masks(name, policy):
    text = (GOLDEN / f"mask_{name}.txt").read_text()
    mask = build_mask(policy, small_layout())
    assert mask.dump() == text
    np.testing.assert_array_equal(load_mask_dump(text), mask.allowed)


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        MaskPolicy("sideways")


def test_pad_rows_attend_only_to_themselves():
    lay = small_layout()
    m = build_mask(MaskPolicy("bottleneck"), lay).allowed
    assert m[8].tolist() == [False] * 8 + [True]
    assert not m[:8, 8].any()


@settings(max_examples=300, deadline=None)
@given(layouts, policies)
def test_compiled_mask_matches_rule_interpreter(lay, policy):
    mask = build_mask(policy, lay)
    assert assert_policy(mask, policy, lay).passed
    assert mask.allowed.any(axis=1).all()


def test_assert_policy_reports_mismatch():
    lay = small_layout()
    pol = MaskPolicy("bottleneck")
    bad = expected_allowed(pol, lay).copy()
    bad[6, 0] = True
    rep = assert_policy(bad, pol, lay)
    assert not rep and rep.mismatches == [(6, 0)] and "differs" in str(rep)


@settings(max_examples=150, deadline=None)
@given(layouts, policies)
def test_reachability_matches_dfs(lay, policy):
    mask = build_mask(policy, lay)
    R = reachability(mask)
    for s in range(R.shape[0]):
        assert set(np.flatnonzero(R[s])) == reachable_dfs(mask, s)


@settings(max_examples=150, deadline=None)
@given(layouts)
def test_bottleneck_routes_image_only_through_latents(lay):
    K = lay.latent_span[1] - lay.latent_span[0]
    mask = build_mask(MaskPolicy("bottleneck"), lay)
    img = list(span_range(lay.image_span))
    ans = list(span_range(lay.answer_span))
    # with latents removed from the graph nothing flows from image to answer
    R_cut = reachability(mask, exclude_span=lay.latent_span)
    assert not R_cut[np.ix_(img, ans)].any()
    if K > 0 and lay.latent_span[0] >= lay.image_span[1]:
        assert reachability(mask)[np.ix_(img, ans)].all()
    dropped = build_mask(MaskPolicy("bottleneck", True), lay)
    d = dropped.layout
    R_drop = reachability(dropped)
    d_img = list(span_range(d.image_span))
    assert not R_drop[np.ix_(d_img, list(span_range(d.answer_span)))].any()
    assert not R_drop[np.ix_(d_img, list(span_range(d.prompt_span)))].any()


@settings(max_examples=100, deadline=None)
@given(layouts)
def test_other_variants_leave_an_image_path(lay):
    img = list(span_range(lay.image_span))
    ans = list(span_range(lay.answer_span))
    for v in ("standard", "ans_to_vis_only"):
        R = reachability(build_mask(MaskPolicy(v, True), lay))
        d = build_mask(MaskPolicy(v, True), lay).layout
        assert R[np.ix_(list(span_range(d.image_span)), list(span_range(d.answer_span)))].all()
    assert len(img) and len(ans)


def test_latent_prompt_block_cuts_prompt_to_latent_edge():
    lay = build_layout(2, 2, 2, 1)
    m = build_mask(MaskPolicy("bottleneck_latent_prompt_block"), lay).allowed
    assert not m[np.ix_(range(4, 6), range(2, 4))].any()
    assert m[np.ix_(range(4, 6), range(0, 2))].all()
