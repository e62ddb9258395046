"""Attention-mask policies and information-flow checks.

A mask is a boolean ``allowed[query, key]`` matrix shared by every layer and
head.  ``build_mask`` composes vectorized block rules; ``expected_allowed``
re-derives the same matrix one entry at a time from the policy's rule table
and is what ``assert_policy`` compares against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vocab import SequenceLayout

VARIANTS = ("standard", "bottleneck", "ans_to_vis_only", "bottleneck_latent_prompt_block")

# (query kind, key kind) pairs removed from the causal mask by each variant
BLOCKED_PAIRS: dict[str, frozenset[tuple[str, str]]] = {
    "standard": frozenset(),
    "bottleneck": frozenset({("answer", "image"), ("prompt", "image")}),
    "ans_to_vis_only": frozenset({("answer", "image")}),
    "bottleneck_latent_prompt_block": frozenset(
        {("answer", "image"), ("prompt", "image"), ("latent", "prompt")}),
}


class MaskError(ValueError):
    pass


@dataclass(frozen=True)
class MaskPolicy:
    variant: str = "standard"
    drop_latents: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown mask variant {self.variant!r}; expected one of {VARIANTS}")


STANDARD = MaskPolicy("standard")
BOTTLENECK = MaskPolicy("bottleneck")


@dataclass(frozen=True)
class AttentionMask:
    allowed: np.ndarray
    layout: SequenceLayout

    @property
    def shape(self) -> tuple[int, int]:
        return self.allowed.shape

    def dump(self) -> str:
        return dump_mask(self)


def effective_layout(policy: MaskPolicy, layout: SequenceLayout) -> SequenceLayout:
    return layout.without_latents() if policy.drop_latents else layout


def _kind_vector(layout: SequenceLayout) -> np.ndarray:
    codes = {"image": 0, "prompt": 1, "latent": 2, "answer": 3, "pad": 4}
    return np.array([codes[k] for k in layout.kinds()], dtype=np.int8)


_CODE = {"image": 0, "prompt": 1, "latent": 2, "answer": 3, "pad": 4}


def build_mask(policy: MaskPolicy, layout: SequenceLayout) -> AttentionMask:
    """Compile ``policy`` over ``layout`` (after dropping latents if requested)."""
    layout = effective_layout(policy, layout)
    T = layout.total_len
    kinds = _kind_vector(layout)
    allowed = np.tril(np.ones((T, T), dtype=bool))
    for q, k in BLOCKED_PAIRS[policy.variant]:
        allowed &= ~np.outer(kinds == _CODE[q], kinds == _CODE[k])
    is_pad = kinds == _CODE["pad"]
    allowed[:, is_pad] = False
    allowed[is_pad, :] = False
    idx = np.flatnonzero(is_pad)
    allowed[idx, idx] = True  # pad rows keep only themselves so softmax stays defined
    empty = ~allowed.any(axis=1)
    if empty.any():
        raise MaskError(f"fully blocked attention row(s) {np.flatnonzero(empty)[:10].tolist()}")
    return AttentionMask(allowed, layout)


def expected_allowed(policy: MaskPolicy, layout: SequenceLayout) -> np.ndarray:
    """Entry-by-entry rule interpreter; independent of ``build_mask``."""
    layout = effective_layout(policy, layout)
    kinds = layout.kinds()
    T = len(kinds)
    out = np.zeros((T, T), dtype=bool)
    rules = BLOCKED_PAIRS[policy.variant]
    for i in range(T):
        for j in range(T):
            if kinds[i] == "pad":
                out[i, j] = i == j
                continue
            if j > i or kinds[j] == "pad":
                continue
            out[i, j] = (kinds[i], kinds[j]) not in rules
    return out


@dataclass
class PolicyReport:
    passed: bool
    mismatches: list[tuple[int, int]]

    def __bool__(self) -> bool:
        return self.passed

    def __str__(self) -> str:
        if self.passed:
            return "mask matches policy"
        return f"mask differs from policy at {self.mismatches}"


def assert_policy(mask: AttentionMask | np.ndarray, policy: MaskPolicy,
                  layout: SequenceLayout) -> PolicyReport:
    allowed = mask.allowed if isinstance(mask, AttentionMask) else np.asarray(mask, dtype=bool)
    want = expected_allowed(policy, layout)
    if allowed.shape != want.shape:
        return PolicyReport(False, [(-1, -1)])
    diff = np.argwhere(allowed != want)
    pairs = [(int(i), int(j)) for i, j in diff[:10]]
    return PolicyReport(len(diff) == 0, pairs)


def reachability(mask: AttentionMask, exclude_span: tuple[int, int] | None = None) -> np.ndarray:
    """Multi-layer information flow: ``out[s, t]`` iff position s can influence t.

    Edges run key -> query for every allowed pair, plus self-loops (the
    residual stream).  Nodes in ``exclude_span`` are deleted before the
    closure is taken.
    """
    adj = mask.allowed.T.copy()  # adj[key, query]
    T = adj.shape[0]
    np.fill_diagonal(adj, True)
    if exclude_span is not None:
        lo, hi = exclude_span
        adj[lo:hi, :] = False
        adj[:, lo:hi] = False
    reach = adj.astype(np.int64)
    # repeated squaring of the boolean adjacency
    steps = 1
    while steps < T:
        nxt = ((reach @ reach) > 0).astype(np.int64)
        if np.array_equal(nxt, reach):
            break
        reach = nxt
        steps *= 2
    out = reach > 0
    if exclude_span is not None:
        lo, hi = exclude_span
        out[lo:hi, :] = False
        out[:, lo:hi] = False
    return out


def reachable_dfs(mask: AttentionMask, source: int, exclude_span: tuple[int, int] | None = None) -> set[int]:
    """Positions reachable from ``source`` by explicit DFS; oracle for ``reachability``."""
    allowed = mask.allowed
    T = allowed.shape[0]
    excluded = set(range(*exclude_span)) if exclude_span else set()
    if source in excluded:
        return set()
    seen = {source}
    todo = [source]
    while todo:
        k = todo.pop()
        for q in range(T):
            if q not in seen and q not in excluded and allowed[q, k]:
                seen.add(q)
                todo.append(q)
    return seen


def dump_mask(mask: AttentionMask) -> str:
    """0/1 grid with a span-kind letter per row and column."""
    kinds = mask.layout.kinds()
    letter = {"image": "I", "prompt": "P", "latent": "L", "answer": "A", "pad": "_"}
    header = "  " + "".join(letter[k] for k in kinds)
    rows = [header]
    for i, k in enumerate(kinds):
        rows.append(letter[k] + " " + "".join("1" if v else "0" for v in mask.allowed[i]))
    return "\n".join(rows) + "\n"


def load_mask_dump(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    return np.array([[c == "1" for c in ln[2:]] for ln in lines[1:]], dtype=bool)
