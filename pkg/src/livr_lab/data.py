"""Turning task examples into token sequences, layouts, masks and batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .masking import MaskPolicy, build_mask
from .vocab import (ANS, IMG, PAD, LatentConfig, SequenceLayout, Vocabulary,
                    build_layout, span_len)


@dataclass
class TokenSequence:
    """One model input: ids over the full layout plus the source raster."""

    ids: list[int]
    layout: SequenceLayout
    image: np.ndarray
    patch_size: int
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.ids)


def n_patches(image: np.ndarray, patch: int) -> int:
    h, w = image.shape[:2]
    if h % patch or w % patch:
        raise ValueError(f"raster {h}x{w} not divisible by patch {patch}")
    return (h // patch) * (w // patch)


def latent_token_ids(vocab: Vocabulary, K: int) -> list[int]:
    return list(range(vocab.base_size, vocab.base_size + K))


def assemble(vocab: Vocabulary, latent: LatentConfig, image: np.ndarray,
             prompt_ids: Sequence[int], answer_ids: Sequence[int], patch: int,
             image_copies: int = 1, meta: dict | None = None) -> TokenSequence:
    """Lay out ``[IMAGE][PROMPT][LATENT][<ans> ANSWER]``.

    The answer span opens with the ``<ans>`` delimiter, so every prediction
    of an answer token is made from an answer-span query.  ``answer_ids`` may
    be empty (generation prefix).
    """
    n_img = n_patches(image, patch)
    K = latent.K
    layout = build_layout(n_img, len(prompt_ids), K, 1 + len(answer_ids),
                          latent.placement, image_copies)
    ids = [0] * layout.total_len
    img_id = vocab.id(IMG)
    for i in range(*layout.image_span):
        ids[i] = img_id
    ids[layout.prompt_span[0]:layout.prompt_span[1]] = list(prompt_ids)
    ids[layout.latent_span[0]:layout.latent_span[1]] = latent_token_ids(vocab, K)
    ids[layout.answer_span[0]:layout.answer_span[1]] = [vocab.id(ANS)] + list(answer_ids)
    return TokenSequence(ids, layout, image, patch, dict(meta or {}))


def drop_latent_span(seq: TokenSequence) -> TokenSequence:
    lo, hi = seq.layout.latent_span
    ids = seq.ids[:lo] + seq.ids[hi:]
    return TokenSequence(ids, seq.layout.without_latents(), seq.image, seq.patch_size, seq.meta)


def next_token_targets(ids: Sequence[int]) -> np.ndarray:
    """``targets[i]`` is the token that logits at position i should predict."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.full(ids.shape, -1, dtype=np.int64)
    out[:-1] = ids[1:]
    return out


def prediction_positions(layout: SequenceLayout) -> range:
    """Answer-span queries that predict an answer token."""
    lo, hi = layout.answer_span
    return range(lo, max(lo, hi - 1))


def answer_weights(layout: SequenceLayout, total_len: int | None = None) -> np.ndarray:
    """Per-position loss weights: 1/n on the n answer predictions, 0 elsewhere."""
    T = layout.total_len if total_len is None else total_len
    w = np.zeros(T)
    pos = prediction_positions(layout)
    if len(pos) == 0:
        raise ValueError("empty answer span: nothing to score")
    w[pos.start:pos.stop] = 1.0 / len(pos)
    return w


@dataclass
class Batch:
    ids: np.ndarray            # [B, T] int64
    images: list[np.ndarray]   # one raster per sequence
    layouts: list[SequenceLayout]
    allowed: np.ndarray        # [B, T, T] bool
    targets: np.ndarray        # [B, T]
    weights: np.ndarray        # [B, T], each row sums to 1 over the answer
    patch_size: int

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def length(self) -> int:
        return self.ids.shape[1]


def collate(seqs: Sequence[TokenSequence], policy: MaskPolicy, vocab: Vocabulary,
            with_loss: bool = True) -> Batch:
    """Right-pad sequences to a common length and compile their masks.

    ``policy.drop_latents`` removes the latent span from every sequence
    before padding.
    """
    if not seqs:
        raise ValueError("empty batch")
    if policy.drop_latents:
        seqs = [drop_latent_span(s) for s in seqs]
        policy = MaskPolicy(policy.variant, drop_latents=False)
    T = max(s.length for s in seqs)
    B = len(seqs)
    pad_id = vocab.id(PAD)
    ids = np.full((B, T), pad_id, dtype=np.int64)
    allowed = np.zeros((B, T, T), dtype=bool)
    targets = np.full((B, T), -1, dtype=np.int64)
    weights = np.zeros((B, T))
    layouts = []
    for b, s in enumerate(seqs):
        lay = s.layout.padded(T)
        layouts.append(lay)
        ids[b, :s.length] = s.ids
        allowed[b] = build_mask(policy, lay).allowed
        targets[b, :s.length] = next_token_targets(s.ids)
        if with_loss:
            weights[b] = answer_weights(lay, T)
    patch = seqs[0].patch_size
    return Batch(ids, [s.image for s in seqs], layouts, allowed, targets, weights, patch)


def padding_length(layout: SequenceLayout) -> int:
    return span_len(layout.pad_span)
