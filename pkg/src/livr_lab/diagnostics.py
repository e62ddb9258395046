"""Accuracy evaluation and latent-usage probes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import TokenSequence, collate
from .masking import MaskPolicy
from .model import Model, generate_batch
from .taskgen.generators import TaskExample
from .vocab import EOS, SequenceLayout, decode_answer, encode_answer


def build_sequences(model: Model, examples: Sequence[TaskExample], with_answer: bool = True,
                    image_copies: int = 1) -> list[TokenSequence]:
    out = []
    for i, ex in enumerate(examples):
        prompt_ids, answer_ids = ex.tokens(model.vocab)
        meta = {"kind": ex.kind, "answer": ex.answer, "position": i}
        out.append(model.sequence(ex.image, prompt_ids, answer_ids if with_answer else [],
                                  image_copies, meta))
    return out


@dataclass
class EvalReport:
    kind: str
    policy: str
    drop_latents: bool
    n: int
    correct: int
    accuracy: float
    log: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def max_new_tokens(answer) -> int:
    return 1 if isinstance(answer, str) else 3


def is_correct(vocab, emitted: list[int], answer) -> bool:
    """MCQ: the first emitted token is the gold letter.  Counting: the whole
    digit string followed by EOS matches."""
    gold = encode_answer(vocab, answer)
    if isinstance(answer, str):
        return bool(emitted) and emitted[0] == gold[0]
    return emitted == gold


def evaluate(model: Model, examples: Sequence[TaskExample], policy: MaskPolicy | str = "standard",
             drop_latents: bool = False, image_copies: int = 1, batch_size: int = 64) -> EvalReport:
    """Greedy-decode every example and score it."""
    if isinstance(policy, str):
        policy = MaskPolicy(policy)
    policy = MaskPolicy(policy.variant, drop_latents or policy.drop_latents)
    prefixes = build_sequences(model, examples, with_answer=False, image_copies=image_copies)
    vocab = model.vocab
    log = []
    correct = 0
    groups: dict[int, list[int]] = {}
    for i, ex in enumerate(examples):
        groups.setdefault(max_new_tokens(ex.answer), []).append(i)
    emitted: dict[int, list[int]] = {}
    for max_new, idx in groups.items():
        for lo in range(0, len(idx), batch_size):
            chunk = idx[lo:lo + batch_size]
            outs = generate_batch(model, [prefixes[i] for i in chunk], policy, max_new)
            emitted.update(zip(chunk, outs))
    for i, ex in enumerate(examples):
        ok = is_correct(vocab, emitted[i], ex.answer)
        correct += ok
        log.append({"i": i, "gold": ex.answer, "pred": decode_answer(vocab, emitted[i]),
                    "tokens": emitted[i], "correct": bool(ok)})
    kinds = sorted({ex.kind for ex in examples})
    n = len(examples)
    return EvalReport("+".join(kinds), policy.variant, policy.drop_latents, n, correct,
                      correct / n if n else 0.0, log)


# ---------------------------------------------------------------- attention capture

def capture(model: Model, examples: Sequence[TaskExample], policy: MaskPolicy | str = "standard",
            batch_size: int = 32):
    """Teacher-forced forwards with attention capture.

    Yields ``(attentions [layers, H, L, L], layout, hidden [L, d])`` per
    example with padding stripped.
    """
    if isinstance(policy, str):
        policy = MaskPolicy(policy)
    seqs = build_sequences(model, examples)
    for lo in range(0, len(seqs), batch_size):
        chunk = seqs[lo:lo + batch_size]
        batch = collate(chunk, policy, model.vocab)
        with T.no_grad():
            res = model.forward(batch, capture=True)
        att = np.stack(res.attentions, axis=1)  # [B, layers, H, L, L]
        for b, lay in enumerate(batch.layouts):
            n = lay.content_len
            trimmed = SequenceLayout(lay.image_span, lay.prompt_span, lay.latent_span,
                                     lay.answer_span, (n, n), lay.image_copies)
            yield att[b, :, :, :n, :n], trimmed, res.hidden[b, :n]


def answer_latent_mass(att: np.ndarray, layout: SequenceLayout) -> np.ndarray:
    """Attention mass on the latent span for each (layer, head, answer query)."""
    alo, ahi = layout.answer_span
    llo, lhi = layout.latent_span
    return att[:, :, alo:ahi, llo:lhi].sum(axis=-1)


def mean_answer_latent_attention(captured) -> float:
    """Mean over layers, heads, answer positions and examples."""
    vals = [answer_latent_mass(att, lay).ravel() for att, lay in captured]
    return float(np.concatenate(vals).mean())


def answer_to_latent_attention(model: Model, examples: Sequence[TaskExample],
                               policy: MaskPolicy | str = "standard") -> float:
    if model.config.latent.K == 0:
        raise ValueError("answer-to-latent attention needs K >= 1")
    return mean_answer_latent_attention((a, l) for a, l, _ in capture(model, examples, policy))


@dataclass
class AttentionSummary:
    mean_answer_to_latent: float
    per_layer_head: list[list[float]]
    answer_to_image: float


def summarize(captured) -> AttentionSummary:
    captured = list(captured)
    masses = np.stack([answer_latent_mass(a, l).mean(axis=-1) for a, l in captured])
    img = [a[:, :, l.answer_span[0]:l.answer_span[1], l.image_span[0]:l.image_span[1]].sum(-1).ravel()
           for a, l in captured]
    return AttentionSummary(mean_answer_latent_attention(captured),
                            masses.mean(axis=0).tolist(), float(np.concatenate(img).mean()))


def latent_image_attention_maps(model: Model, example: TaskExample,
                                policy: MaskPolicy | str = "standard") -> np.ndarray:
    """Per-latent attention to the (first copy of the) image, averaged over layers
    and heads, shaped ``[K, H/patch, W/patch]``."""
    K = model.config.latent.K
    if K == 0:
        raise ValueError("latent maps need K >= 1")
    att, lay, _ = next(capture(model, [example], policy))
    p = model.config.patch_size
    gh, gw = example.image.shape[0] // p, example.image.shape[1] // p
    n_img = gh * gw
    llo, lhi = lay.latent_span
    ilo = lay.image_span[0]
    maps = att[:, :, llo:lhi, ilo:ilo + n_img].mean(axis=(0, 1))
    return maps.reshape(K, gh, gw)


def box_mass(grid: np.ndarray, box, patch: int) -> float:
    """Attention mass inside a pixel box, weighting each patch by its covered fraction."""
    x0, y0, x1, y1 = box
    gh, gw = grid.shape
    total = 0.0
    for r in range(gh):
        for c in range(gw):
            ox = max(0, min(x1, (c + 1) * patch) - max(x0, c * patch))
            oy = max(0, min(y1, (r + 1) * patch) - max(y0, r * patch))
            total += grid[r, c] * ox * oy / (patch * patch)
    return total


def export_maps(path, model: Model, example: TaskExample) -> None:
    maps = latent_image_attention_maps(model, example)
    np.savez(path, maps=maps, raster=example.image, patch=model.config.patch_size)


# ---------------------------------------------------------------- dumps and exports

def dump_attention(path, captured, query_spans=("answer", "latent")) -> None:
    """JSON lines: one example per line, sparse (layer, head, query, key, weight) entries."""
    with open(path, "w") as fh:
        for n, (att, lay) in enumerate(captured):
            spans = lay.spans()
            entries = []
            for name in query_spans:
                lo, hi = spans[name]
                for l, h, q, k in zip(*np.nonzero(att[:, :, lo:hi, :])):
                    entries.append([int(l), int(h), int(q + lo), int(k), float(att[l, h, q + lo, k])])
            rec = {"example": n, "shape": list(att.shape), "layout": lay.to_dict(), "entries": entries}
            fh.write(json.dumps(rec) + "\n")


def load_attention(path):
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            att = np.zeros(rec["shape"])
            for l, h, q, k, w in rec["entries"]:
                att[l, h, q, k] = w
            d = rec["layout"]
            lay = SequenceLayout(tuple(d["image"]), tuple(d["prompt"]), tuple(d["latent"]),
                                 tuple(d["answer"]), tuple(d["pad"]), d["image_copies"])
            out.append((att, lay))
    return out


def export_hidden_states(path, model: Model, examples_by_task: dict[str, Sequence[TaskExample]],
                         n: int = 50) -> int:
    """Tab-separated rows ``task, example, position, label, h_0 .. h_{d-1}``.

    Labels are ``latent``, ``image`` or ``text`` (prompt and answer).
    Returns the number of rows written.
    """
    d = model.config.d_model
    rows = 0
    with open(path, "w") as fh:
        fh.write("\t".join(["task", "example", "position", "label"] + [f"h{i}" for i in range(d)]) + "\n")
        for task, examples in examples_by_task.items():
            for e, (_, lay, hidden) in enumerate(capture(model, list(examples)[:n])):
                kinds = lay.kinds()
                for pos, kind in enumerate(kinds):
                    label = {"image": "image", "latent": "latent"}.get(kind, "text")
                    vals = "\t".join(repr(float(v)) for v in hidden[pos])
                    fh.write(f"{task}\t{e}\t{pos}\t{label}\t{vals}\n")
                    rows += 1
    return rows
