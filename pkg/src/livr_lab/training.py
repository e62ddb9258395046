"""Answer-only NLL, AdamW with warmup+cosine, and the staged training protocols."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import TokenSequence, collate, prediction_positions
from .masking import MaskPolicy
from .model import Model
from .seeding import substream
from .vocab import SequenceLayout


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------- loss

def answer_nll(logits: T.Tensor, targets, layout: SequenceLayout) -> T.Tensor:
    """Mean NLL over one sequence's answer predictions.

    ``logits`` is ``[L, V]`` and ``targets[i]`` is the id logits[i] should
    predict.  Only answer-span queries that predict an answer token are
    scored; every other position has weight exactly zero.
    """
    pos = prediction_positions(layout)
    if len(pos) == 0:
        raise ValueError("empty answer span")
    w = np.zeros(logits.shape[0])
    w[pos.start:pos.stop] = 1.0 / len(pos)
    return T.cross_entropy(logits, targets, w)


def batch_nll(logits: T.Tensor, targets: np.ndarray, weights: np.ndarray, denom: int) -> T.Tensor:
    """Sum of per-sequence answer NLLs divided by ``denom`` sequences."""
    return T.scale(T.cross_entropy(logits, targets, weights), 1.0 / denom)


# ---------------------------------------------------------------- optimizer

@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 1
    accum_steps: int = 8
    warmup_frac: float = 0.05
    reset_between_stages: bool = True

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.accum_steps

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


class AdamW:
    """Adam with decoupled weight decay (decay applied before the moment update)."""

    def __init__(self, params: dict[str, T.Tensor], betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.reset()

    def reset(self) -> None:
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            p.data *= 1.0 - lr * self.weight_decay
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def lr_at(update: int, total: int, peak: float, warmup_frac: float = 0.05) -> float:
    """Linear warmup over the first ``ceil(warmup_frac * total)`` updates, then cosine to 0."""
    warm = math.ceil(warmup_frac * total)
    if update < warm:
        return peak * update / warm
    progress = (update - warm) / max(1, total - warm)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def updates_per_epoch(n_examples: int, effective_batch: int) -> int:
    return math.ceil(n_examples / effective_batch)


# ---------------------------------------------------------------- records

@dataclass
class EpochRecord:
    epoch: int
    stage: int
    policy: str
    train_loss: float
    val_acc: float | None
    lr_last: float
    updates: int


@dataclass
class RunRecord:
    method: str
    epochs: list[EpochRecord] = field(default_factory=list)
    selection: str = "best_validation"
    selected_epoch: int | None = None
    selected_val_acc: float | None = None
    config_hash: str = ""
    checkpoint_path: str | None = None
    wall_clock: float = 0.0  # kept out of the serialized record so reruns compare bitwise

    def to_lines(self) -> list[str]:
        lines = [json.dumps({"type": "epoch", **asdict(e)}, sort_keys=True) for e in self.epochs]
        summary = {"type": "summary", "method": self.method, "selection": self.selection,
                   "selected_epoch": self.selected_epoch, "selected_val_acc": self.selected_val_acc,
                   "config_hash": self.config_hash, "checkpoint": self.checkpoint_path}
        lines.append(json.dumps(summary, sort_keys=True))
        return lines

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def read(cls, path) -> "RunRecord":
        rec = cls(method="")
        with open(path) as fh:
            for line in fh:
                d = json.loads(line)
                kind = d.pop("type")
                if kind == "epoch":
                    rec.epochs.append(EpochRecord(**d))
                else:
                    rec.method = d["method"]
                    rec.selection = d["selection"]
                    rec.selected_epoch = d["selected_epoch"]
                    rec.selected_val_acc = d["selected_val_acc"]
                    rec.config_hash = d["config_hash"]
                    rec.checkpoint_path = d["checkpoint"]
        return rec


# ---------------------------------------------------------------- stages

@dataclass(frozen=True)
class StageSchedule:
    stage1_epochs: int = 4
    stage2_epochs: int = 6
    stage1_variant: str = "bottleneck"

    @property
    def total_epochs(self) -> int:
        return self.stage1_epochs + self.stage2_epochs

    def stages(self) -> list[tuple[int, MaskPolicy, int]]:
        """(stage id, training policy, epochs); empty stages are skipped."""
        out = []
        if self.stage1_epochs:
            out.append((1, MaskPolicy(self.stage1_variant), self.stage1_epochs))
        if self.stage2_epochs:
            out.append((2, MaskPolicy("standard"), self.stage2_epochs))
        return out


SINGLE_TASK = StageSchedule(4, 6)
MULTI_TASK = StageSchedule(2, 3)
SCHEDULE_GRID = [(0, 10), (2, 8), (4, 6), (6, 4), (8, 2)]


class Trainer:
    """Runs one or more stages on one model; owns the optimizer and checkpoint selection."""

    def __init__(self, model: Model, train: Sequence[TokenSequence], opt: OptimizerConfig, seed: int,
                 val_fn: Callable[[Model], float] | None = None, selection: str = "best_validation",
                 log: Callable[[str], None] | None = None):
        if not train:
            raise TrainingError("empty training set")
        self.model = model
        self.train = list(train)
        self.opt = opt
        self.seed = seed
        self.val_fn = val_fn
        self.selection = selection
        self.log = log or (lambda msg: None)
        self.params = model.trainable_params()
        self.optimizer = AdamW(self.params, opt.betas, opt.eps, opt.weight_decay)
        self.epoch = 0
        self.record_epochs: list[EpochRecord] = []
        self._best: tuple[float, int, dict] | None = None

    def _snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def run_stage(self, stage: int, policy: MaskPolicy, epochs: int) -> list[EpochRecord]:
        if epochs == 0:
            return []
        if self.opt.reset_between_stages:
            self.optimizer.reset()
        n = len(self.train)
        eff = self.opt.effective_batch
        per_epoch = updates_per_epoch(n, eff)
        total = epochs * per_epoch
        dropout_rng = substream(self.seed, "dropout", stage)
        vocab = self.model.vocab
        update = 0
        out = []
        for _ in range(epochs):
            order = substream(self.seed, "shuffle", self.epoch).permutation(n)
            losses = []
            lr = 0.0
            for u in range(per_epoch):
                idx = order[u * eff:(u + 1) * eff]
                grads = {k: np.zeros_like(p.data) for k, p in self.params.items()}
                step_loss = 0.0
                for mb in range(0, len(idx), self.opt.batch_size):
                    seqs = [self.train[i] for i in idx[mb:mb + self.opt.batch_size]]
                    batch = collate(seqs, policy, vocab)
                    res = self.model.forward(batch, rng=dropout_rng)
                    loss = batch_nll(res.logits, batch.targets, batch.weights, len(idx))
                    g = T.backward(loss, self.params)
                    for k in grads:
                        grads[k] += g[k]
                    for p in self.params.values():
                        p.zero_grad()
                    step_loss += loss.item()
                if not math.isfinite(step_loss):
                    raise TrainingError(f"non-finite loss at stage {stage} epoch {self.epoch}")
                lr = lr_at(update, total, self.opt.lr, self.opt.warmup_frac)
                self.optimizer.step(grads, lr)
                update += 1
                losses.append(step_loss)
            val = self.val_fn(self.model) if self.val_fn is not None else None
            rec = EpochRecord(self.epoch, stage, policy.variant, float(np.mean(losses)), val, lr, update)
            self.log(f"stage {stage} epoch {self.epoch}: loss {rec.train_loss:.4f} val {val}")
            out.append(rec)
            self.record_epochs.append(rec)
            self._consider(rec)
            self.epoch += 1
        return out

    def _consider(self, rec: EpochRecord) -> None:
        if self.selection == "final" or rec.val_acc is None:
            self._best = (rec.val_acc if rec.val_acc is not None else 0.0, rec.epoch, None)
            return
        if self._best is None or rec.val_acc > self._best[0]:
            self._best = (rec.val_acc, rec.epoch, self._snapshot())

    def finish(self, method: str) -> RunRecord:
        """Restore the selected checkpoint and return the run record."""
        rec = RunRecord(method, list(self.record_epochs), self.selection)
        if self._best is not None:
            acc, epoch, snap = self._best
            if snap is not None:
                for k, v in snap.items():
                    self.params[k].data = v.copy()
            rec.selected_epoch = epoch
            rec.selected_val_acc = self.record_epochs[-1].val_acc if snap is None else acc
        return rec


def train_stage(model: Model, train: Sequence[TokenSequence], policy: MaskPolicy, epochs: int,
                opt: OptimizerConfig, seed: int, stage: int = 1) -> list[EpochRecord]:
    """Train one stage with its own warmup+cosine schedule."""
    return Trainer(model, train, opt, seed).run_stage(stage, policy, epochs)


def run_livr(model: Model, train: Sequence[TokenSequence], schedule: StageSchedule,
             opt: OptimizerConfig, seed: int, val_fn=None, selection: str = "best_validation",
             log=None, method: str = "livr") -> RunRecord:
    """Stage 1 under the bottleneck mask, then Stage 2 under the standard mask."""
    t0 = time.perf_counter()
    trainer = Trainer(model, train, opt, seed, val_fn, selection, log)
    for stage, policy, epochs in schedule.stages():
        trainer.run_stage(stage, policy, epochs)
    rec = trainer.finish(method)
    rec.wall_clock = time.perf_counter() - t0
    return rec


BASELINES = ("direct_sft", "latents_only", "mask_only", "image_twice")


def baseline_schedule(kind: str, total_epochs: int = 10, livr: StageSchedule = SINGLE_TASK) -> StageSchedule:
    if kind in ("direct_sft", "latents_only", "image_twice"):
        return StageSchedule(0, total_epochs)
    if kind == "mask_only":
        # prompt tokens act as the only bottleneck: answer->image blocked, no latents
        return StageSchedule(livr.stage1_epochs, livr.stage2_epochs, "ans_to_vis_only")
    raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


def check_baseline(kind: str, model: Model) -> None:
    K = model.config.latent.K
    if kind == "latents_only" and K < 1:
        raise ValueError("latents_only needs K >= 1")
    if kind in ("direct_sft", "mask_only", "image_twice") and K != 0:
        raise ValueError(f"{kind} needs K = 0")
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")


def run_baseline(kind: str, model: Model, train: Sequence[TokenSequence], opt: OptimizerConfig,
                 seed: int, total_epochs: int = 10, val_fn=None, selection: str = "best_validation",
                 log=None, livr: StageSchedule = SINGLE_TASK) -> RunRecord:
    check_baseline(kind, model)
    if kind == "image_twice" and any(s.layout.image_copies != 2 for s in train):
        raise ValueError("image_twice needs sequences built with image_copies=2")
    return run_livr(model, train, baseline_schedule(kind, total_epochs, livr), opt, seed,
                    val_fn, selection, log, method=kind)
