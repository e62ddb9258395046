"""Desk-scale comparisons between training schedules.

A study trains the same toy model under several ``(stage1, stage2)`` epoch
splits and a few seeds, then measures each run four ways: standard-mask
accuracy, bottleneck-mask accuracy, both again with the latent span removed,
and the mean answer-to-latent attention.  Data is generated once per study
(``data_seed``) so the seeds only vary initialisation, shuffling and dropout.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diagnostics import answer_to_latent_attention, build_sequences, evaluate
from .model import LoraConfig, ModelConfig, init_model
from .taskgen.dataset import generate_split, split_indices
from .training import OptimizerConfig, StageSchedule, run_livr
from .vocab import LatentConfig

LIVR_SPLIT = (4, 6)
LATENTS_ONLY_SPLIT = (0, 10)
LATE_SPLIT = (8, 2)


def toy_model_config(K: int = 4, d_model: int = 64, rank: int = 4, n_layers: int = 2,
                     image_size=(32, 32, 6), patch_size: int = 8,
                     full_finetune: bool = False) -> ModelConfig:
    return ModelConfig(image_size=tuple(image_size), d_model=d_model, n_layers=n_layers,
                       patch_size=patch_size, full_finetune=full_finetune, latent=LatentConfig(K=K),
                       lora=LoraConfig(rank=rank, alpha=2 * rank))


def toy_optimizer(lr: float = 3e-3) -> OptimizerConfig:
    # eight sequences per update, taken as one micro-batch
    return OptimizerConfig(lr=lr, batch_size=8, accum_steps=1)


@dataclass
class StudyData:
    kind: str
    train: list
    val: list
    test: list

    @classmethod
    def generate(cls, kind: str, seed: int = 0, n_train: int = 1000, n_val: int = 250,
                 n_test: int = 500) -> "StudyData":
        idx = split_indices(n_train, n_val, n_test)
        return cls(kind, *(generate_split(kind, seed, idx[s]) for s in ("train", "val", "test")))


@dataclass
class ArmResult:
    split: tuple[int, int]
    seed: int
    standard: float
    bottleneck: float
    standard_drop: float
    bottleneck_drop: float
    answer_to_latent: float
    selected_epoch: int
    seconds: float


def run_arm(data: StudyData, split: tuple[int, int], seed: int, model_config: ModelConfig,
            opt: OptimizerConfig, attention_examples: int = 100, log=None) -> ArmResult:
    """Train one model on ``data.train`` and measure it on ``data.test``."""
    t0 = time.perf_counter()
    model = init_model(model_config, seed)
    seqs = build_sequences(model, data.train)
    rec = run_livr(model, seqs, StageSchedule(*split), opt, seed,
                   val_fn=lambda m: evaluate(m, data.val).accuracy, log=log)
    acc = {
        (pol, drop): evaluate(model, data.test, pol, drop).accuracy
        for pol in ("standard", "bottleneck") for drop in (False, True)
    }
    attn = answer_to_latent_attention(model, data.test[:attention_examples])
    return ArmResult(tuple(split), seed, acc["standard", False], acc["bottleneck", False],
                     acc["standard", True], acc["bottleneck", True], attn,
                     int(rec.selected_epoch), time.perf_counter() - t0)


METRICS = ("standard", "bottleneck", "standard_drop", "bottleneck_drop", "answer_to_latent")


@dataclass
class StudyResult:
    kind: str
    arms: list[ArmResult] = field(default_factory=list)

    def mean(self, split, metric: str) -> float:
        vals = [getattr(a, metric) for a in self.arms if a.split == tuple(split)]
        if not vals:
            raise KeyError(f"no runs for split {split}")
        return float(np.mean(vals))

    def table(self) -> dict[str, dict[str, float]]:
        splits = sorted({a.split for a in self.arms})
        return {f"{s[0]},{s[1]}": {m: self.mean(s, m) for m in METRICS} for s in splits}

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "arms": [asdict(a) for a in self.arms],
                           "means": self.table()}, sort_keys=True, indent=1)


def run_study(data: StudyData, splits: Sequence[tuple[int, int]], seeds: Sequence[int],
              model_config: ModelConfig | None = None, opt: OptimizerConfig | None = None,
              progress: Callable[[ArmResult], None] | None = None) -> StudyResult:
    model_config = model_config or toy_model_config()
    opt = opt or toy_optimizer()
    out = StudyResult(data.kind)
    for split in splits:
        for seed in seeds:
            arm = run_arm(data, split, seed, model_config, opt)
            out.arms.append(arm)
            if progress:
                progress(arm)
    return out


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def directional_checks(res: StudyResult, chance: float = 0.5) -> list[Check]:
    """The LIVR-versus-latents-only comparisons, on seed means."""
    L, O = LIVR_SPLIT, LATENTS_ONLY_SPLIT
    m = res.mean
    ls, os_ = m(L, "standard"), m(O, "standard")
    lb, ob = m(L, "bottleneck"), m(O, "bottleneck")
    l_drop = ls - m(L, "standard_drop")
    o_drop = abs(os_ - m(O, "standard_drop"))
    la, oa = m(L, "answer_to_latent"), m(O, "answer_to_latent")
    return [
        Check("standard accuracy: LIVR >= latents-only - 1pt and higher on mean",
              ls >= os_ - 0.01 and ls > os_, f"LIVR {ls:.4f} vs latents-only {os_:.4f}"),
        Check("bottleneck accuracy: LIVR leads by >= 10pt, latents-only within 5pt of chance",
              lb - ob >= 0.10 and abs(ob - chance) <= 0.05,
              f"LIVR {lb:.4f} vs latents-only {ob:.4f} (chance {chance})"),
        Check("dropping latents: LIVR falls >= 3pt, latents-only moves <= 1pt",
              l_drop >= 0.03 and o_drop <= 0.01,
              f"LIVR drop {l_drop:.4f}, latents-only change {o_drop:.4f}"),
        Check("answer-to-latent attention: LIVR >= 1.5x latents-only",
              la >= 1.5 * oa, f"LIVR {la:.4f} vs latents-only {oa:.4f} (ratio {la / max(oa, 1e-12):.2f})"),
    ]


def schedule_check(res: StudyResult) -> Check:
    s = {sp: res.mean(sp, "standard") for sp in (LIVR_SPLIT, LATENTS_ONLY_SPLIT, LATE_SPLIT)}
    ok = s[LIVR_SPLIT] >= s[LATENTS_ONLY_SPLIT] and s[LIVR_SPLIT] >= s[LATE_SPLIT]
    detail = ", ".join(f"({a},{b}) {v:.4f}" for (a, b), v in s.items())
    return Check("schedule order: (4,6) >= (0,10) and (8,2)", ok, detail)
