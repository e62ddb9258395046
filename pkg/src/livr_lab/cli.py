"""Command-line entry point: ``livr {gen,train,eval,ablate,inspect-attn,export-hidden}``.

Exit codes: 0 success, 2 usage or config errors, 3 data errors (missing or
unverifiable datasets, vocabulary mismatch), 4 numeric failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import diagnostics as D
from .checkpoint import (CheckpointError, VocabMismatchError, load_checkpoint, read_checkpoint,
                         save_checkpoint)
from .config import ConfigError, RunConfig, apply_overrides, load_config, resolve
from .masking import VARIANTS, MaskPolicy
from .model import init_model
from .taskgen.dataset import generate_split, read_split, split_indices, verify_all, write_split
from .taskgen.generators import KINDS, GenerationError
from .tensor import NonFiniteError
from .training import SCHEDULE_GRID, TrainingError, run_baseline, run_livr, StageSchedule
from .vocab import EMBEDDING_MODES, PLACEMENTS, VocabError, build_vocab

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

CHECKPOINT_NAME = "checkpoint.ckpt"
RECORD_NAME = "run_record.jsonl"

ABLATION_GRIDS = {
    "schedule": ("schedule", [list(s) for s in SCHEDULE_GRID]),
    "K": ("model.latent.K", [4, 8, 16, 32]),
    "mask": ("stage1_variant", ["ans_to_vis_only", "bottleneck", "bottleneck_latent_prompt_block"]),
    "placement": ("model.latent.placement", list(PLACEMENTS)),
    "embeddings": ("model.latent.embeddings", list(EMBEDDING_MODES)),
}


class DataError(RuntimeError):
    pass


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _say(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------- gen

def cmd_gen(task: str, n_train: int, n_val: int, n_test: int, seed: int, out) -> dict:
    """Generate, verify and write the three splits of one task."""
    if task not in KINDS:
        raise ConfigError(f"unknown task {task!r}; expected one of {KINDS}")
    out = resolve(out)
    idx = split_indices(n_train, n_val, n_test)
    summary = {"task": task, "seed": seed, "sizes": {}, "verified": {}}
    for name, rng_ in idx.items():
        examples = generate_split(task, seed, rng_)
        ok, failures = verify_all(examples)
        if failures:
            pos, why = failures[0]
            raise DataError(f"{task}/{name}: {len(failures)} examples failed verification "
                            f"(first at {pos}: {why})")
        write_split(examples, out, name)
        summary["sizes"][name] = len(examples)
        summary["verified"][name] = ok
        _say(f"{task}/{name}: {ok}/{len(examples)} verified (100%)")
    summary["config_hash"] = _hash({k: summary[k] for k in ("task", "seed", "sizes")})
    (out / "gen.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return summary


# ---------------------------------------------------------------- train

def _load_task_split(cfg: RunConfig, task: str, split: str, n: int):
    root = resolve(cfg.data_dir) / task
    try:
        examples = read_split(root, split)
    except FileNotFoundError as e:
        raise DataError(f"{e}; run `livr gen --task {task} --out {root}` first") from None
    if len(examples) < n:
        raise DataError(f"{root}/{split} holds {len(examples)} examples, config needs {n}")
    return examples[:n]


def load_examples(cfg: RunConfig, split: str) -> list:
    n = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}[split]
    out = []
    for task in cfg.tasks:
        out.extend(_load_task_split(cfg, task, split, n))
    return out


def train_from_config(cfg: RunConfig, log=None):
    """Train per ``cfg`` without touching the filesystem beyond reading data."""
    train = load_examples(cfg, "train")
    val = load_examples(cfg, "val")
    model = init_model(cfg.model, cfg.seed)
    seqs = D.build_sequences(model, train, image_copies=cfg.image_copies)

    def val_fn(m):
        return D.evaluate(m, val, "standard", image_copies=cfg.image_copies).accuracy

    livr = StageSchedule(*cfg.schedule, stage1_variant=cfg.stage1_variant)
    if cfg.method == "livr":
        rec = run_livr(model, seqs, livr, cfg.optimizer, cfg.seed, val_fn, cfg.resolved_selection, log)
    else:
        rec = run_baseline(cfg.method, model, seqs, cfg.optimizer, cfg.seed, sum(cfg.schedule),
                           val_fn, cfg.resolved_selection, log, livr=livr)
    rec.config_hash = cfg.config_hash()
    return rec, model


def cmd_train(cfg: RunConfig, quiet: bool = False):
    out = resolve(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec, model = train_from_config(cfg, None if quiet else _say)
    rec.checkpoint_path = CHECKPOINT_NAME
    cfg.write(out / "config.json")
    save_checkpoint(out / CHECKPOINT_NAME, model,
                    {"config_hash": rec.config_hash, "selected_epoch": rec.selected_epoch})
    rec.write(out / RECORD_NAME)
    if not quiet:
        _say(f"{cfg.method}: selected epoch {rec.selected_epoch} "
             f"(val {rec.selected_val_acc}); wrote {out}")
    return rec


# ---------------------------------------------------------------- eval

def _open_checkpoint(path):
    path = resolve(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    header, _ = read_checkpoint(path)
    K = header["config"].get("latent", {}).get("K", 0)
    model = load_checkpoint(path, vocab=_runtime_vocab(header, K))
    return model, header


def _runtime_vocab(header, K):
    base = header["config"].get("base_symbols")
    return build_vocab(tuple(base), K) if base else build_vocab(K=K)


def _read_dataset(dataset, split):
    try:
        return read_split(resolve(dataset), split)
    except FileNotFoundError as e:
        raise DataError(str(e)) from None


def _check_symbols(model, examples):
    vocab = model.vocab
    for ex in examples:
        for sym in ex.prompt:
            try:
                vocab.id(sym)
            except VocabError:
                raise VocabMismatchError(f"prompt symbol {sym!r} not in the checkpoint vocabulary") from None


def cmd_eval(checkpoint, dataset, policy: str = "standard", drop_latents: bool = False,
             split: str = "test", out=None, image_copies: int = 1) -> dict:
    model, header = _open_checkpoint(checkpoint)
    examples = _read_dataset(dataset, split)
    _check_symbols(model, examples)
    report = D.evaluate(model, examples, MaskPolicy(policy), drop_latents, image_copies)
    d = asdict(report)
    d["config_hash"] = header.get("meta", {}).get("config_hash", "")
    d["checkpoint"] = str(checkpoint)
    if out is None:
        suffix = "_drop" if drop_latents else ""
        out = resolve(checkpoint).parent / f"eval_{split}_{policy}{suffix}.json"
    Path(out).write_text(json.dumps(d, sort_keys=True) + "\n")
    _say(f"{report.kind} {policy}{' drop-latents' if drop_latents else ''}: "
         f"{report.correct}/{report.n} = {report.accuracy:.4f}  -> {out}")
    return d


# ---------------------------------------------------------------- ablate

def _ablate_cell(args):
    base, key, value, seed, cell_dir = args
    d = apply_overrides(base, [f"{key}={json.dumps(value)}"])
    d["seed"] = seed
    d["out_dir"] = str(cell_dir)
    cfg = RunConfig.from_dict(d)
    rec, model = train_from_config(cfg)
    test = load_examples(cfg, "test")
    acc = D.evaluate(model, test, "standard", image_copies=cfg.image_copies).accuracy
    Path(cell_dir).mkdir(parents=True, exist_ok=True)
    rec.checkpoint_path = None
    rec.write(Path(cell_dir) / RECORD_NAME)
    return {"value": value, "seed": seed, "accuracy": acc, "config_hash": rec.config_hash}


def cmd_ablate(cfg: RunConfig, grid: str, seeds, values=None, workers: int = 1, out=None) -> dict:
    if grid not in ABLATION_GRIDS:
        raise ConfigError(f"unknown grid {grid!r}; expected one of {sorted(ABLATION_GRIDS)}")
    key, default_values = ABLATION_GRIDS[grid]
    values = default_values if values is None else values
    out_dir = resolve(cfg.out_dir) / f"ablate_{grid}"
    base = cfg.to_dict()
    jobs = [(base, key, v, int(s), str(out_dir / f"{_hash(v)}_s{s}")) for v in values for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_ablate_cell, jobs))
    else:
        cells = [_ablate_cell(j) for j in jobs]
    rows = []
    for v in values:
        accs = [c["accuracy"] for c in cells if c["value"] == v]
        rows.append({"value": v, "accuracies": accs, "mean": float(np.mean(accs))})
        _say(f"{grid}={json.dumps(v)}: mean {rows[-1]['mean']:.4f} over seeds {list(seeds)}")
    table = {"grid": grid, "key": key, "seeds": [int(s) for s in seeds], "rows": rows,
             "config_hash": cfg.config_hash(), "cells": cells}
    out = Path(out) if out else out_dir / "table.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table, sort_keys=True, indent=1) + "\n")
    return table


# ---------------------------------------------------------------- diagnostics

def cmd_inspect_attn(checkpoint, dataset, split: str = "test", n: int = 50,
                     policy: str = "standard", out=None) -> dict:
    model, header = _open_checkpoint(checkpoint)
    examples = _read_dataset(dataset, split)[:n]
    _check_symbols(model, examples)
    out = Path(out) if out else resolve(checkpoint).parent / "attention"
    out.mkdir(parents=True, exist_ok=True)
    captured = [(a, l) for a, l, _ in D.capture(model, examples, policy)]
    D.dump_attention(out / "attention.jsonl", captured)
    summary = {"config_hash": header.get("meta", {}).get("config_hash", ""), "n": len(examples)}
    if model.config.latent.K:
        s = D.summarize(captured)
        summary.update(asdict(s))
        D.export_maps(out / "latent_maps.npz", model, examples[0])
        _say(f"mean answer->latent attention {s.mean_answer_to_latent:.4f} over {len(examples)} examples")
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return summary


def cmd_export_hidden(checkpoint, datasets, split: str = "test", n: int = 50, out=None) -> int:
    model, _ = _open_checkpoint(checkpoint)
    by_task = {}
    for ds in datasets:
        examples = _read_dataset(ds, split)
        _check_symbols(model, examples)
        by_task[examples[0].kind if examples else Path(ds).name] = examples
    out = Path(out) if out else resolve(checkpoint).parent / "hidden.tsv"
    rows = D.export_hidden_states(out, model, by_task, n)
    _say(f"wrote {rows} hidden-state rows to {out}")
    return rows


# ---------------------------------------------------------------- argparse

def _config_args(p):
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config key, e.g. optimizer.lr=0.001 (repeatable)")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="livr", description="Latent visual reasoning laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate and verify a task dataset")
    p.add_argument("--task", required=True, choices=KINDS)
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-val", type=int, default=250)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: data/<task> under the output root)")

    p = sub.add_parser("train", help="train per a run config")
    _config_args(p)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--policy", default="standard", choices=VARIANTS)
    p.add_argument("--drop-latents", action="store_true")
    p.add_argument("--image-copies", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("ablate", help="run an ablation grid")
    _config_args(p)
    p.add_argument("--grid", required=True, choices=sorted(ABLATION_GRIDS))
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--values", help="JSON list restricting the grid values")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("inspect-attn", help="dump attention weights and latent maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("-n", type=int, default=50)
    p.add_argument("--policy", default="standard", choices=VARIANTS)
    p.add_argument("--out")

    p = sub.add_parser("export-hidden", help="export final hidden states as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, action="append")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("-n", type=int, default=50)
    p.add_argument("--out")
    return ap


def _dispatch(args) -> None:
    c = args.command
    if c == "gen":
        cmd_gen(args.task, args.n_train, args.n_val, args.n_test, args.seed,
                args.out or f"data/{args.task}")
    elif c == "train":
        cmd_train(load_config(args.config, args.override, args.seed), quiet=args.quiet)
    elif c == "eval":
        cmd_eval(args.checkpoint, args.dataset, args.policy, args.drop_latents, args.split,
                 args.out, args.image_copies)
    elif c == "ablate":
        cfg = load_config(args.config, args.override, args.seed)
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            values = json.loads(args.values) if args.values else None
        except ValueError as e:
            raise ConfigError(f"bad --seeds/--values: {e}") from None
        cmd_ablate(cfg, args.grid, seeds, values, args.workers, args.out)
    elif c == "inspect-attn":
        cmd_inspect_attn(args.checkpoint, args.dataset, args.split, args.n, args.policy, args.out)
    elif c == "export-hidden":
        cmd_export_hidden(args.checkpoint, args.dataset, args.split, args.n, args.out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        _dispatch(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, GenerationError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, TrainingError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
