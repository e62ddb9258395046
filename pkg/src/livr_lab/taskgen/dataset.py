"""On-disk datasets: a JSON-lines manifest plus one ``.npy`` raster stack per split.

Rasters are memory-mapped, so single examples load without a full scan.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .generators import TaskExample, generate
from .oracles import verify

SPLITS = ("train", "val", "test")


def split_indices(n_train: int, n_val: int, n_test: int) -> dict[str, range]:
    """Disjoint index ranges under one seed: train, then val, then test."""
    return {
        "train": range(0, n_train),
        "val": range(n_train, n_train + n_val),
        "test": range(n_train + n_val, n_train + n_val + n_test),
    }


def generate_split(kind: str, seed: int, indices) -> list[TaskExample]:
    return [generate(kind, seed, i) for i in indices]


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_split(examples: list[TaskExample], out_dir: Path, name: str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{name}.jsonl", "w") as fh:
        for ex in examples:
            rec = {"kind": ex.kind, "seed": ex.meta.get("seed"), "index": ex.meta.get("index"),
                   "prompt": ex.prompt, "answer": ex.answer, "meta": _jsonable(ex.meta)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    np.save(out_dir / f"{name}.npy", np.stack([ex.image for ex in examples]).astype("<f8"))


class SplitReader:
    """Random access to one written split."""

    def __init__(self, out_dir: Path, name: str):
        out_dir = Path(out_dir)
        self.manifest_path = out_dir / f"{name}.jsonl"
        if not self.manifest_path.exists():
            raise FileNotFoundError(f"missing dataset manifest {self.manifest_path}")
        with open(self.manifest_path) as fh:
            self.records = [json.loads(line) for line in fh]
        self.rasters = np.load(out_dir / f"{name}.npy", mmap_mode="r")
        if len(self.rasters) != len(self.records):
            raise ValueError(f"{name}: {len(self.records)} manifest rows vs {len(self.rasters)} rasters")

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> TaskExample:
        r = self.records[i]
        return TaskExample(np.array(self.rasters[i]), list(r["prompt"]), r["answer"], r["kind"], r["meta"])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def all(self) -> list[TaskExample]:
        return list(self)


def read_split(out_dir: Path, name: str) -> list[TaskExample]:
    return SplitReader(out_dir, name).all()


def verify_all(examples) -> tuple[int, list[tuple[int, str]]]:
    """Number verified and the failures as (position, reason)."""
    failures = []
    for i, ex in enumerate(examples):
        ok, why = verify(ex)
        if not ok:
            failures.append((i, why))
    return len(examples) - len(failures), failures
