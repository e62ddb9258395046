"""Single-file checkpoints.

Layout::

    MAGIC (8 bytes) | header length (uint64, little endian) | JSON header | f64 buffer

The header carries the model config, the vocabulary, and for every parameter
its shape and offset (in elements) into the buffer.  The buffer is the
concatenation of all parameters as little-endian float64 in header order, so
a save/load round trip is bitwise exact.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, trainability_map
from .tensor import Tensor
from .vocab import Vocabulary

MAGIC = b"LIVRCKP1"


class CheckpointError(ValueError):
    pass


class VocabMismatchError(CheckpointError):
    pass


def _header(model: Model, meta: dict | None) -> tuple[dict, list[np.ndarray]]:
    entries, arrays, offset = [], [], 0
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        arrays.append(arr)
        offset += arr.size
    header = {
        "format": 1,
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_dict(),
        "params": entries,
        "n_values": offset,
        "meta": meta or {},
    }
    return header, arrays


def save_checkpoint(path, model: Model, meta: dict | None = None) -> Path:
    """Write ``model`` to ``path`` atomically (temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header, arrays = _header(model, meta)
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header and name -> array mapping, without building a model."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + hlen])
    buf = np.frombuffer(data, dtype="<f8", offset=start + hlen)
    if buf.size != header["n_values"]:
        raise CheckpointError(f"{path}: buffer holds {buf.size} values, header says {header['n_values']}")
    arrays = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = buf[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return header, arrays


def load_checkpoint(path, vocab: Vocabulary | None = None) -> Model:
    """Rebuild the model.  If ``vocab`` is given it must equal the stored one."""
    header, arrays = read_checkpoint(path)
    stored = Vocabulary.from_dict(header["vocab"])
    config = ModelConfig.from_dict(header["config"])
    if config.vocab != stored:
        raise VocabMismatchError(f"{path}: stored vocabulary disagrees with its own config")
    if vocab is not None and vocab != stored:
        raise VocabMismatchError(
            f"{path}: checkpoint vocabulary ({stored.total_size} symbols) does not match the "
            f"runtime vocabulary ({vocab.total_size} symbols)")
    params = {k: Tensor(v, name=k) for k, v in arrays.items()}
    model = Model(config, params, set())
    model.set_trainable(trainability_map(config, params))
    return model
