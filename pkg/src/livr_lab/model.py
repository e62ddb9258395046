"""Toy multimodal decoder with low-rank adapters and selectively trainable latent rows.

Visual path: a frozen linear patch embedder plus fixed 2-D sinusoidal
positions stands in for the vision encoder and projector.  Text tokens carry
no positional encoding; order reaches them only through the causal mask, so
deleting the latent span does not shift anything else.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Batch, TokenSequence, assemble, collate
from .masking import MaskPolicy
from .tensor import Tensor
from .vocab import (ANS, BOS, EOS, IMG, PAD, SEP, LatentConfig, Vocabulary,
                    build_vocab)

ATTN_TARGETS = ("q", "k", "v", "o")
MLP_TARGETS = ("fc1", "fc2")

# The head and final norm stay frozen, so the head's scale caps the logit range
# the adapters can reach; at toy width a unit gain leaves too little headroom.
HEAD_INIT_GAIN = 3.0


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 4
    alpha: float = 8.0
    dropout: float = 0.05
    targets: tuple[str, ...] = ("attn", "mlp")

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("LoRA dropout must be in [0, 1)")
        bad = set(self.targets) - {"attn", "mlp"}
        if bad:
            raise ValueError(f"unknown LoRA targets {sorted(bad)}")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    mlp_ratio: int = 4
    image_size: tuple[int, int, int] = (32, 32, 6)
    patch_size: int = 8
    latent: LatentConfig = field(default_factory=LatentConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    max_seq_len: int = 256
    full_finetune: bool = False
    base_symbols: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        h, w, _ = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")

    @property
    def n_image_tokens(self) -> int:
        h, w, _ = self.image_size
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def channels(self) -> int:
        return self.image_size[2]

    @property
    def vocab(self) -> Vocabulary:
        if self.base_symbols is None:
            return build_vocab(K=self.latent.K)
        return build_vocab(self.base_symbols, self.latent.K)

    def linear_shapes(self) -> dict[str, tuple[int, int]]:
        d, m = self.d_model, self.d_model * self.mlp_ratio
        return {"q": (d, d), "k": (d, d), "v": (d, d), "o": (d, d), "fc1": (d, m), "fc2": (m, d)}

    def lora_targets(self) -> tuple[str, ...]:
        out: tuple[str, ...] = ()
        if "attn" in self.lora.targets:
            out += ATTN_TARGETS
        if "mlp" in self.lora.targets:
            out += MLP_TARGETS
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        d["lora"]["targets"] = list(self.lora.targets)
        if self.base_symbols is not None:
            d["base_symbols"] = list(self.base_symbols)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["image_size"] = tuple(d.get("image_size", (32, 32, 6)))
        d["latent"] = LatentConfig(**d.get("latent", {}))
        lora = dict(d.get("lora", {}))
        if "targets" in lora:
            lora["targets"] = tuple(lora["targets"])
        d["lora"] = LoraConfig(**lora)
        if d.get("base_symbols") is not None:
            d["base_symbols"] = tuple(d["base_symbols"])
        return cls(**d)


def _linear_prefix(layer: int, target: str) -> str:
    group = "attn" if target in ATTN_TARGETS else "mlp"
    return f"blocks.{layer}.{group}.{target}"


def sinusoidal_2d(rows: int, cols: int, d: int) -> np.ndarray:
    """Fixed 2-D sin/cos positions: half the channels encode the row, half the column."""
    half = d // 2
    freqs = 1.0 / (100.0 ** (np.arange(0, half, 2) / half))

    def enc(n):
        pos = np.arange(n)[:, None] * freqs[None, :]
        out = np.zeros((n, half))
        out[:, 0::2] = np.sin(pos)
        out[:, 1::2] = np.cos(pos)[:, : out[:, 1::2].shape[1]]
        return out

    r, c = enc(rows), enc(cols)
    pe = np.zeros((rows, cols, d))
    pe[:, :, :half] = r[:, None, :]
    pe[:, :, half:2 * half] = c[None, :, :]
    return pe.reshape(rows * cols, d)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """``[H, W(, C)]`` raster -> ``[n_patches, patch*patch*C]`` in row-major patch order."""
    img = image if image.ndim == 3 else image[:, :, None]
    h, w, c = img.shape
    gh, gw = h // patch, w // patch
    x = img.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(gh * gw, patch * patch * c)


@dataclass
class ForwardResult:
    logits: Tensor                       # [B, T, V]
    attentions: list[np.ndarray] | None  # per layer [B, H, T, T]
    hidden: np.ndarray                   # final-layer hidden states [B, T, d]
    layouts: list


class Model:
    def __init__(self, config: ModelConfig, params: dict[str, Tensor], trainable: set[str]):
        self.config = config
        self.vocab = config.vocab
        self.params = params
        self.trainable = set(trainable)
        self._pos_cache: dict[tuple[int, int], np.ndarray] = {}
        self.lora_enabled = True

    # ------------------------------------------------------------ parameters
    def trainable_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k in self.trainable}

    def frozen_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k not in self.trainable}

    def n_trainable(self) -> int:
        return sum(p.data.size for p in self.trainable_params().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) ^ set(state)
            raise KeyError(f"parameter mismatch: {sorted(missing)[:5]}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64, copy=True)

    def set_trainable(self, names: set[str]) -> None:
        self.trainable = set(names)
        for k, p in self.params.items():
            p.requires_grad = k in self.trainable

    # ------------------------------------------------------------ embedding
    def positions(self, rows: int, cols: int) -> np.ndarray:
        key = (rows, cols)
        if key not in self._pos_cache:
            self._pos_cache[key] = 0.5 * sinusoidal_2d(rows, cols, self.config.d_model)
        return self._pos_cache[key]

    def patch_embed(self, image: np.ndarray) -> Tensor:
        """Frozen projection of one raster to ``[n_patches, d]``."""
        p = self.config.patch_size
        patches = Tensor(patchify(image, p))
        rows, cols = image.shape[0] // p, image.shape[1] // p
        emb = T.matmul(patches, self.params["patch.proj"])
        return T.add(emb, Tensor(self.positions(rows, cols)))

    def embedding_table(self) -> Tensor:
        base = self.params["embed.base"]
        if "embed.latent" not in self.params:
            return base
        return T.concat([base, self.params["embed.latent"]], axis=0)

    def _table_ids(self, ids: np.ndarray) -> np.ndarray:
        """Token ids -> rows of the embedding table (shared latents collapse to one row)."""
        base = self.vocab.base_size
        if self.config.latent.embeddings == "shared" and self.config.latent.K:
            ids = np.where(ids >= base, base, ids)
        return ids

    def embed_inputs(self, batch: Batch, image_embeds: Sequence[Tensor] | None = None) -> Tensor:
        B, L = batch.ids.shape
        d = self.config.d_model
        tok = T.embed(self.embedding_table(), self._table_ids(batch.ids))
        keep = np.ones((B, L, d))
        pieces = []
        for b, lay in enumerate(batch.layouts):
            lo, hi = lay.image_span
            if hi == lo:
                pieces.append(Tensor(np.zeros((L, d))))
                continue
            emb = image_embeds[b] if image_embeds is not None else self.patch_embed(batch.images[b])
            copies = [emb] * lay.image_copies
            if hi - lo != emb.shape[0] * lay.image_copies:
                raise ValueError("image span does not match the raster's patch count")
            tail = Tensor(np.zeros((L - hi, d)))
            pieces.append(T.concat(copies + [tail], axis=0) if lo == 0 else
                          T.concat([Tensor(np.zeros((lo, d)))] + copies + [tail], axis=0))
            keep[b, lo:hi] = 0.0
        img = T.stack(pieces, axis=0)
        return T.add(T.mul(tok, Tensor(keep)), img)

    # ------------------------------------------------------------ blocks
    def linear(self, x: Tensor, layer: int, target: str, rng: np.random.Generator | None) -> Tensor:
        pre = _linear_prefix(layer, target)
        y = T.add(T.matmul(x, self.params[pre + ".w"]), self.params[pre + ".b"])
        a_key = pre + ".lora_a"
        if self.lora_enabled and a_key in self.params:
            lora = self.config.lora
            h = T.dropout(x, lora.dropout, rng)
            h = T.matmul(h, T.transpose(self.params[a_key], (1, 0)))
            h = T.matmul(h, T.transpose(self.params[pre + ".lora_b"], (1, 0)))
            y = T.add(y, T.scale(h, lora.scaling))
        return y

    def forward(self, batch: Batch, capture: bool = False, rng: np.random.Generator | None = None,
                image_embeds: Sequence[Tensor] | None = None) -> ForwardResult:
        """Logits for every position.  ``rng`` enables LoRA dropout (training only)."""
        cfg = self.config
        B, L = batch.ids.shape
        if L > cfg.max_seq_len:
            raise ValueError(f"sequence length {L} exceeds max_seq_len {cfg.max_seq_len}")
        if batch.allowed.shape != (B, L, L):
            raise ValueError(f"mask shape {batch.allowed.shape} does not match batch {(B, L)}")
        H = cfg.n_heads
        dh = cfg.d_model // H
        blocked = ~batch.allowed[:, None, :, :]
        x = self.embed_inputs(batch, image_embeds)
        attns = [] if capture else None
        p = self.params
        for layer in range(cfg.n_layers):
            pre = f"blocks.{layer}"
            h = T.layernorm(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"])

            def heads(t):
                return T.transpose(T.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))

            q = heads(self.linear(h, layer, "q", rng))
            k = heads(self.linear(h, layer, "k", rng))
            v = heads(self.linear(h, layer, "v", rng))
            scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
            w = T.softmax(T.masked_fill(scores, blocked))
            if capture:
                attns.append(w.data.copy())
            o = T.reshape(T.transpose(T.matmul(w, v), (0, 2, 1, 3)), (B, L, cfg.d_model))
            x = T.add(x, self.linear(o, layer, "o", rng))
            h = T.layernorm(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"])
            h = T.gelu(self.linear(h, layer, "fc1", rng))
            x = T.add(x, self.linear(h, layer, "fc2", rng))
        h = T.layernorm(x, p["ln_f.g"], p["ln_f.b"])
        logits = T.matmul(h, p["head.w"])
        return ForwardResult(logits, attns, h.data.copy(), batch.layouts)

    # ------------------------------------------------------------ convenience
    def sequence(self, image: np.ndarray, prompt_ids: Sequence[int], answer_ids: Sequence[int],
                 image_copies: int = 1, meta: dict | None = None) -> TokenSequence:
        return assemble(self.vocab, self.config.latent, image, prompt_ids, answer_ids,
                        self.config.patch_size, image_copies, meta)

    def batch(self, seqs: Sequence[TokenSequence], policy: MaskPolicy, with_loss: bool = True) -> Batch:
        return collate(seqs, policy, self.vocab, with_loss)

    def generation_blocklist(self) -> np.ndarray:
        """Token ids greedy decoding may never emit."""
        v = self.vocab
        ids = [v.id(s) for s in (PAD, BOS, IMG, ANS, SEP)] + list(v.latent_ids)
        return np.array(ids, dtype=np.int64)


def expected_trainable_count(config: ModelConfig) -> int:
    """Closed-form count of trainable scalars in adapter mode."""
    shapes = config.linear_shapes()
    r = config.lora.rank
    per_layer = sum(r * shapes[t][0] + shapes[t][1] * r for t in config.lora_targets())
    latent = config.latent.n_rows * config.d_model if config.latent.rows_trainable else 0
    return config.n_layers * per_layer + latent


def init_model(config: ModelConfig, seed: int) -> Model:
    """Deterministic initialization from ``seed``.

    LoRA ``B`` matrices start at zero, so the adapted model equals the base
    model until the first update.
    """
    from .seeding import substream

    rng = substream(seed, "init")
    d = config.d_model
    vocab = config.vocab
    params: dict[str, Tensor] = {}

    def normal(shape, std):
        return rng.normal(0.0, std, size=shape)

    pdim = config.patch_size ** 2 * config.channels
    params["patch.proj"] = Tensor(normal((pdim, d), 2.0 / math.sqrt(pdim)), name="patch.proj")
    params["embed.base"] = Tensor(normal((vocab.base_size, d), 1.0), name="embed.base")
    if config.latent.K:
        params["embed.latent"] = Tensor(normal((config.latent.n_rows, d), 1.0), name="embed.latent")
    shapes = config.linear_shapes()
    for layer in range(config.n_layers):
        pre = f"blocks.{layer}"
        for ln in ("ln1", "ln2"):
            params[f"{pre}.{ln}.g"] = Tensor(np.ones(d))
            params[f"{pre}.{ln}.b"] = Tensor(np.zeros(d))
        for t, (din, dout) in shapes.items():
            lp = _linear_prefix(layer, t)
            std = 1.0 / math.sqrt(din)
            if t in ("o", "fc2"):
                std /= math.sqrt(2 * config.n_layers)
            params[lp + ".w"] = Tensor(normal((din, dout), std))
            params[lp + ".b"] = Tensor(np.zeros(dout))
        for t in config.lora_targets():
            din, dout = shapes[t]
            lp = _linear_prefix(layer, t)
            params[lp + ".lora_a"] = Tensor(normal((config.lora.rank, din), 1.0 / math.sqrt(din)))
            params[lp + ".lora_b"] = Tensor(np.zeros((dout, config.lora.rank)))
    params["ln_f.g"] = Tensor(np.ones(d))
    params["ln_f.b"] = Tensor(np.zeros(d))
    params["head.w"] = Tensor(normal((d, vocab.total_size), HEAD_INIT_GAIN / math.sqrt(d)))
    for k, v in params.items():
        v.name = k

    model = Model(config, params, set())
    model.set_trainable(trainability_map(config, params))
    return model


def trainability_map(config: ModelConfig, params: dict[str, Tensor]) -> set[str]:
    names = set()
    for k in params:
        if ".lora_" in k:
            names.add(k)
        elif k == "embed.latent" and config.latent.rows_trainable:
            names.add(k)
        elif config.full_finetune and not k.startswith("patch."):
            names.add(k)
    return names


def with_latents(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, latent=replace(config.latent, **changes))


def generate_batch(model, prefixes: Sequence[TokenSequence], policy: MaskPolicy,
                   max_new: int) -> list[list[int]]:
    """Greedy decoding for several prefixes at once.

    Each prefix ends with the ``<ans>`` delimiter.  Latent tokens are laid out
    by the prefix and never produced here; blocked ids are masked out of the
    argmax.  Decoding of a sequence stops at EOS or after ``max_new`` tokens.
    """
    vocab = model.vocab
    eos = vocab.id(EOS)
    block = model.generation_blocklist()
    outs: list[list[int]] = [[] for _ in prefixes]
    live = list(range(len(prefixes)))
    current = list(prefixes)
    for _ in range(max_new):
        if not live:
            break
        seqs = [current[i] for i in live]
        batch = collate(seqs, policy, vocab, with_loss=False)
        with T.no_grad():
            logits = model.forward(batch).logits.data
        still = []
        for row, i in enumerate(live):
            pos = batch.layouts[row].answer_span[1] - 1
            scores = logits[row, pos].copy()
            scores[block] = -np.inf
            tok = int(np.argmax(scores))
            outs[i].append(tok)
            if tok == eos:
                continue
            s = current[i]
            current[i] = TokenSequence(s.ids + [tok], _extend_answer(s.layout), s.image,
                                       s.patch_size, s.meta)
            still.append(i)
        live = still
    return outs


def _extend_answer(layout):
    from .vocab import SequenceLayout

    lo, hi = layout.answer_span
    return SequenceLayout(layout.image_span, layout.prompt_span, layout.latent_span,
                          (lo, hi + 1), (hi + 1, hi + 1), layout.image_copies)


def generate(model, image: np.ndarray, prompt_ids: Sequence[int], policy: MaskPolicy,
             max_new: int, image_copies: int = 1) -> list[int]:
    """Greedy answer tokens for one image and prompt (EOS stripped)."""
    prefix = model.sequence(image, prompt_ids, [], image_copies)
    out = generate_batch(model, [prefix], policy, max_new)[0]
    eos = model.vocab.id(EOS)
    return out[:-1] if out and out[-1] == eos else out


def substitute_image_eval(model, image_a: np.ndarray, image_b: np.ndarray,
                          prompt_ids: Sequence[int], answer_ids: Sequence[int],
                          policy: MaskPolicy):
    """Answer-span logits for two images under one prompt/layout and their max abs difference."""
    seqs = [model.sequence(image_a, prompt_ids, answer_ids), model.sequence(image_b, prompt_ids, answer_ids)]
    batch_a = collate(seqs[:1], policy, model.vocab)
    batch_b = collate(seqs[1:], policy, model.vocab)
    with T.no_grad():
        la = model.forward(batch_a).logits.data[0]
        lb = model.forward(batch_b).logits.data[0]
    lo, hi = batch_a.layouts[0].answer_span
    la, lb = la[lo:hi], lb[lo:hi]
    return la, lb, float(np.max(np.abs(la - lb)))
