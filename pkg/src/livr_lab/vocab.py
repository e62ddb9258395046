"""Symbolic vocabulary, latent-token extension and sequence span layout."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

DIGITS = [str(d) for d in range(10)]
OPTIONS = ["A", "B", "C", "D"]
SPECIALS = ["<pad>", "<bos>", "<eos>", "<img>", "<ans>", "<sep>"]
KEYWORDS = [
    # task heads
    "count", "jigsaw", "localize", "reflectance", "correspond",
    "artstyle", "semcorr", "funccorr", "vissim",
    # question words
    "how", "many", "which", "box", "patch", "point", "object", "objects",
    "fits", "best", "matches", "ref", "darker", "same", "about", "is",
    "square", "disk", "cross", "shape", "left", "right", "candidate",
    "option", "or", "the", "image", "?",
]
BASE_SYMBOLS = SPECIALS + DIGITS + OPTIONS + KEYWORDS

PAD, BOS, EOS, IMG, ANS, SEP = SPECIALS

PLACEMENTS = ("after_prompt", "before_prompt")
EMBEDDING_MODES = ("unshared", "shared")


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    base_tokens: tuple[str, ...]
    latent_count: int

    def __post_init__(self):
        if len(set(self.base_tokens)) != len(self.base_tokens):
            seen, dup = set(), None
            for s in self.base_tokens:
                if s in seen:
                    dup = s
                    break
                seen.add(s)
            raise VocabError(f"duplicate symbol {dup!r}")
        if self.latent_count < 0:
            raise VocabError("latent_count must be >= 0")

    @property
    def base_size(self) -> int:
        return len(self.base_tokens)

    @property
    def total_size(self) -> int:
        return self.base_size + self.latent_count

    @property
    def latent_ids(self) -> range:
        return range(self.base_size, self.base_size + self.latent_count)

    def symbols(self) -> list[str]:
        return list(self.base_tokens) + [f"<lat{i}>" for i in range(self.latent_count)]

    def id(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise VocabError(f"unknown symbol {symbol!r}") from None

    def ids(self, symbols: Sequence[str]) -> list[int]:
        return [self.id(s) for s in symbols]

    def symbol(self, token_id: int) -> str:
        if 0 <= token_id < self.base_size:
            return self.base_tokens[token_id]
        if self.base_size <= token_id < self.total_size:
            return f"<lat{token_id - self.base_size}>"
        raise VocabError(f"token id {token_id} out of range")

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.symbol(int(i)) for i in ids]

    @property
    def _index(self) -> dict[str, int]:
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {s: i for i, s in enumerate(self.symbols())}
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def to_dict(self) -> dict:
        return {"base_tokens": list(self.base_tokens), "latent_count": self.latent_count}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["base_tokens"]), int(d["latent_count"]))


def build_vocab(base_symbols: Sequence[str] = BASE_SYMBOLS, K: int = 0) -> Vocabulary:
    return Vocabulary(tuple(base_symbols), K)


@dataclass(frozen=True)
class LatentConfig:
    K: int = 16
    placement: str = "after_prompt"
    embeddings: str = "unshared"
    rows_trainable: bool = True

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if self.embeddings not in EMBEDDING_MODES:
            raise ValueError(f"embeddings must be one of {EMBEDDING_MODES}")

    @property
    def n_rows(self) -> int:
        """Distinct embedding rows backing the K latent positions."""
        if self.K == 0:
            return 0
        return 1 if self.embeddings == "shared" else self.K


Span = tuple[int, int]


def span_len(span: Span) -> int:
    return span[1] - span[0]


def span_range(span: Span) -> range:
    return range(span[0], span[1])


@dataclass(frozen=True)
class SequenceLayout:
    """Half-open spans of one sequence.

    ``pad_span`` is empty unless the sequence was right-padded for batching.
    """

    image_span: Span
    prompt_span: Span
    latent_span: Span
    answer_span: Span
    pad_span: Span = field(default=(0, 0))
    image_copies: int = 1

    @property
    def total_len(self) -> int:
        return max(s[1] for s in self.spans().values())

    @property
    def content_len(self) -> int:
        return self.total_len - span_len(self.pad_span)

    def spans(self) -> dict[str, Span]:
        return {
            "image": self.image_span,
            "prompt": self.prompt_span,
            "latent": self.latent_span,
            "answer": self.answer_span,
            "pad": self.pad_span,
        }

    def kinds(self) -> list[str]:
        """Span kind of every position."""
        out = [""] * self.total_len
        for name, (lo, hi) in self.spans().items():
            for i in range(lo, hi):
                out[i] = name
        return out

    def padded(self, length: int) -> "SequenceLayout":
        n = self.content_len
        if length < n:
            raise ValueError(f"cannot pad length {n} down to {length}")
        pad = (n, length) if length > n else (n, n)
        return SequenceLayout(self.image_span, self.prompt_span, self.latent_span,
                              self.answer_span, pad, self.image_copies)

    def without_latents(self) -> "SequenceLayout":
        """Layout after physically deleting the latent span."""
        lo, hi = self.latent_span
        k = hi - lo

        def shift(s: Span) -> Span:
            if s[0] >= hi:
                return (s[0] - k, s[1] - k)
            return s

        pad = shift(self.pad_span) if span_len(self.pad_span) else (0, 0)
        return SequenceLayout(shift(self.image_span), shift(self.prompt_span), (lo, lo),
                              shift(self.answer_span), pad, self.image_copies)

    def to_dict(self) -> dict:
        d = {k: list(v) for k, v in self.spans().items()}
        d["image_copies"] = self.image_copies
        return d


def build_layout(n_image_tokens: int, n_prompt: int, K: int, n_answer: int,
                 placement: str = "after_prompt", image_copies: int = 1) -> SequenceLayout:
    """Span layout ``[IMAGE][PROMPT][LATENT][ANSWER]`` (or latents before the prompt).

    ``n_image_tokens`` counts one copy; ``image_copies`` copies are laid out
    back to back inside the image span.
    """
    for name, v in (("n_image_tokens", n_image_tokens), ("n_prompt", n_prompt),
                    ("K", K), ("n_answer", n_answer)):
        if v < 0:
            raise ValueError(f"{name} must be >= 0")
    if placement not in PLACEMENTS:
        raise ValueError(f"placement must be one of {PLACEMENTS}")
    if image_copies < 1:
        raise ValueError("image_copies must be >= 1")
    img = (0, n_image_tokens * image_copies)
    if placement == "after_prompt":
        prompt = (img[1], img[1] + n_prompt)
        latent = (prompt[1], prompt[1] + K)
        answer = (latent[1], latent[1] + n_answer)
    else:
        latent = (img[1], img[1] + K)
        prompt = (latent[1], latent[1] + n_prompt)
        answer = (prompt[1], prompt[1] + n_answer)
    empty = (answer[1], answer[1])
    return SequenceLayout(img, prompt, latent, answer, empty, image_copies)


def encode_answer(vocab: Vocabulary, answer) -> list[int]:
    """Answer token ids: an option letter, or a count as digits + EOS."""
    if isinstance(answer, str):
        if answer not in OPTIONS:
            raise VocabError(f"unknown option {answer!r}")
        return [vocab.id(answer)]
    if isinstance(answer, (int,)) and not isinstance(answer, bool):
        if answer < 0:
            raise VocabError("counts must be non-negative")
        return vocab.ids(list(str(answer))) + [vocab.id(EOS)]
    raise VocabError(f"unsupported answer {answer!r}")


def decode_answer(vocab: Vocabulary, ids: Sequence[int]):
    """Inverse of :func:`encode_answer`; returns None for malformed output."""
    syms = vocab.decode(ids)
    if len(syms) == 1 and syms[0] in OPTIONS:
        return syms[0]
    if syms and syms[-1] == EOS:
        syms = syms[:-1]
    if syms and all(s in DIGITS for s in syms):
        return int("".join(syms))
    return None


def encode_example(vocab: Vocabulary, prompt: Sequence[str], answer) -> tuple[list[int], list[int]]:
    """Prompt template symbols and answer -> (prompt ids, answer ids)."""
    return vocab.ids(prompt), encode_answer(vocab, answer)
