"""Corpus ingestion, tokenization, and stride-m window assembly.

The desk-scale default tokenizer is byte-level: ids are the UTF-8 bytes,
vocab 256 rounded up to 320 for the model.  A pre-built merge table can
be loaded instead ("bpe:<path>", see README for the file format).  Word
counts are always whitespace-based on the raw text, independent of the
tokenizer, so per-word perplexity stays comparable across tokenizers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import round_up_vocab

PAD_ID = -1  # sentinel for "no token": gathers a zero embedding row


@dataclass(frozen=True)
class Corpus:
    ids: np.ndarray            # int32 token stream
    n_words: int               # whitespace-delimited words in the raw text
    vocab_size: int            # rounded up to a multiple of 64
    split: str = "train"

    def __post_init__(self):
        if len(self.ids) and (self.ids.min() < 0 or self.ids.max() >= self.vocab_size):
            raise ConfigError("token id outside vocabulary")

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class Batch:
    """One stride-m window.

    ``history`` is lag-major: entry j is the token at lag j+1 behind the
    window start t0, PAD_ID where the corpus has ended or not begun.
    ``targets`` are ``inputs`` shifted by one; ``mask`` zeroes the padded
    tail of the final partial window.
    """

    t0: int
    history: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray


class ByteTokenizer:
    # 256 byte ids plus one 64-wide pad block of never-emitted ids; the
    # desk-scale vocabulary is fixed at 320
    vocab_size = 320

    def encode(self, text: str) -> np.ndarray:
        return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int32)

    def decode(self, ids: np.ndarray) -> str:
        return bytes(np.asarray(ids, dtype=np.uint8)).decode("utf-8")


class MergeTableTokenizer:
    """Byte-pair encoder driven by a pre-built merge list (no training).

    File format (JSON): {"merges": [[id_a, id_b], ...]}.  Base ids 0..255
    are raw bytes; merge r creates id 256 + r.  Text is pre-chunked on
    whitespace boundaries and merges apply greedily, lowest rank first.
    """

    _chunker = re.compile(r"\s+|\S+")

    def __init__(self, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                spec = json.load(fh)
            merges = [tuple(int(x) for x in pair) for pair in spec["merges"]]
        except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid vocab file {path}: {exc}") from exc
        for r, pair in enumerate(merges):
            if len(pair) != 2 or min(pair) < 0 or max(pair) >= 256 + r:
                raise ConfigError(f"invalid vocab file {path}: bad merge {pair} at rank {r}")
        self.rank = {pair: r for r, pair in enumerate(merges)}
        self.vocab_size = round_up_vocab(256 + len(merges))

    def _encode_chunk(self, chunk: bytes) -> list[int]:
        ids = list(chunk)
        while len(ids) > 1:
            pairs = [(self.rank.get((a, b), None), i)
                     for i, (a, b) in enumerate(zip(ids, ids[1:]))]
            best = min((p for p in pairs if p[0] is not None), default=None)
            if best is None:
                break
            r, i = best
            ids[i:i + 2] = [256 + r]
        return ids

    def encode(self, text: str) -> np.ndarray:
        out: list[int] = []
        for chunk in self._chunker.findall(text):
            out.extend(self._encode_chunk(chunk.encode("utf-8")))
        return np.asarray(out, dtype=np.int32)


def make_tokenizer(spec: str):
    if spec == "byte":
        return ByteTokenizer()
    if spec.startswith("bpe:"):
        return MergeTableTokenizer(spec[4:])
    raise ConfigError(f"unknown tokenizer spec {spec!r} (expected 'byte' or 'bpe:<path>')")


def count_words(text: str) -> int:
    return len(text.split())


def tokenize(text: str, tokenizer_spec: str = "byte", split: str = "train") -> Corpus:
    tok = make_tokenizer(tokenizer_spec)
    ids = tok.encode(text)
    return Corpus(ids=ids, n_words=count_words(text), vocab_size=tok.vocab_size, split=split)


def load_corpus(path, tokenizer_spec: str = "byte", split: str = "train") -> Corpus:
    """Load a UTF-8 text file, or a raw token stream when the path ends in
    .bin (one byte per token id; n_words is then the token count)."""
    path = str(path)
    if path.endswith(".bin"):
        with open(path, "rb") as fh:
            raw = np.frombuffer(fh.read(), dtype=np.uint8).astype(np.int32)
        vocab = round_up_vocab(int(raw.max()) + 1) if len(raw) else 64
        return Corpus(ids=raw, n_words=len(raw), vocab_size=vocab, split=split)
    with open(path, "r", encoding="utf-8") as fh:
        return tokenize(fh.read(), tokenizer_spec, split=split)


def window_starts(n_tokens: int, window: int) -> list[int]:
    if window < 1:
        raise ConfigError("window must be >= 1")
    return list(range(0, max(n_tokens - 1, 0), window))


def windows(corpus: Corpus, window: int, horizon: int) -> list[Batch]:
    """Stride-m windows covering every predictable token exactly once."""
    ids = corpus.ids
    T = len(ids)
    if T < 2:
        raise ConfigError("corpus must hold at least 2 tokens")
    out = []
    for t0 in window_starts(T, window):
        n_targets = min(window, T - 1 - t0)
        inputs = np.zeros(window, dtype=np.int32)
        targets = np.zeros(window, dtype=np.int32)
        mask = np.zeros(window)
        inputs[:n_targets] = ids[t0:t0 + n_targets]
        targets[:n_targets] = ids[t0 + 1:t0 + 1 + n_targets]
        mask[:n_targets] = 1.0
        history = np.full(horizon, PAD_ID, dtype=np.int32)
        n_hist = min(horizon, t0)
        if n_hist:
            history[:n_hist] = ids[t0 - n_hist:t0][::-1]
        out.append(Batch(t0=t0, history=history, inputs=inputs, targets=targets, mask=mask))
    return out


def stack_batches(batches: list[Batch]):
    """Collate window batches into (B, ...) arrays for the model."""
    return (
        np.stack([b.history for b in batches]),
        np.stack([b.inputs for b in batches]),
        np.stack([b.targets for b in batches]),
        np.stack([b.mask for b in batches]),
    )


def epoch_order(n_windows: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic per-epoch shuffle; a function of (seed, epoch) only,
    so training can resume mid-run and replay the same order."""
    return np.random.default_rng([seed, epoch]).permutation(n_windows)


# ---------------------------------------------------------------------------
# Deterministic surrogate corpus with document structure and long-range
# statistics, used where a real multi-megabyte text corpus is not on disk.
#
# Each document writes with a private vocabulary sampled from a large
# shared lexicon.  Word identity is the bulk of the per-character entropy,
# and the only way to know which words this document uses is to have seen
# enough of it: every extra span of visible past sharpens the estimate, so
# perplexity improves smoothly with memory span (topic persistence).  A
# fraction of documents additionally repeat a fixed sentence block every
# few hundred characters, rewarding genuinely deep retrieval.

_VOWELS = "aeiou"
_CONSONANTS = "bcdfghjklmnprstvwz"


def _make_word(rng, n_syllables):
    return "".join(
        rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS))
        for _ in range(n_syllables)
    )


_SHARED_LEXICON_SIZE = 120
_DOC_VOCAB = 25


def _shared_lexicon():
    rng = np.random.default_rng(777)
    words = [_make_word(rng, int(rng.integers(1, 4)))
             for _ in range(_SHARED_LEXICON_SIZE)]
    return words


def generate_article_text(n_chars: int, seed: int = 0) -> str:
    """Seeded document-structured filler text of roughly ``n_chars`` bytes.

    Every document samples a 25-word working vocabulary from the shared
    lexicon (far too many combinations to memorize across documents) and
    emits Zipf-weighted sentences from it; a third of the documents also
    repeat a verbatim sentence block at ~200-350 character intervals.
    """
    lexicon = _shared_lexicon()
    zipf = 1.0 / np.arange(1, _DOC_VOCAB + 1)
    zipf /= zipf.sum()
    rng = np.random.default_rng(seed)
    pieces: list[str] = []
    total = 0
    while total < n_chars:
        vocab = list(rng.choice(lexicon, size=_DOC_VOCAB, replace=False))
        cycling = rng.random() < (1 / 3)
        refrain = None
        if cycling:
            refrain = " ".join(str(rng.choice(vocab, p=zipf))
                               for _ in range(int(rng.integers(8, 14)))) + "."
        doc_chars = int(rng.integers(2500, 6000))
        parts: list[str] = []
        doc_len = 0
        since_refrain = int(rng.integers(0, 150))
        sentence_len = 0
        while doc_len < doc_chars:
            if refrain is not None and since_refrain >= rng.integers(200, 350):
                parts.append(refrain)
                doc_len += len(refrain) + 1
                since_refrain = 0
                continue
            w = str(rng.choice(vocab, p=zipf))
            sentence_len += 1
            if sentence_len >= rng.integers(6, 13):
                w += "."
                sentence_len = 0
            parts.append(w)
            doc_len += len(w) + 1
            since_refrain += len(w) + 1
        doc = " ".join(parts) + "\n\n"
        pieces.append(doc)
        total += len(doc)
    return "".join(pieces)[:n_chars]
