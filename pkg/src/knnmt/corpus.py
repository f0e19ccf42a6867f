"""Parallel corpora: validation, JSONL / plain-text readers and a synthetic generator."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .seeds import rng_for

BOS = 0
EOS = 1
UNK = 2
SPECIALS = ("<s>", "</s>", "<unk>")


@dataclass
class ParallelCorpus:
    src: list[np.ndarray]
    tgt: list[np.ndarray]
    src_vocab: int
    tgt_vocab: int

    def __post_init__(self):
        self.src = [np.asarray(s, dtype=np.int64) for s in self.src]
        self.tgt = [np.asarray(t, dtype=np.int64) for t in self.tgt]
        self.validate()

    def validate(self) -> None:
        if len(self.src) != len(self.tgt):
            raise InvalidArgument(f"{len(self.src)} sources but {len(self.tgt)} targets")
        for i, (s, t) in enumerate(zip(self.src, self.tgt)):
            if t.size == 0:
                raise InvalidArgument(f"sentence {i}: empty target sequence")
            if s.size == 0:
                raise InvalidArgument(f"sentence {i}: empty source sequence")
            if s.min() < 0 or s.max() >= self.src_vocab:
                raise InvalidArgument(f"sentence {i}: source token outside vocabulary of {self.src_vocab}")
            if t.min() < 0 or t.max() >= self.tgt_vocab:
                raise InvalidArgument(f"sentence {i}: target token outside vocabulary of {self.tgt_vocab}")

    def __len__(self) -> int:
        return len(self.src)

    @property
    def target_lengths(self) -> np.ndarray:
        return np.array([t.size for t in self.tgt], dtype=np.int64)

    @property
    def num_tokens(self) -> int:
        return int(self.target_lengths.sum())

    def subset(self, indices) -> "ParallelCorpus":
        idx = list(indices)
        return ParallelCorpus([self.src[i] for i in idx], [self.tgt[i] for i in idx],
                              self.src_vocab, self.tgt_vocab)


def _with_eos(seq: list[int]) -> list[int]:
    return seq if seq and seq[-1] == EOS else list(seq) + [EOS]


def read_jsonl(path, src_vocab: int | None = None, tgt_vocab: int | None = None,
               append_eos: bool = True) -> ParallelCorpus:
    """One ``{"src": [...], "tgt": [...]}`` object per line.

    Vocabulary sizes default to one past the largest id seen. Targets get a
    trailing end-of-sentence id unless they already end with one.
    """
    src, tgt = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                s, t = [int(v) for v in rec["src"]], [int(v) for v in rec["tgt"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise InvalidArgument(f"{path}:{lineno}: bad corpus record ({exc})") from None
            if not t:
                raise InvalidArgument(f"{path}:{lineno}: empty target sequence")
            src.append(s)
            tgt.append(_with_eos(t) if append_eos else t)
    if not src:
        raise InvalidArgument(f"{path}: corpus is empty")
    sv = src_vocab if src_vocab is not None else max(max(s) for s in src if s) + 1
    tv = tgt_vocab if tgt_vocab is not None else max(max(t) for t in tgt) + 1
    return ParallelCorpus(src, tgt, max(sv, len(SPECIALS)), max(tv, len(SPECIALS)))


def write_jsonl(corpus: ParallelCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s, t in zip(corpus.src, corpus.tgt):
            fh.write(json.dumps({"src": s.tolist(), "tgt": t.tolist()}) + "\n")


def build_vocab(lines) -> dict[str, int]:
    words = sorted({w for line in lines for w in line.split()} - set(SPECIALS))
    vocab = {w: i for i, w in enumerate(SPECIALS)}
    for w in words:
        vocab[w] = len(vocab)
    return vocab


def read_plain(path) -> tuple[ParallelCorpus, dict[str, int], dict[str, int]]:
    """Tab-separated ``source<TAB>target`` lines, whitespace-tokenized.

    Returns the corpus and the two vocabularies built from it.
    """
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise InvalidArgument(f"{path}:{lineno}: expected 'source<TAB>target'")
        s, t = line.split("\t", 1)
        pairs.append((s, t))
    sv = build_vocab(s for s, _ in pairs)
    tv = build_vocab(t for _, t in pairs)
    src = [[sv.get(w, UNK) for w in s.split()] for s, _ in pairs]
    tgt = [_with_eos([tv.get(w, UNK) for w in t.split()]) for _, t in pairs]
    return ParallelCorpus(src, tgt, len(sv), len(tv)), sv, tv


def synthetic_corpus(n: int, src_vocab: int = 1000, tgt_vocab: int = 1000,
                     min_len: int = 4, max_len: int = 20, seed: int = 0) -> ParallelCorpus:
    """Random sources with a fixed word-by-word "translation" to the target side.

    Every target ends with the end-of-sentence id, so target length is the
    source length plus one.
    """
    if n < 1:
        raise InvalidArgument("corpus size must be >= 1")
    first = len(SPECIALS)
    rng = rng_for(seed, "corpus")
    lex = rng.integers(first, tgt_vocab, size=src_vocab)
    lengths = rng.integers(min_len, max_len + 1, size=n)
    src, tgt = [], []
    for length in lengths:
        s = rng.integers(first, src_vocab, size=length)
        src.append(s)
        tgt.append(np.append(lex[s], EOS))
    return ParallelCorpus(src, tgt, src_vocab, tgt_vocab)
