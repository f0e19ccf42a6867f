"""Sequence-model adapter interface and a deterministic toy model.

The toy model stands in for a trained translation model. It only has to
produce deterministic, context-discriminating decoder keys and a proper
next-token distribution.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from .corpus import BOS, EOS, ParallelCorpus
from .errors import InvalidArgument
from .seeds import rng_for


class ModelAdapter(Protocol):
    dim: int
    src_vocab: int
    tgt_vocab: int
    bos: int
    eos: int

    def context_key(self, src: Sequence[int], prefix: Sequence[int]) -> np.ndarray: ...

    def mt_distribution(self, src: Sequence[int], prefix: Sequence[int]) -> np.ndarray: ...

    def encoder_states(self, src: Sequence[int]) -> np.ndarray: ...


def sentence_keys(model, src, tgt) -> np.ndarray:
    """Keys for every target position of one sentence, shape (|tgt|, d).

    Adapters may provide a faster ``sentence_keys`` method of their own.
    """
    fast = getattr(model, "sentence_keys", None)
    if fast is not None:
        return fast(src, tgt)
    tgt = list(tgt)
    return np.stack([model.context_key(src, tgt[:t]) for t in range(len(tgt))]).astype(np.float32)


def batch_sentence_keys(model, srcs, tgts) -> list[np.ndarray]:
    fast = getattr(model, "batch_sentence_keys", None)
    if fast is not None:
        return fast(srcs, tgts)
    return [sentence_keys(model, s, t) for s, t in zip(srcs, tgts)]


class ToyModel:
    """Seeded embedding tables and a decaying average over the target prefix.

    key(x, y<t) = scale * unit(mean(E_src[x]) + avg_t), where avg_t is the
    decay-weighted average of the target embeddings of [BOS] + y<t, newest
    token weighted highest. The next-token distribution blends a softmax over
    a fixed random projection of the unit key with a smoothed bigram table.
    """

    def __init__(self, src_vocab: int, tgt_vocab: int, dim: int = 64, seed: int = 0,
                 decay: float = 0.5, key_scale: float = 128.0, beta: float = 4.0,
                 mix: float = 0.5, bigram_alpha: float = 0.1):
        if dim < 8:
            raise InvalidArgument(f"model dimension must be >= 8, got {dim}")
        self.src_vocab, self.tgt_vocab, self.dim = src_vocab, tgt_vocab, dim
        self.bos, self.eos = BOS, EOS
        self.seed = seed
        self.decay = np.float32(decay)
        self.key_scale = np.float32(key_scale)
        self.beta = beta
        self.mix = mix
        self.bigram_alpha = bigram_alpha
        scale = np.float32(1.0 / np.sqrt(dim))
        self.src_emb = (rng_for(seed, "toy/src").standard_normal((src_vocab, dim)) * scale).astype(np.float32)
        self.tgt_emb = (rng_for(seed, "toy/tgt").standard_normal((tgt_vocab, dim)) * scale).astype(np.float32)
        self.proj = rng_for(seed, "toy/proj").standard_normal((tgt_vocab, dim)).astype(np.float32)
        self.bigram = np.full((tgt_vocab, tgt_vocab), 1.0 / tgt_vocab)
        self._no_bos = np.ones(tgt_vocab, dtype=bool)
        self._no_bos[BOS] = False

    def fit_bigram(self, corpus: ParallelCorpus) -> "ToyModel":
        V = self.tgt_vocab
        counts = np.zeros((V, V), dtype=np.float64)
        for t in corpus.tgt:
            prev = np.concatenate([[BOS], t[:-1]])
            np.add.at(counts, (prev, t), 1.0)
        counts[:, BOS] = 0.0
        counts += self.bigram_alpha * self._no_bos
        self.bigram = counts / counts.sum(1, keepdims=True)
        return self

    # keys

    def encoder_states(self, src) -> np.ndarray:
        return self.src_emb[np.asarray(src, dtype=np.int64)]

    def source_mean(self, src) -> np.ndarray:
        return self.encoder_states(src).mean(axis=0, dtype=np.float32)

    def _keys_from_state(self, src_mean: np.ndarray, acc: np.ndarray, norm: np.float32) -> np.ndarray:
        v = src_mean + acc / norm
        length = np.sqrt(np.sum(v * v, axis=-1, dtype=np.float32))[..., None]
        return (v / length) * self.key_scale

    def batch_sentence_keys(self, srcs, tgts) -> list[np.ndarray]:
        """Keys for whole sentences; identical bits regardless of batch composition."""
        B = len(tgts)
        if B == 0:
            return []
        lengths = np.array([len(t) for t in tgts])
        T = int(lengths.max())
        means = np.stack([self.source_mean(s) for s in srcs])
        toks = np.full((B, T), BOS, dtype=np.int64)
        for i, t in enumerate(tgts):
            toks[i, :len(t)] = t
        out = np.empty((B, T, self.dim), dtype=np.float32)
        acc = np.broadcast_to(self.tgt_emb[BOS], (B, self.dim)).copy()
        norm = np.float32(1.0)
        for t in range(T):
            out[:, t] = self._keys_from_state(means, acc, norm)
            acc = acc * self.decay + self.tgt_emb[toks[:, t]]
            norm = norm * self.decay + np.float32(1.0)
        return [out[i, :lengths[i]].copy() for i in range(B)]

    def sentence_keys(self, src, tgt) -> np.ndarray:
        return self.batch_sentence_keys([src], [tgt])[0]

    def context_keys(self, src, prefixes) -> np.ndarray:
        """Keys for several prefixes of the same source, one row each.

        Runs the same elementwise recurrence as :meth:`batch_sentence_keys`, so
        a prefix gets bit-identical keys to the stored ones.
        """
        prefixes = [list(p) for p in prefixes]
        n = len(prefixes)
        mean = self.source_mean(src)[None, :]
        lengths = np.array([len(p) for p in prefixes], dtype=np.int64)
        T = int(lengths.max()) if n else 0
        toks = np.full((n, max(T, 1)), BOS, dtype=np.int64)
        for i, p in enumerate(prefixes):
            toks[i, :len(p)] = p
        out = np.empty((n, self.dim), dtype=np.float32)
        acc = np.broadcast_to(self.tgt_emb[BOS], (n, self.dim)).copy()
        norm = np.float32(1.0)
        for t in range(T + 1):
            done = lengths == t
            if done.any():
                out[done] = self._keys_from_state(mean, acc[done], norm)
            if t < T:
                acc = acc * self.decay + self.tgt_emb[toks[:, t]]
                norm = norm * self.decay + np.float32(1.0)
        return out

    def context_key(self, src, prefix) -> np.ndarray:
        return self.context_keys(src, [prefix])[0]

    # distributions

    def distribution_from_key(self, key: np.ndarray, prev: int) -> np.ndarray:
        return self.distributions_from_keys(np.asarray(key)[None, :], [prev])[0]

    def distributions_from_keys(self, keys: np.ndarray, prevs) -> np.ndarray:
        """Next-token distributions for a batch of keys and previous tokens."""
        units = np.asarray(keys, dtype=np.float32) / self.key_scale
        logits = (units @ self.proj.T).astype(np.float64) * self.beta
        logits[:, BOS] = -np.inf
        logits -= logits[:, self._no_bos].max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        out = self.mix * p + (1.0 - self.mix) * self.bigram[np.asarray(prevs, dtype=np.int64)]
        return out / out.sum(axis=1, keepdims=True)

    def mt_distribution(self, src, prefix) -> np.ndarray:
        prefix = list(prefix)
        prev = prefix[-1] if prefix else BOS
        return self.distribution_from_key(self.context_key(src, prefix), prev)


def toy_model(src_vocab: int, tgt_vocab: int, dim: int = 64, seed: int = 0,
              corpus: ParallelCorpus | None = None, **kwargs) -> ToyModel:
    model = ToyModel(src_vocab, tgt_vocab, dim, seed, **kwargs)
    if corpus is not None:
        model.fit_bigram(corpus)
    return model
