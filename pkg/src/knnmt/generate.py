"""kNN-interpolated decoding.

At every step each live hypothesis queries the datastore with its decoder
key, turns the retrieved neighbors into a token distribution, and mixes that
linearly with the model's own distribution before the beam is expanded.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corevec import smallest_k
from .datastore import TokenStore
from .errors import InvalidArgument, InvalidState
from .ivf import IVFPQIndex, SearchParams
from .subset import SUBSET_N, FlatCodes, SentenceDatastore, retrieve_subset, subset_search_batch

LOG_FLOOR = 1e-12


@dataclass
class KNNConfig:
    k: int = 64
    tau: float = 100.0
    lam: float = 0.4
    nprobe: int = 32
    subset_n: int | None = SUBSET_N
    mode: str = "vanilla"

    def validate(self) -> None:
        if self.k < 1:
            raise InvalidArgument(f"k must be >= 1, got {self.k}")
        if not self.tau > 0:
            raise InvalidArgument(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidArgument(f"lambda must be in [0, 1], got {self.lam}")
        if self.nprobe < 1:
            raise InvalidArgument(f"nprobe must be >= 1, got {self.nprobe}")
        if self.mode not in ("vanilla", "subset", "base"):
            raise InvalidArgument(f"unknown mode {self.mode!r}")
        if self.mode == "subset" and (self.subset_n is None or self.subset_n < 1):
            raise InvalidArgument("subset mode needs subset_n >= 1")


class NoNeighbors(InvalidState):
    """Retrieval returned nothing; callers fall back to the model distribution."""


def pknn(neighbors, tau: float, vocab_size: int) -> np.ndarray:
    """Normalised sum of exp(-distance / tau) per retrieved value token.

    ``neighbors`` is a sequence of (value, distance) pairs.
    """
    if len(neighbors) == 0:
        raise NoNeighbors("no neighbors retrieved")
    values = np.fromiter((v for v, _ in neighbors), dtype=np.int64, count=len(neighbors))
    dists = np.fromiter((d for _, d in neighbors), dtype=np.float64, count=len(neighbors))
    return pknn_arrays(values, dists, tau, vocab_size)


def pknn_arrays(values: np.ndarray, dists: np.ndarray, tau: float, vocab_size: int) -> np.ndarray:
    """:func:`pknn` on parallel value / distance arrays."""
    if values.size == 0:
        raise NoNeighbors("no neighbors retrieved")
    if values.min() < 0 or values.max() >= vocab_size:
        raise InvalidArgument("neighbor value outside the vocabulary")
    # shifting by the smallest distance cancels in the normalisation and avoids underflow
    w = np.exp(-(dists - dists.min()) / tau)
    p = np.bincount(values, weights=w, minlength=vocab_size)
    return p / p.sum()


def interpolate(p_knn, p_mt, lam: float) -> np.ndarray:
    p_knn = np.asarray(p_knn, dtype=np.float64)
    p_mt = np.asarray(p_mt, dtype=np.float64)
    if p_knn.shape != p_mt.shape:
        raise InvalidArgument(f"length mismatch: {p_knn.shape} vs {p_mt.shape}")
    if not 0.0 <= lam <= 1.0:
        raise InvalidArgument(f"lambda must be in [0, 1], got {lam}")
    return lam * p_knn + (1.0 - lam) * p_mt


# retrieval back ends; ``retrieve`` maps a (n, d) key batch to per-row (values, distances)


class VanillaRetriever:
    def __init__(self, index: IVFPQIndex, tokens: TokenStore, k: int, nprobe: int):
        if index.total != len(tokens):
            raise InvalidArgument(f"index holds {index.total} keys but the token store has {len(tokens)}")
        self.index, self.tokens = index, tokens
        self.params = SearchParams(k=k, nprobe=min(nprobe, index.nlist))

    def for_source(self, src) -> "VanillaRetriever":
        return self

    def retrieve(self, keys):
        ids, dists = self.index.search_batch(keys, self.params)
        out = []
        for row_ids, row_d in zip(ids, dists):
            keep = row_ids >= 0
            out.append((self.tokens.tokens[row_ids[keep]].astype(np.int64), row_d[keep]))
        return out


class SubsetRetriever:
    def __init__(self, sentences: SentenceDatastore, flat: FlatCodes, tokens: TokenStore, model,
                 k: int, n: int, nprobe: int):
        if len(flat) != len(tokens):
            raise InvalidArgument(f"flat codes hold {len(flat)} keys but the token store has {len(tokens)}")
        self.sentences, self.flat, self.tokens, self.model = sentences, flat, tokens, model
        self.k, self.n, self.nprobe = k, n, nprobe
        self.view = None

    def for_source(self, src) -> "SubsetRetriever":
        other = SubsetRetriever.__new__(SubsetRetriever)
        other.__dict__.update(self.__dict__)
        other.view = retrieve_subset(self.sentences, src, self.n, self.model, self.flat,
                                     self.tokens, self.nprobe)
        return other

    def retrieve(self, keys):
        if self.view is None:
            raise InvalidState("call for_source() before retrieving")
        if len(self.view) == 0:
            return [(np.empty(0, np.int64), np.empty(0)) for _ in range(len(keys))]
        out = []
        for hits in subset_search_batch(self.view, self.flat, keys, self.k):
            out.append((np.array([v for _, _, v in hits], dtype=np.int64),
                        np.array([d for _, d, _ in hits], dtype=np.float64)))
        return out


@dataclass
class Hypothesis:
    tokens: list[int]
    logp: float = 0.0
    finished: bool = False
    knn_hits: list[int] = field(default_factory=list)


@dataclass
class Translation:
    tokens: list[int]
    score: float
    steps: int
    knn_hits: list[int]
    warnings: list[str] = field(default_factory=list)
    subset_size: int | None = None


def _keys(model, src, prefixes) -> np.ndarray:
    batched = getattr(model, "context_keys", None)
    if batched is not None:
        return np.asarray(batched(src, prefixes), dtype=np.float32)
    return np.stack([model.context_key(src, p) for p in prefixes]).astype(np.float32)


def _mt(model, src, prefixes, keys) -> np.ndarray:
    batched = getattr(model, "distributions_from_keys", None)
    if batched is not None:
        prevs = [p[-1] if p else model.bos for p in prefixes]
        return np.asarray(batched(keys, prevs), dtype=np.float64)
    return np.stack([np.asarray(model.mt_distribution(src, p), dtype=np.float64) for p in prefixes])


def translate(model, retriever, src, cfg: KNNConfig, beam: int = 5, length_penalty: float = 1.0,
              max_len: int | None = None) -> Translation:
    """Beam search over the interpolated distribution.

    ``retriever`` may be None (model only). Finished hypotheses are ranked by
    log-probability divided by length ** length_penalty; decoding stops when
    the worst of the ``beam`` best finished ones outscores every live one at
    its current length.
    """
    cfg.validate()
    if beam < 1:
        raise InvalidArgument(f"beam must be >= 1, got {beam}")
    src = [int(t) for t in src]
    max_len = max_len if max_len is not None else 2 * len(src) + 10
    V, eos, bos = model.tgt_vocab, model.eos, model.bos
    use_knn = retriever is not None and cfg.lam > 0.0 and cfg.mode != "base"
    warnings: list[str] = []
    subset_size = None
    if use_knn:
        retriever = retriever.for_source(src)
        view = getattr(retriever, "view", None)
        if view is not None:
            subset_size = len(view)
            if subset_size == 0:
                warnings.append("empty subset; using the model distribution only")

    def norm(h: Hypothesis) -> float:
        return h.logp / (len(h.tokens) ** length_penalty) if h.tokens else h.logp

    live = [Hypothesis(tokens=[])]
    finished: list[Hypothesis] = []
    steps = 0
    for _ in range(max_len):
        steps += 1
        prefixes = [h.tokens for h in live]
        keys = _keys(model, src, prefixes)
        hits = retriever.retrieve(keys) if use_knn else None
        p_mt = _mt(model, src, prefixes, keys)
        scores = np.empty((len(live), V), dtype=np.float64)
        counts = []
        for i, h in enumerate(live):
            p = p_mt[i]
            n_hits = 0
            if hits is not None:
                values, dists = hits[i]
                n_hits = int(values.size)
                if n_hits:
                    p = interpolate(pknn_arrays(values, dists, cfg.tau, V), p, cfg.lam)
            counts.append(n_hits)
            scores[i] = h.logp + np.log(np.maximum(p, LOG_FLOOR))
            scores[i, bos] = -np.inf
        top = smallest_k(-scores.ravel(), 2 * beam)
        new_live: list[Hypothesis] = []
        for rank, flat in enumerate(top.tolist()):
            i, tok = divmod(flat, V)
            h = live[i]
            cand = Hypothesis(h.tokens + [tok], float(scores[i, tok]), tok == eos, h.knn_hits + [counts[i]])
            if tok == eos:
                if rank < beam:
                    finished.append(cand)
            elif len(new_live) < beam:
                new_live.append(cand)
        # keep the best `beam` finished hypotheses; stable sort keeps earlier ones on ties
        finished = sorted(finished, key=norm, reverse=True)[:beam]
        live = new_live
        if not live:
            break
        # done once no live hypothesis scores better, at its current length, than the worst kept one
        if len(finished) >= beam and norm(finished[-1]) >= max(norm(h) for h in live):
            break
    # hypotheses still live at max_len compete with the finished ones; after an early
    # stop none of them can win, and max keeps the first (finished) of equal scores
    best = max(finished + live, key=norm)
    return Translation(best.tokens, norm(best), steps, best.knn_hits, warnings, subset_size)


def translate_all(model, retriever, sources, cfg: KNNConfig, beam: int = 5, length_penalty: float = 1.0,
                  max_len: int | None = None, threads: int = 1):
    """Translate several sources; returns (translations, summary dict)."""
    t0 = time.perf_counter()

    def one(src):
        return translate(model, retriever, src, cfg, beam, length_penalty, max_len)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, sources))
    else:
        results = [one(s) for s in sources]
    wall = time.perf_counter() - t0
    n_tokens = sum(len(r.tokens) for r in results)
    summary = {
        "sentences": len(results),
        "tokens": n_tokens,
        "wall_seconds": wall,
        "tok_per_s": n_tokens / wall if wall > 0 else math.inf,
        "mode": cfg.mode,
        "knn_per_hypothesis": True,
    }
    sizes = [r.subset_size for r in results if r.subset_size is not None]
    if sizes:
        summary["subset_sizes"] = {"min": min(sizes), "max": max(sizes), "mean": sum(sizes) / len(sizes)}
    return results, summary


def token_accuracy(hyps, refs) -> float:
    """Position-wise matches over reference length, pooled over the corpus."""
    correct = total = 0
    for h, r in zip(hyps, refs):
        r = list(r)
        h = list(h)
        correct += sum(1 for a, b in zip(h, r) if a == b)
        total += len(r)
    return correct / total if total else 0.0
