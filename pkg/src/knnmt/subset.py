"""Subset retrieval: search only the tokens of the sentences nearest the input.

A sentence datastore indexes one key per source sentence. For each input the
n nearest sentences are looked up once, their token spans are gathered into a
``SubsetView``, and every decoding step scans the view's flat PQ codes with a
single distance table.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import binio
from .corevec import as_matrix, smallest_k
from .corpus import ParallelCorpus
from .datastore import IndexConfig, KeyStore, TokenStore
from .errors import InvalidArgument, InvalidState, StorageError
from .ivf import IVFPQIndex, SearchParams, train_ivfpq
from .pq import PQCodebook, adc_scan, build_luts, encode_batch, read_codebook, train_pq, write_codebook
from .seeds import derive_seed
from .transform import KIND_OPQ, OPQTransform, read_transform, train_opq, write_transform

SENTENCES_MAGIC = b"KSSD"
CODES_MAGIC = b"KSPQ"
VERSION = 1
SUBSET_N = 512


@dataclass(eq=False)
class SentenceDatastore:
    keys: np.ndarray    # (num sentences, d')
    index: IVFPQIndex
    spans: np.ndarray   # (num sentences, 2): start, length in the token datastore

    def __len__(self) -> int:
        return self.keys.shape[0]

    @property
    def num_tokens(self) -> int:
        return int(self.spans[:, 1].sum()) if len(self) else 0

    def save(self, path) -> None:
        blob = self.index.to_bytes()
        try:
            with open(path, "wb") as fh:
                w = binio.Writer(fh)
                w.raw(SENTENCES_MAGIC)
                w.pack("IQII", VERSION, len(self), self.keys.shape[1], 0)
                w.array(self.spans, np.uint64)
                w.array(self.keys, np.float32)
                w.pack("Q", len(blob))
                w.raw(blob)
                w.align()
        except OSError as exc:
            raise StorageError(f"cannot write sentence datastore {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "SentenceDatastore":
        data = Path(path).read_bytes()
        r = binio.Reader(data, path=path)
        r.magic(SENTENCES_MAGIC)
        version, n, d, _ = r.unpack("IQII", "header")
        if version != VERSION:
            r.fail(f"unsupported version {version}", offset=4)
        spans = r.array(np.uint64, 2 * n, "spans").reshape(n, 2).astype(np.int64)
        keys = r.array(np.float32, n * d, "sentence keys").reshape(n, d)
        (length,) = r.unpack("Q", "index length")
        start = r.pos
        blob = r.take(length, "sentence index")
        r.align()
        index = IVFPQIndex.from_bytes(blob, path=path, base=start)
        if index.total != n:
            r.fail(f"sentence index holds {index.total} entries, expected {n}", offset=start)
        if not r.at_end():
            r.fail("trailing bytes")
        return cls(keys, index, spans)


def sentence_key(model, src) -> np.ndarray:
    """Mean of the model's encoder states for one source sentence."""
    states = np.asarray(model.encoder_states(src), dtype=np.float32)
    return states.mean(axis=0, dtype=np.float32)


def sentence_index_config(**overrides) -> IndexConfig:
    cfg = IndexConfig(nlist=32768, M=64, use_opq=True)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def build_sentence_datastore(model, corpus: ParallelCorpus, cfg: IndexConfig | None = None) -> SentenceDatastore:
    if len(corpus) == 0:
        raise InvalidArgument("corpus is empty")
    cfg = cfg or sentence_index_config()
    keys = np.stack([sentence_key(model, s) for s in corpus.src])
    lengths = corpus.target_lengths
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    spans = np.stack([starts, lengths], axis=1).astype(np.int64)
    index = train_ivfpq(keys, cfg.nlist, cfg.M, cfg.L, seed=cfg.seed, use_opq=cfg.use_opq,
                        pca_dim=cfg.pca_dim, kmeans_iters=cfg.kmeans_iters,
                        pq_iters=cfg.pq_iters, opq_iters=cfg.opq_iters)
    index.add(keys, first_id=0)
    return SentenceDatastore(keys, index, spans)


@dataclass(eq=False)
class FlatCodes:
    """Non-residual PQ codes for every token key, optionally in an OPQ-rotated space."""

    codebook: PQCodebook
    codes: np.ndarray               # (count, M) uint8
    rotation: OPQTransform | None = None

    def __len__(self) -> int:
        return self.codes.shape[0]

    def prepare(self, queries) -> np.ndarray:
        q = as_matrix(queries, self.rotation.d_in if self.rotation else self.codebook.d, "queries")
        return self.rotation(q) if self.rotation is not None else q

    def luts(self, queries) -> np.ndarray:
        return build_luts(self.codebook, self.prepare(queries))

    def save(self, path) -> None:
        try:
            with open(path, "wb") as fh:
                w = binio.Writer(fh)
                w.raw(CODES_MAGIC)
                w.pack("IIIQ", VERSION, int(self.rotation is not None), 0, len(self))
                if self.rotation is not None:
                    write_transform(w, OPQTransform(R=self.rotation.R))
                write_codebook(w, self.codebook)
                w.array(self.codes, np.uint8)
        except OSError as exc:
            raise StorageError(f"cannot write flat codes {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "FlatCodes":
        data = Path(path).read_bytes()
        r = binio.Reader(data, path=path)
        r.magic(CODES_MAGIC)
        version, has_opq, _, count = r.unpack("IIIQ", "header")
        if version != VERSION:
            r.fail(f"unsupported version {version}", offset=4)
        rotation = read_transform(r, KIND_OPQ) if has_opq else None
        at = r.pos
        cb = read_codebook(r)
        if rotation is not None and rotation.d_out != cb.d:
            r.fail("rotation and codebook dimensions differ", offset=at)
        codes_at = r.pos
        codes = r.array(np.uint8, count * cb.M, "codes").reshape(count, cb.M)
        if count and codes.max() >= cb.L:
            r.fail(f"code >= L={cb.L}", offset=codes_at)
        if not r.at_end():
            r.fail("trailing bytes")
        return cls(cb, codes, rotation)


def build_flat_codes(keys: KeyStore, M: int, L: int = 256, use_opq: bool = True, seed: int = 0,
                     opq_iters: int = 20, pq_iters: int = 25) -> FlatCodes:
    cap = 256 * L
    if keys.count <= cap:
        sample = keys.rows(slice(None))
    else:
        rng = np.random.default_rng(derive_seed(seed, "flat_sample"))
        sample = keys.rows(np.sort(rng.choice(keys.count, size=cap, replace=False)))
    if use_opq:
        opq = train_opq(sample, M, L, outer_iters=opq_iters, seed=derive_seed(seed, "flat_opq"))
        rotation, cb = OPQTransform(R=opq.R), opq.codebook
    else:
        rotation, cb = None, train_pq(sample, M, L, iters=pq_iters, seed=derive_seed(seed, "flat_pq"))
    codes = np.empty((keys.count, cb.M), dtype=np.uint8)
    for start, chunk in keys.iter_chunks():
        x = rotation(chunk) if rotation is not None else chunk
        codes[start:start + chunk.shape[0]] = encode_batch(cb, x)
    return FlatCodes(cb, codes, rotation)


@dataclass(eq=False)
class SubsetView:
    ids: np.ndarray        # global token positions
    codes: np.ndarray      # their flat PQ codes
    values: np.ndarray     # their target tokens
    sentences: np.ndarray  # selected sentence ids, ascending

    def __len__(self) -> int:
        return self.ids.shape[0]


def retrieve_subset(sd: SentenceDatastore, src, n: int, model, flat: FlatCodes,
                    tokens: TokenStore, nprobe: int = 32) -> SubsetView:
    if len(sd) == 0:
        raise InvalidState("sentence datastore is empty")
    if n < 1:
        raise InvalidArgument(f"subset size must be >= 1, got {n}")
    if n >= len(sd):
        chosen = np.arange(len(sd))
    else:
        q = sentence_key(model, src)
        hits = sd.index.search(q, SearchParams(k=n, nprobe=min(nprobe, sd.index.nlist)))
        chosen = np.unique(np.array([i for i, _ in hits], dtype=np.int64))
    return view_for_sentences(sd, chosen, flat, tokens)


def view_for_sentences(sd: SentenceDatastore, chosen, flat: FlatCodes, tokens: TokenStore) -> SubsetView:
    chosen = np.unique(np.asarray(chosen, dtype=np.int64))
    spans = sd.spans[chosen]
    if spans.size:
        ids = np.concatenate([np.arange(s, s + l, dtype=np.int64) for s, l in spans])
    else:
        ids = np.empty(0, dtype=np.int64)
    return SubsetView(ids=ids, codes=flat.codes[ids], values=tokens.tokens[ids].astype(np.int64),
                      sentences=chosen)


def _subset_topk(view: SubsetView, lut: np.ndarray, k: int) -> list[tuple[int, float, int]]:
    dist = adc_scan(lut, view.codes)
    pos = smallest_k(dist, k)
    return [(int(view.ids[p]), float(dist[p]), int(view.values[p])) for p in pos]


def subset_search(view: SubsetView, flat, q, k: int) -> list[tuple[int, float, int]]:
    """k nearest tokens of the view as (global token id, ADC distance, value token).

    ``flat`` is either a :class:`FlatCodes` (queries are rotated first) or a
    bare :class:`PQCodebook` whose space the query already lives in.
    """
    if len(view) == 0:
        raise InvalidState("subset view is empty")
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    q = np.asarray(q, dtype=np.float32).reshape(1, -1)
    lut = flat.luts(q)[0] if isinstance(flat, FlatCodes) else build_luts(flat, q)[0]
    return _subset_topk(view, lut, k)


def subset_search_batch(view: SubsetView, flat, queries, k: int) -> list[list[tuple[int, float, int]]]:
    if len(view) == 0:
        raise InvalidState("subset view is empty")
    luts = flat.luts(queries) if isinstance(flat, FlatCodes) else build_luts(flat, queries)
    return [_subset_topk(view, lut, k) for lut in luts]
