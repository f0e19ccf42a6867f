"""Datastore construction: value tokens, key vectors and the search index.

The build runs in three stages. ``store_values`` flattens the target tokens,
``compute_keys`` feeds length-sorted batches through a model adapter and
writes each key back to its canonical row, and ``build_index`` trains and
fills an IVFPQ index by streaming over the key file.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import binio
from .corpus import ParallelCorpus
from .errors import FormatError, InvalidArgument, InvalidState, StorageError
from .ivf import IVFPQIndex, POINTS_PER_CENTROID, train_ivfpq
from .seeds import derive_seed
from .toymodel import batch_sentence_keys

VALUES_MAGIC = b"KSVL"
KEYS_MAGIC = b"KSKY"
VERSION = 1
DTYPE_F32 = 0
KEYS_HEADER = 32
DEFAULT_CHUNK_ROWS = 65536
TIMING_ROWS = ("compute_keys", "train_index", "build_index", "total")


# value tokens


@dataclass(eq=False)
class TokenStore:
    tokens: np.ndarray   # uint32, flattened targets in corpus order
    offsets: np.ndarray  # uint64, sentence i spans offsets[i]:offsets[i+1]

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.uint32)
        self.offsets = np.asarray(self.offsets, dtype=np.uint64)
        if self.offsets.size == 0 or self.offsets[0] != 0 or int(self.offsets[-1]) != self.tokens.size:
            raise InvalidArgument("offsets must start at 0 and end at the token count")
        if np.any(np.diff(self.offsets.astype(np.int64)) <= 0):
            raise InvalidArgument("offsets must be strictly increasing")

    def __len__(self) -> int:
        return int(self.tokens.size)

    @property
    def num_sentences(self) -> int:
        return self.offsets.size - 1

    def span(self, i: int) -> tuple[int, int]:
        start = int(self.offsets[i])
        return start, int(self.offsets[i + 1]) - start

    def sentence(self, i: int) -> np.ndarray:
        start, length = self.span(i)
        return self.tokens[start:start + length]

    def spans(self) -> np.ndarray:
        starts = self.offsets[:-1].astype(np.int64)
        return np.stack([starts, np.diff(self.offsets.astype(np.int64))], axis=1)

    def save(self, path) -> None:
        try:
            with open(path, "wb") as fh:
                w = binio.Writer(fh)
                w.raw(VALUES_MAGIC)
                w.pack("I", VERSION)
                w.pack("QQ", len(self), self.num_sentences)
                w.array(self.offsets, np.uint64)
                w.array(self.tokens, np.uint32)
        except OSError as exc:
            raise StorageError(f"cannot write token store {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "TokenStore":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise StorageError(f"cannot read token store {path}: {exc}") from exc
        r = binio.Reader(data, path=path)
        r.magic(VALUES_MAGIC)
        (version,) = r.unpack("I", "version")
        if version != VERSION:
            r.fail(f"unsupported version {version}", offset=4)
        count, n_sent = r.unpack("QQ", "counts")
        offsets = r.array(np.uint64, n_sent + 1, "offsets")
        tokens = r.array(np.uint32, count, "tokens")
        if not r.at_end():
            r.fail("trailing bytes")
        try:
            return cls(tokens, offsets)
        except InvalidArgument as exc:
            raise FormatError(str(exc), path=path) from None


def store_values(corpus: ParallelCorpus, path=None) -> TokenStore:
    if len(corpus) == 0:
        raise InvalidArgument("corpus is empty")
    corpus.validate()
    lengths = corpus.target_lengths
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.uint64)
    tokens = np.concatenate(corpus.tgt).astype(np.uint32)
    store = TokenStore(tokens, offsets)
    if path is not None:
        store.save(path)
    return store


# key vectors


class KeyStore:
    """Memory-mapped (count x d) float32 key matrix stored after a fixed header.

    Rows are laid out contiguously; ``chunk_rows`` is the unit of streaming
    reads and writes.
    """

    def __init__(self, path, d: int, count: int, chunk_rows: int, data: np.ndarray):
        self.path = Path(path)
        self.d = d
        self.count = count
        self.chunk_rows = chunk_rows
        self.data = data

    def __len__(self) -> int:
        return self.count

    @staticmethod
    def _header(d: int, count: int, chunk_rows: int) -> bytes:
        import struct

        return (KEYS_MAGIC + struct.pack("<IIB3xQI", VERSION, d, DTYPE_F32, count, chunk_rows)
                + b"\x00" * 4)

    @classmethod
    def create(cls, path, d: int, count: int, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> "KeyStore":
        if d < 1 or chunk_rows < 1:
            raise InvalidArgument("key dimension and chunk size must be positive")
        header = cls._header(d, count, chunk_rows)
        assert len(header) == KEYS_HEADER
        try:
            with open(path, "wb") as fh:
                fh.write(header)
                fh.truncate(KEYS_HEADER + 4 * d * count)
            data = (np.memmap(path, dtype="<f4", mode="r+", offset=KEYS_HEADER, shape=(count, d))
                    if count else np.empty((0, d), dtype=np.float32))
        except OSError as exc:
            raise StorageError(f"cannot create key store {path}: {exc}") from exc
        return cls(path, d, count, chunk_rows, data)

    @classmethod
    def open(cls, path) -> "KeyStore":
        import struct

        try:
            size = os.path.getsize(path)
            with open(path, "rb") as fh:
                head = fh.read(KEYS_HEADER)
        except OSError as exc:
            raise StorageError(f"cannot read key store {path}: {exc}") from exc
        if len(head) < KEYS_HEADER:
            raise FormatError("truncated header", offset=len(head), path=path)
        if head[:4] != KEYS_MAGIC:
            raise FormatError(f"bad magic {head[:4]!r}", offset=0, path=path)
        version, d, dtype, count, chunk_rows = struct.unpack("<IIB3xQI", head[4:28])
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", offset=4, path=path)
        if dtype != DTYPE_F32:
            raise FormatError(f"unsupported dtype tag {dtype}", offset=12, path=path)
        expected = KEYS_HEADER + 4 * d * count
        if size != expected:
            raise FormatError(f"file holds {size} bytes, header implies {expected}",
                              offset=min(size, expected), path=path)
        data = (np.memmap(path, dtype="<f4", mode="r", offset=KEYS_HEADER, shape=(count, d))
                if count else np.empty((0, d), dtype=np.float32))
        return cls(path, d, count, chunk_rows, data)

    def write_rows(self, start: int, rows: np.ndarray) -> None:
        self.data[start:start + rows.shape[0]] = rows

    def flush(self) -> None:
        if isinstance(self.data, np.memmap):
            self.data.flush()

    def iter_chunks(self):
        for s in range(0, self.count, self.chunk_rows):
            yield s, np.asarray(self.data[s:s + self.chunk_rows], dtype=np.float32)

    def rows(self, idx) -> np.ndarray:
        return np.asarray(self.data[idx], dtype=np.float32)


# batching


@dataclass
class BatchPlan:
    batches: list[list[int]]
    max_tokens: int

    def padded_tokens(self, lengths) -> int:
        return padding(self.batches, lengths)


def padding(batches, lengths) -> int:
    lengths = np.asarray(lengths)
    total = 0
    for b in batches:
        ls = lengths[b]
        total += int(ls.max()) * len(b) - int(ls.sum())
    return total


def corpus_order_batches(lengths, max_tokens: int) -> list[list[int]]:
    """Greedy packing in corpus order; the baseline length sorting improves on."""
    batches: list[list[int]] = []
    cur: list[int] = []
    longest = 0
    for i, n in enumerate(np.asarray(lengths).tolist()):
        if cur and max(longest, n) * (len(cur) + 1) > max_tokens:
            batches.append(cur)
            cur, longest = [], 0
        cur.append(i)
        longest = max(longest, n)
    if cur:
        batches.append(cur)
    return batches


def plan_batches(corpus: ParallelCorpus, max_tokens: int) -> BatchPlan:
    """Sort by target length and cut the sorted order into padding-minimal batches.

    Batches are contiguous runs of the length-sorted order. The cut points
    minimise total padding (ties: fewer batches, then earlier cuts), which
    makes the plan never worse than any packing of the corpus, including
    greedy corpus-order packing.
    """
    lengths = corpus.target_lengths
    longest = int(lengths.max())
    if max_tokens < longest:
        i = int(np.argmax(lengths))
        raise InvalidArgument(f"sentence {i} has {longest} target tokens, more than max_tokens={max_tokens}")
    order = np.argsort(lengths, kind="stable")
    ls = lengths[order]
    n = ls.size
    # cost of a batch = padded size * (n + 1) + 1, so padding dominates and batch count breaks ties
    big = n + 1
    best = np.zeros(n + 1, dtype=np.int64)
    back = np.zeros(n + 1, dtype=np.int64)
    for j in range(1, n + 1):
        width = ls[j - 1]
        smax = min(j, max_tokens // int(width))
        starts = np.arange(j - smax, j)
        cost = best[starts] + width * (j - starts) * big + 1
        pick = int(np.argmin(cost))
        best[j] = cost[pick]
        back[j] = starts[pick]
    cuts = []
    j = n
    while j > 0:
        cuts.append((int(back[j]), j))
        j = int(back[j])
    batches = [order[a:b].tolist() for a, b in reversed(cuts)]
    return BatchPlan(batches, max_tokens)


def compute_keys(model, corpus: ParallelCorpus, plan: BatchPlan, path,
                 chunk_rows: int = DEFAULT_CHUNK_ROWS, threads: int = 1) -> KeyStore:
    covered = sorted(i for b in plan.batches for i in b)
    if covered != list(range(len(corpus))):
        raise InvalidArgument("batch plan does not cover the corpus exactly once")
    offsets = np.concatenate([[0], np.cumsum(corpus.target_lengths)])
    store = KeyStore.create(path, model.dim, int(offsets[-1]), chunk_rows)

    def run(batch):
        keys = batch_sentence_keys(model, [corpus.src[i] for i in batch], [corpus.tgt[i] for i in batch])
        for i, k in zip(batch, keys):
            if k.shape != (corpus.tgt[i].size, model.dim):
                raise InvalidArgument(
                    f"model returned keys of shape {k.shape} for sentence {i}, "
                    f"expected {(corpus.tgt[i].size, model.dim)}")
        return batch, keys

    def write(result):
        batch, keys = result
        for i, k in zip(batch, keys):
            store.write_rows(int(offsets[i]), k)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            for result in pool.map(run, plan.batches):
                write(result)
    else:
        for batch in plan.batches:
            write(run(batch))
    store.flush()
    return store


# index


@dataclass
class IndexConfig:
    nlist: int = 1024
    M: int = 64
    L: int = 256
    use_opq: bool = False
    pca_dim: int | None = None
    seed: int = 0
    kmeans_iters: int = 25
    pq_iters: int = 25
    opq_iters: int = 20

    def validate(self, d: int | None = None) -> None:
        """Static checks that need no data; ``d`` is the raw key dimension when known."""
        if self.nlist < 1:
            raise InvalidArgument(f"nlist must be >= 1, got {self.nlist}")
        if self.M < 1:
            raise InvalidArgument(f"M must be >= 1, got {self.M}")
        if not 1 <= self.L <= 256:
            raise InvalidArgument(f"L must be in [1, 256], got {self.L}")
        for name in ("kmeans_iters", "pq_iters", "opq_iters"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.pca_dim is not None:
            if self.pca_dim < 1 or (d is not None and self.pca_dim > d):
                raise InvalidArgument(f"pca_dim must be in [1, {d}], got {self.pca_dim}")
        d_index = self.pca_dim if self.pca_dim is not None else d
        if d_index is not None and d_index % self.M:
            raise InvalidArgument(f"dimension {d_index} is not divisible by M={self.M}")


@dataclass
class TimingReport:
    seconds: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out = {name: float(self.seconds.get(name, 0.0)) for name in TIMING_ROWS[:-1]}
        out["total"] = float(sum(out.values()))
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_text(self) -> str:
        rows = self.as_dict()
        lines = [f"{'stage':<14}{'seconds':>12}"]
        lines += [f"{name:<14}{rows[name]:>12.1f}" for name in TIMING_ROWS]
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def training_sample(keys: KeyStore, cfg: IndexConfig) -> np.ndarray:
    """Seeded uniform sample of the key rows used for index training."""
    cap = max(POINTS_PER_CENTROID * cfg.nlist, 256 * cfg.L)
    if keys.count <= cap:
        return keys.rows(slice(None))
    rng = np.random.default_rng(derive_seed(cfg.seed, "train_sample"))
    idx = np.sort(rng.choice(keys.count, size=cap, replace=False))
    return keys.rows(idx)


def build_index(keys: KeyStore, cfg: IndexConfig, path=None,
                report: TimingReport | None = None) -> tuple[IVFPQIndex, TimingReport]:
    if keys.count == 0:
        raise InvalidState("key store is empty")
    cfg.validate(keys.d)
    report = report if report is not None else TimingReport()
    t0 = time.perf_counter()
    sample = training_sample(keys, cfg)
    index = train_ivfpq(sample, cfg.nlist, cfg.M, cfg.L, seed=cfg.seed, use_opq=cfg.use_opq,
                        pca_dim=cfg.pca_dim, kmeans_iters=cfg.kmeans_iters,
                        pq_iters=cfg.pq_iters, opq_iters=cfg.opq_iters)
    t1 = time.perf_counter()
    for start, chunk in keys.iter_chunks():
        index.add(chunk, first_id=start)
    if path is not None:
        index.save(path)
    t2 = time.perf_counter()
    report.seconds["train_index"] = t1 - t0
    report.seconds["build_index"] = t2 - t1
    return index, report


def build_datastore(model, corpus: ParallelCorpus, workdir, cfg: IndexConfig,
                    max_tokens: int = 4096, threads: int = 1):
    """Run all three stages into ``workdir``; returns (tokens, keys, index, report)."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    tokens = store_values(corpus, workdir / "values.ksvl")
    report = TimingReport()
    t0 = time.perf_counter()
    plan = plan_batches(corpus, max_tokens)
    keys = compute_keys(model, corpus, plan, workdir / "keys.ksky", threads=threads)
    report.seconds["compute_keys"] = time.perf_counter() - t0
    index, report = build_index(keys, cfg, workdir / "index.ksix", report)
    report.save(workdir / "timing.json")
    return tokens, keys, index, report
