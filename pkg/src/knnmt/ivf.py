"""IVFPQ index: coarse k-means partition with residual PQ codes and ADC search."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import binio
from .corevec import assign, as_matrix, kmeans, nearest_centroids
from .errors import FormatError, InvalidArgument, InvalidState
from .pq import DEFAULT_L, PQCodebook, build_luts, encode_batch, read_codebook, train_pq, write_codebook
from .seeds import derive_seed
from .transform import (
    KIND_OPQ,
    KIND_PCA,
    OPQTransform,
    PCATransform,
    apply_chain,
    read_transform,
    train_opq,
    train_pca,
    write_transform,
)

MAGIC = b"KSIX"
VERSION = 1
FLAG_PCA = 1
FLAG_OPQ = 2

# coarse k-means sees at most this many points per centroid
POINTS_PER_CENTROID = 256
# PQ / OPQ training sample cap, in points per codeword
POINTS_PER_CODEWORD = 256
ADD_CHUNK = 1 << 16
SCAN_BUDGET = 1 << 21
# per-list precomputed distance terms are cached only up to this many floats
PRECOMPUTE_LIMIT = 1 << 25


@dataclass(frozen=True)
class SearchParams:
    k: int = 64
    nprobe: int = 32

    def validate(self, nlist: int) -> None:
        if self.k < 1:
            raise InvalidArgument(f"k must be >= 1, got {self.k}")
        if not 1 <= self.nprobe <= nlist:
            raise InvalidArgument(f"nprobe must be in [1, {nlist}], got {self.nprobe}")


def _sample_rows(n: int, cap: int, seed: int) -> np.ndarray | None:
    if n <= cap:
        return None
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=cap, replace=False))


class IVFPQIndex:
    """Coarse centroids plus one inverted list of (id, residual code) per centroid.

    Build with :func:`train_ivfpq` followed by :meth:`add`. Searching is
    read-only and safe from several threads at once.
    """

    def __init__(self, coarse: np.ndarray, codebook: PQCodebook, transforms=(), d_raw: int | None = None):
        self.coarse = as_matrix(coarse, name="coarse centroids")
        self.codebook = codebook
        self.transforms = tuple(transforms)
        d_index = self.coarse.shape[1]
        if codebook.d != d_index:
            raise InvalidArgument(f"codebook dimension {codebook.d} != index dimension {d_index}")
        self.d_raw = d_raw if d_raw is not None else (self.transforms[0].d_in if self.transforms else d_index)
        nlist = self.coarse.shape[0]
        self._ids = [np.empty(0, dtype=np.uint64) for _ in range(nlist)]
        self._codes = [np.empty((0, codebook.M), dtype=np.uint8) for _ in range(nlist)]
        self._pending: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        self._lock = threading.Lock()
        self._list_terms: np.ndarray | None = None
        self._offsets: np.ndarray | None = None
        self.total = 0

    @property
    def nlist(self) -> int:
        return self.coarse.shape[0]

    @property
    def d_index(self) -> int:
        return self.coarse.shape[1]

    @property
    def M(self) -> int:
        return self.codebook.M

    @property
    def L(self) -> int:
        return self.codebook.L

    def _freeze(self) -> None:
        with self._lock:
            if not self._pending and self._offsets is not None:
                return
            for l, parts in sorted(self._pending.items()):
                self._ids[l] = np.concatenate([self._ids[l]] + [p[0] for p in parts])
                self._codes[l] = np.concatenate([self._codes[l]] + [p[1] for p in parts])
            self._pending = {}
            # flat copy of all lists in list order for vectorised scans
            sizes = np.array([ids.shape[0] for ids in self._ids], dtype=np.int64)
            self._offsets = np.concatenate([[0], np.cumsum(sizes)])
            self._all_ids = np.concatenate(self._ids).astype(np.int64)
            self._all_codes = np.concatenate(self._codes)

    def list_ids(self, l: int) -> np.ndarray:
        self._freeze()
        return self._ids[l]

    def list_codes(self, l: int) -> np.ndarray:
        self._freeze()
        return self._codes[l]

    def list_sizes(self) -> np.ndarray:
        self._freeze()
        return np.array([ids.shape[0] for ids in self._ids], dtype=np.int64)

    def transform(self, x) -> np.ndarray:
        x = as_matrix(x, self.d_raw, "vectors")
        return apply_chain(self.transforms, x) if self.transforms else x

    def coarse_assign(self, xt: np.ndarray) -> np.ndarray:
        return assign(xt, self.coarse)[0]

    def _terms(self) -> np.ndarray | None:
        """(nlist, M, L) table of ||c_m||^2 + 2 c_m . w_l, or None when too large to cache."""
        if self.nlist * self.M * self.L > PRECOMPUTE_LIMIT:
            return None
        with self._lock:
            if self._list_terms is None:
                cw = self.codebook.codewords.astype(np.float64)
                c = self.coarse.astype(np.float64).reshape(self.nlist, self.M, 1, -1)
                terms = (c * c).sum(-1) + 2.0 * np.einsum("nmod,mld->nml", c, cw)
                self._list_terms = terms.astype(np.float32)
            return self._list_terms

    def _lut_parts(self, qt: np.ndarray, lists: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """||q_m - w||^2 tables (n, M, L) and 2 q_m . c_m for each probed list (n, p, M)."""
        n, p = lists.shape
        base = build_luts(self.codebook, qt)
        qs = qt.reshape(n, 1, self.M, -1)
        cs = self.coarse[lists].reshape(n, p, self.M, -1)
        cross = np.sum(qs * cs, axis=-1, dtype=np.float32)
        cross *= 2.0
        return base, cross

    def residual_luts(self, qt: np.ndarray, lists: np.ndarray) -> np.ndarray:
        """Distance tables of (query - centroid) for query rows ``qt`` and lists ``lists``.

        ``qt`` is (n, d) in index space and ``lists`` is (n, p); the result is
        (n, p, M, L). Uses ||q - c - w||^2 = ||q - w||^2 + (||c||^2 + 2 c.w) - 2 q.c
        when the per-list term fits the cache, otherwise builds each table directly.
        """
        qt = np.asarray(qt, dtype=np.float32)
        lists = np.asarray(lists, dtype=np.int64)
        n, p = lists.shape
        terms = self._terms()
        if terms is None:
            res = (qt[:, None, :] - self.coarse[lists]).reshape(n * p, self.d_index)
            return build_luts(self.codebook, res).reshape(n, p, self.M, self.L)
        base, cross = self._lut_parts(qt, lists)
        out = np.take(terms, lists, axis=0)
        out += base[:, None]
        out -= cross[..., None]
        np.maximum(out, 0.0, out=out)
        return out

    def add(self, keys, first_id: int | None = None) -> None:
        keys = as_matrix(keys, self.d_raw, "keys")
        n = keys.shape[0]
        if n == 0:
            return
        start = self.total if first_id is None else int(first_id)
        if start < 0:
            raise InvalidArgument(f"first_id must be >= 0, got {start}")
        for s in range(0, n, ADD_CHUNK):
            xt = self.transform(keys[s:s + ADD_CHUNK])
            labels = self.coarse_assign(xt)
            residual = xt - self.coarse[labels]
            codes = encode_batch(self.codebook, residual)
            ids = np.arange(start + s, start + s + xt.shape[0], dtype=np.uint64)
            order = np.argsort(labels, kind="stable")
            bounds = np.searchsorted(labels[order], np.arange(self.nlist + 1))
            with self._lock:
                for l in np.flatnonzero(np.diff(bounds)):
                    sel = order[bounds[l]:bounds[l + 1]]
                    self._pending.setdefault(int(l), []).append((ids[sel], codes[sel]))
        self.total += n

    def search(self, query, params: SearchParams = SearchParams()) -> list[tuple[int, float]]:
        q = np.asarray(query, dtype=np.float32).reshape(1, -1)
        ids, dists = self.search_batch(q, params)
        keep = ids[0] >= 0
        return [(int(i), float(d)) for i, d in zip(ids[0][keep], dists[0][keep])]

    def search_batch(self, queries, params: SearchParams = SearchParams()) -> tuple[np.ndarray, np.ndarray]:
        """k-best (id, ADC distance) per query; rows are padded with id -1 / inf."""
        if self.total == 0:
            raise InvalidState("index is empty")
        params.validate(self.nlist)
        self._freeze()
        qt = self.transform(queries)
        nq, k = qt.shape[0], params.k
        probes, _ = nearest_centroids(qt, self.coarse, params.nprobe)

        out_ids = np.full((nq, k), -1, dtype=np.int64)
        out_dist = np.full((nq, k), np.inf, dtype=np.float64)
        sizes = np.diff(self._offsets)
        per_query = sizes[probes].sum(axis=1)
        max_rows = max(1, SCAN_BUDGET * 8 // (params.nprobe * self.M * self.L))
        s = 0
        while s < nq:
            # bound the candidate and table buffers per block of queries
            e = s + 1
            budget = per_query[s]
            while e < nq and e - s < max_rows and budget + per_query[e] <= SCAN_BUDGET:
                budget += per_query[e]
                e += 1
            self._scan_block(qt[s:e], probes[s:e], k, out_ids[s:e], out_dist[s:e])
            s = e
        return out_ids, out_dist

    def _scan_block(self, qt, probes, k, out_ids, out_dist) -> None:
        nq, nprobe = probes.shape
        M, L = self.M, self.L
        starts = self._offsets[probes].reshape(-1)
        lens = (self._offsets[probes + 1] - self._offsets[probes]).reshape(-1)
        total = int(lens.sum())
        if total == 0:
            return
        # candidate row r belongs to (query, probe) pair owner[r]
        owner = np.repeat(np.arange(nq * nprobe), lens)
        rows = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens) + np.repeat(starts, lens)
        code_pos = self._all_codes[rows].astype(np.intp)
        code_pos += np.arange(M, dtype=np.intp) * L
        terms = self._terms()
        if terms is None:
            luts = self.residual_luts(qt, probes)
            vals = luts.reshape(-1).take(code_pos + (owner * (M * L))[:, None])
        else:
            # the entries residual_luts would produce, evaluated only where a code points
            base, cross = self._lut_parts(qt, probes)
            vals = base.reshape(-1).take(code_pos + ((owner // nprobe) * (M * L))[:, None])
            vals += terms.reshape(-1).take(code_pos + (probes.reshape(-1)[owner] * (M * L))[:, None])
            vals -= cross.reshape(-1, M)[owner]
            np.maximum(vals, 0.0, out=vals)
        vals = vals.T.copy()                                          # (M, total)
        dist = vals[0].astype(np.float64)
        for m in range(1, M):
            dist += vals[m]
        ids = self._all_ids[rows]
        bounds = np.concatenate([[0], np.cumsum(lens.reshape(nq, nprobe).sum(axis=1))])
        for qi in range(nq):
            a, b = bounds[qi], bounds[qi + 1]
            if a == b:
                continue
            d, i = dist[a:b], ids[a:b]
            if b - a > k:
                kth = np.partition(d, k - 1)[k - 1]
                keep = np.flatnonzero(d <= kth)
                d, i = d[keep], i[keep]
            best = np.lexsort((i, d))[:k]
            out_ids[qi, :best.size] = i[best]
            out_dist[qi, :best.size] = d[best]

    # serialization

    def to_bytes(self) -> bytes:
        import io

        buf = io.BytesIO()
        self._write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            self._write(fh)

    def _write(self, fh) -> None:
        self._freeze()
        flags = 0
        for t in self.transforms:
            flags |= FLAG_PCA if isinstance(t, PCATransform) else FLAG_OPQ
        w = binio.Writer(fh)
        w.raw(MAGIC)
        w.pack("IIIIIII", VERSION, flags, self.d_raw, self.d_index, self.nlist, self.M, self.L)
        w.pack("Q", self.total)
        for t in self.transforms:
            write_transform(w, t)
        w.array(self.coarse, np.float32)
        write_codebook(w, self.codebook)
        for ids, codes in zip(self._ids, self._codes):
            w.pack("Q", ids.shape[0])
            w.array(ids, np.uint64)
            w.array(codes, np.uint8)

    @classmethod
    def load(cls, path) -> "IVFPQIndex":
        data = Path(path).read_bytes()
        return cls.from_bytes(data, path=path)

    @classmethod
    def from_bytes(cls, data, path=None, base: int = 0) -> "IVFPQIndex":
        r = binio.Reader(data, path=path, base=base)
        r.magic(MAGIC)
        hdr = r.pos
        version, flags, d_raw, d_index, nlist, M, L = r.unpack("IIIIIII", "header")
        (total,) = r.unpack("Q", "header")
        if version != VERSION:
            r.fail(f"unsupported version {version}", offset=hdr)
        if flags & ~(FLAG_PCA | FLAG_OPQ):
            r.fail(f"unknown flags {flags:#x}", offset=hdr)
        if nlist == 0 or M == 0 or d_index == 0 or d_index % M:
            r.fail(f"invalid index shape nlist={nlist} M={M} d={d_index}", offset=hdr)
        transforms = []
        if flags & FLAG_PCA:
            transforms.append(read_transform(r, KIND_PCA))
        if flags & FLAG_OPQ:
            transforms.append(read_transform(r, KIND_OPQ))
        dim = d_raw
        for t in transforms:
            if t.d_in != dim:
                r.fail(f"transform input dimension {t.d_in} != {dim}")
            dim = t.d_out
        if dim != d_index:
            r.fail(f"transforms produce dimension {dim}, header says {d_index}")
        coarse = r.array(np.float32, nlist * d_index, "coarse centroids").reshape(nlist, d_index)
        cb_at = r.pos
        cb = read_codebook(r)
        if cb.M != M or cb.L != L or cb.d != d_index:
            r.fail("codebook does not match header", offset=cb_at)
        index = cls(coarse, cb, transforms, d_raw=d_raw)
        count = 0
        for l in range(nlist):
            (length,) = r.unpack("Q", f"list {l} length")
            ids = r.array(np.uint64, length, f"list {l} ids")
            codes_at = r.pos
            codes = r.array(np.uint8, length * M, f"list {l} codes").reshape(length, M)
            if length and codes.max() >= L:
                r.fail(f"list {l} holds a code >= L={L}", offset=codes_at)
            index._ids[l] = ids
            index._codes[l] = codes
            count += length
        if count != total:
            r.fail(f"lists hold {count} entries, header says {total}", offset=hdr)
        if not r.at_end():
            r.fail("trailing bytes after last list")
        index.total = total
        return index


def train_ivfpq(sample, nlist: int, M: int, L: int = DEFAULT_L, seed: int = 0,
                use_opq: bool = False, pca_dim: int | None = None,
                kmeans_iters: int = 25, pq_iters: int = 25,
                opq_iters: int = 20, opq_pq_iters: int = 10) -> IVFPQIndex:
    """Train transforms, the coarse quantizer and the residual codebook; returns an empty index."""
    x = as_matrix(sample, name="training sample")
    n, d_raw = x.shape
    if nlist < 1:
        raise InvalidArgument(f"nlist must be >= 1, got {nlist}")
    if n < max(nlist, L):
        raise InvalidArgument(f"training sample has {n} rows, need at least max(nlist, L)={max(nlist, L)}")
    d_index = pca_dim if pca_dim is not None else d_raw
    if M < 1 or d_index % M:
        raise InvalidArgument(f"dimension {d_index} is not divisible by M={M}")
    if not 1 <= L <= 256:
        raise InvalidArgument(f"L must be in [1, 256], got {L}")

    transforms = []
    xt = x
    if pca_dim is not None:
        pca = train_pca(xt, pca_dim)
        transforms.append(pca)
        xt = pca(xt)
    if use_opq:
        sel = _sample_rows(n, POINTS_PER_CODEWORD * L, derive_seed(seed, "opq_sample"))
        opq = train_opq(xt if sel is None else xt[sel], M, L, outer_iters=opq_iters,
                        pq_iters=opq_pq_iters, seed=derive_seed(seed, "opq"))
        # the index keeps the rotation only; its codebook is retrained on residuals
        opq = OPQTransform(R=opq.R)
        transforms.append(opq)
        xt = opq(xt)

    sel = _sample_rows(n, POINTS_PER_CENTROID * nlist, derive_seed(seed, "coarse_sample"))
    km = kmeans(xt if sel is None else xt[sel], nlist, max_iters=kmeans_iters,
                seed=derive_seed(seed, "coarse"))
    coarse = km.centroids

    sel = _sample_rows(n, POINTS_PER_CODEWORD * L, derive_seed(seed, "pq_sample"))
    xp = xt if sel is None else xt[sel]
    residual = xp - coarse[assign(xp, coarse)[0]]
    cb = train_pq(residual, M, L, iters=pq_iters, seed=derive_seed(seed, "pq"))
    return IVFPQIndex(coarse, cb, transforms, d_raw=d_raw)


def flat_residual_adc(index: IVFPQIndex, query, k: int) -> list[tuple[int, float]]:
    """Exhaustive reference search: every stored code, residual tables per list, full sort.

    Deliberately independent of :meth:`IVFPQIndex.search_batch`'s probing and
    merging; intended for tests and benchmarks.
    """
    from .pq import adc_scan

    qt = index.transform(np.asarray(query, dtype=np.float32).reshape(1, -1))
    all_ids, all_dist = [], []
    for l in range(index.nlist):
        ids = index.list_ids(l)
        if ids.shape[0] == 0:
            continue
        lut = index.residual_luts(qt, np.array([[l]]))[0, 0]
        all_ids.append(ids.astype(np.int64))
        all_dist.append(adc_scan(lut, index.list_codes(l)))
    ids = np.concatenate(all_ids)
    dist = np.concatenate(all_dist)
    rows = sorted(zip(dist.tolist(), ids.tolist()))[:k]
    return [(i, d) for d, i in rows]


__all__ = [
    "IVFPQIndex",
    "SearchParams",
    "FormatError",
    "train_ivfpq",
    "flat_residual_adc",
]
