"""Product quantization: codebook training, encoding, and ADC search over codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import binio
from .corevec import as_matrix, as_vector, kmeans_plusplus, lloyd, smallest_k
from .errors import InvalidArgument, InvalidState
from .seeds import derive_seed

DEFAULT_L = 256
MAX_L = 256
CODEBOOK_MAGIC = b"KSCB"
_ENCODE_CHUNK = 1 << 16


@dataclass(frozen=True)
class PQCodebook:
    """``codewords[m, l]`` is the l-th codeword of subspace m (shape M x L x dsub)."""

    codewords: np.ndarray

    def __post_init__(self):
        cw = np.ascontiguousarray(self.codewords, dtype=np.float32)
        if cw.ndim != 3:
            raise InvalidArgument(f"codewords must be 3-D (M, L, dsub), got {cw.shape}")
        if cw.shape[1] > MAX_L:
            raise InvalidArgument(f"L={cw.shape[1]} does not fit 8-bit codes")
        if not np.all(np.isfinite(cw)):
            raise InvalidArgument("codewords contain non-finite values")
        cw.setflags(write=False)
        object.__setattr__(self, "codewords", cw)

    @property
    def M(self) -> int:
        return self.codewords.shape[0]

    @property
    def L(self) -> int:
        return self.codewords.shape[1]

    @property
    def dsub(self) -> int:
        return self.codewords.shape[2]

    @property
    def d(self) -> int:
        return self.M * self.dsub

    def __eq__(self, other):
        return isinstance(other, PQCodebook) and np.array_equal(self.codewords, other.codewords)

    __hash__ = None


def _check_train_args(n: int, d: int, M: int, L: int) -> None:
    if M < 1 or d % M != 0:
        raise InvalidArgument(f"dimension {d} is not divisible by M={M}")
    if not 1 <= L <= MAX_L:
        raise InvalidArgument(f"L must be in [1, {MAX_L}], got {L}")
    if n < L:
        raise InvalidArgument(f"need at least L={L} training vectors, got {n}")


def _train_codewords(x: np.ndarray, M: int, L: int, iters: int, seed: int,
                     init: np.ndarray | None = None) -> np.ndarray:
    """Float64 per-subspace k-means; ``init`` warm-starts from previous codewords."""
    n, d = x.shape
    dsub = d // M
    out = np.empty((M, L, dsub), dtype=np.float64)
    for m in range(M):
        sub = np.ascontiguousarray(x[:, m * dsub:(m + 1) * dsub], dtype=np.float64)
        if init is None:
            start = kmeans_plusplus(sub, L, np.random.default_rng(derive_seed(seed, f"pq/{m}")))
        else:
            start = np.asarray(init[m], dtype=np.float64)
        out[m] = lloyd(sub, start, iters)[0]
    return out


def train_pq(keys, M: int, L: int = DEFAULT_L, iters: int = 25, seed: int = 0) -> PQCodebook:
    x = np.asarray(keys, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument(f"keys must be 2-D, got shape {x.shape}")
    _check_train_args(x.shape[0], x.shape[1], M, L)
    return PQCodebook(_train_codewords(x, M, L, iters, seed))


def _encode64(codewords: np.ndarray, x: np.ndarray) -> np.ndarray:
    M, L, dsub = codewords.shape
    n = x.shape[0]
    codes = np.empty((n, M), dtype=np.uint8)
    cw = np.asarray(codewords, dtype=np.float64)
    cw_sq = (cw * cw).sum(-1)
    for s in range(0, n, _ENCODE_CHUNK):
        xb = np.asarray(x[s:s + _ENCODE_CHUNK], dtype=np.float64).reshape(-1, M, dsub)
        for m in range(M):
            sub = xb[:, m, :]
            # ||x||^2 is constant per row, so argmin over -2xc + ||c||^2 suffices
            d = cw_sq[m][None, :] - 2.0 * (sub @ cw[m].T)
            codes[s:s + _ENCODE_CHUNK, m] = np.argmin(d, axis=1)
    return codes


def encode_batch(cb: PQCodebook, x) -> np.ndarray:
    """Encode every row of ``x``; returns an (n, M) uint8 array."""
    x = as_matrix(x, cb.d, "vectors")
    return _encode64(cb.codewords, x)


def encode(cb: PQCodebook, v) -> np.ndarray:
    v = as_vector(v, cb.d)
    return _encode64(cb.codewords, v[None, :])[0]


def _check_codes(cb: PQCodebook, codes: np.ndarray) -> np.ndarray:
    c = np.asarray(codes)
    if c.shape[-1] != cb.M:
        raise InvalidArgument(f"code has {c.shape[-1]} entries, expected M={cb.M}")
    if c.size and (c.min() < 0 or c.max() >= cb.L):
        raise InvalidArgument(f"code entry out of range [0, {cb.L})")
    return c.astype(np.intp)


def decode_batch(cb: PQCodebook, codes) -> np.ndarray:
    c = _check_codes(cb, codes).reshape(-1, cb.M)
    out = cb.codewords[np.arange(cb.M)[None, :], c]  # (n, M, dsub)
    return out.reshape(c.shape[0], cb.d)


def decode(cb: PQCodebook, code) -> np.ndarray:
    return decode_batch(cb, np.asarray(code).reshape(1, -1))[0]


def build_luts(cb: PQCodebook, queries) -> np.ndarray:
    """Distance tables for a batch of queries: (n, M, L) float32."""
    q = as_matrix(queries, cb.d, "queries")
    n = q.shape[0]
    out = np.zeros((n, cb.M, cb.L), dtype=np.float32)
    step = max(1, (1 << 22) // (cb.M * cb.L))
    cw = np.ascontiguousarray(cb.codewords.transpose(2, 0, 1))     # (dsub, M, L)
    for s in range(0, n, step):
        qb = q[s:s + step].reshape(-1, cb.M, cb.dsub)
        acc = out[s:s + step]
        # summed sequentially over the sub-dimensions, in float32
        for j in range(cb.dsub):
            diff = qb[:, :, j, None] - cw[j]
            diff *= diff
            acc += diff
    return out


def build_lut(cb: PQCodebook, q) -> np.ndarray:
    """table[m, l] = squared distance between query sub-vector m and codeword l."""
    q = as_vector(q, cb.d, "query")
    return build_luts(cb, q[None, :])[0]


def adc_distance(lut: np.ndarray, code) -> float:
    total = 0.0
    for m, c in enumerate(np.asarray(code).tolist()):
        total += float(lut[m, c])
    return total


def adc_scan(lut: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """ADC distances of every code row, accumulated in subspace order in float64.

    The accumulation order matches ``adc_distance`` exactly, so both paths
    produce bit-identical values.
    """
    codes = np.asarray(codes)
    M = lut.shape[0]
    if codes.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    dist = lut[0, codes[:, 0]].astype(np.float64)
    for m in range(1, M):
        dist += lut[m, codes[:, m]]
    return dist


def adc_topk(lut: np.ndarray, codes, k: int) -> list[tuple[int, float]]:
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise InvalidState("no codes to search")
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    dist = adc_scan(lut, codes)
    idx = smallest_k(dist, k)
    return [(int(i), float(dist[i])) for i in idx]


def write_codebook(w: binio.Writer, cb: PQCodebook) -> None:
    w.raw(CODEBOOK_MAGIC)
    w.pack("III", cb.M, cb.L, cb.dsub)
    w.array(cb.codewords, np.float32)


def read_codebook(r: binio.Reader) -> PQCodebook:
    r.magic(CODEBOOK_MAGIC)
    start = r.pos
    M, L, dsub = r.unpack("III", "codebook header")
    if M == 0 or dsub == 0 or not 1 <= L <= MAX_L:
        r.fail(f"invalid codebook shape M={M} L={L} dsub={dsub}", offset=start)
    cw = r.array(np.float32, M * L * dsub, "codewords").reshape(M, L, dsub)
    return PQCodebook(cw)
