"""Vector pre-transformations applied before quantization: PCA and OPQ."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import binio
from .corevec import as_matrix, as_vector, lloyd
from .errors import InvalidArgument
from .pq import (
    PQCodebook,
    _check_train_args,
    _encode64,
    _train_codewords,
    read_codebook,
    write_codebook,
)

KIND_PCA = 1
KIND_OPQ = 2


@dataclass(frozen=True, eq=False)
class PCATransform:
    W: np.ndarray   # (d_out, d_in), rows orthonormal, descending variance
    mu: np.ndarray  # (d_in,)

    def __post_init__(self):
        # C-ordered float32 so in-memory and loaded transforms take the same BLAS path
        object.__setattr__(self, "W", np.ascontiguousarray(self.W, dtype=np.float32))
        object.__setattr__(self, "mu", np.ascontiguousarray(self.mu, dtype=np.float32))

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def __call__(self, x) -> np.ndarray:
        return apply_pca_batch(self, x)

    def __eq__(self, other):
        return (isinstance(other, PCATransform) and np.array_equal(self.W, other.W)
                and np.array_equal(self.mu, other.mu))


@dataclass(frozen=True, eq=False)
class OPQTransform:
    R: np.ndarray                        # (d, d) orthogonal rotation
    codebook: PQCodebook | None = None   # PQ trained in the rotated space

    def __post_init__(self):
        object.__setattr__(self, "R", np.ascontiguousarray(self.R, dtype=np.float32))

    @property
    def d_in(self) -> int:
        return self.R.shape[1]

    @property
    def d_out(self) -> int:
        return self.R.shape[0]

    def __call__(self, x) -> np.ndarray:
        return apply_opq_batch(self, x)

    def __eq__(self, other):
        return (isinstance(other, OPQTransform) and np.array_equal(self.R, other.R)
                and self.codebook == other.codebook)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each row so its first nonzero component is positive."""
    out = vecs.copy()
    for i, row in enumerate(out):
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            out[i] = -row
    return out


def train_pca(data, d_out: int) -> PCATransform:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument(f"data must be 2-D, got shape {x.shape}")
    n, d_in = x.shape
    if d_out < 1 or d_out > d_in:
        raise InvalidArgument(f"d_out must be in [1, {d_in}], got {d_out}")
    if n < d_out:
        raise InvalidArgument(f"need at least d_out={d_out} rows, got {n}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = (xc.T @ xc) / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:d_out]
    W = _fix_signs(evecs[:, order].T)
    return PCATransform(W=W.astype(np.float32), mu=mu.astype(np.float32))


_APPLY_ROWS = 8192


def row_matmul(x: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``x @ A.T`` with a fixed float64 accumulation order per row.

    BLAS picks different reduction orders for different batch shapes, so a
    row's result could depend on what it was batched with; this does not.
    """
    At = np.asarray(A, dtype=np.float64).T.copy()   # (d_in, d_out)
    d_in, d_out = At.shape
    out = np.empty((x.shape[0], d_out), dtype=np.float32)
    acc = np.empty((d_out, _APPLY_ROWS))
    tmp = np.empty((d_out, _APPLY_ROWS))
    for s in range(0, x.shape[0], _APPLY_ROWS):
        xT = np.asarray(x[s:s + _APPLY_ROWS], dtype=np.float64).T.copy()
        b = xT.shape[1]
        a, t = acc[:, :b], tmp[:, :b]
        np.multiply(At[0][:, None], xT[0], out=a)
        for j in range(1, d_in):
            np.multiply(At[j][:, None], xT[j], out=t)
            a += t
        out[s:s + b] = a.T
    return out


def apply_pca_batch(t: PCATransform, x) -> np.ndarray:
    x = as_matrix(x, t.d_in, "vectors")
    return row_matmul(x - t.mu, t.W)


def apply_pca(t: PCATransform, v) -> np.ndarray:
    v = as_vector(v, t.d_in)
    return apply_pca_batch(t, v[None, :])[0]


def procrustes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Orthogonal R minimising ||x R^T - y||_F."""
    u, _, vt = np.linalg.svd(x.T @ y)
    # x R^T ~ y with R^T = u vt
    return (u @ vt).T


def orthogonality_error(R: np.ndarray) -> float:
    R = np.asarray(R, dtype=np.float64)
    return float(np.linalg.norm(R.T @ R - np.eye(R.shape[1])))


def _mse(x: np.ndarray, codewords: np.ndarray) -> tuple[float, np.ndarray]:
    M, _, dsub = codewords.shape
    codes = _encode64(codewords, x)
    recon = codewords[np.arange(M)[None, :], codes].reshape(x.shape[0], M * dsub)
    diff = x - recon
    return float(np.einsum("ij,ij->", diff, diff) / x.shape[0]), recon


def train_opq(data, M: int, L: int = 256, outer_iters: int = 20, pq_iters: int = 10,
              seed: int = 0, trace: list | None = None) -> OPQTransform:
    """Alternate PQ codeword refreshes with Procrustes rotation updates.

    Each outer iteration encodes the rotated data, solves for the rotation
    that best maps the data onto its reconstruction, and then refreshes the
    codewords by Lloyd iterations warm-started from the previous ones. When
    ``trace`` is a list, one dict per stage is appended with the training-set
    MSE and the rotation's orthogonality error.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument(f"data must be 2-D, got shape {x.shape}")
    n, d = x.shape
    _check_train_args(n, d, M, L)
    if outer_iters < 0:
        raise InvalidArgument(f"outer_iters must be >= 0, got {outer_iters}")
    dsub = d // M

    R = np.eye(d)
    cw = _train_codewords(x, M, L, pq_iters, seed)
    mse, recon = _mse(x, cw)
    if trace is not None:
        trace.append({"iteration": 0, "mse": mse, "orthogonality": orthogonality_error(R)})

    for it in range(1, outer_iters + 1):
        R = procrustes(x, recon)
        xr = x @ R.T
        new = np.empty_like(cw)
        for m in range(M):
            sub = np.ascontiguousarray(xr[:, m * dsub:(m + 1) * dsub])
            new[m] = lloyd(sub, cw[m], pq_iters)[0]
        cw = new
        mse, recon = _mse(xr, cw)
        if trace is not None:
            trace.append({"iteration": it, "mse": mse, "orthogonality": orthogonality_error(R)})

    return OPQTransform(R=R.astype(np.float32), codebook=PQCodebook(cw))


def apply_opq_batch(t: OPQTransform, x) -> np.ndarray:
    x = as_matrix(x, t.d_in, "vectors")
    return row_matmul(x, t.R)


def apply_opq(t: OPQTransform, v) -> np.ndarray:
    v = as_vector(v, t.d_in)
    return apply_opq_batch(t, v[None, :])[0]


def apply_chain(transforms, x) -> np.ndarray:
    out = as_matrix(x)
    for t in transforms:
        out = t(out)
    return out


def write_transform(w: binio.Writer, t) -> None:
    if isinstance(t, PCATransform):
        w.pack("IIII", KIND_PCA, t.d_in, t.d_out, 0)
        w.array(t.mu, np.float32)
        w.array(t.W, np.float32)
    elif isinstance(t, OPQTransform):
        w.pack("IIII", KIND_OPQ, t.d_in, int(t.codebook is not None), 0)
        w.array(t.R, np.float32)
        if t.codebook is not None:
            write_codebook(w, t.codebook)
    else:
        raise InvalidArgument(f"unknown transform type {type(t).__name__}")


def read_transform(r: binio.Reader, expected_kind: int | None = None):
    start = r.pos
    kind, a, b, _ = r.unpack("IIII", "transform header")
    if expected_kind is not None and kind != expected_kind:
        r.fail(f"expected transform kind {expected_kind}, found {kind}", offset=start)
    if kind == KIND_PCA:
        if b == 0 or b > a:
            r.fail(f"invalid PCA dimensions d_in={a} d_out={b}", offset=start)
        mu = r.array(np.float32, a, "PCA mean")
        W = r.array(np.float32, a * b, "PCA matrix").reshape(b, a)
        return PCATransform(W=W, mu=mu)
    if kind == KIND_OPQ:
        if a == 0:
            r.fail("invalid OPQ dimension 0", offset=start)
        R = r.array(np.float32, a * a, "OPQ rotation").reshape(a, a)
        cb = read_codebook(r) if b else None
        return OPQTransform(R=R, codebook=cb)
    r.fail(f"unknown transform kind {kind}", offset=start)
