"""Dense vector primitives and Lloyd's k-means.

Vectors are 1-D ``float32`` arrays and vector matrices are row-major 2-D
``float32`` arrays. Training code works in float64 internally and hands back
float32 results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, InvalidState

# rows per block when materialising (rows x centroids) distance tiles
_CHUNK_ELEMS = 1 << 22
CONVERGENCE_TOL = 1e-4


def as_vector(v, dim: int | None = None, name: str = "vector") -> np.ndarray:
    a = np.asarray(v, dtype=np.float32)
    if a.ndim != 1:
        raise InvalidArgument(f"{name} must be 1-D, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise InvalidArgument(f"{name} has length {a.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument(f"{name} contains non-finite values")
    return a


def as_matrix(x, dim: int | None = None, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float32)
    if a.ndim == 1 and a.size == 0:
        a = a.reshape(0, dim or 0)
    if a.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {a.shape}")
    if dim is not None and a.shape[1] != dim:
        raise InvalidArgument(f"{name} has dimension {a.shape[1]}, expected {dim}")
    return np.ascontiguousarray(a)


def squared_l2(a, b) -> float:
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgument(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    # float32 accumulation; numpy sums contiguous float arrays pairwise
    return float(np.sum(diff * diff, dtype=np.float32))


def _row_chunk(n_cols: int) -> int:
    return max(1, _CHUNK_ELEMS // max(1, n_cols))


def sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared distances between rows of ``x`` and rows of ``c`` in float64."""
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    d = (x * x).sum(1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def assign(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest row of ``c`` for every row of ``x``; ties go to the lower index.

    Returns the assignment and the exact (direct difference) squared distance
    of each row to its assigned centroid.
    """
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    c64 = np.asarray(c, dtype=np.float64)
    c_sq = (c64 * c64).sum(1)
    step = _row_chunk(c.shape[0])
    for s in range(0, n, step):
        xb = np.asarray(x[s:s + step], dtype=np.float64)
        # ||x||^2 is constant per row and cannot change the argmin
        d = xb @ c64.T
        d *= -2.0
        d += c_sq
        lab = np.argmin(d, axis=1)
        labels[s:s + step] = lab
        diff = xb - c64[lab]
        dist[s:s + step] = np.einsum("ij,ij->i", diff, diff)
    return labels, dist


def smallest_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest entries ordered by (value, index)."""
    values = np.asarray(values)
    n = values.shape[0]
    if k >= n:
        return np.argsort(values, kind="stable")
    kth = np.partition(values, k - 1)[k - 1]
    cand = np.flatnonzero(values <= kth)
    order = np.argsort(values[cand], kind="stable")
    return cand[order[:k]]


def nearest_centroid(v, centroids, n: int = 1) -> list[tuple[int, float]]:
    c = np.asarray(centroids, dtype=np.float32)
    if c.ndim != 2 or c.shape[0] == 0:
        raise InvalidState("empty centroid set")
    v = as_vector(v, c.shape[1])
    if n < 1 or n > c.shape[0]:
        raise InvalidArgument(f"n must be in [1, {c.shape[0]}], got {n}")
    diff = c - v[None, :]
    d = np.sum(diff * diff, axis=1, dtype=np.float32)
    idx = smallest_k(d, n)
    return [(int(i), float(d[i])) for i in idx]


def nearest_centroids(x: np.ndarray, centroids: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``nearest_centroid``: (rows x n) indices and distances."""
    c = np.asarray(centroids)
    if c.shape[0] == 0:
        raise InvalidState("empty centroid set")
    rows = x.shape[0]
    idx = np.empty((rows, n), dtype=np.int64)
    dist = np.empty((rows, n), dtype=np.float64)
    step = _row_chunk(c.shape[0])
    for s in range(0, rows, step):
        d = sq_dists(x[s:s + step], c)
        order = np.argsort(d, axis=1, kind="stable")[:, :n]
        idx[s:s + step] = order
        dist[s:s + step] = np.take_along_axis(d, order, axis=1)
    return idx, dist


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float
    history: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.history)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    x64 = np.asarray(x, dtype=np.float64)
    x_sq = (x64 * x64).sum(1)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    c = x64[chosen[0]]
    mind = np.maximum(x_sq - 2.0 * (x64 @ c) + c @ c, 0.0)
    for j in range(1, k):
        total = mind.sum()
        if total > 0:
            cdf = np.cumsum(mind)
            pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            pick = min(pick, n - 1)
        else:
            pick = int(rng.integers(n))
        chosen[j] = pick
        c = x64[pick]
        np.minimum(mind, np.maximum(x_sq - 2.0 * (x64 @ c) + c @ c, 0.0), out=mind)
    return x64[chosen].copy()


def _update(x: np.ndarray, labels: np.ndarray, dist: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        labels = labels.copy()
        dist = dist.copy()
        for e in empty:
            # only steal from clusters that keep at least one member
            movable = counts[labels] > 1
            if not movable.any():
                break
            p = int(np.argmax(np.where(movable, dist, -1.0)))
            counts[labels[p]] -= 1
            labels[p] = e
            counts[e] = 1
            dist[p] = 0.0
    sums = np.empty((k, x.shape[1]), dtype=np.float64)
    # bincount accumulates in row order, which keeps results reproducible
    for j in range(x.shape[1]):
        sums[:, j] = np.bincount(labels, weights=x[:, j], minlength=k)
    return sums / np.maximum(counts, 1)[:, None]


def kmeans(data, k: int, max_iters: int = 25, seed: int = 0, init=None) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding (or explicit ``init`` centroids).

    Stops when the relative objective improvement drops below 1e-4 or after
    ``max_iters`` update steps; ``history`` holds the objective measured after
    each assignment step.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgument(f"data must be 2-D, got shape {x.shape}")
    n = x.shape[0]
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    if k > n:
        raise InvalidArgument(f"k={k} exceeds number of rows {n}")
    if max_iters < 1:
        raise InvalidArgument(f"max_iters must be >= 1, got {max_iters}")

    if init is not None:
        cent = np.array(init, dtype=np.float64)
        if cent.shape != (k, x.shape[1]):
            raise InvalidArgument(f"init has shape {cent.shape}, expected {(k, x.shape[1])}")
    else:
        cent = kmeans_plusplus(x, k, np.random.default_rng(seed))

    cent, labels, dist, history = lloyd(x, cent, max_iters)
    return KMeansResult(
        centroids=cent.astype(np.float32),
        assignments=labels,
        objective=float(dist.sum()),
        history=history,
    )


def lloyd(x: np.ndarray, cent: np.ndarray, max_iters: int):
    """Float64 Lloyd iterations from ``cent``; returns (centroids, labels, dists, history)."""
    k = cent.shape[0]
    history: list[float] = []
    labels, dist = assign(x, cent)
    for _ in range(max_iters):
        obj = float(dist.sum())
        history.append(obj)
        if len(history) > 1:
            prev = history[-2]
            if obj == 0.0 or prev - obj < CONVERGENCE_TOL * prev:
                break
        elif obj == 0.0:
            break
        cent = _update(x, labels, dist, k)
        labels, dist = assign(x, cent)
    else:
        history.append(float(dist.sum()))
    return cent, labels, dist, history
