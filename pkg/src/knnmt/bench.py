"""Recall and latency benchmarks for the IVFPQ index against exact ground truth."""

from __future__ import annotations

import csv
import time
from dataclasses import astuple, dataclass

import numpy as np

from .corevec import as_matrix, smallest_k
from .errors import InvalidArgument, InvalidState
from .ivf import IVFPQIndex, SearchParams
from .seeds import rng_for

CSV_HEADER = ("nprobe", "k", "recall", "p50_us", "p95_us", "qps")


@dataclass
class BenchRow:
    nprobe: int
    k: int
    recall: float
    p50_us: float
    p95_us: float
    qps: float


def gaussian_mixture(n: int, d: int, clusters: int = 256, spread: float = 0.3,
                     seed: int = 0) -> np.ndarray:
    """``n`` points around ``clusters`` standard-normal centres, isotropic noise ``spread``."""
    if n < 1 or d < 1 or clusters < 1:
        raise InvalidArgument("n, d and clusters must be >= 1")
    rng = rng_for(seed, "mixture")
    centres = rng.standard_normal((clusters, d))
    labels = rng.integers(0, clusters, size=n)
    x = centres[labels] + spread * rng.standard_normal((n, d))
    return x.astype(np.float32)


def exact_knn(base, queries, k: int, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force k nearest rows of ``base`` by squared L2 in float64; ties to the lower id."""
    base = as_matrix(base, name="base vectors")
    queries = as_matrix(queries, base.shape[1], "queries")
    k = min(k, base.shape[0])
    b64 = base.astype(np.float64)
    b_sq = np.einsum("ij,ij->i", b64, b64)
    ids = np.empty((queries.shape[0], k), dtype=np.int64)
    dists = np.empty((queries.shape[0], k), dtype=np.float64)
    for s in range(0, queries.shape[0], chunk):
        q = queries[s:s + chunk].astype(np.float64)
        d = q @ b64.T
        d *= -2.0
        d += b_sq
        d += np.einsum("ij,ij->i", q, q)[:, None]
        for r, row in enumerate(d):
            best = smallest_k(row, k)
            ids[s + r], dists[s + r] = best, row[best]
    return ids, dists


def recall_at_k(found: np.ndarray, truth: np.ndarray) -> float:
    """Mean fraction of each query's true neighbours present among the found ids."""
    found, truth = np.asarray(found), np.asarray(truth)
    if found.shape[0] != truth.shape[0]:
        raise InvalidArgument(f"{found.shape[0]} result rows for {truth.shape[0]} queries")
    if truth.size == 0:
        return 0.0
    hits = sum(np.intersect1d(f[f >= 0], t).size for f, t in zip(found, truth))
    return hits / truth.size


def nprobe_schedule(nlist: int) -> list[int]:
    """1, 2, 4, ... below nlist, then nlist itself."""
    out, p = [], 1
    while p < nlist:
        out.append(p)
        p *= 2
    out.append(nlist)
    return out


def run_bench(index: IVFPQIndex, queries, truth: np.ndarray, k: int, nprobes,
              check_monotone: bool = True) -> list[BenchRow]:
    """One row per nprobe value; queries are timed one at a time."""
    queries = as_matrix(queries, name="queries")
    if queries.shape[1] != index.d_raw:
        raise InvalidArgument(f"queries have dimension {queries.shape[1]}, index expects {index.d_raw}")
    truth = np.asarray(truth)
    if truth.ndim != 2 or truth.shape[0] != queries.shape[0]:
        raise InvalidArgument(f"ground truth shape {truth.shape} does not match {queries.shape[0]} queries")
    rows = []
    for nprobe in nprobes:
        params = SearchParams(k=k, nprobe=int(nprobe))
        params.validate(index.nlist)
        found = np.full((queries.shape[0], k), -1, dtype=np.int64)
        lat = np.empty(queries.shape[0], dtype=np.float64)
        for i, q in enumerate(queries):
            t0 = time.perf_counter_ns()
            ids, _ = index.search_batch(q[None, :], params)
            lat[i] = (time.perf_counter_ns() - t0) / 1e3
            found[i] = ids[0]
        total_s = lat.sum() / 1e6
        rows.append(BenchRow(int(nprobe), k, recall_at_k(found, truth[:, :k]),
                             float(np.percentile(lat, 50)), float(np.percentile(lat, 95)),
                             queries.shape[0] / total_s if total_s > 0 else float("inf")))
    if check_monotone:
        check_recall_monotone(rows)
    return rows


def check_recall_monotone(rows: list[BenchRow]) -> None:
    ordered = sorted(rows, key=lambda r: r.nprobe)
    for a, b in zip(ordered, ordered[1:]):
        if b.recall < a.recall:
            raise InvalidState(f"recall fell from {a.recall:.4f} at nprobe={a.nprobe} "
                               f"to {b.recall:.4f} at nprobe={b.nprobe}")


def write_csv(rows: list[BenchRow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.nprobe, r.k, f"{r.recall:.6f}", f"{r.p50_us:.1f}", f"{r.p95_us:.1f}", f"{r.qps:.1f}"])


def rows_as_tuples(rows: list[BenchRow]) -> list[tuple]:
    return [astuple(r) for r in rows]
