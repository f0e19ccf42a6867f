from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knnmt.corevec import kmeans
from knnmt.errors import FormatError, InvalidArgument
from knnmt.ivf import IVFPQIndex, SearchParams, flat_residual_adc, train_ivfpq
from knnmt.pq import decode, encode


@pytest.fixture(scope="module")
def data():
    r = np.random.default_rng(99)
    centres = r.standard_normal((20, 16)) * 3
    x = centres[r.integers(0, 20, 3000)] + r.standard_normal((3000, 16))
    return x.astype(np.float32)


@pytest.fixture(scope="module")
def index(data):
    idx = train_ivfpq(data, nlist=16, M=4, L=32, seed=1)
    idx.add(data)
    return idx


def test_search_params_defaults_and_validation():
    p = SearchParams()
    assert (p.k, p.nprobe) == (64, 32)
    with pytest.raises(InvalidArgument):
        SearchParams(k=1, nprobe=17).validate(16)
    with pytest.raises(InvalidArgument):
        SearchParams(k=0, nprobe=1).validate(16)


def test_train_errors(data):
    with pytest.raises(InvalidArgument):
        train_ivfpq(data[:10], nlist=16, M=4, L=8)
    with pytest.raises(InvalidArgument):
        train_ivfpq(data, nlist=16, M=5, L=8)


def test_nlist1_M1_is_vq_over_global_residuals(data):
    sample = data[:200]     # below the 256 * nlist training cap, so nothing is subsampled
    idx = train_ivfpq(sample, nlist=1, M=1, L=8, seed=0, kmeans_iters=5, pq_iters=5)
    assert np.allclose(idx.coarse[0], sample.astype(np.float64).mean(0), atol=1e-4)
    assert idx.codebook.M == 1


def test_exact_nlist_points_coarse_objective_zero(rng):
    pts = rng.standard_normal((8, 4)).astype(np.float32)
    sample = np.repeat(pts, 32, axis=0)
    idx = train_ivfpq(sample, nlist=8, M=2, L=4, seed=0)
    assert kmeans(sample, 8, seed=0).objective == 0.0
    assert sorted(map(tuple, idx.coarse.tolist())) == sorted(map(tuple, pts.tolist()))


def test_add_census_and_ids(data, index):
    assert index.total == len(data)
    ids = np.concatenate([index.list_ids(l) for l in range(index.nlist)])
    assert sorted(ids.tolist()) == list(range(len(data)))
    before = index.list_sizes().copy()
    index.add(np.empty((0, 16), dtype=np.float32))
    assert np.array_equal(before, index.list_sizes())


def test_add_centroid_stores_code_of_zero_residual(data):
    idx = train_ivfpq(data, nlist=16, M=4, L=32, seed=1)
    c = idx.coarse[5]
    idx.add(c[None, :])
    l = int(np.flatnonzero(idx.list_sizes())[0])
    assert l == 5
    assert np.array_equal(idx.list_codes(5)[0], encode(idx.codebook, np.zeros(16, dtype=np.float32)))


def test_single_vector_index(data):
    idx = train_ivfpq(data, nlist=4, M=4, L=16, seed=0)
    idx.add(data[:1])
    for q in data[100:105]:
        assert [i for i, _ in idx.search(q, SearchParams(k=5, nprobe=4))] == [0]


def test_search_batch_equals_single(data, index):
    q = data[:20] + 0.05
    params = SearchParams(k=10, nprobe=4)
    ids, dists = index.search_batch(q, params)
    for row, v in enumerate(q):
        single = index.search(v, params)
        assert [i for i, _ in single] == ids[row].tolist()
        assert [d for _, d in single] == dists[row].tolist()


def test_nprobe_nlist_matches_flat_oracle(data, index):
    q = data[::300] + 0.1
    params = SearchParams(k=25, nprobe=index.nlist)
    ids, dists = index.search_batch(q, params)
    for row, v in enumerate(q):
        oracle = flat_residual_adc(index, v, 25)
        assert ids[row].tolist() == [i for i, _ in oracle]
        assert np.allclose(dists[row], [d for _, d in oracle], rtol=1e-4)


def test_adc_distance_approximates_reconstruction(data, index):
    # reported distance is the exact distance to centroid + decoded residual, up to float error
    q = data[7] + 0.2
    for i, dist in index.search(q, SearchParams(k=5, nprobe=16)):
        for l in range(index.nlist):
            pos = np.flatnonzero(index.list_ids(l) == i)
            if pos.size:
                recon = index.coarse[l] + decode(index.codebook, index.list_codes(l)[pos[0]])
                exact = float(((q.astype(np.float64) - recon) ** 2).sum())
                assert dist == pytest.approx(exact, rel=1e-3, abs=1e-3)


def test_results_sorted_and_short_k(data):
    idx = train_ivfpq(data, nlist=8, M=4, L=16, seed=0)
    idx.add(data[:30])
    res = idx.search(data[0], SearchParams(k=100, nprobe=8))
    assert len(res) == 30
    assert res == sorted(res, key=lambda t: (t[1], t[0]))
    ids, _ = idx.search_batch(data[:1], SearchParams(k=100, nprobe=8))
    assert (ids[0, 30:] == -1).all()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.sampled_from([1, 2, 4, 8, 16]))
def test_more_probes_never_lose_exact_lists(seed, nprobe):
    r = np.random.default_rng(seed)
    x = r.standard_normal((400, 8)).astype(np.float32)
    idx = train_ivfpq(x, nlist=16, M=2, L=8, seed=seed, kmeans_iters=5, pq_iters=5)
    idx.add(x)
    small = set(i for i, _ in idx.search(x[0], SearchParams(k=400, nprobe=nprobe)))
    large = set(i for i, _ in idx.search(x[0], SearchParams(k=400, nprobe=16)))
    assert small <= large


def test_opq_and_pca_index_round_trip(tmp_path, data):
    for kw in ({"use_opq": True, "opq_iters": 3}, {"pca_dim": 8}):
        idx = train_ivfpq(data, nlist=8, M=4, L=16, seed=2, **kw)
        idx.add(data)
        p1, p2 = tmp_path / "a.ksix", tmp_path / "b.ksix"
        idx.save(p1)
        back = IVFPQIndex.load(p1)
        back.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        params = SearchParams(k=5, nprobe=4)
        assert back.search(data[3], params) == idx.search(data[3], params)


def test_load_rejects_corruption(tmp_path, index):
    path = tmp_path / "x.ksix"
    index.save(path)
    raw = path.read_bytes()
    (tmp_path / "t.ksix").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="at byte"):
        IVFPQIndex.load(tmp_path / "t.ksix")
    (tmp_path / "m.ksix").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="at byte 0"):
        IVFPQIndex.load(tmp_path / "m.ksix")
