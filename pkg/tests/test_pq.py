from __future__ import annotations

import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knnmt import binio
from knnmt.corevec import kmeans, squared_l2
from knnmt.errors import FormatError, InvalidArgument, InvalidState
from knnmt.pq import (DEFAULT_L, PQCodebook, adc_distance, adc_scan, adc_topk, build_lut, build_luts,
                      decode, decode_batch, encode, encode_batch, read_codebook, train_pq,
                      write_codebook)


def random_codebook(rng, M=3, L=5, dsub=2):
    return PQCodebook(rng.standard_normal((M, L, dsub)).astype(np.float32))


def test_default_L():
    import inspect
    assert DEFAULT_L == 256
    assert inspect.signature(train_pq).parameters["L"].default == 256


def test_train_pq_errors(rng):
    x = rng.standard_normal((300, 6)).astype(np.float32)
    with pytest.raises(InvalidArgument):
        train_pq(x, 4, 8)           # 6 % 4 != 0
    with pytest.raises(InvalidArgument):
        train_pq(x[:10], 2, 16)     # fewer keys than L
    with pytest.raises(InvalidArgument):
        train_pq(x, 2, 300)         # L does not fit 8 bits


def test_train_pq_distinct_rows_zero_objective(rng):
    # exactly L distinct rows: every key is a codeword
    L = 8
    x = rng.standard_normal((L, 4)).astype(np.float32)
    cb = train_pq(x, 2, L, iters=50, seed=0)
    assert np.array_equal(decode_batch(cb, encode_batch(cb, x)), x)


def test_train_pq_M1_is_kmeans(rng):
    from knnmt.seeds import derive_seed
    x = rng.standard_normal((200, 3)).astype(np.float32)
    cb = train_pq(x, 1, 6, iters=20, seed=5)
    ref = kmeans(x, 6, max_iters=20, seed=derive_seed(5, "pq/0"))
    assert np.array_equal(cb.codewords[0], ref.centroids)


def test_train_pq_deterministic(rng):
    x = rng.standard_normal((400, 8)).astype(np.float32)
    assert train_pq(x, 4, 16, seed=3) == train_pq(x, 4, 16, seed=3)


def test_encode_exact_codewords(rng):
    cb = random_codebook(rng, M=2, L=8, dsub=3)
    v = np.concatenate([cb.codewords[0, 3], cb.codewords[1, 5]])
    assert encode(cb, v).tolist() == [3, 5]
    assert np.array_equal(decode(cb, [3, 5]), v)
    assert np.array_equal(decode(cb, [0, 0]), np.concatenate([cb.codewords[0, 0], cb.codewords[1, 0]]))


def test_encode_tie_breaks_low():
    cb = PQCodebook(np.array([[[0.0], [2.0], [5.0]]], dtype=np.float32))
    assert encode(cb, [1.0]).tolist() == [0]


def test_encode_decode_errors(rng):
    cb = random_codebook(rng)
    with pytest.raises(InvalidArgument):
        encode(cb, np.zeros(5))
    with pytest.raises(InvalidArgument):
        decode(cb, [0, 0, 5])       # L = 5
    with pytest.raises(InvalidArgument):
        build_lut(cb, np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_encode_idempotent(seed):
    r = np.random.default_rng(seed)
    cb = random_codebook(r)
    v = r.standard_normal(cb.d).astype(np.float32)
    c = encode(cb, v)
    assert np.array_equal(encode(cb, decode(cb, c)), c)


def test_encode_matches_exhaustive_enumeration(rng):
    cb = PQCodebook(rng.standard_normal((2, 4, 2)).astype(np.float32))
    x = rng.standard_normal((300, 4)).astype(np.float32)
    codes = encode_batch(cb, x)
    for v, c in zip(x, codes):
        errs = {combo: squared_l2(v, decode(cb, combo)) for combo in itertools.product(range(4), repeat=2)}
        best = min(errs.values())
        assert squared_l2(v, decode(cb, c)) == best


def test_lut_entries(rng):
    cb = random_codebook(rng, M=3, L=5, dsub=2)
    q = rng.standard_normal(6).astype(np.float32)
    lut = build_lut(cb, q)
    assert lut.shape == (3, 5)
    for m in range(3):
        for l in range(5):
            assert lut[m, l] == pytest.approx(squared_l2(q[2 * m:2 * m + 2], cb.codewords[m, l]), rel=1e-6)
    q2 = np.concatenate([cb.codewords[0, 2], q[2:]])
    assert build_lut(cb, q2)[0, 2] == 0.0
    assert (lut >= 0).all()


def test_adc_distance_examples(rng):
    cb = random_codebook(rng, M=2, L=4, dsub=3)
    q = np.concatenate([cb.codewords[0, 1], cb.codewords[1, 3]])
    assert adc_distance(build_lut(cb, q), encode(cb, q)) == 0.0
    cb1 = random_codebook(rng, M=1, L=4, dsub=3)
    lut1 = build_lut(cb1, q[:3])
    assert adc_distance(lut1, [2]) == float(lut1[0, 2])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_adc_consistency(seed):
    r = np.random.default_rng(seed)
    cb = random_codebook(r, M=4, L=16, dsub=4)
    q = r.standard_normal(cb.d).astype(np.float32)
    code = r.integers(0, 16, size=4)
    exact = squared_l2(q, decode(cb, code))
    assert abs(adc_distance(build_lut(cb, q), code) - exact) <= 1e-4 * (1 + exact)


def test_adc_scan_bit_identical_to_adc_distance(rng):
    cb = random_codebook(rng, M=4, L=16, dsub=2)
    lut = build_lut(cb, rng.standard_normal(8).astype(np.float32))
    codes = rng.integers(0, 16, size=(500, 4)).astype(np.uint8)
    scan = adc_scan(lut, codes)
    assert all(scan[i] == adc_distance(lut, codes[i]) for i in range(500))


def test_build_luts_batch_equals_single(rng):
    cb = random_codebook(rng, M=4, L=16, dsub=2)
    q = rng.standard_normal((7, 8)).astype(np.float32)
    batch = build_luts(cb, q)
    for i in range(7):
        assert np.array_equal(batch[i], build_lut(cb, q[i]))


def test_adc_topk_full_sort_oracle(rng):
    cb = random_codebook(rng, M=4, L=8, dsub=2)
    lut = build_lut(cb, rng.standard_normal(8).astype(np.float32))
    codes = rng.integers(0, 8, size=(1000, 4)).astype(np.uint8)
    dists = [adc_distance(lut, c) for c in codes]
    oracle = sorted(range(1000), key=lambda i: (dists[i], i))
    for k in (1, 64, 1000, 5000):
        got = adc_topk(lut, codes, k)
        assert [p for p, _ in got] == oracle[:k]
        assert [d for _, d in got] == [dists[i] for i in oracle[:k]]


def test_adc_topk_edge_cases(rng):
    cb = random_codebook(rng, M=2, L=4, dsub=1)
    lut = build_lut(cb, np.zeros(2, dtype=np.float32))
    assert adc_topk(lut, np.array([[1, 2]], dtype=np.uint8), 1)[0][0] == 0
    with pytest.raises(InvalidState):
        adc_topk(lut, np.empty((0, 2), dtype=np.uint8), 3)
    # duplicate codes tie; lower position wins
    codes = np.array([[1, 1], [0, 0], [1, 1]], dtype=np.uint8)
    got = adc_topk(lut, codes, 3)
    same = [p for p, d in got if d == got[-1][1]]
    assert same == sorted(same)


def test_codebook_round_trip_and_corruption(rng):
    cb = random_codebook(rng, M=3, L=7, dsub=2)
    buf = io.BytesIO()
    write_codebook(binio.Writer(buf), cb)
    data = buf.getvalue()
    assert read_codebook(binio.Reader(data)) == cb
    with pytest.raises(FormatError, match="at byte"):
        read_codebook(binio.Reader(data[:-4]))
    bad = bytearray(data)
    bad[:4] = b"XXXX"
    with pytest.raises(FormatError, match="at byte 0"):
        read_codebook(binio.Reader(bytes(bad)))


def test_codebook_is_immutable(rng):
    cb = random_codebook(rng)
    with pytest.raises(ValueError):
        cb.codewords[0, 0, 0] = 1.0
