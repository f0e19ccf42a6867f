from __future__ import annotations

import json

import numpy as np
import pytest

from knnmt.corpus import BOS, EOS, ParallelCorpus, read_jsonl, read_plain, synthetic_corpus, write_jsonl
from knnmt.datastore import (IndexConfig, KeyStore, TimingReport, TokenStore, build_datastore, build_index,
                             compute_keys, corpus_order_batches, padding, plan_batches, store_values)
from knnmt.errors import FormatError, InvalidArgument, InvalidState
from knnmt.ivf import IVFPQIndex
from knnmt.toymodel import toy_model


def corpus_with_lengths(lengths, vocab=50):
    # targets include the trailing end-of-sentence token
    tgt = [[3 + (i % 40)] * (n - 1) + [EOS] for i, n in enumerate(lengths)]
    src = [[3 + (i % 40)] * 2 for i in range(len(lengths))]
    return ParallelCorpus(src, tgt, vocab, vocab)


def test_values_census(tmp_path):
    c = ParallelCorpus([[3], [4, 5]], [[6, 7, EOS], [8, 9, 10, EOS]], 20, 20)
    store = store_values(c, tmp_path / "v.ksvl")
    assert len(store) == 7
    assert store.tokens.tolist() == [6, 7, EOS, 8, 9, 10, EOS]
    assert store.span(1) == (3, 4)
    back = TokenStore.load(tmp_path / "v.ksvl")
    assert np.array_equal(back.tokens, store.tokens) and np.array_equal(back.offsets, store.offsets)
    back.save(tmp_path / "w.ksvl")
    assert (tmp_path / "v.ksvl").read_bytes() == (tmp_path / "w.ksvl").read_bytes()


def test_empty_target_rejected():
    with pytest.raises(InvalidArgument, match="empty target"):
        ParallelCorpus([[3]], [[]], 10, 10)


def test_values_corruption(tmp_path):
    store_values(synthetic_corpus(5, 20, 20, seed=1), tmp_path / "v.ksvl")
    raw = (tmp_path / "v.ksvl").read_bytes()
    (tmp_path / "bad").write_bytes(raw[:-2])
    with pytest.raises(FormatError, match="at byte"):
        TokenStore.load(tmp_path / "bad")
    (tmp_path / "bad").write_bytes(b"KSKY" + raw[4:])
    with pytest.raises(FormatError, match="at byte 0"):
        TokenStore.load(tmp_path / "bad")


def test_plan_batches_example():
    c = corpus_with_lengths([5, 1, 5, 1])
    plan = plan_batches(c, 10)
    assert sorted(sorted(b) for b in plan.batches) == [[0, 2], [1, 3]]
    assert plan.padded_tokens(c.target_lengths) == 0
    assert padding(corpus_order_batches(c.target_lengths, 10), c.target_lengths) == 8


def test_plan_batches_edge_cases():
    c = corpus_with_lengths([4] * 9)
    assert plan_batches(c, 12).padded_tokens(c.target_lengths) == 0
    c = corpus_with_lengths([2, 7, 3, 7])
    plan = plan_batches(c, 7)
    assert all(len(b) == 1 for b in plan.batches)
    with pytest.raises(InvalidArgument, match="more than max_tokens"):
        plan_batches(c, 6)


def test_plan_never_worse_than_greedy_and_respects_cap(rng):
    for trial in range(30):
        lengths = rng.integers(1, 30, size=int(rng.integers(1, 60)))
        cap = int(rng.integers(30, 120))
        c = corpus_with_lengths(lengths)
        plan = plan_batches(c, cap)
        assert sorted(i for b in plan.batches for i in b) == list(range(len(lengths)))
        assert all(lengths[b].max() * len(b) <= cap for b in plan.batches)
        assert plan.padded_tokens(lengths) <= padding(corpus_order_batches(lengths, cap), lengths)


def test_compute_keys_independent_of_plan(tmp_path, small_corpus, small_model):
    a = compute_keys(small_model, small_corpus, plan_batches(small_corpus, 40), tmp_path / "a.ksky", chunk_rows=100)
    b = compute_keys(small_model, small_corpus, plan_batches(small_corpus, 1000), tmp_path / "b.ksky", chunk_rows=100)
    assert (tmp_path / "a.ksky").read_bytes() == (tmp_path / "b.ksky").read_bytes()
    c = compute_keys(small_model, small_corpus, plan_batches(small_corpus, 200), tmp_path / "c.ksky",
                     chunk_rows=100, threads=3)
    assert (tmp_path / "a.ksky").read_bytes() == (tmp_path / "c.ksky").read_bytes()
    assert a.count == small_corpus.num_tokens == len(store_values(small_corpus))
    # row t of sentence i is the key of the prefix y[:t]
    off = int(np.cumsum(small_corpus.target_lengths)[4])
    t5 = small_corpus.tgt[5]
    assert np.array_equal(a.rows(off + 2), small_model.context_key(small_corpus.src[5], t5[:2]))


def test_single_token_sentence_key(tmp_path, small_model):
    c = ParallelCorpus([[5, 6]], [[EOS]], 200, 200)
    keys = compute_keys(small_model, c, plan_batches(c, 8), tmp_path / "k.ksky")
    assert keys.count == 1
    assert np.array_equal(keys.rows(0), small_model.context_key([5, 6], []))


def test_keystore_round_trip_and_corruption(tmp_path, rng):
    x = rng.standard_normal((37, 6)).astype(np.float32)
    ks = KeyStore.create(tmp_path / "k.ksky", 6, 37, chunk_rows=10)
    ks.write_rows(0, x)
    ks.flush()
    back = KeyStore.open(tmp_path / "k.ksky")
    assert (back.d, back.count, back.chunk_rows) == (6, 37, 10)
    chunks = list(back.iter_chunks())
    assert [s for s, _ in chunks] == [0, 10, 20, 30]
    assert np.array_equal(np.concatenate([c for _, c in chunks]), x)
    raw = (tmp_path / "k.ksky").read_bytes()
    (tmp_path / "t.ksky").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="at byte"):
        KeyStore.open(tmp_path / "t.ksky")
    (tmp_path / "t.ksky").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="at byte 0"):
        KeyStore.open(tmp_path / "t.ksky")


def test_index_config_validation():
    cfg = IndexConfig()
    assert (cfg.nlist, cfg.M, cfg.L) == (1024, 64, 256)
    IndexConfig(nlist=131072, M=64).validate(1024)
    with pytest.raises(InvalidArgument):
        IndexConfig(M=7).validate(64)
    with pytest.raises(InvalidArgument):
        IndexConfig(L=300).validate(64)
    with pytest.raises(InvalidArgument):
        IndexConfig(pca_dim=128).validate(64)


def test_build_index_empty_keys(tmp_path):
    ks = KeyStore.create(tmp_path / "e.ksky", 8, 0)
    with pytest.raises(InvalidState):
        build_index(ks, IndexConfig(nlist=2, M=2, L=4))


def test_build_datastore_pipeline(tmp_path, small_corpus, small_model):
    cfg = IndexConfig(nlist=8, M=8, L=16, seed=3)
    tokens, keys, index, report = build_datastore(small_model, small_corpus, tmp_path / "w", cfg, max_tokens=64)
    assert index.total == len(tokens) == keys.count == small_corpus.num_tokens
    rows = report.as_dict()
    assert list(rows) == ["compute_keys", "train_index", "build_index", "total"]
    assert rows["total"] == pytest.approx(rows["compute_keys"] + rows["train_index"] + rows["build_index"])
    assert json.loads((tmp_path / "w" / "timing.json").read_text()) == rows
    assert "compute_keys" in report.to_text()
    loaded = IVFPQIndex.load(tmp_path / "w" / "index.ksix")
    assert loaded.to_bytes() == index.to_bytes()
    # rerun is byte-identical
    build_datastore(small_model, small_corpus, tmp_path / "v", cfg, max_tokens=16)
    for name in ("values.ksvl", "keys.ksky", "index.ksix"):
        assert (tmp_path / "w" / name).read_bytes() == (tmp_path / "v" / name).read_bytes()


def test_corpus_readers(tmp_path):
    (tmp_path / "c.tsv").write_text("a b\tx y\nb\ty\n")
    c, sv, tv = read_plain(tmp_path / "c.tsv")
    assert c.tgt[0].tolist() == [tv["x"], tv["y"], EOS]
    assert sv["a"] >= 3 and tv["x"] >= 3
    write_jsonl(c, tmp_path / "c.jsonl")
    back = read_jsonl(tmp_path / "c.jsonl")
    assert [t.tolist() for t in back.tgt] == [t.tolist() for t in c.tgt]
    (tmp_path / "bad.jsonl").write_text('{"src": [3], "tgt": []}\n')
    with pytest.raises(InvalidArgument):
        read_jsonl(tmp_path / "bad.jsonl")


def test_toy_model_keys_distinct_and_deterministic():
    c = synthetic_corpus(1000, 1000, 1000, seed=0)
    m = toy_model(1000, 1000, dim=64, seed=0, corpus=c)
    keys = np.concatenate(m.batch_sentence_keys(c.src, c.tgt))
    assert np.unique(keys, axis=0).shape[0] == keys.shape[0]
    again = toy_model(1000, 1000, dim=64, seed=0, corpus=c)
    assert np.array_equal(np.concatenate(again.batch_sentence_keys(c.src[:50], c.tgt[:50])), keys[:sum(c.target_lengths[:50])])
    p = m.mt_distribution(c.src[0], [])
    assert abs(p.sum() - 1) < 1e-9 and p[BOS] == 0.0
