from __future__ import annotations

import numpy as np
import pytest

from knnmt.corpus import EOS, ParallelCorpus, synthetic_corpus
from knnmt.datastore import IndexConfig, KeyStore, compute_keys, plan_batches, store_values
from knnmt.errors import FormatError, InvalidArgument, InvalidState
from knnmt.ivf import flat_residual_adc
from knnmt.pq import adc_scan, build_luts
from knnmt.subset import (SUBSET_N, FlatCodes, SentenceDatastore, build_flat_codes, build_sentence_datastore,
                          retrieve_subset, sentence_index_config, sentence_key, subset_search,
                          subset_search_batch, view_for_sentences)
from knnmt.toymodel import toy_model


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("subset")
    corpus = synthetic_corpus(300, 400, 400, min_len=3, max_len=8, seed=5)
    model = toy_model(400, 400, dim=32, seed=1, corpus=corpus)
    tokens = store_values(corpus)
    keys = compute_keys(model, corpus, plan_batches(corpus, 256), d / "k.ksky")
    sd = build_sentence_datastore(model, corpus, sentence_index_config(nlist=16, M=8, L=16, opq_iters=3))
    flat = build_flat_codes(keys, M=8, L=16, use_opq=True, opq_iters=3)
    return corpus, model, tokens, keys, sd, flat, d


def test_defaults():
    cfg = sentence_index_config()
    assert (cfg.nlist, cfg.M, cfg.use_opq) == (32768, 64, True)
    assert SUBSET_N == 512


def test_sentence_key_is_mean_of_encoder_states(world):
    corpus, model = world[0], world[1]
    assert np.array_equal(sentence_key(model, [7]), model.encoder_states([7])[0])
    assert np.array_equal(sentence_key(model, [7, 8, 7]), sentence_key(model, [7, 8, 7]))


def test_sentence_datastore_spans_and_round_trip(world):
    corpus, _, tokens, _, sd, _, d = world
    assert len(sd) == len(corpus) and sd.num_tokens == len(tokens)
    assert np.array_equal(sd.spans, tokens.spans())
    sd.save(d / "s.kssd")
    back = SentenceDatastore.load(d / "s.kssd")
    back.save(d / "s2.kssd")
    assert (d / "s.kssd").read_bytes() == (d / "s2.kssd").read_bytes()
    raw = (d / "s.kssd").read_bytes()
    (d / "bad.kssd").write_bytes(raw[:-9])
    with pytest.raises(FormatError, match="at byte"):
        SentenceDatastore.load(d / "bad.kssd")


def test_flat_codes_round_trip(world):
    _, _, _, keys, _, flat, d = world
    assert len(flat) == keys.count
    flat.save(d / "f.kspq")
    back = FlatCodes.load(d / "f.kspq")
    back.save(d / "g.kspq")
    assert (d / "f.kspq").read_bytes() == (d / "g.kspq").read_bytes()
    assert np.array_equal(back.luts(keys.rows(slice(0, 3))), flat.luts(keys.rows(slice(0, 3))))
    raw = (d / "f.kspq").read_bytes()
    (d / "bad.kspq").write_bytes(b"KSIX" + raw[4:])
    with pytest.raises(FormatError, match="at byte 0"):
        FlatCodes.load(d / "bad.kspq")


def test_verbatim_query_retrieves_own_sentence(world):
    corpus, model, tokens, _, sd, flat, _ = world
    hits = 0
    for i in range(0, 300, 15):
        view = retrieve_subset(sd, corpus.src[i], 5, model, flat, tokens, nprobe=16)
        # exact sentence-distance oracle
        exact = ((sd.keys - sentence_key(model, corpus.src[i])) ** 2).sum(1)
        assert int(np.argmin(exact)) == i
        hits += i in view.sentences
    assert hits == 20


def test_large_n_returns_everything(world):
    corpus, model, tokens, _, sd, flat, _ = world
    view = retrieve_subset(sd, corpus.src[0], 10_000, model, flat, tokens)
    assert len(view) == len(tokens)
    assert np.array_equal(view.ids, np.arange(len(tokens)))


def test_view_contents(world):
    corpus, _, tokens, _, sd, flat, _ = world
    view = view_for_sentences(sd, [9, 2], flat, tokens)
    assert view.sentences.tolist() == [2, 9]
    assert np.array_equal(view.values, np.concatenate([corpus.tgt[2], corpus.tgt[9]]))
    assert np.array_equal(view.codes, flat.codes[view.ids])


def test_single_token_view(world):
    corpus, _, tokens, keys, sd, flat, _ = world
    single = ParallelCorpus([[5]], [[EOS]], 400, 400)
    view = view_for_sentences(sd, [0], flat, tokens)
    view.ids, view.codes, view.values = view.ids[:1], view.codes[:1], view.values[:1]
    hits = subset_search(view, flat, keys.rows(77), 4)
    assert len(hits) == 1 and hits[0][0] == 0 and hits[0][2] == corpus.tgt[0][0]


def test_subset_search_oracle(world):
    corpus, model, tokens, keys, sd, flat, _ = world
    view = retrieve_subset(sd, corpus.src[3], 20, model, flat, tokens)
    q = keys.rows(50)
    got = subset_search(view, flat, q, 10)
    lut = flat.luts(q[None, :])[0]
    dist = adc_scan(lut, view.codes)
    order = sorted(range(len(view)), key=lambda p: (dist[p], p))[:10]
    assert [g[0] for g in got] == [int(view.ids[p]) for p in order]
    batch = subset_search_batch(view, flat, keys.rows(slice(50, 53)), 10)
    assert batch[0] == got


def test_subset_errors(world):
    corpus, model, tokens, _, sd, flat, _ = world
    view = view_for_sentences(sd, [], flat, tokens)
    with pytest.raises(InvalidState):
        subset_search(view, flat, np.zeros(32, np.float32), 3)
    with pytest.raises(InvalidArgument):
        retrieve_subset(sd, corpus.src[0], 0, model, flat, tokens)


def test_retrieve_at_full_probe_matches_sentence_oracle(world):
    corpus, model, tokens, _, sd, flat, _ = world
    q = sentence_key(model, corpus.src[11])
    view = retrieve_subset(sd, corpus.src[11], 7, model, flat, tokens, nprobe=sd.index.nlist)
    oracle = sorted(i for i, _ in flat_residual_adc(sd.index, q, 7))
    assert view.sentences.tolist() == oracle
