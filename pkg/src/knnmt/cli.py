"""Command-line interface.

All artifacts of a run live in one work directory::

    run.json          corpus path and model parameters (written by ``build values``)
    values.ksvl       target tokens
    keys.ksky         key vectors
    index.ksix        IVFPQ token index
    sentences.kssd    sentence datastore (subset mode)
    flat.kspq         flat PQ codes of every token key (subset mode)
    timing.json/.txt  per-stage build times

Options can also come from a JSON file given with ``--config``. Top-level
keys apply to every command with an option of that name; an object stored
under a command path such as ``"build index"`` applies to that command only.
Command-line flags win over the file, the file wins over built-in defaults.

Per-stage seeds are derived from ``--seed`` as
``SeedSequence([seed, crc32(stage label)])``; see :mod:`knnmt.seeds`.

Exit codes: 0 success, 2 usage or validation error, 3 bad input data,
4 internal invariant violation.
"""

from __future__ import annotations

import json
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np
from threadpoolctl import threadpool_limits

from . import bench as benchmod
from .corpus import read_jsonl, read_plain, synthetic_corpus, write_jsonl
from .datastore import (IndexConfig, KeyStore, TimingReport, TokenStore, build_index, compute_keys,
                        plan_batches, store_values)
from .errors import FormatError, InvalidArgument, InvalidState, KnnError, StorageError
from .generate import KNNConfig, SubsetRetriever, VanillaRetriever, token_accuracy, translate_all
from .ivf import IVFPQIndex, SearchParams, train_ivfpq
from .seeds import derive_seed
from .subset import FlatCodes, SentenceDatastore, build_flat_codes, build_sentence_datastore
from .toymodel import toy_model

EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 2, 3, 4

RUN_FILE = "run.json"
VALUES_FILE = "values.ksvl"
KEYS_FILE = "keys.ksky"
INDEX_FILE = "index.ksix"
SENTENCES_FILE = "sentences.kssd"
FLAT_FILE = "flat.kspq"
TIMING_FILE = "timing.json"


def _echo(msg: str) -> None:
    click.echo(msg, err=True)


# config file handling


def _collect_defaults(cmd: click.Command, config: dict, path: tuple[str, ...]) -> dict:
    """default_map for ``cmd`` from flat keys plus a section named by its command path."""
    out: dict = {}
    if isinstance(cmd, click.Group):
        for name, sub in cmd.commands.items():
            sub_map = _collect_defaults(sub, config, path + (name,))
            if sub_map:
                out[name] = sub_map
        return out
    names = {p.name for p in cmd.params if isinstance(p, click.Option)}
    for key, value in config.items():
        if key in names and not isinstance(value, dict):
            out[key] = value
    section = config.get(" ".join(path))
    if isinstance(section, dict):
        unknown = set(section) - names
        if unknown:
            raise click.UsageError(f"config section {' '.join(path)!r}: unknown keys {sorted(unknown)}")
        out.update(section)
    return out


def _load_config(ctx: click.Context, _param, value):
    if value is None:
        return None
    try:
        config = json.loads(Path(value).read_text())
    except OSError as exc:
        raise click.BadParameter(f"cannot read {value}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise click.BadParameter(f"{value} is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise click.BadParameter(f"{value} must hold a JSON object")
    ctx.default_map = _collect_defaults(ctx.command, config, ())
    return value


@click.group(context_settings={"help_option_names": ["-h", "--help"], "show_default": True})
@click.option("--config", type=click.Path(dir_okay=False), callback=_load_config, is_eager=True,
              expose_value=False, help="JSON file with option values (flags override it).")
def cli():
    """Build retrieval datastores and translate with kNN interpolation."""


# shared options

def workdir_option(f):
    return click.option("--workdir", "-w", type=click.Path(file_okay=False), default="work",
                        help="Directory holding the run's artifacts.")(f)


def seed_option(f):
    return click.option("--seed", type=int, default=0, help="Master seed; stage seeds are derived from it.")(f)


def threads_option(f):
    return click.option("--threads", type=click.IntRange(min=1), default=1,
                        help="Worker and BLAS thread cap; 1 is the deterministic reference path.")(f)


@contextmanager
def _threads(n: int):
    with threadpool_limits(limits=n):
        yield


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise InvalidArgument(f"missing {what}: {path}")
    return path


def _read_run(workdir: Path) -> dict:
    return json.loads(_need(workdir / RUN_FILE, "run description (run `build values` first)").read_text())


def _load_corpus(path, fmt: str):
    if fmt == "jsonl":
        return read_jsonl(path)
    corpus, _, _ = read_plain(path)
    return corpus


def _model_from_run(run: dict, corpus=None):
    m = run["model"]
    if corpus is None:
        corpus = _load_corpus(run["corpus"], run["format"])
    return toy_model(m["src_vocab"], m["tgt_vocab"], m["dim"], m["seed"], corpus=corpus,
                     key_scale=m["key_scale"])


def _index_config(nlist, m, l, opq, pca_dim, seed, label, kmeans_iters, pq_iters, opq_iters) -> IndexConfig:
    return IndexConfig(nlist=nlist, M=m, L=l, use_opq=opq, pca_dim=pca_dim, seed=derive_seed(seed, label),
                       kmeans_iters=kmeans_iters, pq_iters=pq_iters, opq_iters=opq_iters)


def _timing(workdir: Path) -> TimingReport:
    path = workdir / TIMING_FILE
    report = TimingReport()
    if path.exists():
        report.seconds.update({k: v for k, v in json.loads(path.read_text()).items() if k != "total"})
    return report


def _save_timing(workdir: Path, report: TimingReport) -> None:
    report.save(workdir / TIMING_FILE)
    (workdir / "timing.txt").write_text(report.to_text() + "\n")
    click.echo(report.to_text())


# corpus


@cli.command("demo-corpus")
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--sentences", type=click.IntRange(min=1), default=1000, help="Number of sentence pairs.")
@click.option("--src-vocab", type=click.IntRange(min=4), default=1000)
@click.option("--tgt-vocab", type=click.IntRange(min=4), default=1000)
@click.option("--min-len", type=click.IntRange(min=1), default=4)
@click.option("--max-len", type=click.IntRange(min=1), default=20)
@seed_option
def demo_corpus(out, sentences, src_vocab, tgt_vocab, min_len, max_len, seed):
    """Write the synthetic demo corpus (JSONL, word-for-word lexicon) to OUT."""
    if min_len > max_len:
        raise InvalidArgument("min-len exceeds max-len")
    corpus = synthetic_corpus(sentences, src_vocab, tgt_vocab, min_len, max_len, seed=seed)
    write_jsonl(corpus, out)
    _echo(f"wrote {len(corpus)} sentence pairs, {corpus.num_tokens} target tokens to {out}")


# build


@cli.group()
def build():
    """Datastore construction stages."""


@build.command("values")
@workdir_option
@click.option("--corpus", "corpus_path", type=click.Path(dir_okay=False), required=True,
              help="Training corpus.")
@click.option("--format", "fmt", type=click.Choice(["jsonl", "plain"]), default="jsonl",
              help="jsonl records or tab-separated plain text.")
@click.option("--dim", type=click.IntRange(min=8), default=64, help="Toy model key dimension.")
@click.option("--key-scale", type=click.FloatRange(min=0, min_open=True), default=128.0,
              help="Toy model key norm.")
@seed_option
def build_values(workdir, corpus_path, fmt, dim, key_scale, seed):
    """Stage 0: record the run and write the target-token store."""
    workdir = Path(workdir)
    corpus = _load_corpus(_need(Path(corpus_path), "corpus"), fmt)
    workdir.mkdir(parents=True, exist_ok=True)
    run = {
        "corpus": str(Path(corpus_path).resolve()),
        "format": fmt,
        "seed": seed,
        "model": {"src_vocab": corpus.src_vocab, "tgt_vocab": corpus.tgt_vocab, "dim": dim,
                  "seed": derive_seed(seed, "model"), "key_scale": key_scale},
    }
    (workdir / RUN_FILE).write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    tokens = store_values(corpus, workdir / VALUES_FILE)
    _echo(f"{len(tokens)} target tokens from {tokens.num_sentences} sentences -> {workdir / VALUES_FILE}")


@build.command("keys")
@workdir_option
@click.option("--max-tokens", type=click.IntRange(min=1), default=4096,
              help="Padded-token budget per batch.")
@click.option("--chunk-rows", type=click.IntRange(min=1), default=65536, help="Rows per key-file chunk.")
@threads_option
def build_keys(workdir, max_tokens, chunk_rows, threads):
    """Stage 1: compute a key for every target position."""
    workdir = Path(workdir)
    run = _read_run(workdir)
    corpus = _load_corpus(run["corpus"], run["format"])
    model = _model_from_run(run, corpus)
    report = _timing(workdir)
    t0 = time.perf_counter()
    with _threads(threads):
        plan = plan_batches(corpus, max_tokens)
        keys = compute_keys(model, corpus, plan, workdir / KEYS_FILE, chunk_rows=chunk_rows, threads=threads)
    report.seconds["compute_keys"] = time.perf_counter() - t0
    _echo(f"{keys.count} keys of dimension {keys.d} in {len(plan.batches)} batches -> {workdir / KEYS_FILE}")
    _save_timing(workdir, report)


def index_options(nlist: int, m: int, opq: bool):
    def wrap(f):
        for opt in reversed([
            click.option("--nlist", type=click.IntRange(min=1), default=nlist, help="Number of inverted lists."),
            click.option("--M", "m", type=click.IntRange(min=1), default=m, help="PQ sub-quantizers."),
            click.option("--L", "l", type=click.IntRange(1, 256), default=256, help="Codewords per sub-quantizer."),
            click.option("--opq/--no-opq", default=opq, help="Learn an OPQ rotation before encoding."),
            click.option("--pca-dim", type=click.IntRange(min=1), default=None,
                         help="Reduce keys to this dimension with PCA first."),
            click.option("--kmeans-iters", type=click.IntRange(min=1), default=25),
            click.option("--pq-iters", type=click.IntRange(min=1), default=25),
            click.option("--opq-iters", type=click.IntRange(min=1), default=20),
        ]):
            f = opt(f)
        return f
    return wrap


@build.command("index")
@workdir_option
@index_options(nlist=1024, m=64, opq=False)
@threads_option
def build_index_cmd(workdir, nlist, m, l, opq, pca_dim, kmeans_iters, pq_iters, opq_iters, threads):
    """Stage 2: train the IVFPQ index and add every key."""
    workdir = Path(workdir)
    run = _read_run(workdir)
    cfg = _index_config(nlist, m, l, opq, pca_dim, run["seed"], "index", kmeans_iters, pq_iters, opq_iters)
    keys = KeyStore.open(_need(workdir / KEYS_FILE, "key file (run `build keys` first)"))
    cfg.validate(keys.d)
    report = _timing(workdir)
    with _threads(threads):
        index, report = build_index(keys, cfg, workdir / INDEX_FILE, report)
    _echo(f"index: {index.total} codes in {index.nlist} lists -> {workdir / INDEX_FILE}")
    _save_timing(workdir, report)


@build.command("sentence-index")
@workdir_option
@index_options(nlist=32768, m=64, opq=True)
@click.option("--flat-M", "flat_m", type=click.IntRange(min=1), default=64,
              help="Sub-quantizers of the flat token codes scanned in subset mode.")
@click.option("--flat-opq/--no-flat-opq", default=True, help="Rotate token keys before flat encoding.")
@threads_option
def build_sentence_index(workdir, nlist, m, l, opq, pca_dim, kmeans_iters, pq_iters, opq_iters,
                         flat_m, flat_opq, threads):
    """Subset mode: sentence datastore plus flat PQ codes of every token key."""
    workdir = Path(workdir)
    run = _read_run(workdir)
    corpus = _load_corpus(run["corpus"], run["format"])
    model = _model_from_run(run, corpus)
    cfg = _index_config(nlist, m, l, opq, pca_dim, run["seed"], "sentence_index",
                        kmeans_iters, pq_iters, opq_iters)
    cfg.validate(model.dim)
    if cfg.nlist > len(corpus):
        raise InvalidArgument(f"nlist={cfg.nlist} exceeds the {len(corpus)} sentences; pass a smaller --nlist")
    keys = KeyStore.open(_need(workdir / KEYS_FILE, "key file (run `build keys` first)"))
    IndexConfig(M=flat_m, L=l).validate(keys.d)
    with _threads(threads):
        sd = build_sentence_datastore(model, corpus, cfg)
        sd.save(workdir / SENTENCES_FILE)
        flat = build_flat_codes(keys, flat_m, l, use_opq=flat_opq, seed=derive_seed(run["seed"], "flat_codes"),
                                opq_iters=opq_iters, pq_iters=pq_iters)
        flat.save(workdir / FLAT_FILE)
    _echo(f"sentence datastore: {len(sd)} sentences -> {workdir / SENTENCES_FILE}; "
          f"flat codes: {len(flat)} x {flat_m} -> {workdir / FLAT_FILE}")


# translate


def _read_sources(path):
    """JSONL with a "src" list per line and optional "tgt" references."""
    srcs, refs = [], []
    with open(_need(Path(path), "input file"), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                srcs.append([int(t) for t in rec["src"]])
                refs.append([int(t) for t in rec["tgt"]] if "tgt" in rec else None)
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"line {lineno}: bad record ({exc})", path=path) from None
    return srcs, refs


@cli.command()
@workdir_option
@click.option("--input", "input_path", type=click.Path(dir_okay=False), required=True,
              help='JSONL sources, one {"src": [...]} per line.')
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="JSONL translation records.")
@click.option("--summary", type=click.Path(dir_okay=False), default=None,
              help="Run summary JSON [default: OUT with .summary.json].")
@click.option("--mode", type=click.Choice(["vanilla", "subset", "base"]), default="vanilla",
              help="Retrieval back end; base disables retrieval.")
@click.option("--k", type=click.IntRange(min=1), default=64, help="Neighbours per query.")
@click.option("--nprobe", type=click.IntRange(min=1), default=32, help="Inverted lists probed.")
@click.option("--tau", type=click.FloatRange(min=0, min_open=True), default=100.0, help="kNN temperature.")
@click.option("--lam", "--lambda", "lam", type=click.FloatRange(0, 1), default=0.4,
              help="Weight of the kNN distribution.")
@click.option("--n", "subset_n", type=click.IntRange(min=1), default=512,
              help="Nearest sentences forming the subset.")
@click.option("--beam", type=click.IntRange(min=1), default=5)
@click.option("--length-penalty", type=float, default=1.0)
@click.option("--max-len", type=click.IntRange(min=1), default=None, help="[default: 2*|src|+10]")
@threads_option
def translate(workdir, input_path, out, summary, mode, k, nprobe, tau, lam, subset_n, beam,
              length_penalty, max_len, threads):
    """Translate sources with the interpolated distribution."""
    workdir = Path(workdir)
    cfg = KNNConfig(k=k, tau=tau, lam=lam, nprobe=nprobe, subset_n=subset_n, mode=mode)
    cfg.validate()
    srcs, refs = _read_sources(input_path)
    run = _read_run(workdir)
    model = _model_from_run(run)
    for i, s in enumerate(srcs):
        if not s or min(s) < 0 or max(s) >= model.src_vocab:
            raise InvalidArgument(f"{input_path}: source {i} is empty or outside the vocabulary")
    tokens = TokenStore.load(_need(workdir / VALUES_FILE, "token store"))
    if mode == "vanilla":
        index = IVFPQIndex.load(_need(workdir / INDEX_FILE, "index (run `build index` first)"))
        retriever = VanillaRetriever(index, tokens, k, nprobe)
    elif mode == "subset":
        sd = SentenceDatastore.load(_need(workdir / SENTENCES_FILE, "sentence datastore (run `build sentence-index`)"))
        flat = FlatCodes.load(_need(workdir / FLAT_FILE, "flat codes (run `build sentence-index`)"))
        if sd.num_tokens != len(tokens):
            raise InvalidArgument(f"sentence datastore covers {sd.num_tokens} tokens, token store has {len(tokens)}")
        retriever = SubsetRetriever(sd, flat, tokens, model, k, subset_n, nprobe)
    else:
        retriever = None
    with _threads(threads):
        results, info = translate_all(model, retriever, srcs, cfg, beam, length_penalty, max_len, threads)
    with open(out, "w", encoding="utf-8") as fh:
        for src, r in zip(srcs, results):
            rec = {"src": src, "hyp": r.tokens, "score": r.score, "steps": r.steps, "knn_hits": r.knn_hits}
            if r.warnings:
                rec["warnings"] = r.warnings
            fh.write(json.dumps(rec) + "\n")
    info.update({"k": k, "nprobe": nprobe, "tau": tau, "lambda": lam, "beam": beam,
                 "length_penalty": length_penalty})
    if mode == "subset":
        info["subset_n"] = subset_n
    if all(r is not None for r in refs):
        info["token_accuracy"] = token_accuracy([r.tokens for r in results], refs)
    summary = summary or str(Path(out).with_suffix(".summary.json"))
    Path(summary).write_text(json.dumps(info, indent=2) + "\n")
    _echo(f"{info['sentences']} sentences, {info['tokens']} tokens, {info['tok_per_s']:.1f} tok/s -> {out}")


# search


@cli.command()
@workdir_option
@click.option("--queries", type=click.Path(dir_okay=False), default=None,
              help=".npy float32 matrix of query vectors.")
@click.option("--key-rows", type=str, default=None, help="Comma-separated stored key rows to use as queries.")
@click.option("--k", type=click.IntRange(min=1), default=64)
@click.option("--nprobe", type=click.IntRange(min=1), default=32)
def search(workdir, queries, key_rows, k, nprobe):
    """Ad-hoc nearest-neighbour search; prints one JSON line per query."""
    workdir = Path(workdir)
    if (queries is None) == (key_rows is None):
        raise InvalidArgument("give exactly one of --queries and --key-rows")
    index = IVFPQIndex.load(_need(workdir / INDEX_FILE, "index"))
    tokens = TokenStore.load(workdir / VALUES_FILE) if (workdir / VALUES_FILE).exists() else None
    if queries is not None:
        try:
            q = np.load(_need(Path(queries), "query file"), allow_pickle=False)
        except ValueError as exc:
            raise FormatError(f"not a .npy array ({exc})", path=queries) from None
    else:
        keys = KeyStore.open(_need(workdir / KEYS_FILE, "key file"))
        try:
            rows = [int(r) for r in key_rows.split(",")]
        except ValueError:
            raise InvalidArgument(f"bad --key-rows {key_rows!r}") from None
        if min(rows) < 0 or max(rows) >= keys.count:
            raise InvalidArgument(f"key rows must be in [0, {keys.count})")
        q = keys.rows(np.array(rows))
    params = SearchParams(k=k, nprobe=nprobe)
    params.validate(index.nlist)
    ids, dists = index.search_batch(q, params)
    for i, (row_ids, row_d) in enumerate(zip(ids, dists)):
        keep = row_ids >= 0
        rec = {"query": i, "ids": row_ids[keep].tolist(), "dists": row_d[keep].tolist()}
        if tokens is not None:
            rec["values"] = tokens.tokens[row_ids[keep]].tolist()
        click.echo(json.dumps(rec))


# bench


@cli.group("bench")
def bench_group():
    """Recall and latency of the token index against brute-force ground truth."""


def bench_options(nprobes_default: str | None):
    def wrap(f):
        for opt in reversed([
            workdir_option,
            click.option("--synthetic", type=click.IntRange(min=1), default=None,
                         help="Benchmark a fresh index over this many Gaussian-mixture vectors instead."),
            click.option("--dim", type=click.IntRange(min=1), default=32, help="Synthetic dimension."),
            click.option("--clusters", type=click.IntRange(min=1), default=256, help="Synthetic mixture size."),
            click.option("--nlist", type=click.IntRange(min=1), default=1024, help="Synthetic index lists."),
            click.option("--M", "m", type=click.IntRange(min=1), default=8, help="Synthetic index sub-quantizers."),
            click.option("--queries", type=click.Path(dir_okay=False), default=None,
                         help=".npy query matrix [default: sampled held-out or stored vectors]."),
            click.option("--n-queries", type=click.IntRange(min=1), default=100),
            click.option("--k", type=click.IntRange(min=1), default=64),
            click.option("--nprobes", type=str, default=nprobes_default,
                         help="Comma-separated nprobe values [default: 1,2,4,...,nlist]."),
            click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV path [default: stdout]."),
            seed_option,
            threads_option,
        ]):
            f = opt(f)
        return f
    return wrap


def _bench_setup(workdir, synthetic, dim, clusters, nlist, m, queries, n_queries, seed):
    if synthetic is not None:
        data = benchmod.gaussian_mixture(synthetic + n_queries, dim, clusters, seed=derive_seed(seed, "bench_data"))
        base, held_out = data[:synthetic], data[synthetic:]
        cfg = IndexConfig(nlist=nlist, M=m, seed=derive_seed(seed, "bench_index"))
        cfg.validate(dim)
        sample = base
        if base.shape[0] > 256 * max(nlist, 256):
            rng = np.random.default_rng(derive_seed(seed, "bench_sample"))
            sample = base[np.sort(rng.choice(base.shape[0], 256 * max(nlist, 256), replace=False))]
        index = train_ivfpq(sample, cfg.nlist, cfg.M, cfg.L, seed=cfg.seed)
        index.add(base)
    else:
        workdir = Path(workdir)
        index = IVFPQIndex.load(_need(workdir / INDEX_FILE, "index"))
        base = KeyStore.open(_need(workdir / KEYS_FILE, "key file")).rows(slice(None))
        held_out = None
    if queries is not None:
        q = np.load(_need(Path(queries), "query file"), allow_pickle=False)
    elif held_out is not None:
        q = held_out
    else:
        rng = np.random.default_rng(derive_seed(seed, "bench_queries"))
        q = base[np.sort(rng.choice(base.shape[0], min(n_queries, base.shape[0]), replace=False))]
    q = np.asarray(q, dtype=np.float32)
    if q.ndim != 2 or q.shape[1] != base.shape[1]:
        raise InvalidArgument(f"queries have shape {q.shape}, vectors have dimension {base.shape[1]}")
    return index, base, q


def _run_bench(workdir, synthetic, dim, clusters, nlist, m, queries, n_queries, k, nprobes, out, seed,
               threads, check_monotone):
    with _threads(threads):
        index, base, q = _bench_setup(workdir, synthetic, dim, clusters, nlist, m, queries, n_queries, seed)
        truth, _ = benchmod.exact_knn(base, q, k)
        if nprobes:
            try:
                values = [int(v) for v in nprobes.split(",")]
            except ValueError:
                raise InvalidArgument(f"bad --nprobes {nprobes!r}") from None
        else:
            values = benchmod.nprobe_schedule(index.nlist)
        rows = benchmod.run_bench(index, q, truth, k, values, check_monotone=False)
    if out:
        with open(out, "w", newline="") as fh:
            benchmod.write_csv(rows, fh)
    else:
        benchmod.write_csv(rows, sys.stdout)
    if check_monotone:
        benchmod.check_recall_monotone(rows)


@bench_group.command("recall")
@bench_options(None)
def bench_recall(**kw):
    """recall@k per nprobe; fails (exit 4) if recall ever decreases."""
    _run_bench(check_monotone=True, **kw)


@bench_group.command("speed")
@bench_options("32")
def bench_speed(**kw):
    """Per-query latency percentiles and throughput."""
    _run_bench(check_monotone=False, **kw)


# entry point


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="knnmt", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        _echo("aborted")
        return 1
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except FormatError as exc:
        _echo(f"error: {exc}")
        return EXIT_DATA
    except InvalidArgument as exc:
        _echo(f"error: {exc}")
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        _echo(f"error: {exc}")
        return EXIT_USAGE
    except (StorageError, OSError) as exc:
        _echo(f"error: {exc}")
        return EXIT_DATA
    except (InvalidState, KnnError) as exc:
        _echo(f"internal error: {exc}")
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
