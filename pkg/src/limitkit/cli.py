"""``limitkit`` command-line entry point.

Subcommands: gen, embed, eval, simulate, report. Every run writes ``run.json``
(tool version, subcommand, resolved options, seed) next to its outputs.
Values from ``--config`` (JSON or TOML) override flags, which override defaults.

Exit codes: 0 success, 2 invalid config, 3 infeasible generation, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import (
    InfeasibleConfig,
    LimitConfig,
    gen_atomic,
    gen_extended,
    gen_fresh,
    gen_limit,
    gen_multi_attribute,
    gen_permuted,
    gen_split,
    read_bundle,
    write_bundle,
)
from .retrieval import (
    EmbeddingStore,
    evaluate,
    export_embeddings,
    ingest_embeddings,
    markdown_table,
    retrieve_top_k,
)
from .signrank import construct_sparse_embeddings
from .sumembed import ScanConfig, embed_matrix, minimal_dimension_scan, sample_near_orthogonal_basis, scan_csv, scan_summary
from .toymodels import (
    GoodnessReport,
    ToyModelParams,
    corpus_drown_curve,
    fit_multi_constant,
    goodness,
    score_histograms,
    simulate_multi_vector,
    simulate_single_vector,
    write_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "LIMITKIT_OUT"
VARIANTS = ("limit", "split", "atomic", "permuted", "fresh", "extended", "two", "three")

log = logging.getLogger("limitkit")


class ConfigError(Exception):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _words(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUT_ENV}/<subcommand>)")
    common.add_argument("--config", type=Path, default=None, help="JSON or TOML file; its values override flags")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="limitkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"limitkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a LIMIT-family dataset")
    g.add_argument("variant", choices=VARIANTS)
    g.add_argument("--source", type=Path, help="existing bundle to derive from (default: build LIMIT first)")
    d = LimitConfig()
    g.add_argument("--num-queries", type=int, default=d.num_queries)
    g.add_argument("--num-docs", type=int, default=d.num_docs)
    g.add_argument("--doc-length", type=int, default=d.doc_length)
    g.add_argument("--vocab-size", type=int, default=d.vocab_size)
    g.add_argument("--core-docs", type=int, default=d.core_docs)
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--extra-docs", type=int, default=50000)
    g.add_argument("--permute-mode", choices=("triple", "replace"), default="triple")
    g.add_argument("--multi-queries", type=int, default=None, help="two/three: number of sampled queries (default all)")

    e = sub.add_parser("embed", parents=[common], help="build embeddings for a dataset")
    e.add_argument("method", choices=("signrank", "sumvec", "sumtok"))
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--dim", type=int, default=512, help="sumvec/sumtok basis dimension")
    e.add_argument("--canonical", action="store_true", help="use the orthonormal basis (needs dim >= |U|)")
    e.add_argument("--doc-mode", choices=("rescaled", "normalized"), default="rescaled")
    e.add_argument("--spacing", choices=("adaptive", "uniform"), default="adaptive")
    e.add_argument("--dtype", choices=("float64", "float32"), default="float64")

    v = sub.add_parser("eval", parents=[common], help="retrieve and score against qrels")
    v.add_argument("--data", type=Path, required=True)
    v.add_argument("--emb", type=Path, required=True, help="directory with queries.emb and docs.emb")
    v.add_argument("--ks", type=_ints, default=[2, 10, 50, 100])
    v.add_argument("--metrics", type=_words, default=["recall"])
    v.add_argument("--scorer", choices=("auto", "dot", "cosine", "chamfer"), default="auto")
    v.add_argument("--label", default=None)

    s = sub.add_parser("simulate", parents=[common], help="toy-model Monte Carlo")
    s.add_argument("model", choices=("single", "multi", "both", "sumscan"))
    s.add_argument("--dims", type=_ints, default=[256])
    s.add_argument("--m", type=_ints, default=[1, 4, 16])
    s.add_argument("--n", type=_ints, default=[16, 64, 256, 1024])
    s.add_argument("--K", type=_ints, default=[1])
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--method", choices=("auto", "tokens", "reduced"), default="auto")
    s.add_argument("--vocabulary", choices=("fresh", "shared"), default="fresh")
    s.add_argument("--vocab-size", type=int, default=None)
    s.add_argument("--corpus-sizes", type=_ints, default=[10, 100, 1000, 10000, 100000])
    s.add_argument("--bins", type=int, default=60)
    s.add_argument("--scan-dims", type=_ints, default=list(ScanConfig().dims))
    s.add_argument("--scan-seeds", type=int, default=len(ScanConfig().seeds))

    r = sub.add_parser("report", parents=[common], help="collect CSV outputs into a markdown report")
    r.add_argument("inputs", nargs="+", type=Path)
    return p


# --- config handling --------------------------------------------------------


def load_config(path: Path) -> dict:
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python 3.10
                import tomli as tomllib

            data = tomllib.loads(raw.decode("utf-8"))
        else:
            data = json.loads(raw.decode("utf-8"))
    except Exception as exc:  # malformed file
        raise ConfigError(f"cannot parse {path}: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return data


def apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser, data: dict) -> None:
    """Overwrite parsed flags with config values, coercing through the flag's own type."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config", "help") or dest not in actions:
            raise ConfigError(f"unknown config key {key!r} for '{args.command}'")
        act = actions[dest]
        try:
            if isinstance(value, list) and act.type in (_ints, _words):
                value = act.type(",".join(str(x) for x in value))
            elif act.type is Path:
                value = Path(value) if act.nargs is None else [Path(x) for x in value]
            elif act.type is not None and not isinstance(value, list):
                value = act.type(value)
            elif isinstance(act, argparse._StoreTrueAction):
                if not isinstance(value, bool):
                    raise TypeError("expected a boolean")
        except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}")
        if act.choices is not None and value not in act.choices:
            raise ConfigError(f"{key!r} must be one of {sorted(act.choices)}")
        setattr(args, dest, value)


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_run_record(out: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    # thread count is left out on purpose: outputs do not depend on it
    opts = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("threads", "verbose", "out", "config")}
    rec = {"tool": "limitkit", "version": __version__, "subcommand": args.command, "seed": args.seed, "options": opts}
    if extra:
        rec.update(extra)
    (out / "run.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


# --- subcommands ------------------------------------------------------------


def cmd_gen(args) -> Path:
    out = args.out
    cfg = LimitConfig(
        num_queries=args.num_queries, num_docs=args.num_docs, doc_length=args.doc_length,
        vocab_size=args.vocab_size, core_docs=args.core_docs, seed=args.seed,
    )
    if args.variant == "limit" or args.source is None:
        base = gen_limit(cfg, threads=args.threads)
    else:
        base = read_bundle(args.source)
    v = args.variant
    if v == "limit":
        write_bundle(base, out)
    elif v == "split":
        train, test = gen_split(base, args.train_fraction, args.seed)
        write_bundle(train, out / "train")
        write_bundle(test, out / "test")
    elif v == "atomic":
        write_bundle(gen_atomic(base), out)
    elif v == "permuted":
        write_bundle(gen_permuted(base, args.seed, args.permute_mode), out)
    elif v == "fresh":
        write_bundle(gen_fresh(base, args.seed + 1, args.threads), out)
    elif v == "extended":
        write_bundle(gen_extended(base, args.extra_docs, args.seed, args.threads), out)
    else:
        arity = 2 if v == "two" else 3
        if v == "three":
            log.warning("three-attribute LIMIT is experimental")
        write_bundle(gen_multi_attribute(base, arity, args.multi_queries, args.seed), out)
    return out


def cmd_embed(args) -> Path:
    b = read_bundle(args.data)
    dtype = np.dtype(args.dtype)
    qids, dids = b.query_ids(), b.doc_ids()
    meta = {"dataset": str(args.data), "method": args.method}
    if args.method == "signrank":
        emb = construct_sparse_embeddings(b.qrels, spacing=args.spacing)
        if dtype != np.float64:
            log.warning("signrank embeddings in float32 may lose sign margins")
        meta.update(emb.metadata())
        qs = EmbeddingStore.single(qids, emb.queries.astype(dtype), **meta)
        ds = EmbeddingStore.single(dids, emb.docs.astype(dtype), **meta)
    else:
        basis = sample_near_orthogonal_basis(b.universe.size, args.dim, args.seed, canonical=args.canonical)
        meta.update({"d": basis.dim, "epsilon": basis.max_cross_dot, "epsilon_exact": basis.exact,
                     "basis_seed": None if args.canonical else args.seed})
        q_items = [q.itemset for q in b.queries]
        d_items = [d.itemset for d in b.documents]
        if args.method == "sumvec":
            meta["doc_mode"] = args.doc_mode
            qs = EmbeddingStore.single(qids, embed_matrix(q_items, basis, "query").astype(dtype), **meta)
            ds = EmbeddingStore.single(dids, embed_matrix(d_items, basis, args.doc_mode).astype(dtype), **meta)
        else:
            V = basis.vectors.astype(dtype)
            qs = EmbeddingStore.multi(qids, [V[list(it.ids)] for it in q_items], **meta)
            ds = EmbeddingStore.multi(dids, [V[list(it.ids)] for it in d_items], **meta)
    args.out.mkdir(parents=True, exist_ok=True)
    export_embeddings(qs, args.out / "queries.emb")
    export_embeddings(ds, args.out / "docs.emb")
    (args.out / "embedding.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")
    return args.out


def cmd_eval(args) -> Path:
    b = read_bundle(args.data)
    qs = ingest_embeddings(args.emb / "queries.emb")
    ds = ingest_embeddings(args.emb / "docs.emb")
    _check(list(qs.ids) == b.query_ids(), "query embeddings do not match the dataset's queries")
    _check(list(ds.ids) == b.doc_ids(), "document embeddings do not match the dataset's corpus")
    for m in args.metrics:
        _check(m in ("recall", "mrr", "ndcg"), f"unknown metric {m!r}")
    _check(all(k >= 1 for k in args.ks), "ks must be positive")
    scorer = args.scorer
    if scorer == "auto":
        # signrank inner products are the construction; cosine would rescale them harmlessly,
        # but sum embeddings need the raw dot product for the rescaled documents
        scorer = "chamfer" if "multi" in (qs.kind, ds.kind) else "dot"
    run = retrieve_top_k(qs, ds, max(args.ks), scorer, threads=args.threads)
    label = args.label or f"{args.emb.name}"
    rep = evaluate(run, b.qrels_dict(), args.ks, args.metrics, label)
    args.out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(args.out / "metrics.csv")
    (args.out / "table.md").write_text(markdown_table([rep]), encoding="utf-8")
    run.to_trec(args.out / "run.trec", tag=label)
    return args.out


def _grid(args):
    for D in args.dims:
        for m in args.m:
            for n in args.n:
                for K in args.K:
                    if K > min(m, n):
                        log.warning("skipping D=%d m=%d n=%d K=%d: K exceeds min(m, n)", D, m, n, K)
                        continue
                    yield ToyModelParams(D, m, n, K, trials=args.trials, seed=args.seed)


def cmd_simulate(args) -> Path:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.model == "sumscan":
        cfg = ScanConfig(dims=tuple(args.scan_dims), seeds=tuple(range(args.scan_seeds)), instance_seed=args.seed)
        rows = minimal_dimension_scan(cfg, threads=args.threads)
        scan_csv(rows, out / "scan.csv")
        (out / "scan_summary.json").write_text(json.dumps(scan_summary(rows), indent=2) + "\n", encoding="utf-8")
        return out
    _check(args.trials >= 2, "trials must be at least 2")
    models = {"single": ["single"], "multi": ["multi"], "both": ["single", "multi"]}[args.model]
    good, drown, hist, normal = [], [], [], []
    multi_reports: list[GoodnessReport] = []
    for p in _grid(args):
        for model in models:
            sim = simulate_single_vector if model == "single" else simulate_multi_vector
            s = sim(p, method=args.method, vocabulary=args.vocabulary, vocab_size=args.vocab_size, threads=args.threads)
            rep = goodness(s)
            if model == "multi" and p.doc_size >= 2:
                multi_reports.append(rep)
            key = {"model": model, "D": p.dim, "m": p.query_size, "n": p.doc_size, "K": p.overlap}
            good.append({**rep.row(), "model": model, "method": s.method,
                         "drown_log_gaussian": rep.drowning.log_gaussian})
            for r in corpus_drown_curve(s, args.corpus_sizes):
                drown.append({**key, **r})
            h, diag = score_histograms(s, args.bins)
            hist.extend({**key, **{k: v for k, v in r.items() if k != "model"}} for r in h)
            normal.append({**key, **diag})
    if not good:
        raise ConfigError("empty parameter grid")
    write_csv(good, out / "goodness.csv")
    write_csv(drown, out / "drowning.csv")
    write_csv(hist, out / "histograms.csv")
    write_csv(normal, out / "normality.csv")
    if len(multi_reports) >= 2:
        fits = [fit_multi_constant(multi_reports, form) for form in ("log-denominator", "log-numerator")]
        write_csv([{"form": f.form, "c": f.c, "stderr": f.stderr, "ci95_lo": f.ci95[0], "ci95_hi": f.ci95[1],
                    "rel_rmse": f.rel_rmse} for f in fits], out / "multi_fit.csv")
    return out


def _read_csv(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def cmd_report(args) -> Path:
    files = []
    for item in args.inputs:
        if item.is_dir():
            files.extend(sorted(item.rglob("*.csv")))
        elif item.exists():
            files.append(item)
        else:
            raise FileNotFoundError(item)
    lines = ["# limitkit report", ""]
    metric_rows = []
    for f in files:
        if f.name == "metrics.csv":
            rows = _read_csv(f)
            overall = next((r for r in rows if r["query_id"] == "all"), None)
            if overall:
                metric_rows.append((f.parent.name, overall))
    if metric_rows:
        cols = [c for c in metric_rows[0][1] if c != "query_id"]
        lines += ["## Retrieval", "", "| Model | " + " | ".join(cols) + " |", "|" + "---|" * (len(cols) + 1)]
        for name, r in metric_rows:
            lines.append(f"| {name} | " + " | ".join(f"{float(r.get(c, 'nan')):.4f}" for c in cols) + " |")
        lines.append("")
    for f in files:
        if f.name in ("goodness.csv", "multi_fit.csv", "scan.csv"):
            rows = _read_csv(f)
            if not rows:
                continue
            cols = list(rows[0])
            lines += [f"## {f.parent.name}/{f.name}", "", "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
            lines += ["| " + " | ".join(r[c] for c in cols) + " |" for r in rows]
            lines.append("")
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.md").write_text("\n".join(lines), encoding="utf-8")
    return args.out


COMMANDS = {"gen": cmd_gen, "embed": cmd_embed, "eval": cmd_eval, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is not None:
            apply_config(args, parser, load_config(args.config))
        _check(args.threads >= 1, "threads must be >= 1")
        if args.out is None:
            args.out = Path(os.environ.get(OUT_ENV, "limitkit-out")) / args.command
        out = COMMANDS[args.command](args)
        out.mkdir(parents=True, exist_ok=True)
        write_run_record(out, args)
    except InfeasibleConfig as exc:
        print(f"limitkit: infeasible configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"limitkit: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"limitkit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
