"""Seeded generators for the LIMIT family of synthetic retrieval datasets.

All generators are pure functions of their inputs and seed. Documents are
produced in fixed-size blocks, each with its own counter-derived random
stream, so the output does not depend on how many worker threads are used.

On disk a bundle is a BEIR-style directory::

    corpus.jsonl      {"_id", "title", "text", "attrs"}
    queries.jsonl     {"_id", "text", "attrs"}
    qrels.tsv         query-id <TAB> corpus-id <TAB> score   (with header)
    universe.jsonl    {"id", "attr"}  one line per attribute, in id order
    provenance.json   variant, config, seed, generator version, relevance rule
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import parallel_map, stream
from .sets import (
    AnyOverlap,
    AttributeUniverse,
    ItemSet,
    RelevanceMatrix,
    Threshold,
    build_relevance_matrix,
    rule_from_dict,
)
from .vocab import FIRST_NAMES, LAST_NAMES, atomic_words, default_attributes

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "limitkit-datasets/1"
DOC_BLOCK = 1024


class InfeasibleConfig(ValueError):
    """The requested dataset cannot be generated under the given parameters."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    name: str
    attrs: tuple[int, ...]  # rendered order
    text: str

    @property
    def itemset(self) -> ItemSet:
        return ItemSet.of(self.attrs)


@dataclass(frozen=True)
class Query:
    query_id: str
    attrs: tuple[int, ...]
    text: str

    @property
    def itemset(self) -> ItemSet:
        return ItemSet.of(self.attrs)


@dataclass
class LimitConfig:
    num_queries: int = 1000
    num_docs: int = 50000
    doc_length: int = 48
    vocab_size: int = 1848
    core_docs: int = 46
    seed: int = 0
    first_names: list[str] = field(default_factory=lambda: list(FIRST_NAMES))
    last_names: list[str] = field(default_factory=lambda: list(LAST_NAMES))
    attributes: list[str] | None = None

    def validate(self) -> None:
        q, n, N = self.num_queries, self.num_docs, self.core_docs
        if q < 1 or n < 1 or self.doc_length < 1:
            raise InfeasibleConfig("num_queries, num_docs and doc_length must be positive")
        if N < 2 or N > n:
            raise InfeasibleConfig(f"need 2 <= core_docs <= num_docs, got core_docs={N}, num_docs={n}")
        if math.comb(N, 2) < q:
            raise InfeasibleConfig(f"C({N},2)={math.comb(N, 2)} < {q} queries")
        if self.vocab_size < q:
            raise InfeasibleConfig(f"vocab_size={self.vocab_size} < num_queries={q}")
        if self.attributes is not None and len(self.attributes) != self.vocab_size:
            raise InfeasibleConfig("len(attributes) must equal vocab_size")
        pool = self.vocab_size - q
        if n > N and pool < self.doc_length:
            raise InfeasibleConfig(
                f"only {pool} non-query attributes available to pad documents of length {self.doc_length}"
            )
        if not self.first_names or not self.last_names:
            raise InfeasibleConfig("name pools must be nonempty")

    def vocabulary(self) -> list[str]:
        return list(self.attributes) if self.attributes is not None else default_attributes(self.vocab_size)


@dataclass
class DatasetBundle:
    universe: AttributeUniverse
    documents: list[Document]
    queries: list[Query]
    qrels: RelevanceMatrix
    provenance: dict

    @property
    def rule(self):
        return rule_from_dict(self.provenance["relevance_rule"])

    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.documents]

    def query_ids(self) -> list[str]:
        return [q.query_id for q in self.queries]

    def qrels_dict(self) -> dict[str, set[str]]:
        ids = self.doc_ids()
        return {q.query_id: {ids[j] for j in row} for q, row in zip(self.queries, self.qrels.rows)}

    def query_attribute_ids(self) -> set[int]:
        return {a for q in self.queries for a in q.attrs}


def _join_attrs(words: Sequence[str]) -> str:
    if len(words) == 1:
        return words[0]
    if len(words) == 2:
        return f"{words[0]} and {words[1]}"
    return ", ".join(words[:-1]) + f", and {words[-1]}"


def render_query(words: Sequence[str]) -> str:
    if len(words) <= 2:
        return f"who likes {_join_attrs(words)}?"
    return f"who likes {', '.join(words[:-1])} and {words[-1]}?"


def render_document(name: str, words: Sequence[str]) -> str:
    return f"{name} likes {_join_attrs(words)}."


def _doc_id(j: int) -> str:
    return f"d{j:05d}"


def _config_dict(cfg: LimitConfig) -> dict:
    return asdict(cfg)


def _config_from_dict(d: dict) -> LimitConfig:
    return LimitConfig(**d)


def _limit_config(b: DatasetBundle) -> LimitConfig:
    cfg = b.provenance.get("config")
    if cfg is None:
        raise InfeasibleConfig("bundle provenance carries no LimitConfig")
    return _config_from_dict(cfg)


def _make_docs_block(args) -> list[tuple[str, tuple[int, ...]]]:
    (seed, tag, block, lo, hi, core_at, pool, doc_length, first, last) = args
    rng = stream(seed, tag, "docs", block)
    out = []
    for j in range(lo, hi):
        fixed = core_at.get(j, ())
        extra = rng.choice(pool, size=doc_length - len(fixed), replace=False) if doc_length > len(fixed) else []
        attrs = np.concatenate([np.asarray(fixed, dtype=np.int64), np.asarray(extra, dtype=np.int64)])
        attrs = tuple(int(a) for a in rng.permutation(attrs))
        name = f"{first[rng.integers(len(first))]} {last[rng.integers(len(last))]}"
        out.append((name, attrs))
    return out


def _build_corpus(
    cfg: LimitConfig,
    query_attrs: Sequence[int],
    seed: int,
    tag: str,
    words: Sequence[str],
    threads: int = 1,
) -> tuple[list[Document], list[tuple[int, int]], list[int]]:
    """Lay out a dense-pattern corpus. Returns (documents, core pair per query, core doc positions)."""
    q, n, N = len(query_attrs), cfg.num_docs, cfg.core_docs
    all_pairs = list(combinations(range(N), 2))
    order = stream(seed, tag, "pairs").permutation(len(all_pairs))
    pairs = [all_pairs[i] for i in order[:q]]

    core_attrs: list[list[int]] = [[] for _ in range(N)]
    for a, (c1, c2) in zip(query_attrs, pairs):
        core_attrs[c1].append(int(a))
        core_attrs[c2].append(int(a))
    worst = max(len(c) for c in core_attrs)
    if worst > cfg.doc_length:
        raise InfeasibleConfig(f"a core document needs {worst} query attributes but doc_length={cfg.doc_length}")

    positions = [int(p) for p in stream(seed, tag, "layout").permutation(n)[:N]]
    core_at = {positions[c]: tuple(core_attrs[c]) for c in range(N)}

    used = set(int(a) for a in query_attrs)
    pool = np.array([a for a in range(cfg.vocab_size) if a not in used], dtype=np.int64)
    need = max(cfg.doc_length - len(core_attrs[c]) for c in range(N))
    if n > N:
        need = cfg.doc_length
    if len(pool) < need:
        raise InfeasibleConfig(f"padding pool of {len(pool)} attributes cannot fill {need} slots")

    jobs = []
    for block, lo in enumerate(range(0, n, DOC_BLOCK)):
        hi = min(n, lo + DOC_BLOCK)
        local = {j: v for j, v in core_at.items() if lo <= j < hi}
        jobs.append((seed, tag, block, lo, hi, local, pool, cfg.doc_length, cfg.first_names, cfg.last_names))
    blocks = parallel_map(_make_docs_block, jobs, threads)

    docs = []
    for j, (name, attrs) in enumerate(x for blk in blocks for x in blk):
        docs.append(Document(_doc_id(j), name, attrs, render_document(name, [words[a] for a in attrs])))
    return docs, pairs, positions


def _single_queries(query_attrs: Sequence[int], words: Sequence[str]) -> list[Query]:
    return [Query(f"q{i}", (int(a),), render_query([words[a]])) for i, a in enumerate(query_attrs)]


def gen_limit(cfg: LimitConfig, threads: int = 1) -> DatasetBundle:
    """Single-attribute queries, each relevant to one unordered pair of core documents."""
    cfg.validate()
    words = cfg.vocabulary()
    universe = AttributeUniverse(tuple(words))
    query_attrs = [int(a) for a in stream(cfg.seed, "limit", "queries").permutation(cfg.vocab_size)[: cfg.num_queries]]
    docs, pairs, positions = _build_corpus(cfg, query_attrs, cfg.seed, "limit", words, threads)
    queries = _single_queries(query_attrs, words)
    rule = Threshold(1.0)
    qrels = build_relevance_matrix([q.itemset for q in queries], [d.itemset for d in docs], rule)
    designed = RelevanceMatrix([(positions[a], positions[b]) for a, b in pairs], len(docs))
    if qrels != designed:  # padding never reuses query attributes, so these must agree
        raise AssertionError("qrels derived from item sets disagree with the pair design")
    prov = {
        "variant": "limit",
        "generator_version": GENERATOR_VERSION,
        "seed": cfg.seed,
        "config": _config_dict(cfg),
        "relevance_rule": rule.to_dict(),
        "candidate_pairs": math.comb(cfg.core_docs, 2),
        "core_doc_ids": sorted(_doc_id(p) for p in positions),
        "padding_policy": "padding attributes are drawn only from attributes used by no query",
    }
    return DatasetBundle(universe, docs, queries, qrels, prov)


def _derived(b: DatasetBundle, variant: str, **extra) -> dict:
    prov = {k: v for k, v in b.provenance.items() if k not in ("parent",)}
    out = dict(prov)
    out["variant"] = variant
    out["generator_version"] = GENERATOR_VERSION
    out["parent"] = {"variant": b.provenance.get("variant"), "seed": b.provenance.get("seed")}
    out.update(extra)
    return out


def gen_split(b: DatasetBundle, train_fraction: float = 0.8, seed: int = 0) -> tuple[DatasetBundle, DatasetBundle]:
    """Seeded shuffle of the queries, then a prefix cut; both halves share the corpus."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    q = len(b.queries)
    cut = int(round(train_fraction * q))
    if cut <= 0 or cut >= q:
        raise ValueError(f"split of {q} queries at fraction {train_fraction} leaves one side empty")
    perm = stream(seed, "split").permutation(q)
    halves = []
    for part, idx in (("train", np.sort(perm[:cut])), ("test", np.sort(perm[cut:]))):
        idx = [int(i) for i in idx]
        prov = _derived(b, "split", split={"part": part, "train_fraction": train_fraction, "seed": seed})
        halves.append(
            DatasetBundle(b.universe, b.documents, [b.queries[i] for i in idx], b.qrels.subset(idx), prov)
        )
    return halves[0], halves[1]


def _rerender(b: DatasetBundle, words: Sequence[str], documents=None) -> tuple[list[Document], list[Query]]:
    documents = b.documents if documents is None else documents
    docs = [replace(d, text=render_document(d.name, [words[a] for a in d.attrs])) for d in documents]
    queries = [replace(q, text=render_query([words[a] for a in q.attrs])) for q in b.queries]
    return docs, queries


def gen_atomic(b: DatasetBundle, atomic_vocab: Sequence[str] | AttributeUniverse | None = None) -> DatasetBundle:
    """Replace attribute i by the i-th single-word entry of ``atomic_vocab``; ids and qrels are unchanged."""
    if atomic_vocab is None:
        atomic_vocab = atomic_words()
    words = list(atomic_vocab.attributes if isinstance(atomic_vocab, AttributeUniverse) else atomic_vocab)
    if len(words) < b.universe.size:
        raise InfeasibleConfig(f"atomic vocabulary has {len(words)} words, universe needs {b.universe.size}")
    words = words[: b.universe.size]
    bad = [w for w in words if not w or any(c.isspace() for c in w)]
    if bad:
        raise ValueError(f"atomic vocabulary entries must be single words, got {bad[:3]!r}")
    universe = AttributeUniverse(tuple(words))  # rejects duplicates: the mapping must be injective
    docs, queries = _rerender(b, words)
    prov = _derived(b, "atomic", attribute_map="attribute i -> atomic_vocab[i]")
    return DatasetBundle(universe, docs, queries, b.qrels, prov)


def attribute_permutation(b: DatasetBundle, seed: int) -> dict[int, int]:
    """Seeded permutation of the attributes that appear in some query."""
    seen = sorted(b.query_attribute_ids())
    perm = stream(seed, "permuted").permutation(len(seen))
    return {a: seen[int(p)] for a, p in zip(seen, perm)}


def permuted_orderings(attrs: Sequence[int], pi: dict[int, int]) -> tuple[tuple[int, ...], ...]:
    """Three renderings of one document under ``pi``.

    With seen attributes S (after ``pi``, in document order) and unseen ones U:
    the original layout with ``pi`` applied; ``U[0], reversed(S), U[1:]``;
    and ``U, S``. For ``A B C D`` with A, B seen this gives
    ``πA πB C D``, ``C πB πA D`` and ``C D πA πB``.
    """
    mapped = tuple(pi.get(a, a) for a in attrs)
    seen = [pi[a] for a in attrs if a in pi]
    unseen = [a for a in attrs if a not in pi]
    second = tuple(unseen[:1] + seen[::-1] + unseen[1:])
    third = tuple(unseen + seen)
    return mapped, second, third


def gen_permuted(
    b: DatasetBundle,
    seed: int = 0,
    mode: str = "triple",
    permutation: dict[int, int] | None = None,
) -> DatasetBundle:
    """Remap seen attributes inside documents; queries and qrels are kept verbatim.

    ``mode="triple"`` keeps each remapped original under its id and appends the
    two reordered copies (ids suffixed ``#p1``/``#p2``) after the originals.
    ``mode="replace"`` emits only the remapped originals.
    """
    if mode not in ("triple", "replace"):
        raise ValueError("mode must be 'triple' or 'replace'")
    pi = attribute_permutation(b, seed) if permutation is None else dict(permutation)
    if sorted(pi) != sorted(pi.values()):
        raise ValueError("permutation must be a bijection on its support")
    firsts, extra1, extra2 = [], [], []
    for d in b.documents:
        o1, o2, o3 = permuted_orderings(d.attrs, pi)
        firsts.append(replace(d, attrs=o1))
        extra1.append(replace(d, doc_id=f"{d.doc_id}#p1", attrs=o2))
        extra2.append(replace(d, doc_id=f"{d.doc_id}#p2", attrs=o3))
    documents = firsts + (extra1 + extra2 if mode == "triple" else [])
    docs, _ = _rerender(b, b.universe.attributes, documents)
    prov = _derived(
        b,
        "permuted",
        relevance_rule={"rule": "inherited", "from": b.provenance["relevance_rule"]},
        permuted={"seed": seed, "mode": mode, "support": len(pi), "explicit": permutation is not None},
    )
    return DatasetBundle(b.universe, docs, list(b.queries), b.qrels.with_num_docs(len(docs)), prov)


def gen_fresh(b: DatasetBundle, seed: int = 1, threads: int = 1) -> DatasetBundle:
    """Same queries, a newly sampled core set and pair assignment, and a regenerated corpus."""
    cfg = _limit_config(b)
    if any(len(q.attrs) != 1 for q in b.queries):
        raise InfeasibleConfig("fresh corpus requires single-attribute queries")
    words = list(b.universe.attributes)
    query_attrs = [q.attrs[0] for q in b.queries]
    docs, pairs, positions = _build_corpus(cfg, query_attrs, seed, "fresh", words, threads)
    rule = Threshold(1.0)
    qrels = build_relevance_matrix([q.itemset for q in b.queries], [d.itemset for d in docs], rule)
    prov = _derived(
        b,
        "fresh",
        relevance_rule=rule.to_dict(),
        fresh={"seed": seed},
        core_doc_ids=sorted(_doc_id(p) for p in positions),
    )
    return DatasetBundle(b.universe, docs, list(b.queries), qrels, prov)


def _make_extra_block(args) -> list[tuple[str, tuple[int, ...]]]:
    seed, block, count, pool, doc_length, first, last = args
    rng = stream(seed, "extended", "docs", block)
    out = []
    for _ in range(count):
        attrs = tuple(int(a) for a in rng.choice(pool, size=doc_length, replace=False))
        name = f"{first[rng.integers(len(first))]} {last[rng.integers(len(last))]}"
        out.append((name, attrs))
    return out


def gen_extended(b: DatasetBundle, extra_docs: int, seed: int = 0, threads: int = 1) -> DatasetBundle:
    """Append ``extra_docs`` documents that contain no query attribute; qrels are unchanged."""
    if extra_docs < 0:
        raise ValueError("extra_docs must be non-negative")
    cfg = _limit_config(b)
    used = b.query_attribute_ids()
    pool = np.array([a for a in range(b.universe.size) if a not in used], dtype=np.int64)
    if len(pool) < cfg.doc_length:
        raise InfeasibleConfig(f"only {len(pool)} non-query attributes for documents of length {cfg.doc_length}")
    jobs = []
    for block, lo in enumerate(range(0, extra_docs, DOC_BLOCK)):
        jobs.append((seed, block, min(DOC_BLOCK, extra_docs - lo), pool, cfg.doc_length, cfg.first_names, cfg.last_names))
    new = [x for blk in parallel_map(_make_extra_block, jobs, threads) for x in blk]
    words = b.universe.attributes
    start = len(b.documents)
    docs = list(b.documents) + [
        Document(_doc_id(start + t), name, attrs, render_document(name, [words[a] for a in attrs]))
        for t, (name, attrs) in enumerate(new)
    ]
    prov = _derived(b, "extended", extended={"seed": seed, "extra_docs": extra_docs, "original_docs": start})
    return DatasetBundle(b.universe, docs, list(b.queries), b.qrels.with_num_docs(len(docs)), prov)


def unrank_combination(index: int, n: int, r: int) -> tuple[int, ...]:
    """The ``index``-th r-subset of range(n) in lexicographic order."""
    out = []
    x = 0
    for slot in range(r, 0, -1):
        while True:
            c = math.comb(n - x - 1, slot - 1)
            if index < c:
                break
            index -= c
            x += 1
        out.append(x)
        x += 1
    return tuple(out)


def gen_multi_attribute(
    b: DatasetBundle,
    arity: int,
    num_queries: int | None = None,
    seed: int = 0,
    admissible: Iterable[int] | None = None,
) -> DatasetBundle:
    """Queries over unordered ``arity``-subsets of admissible attributes, relevant on any overlap."""
    v2 = sorted(set(range(b.universe.size) if admissible is None else (int(a) for a in admissible)))
    total = math.comb(len(v2), arity)
    if num_queries is None:
        num_queries = total
        if total > 1_000_000:
            logger.warning("enumerating all %d %d-attribute queries", total, arity)
        picks = range(total)
    else:
        if num_queries > total:
            raise InfeasibleConfig(f"{num_queries} queries requested but only C({len(v2)},{arity})={total} exist")
        picks = np.sort(stream(seed, f"multi-{arity}").choice(total, size=num_queries, replace=False))
    words = b.universe.attributes
    queries = []
    for i, idx in enumerate(picks):
        attrs = tuple(v2[t] for t in unrank_combination(int(idx), len(v2), arity))
        queries.append(Query(f"q{i}", attrs, render_query([words[a] for a in attrs])))
    rule = AnyOverlap()
    qrels = build_relevance_matrix([q.itemset for q in queries], [d.itemset for d in b.documents], rule)
    variant = {2: "two", 3: "three"}.get(arity, f"multi{arity}")
    prov = _derived(
        b,
        variant,
        relevance_rule=rule.to_dict(),
        multi={"arity": arity, "num_queries": num_queries, "total": total, "seed": seed,
               "admissible": len(v2), "experimental": arity != 2},
    )
    return DatasetBundle(b.universe, list(b.documents), queries, qrels, prov)


def gen_two_limit(b: DatasetBundle, num_queries: int | None = None, seed: int = 0, admissible=None) -> DatasetBundle:
    return gen_multi_attribute(b, 2, num_queries, seed, admissible)


def gen_three_limit(b: DatasetBundle, num_queries: int | None = None, seed: int = 0, admissible=None) -> DatasetBundle:
    """Experimental three-attribute analog of Two LIMIT."""
    return gen_multi_attribute(b, 3, num_queries, seed, admissible)


# --- on-disk format -------------------------------------------------------


def write_bundle(b: DatasetBundle, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    words = b.universe.attributes
    with open(out / "universe.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for i, a in enumerate(words):
            f.write(json.dumps({"id": i, "attr": a}, ensure_ascii=False) + "\n")
    with open(out / "corpus.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for d in b.documents:
            rec = {"_id": d.doc_id, "title": d.name, "text": d.text, "attrs": [words[a] for a in d.attrs]}
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(out / "queries.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for q in b.queries:
            rec = {"_id": q.query_id, "text": q.text, "attrs": [words[a] for a in q.attrs]}
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(out / "qrels.tsv", "w", encoding="utf-8", newline="\n") as f:
        f.write("query-id\tcorpus-id\tscore\n")
        for q, row in zip(b.queries, b.qrels.rows):
            for j in row:
                f.write(f"{q.query_id}\t{b.documents[j].doc_id}\t1\n")
    with open(out / "provenance.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(b.provenance, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
    return out


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def read_qrels(path) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if header[:2] != ["query-id", "corpus-id"]:
            raise ValueError(f"{path}: unexpected qrels header {header}")
        for line in f:
            if not line.strip():
                continue
            qid, did, score = line.rstrip("\n").split("\t")
            if int(score) > 0:
                out.setdefault(qid, set()).add(did)
    return out


def read_bundle(directory) -> DatasetBundle:
    src = Path(directory)
    words = [r["attr"] for r in sorted(_read_jsonl(src / "universe.jsonl"), key=lambda r: r["id"])]
    universe = AttributeUniverse(tuple(words))
    ids = {w: i for i, w in enumerate(words)}
    docs = [
        Document(r["_id"], r["title"], tuple(ids[a] for a in r["attrs"]), r["text"])
        for r in _read_jsonl(src / "corpus.jsonl")
    ]
    queries = [Query(r["_id"], tuple(ids[a] for a in r["attrs"]), r["text"]) for r in _read_jsonl(src / "queries.jsonl")]
    pos = {d.doc_id: j for j, d in enumerate(docs)}
    qrels_map = read_qrels(src / "qrels.tsv")
    qrels = RelevanceMatrix([[pos[d] for d in qrels_map.get(q.query_id, ())] for q in queries], len(docs))
    with open(src / "provenance.json", encoding="utf-8") as f:
        prov = json.load(f)
    return DatasetBundle(universe, docs, queries, qrels, prov)
