"""Exact scoring, top-k retrieval, IR metrics and embedding file I/O.

Binary embedding store layout (little-endian)::

    magic   4 bytes   b"EMB1" (float32 payload) or b"EMB8" (float64 payload)
    kind    u8        0 = single-vector, 1 = multi-vector
    count   u32       number of items
    dim     u32       vector dimension
    payload           single: count*dim floats, row-major
                      multi:  per item, u32 token count then its token vectors
    ids               per item, u32 byte length then UTF-8 bytes
"""

from __future__ import annotations

import csv
import io
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import parallel_map

logger = logging.getLogger(__name__)

MAGIC = {np.dtype(np.float32): b"EMB1", np.dtype(np.float64): b"EMB8"}
DTYPE = {v: k for k, v in MAGIC.items()}
TIE_BREAK = "ascending-doc-index"


# --- pairwise scores ------------------------------------------------------


def cosine_score(q, d) -> float:
    q = np.asarray(q, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if q.shape != d.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {d.shape}")
    nq, nd = np.linalg.norm(q), np.linalg.norm(d)
    if nq == 0 or nd == 0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(np.clip(q @ d / (nq * nd), -1.0, 1.0))


def dot_score(q, d) -> float:
    return float(np.asarray(q, dtype=np.float64) @ np.asarray(d, dtype=np.float64))


def chamfer_score(query_tokens, doc_tokens) -> float:
    """Mean over query tokens of the best dot product against any document token."""
    Q = np.atleast_2d(np.asarray(query_tokens, dtype=np.float64))
    S = np.atleast_2d(np.asarray(doc_tokens, dtype=np.float64))
    if Q.shape[0] == 0 or S.shape[0] == 0 or Q.size == 0 or S.size == 0:
        raise ValueError("chamfer similarity needs at least one token on each side")
    if Q.shape[1] != S.shape[1]:
        raise ValueError(f"dimension mismatch: {Q.shape[1]} vs {S.shape[1]}")
    return float((Q @ S.T).max(axis=1).mean())


# --- embedding stores -----------------------------------------------------


@dataclass
class EmbeddingStore:
    """Single-vector (``vectors`` is N x d) or multi-vector (token rows plus offsets) embeddings."""

    kind: str
    ids: tuple[str, ...]
    vectors: np.ndarray
    offsets: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        if self.kind not in ("single", "multi"):
            raise ValueError("kind must be 'single' or 'multi'")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("embedding ids must be unique")
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d array")
        if self.vectors.dtype not in MAGIC:
            self.vectors = self.vectors.astype(np.float64)
        if self.kind == "single":
            if self.vectors.shape[0] != len(self.ids):
                raise ValueError("one vector per id expected")
        else:
            off = np.asarray(self.offsets, dtype=np.int64)
            if off.shape != (len(self.ids) + 1,) or off[0] != 0 or off[-1] != self.vectors.shape[0]:
                raise ValueError("offsets must run from 0 to the total token count")
            if np.any(np.diff(off) < 1):
                raise ValueError("every multi-vector item needs at least one token vector")
            self.offsets = off

    @classmethod
    def single(cls, ids: Sequence[str], vectors, **metadata) -> "EmbeddingStore":
        return cls("single", tuple(ids), np.asarray(vectors), None, metadata)

    @classmethod
    def multi(cls, ids: Sequence[str], token_vectors: Sequence, **metadata) -> "EmbeddingStore":
        mats = [np.atleast_2d(np.asarray(t)) for t in token_vectors]
        counts = [m.shape[0] for m in mats]
        data = np.concatenate(mats, axis=0) if mats else np.zeros((0, 0))
        return cls("multi", tuple(ids), data, np.concatenate([[0], np.cumsum(counts)]), metadata)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def tokens(self, i: int) -> np.ndarray:
        if self.kind == "single":
            return self.vectors[i : i + 1]
        return self.vectors[self.offsets[i] : self.offsets[i + 1]]

    def token_counts(self) -> np.ndarray:
        if self.kind == "single":
            return np.ones(len(self), dtype=np.int64)
        return np.diff(self.offsets)


def export_embeddings(store: EmbeddingStore, path) -> Path:
    path = Path(path)
    dt = store.vectors.dtype
    buf = io.BytesIO()
    buf.write(MAGIC[dt])
    buf.write(struct.pack("<BII", 0 if store.kind == "single" else 1, len(store), store.dim))
    le = dt.newbyteorder("<")
    if store.kind == "single":
        buf.write(np.ascontiguousarray(store.vectors, dtype=le).tobytes())
    else:
        for i in range(len(store)):
            t = store.tokens(i)
            buf.write(struct.pack("<I", t.shape[0]))
            buf.write(np.ascontiguousarray(t, dtype=le).tobytes())
    for s in store.ids:
        b = s.encode("utf-8")
        buf.write(struct.pack("<I", len(b)))
        buf.write(b)
    path.write_bytes(buf.getvalue())
    return path


def ingest_embeddings(path) -> EmbeddingStore:
    raw = Path(path).read_bytes()
    if len(raw) < 13 or raw[:4] not in DTYPE:
        raise ValueError(f"{path}: not an embedding store (bad magic)")
    dt = np.dtype(DTYPE[raw[:4]]).newbyteorder("<")
    kind_code, count, dim = struct.unpack_from("<BII", raw, 4)
    if kind_code not in (0, 1):
        raise ValueError(f"{path}: unknown kind byte {kind_code}")
    pos = 13
    width = dt.itemsize * dim

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(raw):
            raise ValueError(f"{path}: truncated file")
        out = raw[pos : pos + nbytes]
        pos += nbytes
        return out

    if kind_code == 0:
        vecs = np.frombuffer(take(count * width), dtype=dt).reshape(count, dim)
        offsets = None
    else:
        mats, counts = [], []
        for _ in range(count):
            (c,) = struct.unpack("<I", take(4))
            if c < 1:
                raise ValueError(f"{path}: multi-vector item with zero tokens")
            mats.append(np.frombuffer(take(c * width), dtype=dt).reshape(c, dim))
            counts.append(c)
        vecs = np.concatenate(mats) if mats else np.zeros((0, dim), dtype=dt)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    ids = []
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        ids.append(take(n).decode("utf-8"))
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    vecs = vecs.astype(dt.newbyteorder("="))
    return EmbeddingStore("single" if kind_code == 0 else "multi", tuple(ids), vecs, offsets)


# --- retrieval --------------------------------------------------------------


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores, ties broken by ascending index."""
    n = scores.shape[0]
    k = min(k, n)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if k < n:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:k]]


@dataclass
class RetrievalRun:
    query_ids: tuple[str, ...]
    doc_ids: tuple[str, ...]
    ranked: list[np.ndarray]  # doc indices per query, best first
    scores: list[np.ndarray]
    scorer: str
    tie_break: str = TIE_BREAK

    def ranking(self, i: int) -> list[str]:
        return [self.doc_ids[j] for j in self.ranked[i]]

    def as_dict(self) -> dict[str, list[str]]:
        return {q: self.ranking(i) for i, q in enumerate(self.query_ids)}

    def to_trec(self, path, tag: str = "limitkit") -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i, q in enumerate(self.query_ids):
                for r, (j, s) in enumerate(zip(self.ranked[i], self.scores[i]), start=1):
                    f.write(f"{q} Q0 {self.doc_ids[j]} {r} {float(s):.9g} {tag}\n")
        return path


def read_trec_run(path) -> dict[str, list[tuple[str, float]]]:
    """Parse a TREC run file into ``{qid: [(docid, score), ...]}`` ordered by rank."""
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"malformed run line: {line!r}")
            qid, _, did, rank, score, _tag = parts
            rows.setdefault(qid, []).append((int(rank), did, float(score)))
    return {q: [(d, s) for _, d, s in sorted(v)] for q, v in rows.items()}


def _normalized(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine scorer received a zero-norm vector")
    return m / norms[:, None]


def score_matrix(queries: EmbeddingStore, docs: EmbeddingStore, rows: slice, scorer: str) -> np.ndarray:
    """Scores of ``queries[rows]`` against every document."""
    if scorer in ("dot", "cosine"):
        if queries.kind != "single" or docs.kind != "single":
            raise ValueError(f"{scorer} scorer needs single-vector stores")
        Q = queries.vectors[rows].astype(np.float64)
        D = docs.vectors.astype(np.float64)
        if scorer == "cosine":
            Q, D = _normalized(Q), _normalized(D)
        return Q @ D.T
    if scorer == "chamfer":
        D = docs.vectors.astype(np.float64)
        starts = docs.offsets[:-1] if docs.kind == "multi" else np.arange(len(docs))
        out = []
        for i in range(*rows.indices(len(queries))):
            sims = queries.tokens(i).astype(np.float64) @ D.T
            out.append(np.maximum.reduceat(sims, starts, axis=1).mean(axis=0))
        return np.array(out).reshape(-1, len(docs))
    raise ValueError(f"unknown scorer {scorer!r}")


def retrieve_top_k(
    queries: EmbeddingStore,
    docs: EmbeddingStore,
    k: int,
    scorer: str = "auto",
    threads: int = 1,
    chunk: int = 64,
) -> RetrievalRun:
    """Exact brute-force top-k; deterministic for any thread count."""
    if queries.dim != docs.dim:
        raise ValueError(f"dimension mismatch: queries {queries.dim}, docs {docs.dim}")
    if scorer == "auto":
        scorer = "chamfer" if "multi" in (queries.kind, docs.kind) else "cosine"
    if k > len(docs):
        warnings.warn(f"k={k} exceeds corpus size {len(docs)}; returning the full ranking", stacklevel=2)
        k = len(docs)

    def work(lo: int):
        S = score_matrix(queries, docs, slice(lo, min(len(queries), lo + chunk)), scorer)
        idx = [top_k_indices(s, k) for s in S]
        return idx, [s[i] for s, i in zip(S, idx)]

    parts = parallel_map(work, range(0, len(queries), chunk), threads)
    ranked = [i for p in parts for i in p[0]]
    scores = [s for p in parts for s in p[1]]
    return RetrievalRun(queries.ids, docs.ids, ranked, scores, scorer)


# --- metrics --------------------------------------------------------------


@dataclass
class MetricSlice:
    name: str
    k: int
    per_query: dict[str, float]
    excluded: tuple[str, ...]  # queries with no relevant documents

    @property
    def mean(self) -> float:
        v = list(self.per_query.values())
        return float(np.mean(v)) if v else float("nan")

    @property
    def label(self) -> str:
        return f"{self.name}@{self.k}"


def _run_lists(run) -> dict[str, list[str]]:
    return run.as_dict() if isinstance(run, RetrievalRun) else {q: list(v) for q, v in run.items()}


def _per_query(run, qrels: Mapping[str, Iterable[str]], k: int, name: str, fn) -> MetricSlice:
    lists = _run_lists(run)
    per, excluded = {}, []
    for qid in lists:
        rel = set(qrels.get(qid, ()))
        if not rel:
            excluded.append(qid)
            continue
        per[qid] = fn(lists[qid][:k], rel)
    return MetricSlice(name, k, per, tuple(excluded))


def recall_at_k(run, qrels, k: int) -> MetricSlice:
    return _per_query(run, qrels, k, "Recall", lambda top, rel: len(rel.intersection(top)) / len(rel))


def mrr_at_k(run, qrels, k: int) -> MetricSlice:
    def rr(top, rel):
        for r, d in enumerate(top, start=1):
            if d in rel:
                return 1.0 / r
        return 0.0

    return _per_query(run, qrels, k, "MRR", rr)


def ndcg_at_k(run, qrels, k: int) -> MetricSlice:
    """Binary gains with a log2(rank + 1) discount."""

    def ndcg(top, rel):
        dcg = sum(1.0 / math.log2(r + 1) for r, d in enumerate(top, start=1) if d in rel)
        ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(rel), k) + 1))
        return dcg / ideal

    return _per_query(run, qrels, k, "NDCG", ndcg)


METRICS = {"recall": recall_at_k, "mrr": mrr_at_k, "ndcg": ndcg_at_k}


@dataclass
class MetricsReport:
    slices: list[MetricSlice]
    label: str = ""

    def value(self, name: str) -> float:
        for s in self.slices:
            if s.label.lower() == name.lower():
                return s.mean
        raise KeyError(name)

    def columns(self) -> list[str]:
        return [s.label for s in self.slices]

    def to_rows(self) -> list[dict]:
        rows = [{"query_id": "all", **{s.label: s.mean for s in self.slices}}]
        qids = sorted({q for s in self.slices for q in s.per_query})
        for q in qids:
            rows.append({"query_id": q, **{s.label: s.per_query.get(q, float("nan")) for s in self.slices}})
        return rows

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["query_id"] + self.columns())
        for row in self.to_rows():
            w.writerow([row["query_id"]] + [f"{row[c]:.6f}" for c in self.columns()])
        if path is not None:
            Path(path).write_text(buf.getvalue(), encoding="utf-8")
        return buf.getvalue()

    @property
    def excluded(self) -> tuple[str, ...]:
        return self.slices[0].excluded if self.slices else ()


def evaluate(run, qrels, ks: Sequence[int] = (2, 10, 50, 100), metrics: Sequence[str] = ("recall",), label: str = "") -> MetricsReport:
    slices = [METRICS[m](run, qrels, k) for m in metrics for k in ks]
    return MetricsReport(slices, label)


def markdown_table(reports: Sequence[MetricsReport]) -> str:
    """One row per report, columns in report order (``Recall@2 | Recall@10 | ...``)."""
    cols = []
    for r in reports:
        for c in r.columns():
            if c not in cols:
                cols.append(c)
    lines = ["| Model | " + " | ".join(cols) + " |", "|" + "---|" * (len(cols) + 1)]
    for r in reports:
        vals = {s.label: s.mean for s in r.slices}
        cells = [f"{vals[c]:.4f}" if c in vals else "" for c in cols]
        lines.append(f"| {r.label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
