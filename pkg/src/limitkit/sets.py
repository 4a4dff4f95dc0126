"""Attribute universes, item sets, binary qrels and their signed form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class AttributeUniverse:
    """Ordered list of distinct attribute strings; an attribute's id is its index."""

    attributes: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        attrs = tuple(self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if not attrs:
            raise ValueError("universe must contain at least one attribute")
        index = {a: i for i, a in enumerate(attrs)}
        if len(index) != len(attrs):
            raise ValueError("universe contains duplicate attributes")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        return len(self.attributes)

    def __len__(self) -> int:
        return len(self.attributes)

    def id_of(self, attr: str) -> int:
        return self._index[attr]

    def encode(self, attrs: Iterable[str]) -> "ItemSet":
        return ItemSet.of(self._index[a] for a in attrs)

    def decode(self, item: "ItemSet") -> list[str]:
        return [self.attributes[i] for i in item.ids]

    def check(self, item: "ItemSet") -> None:
        if item.ids and item.ids[-1] >= self.size:
            raise ValueError(f"attribute id {item.ids[-1]} outside universe of size {self.size}")


@dataclass(frozen=True)
class ItemSet:
    """A query or document as a strictly increasing tuple of attribute ids."""

    ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        object.__setattr__(self, "ids", ids)
        if any(i < 0 for i in ids):
            raise ValueError("attribute ids must be non-negative")
        if any(a >= b for a, b in zip(ids, ids[1:])):
            raise ValueError("ids must be strictly increasing (sorted, duplicate-free)")

    @classmethod
    def of(cls, ids: Iterable[int]) -> "ItemSet":
        """Build from any iterable; duplicates are an error, order is not."""
        ids = [int(i) for i in ids]
        s = sorted(set(ids))
        if len(s) != len(ids):
            raise ValueError("duplicate attribute ids")
        return cls(tuple(s))

    @property
    def length(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def __contains__(self, x) -> bool:
        return x in set(self.ids)

    def overlap(self, other: "ItemSet") -> int:
        return len(set(self.ids).intersection(other.ids))


def set_relevance(query: ItemSet, doc: ItemSet) -> float:
    """Fraction of query attributes present in the document."""
    if len(query) == 0:
        raise ValueError("empty query has undefined relevance")
    return query.overlap(doc) / len(query)


# Relevance rules. Each decides from (overlap, |Q|, |D|).


@dataclass(frozen=True)
class Threshold:
    """Relevant iff ``|Q ∩ D| / |Q| >= tau``."""

    tau: float

    name = "threshold"

    def holds(self, overlap: int, qlen: int, dlen: int) -> bool:
        if qlen == 0:
            raise ValueError("empty query has undefined relevance")
        return overlap / qlen >= self.tau

    def to_dict(self) -> dict:
        return {"rule": "threshold", "tau": self.tau}


@dataclass(frozen=True)
class AnyOverlap:
    name = "any-overlap"

    def holds(self, overlap: int, qlen: int, dlen: int) -> bool:
        return overlap >= 1

    def to_dict(self) -> dict:
        return {"rule": "any-overlap"}


@dataclass(frozen=True)
class Containment:
    name = "containment"

    def holds(self, overlap: int, qlen: int, dlen: int) -> bool:
        if qlen == 0:
            raise ValueError("empty query has undefined relevance")
        return overlap == qlen

    def to_dict(self) -> dict:
        return {"rule": "containment"}


RelevanceRule = Threshold | AnyOverlap | Containment


def rule_from_dict(d: dict) -> RelevanceRule:
    kind = d["rule"]
    if kind == "threshold":
        return Threshold(float(d["tau"]))
    if kind == "any-overlap":
        return AnyOverlap()
    if kind == "containment":
        return Containment()
    if kind == "inherited":
        return rule_from_dict(d["from"])
    raise ValueError(f"unknown relevance rule {kind!r}")


class RelevanceMatrix:
    """Sparse binary qrels: ``rows[i]`` is the sorted array of relevant doc indices."""

    def __init__(self, rows: Sequence[Iterable[int]], num_docs: int):
        self.num_docs = int(num_docs)
        out = []
        for r in rows:
            a = np.asarray(sorted(int(j) for j in r), dtype=np.int64)
            if a.size and (a[0] < 0 or a[-1] >= self.num_docs):
                raise ValueError(f"doc index out of range [0, {self.num_docs})")
            if a.size > 1 and np.any(np.diff(a) == 0):
                raise ValueError("duplicate doc index in qrels row")
            a.setflags(write=False)
            out.append(a)
        self.rows: tuple[np.ndarray, ...] = tuple(out)

    @property
    def num_queries(self) -> int:
        return len(self.rows)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_queries, self.num_docs)

    @property
    def row_sparsity(self) -> int:
        return max((len(r) for r in self.rows), default=0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RelevanceMatrix):
            return NotImplemented
        return self.shape == other.shape and all(
            np.array_equal(a, b) for a, b in zip(self.rows, other.rows)
        )

    def __repr__(self) -> str:
        return f"RelevanceMatrix(q={self.num_queries}, n={self.num_docs}, k={self.row_sparsity})"

    def dense(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=np.int8)
        for i, r in enumerate(self.rows):
            m[i, r] = 1
        return m

    @classmethod
    def from_dense(cls, m) -> "RelevanceMatrix":
        m = np.asarray(m)
        return cls([np.flatnonzero(row) for row in m], m.shape[1])

    def subset(self, query_indices: Sequence[int]) -> "RelevanceMatrix":
        return RelevanceMatrix([self.rows[i] for i in query_indices], self.num_docs)

    def with_num_docs(self, num_docs: int) -> "RelevanceMatrix":
        return RelevanceMatrix(self.rows, num_docs)


def build_relevance_matrix(
    queries: Sequence[ItemSet], docs: Sequence[ItemSet], rule: RelevanceRule
) -> RelevanceMatrix:
    """Apply ``rule`` to every (query, doc) pair, using an inverted index for overlaps."""
    inverted: dict[int, list[int]] = {}
    for j, d in enumerate(docs):
        for a in d.ids:
            inverted.setdefault(a, []).append(j)
    doc_len = np.fromiter((len(d) for d in docs), dtype=np.int64, count=len(docs))
    rows = []
    for q in queries:
        if len(q) == 0:
            raise ValueError("empty query has undefined relevance")
        counts: dict[int, int] = {}
        for a in q.ids:
            for j in inverted.get(a, ()):
                counts[j] = counts.get(j, 0) + 1
        row = [j for j, c in counts.items() if rule.holds(c, len(q), int(doc_len[j]))]
        # documents with zero overlap only qualify under degenerate rules (tau <= 0)
        if any(rule.holds(0, len(q), int(n)) for n in np.unique(doc_len)):
            row.extend(
                j for j in range(len(docs))
                if j not in counts and rule.holds(0, len(q), int(doc_len[j]))
            )
        rows.append(row)
    return RelevanceMatrix(rows, len(docs))


class SignMatrix:
    """The ±1 matrix ``2R - 1``, stored implicitly through its relevance matrix."""

    def __init__(self, relevance: RelevanceMatrix):
        self.relevance = relevance

    @property
    def shape(self) -> tuple[int, int]:
        return self.relevance.shape

    def entry(self, i: int, j: int) -> int:
        r = self.relevance.rows[i]
        k = np.searchsorted(r, j)
        return 1 if k < len(r) and r[k] == j else -1

    def row(self, i: int) -> np.ndarray:
        out = -np.ones(self.relevance.num_docs, dtype=np.int8)
        out[self.relevance.rows[i]] = 1
        return out

    def dense(self) -> np.ndarray:
        return (2 * self.relevance.dense() - 1).astype(np.int8)

    def to_relevance(self) -> RelevanceMatrix:
        """Threshold at zero; recovers the source relevance matrix."""
        return RelevanceMatrix.from_dense(self.dense() > 0)


def sign_matrix(relevance: RelevanceMatrix) -> SignMatrix:
    return SignMatrix(relevance)


@dataclass(frozen=True)
class MarginReport:
    violations: int
    margin: float
    max_abs: float
    entries: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


def verify_sign_realization(
    signs: SignMatrix, query_vecs, doc_vecs, chunk: int = 64
) -> MarginReport:
    """Count entries where sign(<u_i, v_j>) disagrees with ``signs``; inner products <= 0 count as -1."""
    U = np.asarray(query_vecs, dtype=np.float64)
    V = np.asarray(doc_vecs, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
        raise ValueError(f"dimension mismatch: {U.shape} vs {V.shape}")
    q, n = signs.shape
    if U.shape[0] != q or V.shape[0] != n:
        raise ValueError(f"embedding counts {U.shape[0]}x{V.shape[0]} do not match sign matrix {q}x{n}")
    rows = signs.relevance.rows
    violations = 0
    margin = np.inf
    max_abs = 0.0
    for lo in range(0, q, chunk):
        hi = min(q, lo + chunk)
        M = U[lo:hi] @ V.T
        pos = np.zeros(M.shape, dtype=bool)
        for t, i in enumerate(range(lo, hi)):
            pos[t, rows[i]] = True
        violations += int(np.count_nonzero((M > 0) != pos))
        A = np.abs(M)
        if A.size:
            margin = min(margin, float(A.min()))
            max_abs = max(max_abs, float(A.max()))
    return MarginReport(violations, float(margin), max_abs, q * n)
