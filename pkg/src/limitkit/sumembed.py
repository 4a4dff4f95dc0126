"""Sum-of-token embeddings over a near-orthogonal token basis.

Every attribute gets a unit vector. A query embeds as the normalized sum of
its attribute vectors; a document embeds either normalized the same way or
as the raw sum, which is the length-rescaled form that makes the score
track ``|Q ∩ D| / |Q|`` rather than ``|Q ∩ D| / sqrt(|Q||D|)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import parallel_map, stream
from .sets import ItemSet

EXACT_EPSILON_LIMIT = 4096


@dataclass(frozen=True)
class TokenBasis:
    vectors: np.ndarray  # |U| x d, unit rows
    max_cross_dot: float
    exact: bool  # False when max_cross_dot is a sampled estimate
    seed: int | None

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def size(self) -> int:
        return int(self.vectors.shape[0])

    def rotated(self, rotation: np.ndarray) -> "TokenBasis":
        return TokenBasis(self.vectors @ rotation.T, self.max_cross_dot, self.exact, self.seed)


def max_cross_dot(vectors: np.ndarray, exact_limit: int = EXACT_EPSILON_LIMIT, rng=None) -> tuple[float, bool]:
    n = vectors.shape[0]
    if n < 2:
        return 0.0, True
    if n <= exact_limit:
        G = vectors @ vectors.T
        np.fill_diagonal(G, 0.0)
        return float(np.abs(G).max()), True
    rng = rng or np.random.default_rng(0)
    best = 0.0
    for _ in range(16):
        idx = rng.choice(n, size=exact_limit, replace=False)
        G = vectors[idx] @ vectors[idx].T
        np.fill_diagonal(G, 0.0)
        best = max(best, float(np.abs(G).max()))
    return best, False


def sample_sphere(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Uniform unit vectors from normalized Gaussians; zero draws are redrawn."""
    out = rng.standard_normal((count, dim))
    norms = np.linalg.norm(out, axis=1)
    while np.any(norms == 0):
        bad = norms == 0
        out[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(out, axis=1)
    return out / norms[:, None]


def sample_near_orthogonal_basis(universe_size: int, dim: int, seed: int = 0, canonical: bool = False) -> TokenBasis:
    """Random unit vectors (or the canonical basis when ``canonical`` and ``dim >= |U|``)."""
    if dim < 1 or universe_size < 1:
        raise ValueError("dim and universe_size must be positive")
    if canonical:
        if dim < universe_size:
            raise ValueError("canonical basis needs dim >= universe_size")
        return TokenBasis(np.eye(universe_size, dim), 0.0, True, None)
    vecs = sample_sphere(stream(seed, "basis", dim), universe_size, dim)
    eps, exact = max_cross_dot(vecs, rng=stream(seed, "basis-eps"))
    return TokenBasis(vecs, eps, exact, seed)


@dataclass(frozen=True)
class SumEmbedding:
    vector: np.ndarray
    ids: tuple[int, ...]
    mode: str  # "query", "normalized", "rescaled" or "raw"


def raw_sum(item: ItemSet, basis: TokenBasis) -> np.ndarray:
    if len(item) == 0:
        raise ValueError("cannot embed an empty set")
    return basis.vectors[list(item.ids)].sum(axis=0)


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("sum of token vectors has zero norm")
    return v / n


def embed_query(q: ItemSet, basis: TokenBasis) -> SumEmbedding:
    return SumEmbedding(_normalize(raw_sum(q, basis)), q.ids, "query")


def embed_document(d: ItemSet, basis: TokenBasis, mode: str = "rescaled") -> SumEmbedding:
    """``rescaled`` returns the raw sum (the normalized sum times its norm); ``normalized`` divides it out."""
    v = raw_sum(d, basis)
    if mode == "rescaled":
        return SumEmbedding(v, d.ids, "rescaled")
    if mode == "normalized":
        return SumEmbedding(_normalize(v), d.ids, "normalized")
    raise ValueError("mode must be 'rescaled' or 'normalized'")


def embed_raw(x: ItemSet, basis: TokenBasis) -> SumEmbedding:
    return SumEmbedding(raw_sum(x, basis), x.ids, "raw")


def score_dot(qe: SumEmbedding, de: SumEmbedding) -> float:
    return float(qe.vector @ de.vector)


def incidence(items: Sequence[ItemSet], universe_size: int) -> np.ndarray:
    m = np.zeros((len(items), universe_size))
    for i, it in enumerate(items):
        m[i, list(it.ids)] = 1.0
    return m


def embed_matrix(items: Sequence[ItemSet], basis: TokenBasis, mode: str) -> np.ndarray:
    """Row-stacked embeddings; ``mode`` is query/normalized (unit rows) or rescaled/raw."""
    if any(len(it) == 0 for it in items):
        raise ValueError("cannot embed an empty set")
    M = incidence(items, basis.size) @ basis.vectors
    if mode in ("query", "normalized"):
        norms = np.linalg.norm(M, axis=1)
        if np.any(norms == 0):
            raise ValueError("sum of token vectors has zero norm")
        M = M / norms[:, None]
    elif mode not in ("rescaled", "raw"):
        raise ValueError(f"unknown mode {mode!r}")
    return M


@dataclass
class OrderingReport:
    agree: np.ndarray  # per query
    worst_inversion: np.ndarray  # per query, max(lower class max - higher class min), <= 0 when ordered
    tau: list[float | None]  # midpoint threshold per query, None when not separated
    gap: np.ndarray  # per query min over adjacent relevance classes of (higher min - lower max)

    @property
    def agreement(self) -> float:
        return float(self.agree.mean()) if self.agree.size else 1.0

    @property
    def mean_margin(self) -> float:
        g = self.gap[np.isfinite(self.gap)]
        return float(g.mean()) if g.size else float("nan")


def ordering_agreement(
    queries: Sequence[ItemSet],
    docs: Sequence[ItemSet],
    basis: TokenBasis,
    mode: str = "rescaled",
    relevant_at: float = 0.0,
) -> OrderingReport:
    """Check that scores order documents like ``rel_set`` does, up to ties within a relevance class.

    ``tau`` is the midpoint between the lowest score of a document with
    ``rel_set > relevant_at`` and the highest score of the rest.
    """
    Q = embed_matrix(queries, basis, "query")
    D = embed_matrix(docs, basis, mode)
    S = Q @ D.T
    overlap = incidence(queries, basis.size) @ incidence(docs, basis.size).T
    qlen = np.array([len(q) for q in queries], dtype=float)
    rel = overlap / qlen[:, None]

    nq = len(queries)
    agree = np.zeros(nq, dtype=bool)
    worst = np.zeros(nq)
    gaps = np.full(nq, np.inf)
    taus: list[float | None] = []
    for i in range(nq):
        s, r = S[i], rel[i]
        levels = np.unique(r)
        lows = np.array([s[r == v].min() for v in levels])
        highs = np.array([s[r == v].max() for v in levels])
        if len(levels) > 1:
            # each higher class must sit strictly above every lower one
            running_max = np.maximum.accumulate(highs)[:-1]
            diff = lows[1:] - running_max
            gaps[i] = diff.min()
            worst[i] = max(0.0, -diff.min())
        agree[i] = gaps[i] > 0
        above = r > relevant_at
        if above.any() and (~above).any():
            lo, hi = s[above].min(), s[~above].max()
            taus.append(float((lo + hi) / 2) if lo > hi else None)
        else:
            taus.append(None)
    return OrderingReport(agree, worst, taus, gaps)


def random_sets(rng: np.random.Generator, count: int, universe_size: int, lengths) -> list[ItemSet]:
    """``count`` random sets; ``lengths`` is an int or a sequence to draw sizes from."""
    sizes = np.full(count, lengths) if np.isscalar(lengths) else rng.choice(np.asarray(lengths), size=count)
    return [ItemSet.of(rng.choice(universe_size, size=int(s), replace=False)) for s in sizes]


@dataclass
class ScanConfig:
    universe_size: int = 128
    dims: tuple[int, ...] = (8, 16, 32, 64, 128, 256, 512)
    seeds: tuple[int, ...] = tuple(range(10))
    num_queries: int = 50
    num_docs: int = 500
    query_lengths: tuple[int, ...] = (1, 2, 3)
    doc_length: int = 8
    mode: str = "rescaled"
    instance_seed: int = 0


def minimal_dimension_scan(cfg: ScanConfig, threads: int = 1) -> list[dict]:
    """Agreement and margin per (d, seed) on one fixed random instance."""
    rng = stream(cfg.instance_seed, "scan-instance")
    queries = random_sets(rng, cfg.num_queries, cfg.universe_size, cfg.query_lengths)
    docs = random_sets(rng, cfg.num_docs, cfg.universe_size, cfg.doc_length)

    def cell(arg):
        d, seed = arg
        basis = sample_near_orthogonal_basis(cfg.universe_size, d, seed)
        rep = ordering_agreement(queries, docs, basis, cfg.mode)
        return {"d": d, "seed": seed, "agreement": rep.agreement, "mean_margin": rep.mean_margin, "epsilon": basis.max_cross_dot}

    return parallel_map(cell, [(d, s) for d in cfg.dims for s in cfg.seeds], threads)


def scan_summary(rows: list[dict]) -> dict:
    """Mean agreement per d and whether it never decreases along the grid."""
    dims = sorted({r["d"] for r in rows})
    means = [float(np.mean([r["agreement"] for r in rows if r["d"] == d])) for d in dims]
    return {"dims": dims, "mean_agreement": means, "monotone": all(b >= a for a, b in zip(means, means[1:]))}


def scan_csv(rows: list[dict], path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["d", "seed", "agreement", "mean_margin", "epsilon"], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    if path is not None:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return buf.getvalue()
