"""Low-dimensional embeddings that realize a k-sparse sign pattern exactly.

Each query row of ``2R - 1`` has at most ``2k`` sign changes when the row has
at most ``k`` positive entries. Placing one polynomial root between every
pair of adjacent documents whose sign differs yields a polynomial of degree
``<= 2k`` whose sign at document ``j`` is the target sign. Its coefficient
vector is the query embedding; the document embedding is the monomial row
``(1, x_j, ..., x_j^{2k})``, so ``d = 2k + 1``.

Documents are evaluated at ``x_j = -1 + 2j/(n-1)`` instead of at integers.
The sign pattern only depends on the order of the evaluation points, and on
``[-1, 1]`` every monomial stays bounded by one, which keeps the
factorization usable at ``n = 50000``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .retrieval import top_k_indices
from .sets import MarginReport, RelevanceMatrix, SignMatrix, verify_sign_realization

logger = logging.getLogger(__name__)

# below this margin (relative to the largest |score|) the factorized signs are
# re-certified by evaluating the root-product form directly
RELATIVE_MARGIN_GUARD = 1e-12


def sign_change_positions(row) -> np.ndarray:
    """Indices ``t`` (0-based) with ``row[t] != row[t + 1]``."""
    row = np.asarray(row)
    if row.size == 0:
        raise ValueError("row must be nonempty")
    return np.flatnonzero(row[:-1] != row[1:])


def sparse_sign_changes(positives, n: int) -> np.ndarray:
    """Same as :func:`sign_change_positions` for the row whose +1 entries are ``positives``."""
    p = np.asarray(positives, dtype=np.int64)
    if p.size == 0:
        return p
    is_pos = set(p.tolist())
    out = set()
    for j in p.tolist():
        if j > 0 and (j - 1) not in is_pos:
            out.add(j - 1)
        if j < n - 1 and (j + 1) not in is_pos:
            out.add(j)
    return np.array(sorted(out), dtype=np.int64)


def evaluation_points(n: int, changes=None, quiet_share: float = 0.25) -> np.ndarray:
    """Strictly increasing document coordinates spanning [-1, 1].

    Without ``changes`` the points are equally spaced. Otherwise gaps listed in
    ``changes`` (boundaries where some query changes sign, so a root sits
    there) are widened and the remaining gaps share ``quiet_share`` of the
    interval. Separating roots from documents is what keeps the factorized
    inner products far from zero when n is large.
    """
    if n < 2:
        raise ValueError("need at least two documents")
    if changes is None:
        return np.linspace(-1.0, 1.0, n)
    wide = np.zeros(n - 1, dtype=bool)
    wide[np.asarray(changes, dtype=np.int64)] = True
    n_wide = int(wide.sum())
    n_quiet = n - 1 - n_wide
    if n_wide == 0 or n_quiet == 0:
        return np.linspace(-1.0, 1.0, n)
    gaps = np.where(wide, (1 - quiet_share) / n_wide, quiet_share / n_quiet)
    x = np.concatenate([[0.0], np.cumsum(gaps)])
    return -1.0 + 2.0 * x / x[-1]


@dataclass(frozen=True)
class QueryPolynomial:
    row: int
    changes: np.ndarray  # sign-change positions t
    roots: np.ndarray  # midpoints between x_t and x_{t+1}
    leading_sign: int  # sign at the first document
    coefficients: np.ndarray  # increasing powers, zero-padded to 2k+1

    def evaluate(self, x) -> np.ndarray:
        """Root-product form ``s * prod(r - x)``; independent of the coefficient expansion."""
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape, float(self.leading_sign))
        for r in self.roots:
            out *= r - x
        return out


def query_polynomial(i: int, positives, xs: np.ndarray, dim: int) -> QueryPolynomial:
    n = len(xs)
    changes = sparse_sign_changes(positives, n)
    if len(changes) > dim - 1:
        raise ValueError(f"row {i} has {len(changes)} sign changes, more than {dim - 1}")
    roots = 0.5 * (xs[changes] + xs[changes + 1])
    lead = 1 if (len(positives) and int(np.min(positives)) == 0) else -1
    # prod(r - x) = (-1)^s prod(x - r)
    coef = P.polyfromroots(roots) if len(roots) else np.ones(1)
    coef = lead * (-1) ** len(roots) * coef
    padded = np.zeros(dim)
    padded[: len(coef)] = coef
    return QueryPolynomial(i, changes, roots, lead, padded)


@dataclass(frozen=True)
class SignRankEmbedding:
    queries: np.ndarray  # q x d polynomial coefficients
    docs: np.ndarray  # n x d monomial rows
    dim: int
    sparsity: int
    margin: float
    max_abs: float
    violations: int
    certified_by: str  # "factorized" or "product-form"
    polynomials: tuple[QueryPolynomial, ...]
    points: np.ndarray  # evaluation coordinate of each document
    factorized_violations: int = 0  # sign errors of the float inner products A @ V.T
    factorized_margin: float = 0.0

    def scores(self, rows=None) -> np.ndarray:
        A = self.queries if rows is None else self.queries[rows]
        return A @ self.docs.T

    def metadata(self) -> dict:
        return {
            "method": "signrank",
            "k": self.sparsity,
            "d": self.dim,
            "margin": self.margin,
            "max_abs": self.max_abs,
            "violations": self.violations,
            "certified_by": self.certified_by,
            "factorized_violations": self.factorized_violations,
            "factorized_margin": self.factorized_margin,
        }


def _product_form_report(polys, xs, relevance: RelevanceMatrix) -> MarginReport:
    violations = 0
    margin, max_abs = np.inf, 0.0
    for poly, row in zip(polys, relevance.rows):
        g = poly.evaluate(xs)
        pos = np.zeros(len(xs), dtype=bool)
        pos[row] = True
        violations += int(np.count_nonzero((g > 0) != pos))
        a = np.abs(g)
        margin = min(margin, float(a.min()))
        max_abs = max(max_abs, float(a.max()))
    return MarginReport(violations, margin, max_abs, len(polys) * len(xs))


def construct_sparse_embeddings(relevance: RelevanceMatrix, spacing: str = "adaptive") -> SignRankEmbedding:
    """Build (2k+1)-dimensional embeddings whose inner-product signs equal ``2R - 1``.

    ``spacing="uniform"`` evaluates documents at equally spaced points;
    ``"adaptive"`` (default) widens the gaps that hold roots.
    """
    q, n = relevance.shape
    if q == 0 or n == 0:
        raise ValueError("relevance matrix must have at least one query and one document")
    if spacing not in ("adaptive", "uniform"):
        raise ValueError("spacing must be 'adaptive' or 'uniform'")
    k = relevance.row_sparsity
    dim = 2 * k + 1
    if n == 1:
        xs = np.zeros(1)
    elif spacing == "uniform":
        xs = evaluation_points(n)
    else:
        union = np.unique(np.concatenate([sparse_sign_changes(r, n) for r in relevance.rows] + [np.zeros(0, np.int64)]))
        xs = evaluation_points(n, union)
    polys = tuple(query_polynomial(i, row, xs, dim) for i, row in enumerate(relevance.rows))
    A = np.stack([p.coefficients for p in polys])
    V = np.vander(xs, dim, increasing=True)

    report = verify_sign_realization(SignMatrix(relevance), A, V)
    certified_by = "factorized"
    if report.violations or report.margin < RELATIVE_MARGIN_GUARD * report.max_abs:
        logger.info(
            "factorized margin %.3g (max %.3g, %d violations); certifying with product form",
            report.margin, report.max_abs, report.violations,
        )
        certified = _product_form_report(polys, xs, relevance)
        certified_by = "product-form"
    else:
        certified = report
    return SignRankEmbedding(
        queries=A,
        docs=V,
        dim=dim,
        sparsity=k,
        margin=certified.margin,
        max_abs=certified.max_abs,
        violations=certified.violations,
        certified_by=certified_by,
        polynomials=polys,
        points=xs,
        factorized_violations=report.violations,
        factorized_margin=report.margin,
    )


@dataclass(frozen=True)
class TopKReport:
    k: int
    success: np.ndarray  # per query: every relevant doc scores above every irrelevant one
    recall: np.ndarray  # per query Recall@k (nan when the query has no relevant docs)
    empty_queries: tuple[int, ...]

    @property
    def mean_recall(self) -> float:
        r = self.recall[~np.isnan(self.recall)]
        return float(r.mean()) if r.size else float("nan")

    @property
    def all_correct(self) -> bool:
        return bool(self.success.all())


def topk_correctness_check(emb: SignRankEmbedding, relevance: RelevanceMatrix, k: int, chunk: int = 64) -> TopKReport:
    """Rank every document by inner product and check relevant docs come first."""
    q, n = relevance.shape
    success = np.zeros(q, dtype=bool)
    recall = np.full(q, np.nan)
    empty = []
    kk = min(k, n)
    for lo in range(0, q, chunk):
        hi = min(q, lo + chunk)
        S = emb.scores(slice(lo, hi))
        for t, i in enumerate(range(lo, hi)):
            rel = relevance.rows[i]
            s = S[t]
            mask = np.zeros(n, dtype=bool)
            mask[rel] = True
            if rel.size == 0:
                empty.append(i)
                success[i] = bool(np.all(s < 0))
                continue
            worst_rel = s[mask].min()
            best_irr = s[~mask].max() if rel.size < n else -np.inf
            success[i] = bool(worst_rel > 0 > best_irr)
            order = top_k_indices(s, kk)
            recall[i] = np.count_nonzero(mask[order]) / rel.size
    return TopKReport(k, success, recall, tuple(empty))
