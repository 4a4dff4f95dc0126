"""Monte-Carlo toy models of single-vector and multi-vector (Chamfer) scoring.

Every attribute is an independent uniform unit vector in R^D. A query has m
attributes, a document n; a positive pair shares exactly K of them, a
negative pair none. Single-vector scores are cosines of the attribute sums;
multi-vector scores are Chamfer similarities of the attribute vectors.

Scores only depend on the token vectors through inner products, so the
samplers never materialize D-dimensional vectors when a smaller exact
representation exists:

``tokens``
    The p token vectors of a trial are represented by the rows of a p x p
    lower-triangular Bartlett factor (Gram matrix of p Gaussian rows in R^D),
    normalized. When p > D the Gaussian rows are drawn directly.
``reduced``
    Single-vector: the shared, query-only and document-only partial sums are
    independent rotation-invariant vectors. Their norms come from a random
    walk with exact step cosines and their directions from a 3 x 3 Bartlett
    factor. Multi-vector: document tokens are represented by their projection
    onto the span of the query tokens.

Both methods sample exactly the same distribution; ``auto`` uses ``reduced``.
Trials run in fixed blocks with counter-derived seeds, so results do not
depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .rng import parallel_map, stream

BLOCK_BUDGET = 1 << 22  # floats per block, roughly


@dataclass(frozen=True)
class ToyModelParams:
    dim: int
    query_size: int
    doc_size: int
    overlap: int = 1
    trials: int = 100_000
    seed: int = 0
    vocab_size: int = 1 << 20

    def __post_init__(self):
        m, n, K = self.query_size, self.doc_size, self.overlap
        if self.dim < 1 or self.trials < 1:
            raise ValueError("dim and trials must be positive")
        if m < 1 or n < 1:
            raise ValueError("query_size and doc_size must be positive")
        if not 0 <= K <= min(m, n):
            raise ValueError(f"overlap K={K} must satisfy 0 <= K <= min(m={m}, n={n})")
        if max(m, n) > self.vocab_size or m + n - K > self.vocab_size:
            raise ValueError("vocabulary too small for the requested sets")

    def replace(self, **kw) -> "ToyModelParams":
        d = asdict(self)
        d.update(kw)
        return ToyModelParams(**d)


@dataclass
class ScoreSamples:
    positive: np.ndarray
    negative: np.ndarray
    kind: str  # "cosine" or "chamfer"
    params: ToyModelParams
    method: str


# --- exact low-dimensional token representations ---------------------------


def coordinate_draw(rng: np.random.Generator, size, dim: int) -> np.ndarray:
    """One coordinate of a uniform unit vector in R^dim (the cosine to any fixed direction)."""
    if dim == 1:
        return rng.choice(np.array([-1.0, 1.0]), size=size)
    a = (dim - 1) / 2
    return 2.0 * rng.beta(a, a, size=size) - 1.0


def gram_tokens(rng: np.random.Generator, batch: int, p: int, dim: int) -> np.ndarray:
    """(batch, p, r) unit rows whose Gram matrix has the law of p i.i.d. uniform unit vectors in R^dim."""
    if p > dim:
        Z = rng.standard_normal((batch, p, dim))
    else:
        Z = np.zeros((batch, p, p))
        rows, cols = np.tril_indices(p, -1)
        Z[:, rows, cols] = rng.standard_normal((batch, rows.size))
        diag = np.sqrt(rng.chisquare(dim - np.arange(p), size=(batch, p)))
        Z[:, np.arange(p), np.arange(p)] = diag
    norms = np.linalg.norm(Z, axis=2, keepdims=True)
    return Z / norms


def sum_norms(rng: np.random.Generator, batch: int, count: int, dim: int) -> np.ndarray:
    """Norm of the sum of ``count`` i.i.d. uniform unit vectors, via an exact random walk."""
    if count == 0:
        return np.zeros(batch)
    s2 = np.ones(batch)
    for _ in range(count - 1):
        c = coordinate_draw(rng, batch, dim)
        s2 = np.maximum(s2 + 1.0 + 2.0 * np.sqrt(s2) * c, 0.0)
    return np.sqrt(s2)


def projected_tokens(rng: np.random.Generator, batch: int, count: int, r: int, dim: int) -> np.ndarray:
    """First r coordinates of ``count`` uniform unit vectors in R^dim, shape (batch, count, r)."""
    g = rng.standard_normal((batch, count, r))
    if r >= dim:
        return g / np.linalg.norm(g, axis=2, keepdims=True)
    tail = rng.chisquare(dim - r, size=(batch, count))
    return g / np.sqrt((g * g).sum(axis=2) + tail)[..., None]


# --- per-block trial kernels ----------------------------------------------


def _cos(qt: np.ndarray, dt: np.ndarray) -> np.ndarray:
    num = np.einsum("bi,bi->b", qt, dt)
    den = np.linalg.norm(qt, axis=1) * np.linalg.norm(dt, axis=1)
    return np.clip(num / den, -1.0, 1.0)


def _single_tokens(rng, batch, p: ToyModelParams, positive: bool) -> np.ndarray:
    m, n, K, D = p.query_size, p.doc_size, p.overlap, p.dim
    if positive:
        T = gram_tokens(rng, batch, m + n - K, D)
        qt = T[:, :m].sum(axis=1)
        dt = T[:, :K].sum(axis=1) + T[:, m:].sum(axis=1)
    else:
        T = gram_tokens(rng, batch, m + n, D)
        qt = T[:, :m].sum(axis=1)
        dt = T[:, m:].sum(axis=1)
    return _cos(qt, dt)


def _single_reduced(rng, batch, p: ToyModelParams, positive: bool) -> np.ndarray:
    m, n, K, D = p.query_size, p.doc_size, p.overlap, p.dim
    if not positive:
        K = 0
    u = sum_norms(rng, batch, K, D)
    x = sum_norms(rng, batch, m - K, D)
    y = sum_norms(rng, batch, n - K, D)
    dirs = gram_tokens(rng, batch, 3, D)
    G = np.einsum("bir,bjr->bij", dirs, dirs)
    g_ux, g_uy, g_xy = G[:, 0, 1], G[:, 0, 2], G[:, 1, 2]
    num = u * u + u * y * g_uy + x * u * g_ux + x * y * g_xy
    qn = np.sqrt(np.maximum(u * u + x * x + 2 * u * x * g_ux, 0.0))
    dn = np.sqrt(np.maximum(u * u + y * y + 2 * u * y * g_uy, 0.0))
    return np.clip(num / (qn * dn), -1.0, 1.0)


def _chamfer_from(dots: np.ndarray) -> np.ndarray:
    return dots.max(axis=2).mean(axis=1)


def _multi_tokens(rng, batch, p: ToyModelParams, positive: bool) -> np.ndarray:
    m, n, K, D = p.query_size, p.doc_size, p.overlap, p.dim
    k = K if positive else 0
    T = gram_tokens(rng, batch, m + n - k, D)
    Q = T[:, :m]
    S = np.concatenate([T[:, :k], T[:, m:]], axis=1)
    dots = np.einsum("bmr,bnr->bmn", Q, S)
    if k:
        idx = np.arange(k)
        dots[:, idx, idx] = 1.0  # a shared token matched with itself
    return _chamfer_from(dots)


def _multi_reduced(rng, batch, p: ToyModelParams, positive: bool) -> np.ndarray:
    m, n, K, D = p.query_size, p.doc_size, p.overlap, p.dim
    k = K if positive else 0
    Q = gram_tokens(rng, batch, m, D)  # query tokens in an r-dim frame of their span
    r = Q.shape[2]
    parts = []
    if k:
        shared = np.einsum("bmr,bkr->bmk", Q, Q[:, :k])
        idx = np.arange(k)
        shared[:, idx, idx] = 1.0
        parts.append(shared)
    if n - k:
        W = projected_tokens(rng, batch, n - k, r, D)
        parts.append(np.einsum("bmr,bnr->bmn", Q, W))
    return _chamfer_from(np.concatenate(parts, axis=2))


def _shared_vocab_kernel(vocab: np.ndarray, kind: str):
    def run(rng, batch, p: ToyModelParams, positive: bool) -> np.ndarray:
        m, n = p.query_size, p.doc_size
        k = p.overlap if positive else 0
        need = m + n - k
        keys = rng.random((batch, vocab.shape[0]))
        pick = np.argpartition(keys, need - 1, axis=1)[:, :need]
        order = np.argsort(np.take_along_axis(keys, pick, axis=1), axis=1)
        pick = np.take_along_axis(pick, order, axis=1)
        V = vocab[pick]  # (batch, need, D)
        Qv = V[:, :m]
        Sv = np.concatenate([V[:, :k], V[:, m:]], axis=1)
        if kind == "cosine":
            return _cos(Qv.sum(axis=1), Sv.sum(axis=1))
        dots = np.einsum("bmd,bnd->bmn", Qv, Sv)
        if k:
            idx = np.arange(k)
            dots[:, idx, idx] = 1.0
        return _chamfer_from(dots)

    return run


KERNELS = {
    ("cosine", "tokens"): _single_tokens,
    ("cosine", "reduced"): _single_reduced,
    ("chamfer", "tokens"): _multi_tokens,
    ("chamfer", "reduced"): _multi_reduced,
}


def _cost(p: ToyModelParams, kind: str, method: str) -> int:
    m, n, D = p.query_size, p.doc_size, p.dim
    tokens = m + n
    if method == "tokens":
        return tokens * min(tokens, D) + (m * n if kind == "chamfer" else 0)
    if kind == "cosine":
        return tokens + 9
    r = min(m, D)
    return m * r + n * (r + 1) + m * n


def choose_method(p: ToyModelParams, kind: str) -> str:
    # the reduced samplers were faster at every size we timed; "tokens" stays
    # available as an independent check of the same distribution
    return "reduced"


def block_size(p: ToyModelParams, kind: str, method: str) -> int:
    return int(min(16384, max(64, BLOCK_BUDGET // max(1, _cost(p, kind, method)))))


def _simulate(p: ToyModelParams, kind: str, method: str, vocabulary: str, vocab_size: int | None, threads: int) -> ScoreSamples:
    if vocabulary not in ("fresh", "shared"):
        raise ValueError("vocabulary must be 'fresh' or 'shared'")
    if vocabulary == "shared":
        M = vocab_size or min(p.vocab_size, 4096)
        if p.query_size + p.doc_size > M:
            raise ValueError("shared vocabulary smaller than one query plus one document")
        vrng = stream(p.seed, "vocab", M, p.dim)
        g = vrng.standard_normal((M, p.dim))
        vocab = g / np.linalg.norm(g, axis=1, keepdims=True)
        kernel = _shared_vocab_kernel(vocab, kind)
        method = f"shared-{M}"
        B = int(min(4096, max(16, BLOCK_BUDGET // ((p.query_size + p.doc_size) * p.dim + M))))
    else:
        if method == "auto":
            method = choose_method(p, kind)
        kernel = KERNELS[(kind, method)]
        B = block_size(p, kind, method)

    def polarity(positive: bool) -> np.ndarray:
        tag = "pos" if positive else "neg"
        blocks = [(b, min(B, p.trials - lo)) for b, lo in enumerate(range(0, p.trials, B))]

        def one(arg):
            b, size = arg
            return kernel(stream(p.seed, kind, tag, method, b), size, p, positive)

        return np.concatenate(parallel_map(one, blocks, threads))

    return ScoreSamples(polarity(True), polarity(False), kind, p, method)


def simulate_single_vector(p: ToyModelParams, method: str = "auto", vocabulary: str = "fresh", vocab_size: int | None = None, threads: int = 1) -> ScoreSamples:
    """Cosine of normalized attribute sums; T positive and T negative trials."""
    return _simulate(p, "cosine", method, vocabulary, vocab_size, threads)


def simulate_multi_vector(p: ToyModelParams, method: str = "auto", vocabulary: str = "fresh", vocab_size: int | None = None, threads: int = 1) -> ScoreSamples:
    """Chamfer similarity of per-attribute unit vectors; T positive and T negative trials."""
    return _simulate(p, "chamfer", method, vocabulary, vocab_size, threads)


# --- statistics -------------------------------------------------------------


def analytic_goodness_single(p: ToyModelParams) -> float:
    return p.overlap * math.sqrt(p.dim / (p.query_size * p.doc_size))


def analytic_goodness_multi(p: ToyModelParams, c: float = 1.0, form: str = "log-denominator") -> float:
    """``c K sqrt(D / (m ln n))``; ``form="log-numerator"`` gives ``c K sqrt(D ln n / m)``."""
    if p.doc_size < 2:
        raise ValueError("multi-vector prediction needs doc_size >= 2")
    ln = math.log(p.doc_size)
    if form == "log-denominator":
        return c * p.overlap * math.sqrt(p.dim / (p.query_size * ln))
    if form == "log-numerator":
        return c * p.overlap * math.sqrt(p.dim * ln / p.query_size)
    raise ValueError(f"unknown form {form!r}")


@dataclass
class DrowningEstimate:
    pairwise: float  # P(negative score > positive score), over all T x T pairs
    stderr: float
    gaussian: float  # Phi(-G / sqrt(1 + sigma+^2 / sigma-^2))
    log_gaussian: float

    @property
    def log_pairwise(self) -> float:
        return math.log(self.pairwise) if self.pairwise > 0 else -math.inf


def drowning_probability(samples: ScoreSamples) -> DrowningEstimate:
    pos, neg = np.sort(samples.positive), np.sort(samples.negative)
    tp, tn = pos.size, neg.size
    # for each positive, the share of negatives strictly above it
    above = (tn - np.searchsorted(neg, pos, side="right")) / tn
    # for each negative, the share of positives strictly below it
    below = np.searchsorted(pos, neg, side="left") / tp
    est = float(above.mean())
    se = math.sqrt(above.var(ddof=1) / tp + below.var(ddof=1) / tn) if tp > 1 and tn > 1 else float("nan")
    mu_p, mu_n = pos.mean(), neg.mean()
    sp, sn = pos.std(ddof=1), neg.std(ddof=1)
    z = -(mu_p - mu_n) / math.sqrt(sp * sp + sn * sn) if (sp > 0 or sn > 0) else -math.inf
    return DrowningEstimate(est, se, float(stats.norm.cdf(z)), float(stats.norm.logcdf(z)))


@dataclass
class GoodnessReport:
    kind: str
    params: ToyModelParams
    mu_pos: float
    mu_neg: float
    sigma_pos: float
    sigma_neg: float
    G: float
    G_stderr: float
    mu_pos_stderr: float
    mu_neg_stderr: float
    analytic: float | None
    drowning: DrowningEstimate
    corpus_size: int | None = None
    corpus_drown: float | None = None

    def row(self) -> dict:
        p = self.params
        return {
            "model": self.kind, "D": p.dim, "m": p.query_size, "n": p.doc_size, "K": p.overlap,
            "T": p.trials, "seed": p.seed, "mu_pos": self.mu_pos, "mu_neg": self.mu_neg,
            "sigma_pos": self.sigma_pos, "sigma_neg": self.sigma_neg, "G": self.G,
            "G_stderr": self.G_stderr, "G_analytic": self.analytic,
            "drown_pairwise": self.drowning.pairwise, "drown_stderr": self.drowning.stderr,
            "drown_gaussian": self.drowning.gaussian,
        }


def goodness(samples: ScoreSamples, multi_constant: float | None = None, corpus_size: int | None = None) -> GoodnessReport:
    """(mu+ - mu-) / sigma- with delta-method standard error and the matching analytic prediction."""
    pos = np.asarray(samples.positive, dtype=np.float64)
    neg = np.asarray(samples.negative, dtype=np.float64)
    if pos.size < 2 or neg.size < 2:
        raise ValueError("need at least two samples of each polarity")
    mp, mn = float(pos.mean()), float(neg.mean())
    sp, sn = float(pos.std(ddof=1)), float(neg.std(ddof=1))
    if sn <= 0:
        raise ValueError("negative scores have zero spread; goodness undefined")
    G = (mp - mn) / sn
    tp, tn = pos.size, neg.size
    c = neg - mn
    m3, m4 = float(np.mean(c**3)), float(np.mean(c**4))
    var_sigma = max(m4 - sn**4, 0.0) / (4 * sn * sn * tn)
    cov_mu_sigma = m3 / (2 * sn * tn)
    var_G = (sp * sp / tp + sn * sn / tn + G * G * var_sigma + 2 * G * cov_mu_sigma) / (sn * sn)
    p = samples.params
    if samples.kind == "cosine":
        analytic = analytic_goodness_single(p)
    elif multi_constant is not None and p.doc_size >= 2:
        analytic = analytic_goodness_multi(p, multi_constant)
    else:
        analytic = None
    rep = GoodnessReport(
        samples.kind, p, mp, mn, sp, sn, G, math.sqrt(max(var_G, 0.0)),
        sp / math.sqrt(tp), sn / math.sqrt(tn), analytic, drowning_probability(samples),
    )
    if corpus_size is not None:
        rep.corpus_size = corpus_size
        rep.corpus_drown = corpus_drown_curve(samples, [corpus_size])[0]["p_drown"]
    return rep


@dataclass
class ConstantFit:
    c: float
    stderr: float
    ci95: tuple[float, float]
    form: str
    rel_rmse: float  # root-mean-square relative residual of G vs c * f


def fit_multi_constant(reports: Sequence[GoodnessReport], form: str = "log-denominator") -> ConstantFit:
    """Least-squares c in ``G ≈ c f(params)`` through the origin."""
    f = np.array([analytic_goodness_multi(r.params, 1.0, form) for r in reports])
    g = np.array([r.G for r in reports])
    c = float(f @ g / (f @ f))
    resid = g - c * f
    dof = max(1, len(g) - 1)
    se = float(math.sqrt((resid @ resid) / dof / (f @ f)))
    t = float(stats.t.ppf(0.975, dof))
    rel = float(np.sqrt(np.mean((resid / g) ** 2)))
    return ConstantFit(c, se, (c - t * se, c + t * se), form, rel)


def corpus_drown_curve(samples: ScoreSamples, sizes: Sequence[int]) -> list[dict]:
    """P(max of N negatives > a positive) for each corpus size N, from the empirical negative CDF."""
    neg = np.sort(samples.negative)
    F = np.searchsorted(neg, samples.positive, side="left") / neg.size  # P(neg < pos), per positive
    rows = []
    for N in sizes:
        ok = F ** int(N)
        rows.append({"corpus_size": int(N), "p_drown": float(1.0 - ok.mean()),
                     "stderr": float(ok.std(ddof=1) / math.sqrt(ok.size))})
    return rows


def score_histograms(samples: ScoreSamples, bins: int = 60) -> tuple[list[dict], dict]:
    """Shared-edge histograms of both polarities plus a normality check of the negatives."""
    lo = float(min(samples.positive.min(), samples.negative.min()))
    hi = float(max(samples.positive.max(), samples.negative.max()))
    if hi <= lo:
        hi = lo + 1e-12
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for name, x in (("positive", samples.positive), ("negative", samples.negative)):
        counts, _ = np.histogram(x, edges)
        dens = counts / (x.size * np.diff(edges))
        for a, b, c, d in zip(edges[:-1], edges[1:], counts, dens):
            rows.append({"model": samples.kind, "polarity": name, "lo": float(a), "hi": float(b), "count": int(c), "density": float(d)})
    neg = samples.negative
    z = (neg - neg.mean()) / neg.std(ddof=1)
    ks = stats.kstest(z, "norm")
    diag = {
        "skewness": float(stats.skew(neg)),
        "excess_kurtosis": float(stats.kurtosis(neg)),
        "ks_statistic": float(ks.statistic),
    }
    return rows, diag


def write_csv(rows: Sequence[dict], path=None, fields: Sequence[str] | None = None) -> str:
    fields = list(fields or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else ("" if v is None else v)) for k, v in r.items()})
    if path is not None:
        Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return buf.getvalue()
