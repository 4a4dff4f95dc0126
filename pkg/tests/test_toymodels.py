import math

import numpy as np
import pytest
from scipy import stats

from limitkit.rng import stream
from limitkit.toymodels import (
    GoodnessReport,
    ScoreSamples,
    ToyModelParams,
    _shared_vocab_kernel,
    analytic_goodness_multi,
    analytic_goodness_single,
    coordinate_draw,
    corpus_drown_curve,
    drowning_probability,
    fit_multi_constant,
    goodness,
    gram_tokens,
    score_histograms,
    simulate_multi_vector,
    simulate_single_vector,
    sum_norms,
    write_csv,
)


def samples(pos, neg, kind="cosine", params=None):
    return ScoreSamples(np.asarray(pos, float), np.asarray(neg, float), kind, params or ToyModelParams(64, 1, 1, 1), "given")


def direct_dots(rng, count, p, D):
    """Reference sampler: explicit Gaussian vectors in R^D."""
    g = rng.standard_normal((count, p, D))
    g /= np.linalg.norm(g, axis=2, keepdims=True)
    return g


# --- parameter validation ---------------------------------------------------


def test_overlap_larger_than_sets_rejected():
    with pytest.raises(ValueError):
        ToyModelParams(1024, 1, 48, 2)  # K=2 cannot exceed m=1
    with pytest.raises(ValueError):
        ToyModelParams(0, 1, 1, 1)
    assert ToyModelParams(16, 2, 3, 2).replace(overlap=0).overlap == 0


# --- exact low-dimensional samplers ----------------------------------------------


@pytest.mark.parametrize("D", [1, 3, 40])
def test_coordinate_draw_moments(D):
    x = coordinate_draw(stream(0, "c", D), 200_000, D)
    assert abs(x.mean()) < 5 * math.sqrt(1 / D / 200_000)
    assert abs((x**2).mean() - 1 / D) < 0.02 / D


@pytest.mark.parametrize("p,D", [(3, 5), (6, 6), (8, 4), (2, 300)])
def test_gram_tokens_match_direct_sampling(p, D):
    B = 20_000
    T = gram_tokens(stream(1, "g"), B, p, D)
    ref = direct_dots(np.random.default_rng(2), B, p, D)
    assert np.allclose(np.linalg.norm(T, axis=2), 1.0)
    for a, b in [(0, 1), (0, p - 1), (p - 2, p - 1)]:
        x = np.einsum("br,br->b", T[:, a], T[:, b])
        y = np.einsum("br,br->b", ref[:, a], ref[:, b])
        assert stats.ks_2samp(x, y).pvalue > 1e-4


@pytest.mark.parametrize("j,D", [(1, 7), (5, 7), (12, 3), (4, 1)])
def test_sum_norms_match_direct_sampling(j, D):
    B = 20_000
    got = sum_norms(stream(3, "s"), B, j, D)
    ref = np.linalg.norm(direct_dots(np.random.default_rng(4), B, j, D).sum(axis=1), axis=1)
    assert abs(np.mean(got**2) - j) < 5 * np.std(ref**2) / math.sqrt(B) + 1e-12
    if j > 1:
        assert stats.ks_2samp(got, ref).pvalue > 1e-4


def test_sphere_sampler_moments():
    D = 32
    v = direct_dots(np.random.default_rng(0), 50_000, 1, D)[:, 0]
    g = gram_tokens(stream(5, "sphere"), 50_000, 1, D)  # one token: its Bartlett row is e_1
    assert abs(v.mean()) < 5 / math.sqrt(50_000 * D)
    assert abs((v**2).mean() - 1 / D) < 0.02 / D
    assert np.all(g == 1.0)


# --- simulators ------------------------------------------------------------------


@pytest.mark.parametrize("m,n,K,D", [(1, 6, 1, 16), (3, 5, 2, 8), (4, 4, 0, 20), (2, 9, 1, 3)])
@pytest.mark.parametrize("sim", [simulate_single_vector, simulate_multi_vector])
def test_methods_agree_in_distribution(m, n, K, D, sim):
    p = ToyModelParams(D, m, n, K, trials=20_000, seed=2)
    a, b = sim(p, method="tokens"), sim(p, method="reduced")
    for x, y in ((a.positive, b.positive), (a.negative, b.negative)):
        se = math.sqrt(x.var() / x.size + y.var() / y.size)
        assert abs(x.mean() - y.mean()) <= 5 * se + 1e-12
        if x.std() > 0:
            assert stats.ks_2samp(x, y).pvalue > 1e-4


@pytest.mark.parametrize("method", ["tokens", "reduced"])
def test_identical_singletons_score_one(method):
    s = simulate_single_vector(ToyModelParams(50, 1, 1, 1, trials=1000), method=method)
    assert np.allclose(s.positive, 1.0, atol=1e-12)


@pytest.mark.parametrize("method", ["tokens", "reduced"])
def test_multi_full_overlap_scores_exactly_one(method):
    s = simulate_multi_vector(ToyModelParams(64, 3, 10, 3, trials=2000), method=method)
    assert np.all(s.positive == 1.0)
    assert np.all(s.negative <= 1 + 1e-9) and np.all(s.positive <= 1 + 1e-9)


def test_multi_negative_mean_grows_with_n():
    lo = simulate_multi_vector(ToyModelParams(256, 4, 16, 1, trials=20_000)).negative
    hi = simulate_multi_vector(ToyModelParams(256, 4, 256, 1, trials=20_000)).negative
    assert hi.mean() > lo.mean() + 5 * math.hypot(lo.std(), hi.std()) / math.sqrt(20_000)


def test_multi_negative_variance_shrinks_with_m():
    v1 = simulate_multi_vector(ToyModelParams(256, 1, 64, 1, trials=20_000)).negative.var()
    v16 = simulate_multi_vector(ToyModelParams(256, 16, 64, 1, trials=20_000)).negative.var()
    assert v16 < v1 / 5


def test_single_negative_moments_small_t():
    s = simulate_single_vector(ToyModelParams(64, 4, 8, 1, trials=40_000), method="tokens")
    assert abs(s.negative.mean()) < 4 * math.sqrt(1 / 64 / 40_000)
    assert abs(s.negative.var() - 1 / 64) < 0.05 / 64


def test_shared_vocabulary_mode():
    p = ToyModelParams(32, 1, 1, 1, trials=3000, seed=1)
    s = simulate_single_vector(p, vocabulary="shared", vocab_size=200)
    assert s.method == "shared-200"
    assert np.allclose(s.positive, 1.0)
    m = simulate_multi_vector(p.replace(query_size=2, doc_size=5, overlap=2), vocabulary="shared", vocab_size=200)
    assert np.all(m.positive == 1.0)
    with pytest.raises(ValueError):
        simulate_single_vector(p.replace(doc_size=300), vocabulary="shared", vocab_size=200)


def test_single_vector_scale_invariance():
    vocab = direct_dots(np.random.default_rng(0), 1, 100, 16)[0]
    p = ToyModelParams(16, 3, 7, 2)
    a = _shared_vocab_kernel(vocab, "cosine")(stream(1, "k"), 500, p, True)
    b = _shared_vocab_kernel(vocab * 3.7, "cosine")(stream(1, "k"), 500, p, True)
    assert np.allclose(a, b, atol=1e-12, rtol=0)


@pytest.mark.parametrize("sim", [simulate_single_vector, simulate_multi_vector])
def test_deterministic_across_threads(sim):
    p = ToyModelParams(128, 4, 40, 1, trials=50_000, seed=7)
    ref = sim(p, threads=1)
    for t in (4, 8):
        other = sim(p, threads=t)
        assert np.array_equal(ref.positive, other.positive) and np.array_equal(ref.negative, other.negative)
    assert not np.array_equal(ref.negative, sim(p.replace(seed=8)).negative)


# --- statistics ---------------------------------------------------------------------


def test_analytic_formulas():
    assert analytic_goodness_single(ToyModelParams(1024, 1, 48, 1).replace(overlap=1)) == pytest.approx(math.sqrt(1024 / 48))
    assert 2 * math.sqrt(1024 / 48) == pytest.approx(9.2376, abs=1e-4)
    p = ToyModelParams(256, 4, 64, 2)
    assert analytic_goodness_multi(p, 1.5) == pytest.approx(1.5 * 2 * math.sqrt(256 / (4 * math.log(64))))
    assert analytic_goodness_multi(p, 1.0, "log-numerator") == pytest.approx(2 * math.sqrt(256 * math.log(64) / 4))
    with pytest.raises(ValueError):
        analytic_goodness_multi(ToyModelParams(16, 1, 1, 1), 1.0)


def test_goodness_identical_distributions_near_zero():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(40_000)
    rep = goodness(samples(x[:20_000], x[20_000:]))
    assert abs(rep.G) <= 3 * rep.G_stderr


def test_goodness_stderr_is_calibrated():
    Gs, ses = [], []
    for seed in range(60):
        rng = np.random.default_rng(seed)
        rep = goodness(samples(rng.gamma(4, size=2000) + 1, rng.gamma(4, size=2000)))
        Gs.append(rep.G)
        ses.append(rep.G_stderr)
    assert 0.7 < np.std(Gs) / np.mean(ses) < 1.3


def test_goodness_needs_negative_spread():
    with pytest.raises(ValueError):
        goodness(samples([1.0, 2.0], [0.5, 0.5]))


def brute_drown(pos, neg):
    return sum(1 for p in pos for n in neg if n > p) / (len(pos) * len(neg))


def test_drowning_examples_and_oracle():
    assert drowning_probability(samples([2.0, 3.0, 4.0], [0.0, 1.0, 1.5])).pairwise == 0.0
    rng = np.random.default_rng(1)
    x = rng.standard_normal(20_000)
    est = drowning_probability(samples(x[:10_000], x[10_000:]))
    assert abs(est.pairwise - 0.5) <= 3 * est.stderr
    assert est.gaussian == pytest.approx(0.5, abs=0.02)
    for seed in range(20):
        r = np.random.default_rng(seed)
        pos = r.integers(0, 5, size=r.integers(2, 12)).astype(float)
        neg = r.integers(0, 5, size=r.integers(2, 12)).astype(float)
        assert drowning_probability(samples(pos, neg)).pairwise == pytest.approx(brute_drown(pos, neg), abs=1e-15)


def test_gaussian_drowning_formula():
    rng = np.random.default_rng(2)
    pos, neg = rng.normal(3, 2, 50_000), rng.normal(0, 1, 50_000)
    est = drowning_probability(samples(pos, neg))
    assert est.gaussian == pytest.approx(stats.norm.cdf(-3 / math.sqrt(5)), rel=0.05)
    assert est.pairwise == pytest.approx(est.gaussian, rel=0.05)
    assert est.log_gaussian == pytest.approx(math.log(est.gaussian), rel=1e-6)


def test_corpus_drown_curve_matches_oracle():
    rng = np.random.default_rng(3)
    pos, neg = rng.normal(1, 1, 50), rng.normal(0, 1, 70)
    rows = corpus_drown_curve(samples(pos, neg), [1, 5, 50])
    for r in rows:
        N = r["corpus_size"]
        expect = 1 - np.mean([(np.sum(neg < p) / neg.size) ** N for p in pos])
        assert r["p_drown"] == pytest.approx(expect, abs=1e-12)
    assert rows[0]["p_drown"] < rows[1]["p_drown"] < rows[2]["p_drown"]


def test_fit_multi_constant_recovers_exact_constant():
    reps = []
    for n in (16, 64, 256):
        p = ToyModelParams(256, 2, n, 1)
        g = 1.7 * analytic_goodness_multi(p, 1.0)
        fake = samples([0.0, 1.0], [0.0, 1.0], "chamfer", p)
        rep = goodness(fake)
        rep.G = g
        reps.append(rep)
    fit = fit_multi_constant(reps)
    assert fit.c == pytest.approx(1.7) and fit.stderr == pytest.approx(0.0, abs=1e-12)
    assert fit.ci95[0] == pytest.approx(1.7) and fit.rel_rmse < 1e-12


def test_histograms_and_normality():
    rng = np.random.default_rng(4)
    s = samples(rng.normal(1, 1, 5000), rng.normal(0, 1, 6000))
    rows, diag = score_histograms(s, bins=30)
    pos = [r for r in rows if r["polarity"] == "positive"]
    neg = [r for r in rows if r["polarity"] == "negative"]
    assert len(pos) == len(neg) == 30
    assert sum(r["count"] for r in pos) == 5000 and sum(r["count"] for r in neg) == 6000
    assert sum(r["density"] * (r["hi"] - r["lo"]) for r in neg) == pytest.approx(1.0)
    assert abs(diag["skewness"]) < 0.2 and abs(diag["excess_kurtosis"]) < 0.3 and diag["ks_statistic"] < 0.03


def test_write_csv(tmp_path):
    text = write_csv([{"a": 1, "b": 0.5, "c": None}], tmp_path / "x.csv")
    assert text == "a,b,c\n1,0.5,\n"
    assert (tmp_path / "x.csv").read_text() == text


def test_goodness_row_fields():
    s = simulate_single_vector(ToyModelParams(64, 2, 8, 1, trials=2000))
    rep = goodness(s, corpus_size=100)
    row = rep.row()
    assert row["model"] == "cosine" and row["G_analytic"] == pytest.approx(math.sqrt(64 / 16))
    assert 0 <= rep.corpus_drown <= 1
