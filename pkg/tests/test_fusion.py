import math

import numpy as np
import pytest
from scipy import stats

from metaspoof.beta import limit_scenario
from metaspoof.fusion import (FakeDensity, FixedRule, GammaFit, LlrModel, SecureLlrModel,
                              extended_llr_prior, fit_gamma, fuse_fixed, fuse_llr,
                              fuse_secure_llr, model_from_json, train_lda, train_llr,
                              train_secure_llr)
from metaspoof.fusion.llr import _extended_prior_generative
from metaspoof.types import (MixturePrior, NumericError, ScoreDataset, ValidationError,
                             enumerate_combinations, validate_prior)

from conftest import make_dataset

BIMODAL = MixturePrior({(0, 0): 0.5, (1, 0): 0.25, (0, 1): 0.25, (1, 1): 0.0})


@pytest.mark.parametrize("kind, expect", [("sum", 0.7), ("product", 0.1), ("minimum", 0.2)])
def test_fixed_rules(kind, expect):
    assert fuse_fixed(kind, (0.2, 0.5)) == pytest.approx(expect)


def test_fixed_rule_unknown():
    with pytest.raises(ValidationError, match="unknown fixed rule"):
        FixedRule("max")


def _two_class(g, i):
    scores = np.vstack([g, i])
    genuine = np.r_[np.ones(len(g), bool), np.zeros(len(i), bool)]
    return ScoreDataset(scores, genuine, np.array([f"c{j}" for j in range(len(scores))], dtype=object))


def test_lda_axis_displacement():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(4000, 2))
    ds = _two_class(base[:2000] + [3, 0], base[2000:])
    m = train_lda(ds)
    assert abs(m.w[0]) == pytest.approx(1, abs=1e-3) and m.w[0] > 0
    assert abs(m.w[1]) < 0.05
    assert m.score(ds.genuine_scores()).mean() > 0 > m.score(ds.impostor_scores()).mean()


def test_lda_equal_means():
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(ValidationError, match="coincide"):
        train_lda(_two_class(x, x[::-1]))


def test_lda_matches_dense_solve():
    rng = np.random.default_rng(1)
    cov = [[1.0, 0.6], [0.6, 2.0]]
    g = rng.multivariate_normal([1.0, 2.0], cov, 1000)
    i = rng.multivariate_normal([0.0, 0.5], cov, 1000)
    m = train_lda(_two_class(g, i))
    pooled = np.cov(g.T) * (len(g) - 1) + np.cov(i.T) * (len(i) - 1)
    ref = np.linalg.inv(pooled) @ (g.mean(0) - i.mean(0))
    cos = m.w @ ref / np.linalg.norm(ref)
    assert cos >= 0.9999
    assert np.linalg.norm(m.w) == pytest.approx(1.0)
    assert m.b == pytest.approx(-m.w @ (g.mean(0) + i.mean(0)) / 2)


def test_lda_collinear_scores_use_ridge():
    rng = np.random.default_rng(2)
    g = rng.normal(1, 1, 200)
    i = rng.normal(0, 1, 200)
    m = train_lda(_two_class(np.c_[g, g], np.c_[i, i]))
    assert np.all(np.isfinite(m.w)) and m.w[0] == pytest.approx(m.w[1])


def test_lda_zero_scatter():
    with pytest.raises(NumericError):
        train_lda(_two_class(np.ones((3, 2)), np.zeros((3, 2))))


def test_fit_gamma_moments():
    a = 1 / math.sqrt(2)
    fit = fit_gamma(np.array([2 - a, 2 + a]) - 1e-6)
    assert fit.k == pytest.approx(4) and fit.theta == pytest.approx(0.5)


def test_fit_gamma_errors():
    with pytest.raises(ValidationError, match="variance"):
        fit_gamma([0.3] * 5)
    with pytest.raises(ValidationError, match="at least 2"):
        fit_gamma([0.3])
    with pytest.raises(ValidationError, match="mean"):
        fit_gamma([-1.0, -2.0])


def test_fit_gamma_round_trip():
    x = np.random.default_rng(3).gamma(3, 0.2, 100_000)
    fit = fit_gamma(x, offset=0.0)
    assert fit.k == pytest.approx(3, rel=0.05)
    assert fit.theta == pytest.approx(0.2, rel=0.05)


def test_gamma_density_integrates_to_one():
    from scipy.integrate import quad
    fit = GammaFit(2.5, 0.1)
    total, _ = quad(fit.pdf, -fit.offset, 20, limit=200)
    assert total == pytest.approx(1, abs=1e-8)
    assert fit.logpdf(-1.0) == pytest.approx(math.log(1e-300))


def _ref_logpdf(fit, x):
    return stats.gamma.logpdf(x + fit.offset, fit.k, scale=fit.theta)


def test_llr_equal_densities_is_zero():
    f = GammaFit(2.0, 0.3)
    m = LlrModel((f, f), (f, f))
    assert fuse_llr(m, (0.4, 0.7)) == 0.0


def test_llr_density_ratio_two():
    # Gamma(2, 1) / Gamma(1, 1) at y is y, so y = 2 gives log 2
    m = LlrModel((GammaFit(2.0, 1.0),), (GammaFit(1.0, 1.0),))
    assert fuse_llr(m, (2.0 - 1e-6,)) == pytest.approx(math.log(2), abs=1e-12)


def test_llr_matches_direct_product():
    rng = np.random.default_rng(4)
    m = LlrModel(tuple(GammaFit(*rng.uniform([1, 0.05], [6, 0.3])) for _ in range(3)),
                 tuple(GammaFit(*rng.uniform([1, 0.05], [6, 0.3])) for _ in range(3)))
    X = rng.random((200, 3))
    direct = np.log(np.prod([np.exp(_ref_logpdf(m.genuine[i], X[:, i]) - _ref_logpdf(m.impostor[i], X[:, i]))
                             for i in range(3)], axis=0))
    assert np.allclose(m.score(X), direct, atol=1e-12, rtol=0)
    ratio = np.prod([stats.gamma.pdf(X[:, i] + 1e-6, m.genuine[i].k, scale=m.genuine[i].theta)
                     / stats.gamma.pdf(X[:, i] + 1e-6, m.impostor[i].k, scale=m.impostor[i].theta)
                     for i in range(3)], axis=0)
    assert np.array_equal(np.argsort(m.score(X)), np.argsort(ratio))


def _prior_dict(p):
    return {c: pytest.approx(w, abs=1e-15) for c, w in p.weights.items()}


def test_extended_prior_examples():
    assert extended_llr_prior(0.0, (0.4, 0.9)).weights == _prior_dict(
        MixturePrior({(0, 0): 1.0, (0, 1): 0.0, (1, 0): 0.0, (1, 1): 0.0}))
    assert extended_llr_prior(1.0, (0.0, 0.0)).weights == _prior_dict(
        MixturePrior({(0, 0): 0.0, (0, 1): 1 / 3, (1, 0): 1 / 3, (1, 1): 1 / 3}))
    assert extended_llr_prior(0.3, (0.5, 0.5)).weights == _prior_dict(
        MixturePrior({(0, 0): 0.825, (0, 1): 0.075, (1, 0): 0.075, (1, 1): 0.025}))


def test_extended_prior_closed_forms_match_generative():
    rng = np.random.default_rng(5)
    for r, c1, c2 in rng.random((200, 3)):
        closed = extended_llr_prior(r, (c1, c2)).weights
        gen = _extended_prior_generative(r, (c1, c2)).weights
        assert all(abs(closed[a] - gen[a]) < 1e-12 for a in closed)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_extended_prior_sums_to_one(k):
    rng = np.random.default_rng(k)
    for _ in range(100):
        p = extended_llr_prior(rng.random(), rng.random(k))
        assert abs(sum(p.weights.values()) - 1) < 1e-12
        validate_prior(p, enumerate_combinations((1,) * k))


def test_extended_prior_range_errors():
    with pytest.raises(ValidationError, match="r must"):
        extended_llr_prior(1.5, (0, 0))
    with pytest.raises(ValidationError, match="c_i"):
        extended_llr_prior(0.5, (0, -0.1))


@pytest.fixture(scope="module")
def trained():
    return make_dataset(400, 400, k=2, seed=8)


@pytest.mark.parametrize("variant", ["extended", "uniform", "alpha"])
def test_zero_attack_prior_degenerates_to_llr(trained, variant):
    base = train_llr(trained)
    m = train_secure_llr(trained, MixturePrior.zero_effort_only((1, 1)), variant, scenarios={})
    X = np.random.default_rng(9).random((10_000, 2))
    assert np.max(np.abs(m.score(X) - base.score(X))) <= 1e-12
    assert fuse_secure_llr(m, X[0]) == pytest.approx(fuse_llr(base, X[0]), abs=1e-12)


def test_extended_full_attack_is_zero(trained):
    prior = MixturePrior({(0, 0): 0, (0, 1): 0, (1, 0): 0, (1, 1): 1.0})
    m = train_secure_llr(trained, prior, "extended")
    X = np.random.default_rng(10).random((500, 2))
    assert np.all(m.score(X) == 0.0)


def test_uniform_single_matcher_two_term_mixture():
    ds = make_dataset(300, 300, k=1, seed=11)
    m = train_secure_llr(ds, MixturePrior({(0,): 0.5, (1,): 0.5}), "uniform")
    x = np.linspace(0.01, 0.99, 50)
    h = m.base.impostor[0].pdf(x)
    expect = m.base.genuine[0].logpdf(x) - np.log(0.5 * h + 0.5)
    assert np.allclose(m.score(x[:, None]), expect, atol=1e-12, rtol=0)


def test_secure_llr_matches_direct_mixture(trained):
    scen = {(0, 1): limit_scenario(True), (1, 1): limit_scenario(False)}
    for variant in ("extended", "uniform", "alpha"):
        m = train_secure_llr(trained, extended_llr_prior(0.4, (0.2, 0.3)), variant, scen, seed=1, n_sim=5000)
        X = np.random.default_rng(12).random((300, 2))
        den = np.zeros(len(X))
        for combo, w in m.prior.weights.items():
            comp = np.ones(len(X))
            for i, a in enumerate(combo):
                d = m.base.impostor[i].pdf(X[:, i]) if a == 0 else np.exp(m.fake[(i, a)].logpdf(X[:, i]))
                comp *= d
            den += w * comp
        expect = m.base.log_genuine(X) - np.log(den)
        assert np.allclose(m.score(X), expect, atol=1e-12, rtol=1e-12)


def test_extended_equals_alpha_with_genuine_fake_density(trained):
    prior = extended_llr_prior(0.5, (0.1, 0.6))
    ext = train_secure_llr(trained, prior, "extended")
    alpha = SecureLlrModel(ext.base, prior, "alpha",
                           {(i, 1): FakeDensity("genuine", ext.base.genuine[i]) for i in range(2)})
    X = np.random.default_rng(13).random((1000, 2))
    assert np.array_equal(ext.score(X), alpha.score(X))


def test_alpha_near_zero_scenario_matches_impostor_fit(trained):
    m = train_secure_llr(trained, MixturePrior({(0,) * 2: 0.5, (1, 0): 0.5, (0, 1): 0, (1, 1): 0}),
                         "alpha", {(0, 1): limit_scenario(False)}, seed=2)
    fake, imp = m.fake[(0, 1)].gamma, m.base.impostor[0]
    rng = np.random.default_rng(14)
    a = rng.gamma(fake.k, fake.theta, 10_000)
    b = rng.gamma(imp.k, imp.theta, 10_000)
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_alpha_requires_scenarios(trained):
    with pytest.raises(ValidationError, match="needs attack scenarios"):
        train_secure_llr(trained, BIMODAL, "alpha")
    with pytest.raises(ValidationError, match=r"\(1, 1\)"):
        train_secure_llr(trained, BIMODAL, "alpha", {(0, 1): limit_scenario(True)})
    with pytest.raises(ValidationError, match="variant"):
        train_secure_llr(trained, BIMODAL, "bayes")


def test_alpha_kde_option(trained):
    scen = {(0, 1): limit_scenario(True), (1, 1): limit_scenario(True)}
    m = train_secure_llr(trained, BIMODAL, "alpha", scen, n_sim=3000, fake_density="kde")
    assert m.fake[(0, 1)].kind == "kde"
    X = np.random.default_rng(15).random((100, 2))
    assert np.all(np.isfinite(m.score(X)))
    back = model_from_json(m.to_json())
    assert np.allclose(back.score(X), m.score(X), atol=1e-12)
    with pytest.raises(ValidationError, match="family"):
        train_secure_llr(trained, BIMODAL, "alpha", scen, n_sim=100, fake_density="spline")


def test_models_json_round_trip(trained):
    X = np.random.default_rng(16).random((50, 2))
    scen = {(0, 1): limit_scenario(True), (1, 1): limit_scenario(True)}
    models = [FixedRule("product"), train_lda(trained), train_llr(trained),
              train_secure_llr(trained, BIMODAL, "extended"),
              train_secure_llr(trained, BIMODAL, "uniform"),
              train_secure_llr(trained, BIMODAL, "alpha", scen, n_sim=2000)]
    for m in models:
        back = model_from_json(m.to_json())
        assert np.array_equal(back.score(X), m.score(X))


def test_model_from_json_unknown_rule():
    with pytest.raises(ValidationError, match="supported rules"):
        model_from_json({"rule": "max"})


def test_fake_density_validation():
    with pytest.raises(ValidationError):
        FakeDensity("beta")
    with pytest.raises(ValidationError, match="Gamma fit"):
        FakeDensity("gamma")
    with pytest.raises(ValidationError, match=r"\(0, 1\)"):
        SecureLlrModel(LlrModel((GammaFit(1, 1),) * 2, (GammaFit(1, 1),) * 2), BIMODAL, "uniform", {})
