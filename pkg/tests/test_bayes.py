import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gammaln

from smabayes.bayes import (
    BetaParams,
    CountData,
    DirichletMultinomialModel,
    DirichletParams,
    HierarchicalNBModel,
    ModelParams,
    PriorConfig,
    dirichlet_multinomial_posterior,
    fold_to_pseudocounts,
    log_beta_pdf,
    log_binomial_pmf,
    log_dirichlet_pdf,
    log_multinomial_pmf,
    log_negbinom_pmf,
    model_gradient,
    model_log_posterior,
    param_names,
    simulate_counts,
)
from smabayes.errors import DomainError, NonFinite, ValidationError

from .conftest import make_matrix


def rel_err(a, b):
    """Error relative to ``max(|b|, 1)``: relative for large entries, absolute near 0."""
    return np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(np.abs(b), 1.0)


def fd_gradient(f, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(len(x)):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (f(up) - f(dn)) / (2 * h)
    return out


# -- elementary densities ------------------------------------------------------------


def test_beta_examples():
    assert log_beta_pdf(0.37, BetaParams(1, 1)) == pytest.approx(0.0, abs=1e-15)
    assert log_beta_pdf(0.5, BetaParams(2, 2)) == pytest.approx(math.log(1.5), abs=1e-14)
    assert log_beta_pdf(0.25, BetaParams(2, 1)) == pytest.approx(math.log(0.5), abs=1e-14)
    with pytest.raises(DomainError):
        log_beta_pdf(1.0, BetaParams(2, 2))


def test_dirichlet_examples():
    assert log_dirichlet_pdf([0.2, 0.3, 0.5], DirichletParams([1, 1, 1])) == pytest.approx(math.log(2))
    assert log_dirichlet_pdf([0.3, 0.7], DirichletParams([1, 1])) == pytest.approx(0.0, abs=1e-15)
    assert log_dirichlet_pdf([0.5, 0.5], DirichletParams([2, 2])) == pytest.approx(
        log_beta_pdf(0.5, BetaParams(2, 2)), abs=1e-12
    )
    with pytest.raises(DomainError):
        log_dirichlet_pdf([0.5, 0.6], DirichletParams([1, 1]))


@given(st.floats(0.01, 0.99), st.floats(0.1, 20), st.floats(0.1, 20))
def test_dirichlet_reduces_to_beta(t, a, b):
    assert abs(log_dirichlet_pdf([t, 1 - t], DirichletParams([a, b])) - log_beta_pdf(t, BetaParams(a, b))) < 1e-12


def test_binomial_examples():
    assert log_binomial_pmf(10, 10, 1.0) == 0.0
    assert log_binomial_pmf(3, 10, 0.5) == pytest.approx(math.log(120 / 1024), abs=1e-13)
    assert log_binomial_pmf(0, 5, 0.0) == 0.0
    assert log_binomial_pmf(1, 5, 0.0) == -math.inf
    with pytest.raises(DomainError):
        log_binomial_pmf(6, 5, 0.5)


@pytest.mark.parametrize("n,theta", [(0, 0.3), (7, 0.0), (13, 0.42), (20, 1.0)])
def test_binomial_sums_to_one(n, theta):
    total = sum(math.exp(log_binomial_pmf(k, n, theta)) for k in range(n + 1))
    assert total == pytest.approx(1.0, abs=1e-13)


def test_multinomial_examples():
    assert log_multinomial_pmf([2, 0], [1.0, 0.0]) == 0.0
    assert log_multinomial_pmf([1, 1], [0.5, 0.5]) == pytest.approx(math.log(0.5))
    assert log_multinomial_pmf([3, 4], [0.3, 0.7]) == pytest.approx(log_binomial_pmf(3, 7, 0.3), abs=1e-13)
    with pytest.raises(DomainError):
        log_multinomial_pmf([1, 2, 3], [0.5, 0.5])


def test_multinomial_sums_to_one():
    theta = [0.2, 0.5, 0.3]
    n = 9
    total = sum(
        math.exp(log_multinomial_pmf([a, b, n - a - b], theta)) for a in range(n + 1) for b in range(n + 1 - a)
    )
    assert total == pytest.approx(1.0, abs=1e-13)


def test_conjugate_update_examples():
    assert dirichlet_multinomial_posterior(DirichletParams([1, 1]), [3, 7]) == DirichletParams([4, 8])
    assert dirichlet_multinomial_posterior(DirichletParams([2, 3, 5]), [0, 0, 0]) == DirichletParams([2, 3, 5])
    post = dirichlet_multinomial_posterior(DirichletParams([1, 1]), [100, 0])
    assert post.alpha.tolist() == [101, 1] and post.mean()[0] == pytest.approx(101 / 102)
    with pytest.raises(DomainError):
        dirichlet_multinomial_posterior(DirichletParams([1, 1]), [1, 2, 3])


counts3 = st.lists(st.integers(0, 50), min_size=3, max_size=3)


@given(st.lists(st.floats(0.1, 10), min_size=3, max_size=3), counts3, counts3)
def test_conjugate_update_composes(alpha, k1, k2):
    prior = DirichletParams(alpha)
    twice = dirichlet_multinomial_posterior(dirichlet_multinomial_posterior(prior, k1), k2)
    once = dirichlet_multinomial_posterior(prior, np.add(k1, k2))
    assert np.allclose(twice.alpha, once.alpha, rtol=0, atol=1e-12)


def test_negbinom_examples():
    assert log_negbinom_pmf(0, 1.0, 1.0) == pytest.approx(math.log(0.5), abs=1e-15)
    k = np.arange(2001)
    p = np.exp(log_negbinom_pmf(k, 5.0, 2.0))
    assert abs(p.sum() - 1) < 1e-10
    assert abs((k * p).sum() - 5) < 1e-8
    var = ((k - 5.0) ** 2 * p).sum()
    assert var == pytest.approx(5 + 25 / 2, rel=1e-8)
    with pytest.raises(DomainError):
        log_negbinom_pmf(1, 0.0, 1.0)
    with pytest.raises(DomainError):
        log_negbinom_pmf(1, 1.0, -1.0)


def test_negbinom_matches_direct_formula():
    k, mu, phi = 7, 3.5, 1.7
    direct = (
        gammaln(k + phi) - gammaln(phi) - gammaln(k + 1)
        + phi * math.log(phi / (phi + mu)) + k * math.log(mu / (phi + mu))
    )
    assert log_negbinom_pmf(k, mu, phi) == pytest.approx(direct, abs=1e-12)


# -- hierarchical model -------------------------------------------------------------


def synthetic(G=5, S=4, seed=0):
    rng = np.random.default_rng(seed)
    params = ModelParams(-0.4, math.log(0.2), rng.normal(-0.4, 0.2, G), rng.normal(0, 0.3, G),
                         math.log(0.3), math.log(15.0))
    totals = rng.uniform(8e5, 1.2e6, S).round()
    stage = np.arange(S) % 2
    return params, simulate_counts(params, totals, stage, [f"g{i}" for i in range(G)], rng=rng)


def random_params(rng, G):
    return ModelParams(
        rng.normal(0, 1), rng.normal(-1, 0.7), rng.normal(-0.5, 0.8, G), rng.normal(0, 0.5, G),
        rng.normal(-1, 0.7), rng.normal(2, 0.7),
    )


def hyperprior_only(p, h):
    sa, sb, phi = math.exp(p.log_sigma_alpha), math.exp(p.log_sigma_beta), math.exp(p.log_dispersion)

    def normal(x, m, s):
        return -0.5 * math.log(2 * math.pi) - math.log(s) - 0.5 * ((x - m) / s) ** 2

    def half(x, s):
        return math.log(2) + normal(x, 0, s)

    return (
        normal(p.mu_alpha, h.mu_alpha_loc, h.mu_alpha_scale)
        + half(sa, h.sigma_alpha_scale) + p.log_sigma_alpha
        + half(sb, h.sigma_beta_scale) + p.log_sigma_beta
        + half(phi, h.dispersion_scale) + p.log_dispersion
    )


def test_zero_gene_value_is_hyperprior():
    d = CountData(np.empty((0, 3)), [10, 10, 10], [0, 1, 0], ())
    p = ModelParams(0.3, -0.2, [], [], 0.1, 1.5)
    assert model_log_posterior(p, d) == pytest.approx(hyperprior_only(p, PriorConfig()), abs=1e-12)


def test_single_cell_term_by_term():
    h = PriorConfig()
    d = CountData([[17]], [2e5], [1], ("cycle",))
    p = ModelParams(-0.3, math.log(0.4), [-0.5], [0.2], math.log(0.1), math.log(8.0))
    sa, sb, phi = 0.4, 0.1, 8.0
    mu = 2e5 * h.depth_scale * math.exp(-0.5 + 0.2)
    nb = (math.lgamma(17 + phi) - math.lgamma(phi) - math.lgamma(18)
          + phi * math.log(phi / (phi + mu)) + 17 * math.log(mu / (phi + mu)))
    alpha_term = -0.5 * math.log(2 * math.pi) - math.log(sa) - 0.5 * ((-0.5 + 0.3) / sa) ** 2
    beta_term = -0.5 * math.log(2 * math.pi) - math.log(sb) - 0.5 * (0.2 / sb) ** 2
    expected = hyperprior_only(p, h) + alpha_term + beta_term + nb
    assert model_log_posterior(p, d, h) == pytest.approx(expected, abs=1e-10)


def test_offset_shift_leaves_likelihood_unchanged():
    params, d = synthetic()
    c = 0.7
    h1 = PriorConfig(depth_scale=1e-4)
    h2 = PriorConfig(depth_scale=1e-4 * math.exp(-c))
    shifted = ModelParams(params.mu_alpha + c, params.log_sigma_alpha, params.alpha + c, params.beta,
                          params.log_sigma_beta, params.log_dispersion)
    # priors are identical except the mu_alpha hyperprior, which moves by a known amount
    hyper_shift = (
        -0.5 * ((params.mu_alpha + c) / 5) ** 2 + 0.5 * (params.mu_alpha / 5) ** 2
    )
    a = model_log_posterior(params, d, h1)
    b = model_log_posterior(shifted, d, h2)
    assert b - a == pytest.approx(hyper_shift, abs=1e-9)


def test_dimension_mismatch():
    params, d = synthetic(G=5)
    with pytest.raises(DomainError):
        model_log_posterior(ModelParams(0, 0, [0.0], [0.0], 0, 0), d)


def test_gradient_finite_differences():
    _, d = synthetic()
    rng = np.random.default_rng(42)
    model = HierarchicalNBModel(d)
    for _ in range(20):
        q = random_params(rng, d.n_genes).to_vector()
        assert np.all(rel_err(model.grad(q), fd_gradient(model.log_prob, q)) < 1e-5)


def test_gradient_mu_alpha_stationary():
    h = PriorConfig(mu_alpha_loc=0.25, mu_alpha_scale=1e12)
    d = CountData(np.empty((0, 2)), [5, 5], [0, 1], ())
    p = ModelParams(0.25, 0.0, [], [], 0.0, 0.0)
    assert model_gradient(p, d, h)[0] == 0.0
    # with genes: the alpha-prior term pulls mu_alpha toward mean(alpha) and vanishes there
    alpha = np.array([0.1, 0.4, 0.25])
    d3 = CountData(np.zeros((3, 2)), [5, 5], [0, 1], ("a", "b", "c"))
    p3 = ModelParams(alpha.mean(), 0.0, alpha, np.zeros(3), 0.0, 0.0)
    h3 = PriorConfig(mu_alpha_loc=alpha.mean())
    assert model_gradient(p3, d3, h3)[0] == pytest.approx(0.0, abs=1e-15)


def test_zero_gene_gradient_is_hyperprior_only():
    d = CountData(np.empty((0, 3)), [10, 10, 10], [0, 1, 0], ())
    h = PriorConfig()
    q = np.array([0.3, -0.2, 0.1, 1.5])
    g = model_gradient(ModelParams.from_vector(q, 0), d, h)

    def f(v):
        return hyperprior_only(ModelParams.from_vector(v, 0), h)

    assert np.all(rel_err(g, fd_gradient(f, q)) < 1e-7)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=14, max_size=14))
def test_log_posterior_finite_on_moderate_vectors(vec):
    _, d = synthetic()
    lp = HierarchicalNBModel(d).log_prob(np.array(vec))
    assert math.isfinite(lp)


def test_overflowing_scale_raises_nonfinite():
    _, d = synthetic()
    q = np.zeros(14)
    q[-1] = 800.0
    with pytest.raises(NonFinite):
        HierarchicalNBModel(d).log_prob(q)
    with pytest.raises(NonFinite):
        HierarchicalNBModel(d).grad(q)


def test_param_names_and_vector_layout():
    names = param_names(2)
    assert names == ["mu_alpha", "sigma_alpha", "alpha[1]", "alpha[2]", "sigma_beta",
                     "beta[1]", "beta[2]", "dispersion"]
    p = ModelParams(1, 2, [3, 4], [6, 7], 5, 8)
    assert p.to_vector().tolist() == [1, 2, 3, 4, 5, 6, 7, 8]
    assert ModelParams.from_vector(p.to_vector(), 2).beta.tolist() == [6, 7]


def test_constrain_exponentiates_scales():
    _, d = synthetic(G=2)
    m = HierarchicalNBModel(d)
    out = m.constrain(np.zeros(8))
    assert out.tolist() == [0, 1, 0, 0, 1, 0, 0, 1]


def test_count_data_validation():
    with pytest.raises(ValidationError):
        CountData([[1, 2]], [10], [0], ("g",))
    with pytest.raises(ValidationError):
        CountData([[1.5]], [10], [0], ("g",))
    with pytest.raises(ValidationError):
        CountData([[1]], [10], [2], ("g",))


def test_dirichlet_model_gradient():
    m = DirichletMultinomialModel(DirichletParams([1, 1, 1]), [5, 3, 2])
    rng = np.random.default_rng(0)
    for _ in range(10):
        z = rng.normal(size=2)
        assert np.all(rel_err(m.grad(z), fd_gradient(m.log_prob, z)) < 1e-7)
    theta = m.constrain(np.array([[0.0, 0.0], [1.0, -1.0]]))
    assert np.allclose(theta.sum(axis=1), 1.0)


def test_dirichlet_model_mode_is_posterior_mode():
    # in log-ratio coordinates the density peaks at theta = (alpha + k) / sum
    m = DirichletMultinomialModel(DirichletParams([1, 1, 1]), [5, 3, 2])
    z = np.log(m.conc[:-1] / m.conc[-1])
    assert np.allclose(m.grad(z), 0.0, atol=1e-12)


def test_pseudocounts():
    m = make_matrix(["a", "b"], [[2.0, -2.0], [float("nan"), 1.5]])
    d = fold_to_pseudocounts(m, ["a", "b"])
    assert d.counts.tolist() == [[200, 50], [100, 150]]
    assert d.totals.tolist() == [1e6, 1e6]


def test_simulated_counts_mean():
    params = ModelParams(0, 0, [0.5], [0.0], 0, math.log(20.0))
    S = 4000
    d = simulate_counts(params, np.full(S, 1e6), np.zeros(S), ["g"], rng=np.random.default_rng(1))
    mu = 1e6 * 1e-4 * math.exp(0.5)
    assert d.counts.mean() == pytest.approx(mu, rel=0.02)
    assert d.counts.var() == pytest.approx(mu + mu * mu / 20, rel=0.1)
