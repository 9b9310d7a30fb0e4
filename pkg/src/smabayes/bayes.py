"""Log densities, conjugate updates and the hierarchical negative-binomial model.

The hierarchical model for a genes-by-samples count grid ``y`` is::

    log mu[g, s] = log(total[s] * depth_scale) + alpha[g] + beta[g] * stage[s]
    y[g, s]      ~ NegBinomial(mean=mu[g, s], dispersion=phi)
    alpha[g]     ~ Normal(mu_alpha, sigma_alpha)
    beta[g]      ~ Normal(0, sigma_beta)
    mu_alpha     ~ Normal(mu_alpha_loc, mu_alpha_scale)
    sigma_alpha  ~ HalfNormal(sigma_alpha_scale)
    sigma_beta   ~ HalfNormal(sigma_beta_scale)
    phi          ~ HalfNormal(dispersion_scale)

The scales are sampled as logs; the log-Jacobian of each transform is part
of the target density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, xlog1py, xlogy

from .errors import DomainError, NonFinite, ValidationError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class BetaParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError("Beta parameters must be positive")


@dataclass(frozen=True, eq=False)
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        if a.ndim != 1 or len(a) < 2 or not np.all(a > 0):
            raise DomainError("Dirichlet needs at least 2 positive concentrations")
        a.flags.writeable = False
        object.__setattr__(self, "alpha", a)

    def __eq__(self, other):
        return isinstance(other, DirichletParams) and np.array_equal(self.alpha, other.alpha)

    def mean(self):
        return self.alpha / self.alpha.sum()


# -- elementary log densities ---------------------------------------------------


def log_beta_pdf(theta, p):
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0, 1), got {theta}")
    log_b = gammaln(p.a) + gammaln(p.b) - gammaln(p.a + p.b)
    return float(xlogy(p.a - 1.0, theta) + xlog1py(p.b - 1.0, -theta) - log_b)


def _check_simplex(theta, strict_positive):
    t = np.asarray(theta, dtype=float)
    if t.ndim != 1 or abs(t.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError("theta must be a vector summing to 1")
    if np.any(t < 0) or (strict_positive and np.any(t <= 0)):
        raise DomainError("theta entries must be positive")
    return t


def log_dirichlet_pdf(theta, p):
    t = _check_simplex(theta, strict_positive=True)
    if len(t) != len(p.alpha):
        raise DomainError("theta and alpha lengths differ")
    a = p.alpha
    return float(gammaln(a.sum()) - gammaln(a).sum() + np.sum((a - 1.0) * np.log(t)))


def log_binomial_pmf(k, n, theta):
    """``log[C(n, k) theta^k (1 - theta)^(n - k)]``; impossible outcomes give ``-inf``."""
    if int(k) != k or int(n) != n or not 0 <= k <= n:
        raise DomainError(f"need integers 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    log_c = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return float(log_c + xlogy(k, theta) + xlog1py(n - k, -theta))


def log_multinomial_pmf(k, theta):
    k = np.asarray(k)
    t = np.asarray(theta, dtype=float)
    if k.shape != t.shape or k.ndim != 1:
        raise DomainError("counts and probabilities must be vectors of equal length")
    if np.any(k < 0) or np.any(k != np.floor(k)):
        raise DomainError("counts must be non-negative integers")
    _check_simplex(t, strict_positive=False)
    n = k.sum()
    return float(gammaln(n + 1) - gammaln(k + 1).sum() + np.sum(xlogy(k, t)))


def dirichlet_multinomial_posterior(prior, k):
    """Conjugate update: a Dirichlet(alpha) prior and multinomial counts k give Dirichlet(alpha + k)."""
    k = np.asarray(k, dtype=float)
    if k.shape != prior.alpha.shape:
        raise DomainError("count vector length differs from the prior")
    if np.any(k < 0):
        raise DomainError("counts must be non-negative")
    return DirichletParams(prior.alpha + k)


def log_negbinom_pmf(k, mu, phi):
    """Negative-binomial log pmf with mean ``mu`` and variance ``mu + mu**2 / phi``.

    Broadcasts over array arguments.
    """
    k = np.asarray(k, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(~(mu > 0)) or np.any(~(phi > 0)):
        raise DomainError("mu and phi must be positive")
    if np.any(k < 0) or np.any(k != np.floor(k)):
        raise DomainError("k must be a non-negative integer")
    log_phi_mu = np.logaddexp(np.log(phi), np.log(mu))
    out = (
        gammaln(k + phi)
        - gammaln(phi)
        - gammaln(k + 1.0)
        + phi * (np.log(phi) - log_phi_mu)
        + k * (np.log(mu) - log_phi_mu)
    )
    return float(out) if out.ndim == 0 else out


def log_normal_pdf(x, loc, scale):
    z = (np.asarray(x, dtype=float) - loc) / scale
    return -_HALF_LOG_2PI - np.log(scale) - 0.5 * z * z


def log_halfnormal_pdf(x, scale):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("half-normal support is x >= 0")
    return _LOG2 - _HALF_LOG_2PI - np.log(scale) - 0.5 * (x / scale) ** 2


# -- hierarchical negative-binomial model ---------------------------------------


@dataclass(frozen=True)
class PriorConfig:
    mu_alpha_loc: float = 0.0
    mu_alpha_scale: float = 5.0
    sigma_alpha_scale: float = 1.0
    sigma_beta_scale: float = 1.0
    dispersion_scale: float = 5.0
    depth_scale: float = 1e-4

    def __post_init__(self):
        for name in ("mu_alpha_scale", "sigma_alpha_scale", "sigma_beta_scale",
                     "dispersion_scale", "depth_scale"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class CountData:
    """Counts ``counts[gene, sample]`` with per-sample depth and stage indicator."""

    counts: np.ndarray
    totals: np.ndarray
    stage: np.ndarray
    gene_ids: tuple
    sample_ids: tuple = ()

    def __post_init__(self):
        counts = np.array(self.counts, dtype=float)
        totals = np.array(self.totals, dtype=float)
        stage = np.array(self.stage, dtype=float)
        G = len(self.gene_ids)
        S = len(totals)
        counts = counts.reshape(G, S) if counts.size == 0 else counts
        if counts.shape != (G, S) or stage.shape != (S,):
            raise ValidationError(
                f"counts {counts.shape}, totals {totals.shape} and stage {stage.shape} disagree"
            )
        if np.any(counts < 0) or np.any(counts != np.floor(counts)):
            raise ValidationError("counts must be non-negative integers")
        if np.any(~(totals > 0)) or np.any(counts.sum(axis=0) > totals):
            raise ValidationError("per-sample totals must be positive and cover the counts")
        if not np.all(np.isin(stage, (0.0, 1.0))):
            raise ValidationError("stage indicator must be 0 or 1")
        sample_ids = tuple(self.sample_ids) or tuple(f"s{i + 1}" for i in range(S))
        if len(sample_ids) != S:
            raise ValidationError("sample_ids length differs from totals")
        for name, arr in (("counts", counts), ("totals", totals), ("stage", stage)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gene_ids", tuple(self.gene_ids))
        object.__setattr__(self, "sample_ids", sample_ids)

    @property
    def n_genes(self):
        return len(self.gene_ids)

    @property
    def n_samples(self):
        return len(self.totals)


@dataclass(frozen=True, eq=False)
class ModelParams:
    mu_alpha: float
    log_sigma_alpha: float
    alpha: np.ndarray
    beta: np.ndarray
    log_sigma_beta: float
    log_dispersion: float

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).ravel()
        b = np.array(self.beta, dtype=float).ravel()
        if a.shape != b.shape:
            raise DomainError("alpha and beta must have one entry per gene")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def n_genes(self):
        return len(self.alpha)

    def to_vector(self):
        """Unconstrained vector in posterior-table order."""
        return np.concatenate(
            [[self.mu_alpha, self.log_sigma_alpha], self.alpha,
             [self.log_sigma_beta], self.beta, [self.log_dispersion]]
        )

    @classmethod
    def from_vector(cls, vec, n_genes):
        v = np.asarray(vec, dtype=float)
        G = n_genes
        if v.shape != (2 * G + 4,):
            raise DomainError(f"parameter vector must have {2 * G + 4} entries, got {v.shape}")
        return cls(v[0], v[1], v[2 : 2 + G], v[3 + G : 3 + 2 * G], v[2 + G], v[3 + 2 * G])


def param_names(n_genes):
    """Constrained-scale names in table order (1-based gene indices)."""
    G = n_genes
    return (
        ["mu_alpha", "sigma_alpha"]
        + [f"alpha[{i}]" for i in range(1, G + 1)]
        + ["sigma_beta"]
        + [f"beta[{i}]" for i in range(1, G + 1)]
        + ["dispersion"]
    )


def log_scale_mask(n_genes):
    """True for coordinates sampled as logs (the three scale parameters)."""
    mask = np.zeros(2 * n_genes + 4, dtype=bool)
    mask[[1, 2 + n_genes, 3 + 2 * n_genes]] = True
    return mask


def _check_dims(p, d):
    if p.n_genes != d.n_genes:
        raise DomainError(f"parameters cover {p.n_genes} genes, data has {d.n_genes}")


def _linear_predictor(p, d, hyper):
    offset = np.log(d.totals * hyper.depth_scale)
    return offset[None, :] + p.alpha[:, None] + p.beta[:, None] * d.stage[None, :]


def _scales(p):
    try:
        sa, sb, phi = (math.exp(v) for v in (p.log_sigma_alpha, p.log_sigma_beta, p.log_dispersion))
    except OverflowError:
        raise NonFinite("scale parameter overflowed") from None
    if not (sa > 0 and sb > 0 and phi > 0 and math.isfinite(sa * sb * phi)):
        raise NonFinite("scale parameter under- or overflowed")
    return np.float64(sa), np.float64(sb), np.float64(phi)


def model_log_posterior(p, d, hyper=None):
    """Joint log posterior (up to a constant) on the unconstrained scale.

    Raises
    ------
    NonFinite
        The density is not finite at ``p``; samplers treat this as rejection.
    """
    hyper = hyper or PriorConfig()
    _check_dims(p, d)
    sa, sb, phi = _scales(p)
    lp = float(log_normal_pdf(p.mu_alpha, hyper.mu_alpha_loc, hyper.mu_alpha_scale))
    lp += float(log_halfnormal_pdf(sa, hyper.sigma_alpha_scale)) + p.log_sigma_alpha
    lp += float(log_halfnormal_pdf(sb, hyper.sigma_beta_scale)) + p.log_sigma_beta
    lp += float(log_halfnormal_pdf(phi, hyper.dispersion_scale)) + p.log_dispersion
    lp += float(np.sum(log_normal_pdf(p.alpha, p.mu_alpha, sa)))
    lp += float(np.sum(log_normal_pdf(p.beta, 0.0, sb)))
    if d.n_genes:
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            mu = np.exp(_linear_predictor(p, d, hyper))
            if not np.all((mu > 0) & np.isfinite(mu)):
                raise NonFinite("expected count under- or overflowed")
            lp += float(np.sum(log_negbinom_pmf(d.counts, mu, phi)))
    if not math.isfinite(lp):
        raise NonFinite(f"log posterior is {lp}")
    return lp


def model_gradient(p, d, hyper=None):
    """Analytic gradient of :func:`model_log_posterior` in ``ModelParams.to_vector`` order."""
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _gradient(p, d, hyper)


def _gradient(p, d, hyper):
    hyper = hyper or PriorConfig()
    _check_dims(p, d)
    G = p.n_genes
    sa, sb, phi = _scales(p)
    ra = p.alpha - p.mu_alpha
    g_mu = -(p.mu_alpha - hyper.mu_alpha_loc) / hyper.mu_alpha_scale**2 + ra.sum() / sa**2
    g_lsa = -G + np.sum(ra * ra) / sa**2 - (sa / hyper.sigma_alpha_scale) ** 2 + 1.0
    g_alpha = -ra / sa**2
    g_lsb = -G + np.sum(p.beta**2) / sb**2 - (sb / hyper.sigma_beta_scale) ** 2 + 1.0
    g_beta = -p.beta / sb**2
    g_lphi = -(phi / hyper.dispersion_scale) ** 2 + 1.0
    if G:
        mu = np.exp(_linear_predictor(p, d, hyper))
        if not np.all((mu > 0) & np.isfinite(mu)):
            raise NonFinite("expected count under- or overflowed")
        y = d.counts
        denom = phi + mu
        d_eta = phi * (y - mu) / denom
        g_alpha = g_alpha + d_eta.sum(axis=1)
        g_beta = g_beta + (d_eta * d.stage[None, :]).sum(axis=1)
        d_phi = digamma(y + phi) - digamma(phi) + np.log(phi / denom) + (mu - y) / denom
        g_lphi += phi * float(d_phi.sum())
    grad = np.concatenate([[g_mu, g_lsa], g_alpha, [g_lsb], g_beta, [g_lphi]])
    if not np.all(np.isfinite(grad)):
        raise NonFinite("gradient is not finite")
    return grad


class HierarchicalNBModel:
    """Vector-level interface to the hierarchical model for the sampler."""

    def __init__(self, data, hyper=None):
        self.data = data
        self.hyper = hyper or PriorConfig()
        self.dim = 2 * data.n_genes + 4
        self.names = param_names(data.n_genes)
        self._log_mask = log_scale_mask(data.n_genes)

    def log_prob(self, q):
        return model_log_posterior(ModelParams.from_vector(q, self.data.n_genes), self.data, self.hyper)

    def grad(self, q):
        return model_gradient(ModelParams.from_vector(q, self.data.n_genes), self.data, self.hyper)

    def constrain(self, q):
        q = np.asarray(q, dtype=float)
        out = q.copy()
        out[..., self._log_mask] = np.exp(q[..., self._log_mask])
        return out

    def initial_point(self):
        """Moment-based starting point: per-gene log rates and stage log ratios."""
        d, h = self.data, self.hyper
        G = d.n_genes
        rate = (d.counts + 0.5) / (d.totals * h.depth_scale)[None, :]
        s0, s1 = d.stage == 0, d.stage == 1
        if s0.any() and s1.any():
            a = np.log(rate[:, s0].mean(axis=1)) if G else np.empty(0)
            b = np.log(rate[:, s1].mean(axis=1)) - a if G else np.empty(0)
        else:
            a = np.log(rate.mean(axis=1)) if G else np.empty(0)
            b = np.zeros(G)
        mu_a = float(a.mean()) if G else 0.0
        sd_a = float(a.std()) if G > 1 else 0.5
        sd_b = float(np.sqrt(np.mean(b**2))) if G else 0.5
        return ModelParams(
            mu_a, math.log(max(sd_a, 0.05)), a, b, math.log(max(sd_b, 0.05)), math.log(10.0)
        ).to_vector()


class DirichletMultinomialModel:
    """Dirichlet prior with multinomial counts, sampled in additive log-ratio coordinates.

    ``theta = softmax([z, 0])``; the log-Jacobian of that map is
    ``sum(log theta)``, so the unconstrained target is
    ``sum((alpha + k) * log theta)`` up to a constant.
    """

    def __init__(self, prior, counts):
        self.prior = prior
        self.counts = np.asarray(counts, dtype=float)
        if self.counts.shape != prior.alpha.shape:
            raise DomainError("count vector length differs from the prior")
        self.conc = prior.alpha + self.counts
        self.dim = len(self.conc) - 1
        self.names = [f"theta[{i}]" for i in range(1, len(self.conc) + 1)]

    def _log_theta(self, z):
        full = np.append(np.asarray(z, dtype=float), 0.0)
        top = full.max()
        return full - (top + math.log(np.exp(full - top).sum()))

    def log_prob(self, z):
        return float(np.dot(self.conc, self._log_theta(z)))

    def grad(self, z):
        theta = np.exp(self._log_theta(z))
        return self.conc[:-1] - self.conc.sum() * theta[:-1]

    def constrain(self, z):
        z = np.asarray(z, dtype=float)
        full = np.concatenate([z, np.zeros(z.shape[:-1] + (1,))], axis=-1)
        return np.exp(full - logsumexp(full, axis=-1, keepdims=True))

    def initial_point(self):
        return np.zeros(self.dim)


# -- synthetic data ---------------------------------------------------------------


def simulate_counts(params, totals, stage, gene_ids, hyper=None, rng=None, sample_ids=()):
    """Draw a :class:`CountData` from the hierarchical model at fixed parameters."""
    hyper = hyper or PriorConfig()
    rng = rng if rng is not None else np.random.default_rng()
    totals = np.asarray(totals, dtype=float)
    stage = np.asarray(stage, dtype=float)
    eta = (
        np.log(totals * hyper.depth_scale)[None, :]
        + params.alpha[:, None]
        + params.beta[:, None] * stage[None, :]
    )
    mu = np.exp(eta)
    phi = math.exp(params.log_dispersion)
    counts = rng.negative_binomial(phi, phi / (phi + mu))
    return CountData(counts, totals, stage, tuple(gene_ids), tuple(sample_ids))


def fold_to_pseudocounts(m, genes, base=100.0, depth=1e6, stage3_indicator=1):
    """Convert fold changes to pseudo-counts ``round(base * |fold| ** sign(fold))``.

    This is a reconstruction used to feed fold-change fixtures into the count
    model: a fold change of +2 becomes ``2 * base`` and -2 becomes
    ``base / 2``. Missing entries become ``base`` (no change). Every sample
    gets the same depth; Stage3 samples get stage indicator 1.
    """
    from .ingest import Stage

    rows = []
    for g in genes:
        v = m.profile(g)
        ratio = np.where(np.isnan(v), 1.0, np.where(v > 0, np.abs(v), 1.0 / np.abs(v)))
        rows.append(np.round(base * ratio))
    counts = np.array(rows).reshape(len(genes), len(m.samples))
    stage = [stage3_indicator if s.stage is Stage.STAGE3 else 1 - stage3_indicator for s in m.samples]
    totals = np.full(len(m.samples), float(depth))
    return CountData(counts, totals, stage, tuple(genes), m.sample_ids)
