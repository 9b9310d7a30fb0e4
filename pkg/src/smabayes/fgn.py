"""Factor-graph network inference over discrete gene states.

Continuous expression is discretised with a one-dimensional Gaussian
mixture whose components are ordered by mean, so state 0 is the lowest
expression level. Per-gene evidence vectors (averaged responsibilities)
become unary factors; co-expression edges become pairwise factors that
favour equal states for positively correlated genes. Sum-product loopy
belief propagation then yields per-gene marginals.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DegenerateInput,
    DomainError,
    MissingEvidence,
    TooLarge,
    UndefinedCorrelation,
    ValidationError,
    VariableMismatch,
)
from .preprocess import correlation_pvalue, pearson_correlation, transform_profiles

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


class WeakSeparationWarning(UserWarning):
    """Adjacent mixture components overlap too much to give distinct states."""


# -- Gaussian mixture ---------------------------------------------------------


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 500
    tol: float = 1e-8
    seed: int = 0
    var_floor: float = 1e-6


@dataclass(frozen=True, eq=False)
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihoods: tuple = ()
    converged: bool = True

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "log_likelihoods", tuple(self.log_likelihoods))
        K = len(self.weights)
        if K < 2 or self.means.shape != (K,) or self.variances.shape != (K,):
            raise ValidationError("a mixture needs K >= 2 matching weights/means/variances")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValidationError("mixture weights must be non-negative and sum to 1")
        if np.any(self.variances <= 0) or np.any(np.diff(self.means) < 0):
            raise ValidationError("variances must be positive and means ascending")

    @property
    def K(self):
        return len(self.weights)

    def log_density(self, x):
        """Component log densities ``log N(x | mean_k, var_k)``, shape ``x.shape + (K,)``."""
        x = np.asarray(x, dtype=float)[..., None]
        with np.errstate(over="ignore"):
            return -0.5 * (_LOG_2PI + np.log(self.variances)) - 0.5 * (
                x - self.means
            ) ** 2 / self.variances

    def log_joint(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.weights) + self.log_density(x)

    def log_likelihood(self, x):
        return float(np.sum(logsumexp(self.log_joint(x), axis=-1)))

    def separation(self):
        """Standardised gaps between adjacent component means."""
        return np.diff(self.means) / np.sqrt(self.variances[1:] + self.variances[:-1])

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "converged": self.converged,
            "iterations": max(0, len(self.log_likelihoods) - 1),
        }


def _kmeanspp_seeds(x, K, rng):
    """k-means++ seeding over a quantile grid of the data."""
    pool = np.unique(np.quantile(x, np.linspace(0.0, 1.0, min(len(x), 101))))
    centres = [pool[rng.integers(len(pool))]]
    for _ in range(1, K):
        d2 = np.min((pool[:, None] - np.array(centres)[None, :]) ** 2, axis=1)
        if d2.sum() == 0:
            break
        centres.append(pool[rng.choice(len(pool), p=d2 / d2.sum())])
    centres = np.sort(np.array(centres))
    if len(centres) < K:
        # fewer distinct quantiles than components; fall back to evenly spaced quantiles
        centres = np.quantile(x, (np.arange(K) + 0.5) / K)
    return centres


def _m_step(x, resp, prev, var_floor):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = prev.means.copy()
    variances = prev.variances.copy()
    live = nk > 0
    means[live] = (resp[:, live] * x[:, None]).sum(axis=0) / nk[live]
    variances[live] = (resp[:, live] * (x[:, None] - means[live]) ** 2).sum(axis=0) / nk[live]
    variances = np.maximum(variances, var_floor)
    return weights, means, variances


def _sorted_gmm(weights, means, variances, lls=(), converged=True):
    order = np.argsort(means, kind="stable")
    w = weights[order]
    return Gmm(w / w.sum(), means[order], variances[order], tuple(lls), converged)


def fit_gmm(values, K, config=None):
    """Fit a K-component 1-d Gaussian mixture by expectation-maximisation.

    Iteration stops when the log-likelihood gain drops below ``config.tol``
    or after ``config.max_iter`` M-steps. The log-likelihood of every
    visited parameter state is kept in ``Gmm.log_likelihoods``.

    Raises
    ------
    DegenerateInput
        Fewer distinct values than components.
    """
    config = config or EmConfig()
    x = np.asarray(values, dtype=float).ravel()
    if K < 2:
        raise DomainError("K must be at least 2")
    if not np.all(np.isfinite(x)):
        raise DomainError("GMM input must be finite")
    if len(x) < K or len(np.unique(x)) < K:
        raise DegenerateInput(f"need at least {K} distinct values to fit {K} components")

    rng = np.random.default_rng(config.seed)
    means = _kmeanspp_seeds(x, K, rng)
    variances = np.full(K, max(float(np.var(x)), config.var_floor))
    weights = np.full(K, 1.0 / K)
    g = Gmm(weights, means, variances)
    lj = g.log_joint(x)
    norm = logsumexp(lj, axis=1)
    lls = [float(norm.sum())]
    converged = False
    for _ in range(config.max_iter):
        resp = np.exp(lj - norm[:, None])
        weights, means, variances = _m_step(x, resp, g, config.var_floor)
        order = np.argsort(means, kind="stable")
        g = Gmm(weights[order] / weights.sum(), means[order], variances[order])
        lj = g.log_joint(x)
        norm = logsumexp(lj, axis=1)
        lls.append(float(norm.sum()))
        if lls[-1] - lls[-2] < config.tol:
            converged = True
            break
    return Gmm(g.weights, g.means, g.variances, tuple(lls), converged)


def responsibilities(g, value):
    """Posterior component probabilities of ``value`` (scalar or array) under ``g``.

    Values so far in a tail that every density underflows go wholly to the
    component that dominates that tail: the widest one, ties broken by the
    mean nearest the tail.
    """
    lj = g.log_joint(value)
    norm = logsumexp(lj, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        out = np.exp(lj - norm)
    bad = ~np.isfinite(norm[..., 0])
    if np.any(bad):
        x = np.broadcast_to(np.asarray(value, dtype=float), bad.shape)
        for idx in zip(*np.nonzero(bad)) if bad.ndim else [()]:
            side = 1.0 if x[idx] > 0 else -1.0
            key = [(v, side * m) for v, m in zip(g.variances, g.means)]
            winner = max(range(g.K), key=lambda k: key[k])
            row = np.zeros(g.K)
            row[winner] = 1.0
            out[idx] = row
    return out


# -- factor graph -------------------------------------------------------------


class PairwiseFactor(NamedTuple):
    i: int
    j: int
    table: np.ndarray


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Variables with unary evidence factors and pairwise potential tables."""

    names: tuple
    cards: tuple
    unary: tuple
    pairwise: tuple = ()

    def __post_init__(self):
        names = tuple(self.names)
        cards = tuple(int(k) for k in self.cards)
        if len(set(names)) != len(names):
            raise ValidationError("variable names must be unique")
        if len(cards) != len(names) or len(self.unary) != len(names):
            raise ValidationError("names, cards and unary factors must align")
        unary = []
        for name, k, u in zip(names, cards, self.unary):
            arr = np.array(u, dtype=float)
            if k < 1 or arr.shape != (k,):
                raise ValidationError(f"unary factor for {name!r} must have {k} entries")
            _check_potential(arr, name)
            arr.flags.writeable = False
            unary.append(arr)
        pairwise = []
        for f in self.pairwise:
            i, j, t = int(f[0]), int(f[1]), np.array(f[2], dtype=float)
            if not (0 <= i < len(names) and 0 <= j < len(names)) or i == j:
                raise ValidationError(f"pairwise factor ({i}, {j}) references bad variables")
            if t.shape != (cards[i], cards[j]):
                raise ValidationError(f"pairwise table ({i}, {j}) has shape {t.shape}")
            _check_potential(t, f"({names[i]}, {names[j]})")
            t.flags.writeable = False
            pairwise.append(PairwiseFactor(i, j, t))
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "cards", cards)
        object.__setattr__(self, "unary", tuple(unary))
        object.__setattr__(self, "pairwise", tuple(pairwise))

    @property
    def n_variables(self):
        return len(self.names)

    def to_json(self):
        return json.dumps(
            {
                "variables": [{"name": n, "states": k} for n, k in zip(self.names, self.cards)],
                "unary": [u.tolist() for u in self.unary],
                "pairwise": [
                    {"i": f.i, "j": f.j, "table": f.table.tolist()} for f in self.pairwise
                ],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            tuple(v["name"] for v in d["variables"]),
            tuple(v["states"] for v in d["variables"]),
            tuple(d["unary"]),
            tuple((f["i"], f["j"], f["table"]) for f in d["pairwise"]),
        )


def _check_potential(arr, what):
    if not np.all(np.isfinite(arr)) or np.any(arr < 0) or not np.any(arr > 0):
        raise ValidationError(f"potential {what} must be finite, non-negative and not all zero")


def spin_values(K):
    """State index -> centred spin in [-1, 1]; ``{-1, +1}`` for two states."""
    return np.linspace(-1.0, 1.0, K)


def coupling_table(weight, K, coupling=1.0):
    s = spin_values(K)
    return np.exp(coupling * weight * np.outer(s, s))


def build_factor_graph(net, evidence, coupling=1.0):
    """One variable per network node, evidence as unary factor, one table per edge.

    The table for an edge with correlation ``r`` is
    ``exp(coupling * r * s(x_i) * s(x_j))`` over centred spins ``s``.
    """
    if not coupling > 0:
        raise DomainError("coupling must be positive")
    unary = []
    for g in net.nodes:
        if g not in evidence:
            raise MissingEvidence(g)
        unary.append(np.asarray(evidence[g], dtype=float))
    Ks = {len(u) for u in unary}
    if len(Ks) > 1:
        raise ValidationError("all evidence vectors must have the same length")
    K = Ks.pop() if Ks else 2
    idx = {g: i for i, g in enumerate(net.nodes)}
    pairwise = tuple(
        (idx[e.a], idx[e.b], coupling_table(e.weight, K, coupling)) for e in net.edges
    )
    return FactorGraph(tuple(net.nodes), (K,) * len(net.nodes), tuple(unary), pairwise)


# -- belief propagation ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Marginals:
    names: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        probs = []
        for p in self.probs:
            arr = np.array(p, dtype=float)
            arr.flags.writeable = False
            probs.append(arr)
        object.__setattr__(self, "probs", tuple(probs))

    def __getitem__(self, name):
        return self.probs[self.names.index(name)]

    def as_dict(self):
        return dict(zip(self.names, self.probs))

    def flat(self):
        return np.concatenate(self.probs) if self.probs else np.empty(0)


class TraceRecord(NamedTuple):
    iteration: int
    max_delta: float
    pearson_r: float


@dataclass(frozen=True)
class ConvergenceTrace:
    records: tuple = ()
    converged: bool = False

    def __post_init__(self):
        recs = tuple(TraceRecord(int(a), float(b), float(c)) for a, b, c in self.records)
        its = [r.iteration for r in recs]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValidationError("trace iterations must be strictly increasing")
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self):
        return self.records[-1].iteration if self.records else 0


def _normalise(v, what="message"):
    s = v.sum()
    if not s > 0 or not np.isfinite(s):
        raise ValidationError(f"{what} has no positive mass; evidence is inconsistent")
    return v / s


def _incidence(g):
    inc = [[] for _ in g.names]
    for e, f in enumerate(g.pairwise):
        inc[f.i].append((e, 0))  # message slot 0 flows into i
        inc[f.j].append((e, 1))  # message slot 1 flows into j
    return inc


def _beliefs(g, msgs, inc):
    out = []
    for v, u in enumerate(g.unary):
        b = u.copy()
        for e, side in inc[v]:
            b = b * msgs[e][side]
        out.append(_normalise(b, f"belief of {g.names[v]!r}"))
    return out


def _sweep(g, msgs, inc):
    """Undamped synchronous sum-product update of every factor-to-variable message."""
    new = []
    for e, f in enumerate(g.pairwise):
        # cavity distributions: variable belief without the message from this factor
        cav_i = g.unary[f.i].copy()
        for e2, side in inc[f.i]:
            if e2 != e:
                cav_i = cav_i * msgs[e2][side]
        cav_j = g.unary[f.j].copy()
        for e2, side in inc[f.j]:
            if e2 != e:
                cav_j = cav_j * msgs[e2][side]
        to_j = _normalise(f.table.T @ _normalise(cav_i))
        to_i = _normalise(f.table @ _normalise(cav_j))
        new.append((to_i, to_j))
    return new


def _trace_r(cur, prev):
    try:
        return pearson_correlation(cur, prev)
    except (UndefinedCorrelation, DomainError):
        return float("nan")


def _initial_messages(g):
    return [
        (np.full(g.cards[f.i], 1.0 / g.cards[f.i]), np.full(g.cards[f.j], 1.0 / g.cards[f.j]))
        for f in g.pairwise
    ]


def _lbp(g, damping, max_iter, tol):
    inc = _incidence(g)
    msgs = _initial_messages(g)
    beliefs = _beliefs(g, msgs, inc)
    records = []
    if not g.pairwise:
        # nothing to pass: one trivial sweep, already exact
        flat = np.concatenate(beliefs)
        return msgs, beliefs, [(1, 0.0, _trace_r(flat, flat))], True
    converged = False
    for it in range(1, max_iter + 1):
        computed = _sweep(g, msgs, inc)
        delta = 0.0
        damped = []
        for old, new in zip(msgs, computed):
            pair = []
            for o, n in zip(old, new):
                m = _normalise(damping * o + (1.0 - damping) * n)
                delta = max(delta, float(np.max(np.abs(m - o))))
                pair.append(m)
            damped.append(tuple(pair))
        msgs = damped
        prev = beliefs
        beliefs = _beliefs(g, msgs, inc)
        records.append((it, delta, _trace_r(np.concatenate(beliefs), np.concatenate(prev))))
        if delta < tol:
            converged = True
            break
    return msgs, beliefs, records, converged


def run_lbp(g, damping=0.5, max_iter=100, tol=1e-9):
    """Sum-product loopy belief propagation with a damped flooding schedule.

    Every sweep recomputes all factor-to-variable messages from the previous
    sweep's messages, normalises them and blends
    ``damping * old + (1 - damping) * new``. Iteration stops once the
    largest absolute message change falls below ``tol``; hitting
    ``max_iter`` first returns the current beliefs with
    ``trace.converged`` set to False.

    Returns
    -------
    marginals : Marginals
    trace : ConvergenceTrace
        Per sweep: max message change and the Pearson correlation between
        the flattened beliefs before and after the sweep.
    """
    if not 0.0 <= damping < 1.0:
        raise DomainError("damping must lie in [0, 1)")
    if max_iter < 1 or not tol > 0:
        raise DomainError("max_iter must be >= 1 and tol positive")
    _, beliefs, records, converged = _lbp(g, damping, max_iter, tol)
    if not converged:
        log.warning("LBP did not converge within %d sweeps", max_iter)
    return Marginals(g.names, beliefs), ConvergenceTrace(tuple(records), converged)


def fixed_point_residual(g, msgs):
    """Largest change a single undamped sweep would make to ``msgs``."""
    new = _sweep(g, msgs, _incidence(g))
    return max(
        (float(np.max(np.abs(a - b))) for pn, po in zip(new, msgs) for a, b in zip(pn, po)),
        default=0.0,
    )


def brute_force_marginals(g, max_states=2**20):
    """Exact marginals by summing the unnormalised joint over every configuration."""
    total = math.prod(g.cards)
    if total > max_states:
        raise TooLarge(f"{total} joint states exceed the limit of {max_states}")
    V = g.n_variables
    joint = np.ones(g.cards)
    for v, u in enumerate(g.unary):
        shape = [1] * V
        shape[v] = g.cards[v]
        joint = joint * (u / u.max()).reshape(shape)
    for f in g.pairwise:
        a, b = sorted((f.i, f.j))
        t = f.table if f.i < f.j else f.table.T
        shape = [1] * V
        shape[a], shape[b] = g.cards[a], g.cards[b]
        joint = joint * (t / t.max()).reshape(shape)
    Z = joint.sum()
    if not Z > 0:
        raise ValidationError("joint distribution has no positive mass")
    probs = []
    for v in range(V):
        axes = tuple(a for a in range(V) if a != v)
        probs.append(joint.sum(axis=axes) / Z)
    return Marginals(g.names, probs)


# -- evaluation -----------------------------------------------------------------


class Evaluation(NamedTuple):
    r: float
    p: float
    n: int


def evaluate_marginals(m, observed):
    """Correlate flattened marginals with observed state proportions.

    ``observed`` maps each variable name to its observed state proportions.
    Returns ``(r, p, n)`` where ``n`` is the number of flattened entries.
    """
    if set(observed) != set(m.names):
        raise VariableMismatch("observed proportions must cover exactly the marginal variables")
    pred, obs = [], []
    for name, p in zip(m.names, m.probs):
        o = np.asarray(observed[name], dtype=float)
        if o.shape != p.shape:
            raise VariableMismatch(f"state count differs for {name!r}")
        pred.append(p)
        obs.append(o)
    x, y = np.concatenate(pred), np.concatenate(obs)
    n = len(x)
    r = pearson_correlation(x, y)
    return Evaluation(r, correlation_pvalue(r, n), n)


# -- end-to-end discretise and infer ------------------------------------------


@dataclass(frozen=True)
class FgnConfig:
    coupling: float = 1.0
    damping: float = 0.5
    max_iter: int = 100
    tol: float = 1e-6
    transform: str = "log2"
    reestimate: str = "beliefs"
    outer_max_iter: int = 20
    outer_tol: float = 1e-6
    min_separation: float = 1.0
    em: EmConfig = field(default_factory=EmConfig)


class FgnResult(NamedTuple):
    marginals: Marginals
    trace: ConvergenceTrace
    gmm: Gmm


def gene_values(m, genes, transform="log2"):
    """Observed (transformed) values of each gene, missing entries dropped."""
    out = {}
    for g in genes:
        v = transform_profiles(m.profile(g), transform)
        out[g] = v[~np.isnan(v)]
    return out


def gene_evidence(gmm, values):
    """Per-gene evidence: responsibilities averaged over the gene's observations."""
    ev = {}
    for g, v in values.items():
        if len(v) == 0:
            log.warning("gene %s has no observed values; using flat evidence", g)
            ev[g] = np.full(gmm.K, 1.0 / gmm.K)
        else:
            ev[g] = responsibilities(gmm, v).mean(axis=0)
    return ev


def observed_state_proportions(gmm, values):
    """Fraction of each gene's observations whose most probable state is ``k``."""
    out = {}
    for g, v in values.items():
        counts = np.zeros(gmm.K)
        if len(v):
            states = np.argmax(responsibilities(gmm, v), axis=-1)
            counts = np.bincount(states, minlength=gmm.K).astype(float)
            counts /= counts.sum()
        out[g] = counts
    return out


def reestimate_from_beliefs(gmm, values, marginals, var_floor=1e-6):
    """Re-estimate mixture statistics with state weights taken from LBP beliefs.

    The new weights are the beliefs averaged over genes, each gene counted
    once per observation. Means and variances come from one M-step whose
    responsibilities use those weights. Observations are never reassigned
    by a single gene's belief, which keeps strongly polarised beliefs from
    emptying a component.
    """
    xs, bs = [], []
    for g, v in values.items():
        if len(v) == 0:
            continue
        xs.append(v)
        bs.append(np.broadcast_to(marginals[g], (len(v), gmm.K)))
    x = np.concatenate(xs)
    weights = np.concatenate(bs).mean(axis=0)
    weights = np.maximum(weights, 1e-12)
    weights /= weights.sum()
    with np.errstate(divide="ignore"):
        lj = np.log(weights) + gmm.log_density(x)
    q = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    _, mu, var = _m_step(x, q, gmm, var_floor)
    return _sorted_gmm(weights, mu, var, (gmm.log_likelihood(x),), gmm.converged)


def discretize_and_infer(m, net, K=2, config=None):
    """Discretise expression with a pooled GMM, then run LBP on the co-expression graph.

    The outer loop alternates LBP with mixture re-estimation (from LBP
    beliefs, or from the raw data when ``config.reestimate == "raw"``)
    until the largest belief change drops below ``config.outer_tol``. The
    returned mixture is the one that produced the final evidence.
    """
    config = config or FgnConfig()
    if config.reestimate not in ("beliefs", "raw"):
        raise DomainError("reestimate must be 'beliefs' or 'raw'")
    missing = [g for g in net.nodes if g not in set(m.genes)]
    if missing:
        raise ValidationError(f"network genes absent from matrix: {missing[:5]}")
    values = gene_values(m, net.nodes, config.transform)
    pooled = np.concatenate([v for v in values.values()]) if values else np.empty(0)
    gmm = fit_gmm(pooled, K, config.em)
    sep = gmm.separation()
    if np.any(sep < config.min_separation):
        warnings.warn(
            f"weak evidence separation between adjacent states (min {sep.min():.3f})",
            WeakSeparationWarning,
            stacklevel=2,
        )
    prev = None
    for outer in range(1, config.outer_max_iter + 1):
        ev = gene_evidence(gmm, values)
        graph = build_factor_graph(net, ev, config.coupling)
        marg, trace = run_lbp(graph, config.damping, config.max_iter, config.tol)
        if prev is not None:
            change = float(np.max(np.abs(marg.flat() - prev.flat())))
            log.debug("outer iteration %d: belief change %.3g", outer, change)
            if change < config.outer_tol:
                break
        prev = marg
        if outer == config.outer_max_iter:
            break
        if config.reestimate == "raw":
            gmm = fit_gmm(pooled, K, config.em)
        else:
            gmm = reestimate_from_beliefs(gmm, values, marg.as_dict(), config.em.var_floor)
    return FgnResult(marg, trace, gmm)
