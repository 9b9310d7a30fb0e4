"""Hamiltonian Monte Carlo with a fixed leapfrog count and dual-averaging step size."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BadInit, Divergent, DomainError, NonFinite

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.1
    num_leapfrog: int = 16
    warmup: int = 1000
    samples: int = 1000
    chains: int = 4
    seed: int = 0
    target_accept: float = 0.8
    adapt: bool = True
    adapt_mass: bool = False
    max_delta_h: float = 1000.0
    init_radius: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if not self.step_size > 0 or self.num_leapfrog < 1:
            raise DomainError("step_size must be positive and num_leapfrog >= 1")
        if self.samples < 1 or self.warmup < 0 or self.chains < 1:
            raise DomainError("need samples >= 1, warmup >= 0 and chains >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise DomainError("target_accept must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class ChainResult:
    draws: np.ndarray
    unconstrained: np.ndarray
    accept_rate: float
    divergence_count: int
    seed_used: int
    step_size: float
    inv_mass: np.ndarray


def leapfrog(q, p, grad_fn, eps, L, inv_mass=None):
    """``L`` leapfrog steps for ``H(q, p) = -log_post(q) + p . (inv_mass * p) / 2``.

    ``grad_fn`` returns the gradient of the log posterior.

    Raises
    ------
    Divergent
        The gradient or state became non-finite.
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    q, p, _ = _leapfrog(q, p, _checked(grad_fn)(q), grad_fn, eps, L, inv_mass)
    return q, p


def _checked(grad_fn):
    def g(q):
        try:
            out = np.asarray(grad_fn(q), dtype=float)
        except NonFinite as exc:
            raise Divergent(str(exc)) from exc
        if not np.all(np.isfinite(out)):
            raise Divergent("non-finite gradient")
        return out

    return g


def _leapfrog(q, p, grad_q, grad_fn, eps, L, inv_mass):
    grad_fn = _checked(grad_fn)
    m = 1.0 if inv_mass is None else inv_mass
    g = grad_q
    p = p + 0.5 * eps * g
    for step in range(L):
        q = q + eps * m * p
        g = grad_fn(q)
        if step < L - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise Divergent("non-finite state after leapfrog")
    return q, p, g


class _DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.restart(step_size)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept_prob):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def mass_windows(warmup):
    """``(start, end)`` iteration ranges of the windows that re-estimate the diagonal mass.

    Fast initial (15%) and terminal (10%) buffers bracket doubling windows.
    """
    if warmup < 20:
        return []
    init = max(1, int(0.15 * warmup))
    term = max(1, int(0.1 * warmup))
    ends, start, size = [], init, max(1, (warmup - init - term) // 7)
    while start < warmup - term:
        end = start + size
        if end + 2 * size > warmup - term:
            end = warmup - term
        ends.append((start, end))
        start, size = end, size * 2
    return ends


def _run_chain(log_prob, grad_fn, init, cfg, chain, transform):
    seed = cfg.seed + chain
    rng = np.random.default_rng(seed)
    q = np.array(init, dtype=float)
    if cfg.init_radius > 0:
        q = q + rng.uniform(-cfg.init_radius, cfg.init_radius, size=q.shape)
    dim = q.size
    try:
        lp = float(log_prob(q))
        g = np.asarray(grad_fn(q), dtype=float)
    except NonFinite as exc:
        raise BadInit(f"chain {chain}: log posterior not finite at init ({exc})") from exc
    if not (math.isfinite(lp) and np.all(np.isfinite(g))):
        raise BadInit(f"chain {chain}: log posterior not finite at init")

    inv_mass = np.ones(dim)
    eps = cfg.step_size
    da = _DualAveraging(eps, cfg.target_accept)
    windows = mass_windows(cfg.warmup) if cfg.adapt_mass else []
    window_draws = []
    total = cfg.warmup + cfg.samples
    raw = np.empty((cfg.samples, dim))
    acc_sum = 0.0
    divergences = 0

    for it in range(total):
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = -lp + 0.5 * np.dot(p0 * inv_mass, p0)
        divergent = False
        try:
            q1, p1, g1 = _leapfrog(q, p0, g, grad_fn, eps, cfg.num_leapfrog, inv_mass)
            lp1 = float(log_prob(q1))
            dh = -lp1 + 0.5 * np.dot(p1 * inv_mass, p1) - h0
            if not math.isfinite(dh) or abs(dh) > cfg.max_delta_h:
                divergent = True
        except (Divergent, NonFinite):
            divergent = True
        if divergent:
            accept_prob = 0.0
        else:
            accept_prob = 1.0 if dh <= 0 else math.exp(-dh)
        u = rng.uniform()
        if u < accept_prob:
            q, lp, g = q1, lp1, g1

        if it < cfg.warmup:
            if cfg.adapt:
                eps = da.update(accept_prob)
            if windows and windows[0][0] <= it:
                window_draws.append(q.copy())
                if it + 1 == windows[0][1]:
                    windows.pop(0)
                    w = np.array(window_draws)
                    n = len(w)
                    if n > 2:
                        var = w.var(axis=0, ddof=1)
                        inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    window_draws = []
                    if cfg.adapt:
                        da.restart(eps)
            if it == cfg.warmup - 1 and cfg.adapt:
                eps = da.final
        else:
            raw[it - cfg.warmup] = q
            acc_sum += accept_prob
            if divergent:
                divergences += 1

    draws = transform(raw) if transform is not None else raw.copy()
    return ChainResult(
        draws=np.asarray(draws, dtype=float),
        unconstrained=raw,
        accept_rate=acc_sum / cfg.samples,
        divergence_count=divergences,
        seed_used=seed,
        step_size=eps,
        inv_mass=inv_mass,
    )


def hmc_sample(log_prob, grad_fn, init, cfg=None, transform=None):
    """Run ``cfg.chains`` independent HMC chains.

    Parameters
    ----------
    log_prob, grad_fn : callable
        Log posterior and its gradient on the unconstrained scale. Either
        may raise :class:`NonFinite`; the proposal is then rejected.
    init : array_like
        Starting point, shared by all chains (shape ``(dim,)``) or per chain
        (shape ``(chains, dim)``).
    cfg : HmcConfig
    transform : callable, optional
        Maps unconstrained draws (``(n, dim)``) to the reported scale.

    Returns
    -------
    list of ChainResult
        One per chain; chain ``c`` uses RNG seed ``cfg.seed + c``.
    """
    cfg = cfg or HmcConfig()
    init = np.asarray(init, dtype=float)
    inits = np.broadcast_to(init, (cfg.chains, init.shape[-1])) if init.ndim == 1 else init
    if inits.shape[0] != cfg.chains:
        raise DomainError(f"got {inits.shape[0]} initial points for {cfg.chains} chains")

    def job(c):
        return _run_chain(log_prob, grad_fn, inits[c], cfg, c, transform)

    if cfg.threads > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(job, range(cfg.chains)))
    else:
        results = [job(c) for c in range(cfg.chains)]
    for c, r in enumerate(results):
        log.info(
            "chain %d: accept %.3f, step %.4g, %d divergences",
            c, r.accept_rate, r.step_size, r.divergence_count,
        )
    return results


def sample_model(model, cfg=None, init=None):
    """Sample a model object exposing ``log_prob``, ``grad``, ``constrain`` and ``initial_point``."""
    init = model.initial_point() if init is None else init
    return hmc_sample(model.log_prob, model.grad, init, cfg, transform=model.constrain)
