"""Split R-hat, effective sample size and posterior summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyChains, InsufficientDraws, ValidationError


def _as_chains(chains):
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValidationError("expected draws shaped (chains, draws)")
    return x


def _split(x):
    n = x.shape[1]
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half :]], axis=0)


def split_rhat(chains):
    """Split-chain potential scale reduction factor for one parameter.

    ``chains`` is shaped ``(n_chains, n_draws)``; each chain is cut in half
    so a single chain still yields two sequences.
    """
    x = _as_chains(chains)
    if x.shape[1] < 4:
        raise InsufficientDraws("split R-hat needs at least 4 draws per chain")
    s = _split(x)
    n = s.shape[1]
    W = s.var(axis=1, ddof=1).mean()
    if not W > 0:
        raise InsufficientDraws("within-chain variance is zero")
    B = n * s.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x):
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    c = x - x.mean(axis=-1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(c, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def effective_sample_size(chains):
    """Autocorrelation-based ESS over split chains, clipped to the draw count.

    Autocorrelations are combined across chains and truncated with Geyer's
    initial monotone positive-pair sequence.
    """
    x = _as_chains(chains)
    total = x.size
    if x.shape[1] < 4:
        raise InsufficientDraws("ESS needs at least 4 draws per chain")
    s = _split(x)
    m, n = s.shape
    acov = _autocov(s)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += s.mean(axis=1).var(ddof=1)
    if not var_plus > 0:
        raise InsufficientDraws("draws have zero variance")
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, forcing the pair sums to be non-increasing
    tau = -1.0
    prev_pair = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev_pair)
        tau += 2.0 * pair
        prev_pair = pair
        t += 2
    tau = max(tau, 1.0 / np.log10(max(total, 10)))
    return float(min(total, m * n / tau))


def mcse_mean(chains):
    x = _as_chains(chains)
    return float(x.std(ddof=1) / np.sqrt(effective_sample_size(x)))


class SummaryRow(NamedTuple):
    gene: str
    variable: str
    median: float
    mean: float
    stddev: float
    rhat: float | None = None
    ess: float | None = None


@dataclass(frozen=True)
class PosteriorSummary:
    rows: tuple

    def __post_init__(self):
        rows = tuple(SummaryRow(*r) for r in self.rows)
        for r in rows:
            if not r.stddev >= 0:
                raise ValidationError(f"stddev of {r.variable} must be non-negative")
        object.__setattr__(self, "rows", rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def row(self, variable):
        for r in self.rows:
            if r.variable == variable:
                return r
        raise KeyError(variable)

    @property
    def variables(self):
        return [r.variable for r in self.rows]


def pooled_draws(chains):
    """Stack chain results (or a ``(chains, draws, dim)`` array) into that array form."""
    if isinstance(chains, np.ndarray):
        arr = chains
    else:
        chains = list(chains)
        if not chains:
            raise EmptyChains("no chains to summarise")
        arr = np.stack([np.asarray(getattr(c, "draws", c), dtype=float) for c in chains])
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[1] == 0:
        raise EmptyChains("no post-warmup draws")
    return arr


def _safe(fn, x):
    try:
        return fn(x)
    except InsufficientDraws:
        return None


def summarize(chains, names, genes=None):
    """Median, mean, sample standard deviation, split R-hat and ESS per parameter.

    Rows follow ``names``. ``genes`` optionally gives the gene label of each
    row (empty for hyperparameters). R-hat and ESS are None where undefined.
    """
    arr = pooled_draws(chains)
    m, n, dim = arr.shape
    names = list(names)
    if len(names) != dim:
        raise ValidationError(f"{len(names)} names for {dim} parameters")
    genes = list(genes) if genes is not None else [""] * dim
    rows = []
    for j, name in enumerate(names):
        per_chain = arr[:, :, j]
        flat = per_chain.ravel()
        sd = float(flat.std(ddof=1)) if flat.size > 1 else 0.0
        rows.append(
            SummaryRow(
                genes[j],
                name,
                float(np.median(flat)),
                float(flat.mean()),
                sd,
                _safe(split_rhat, per_chain),
                _safe(effective_sample_size, per_chain),
            )
        )
    return PosteriorSummary(tuple(rows))


def credible_interval(chains, prob=0.9):
    """Central ``prob`` interval of every parameter, shape ``(dim, 2)``."""
    arr = pooled_draws(chains)
    flat = arr.reshape(-1, arr.shape[2])
    lo = (1.0 - prob) / 2.0
    return np.quantile(flat, [lo, 1.0 - lo], axis=0).T
