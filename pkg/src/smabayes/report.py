"""Writers and readers for every result file.

Human-facing tables (the posterior table) use 4 decimal places. Machine
files (traces, marginals, draws, JSON) use the shortest representation that
round-trips a float exactly. Nothing written here embeds a timestamp; those
live only in the run manifest.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .diagnostics import PosteriorSummary, SummaryRow
from .errors import DomainError, EmptyTrace, InputError, WriteError
from .fgn import ConvergenceTrace, Evaluation, Marginals

POSTERIOR_HEADER = ("gene", "variable", "median", "mean", "stddev", "rhat", "ess")
TABLE_HEADER = ("variable", "gene", "median", "mean", "stddev")
TRACE_HEADER = ("iteration", "max_delta", "pearson_r")
MARGINALS_HEADER = ("gene", "state", "probability")
ENRICHMENT_HEADER = ("pathway_id", "description", "overlap", "size", "p_value", "adjusted_p")


def _write(text, dest):
    """Write ``text`` to a path or text stream; return the UTF-8 byte count."""
    data = text.encode("utf-8")
    try:
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "wb") as fh:
                fh.write(data)
        else:
            dest.write(text)
    except OSError as exc:
        raise WriteError(f"cannot write {dest}: {exc}") from exc
    return len(data)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(text, expected):
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows or tuple(rows[0]) != tuple(expected):
        raise InputError(f"expected header {','.join(expected)}")
    return rows[1:]


def _fmt4(x):
    return "" if x is None else f"{x:.4f}"


def _num(x):
    return repr(float(x))


def _opt_float(s):
    return None if s == "" else float(s)


# -- posterior table ----------------------------------------------------------

_GROUP = re.compile(r"^(alpha|beta)\[\d+\]$")


def _table_rank(variable):
    m = _GROUP.match(variable)
    if m:
        return 2 if m.group(1) == "alpha" else 4
    return {"mu_alpha": 0, "sigma_alpha": 1, "sigma_beta": 3}.get(variable, 5)


def format_posterior_table(summary, layout="full"):
    """Posterior table text.

    ``layout="full"`` writes ``gene,variable,median,mean,stddev,rhat,ess``.
    ``layout="table"`` writes the five-column table layout,
    ``variable,gene,median,mean,stddev``. Rows are ordered hyperparameters
    of the alpha block, alpha rows, sigma_beta, beta rows, then the rest.
    """
    rows = sorted(summary.rows, key=lambda r: _table_rank(r.variable))
    if layout == "full":
        body = [
            [r.gene, r.variable, _fmt4(r.median), _fmt4(r.mean), _fmt4(r.stddev),
             _fmt4(r.rhat), _fmt4(r.ess)]
            for r in rows
        ]
        return _csv_text(POSTERIOR_HEADER, body)
    if layout == "table":
        body = [
            [r.variable, r.gene, _fmt4(r.median), _fmt4(r.mean), _fmt4(r.stddev)] for r in rows
        ]
        return _csv_text(TABLE_HEADER, body)
    raise ValueError(f"unknown layout {layout!r}")


def emit_posterior_table(summary, dest, layout="full"):
    return _write(format_posterior_table(summary, layout), dest)


def parse_posterior_table(text):
    """Read either posterior-table layout back into a :class:`PosteriorSummary`."""
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise InputError("empty posterior table")
    header = tuple(rows[0])
    out = []
    try:
        if header == POSTERIOR_HEADER:
            for g, v, med, mean, sd, rhat, ess in rows[1:]:
                out.append(SummaryRow(g, v, float(med), float(mean), float(sd),
                                      _opt_float(rhat), _opt_float(ess)))
        elif header == TABLE_HEADER:
            for v, g, med, mean, sd in rows[1:]:
                out.append(SummaryRow(g, v, float(med), float(mean), float(sd)))
        else:
            raise InputError(f"unrecognised posterior table header {','.join(header)}")
    except ValueError as exc:
        raise InputError(f"malformed posterior table row: {exc}") from exc
    return PosteriorSummary(tuple(out))


# -- convergence trace -----------------------------------------------------------


def emit_convergence_trace(trace, dest):
    if not trace.records:
        raise EmptyTrace("convergence trace has no iterations")
    body = [[r.iteration, _num(r.max_delta), _num(r.pearson_r)] for r in trace.records]
    return _write(_csv_text(TRACE_HEADER, body), dest)


def parse_convergence_trace(text, converged=True):
    rows = _read_csv(text, TRACE_HEADER)
    return ConvergenceTrace(tuple((int(i), float(d), float(r)) for i, d, r in rows), converged)


# -- marginals ------------------------------------------------------------------


def emit_marginals(marginals, dest):
    body = [
        [name, k, _num(p)]
        for name, probs in zip(marginals.names, marginals.probs)
        for k, p in enumerate(probs)
    ]
    return _write(_csv_text(MARGINALS_HEADER, body), dest)


def parse_marginals(text):
    rows = _read_csv(text, MARGINALS_HEADER)
    out = {}
    for name, k, p in rows:
        out.setdefault(name, []).append((int(k), float(p)))
    names = tuple(out)
    probs = tuple(np.array([p for _, p in sorted(v)]) for v in out.values())
    return Marginals(names, probs)


# -- evaluation ------------------------------------------------------------------


def emit_evaluation(r, p, n, dest):
    """JSON ``{"r": r, "p": p, "n": n}`` at full double precision."""
    if not abs(r) <= 1.0:
        raise DomainError(f"|r| must be <= 1, got {r}")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    text = json.dumps({"r": float(r), "p": float(p), "n": int(n)}) + "\n"
    return _write(text, dest)


def parse_evaluation(text):
    d = json.loads(text)
    return Evaluation(float(d["r"]), float(d["p"]), int(d["n"]))


# -- enrichment, heatmap, dendrogram ------------------------------------------------


def emit_enrichment(results, dest):
    body = [
        [e.pathway_id, e.description, e.overlap_count, e.pathway_size, _num(e.p_value),
         _num(e.adjusted_p)]
        for e in results
    ]
    return _write(_csv_text(ENRICHMENT_HEADER, body), dest)


def parse_enrichment(text):
    rows = _read_csv(text, ENRICHMENT_HEADER)
    return [(pid, desc, int(k), int(size), float(p), float(adj)) for pid, desc, k, size, p, adj in rows]


def emit_heatmap(m, row_order, col_order, dest):
    """Signed fold changes with rows and columns in clustered order."""
    cols = [m.sample_ids.index(s) for s in col_order]
    body = []
    for g in row_order:
        prof = m.profile(g)
        body.append([g, *("NA" if math.isnan(prof[c]) else _num(prof[c]) for c in cols)])
    return _write(_csv_text(("gene", *col_order), body), dest)


def emit_dendrogram(dendrogram, dest):
    return _write(dendrogram.to_newick(), dest)


# -- draws -----------------------------------------------------------------------


def emit_draws(draws, names, dest):
    draws = np.asarray(draws, dtype=float)
    body = [[_num(x) for x in row] for row in draws]
    return _write(_csv_text(tuple(names), body), dest)


def parse_draws(text):
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise InputError("empty draws file")
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


# -- manifest -------------------------------------------------------------------


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    tool_version: str = __version__
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seed: int = 0
    steps: list = field(default_factory=list)
    timestamps: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def emit_manifest(manifest, dest):
    return _write(manifest.to_json(), dest)
