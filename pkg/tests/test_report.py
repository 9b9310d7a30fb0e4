import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smabayes.diagnostics import PosteriorSummary, SummaryRow
from smabayes.errors import DomainError, EmptyTrace, InputError, WriteError
from smabayes.fgn import ConvergenceTrace, Marginals
from smabayes.fixtures import NETWORK_GENES
from smabayes.report import (
    RunManifest,
    emit_convergence_trace,
    emit_draws,
    emit_evaluation,
    emit_manifest,
    emit_marginals,
    emit_posterior_table,
    format_posterior_table,
    parse_convergence_trace,
    parse_draws,
    parse_evaluation,
    parse_marginals,
    parse_posterior_table,
)

TABLE_ROW = "mu_alpha,,-0.4192,-0.4193,0.0294\n"


def test_single_row_two_lines(tmp_path):
    s = PosteriorSummary((SummaryRow("", "mu_alpha", -0.4192, -0.4193, 0.0294, 1.001, 812.3),))
    n = emit_posterior_table(s, tmp_path / "p.csv")
    text = (tmp_path / "p.csv").read_text()
    assert text.splitlines() == [
        "gene,variable,median,mean,stddev,rhat,ess",
        ",mu_alpha,-0.4192,-0.4193,0.0294,1.0010,812.3000",
    ]
    assert n == len(text.encode())


def test_four_decimal_rounding():
    s = PosteriorSummary((SummaryRow("", "mu_alpha", -0.41921, -0.419349, 0.02941),))
    assert ",mu_alpha,-0.4192,-0.4193,0.0294,," in format_posterior_table(s)


def test_beta_row_uses_gene_index():
    i = NETWORK_GENES.index("cycle") + 1
    s = PosteriorSummary((SummaryRow("cycle", f"beta[{i}]", 0.1282, 0.1281, 0.05),))
    assert "cycle,beta[13],0.1282" in format_posterior_table(s)


def test_literal_table_row_round_trip():
    text = "variable,gene,median,mean,stddev\n" + TABLE_ROW
    assert format_posterior_table(parse_posterior_table(text), layout="table") == text


def test_row_order_follows_table_layout():
    names = ["beta[1]", "dispersion", "alpha[1]", "sigma_beta", "mu_alpha", "sigma_alpha"]
    s = PosteriorSummary(tuple(SummaryRow("", n, 0.0, 0.0, 0.0) for n in names))
    lines = format_posterior_table(s).splitlines()[1:]
    assert [l.split(",")[1] for l in lines] == [
        "mu_alpha", "sigma_alpha", "alpha[1]", "sigma_beta", "beta[1]", "dispersion"
    ]


four_dp = st.integers(-10**6, 10**6).map(lambda i: i / 10**4)


@given(st.lists(st.tuples(four_dp, four_dp, four_dp.map(abs), st.none() | four_dp.map(abs)), max_size=6))
def test_posterior_table_round_trip(vals):
    rows = tuple(
        SummaryRow(f"g{i}", f"alpha[{i + 1}]", a, b, c, d, d) for i, (a, b, c, d) in enumerate(vals)
    )
    s = PosteriorSummary(rows)
    text = format_posterior_table(s)
    assert format_posterior_table(parse_posterior_table(text)) == text


def test_bad_posterior_header():
    with pytest.raises(InputError):
        parse_posterior_table("a,b\n1,2\n")


def test_trace_seven_lines_and_round_trip():
    t = ConvergenceTrace(tuple((i, 0.5**i, 1 - 0.1**i) for i in range(1, 7)), True)
    buf = io.StringIO()
    emit_convergence_trace(t, buf)
    assert len(buf.getvalue().splitlines()) == 7
    assert parse_convergence_trace(buf.getvalue()) == t


def test_empty_trace():
    with pytest.raises(EmptyTrace):
        emit_convergence_trace(ConvergenceTrace(), io.StringIO())


def test_trace_nan_correlation_round_trips():
    t = ConvergenceTrace(((1, 0.0, float("nan")),), True)
    buf = io.StringIO()
    emit_convergence_trace(t, buf)
    back = parse_convergence_trace(buf.getvalue())
    assert np.isnan(back.records[0].pearson_r)


def test_evaluation_round_trip():
    buf = io.StringIO()
    emit_evaluation(0.85, 9.28e-12, 38, buf)
    assert parse_evaluation(buf.getvalue()) == (0.85, 9.28e-12, 38)
    buf = io.StringIO()
    emit_evaluation(1.0, 0.0, 4, buf)
    assert json.loads(buf.getvalue()) == {"r": 1.0, "p": 0.0, "n": 4}


def test_evaluation_bad_r():
    with pytest.raises(DomainError):
        emit_evaluation(1.5, 0.1, 10, io.StringIO())


@given(st.floats(-1, 1), st.floats(0, 1), st.integers(3, 10**6))
def test_evaluation_lossless(r, p, n):
    buf = io.StringIO()
    emit_evaluation(r, p, n, buf)
    assert parse_evaluation(buf.getvalue()) == (r, p, n)


def test_marginals_round_trip():
    m = Marginals(("Dm Derlin01", "cycle"), ([0.1, 0.9], [1 / 3, 2 / 3]))
    buf = io.StringIO()
    emit_marginals(m, buf)
    back = parse_marginals(buf.getvalue())
    assert back.names == m.names
    assert all(np.array_equal(a, b) for a, b in zip(back.probs, m.probs))


def test_draws_round_trip():
    d = np.random.default_rng(0).normal(size=(5, 3))
    buf = io.StringIO()
    emit_draws(d, ["a", "b", "c"], buf)
    names, back = parse_draws(buf.getvalue())
    assert names == ["a", "b", "c"] and np.array_equal(back, d)


def test_emission_deterministic(tmp_path):
    s = PosteriorSummary((SummaryRow("", "mu_alpha", 1 / 3, 2 / 3, 0.1, None, None),))
    emit_posterior_table(s, tmp_path / "a.csv")
    emit_posterior_table(s, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_write_error(tmp_path):
    s = PosteriorSummary((SummaryRow("", "x", 0.0, 0.0, 0.0),))
    with pytest.raises(WriteError):
        emit_posterior_table(s, tmp_path / "missing_dir" / "p.csv")


def test_manifest_round_trip(tmp_path):
    m = RunManifest(config={"run": {"seed": 3}}, inputs={"up.tsv": "ab"}, seed=3,
                    steps=["preprocess"], timestamps={"preprocess": "2026-01-01T00:00:00"})
    emit_manifest(m, tmp_path / "manifest.json")
    assert RunManifest.from_json((tmp_path / "manifest.json").read_text()) == m
