import shutil

import numpy as np
import pytest

from smabayes.fixtures import fixture_dir
from smabayes.ingest import (
    Condition,
    ExpressionMatrix,
    SampleMeta,
    Stage,
    Tissue,
    merge_regulation_files,
    parse_edge_list,
    parse_expression_table,
    parse_sample_metadata,
)
from smabayes.preprocess import network_from_edges


def make_samples(n, prefix="s"):
    stages = (Stage.STAGE2, Stage.STAGE3)
    tissues = (Tissue.WHOLE_LARVAE, Tissue.BRAIN, Tissue.MUSCLE)
    return tuple(
        SampleMeta(f"{prefix}{i}", stages[i % 2], tissues[i % 3], Condition.MUTANT) for i in range(n)
    )


def make_matrix(genes, values):
    """Matrix from a genes-by-samples nested list."""
    v = np.asarray(values, dtype=float)
    return ExpressionMatrix(tuple(genes), make_samples(v.shape[1]), v.T)


@pytest.fixture
def fixture_copy(tmp_path):
    dest = tmp_path / "fixture"
    shutil.copytree(fixture_dir(), dest)
    return dest


@pytest.fixture(scope="session")
def fixture_matrix():
    d = fixture_dir()
    with open(f"{d}/metadata.tsv", encoding="utf-8") as fh:
        meta = parse_sample_metadata(fh.read())
    with open(f"{d}/up.tsv", encoding="utf-8") as fh:
        up = parse_expression_table(fh.read(), metadata=meta)
    with open(f"{d}/down.tsv", encoding="utf-8") as fh:
        down = parse_expression_table(fh.read(), metadata=meta)
    return merge_regulation_files(up, down)


@pytest.fixture(scope="session")
def fixture_network():
    from smabayes.fixtures import NETWORK_GENES

    with open(f"{fixture_dir()}/edges.tsv", encoding="utf-8") as fh:
        edges = parse_edge_list(fh.read())
    return network_from_edges(edges, list(NETWORK_GENES))


# (criterion number, title, passed, detail) rows filled in by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}")
