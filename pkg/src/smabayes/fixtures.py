"""Deterministic synthetic fixture: 19 network genes plus background genes.

The generator writes every input the pipeline reads (up/down fold-change
tables, sample metadata, a GMT file, an edge list, a RefSeq map, a count
table with its sidecar and an INI config). A copy generated with the
default seed ships in ``smabayes/data/fixture``; :func:`fixture_dir`
returns its location.

Fold changes follow three co-regulated modules. Each module is "on"
(log2 fold near 1.3) in a fixed subset of samples and "off" (log2 fold
near 0) elsewhere. The subsets differ in size (10, 2 and 6 of 12
samples), so the 19 module genes are significant at a 1.5 cutoff
and correlate strongly within their module. Four background genes carry
one spike each, giving 23 significant genes in all. Counts are drawn
from the negative-binomial hierarchical model at fixed parameters.
"""

from __future__ import annotations

import json
import os
from importlib import resources

import numpy as np

from .bayes import ModelParams, PriorConfig, simulate_counts
from .ingest import (
    Condition,
    Edge,
    EdgeList,
    ExpressionMatrix,
    Pathway,
    PathwayDb,
    SampleMeta,
    Stage,
    Tissue,
    format_count_data,
    format_edge_list,
    format_gmt,
)
from .preprocess import complete_pairs_correlation, signed_log2

DEFAULT_SEED = 20211

NETWORK_GENES = (
    "CG13060/CG13041", "CG17544", "CG18528", "CG32732", "CG5853", "CG5902",
    "CG6724", "CG7009", "CG8128", "CG9410", "CG9422", "CG9505", "cycle",
    "Cyp6a21", "Dm Derlin01", "fascin", "roughex", "Rs1", "wurst",
)

MODULES = (NETWORK_GENES[:7], NETWORK_GENES[7:13], NETWORK_GENES[13:])
BRIDGES = (("CG6724", "CG7009", 0.35), ("cycle", "fascin", 0.4))

BACKGROUND_GENES = tuple(f"CG{10001 + i}" for i in range(25))
SPIKED = BACKGROUND_GENES[:4]
UNMAPPED = BACKGROUND_GENES[-2:]

# alpha and beta used to draw the count fixture (one per network gene)
TRUE_ALPHA = (
    -0.4635, -0.4600, -0.4881, -0.3709, -0.2919, -0.3616, -0.4797, -0.3799,
    -0.4336, -0.2373, -0.4143, -0.3695, -0.5639, -0.2255, -0.4493, -0.5989,
    -0.4771, -0.4666, -0.4642,
)
TRUE_BETA = (
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.45,
    0.0, 0.0, 0.4, -0.4, 0.0, 0.0,
)
TRUE_DISPERSION = 20.0

ON_LEVEL = 1.3
ON_NOISE = 0.15
OFF_NOISE = 0.2

FILES = (
    "up.tsv", "down.tsv", "metadata.tsv", "pathways.gmt", "edges.tsv",
    "refseq.tsv", "counts.csv", "count_metadata.csv", "truth.json", "pipeline.ini",
)


def fixture_samples():
    """12 Mutant samples: 2 stages x 3 tissues x 2 replicates."""
    short = {Tissue.WHOLE_LARVAE: "WL", Tissue.BRAIN: "BR", Tissue.MUSCLE: "MU"}
    out = []
    for stage, tag in ((Stage.STAGE2, "S2"), (Stage.STAGE3, "S3")):
        for tissue in (Tissue.WHOLE_LARVAE, Tissue.BRAIN, Tissue.MUSCLE):
            for rep in (1, 2):
                out.append(SampleMeta(f"{tag}_{short[tissue]}_{rep}", stage, tissue, Condition.MUTANT))
    return tuple(out)


def module_patterns(samples):
    """On/off pattern per module.

    Module 1 is on everywhere except Stage2 whole larvae, module 2 only in
    Stage3 muscle, module 3 in all Stage3 samples.
    """
    s2_wl = np.array([s.stage is Stage.STAGE2 and s.tissue is Tissue.WHOLE_LARVAE for s in samples])
    s3 = np.array([s.stage is Stage.STAGE3 for s in samples])
    mu = np.array([s.tissue is Tissue.MUSCLE for s in samples])
    return ~s2_wl, s3 & mu, s3


def _to_fold(l):
    return np.sign(l) * np.exp2(np.abs(l))


def generate_log2(seed=DEFAULT_SEED):
    """Signed log2 fold changes ``(samples, genes)`` for network then background genes."""
    rng = np.random.default_rng(seed)
    samples = fixture_samples()
    patterns = module_patterns(samples)
    S = len(samples)
    cols = []
    for pattern, genes in zip(patterns, MODULES):
        for _ in genes:
            on = ON_LEVEL + ON_NOISE * rng.standard_normal(S)
            off = OFF_NOISE * rng.standard_normal(S)
            cols.append(np.where(pattern, on, off))
    for g in BACKGROUND_GENES:
        col = np.clip(0.15 * rng.standard_normal(S), -0.5, 0.5)
        if g in SPIKED:
            col[rng.integers(S)] = rng.choice([-1.0, 1.0]) * (1.0 + 0.2 * rng.uniform())
        cols.append(col)
    log2 = np.column_stack(cols)
    # a few missing cells, one of them in a network gene
    log2[4, NETWORK_GENES.index("CG9422")] = np.nan
    log2[7, len(NETWORK_GENES) + 6] = np.nan
    log2[2, len(NETWORK_GENES) + 11] = np.nan
    # exact zeros cannot be expressed as fold changes
    log2[log2 == 0.0] = 1e-6
    return samples, log2


def generate_matrix(seed=DEFAULT_SEED):
    samples, log2 = generate_log2(seed)
    vals = np.round(_to_fold(log2), 4)
    return ExpressionMatrix(NETWORK_GENES + BACKGROUND_GENES, samples, vals)


def split_regulation(m):
    """Split a signed matrix into (up, down) tables with positive entries in both."""
    v = m.values
    up = np.where(v > 0, v, np.nan)
    down = np.where(v < 0, -v, np.nan)
    up_cols = [j for j in range(len(m.genes)) if np.any(v[:, j] > 0)]
    down_cols = [j for j in range(len(m.genes)) if np.any(v[:, j] < 0)]
    return (
        ExpressionMatrix(tuple(m.genes[j] for j in up_cols), m.samples, up[:, up_cols]),
        ExpressionMatrix(tuple(m.genes[j] for j in down_cols), m.samples, down[:, down_cols]),
    )


def fixture_edges(m):
    """Within-module edges weighted by log2-profile correlation, plus two bridges."""
    edges = []
    for genes in MODULES:
        for i, a in enumerate(genes):
            for b in genes[i + 1 :]:
                r = complete_pairs_correlation(signed_log2(m.profile(a)), signed_log2(m.profile(b)))
                edges.append(Edge(a, b, round(r, 4)))
    edges.extend(Edge(a, b, w) for a, b, w in BRIDGES)
    return EdgeList(tuple(edges))


def fixture_pathways():
    bg = BACKGROUND_GENES
    return PathwayDb({
        "PW0001": Pathway("Xenobiotic metabolism", frozenset({"Cyp6a21", "CG18528", "CG6724", bg[0], bg[5]})),
        "PW0002": Pathway("Cell cycle regulation", frozenset({"cycle", "roughex", "Rs1", "CG9422", bg[6]})),
        "PW0003": Pathway("Actin cytoskeleton", frozenset({"fascin", "wurst", bg[7], bg[8]})),
        "PW0004": Pathway("ER-associated degradation", frozenset({"Dm Derlin01", "CG5902", bg[9]})),
        "PW0005": Pathway("Circadian rhythm", frozenset({"cycle", "CG7009", "CG8128", "CG9410", "CG9505"})),
        "PW0006": Pathway("Lipid metabolism", frozenset({bg[10], bg[11], bg[12], bg[13], "CG5853"})),
        "PW0007": Pathway("Proteolysis", frozenset({bg[14], bg[15], bg[16], "CG17544", "CG32732"})),
        "PW0008": Pathway("Ion transport", frozenset({bg[17], bg[18], bg[19], bg[20]})),
    })


def fixture_refseq(genes):
    lines = ["symbol\trefseq_id"]
    for i, g in enumerate(genes):
        if g in UNMAPPED:
            continue
        if i % 5 == 0:
            lines.append(f"{g}\tXM_{300000 + i:06d}.1")
        if i % 7 == 3:
            lines.append(f"{g}\tNR_{500000 + i:06d}.1")
            continue
        lines.append(f"{g}\tNM_{100000 + i:06d}.2")
    return "\n".join(lines) + "\n"


def fixture_counts(samples, seed=DEFAULT_SEED):
    rng = np.random.default_rng(seed + 1)
    params = ModelParams(
        mu_alpha=float(np.mean(TRUE_ALPHA)),
        log_sigma_alpha=float(np.log(np.std(TRUE_ALPHA))),
        alpha=np.array(TRUE_ALPHA),
        beta=np.array(TRUE_BETA),
        log_sigma_beta=float(np.log(0.2)),
        log_dispersion=float(np.log(TRUE_DISPERSION)),
    )
    totals = np.round(1e6 * rng.uniform(0.8, 1.2, size=len(samples)))
    stage = [1.0 if s.stage is Stage.STAGE3 else 0.0 for s in samples]
    return simulate_counts(
        params, totals, stage, NETWORK_GENES, PriorConfig(), rng, tuple(s.sample_id for s in samples)
    )


CONFIG_TEXT = """\
[inputs]
up = up.tsv
down = down.tsv
metadata = metadata.tsv
gmt = pathways.gmt
refseq = refseq.tsv
edges = edges.tsv
counts = counts.csv
count_metadata = count_metadata.csv

[preprocess]
cutoff = 1.5
transform = log2

[fgn]
states = 2

[hmc]
warmup = 1000
samples = 1000
chains = 4
adapt_mass = true

[run]
seed = 1
out_dir = out
"""


def _table(m):
    from .ingest import format_expression_table

    text = format_expression_table(m)
    # metadata comes from the sidecar file, so drop the inline rows
    return "".join(line for line in text.splitlines(True) if not line.startswith("#"))


def fixture_files(seed=DEFAULT_SEED):
    """Return ``{filename: text}`` for the whole fixture."""
    m = generate_matrix(seed)
    up, down = split_regulation(m)
    meta = "sample_id\tstage\ttissue\tcondition\n" + "".join(
        f"{s.sample_id}\t{s.stage.value}\t{s.tissue.value}\t{s.condition.value}\n" for s in m.samples
    )
    counts_csv, count_meta_csv = format_count_data(fixture_counts(m.samples, seed))
    truth = {
        "seed": seed,
        "network_genes": list(NETWORK_GENES),
        "alpha": list(TRUE_ALPHA),
        "beta": list(TRUE_BETA),
        "dispersion": TRUE_DISPERSION,
        "spiked_background": list(SPIKED),
        "unmapped": list(UNMAPPED),
    }
    return {
        "up.tsv": _table(up),
        "down.tsv": _table(down),
        "metadata.tsv": meta,
        "pathways.gmt": format_gmt(fixture_pathways()),
        "edges.tsv": format_edge_list(fixture_edges(m)),
        "refseq.tsv": fixture_refseq(m.genes),
        "counts.csv": counts_csv,
        "count_metadata.csv": count_meta_csv,
        "truth.json": json.dumps(truth, indent=2) + "\n",
        "pipeline.ini": CONFIG_TEXT,
    }


def write_fixture(dest, seed=DEFAULT_SEED):
    """Write the fixture files into ``dest`` (created if needed); return the config path."""
    os.makedirs(dest, exist_ok=True)
    for name, text in fixture_files(seed).items():
        with open(os.path.join(dest, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return os.path.join(dest, "pipeline.ini")


def fixture_dir():
    """Directory of the bundled fixture."""
    return str(resources.files("smabayes") / "data" / "fixture")
