"""Parsers and core data model for fold-change tables, gene sets and edge lists.

Expression tables are delimited text with genes as rows and samples as
columns::

    gene    S2_WL_1  S2_WL_2  ...
    #stage  Stage2   Stage2
    #tissue WholeLarvae ...
    #condition Mutant ...
    cycle   1.62     NA

The ``#stage``/``#tissue``/``#condition`` rows are optional when a sidecar
metadata table (``sample_id, stage, tissue, condition``) is supplied.
Missing cells are written as ``NA`` or left empty and are stored as NaN.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping, NamedTuple

import numpy as np

from .errors import (
    BadGeneId,
    BadValue,
    ConflictingRegulation,
    DuplicateEdge,
    DuplicateGene,
    DuplicateSample,
    MalformedGmtLine,
    MalformedTable,
    SampleMismatch,
    SelfLoop,
    WeightOutOfRange,
)

MISSING_TOKENS = frozenset({"", "NA"})
_NUMBER = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?")
_META_ROWS = ("#stage", "#tissue", "#condition")


class Stage(str, Enum):
    STAGE2 = "Stage2"
    STAGE3 = "Stage3"


class Tissue(str, Enum):
    WHOLE_LARVAE = "WholeLarvae"
    BRAIN = "Brain"
    MUSCLE = "Muscle"


class Condition(str, Enum):
    CONTROL = "Control"
    MUTANT = "Mutant"


def check_gene_id(symbol):
    """Validate a gene symbol and return it unchanged."""
    if not isinstance(symbol, str) or not symbol:
        raise BadGeneId(f"gene id must be a non-empty string, got {symbol!r}")
    if any(c in symbol for c in "\t\n\r"):
        raise BadGeneId(f"gene id {symbol!r} contains a tab or newline")
    return symbol


@dataclass(frozen=True)
class SampleMeta:
    sample_id: str
    stage: Stage
    tissue: Tissue
    condition: Condition

    def __post_init__(self):
        if not self.sample_id or any(c in self.sample_id for c in "\t\n\r"):
            raise MalformedTable(f"bad sample id {self.sample_id!r}")
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "tissue", Tissue(self.tissue))
        object.__setattr__(self, "condition", Condition(self.condition))


def _frozen_array(values):
    arr = np.array(values, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ExpressionMatrix:
    """Signed fold changes, ``values[sample, gene]``; NaN marks a missing entry."""

    genes: tuple
    samples: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "genes", tuple(self.genes))
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "values", _frozen_array(self.values))
        seen = set()
        for g in self.genes:
            check_gene_id(g)
            if g in seen:
                raise DuplicateGene(g)
            seen.add(g)
        ids = set()
        for s in self.samples:
            if s.sample_id in ids:
                raise DuplicateSample(s.sample_id)
            ids.add(s.sample_id)
        if self.values.shape != (len(self.samples), len(self.genes)):
            raise MalformedTable(
                f"value grid has shape {self.values.shape}, expected "
                f"{(len(self.samples), len(self.genes))}"
            )
        finite = self.values[~np.isnan(self.values)]
        if np.any(~np.isfinite(finite)) or np.any(finite == 0.0):
            raise MalformedTable("fold changes must be finite and non-zero")

    def __eq__(self, other):
        if not isinstance(other, ExpressionMatrix):
            return NotImplemented
        return (
            self.genes == other.genes
            and self.samples == other.samples
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None

    @property
    def sample_ids(self):
        return tuple(s.sample_id for s in self.samples)

    @property
    def shape(self):
        return self.values.shape

    def gene_index(self, gene):
        try:
            return self.genes.index(gene)
        except ValueError:
            raise KeyError(gene) from None

    def profile(self, gene):
        """Fold changes of one gene across samples (NaN where missing)."""
        return self.values[:, self.gene_index(gene)]

    def subset(self, genes):
        idx = [self.gene_index(g) for g in genes]
        return ExpressionMatrix(tuple(genes), self.samples, self.values[:, idx])


@dataclass(frozen=True)
class Pathway:
    description: str
    genes: frozenset

    def __post_init__(self):
        object.__setattr__(self, "genes", frozenset(self.genes))
        if not self.genes:
            raise MalformedTable("pathway gene set is empty")


@dataclass(frozen=True)
class PathwayDb:
    pathways: Mapping[str, Pathway] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "pathways", MappingProxyType(dict(self.pathways)))

    def __len__(self):
        return len(self.pathways)

    def __iter__(self):
        return iter(self.pathways)

    def __getitem__(self, key):
        return self.pathways[key]

    def __eq__(self, other):
        if not isinstance(other, PathwayDb):
            return NotImplemented
        return dict(self.pathways) == dict(other.pathways)


class Edge(NamedTuple):
    a: str
    b: str
    weight: float


@dataclass(frozen=True)
class EdgeList:
    edges: tuple = ()

    def __post_init__(self):
        edges = tuple(Edge(a, b, float(w)) for a, b, w in self.edges)
        object.__setattr__(self, "edges", edges)
        seen = set()
        for a, b, w in edges:
            check_gene_id(a)
            check_gene_id(b)
            if a == b:
                raise SelfLoop(f"self-loop on {a!r}")
            if not np.isfinite(w) or abs(w) > 1.0:
                raise WeightOutOfRange(f"edge ({a}, {b}) weight {w} outside [-1, 1]")
            key = frozenset((a, b))
            if key in seen:
                raise DuplicateEdge(f"duplicate edge ({a}, {b})")
            seen.add(key)

    def __len__(self):
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def nodes(self):
        """Genes touched by at least one edge, in first-appearance order."""
        out = {}
        for a, b, _ in self.edges:
            out.setdefault(a, None)
            out.setdefault(b, None)
        return tuple(out)

    def restrict(self, genes):
        keep = set(genes)
        return EdgeList(tuple(e for e in self.edges if e.a in keep and e.b in keep))


# -- reading helpers --------------------------------------------------------


def _read_text(src):
    if isinstance(src, str):
        return src
    if isinstance(src, bytes):
        try:
            return src.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedTable(f"input is not UTF-8: {exc}") from exc
    return src.read()


def _rows(text, delimiter):
    try:
        rows = list(csv.reader(io.StringIO(text, newline=""), delimiter=delimiter, strict=True))
    except csv.Error as exc:
        raise MalformedTable(f"cannot tokenise table: {exc}") from exc
    return [r for r in rows if r and not (len(r) == 1 and r[0].strip() == "")]


def parse_number(cell, row, col):
    """Parse a decimal literal; comma decimals, inf/nan and underscores are rejected."""
    text = cell.strip()
    if not _NUMBER.fullmatch(text):
        raise BadValue(row, col, cell)
    return float(text)


# -- expression tables ------------------------------------------------------


def parse_sample_metadata(text):
    """Parse a sidecar ``sample_id, stage, tissue, condition`` table.

    Returns a dict from sample id to :class:`SampleMeta`. The delimiter is a
    tab unless the header line contains none, in which case a comma is used.
    """
    text = _read_text(text)
    first = text.split("\n", 1)[0]
    rows = _rows(text, "\t" if "\t" in first else ",")
    if not rows:
        raise MalformedTable("empty metadata table")
    header = [h.strip() for h in rows[0]]
    need = ["sample_id", "stage", "tissue", "condition"]
    if any(n not in header for n in need):
        raise MalformedTable(f"metadata header must contain {need}, got {header}")
    pos = [header.index(n) for n in need]
    out = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise MalformedTable(f"metadata line {lineno} has {len(row)} fields")
        sid, stage, tissue, cond = (row[i].strip() for i in pos)
        if sid in out:
            raise DuplicateSample(sid)
        try:
            out[sid] = SampleMeta(sid, stage, tissue, cond)
        except ValueError as exc:
            raise BadValue(lineno, 0, str(exc)) from exc
    return out


def parse_expression_table(text, delimiter="\t", metadata=None):
    """Parse a genes-by-samples fold-change table into an :class:`ExpressionMatrix`.

    Parameters
    ----------
    text : str or text stream
        Table content. The header row names the samples; the first column
        holds gene symbols.
    delimiter : str
        Field separator, ``"\\t"`` or ``","``.
    metadata : mapping, optional
        Sample id to :class:`SampleMeta`. Needed unless the table carries
        ``#stage``, ``#tissue`` and ``#condition`` rows.

    Raises
    ------
    MalformedTable
        Ragged rows, a missing header or missing sample metadata.
    DuplicateGene
        A gene symbol appears on two rows.
    BadValue
        A cell is neither a decimal number nor a missing marker.
    """
    rows = _rows(_read_text(text), delimiter)
    if not rows:
        raise MalformedTable("empty table")
    header = rows[0]
    if len(header) < 2:
        raise MalformedTable("header must name at least one sample")
    sample_ids = [h.strip() for h in header[1:]]
    width = len(header)
    inline = {}
    genes = []
    grid = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise MalformedTable(f"row {lineno} has {len(row)} fields, expected {width}")
        key = row[0].strip()
        if key in _META_ROWS:
            inline[key] = [c.strip() for c in row[1:]]
            continue
        try:
            check_gene_id(key)
        except BadGeneId as exc:
            raise MalformedTable(f"row {lineno}: {exc}") from exc
        values = []
        for col, cell in enumerate(row[1:], start=1):
            if cell.strip() in MISSING_TOKENS:
                values.append(np.nan)
            else:
                v = parse_number(cell, lineno, col)
                if v == 0.0:
                    raise BadValue(lineno, col, cell)
                values.append(v)
        genes.append(key)
        grid.append(values)

    samples = []
    for j, sid in enumerate(sample_ids):
        if len(inline) == len(_META_ROWS):
            try:
                meta = SampleMeta(
                    sid, inline["#stage"][j], inline["#tissue"][j], inline["#condition"][j]
                )
            except ValueError as exc:
                raise BadValue(0, j + 1, str(exc)) from exc
            if metadata is not None and sid in metadata and metadata[sid] != meta:
                raise MalformedTable(f"inline and sidecar metadata disagree for {sid!r}")
        elif metadata is not None and sid in metadata:
            meta = metadata[sid]
        else:
            raise MalformedTable(f"no stage/tissue/condition metadata for sample {sid!r}")
        samples.append(meta)

    values = np.array(grid, dtype=float).reshape(len(genes), len(samples)).T
    return ExpressionMatrix(tuple(genes), tuple(samples), values)


def format_expression_table(m, delimiter="\t", gene_header="gene"):
    """Serialise a matrix in the layout read by :func:`parse_expression_table`."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow([gene_header, *m.sample_ids])
    w.writerow(["#stage", *(s.stage.value for s in m.samples)])
    w.writerow(["#tissue", *(s.tissue.value for s in m.samples)])
    w.writerow(["#condition", *(s.condition.value for s in m.samples)])
    for j, g in enumerate(m.genes):
        col = m.values[:, j]
        w.writerow([g, *("NA" if np.isnan(v) else repr(float(v)) for v in col)])
    return buf.getvalue()


def merge_regulation_files(up, down):
    """Combine up- and down-regulated fold-change tables into one signed matrix.

    Down-regulated fold changes are stored as negative values; values from
    the up table are copied unchanged. Sample order follows ``up``; gene
    order is the up genes followed by down-only genes.
    """
    if set(up.sample_ids) != set(down.sample_ids):
        raise SampleMismatch("up and down tables must cover the same samples")
    down_meta = dict(zip(down.sample_ids, down.samples))
    for s in up.samples:
        if down_meta[s.sample_id] != s:
            raise SampleMismatch(f"metadata differs for sample {s.sample_id!r}")
    order = [down.sample_ids.index(sid) for sid in up.sample_ids]
    down_vals = -np.abs(down.values[order, :])

    up_genes = set(up.genes)
    genes = list(up.genes) + [g for g in down.genes if g not in up_genes]
    out = np.full((len(up.samples), len(genes)), np.nan)
    out[:, : len(up.genes)] = up.values
    col = {g: j for j, g in enumerate(genes)}
    for jd, g in enumerate(down.genes):
        j = col[g]
        incoming = down_vals[:, jd]
        clash = ~np.isnan(out[:, j]) & ~np.isnan(incoming)
        if clash.any():
            raise ConflictingRegulation(g, up.sample_ids[int(np.argmax(clash))])
        fill = ~np.isnan(incoming)
        out[fill, j] = incoming[fill]
    return ExpressionMatrix(tuple(genes), up.samples, out)


# -- gene sets ------------------------------------------------------------


def parse_gmt(text):
    """Parse GMT gene sets: ``pathway_id<TAB>description<TAB>gene...`` per line."""
    pathways = {}
    for lineno, line in enumerate(_read_text(text).splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 3:
            raise MalformedGmtLine(lineno)
        pid, desc = fields[0].strip(), fields[1].strip()
        genes = [g.strip() for g in fields[2:] if g.strip()]
        if not pid:
            raise MalformedGmtLine(lineno, "empty pathway id")
        if not genes:
            raise MalformedGmtLine(lineno, "no genes")
        if pid in pathways:
            raise MalformedGmtLine(lineno, f"duplicate pathway id {pid!r}")
        pathways[pid] = Pathway(desc, frozenset(genes))
    return PathwayDb(pathways)


def format_gmt(db):
    lines = [
        "\t".join([pid, p.description, *sorted(p.genes)]) for pid, p in db.pathways.items()
    ]
    return "".join(line + "\n" for line in lines)


# -- edge lists -------------------------------------------------------------


def parse_edge_list(text):
    """Parse a 3-column ``geneA<TAB>geneB<TAB>weight`` edge list.

    Blank lines and lines starting with ``#`` are skipped.
    """
    edges = []
    for lineno, line in enumerate(_read_text(text).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise MalformedTable(f"edge line {lineno} has {len(fields)} fields, expected 3")
        a, b = fields[0].strip(), fields[1].strip()
        try:
            check_gene_id(a)
            check_gene_id(b)
        except BadGeneId as exc:
            raise MalformedTable(f"edge line {lineno}: {exc}") from exc
        edges.append((a, b, parse_number(fields[2], lineno, 2)))
    return EdgeList(tuple(edges))


def format_edge_list(edges):
    return "".join(f"{e.a}\t{e.b}\t{e.weight!r}\n" for e in edges)


# -- RefSeq mapping -----------------------------------------------------------


def _refseq_rank(acc):
    for rank, prefix in enumerate(("NM_", "XM_")):
        if acc.startswith(prefix):
            return rank
    return 2


def parse_refseq_map(text):
    """Read a ``symbol<TAB>refseq_id`` table into a symbol -> accession dict.

    When a symbol has several accessions, curated mRNA (``NM_``) beats
    predicted mRNA (``XM_``), which beats anything else; ties keep the first.
    """
    best = {}
    for lineno, line in enumerate(_read_text(text).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t")]
        if len(fields) != 2 or not all(fields):
            raise MalformedTable(f"refseq line {lineno} must have 2 non-empty fields")
        sym, acc = fields
        if lineno == 1 and (sym, acc) == ("symbol", "refseq_id"):
            continue
        if sym not in best or _refseq_rank(acc) < _refseq_rank(best[sym]):
            best[sym] = acc
    return best


def read_text_file(path):
    """Read a UTF-8 file, mapping OS failures to :class:`InputError`."""
    from .errors import InputError

    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


# -- count tables -------------------------------------------------------------

COUNT_META_HEADER = ("sample_id", "total", "stage_indicator")


def parse_count_data(counts_text, meta_text):
    """Read a genes-by-samples count CSV and its ``sample_id,total,stage_indicator`` sidecar.

    Returns a :class:`~smabayes.bayes.CountData` with samples in the
    column order of the count table.
    """
    from .bayes import CountData

    rows = _rows(_read_text(counts_text), ",")
    if not rows or len(rows[0]) < 2:
        raise MalformedTable("count table needs a header naming at least one sample")
    sample_ids = [h.strip() for h in rows[0][1:]]
    genes, grid = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(rows[0]):
            raise MalformedTable(f"count row {lineno} has {len(row)} fields")
        genes.append(check_gene_id(row[0].strip()))
        vals = []
        for col, cell in enumerate(row[1:], start=1):
            v = parse_number(cell, lineno, col)
            if v < 0 or v != int(v):
                raise BadValue(lineno, col, cell)
            vals.append(v)
        grid.append(vals)
    if len(set(genes)) != len(genes):
        raise DuplicateGene(next(g for g in genes if genes.count(g) > 1))

    meta_rows = _rows(_read_text(meta_text), ",")
    if not meta_rows or tuple(h.strip() for h in meta_rows[0]) != COUNT_META_HEADER:
        raise MalformedTable(f"count metadata header must be {','.join(COUNT_META_HEADER)}")
    meta = {}
    for lineno, row in enumerate(meta_rows[1:], start=2):
        if len(row) != 3:
            raise MalformedTable(f"count metadata line {lineno} has {len(row)} fields")
        sid = row[0].strip()
        if sid in meta:
            raise DuplicateSample(sid)
        meta[sid] = (parse_number(row[1], lineno, 1), parse_number(row[2], lineno, 2))
    if set(meta) != set(sample_ids):
        raise SampleMismatch("count table and count metadata name different samples")
    totals = [meta[s][0] for s in sample_ids]
    stage = [meta[s][1] for s in sample_ids]
    counts = np.array(grid, dtype=float).reshape(len(genes), len(sample_ids))
    return CountData(counts, totals, stage, tuple(genes), tuple(sample_ids))


def format_count_data(data):
    """Serialise :class:`CountData` as ``(counts_csv, metadata_csv)`` strings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gene", *data.sample_ids])
    for g, row in zip(data.gene_ids, data.counts):
        w.writerow([g, *(int(v) for v in row)])
    mbuf = io.StringIO()
    mw = csv.writer(mbuf, lineterminator="\n")
    mw.writerow(COUNT_META_HEADER)
    for sid, t, s in zip(data.sample_ids, data.totals, data.stage):
        mw.writerow([sid, int(t) if t == int(t) else repr(float(t)), int(s)])
    return buf.getvalue(), mbuf.getvalue()
