"""Significance filtering, correlation, clustering, enrichment and network building."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    BadCutoff,
    DomainError,
    EmptyUniverse,
    InsufficientData,
    UndefinedCorrelation,
    ValidationError,
)
from .ingest import EdgeList

TRANSFORMS = ("log2", "raw")


def signed_log2(values):
    """``sign(v) * log2(|v|)``, mapping fold 2 and fold -2 to +1 and -1."""
    v = np.asarray(values, dtype=float)
    with np.errstate(divide="ignore"):
        return np.sign(v) * np.log2(np.abs(v))


def transform_profiles(values, transform="log2"):
    if transform == "log2":
        return signed_log2(values)
    if transform == "raw":
        return np.asarray(values, dtype=float)
    raise ValueError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")


def significant_genes(m, cutoff=1.5):
    """Genes whose absolute fold change reaches ``cutoff`` in at least one sample."""
    if not cutoff > 1.0:
        raise BadCutoff(f"cutoff must exceed 1, got {cutoff}")
    with np.errstate(invalid="ignore"):
        hit = np.abs(m.values) >= cutoff
    keep = np.any(hit & ~np.isnan(m.values), axis=0)
    return [g for g, k in zip(m.genes, keep) if k]


def pearson_correlation(x, y):
    """Pearson product-moment correlation of two equal-length vectors.

    The result is clipped to [-1, 1] and is exactly symmetric in its
    arguments. A constant vector has no defined correlation and raises
    :class:`UndefinedCorrelation`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise DomainError("pearson_correlation needs two 1-d vectors of equal length")
    if len(x) < 2:
        raise DomainError("pearson_correlation needs at least 2 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("pearson_correlation inputs must be finite")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise UndefinedCorrelation("correlation undefined for a constant vector")
    xc = x - x.mean()
    yc = y - y.mean()
    sxy = np.dot(xc, yc)
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    r = sxy / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def complete_pairs_correlation(x, y):
    """Correlation over positions where neither vector is NaN."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~np.isnan(x) & ~np.isnan(y)
    if ok.sum() < 2:
        raise UndefinedCorrelation("fewer than 2 complete pairs")
    return pearson_correlation(x[ok], y[ok])


def correlation_pvalue(r, n):
    """Two-sided p-value of a Pearson correlation ``r`` from ``n`` pairs.

    Uses ``t = r * sqrt((n - 2) / (1 - r**2))`` against Student's t with
    ``n - 2`` degrees of freedom.
    """
    if not (abs(r) <= 1.0):
        raise DomainError(f"|r| must be <= 1, got {r}")
    if int(n) != n or n < 3:
        raise DomainError(f"n must be an integer >= 3, got {n}")
    if abs(r) == 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 2)))


# -- clustering -------------------------------------------------------------


class Merge(NamedTuple):
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Agglomerative merge history.

    Cluster ids follow the usual convention: leaves are ``0..n-1`` and the
    cluster created by merge ``k`` gets id ``n + k``.
    """

    leaves: tuple
    merges: tuple

    def __post_init__(self):
        object.__setattr__(self, "leaves", tuple(self.leaves))
        object.__setattr__(self, "merges", tuple(Merge(*m) for m in self.merges))
        if len(self.merges) != len(self.leaves) - 1:
            raise ValidationError("a dendrogram over n leaves needs n - 1 merges")
        heights = [m.height for m in self.merges]
        if any(h < 0 for h in heights) or any(b < a for a, b in zip(heights, heights[1:])):
            raise ValidationError("merge heights must be non-negative and non-decreasing")

    def _children(self, cid):
        n = len(self.leaves)
        if cid < n:
            return None
        m = self.merges[cid - n]
        return m.left, m.right

    def leaf_order(self):
        """Leaf labels in left-to-right display order."""
        n = len(self.leaves)
        if n == 1:
            return list(self.leaves)
        out, stack = [], [2 * n - 2]
        while stack:
            cid = stack.pop()
            kids = self._children(cid)
            if kids is None:
                out.append(self.leaves[cid])
            else:
                stack.extend(reversed(kids))
        return out

    def height_of(self, cid):
        n = len(self.leaves)
        return 0.0 if cid < n else self.merges[cid - n].height

    def to_tree(self):
        """Nested form: a leaf is its label, an inner node is ``(left, right, height)``."""

        def build(cid):
            kids = self._children(cid)
            if kids is None:
                return self.leaves[cid]
            return (build(kids[0]), build(kids[1]), self.height_of(cid))

        return build(len(self.leaves) * 2 - 2 if len(self.leaves) > 1 else 0)

    def to_newick(self):
        """Newick text; branch length = parent merge height minus child height."""

        def label(name):
            if any(c in name for c in " ()[]':;,\t"):
                return "'" + name.replace("'", "''") + "'"
            return name

        def render(cid, parent_h):
            kids = self._children(cid)
            bl = repr(float(parent_h - self.height_of(cid)))
            if kids is None:
                return f"{label(self.leaves[cid])}:{bl}"
            h = self.height_of(cid)
            return f"({render(kids[0], h)},{render(kids[1], h)}):{bl}"

        n = len(self.leaves)
        if n == 1:
            return label(self.leaves[0]) + ";\n"
        root = 2 * n - 2
        h = self.height_of(root)
        kids = self._children(root)
        return f"({render(kids[0], h)},{render(kids[1], h)});\n"


def parse_newick(text):
    """Parse Newick written by :meth:`Dendrogram.to_newick` into nested tree form.

    Inner-node heights are rebuilt from branch lengths, so they agree with
    the source merge heights up to floating-point rounding.
    """
    s = text.strip()
    if not s.endswith(";"):
        raise ValidationError("newick text must end with ';'")
    pos = 0

    def read_label():
        nonlocal pos
        if s[pos] == "'":
            pos += 1
            out = []
            while True:
                c = s[pos]
                if c == "'":
                    if s[pos + 1 : pos + 2] == "'":
                        out.append("'")
                        pos += 2
                        continue
                    pos += 1
                    return "".join(out)
                out.append(c)
                pos += 1
        start = pos
        while s[pos] not in ":,();":
            pos += 1
        return s[start:pos]

    def read_length():
        nonlocal pos
        if s[pos] != ":":
            return 0.0
        pos += 1
        start = pos
        while s[pos] not in ",();":
            pos += 1
        return float(s[start:pos])

    def node():
        # returns (tree, height)
        nonlocal pos
        if s[pos] == "(":
            pos += 1
            left, hl = node()
            bl_l = read_length()
            if s[pos] != ",":
                raise ValidationError("expected ',' in newick")
            pos += 1
            right, hr = node()
            bl_r = read_length()
            if s[pos] != ")":
                raise ValidationError("expected ')' in newick")
            pos += 1
            h = max(hl + bl_l, hr + bl_r)
            return (left, right, h), h
        return read_label(), 0.0

    try:
        tree, _ = node()
    except IndexError as exc:
        raise ValidationError("truncated newick text") from exc
    return tree


def average_linkage(dist, labels):
    """UPGMA clustering of a symmetric dissimilarity matrix.

    Among equal-distance candidates the pair with the lowest cluster ids
    (lexicographically) merges first.
    """
    d = np.array(dist, dtype=float)
    n = d.shape[0]
    if d.shape != (n, n) or n != len(labels):
        raise ValidationError("distance matrix must be square and match labels")
    if n < 2:
        raise ValidationError("need at least 2 items to cluster")
    full = np.full((2 * n - 1, 2 * n - 1), np.inf)
    full[:n, :n] = d
    size = [1] * n + [0] * (n - 1)
    active = list(range(n))
    merges = []
    last = 0.0
    for k in range(n - 1):
        best = None
        for ia, a in enumerate(active):
            for b in active[ia + 1 :]:
                if best is None or full[a, b] < best[0]:
                    best = (full[a, b], a, b)
        h, a, b = best
        h = max(float(h), last)
        last = h
        new = n + k
        size[new] = size[a] + size[b]
        active = [c for c in active if c not in (a, b)]
        for c in active:
            v = (size[a] * full[a, c] + size[b] * full[b, c]) / size[new]
            full[new, c] = full[c, new] = v
        active.append(new)
        merges.append(Merge(a, b, h, size[new]))
    return Dendrogram(tuple(labels), tuple(merges))


def correlation_distance(profiles, labels=None):
    """``1 - r`` between rows of ``profiles`` using complete pairs.

    Rows with fewer than two non-missing values raise
    :class:`InsufficientData`. A pair whose correlation is undefined (too few
    shared values or a constant profile) gets distance 1, the value of
    uncorrelated profiles.
    """
    P = np.asarray(profiles, dtype=float)
    labels = list(labels) if labels is not None else list(range(len(P)))
    for lab, row in zip(labels, P):
        if np.count_nonzero(~np.isnan(row)) < 2:
            raise InsufficientData(lab)
    n = len(P)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            try:
                r = complete_pairs_correlation(P[i], P[j])
            except UndefinedCorrelation:
                r = 0.0
            D[i, j] = D[j, i] = 1.0 - r
    return D


def hierarchical_cluster(m, genes, transform="log2"):
    """Average-linkage dendrogram of gene profiles under ``1 - pearson``."""
    genes = list(genes)
    if len(genes) < 2:
        raise ValidationError("hierarchical_cluster needs at least 2 genes")
    P = np.stack([transform_profiles(m.profile(g), transform) for g in genes])
    return average_linkage(correlation_distance(P, genes), genes)


def cluster_samples(m, genes, transform="log2"):
    """Average-linkage dendrogram of samples, profiled over ``genes``."""
    P = np.stack([transform_profiles(m.profile(g), transform) for g in genes], axis=1)
    return average_linkage(correlation_distance(P, m.sample_ids), m.sample_ids)


# -- enrichment -------------------------------------------------------------


@dataclass(frozen=True)
class EnrichmentResult:
    pathway_id: str
    description: str
    overlap_count: int
    pathway_size: int
    query_size: int
    universe_size: int
    p_value: float
    adjusted_p: float


def hypergeom_upper_tail(overlap, pathway_size, query_size, universe_size):
    """Exact ``P(X >= overlap)`` for a hypergeometric draw, via integer arithmetic."""
    N, K, n, k = universe_size, pathway_size, query_size, overlap
    if not (0 <= K <= N and 0 <= n <= N and k >= 0):
        raise DomainError("invalid hypergeometric parameters")
    hi = min(K, n)
    num = sum(math.comb(K, i) * math.comb(N - K, n - i) for i in range(k, hi + 1))
    return float(Fraction(num, math.comb(N, n)))


def benjamini_hochberg(pvalues):
    """Benjamini-Hochberg adjusted p-values, returned in input order."""
    p = np.asarray(pvalues, dtype=float)
    m = len(p)
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj_sorted, 1.0)
    return np.maximum(out, p)


def enrich(query, db, universe):
    """One-sided hypergeometric over-representation test for every pathway.

    Pathway gene sets are intersected with ``universe`` first. Pathways with
    no overlap are omitted; the rest are sorted by ascending p-value with
    Benjamini-Hochberg adjusted p-values.
    """
    universe = frozenset(universe)
    query = frozenset(query)
    if not universe:
        raise EmptyUniverse("enrichment universe is empty")
    if not query <= universe:
        missing = sorted(query - universe)[:5]
        raise ValidationError(f"query genes not in universe: {missing}")
    N, n = len(universe), len(query)
    tested = []
    for pid, pw in db.pathways.items():
        members = pw.genes & universe
        k = len(members & query)
        if k == 0:
            continue
        p = hypergeom_upper_tail(k, len(members), n, N)
        tested.append((pid, pw.description, k, len(members), p))
    adj = benjamini_hochberg([t[4] for t in tested])
    results = [
        EnrichmentResult(pid, desc, k, K, n, N, p, float(a))
        for (pid, desc, k, K, p), a in zip(tested, adj)
    ]
    results.sort(key=lambda r: r.p_value)
    return results


# -- co-expression network ----------------------------------------------------


@dataclass(frozen=True)
class CoexpressionNetwork:
    nodes: tuple
    edges: EdgeList
    skipped_pairs: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        known = set(self.nodes)
        for e in self.edges:
            if e.a not in known or e.b not in known:
                raise ValidationError(f"edge ({e.a}, {e.b}) references an unknown node")

    def neighbours(self, gene):
        out = []
        for e in self.edges:
            if e.a == gene:
                out.append((e.b, e.weight))
            elif e.b == gene:
                out.append((e.a, e.weight))
        return out

    def components(self):
        """Connected components as lists of genes, in node order."""
        idx = {g: i for i, g in enumerate(self.nodes)}
        n = len(self.nodes)
        rows = [idx[e.a] for e in self.edges]
        cols = [idx[e.b] for e in self.edges]
        adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
        groups = {}
        for g, lab in zip(self.nodes, labels):
            groups.setdefault(lab, []).append(g)
        return list(groups.values())

    @property
    def n_components(self):
        return len(self.components())


def build_coexpression_network(m, genes, threshold, transform="log2"):
    """Connect gene pairs whose profile correlation satisfies ``|r| >= threshold``.

    Pairs with undefined correlation are skipped and counted in
    ``skipped_pairs``.
    """
    if not 0.0 < threshold <= 1.0:
        raise DomainError(f"threshold must lie in (0, 1], got {threshold}")
    genes = list(genes)
    profiles = [transform_profiles(m.profile(g), transform) for g in genes]
    edges, skipped = [], 0
    for i in range(len(genes)):
        for j in range(i + 1, len(genes)):
            try:
                r = complete_pairs_correlation(profiles[i], profiles[j])
            except UndefinedCorrelation:
                skipped += 1
                continue
            if abs(r) >= threshold:
                edges.append((genes[i], genes[j], r))
    return CoexpressionNetwork(tuple(genes), EdgeList(tuple(edges)), skipped)


def network_from_edges(edges, genes=None):
    """Wrap an imported edge list; nodes default to the genes it touches."""
    nodes = tuple(genes) if genes is not None else edges.nodes()
    return CoexpressionNetwork(nodes, edges.restrict(nodes))
