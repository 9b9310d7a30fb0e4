"""Command-line front end: ``smabayes <subcommand> [--config FILE] [overrides]``.

Subcommands run one pipeline stage each and read the previous stage's
outputs from the run directory:

preprocess
    merge up/down tables, select significant genes, cluster, enrich
network
    co-expression network from an edge list or from correlations
fgn
    GMM discretisation and loopy belief propagation
fit
    hierarchical negative-binomial model by HMC
report
    five-column posterior table and a digest of every output

Exit codes: 0 success, 2 input error, 3 validation error, 4 convergence
failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import warnings

from . import __version__
from .bayes import HierarchicalNBModel, fold_to_pseudocounts
from .config import apply_overrides, flag_name, iter_fields, load_config
from .diagnostics import summarize
from .errors import BadCutoff, ConvergenceFailure, InputError, SmaError, ValidationError
from .fgn import (
    build_factor_graph,
    discretize_and_infer,
    evaluate_marginals,
    gene_evidence,
    gene_values,
    observed_state_proportions,
)
from .hmc import sample_model
from .ingest import (
    format_edge_list,
    format_expression_table,
    merge_regulation_files,
    parse_count_data,
    parse_edge_list,
    parse_expression_table,
    parse_gmt,
    parse_refseq_map,
    parse_sample_metadata,
    read_text_file,
)
from .preprocess import (
    build_coexpression_network,
    cluster_samples,
    enrich,
    hierarchical_cluster,
    network_from_edges,
    significant_genes,
)
from .report import (
    RunManifest,
    emit_convergence_trace,
    emit_dendrogram,
    emit_draws,
    emit_enrichment,
    emit_evaluation,
    emit_heatmap,
    emit_manifest,
    emit_marginals,
    emit_posterior_table,
    file_digest,
    parse_posterior_table,
)

log = logging.getLogger("smabayes")

EXIT_OK, EXIT_INPUT, EXIT_VALIDATION, EXIT_CONVERGENCE = 0, 2, 3, 4

OUTPUTS = {
    "preprocess": ["matrix.tsv", "significant.txt", "heatmap.csv", "dendrogram.nwk", "enrichment.csv"],
    "network": ["network.tsv", "nodes.txt"],
    "fgn": ["marginals.csv", "trace.csv", "evaluation.json", "gmm.json", "graph.json"],
    "fit": ["posterior.csv"],
    "report": ["posterior_table.csv", "manifest.json"],
}


class _Run:
    """Paths and bookkeeping for one subcommand invocation."""

    def __init__(self, cfg, step):
        self.cfg = cfg
        self.step = step
        self.out = cfg.run.out_dir
        self.inputs = {}
        self.outputs = []
        self.started = _now()
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def read_input(self, path):
        text = read_text_file(path)
        self.inputs[os.path.abspath(path)] = file_digest(path)
        return text

    def read_output(self, name):
        path = self.path(name)
        if not os.path.exists(path):
            raise InputError(f"{path} not found; run the earlier pipeline step first")
        return self.read_input(path)

    def wrote(self, name):
        self.outputs.append(name)
        return self.path(name)

    def finish(self):
        path = self.path("manifest.json")
        man = RunManifest()
        if os.path.exists(path):
            try:
                man = RunManifest.from_json(read_text_file(path))
            except (ValueError, TypeError):
                log.warning("replacing unreadable manifest %s", path)
        man.tool_version = __version__
        man.config = self.cfg.as_dict()
        man.seed = self.cfg.run.seed
        man.inputs.update(self.inputs)
        for name in self.outputs:
            man.outputs[name] = file_digest(self.path(name))
        man.steps = [s for s in man.steps if s.get("step") != self.step]
        man.steps.append({"step": self.step, "started": self.started, "finished": _now()})
        man.timestamps[self.step] = man.steps[-1]["finished"]
        emit_manifest(man, path)


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _require(path, what):
    if not path:
        raise InputError(f"no {what} given; set it in [inputs] or pass a flag")
    return path


# -- subcommands ----------------------------------------------------------------


def load_matrix(run):
    cfg = run.cfg
    meta = None
    if cfg.inputs.metadata:
        meta = parse_sample_metadata(run.read_input(cfg.inputs.metadata))
    up = parse_expression_table(run.read_input(_require(cfg.inputs.up, "up table")), cfg.delimiter, meta)
    down = parse_expression_table(
        run.read_input(_require(cfg.inputs.down, "down table")), cfg.delimiter, meta
    )
    m = merge_regulation_files(up, down)
    if cfg.inputs.refseq:
        mapping = parse_refseq_map(run.read_input(cfg.inputs.refseq))
        keep = [g for g in m.genes if g in mapping]
        dropped = len(m.genes) - len(keep)
        if dropped:
            log.info("dropping %d genes without a RefSeq accession", dropped)
        m = m.subset(keep)
    return m


def cmd_preprocess(cfg):
    """Merge up/down tables, select significant genes, cluster them and run enrichment."""
    if not cfg.preprocess.cutoff > 1.0:
        raise BadCutoff(f"cutoff must exceed 1, got {cfg.preprocess.cutoff}")
    run = _Run(cfg, "preprocess")
    m = load_matrix(run)
    sig = significant_genes(m, cfg.preprocess.cutoff)
    log.info("%d genes, %d significant at cutoff %g", len(m.genes), len(sig), cfg.preprocess.cutoff)
    with open(run.wrote("matrix.tsv"), "w", encoding="utf-8") as fh:
        fh.write(format_expression_table(m))
    with open(run.wrote("significant.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(g + "\n" for g in sig))

    if len(sig) >= 2:
        tree = hierarchical_cluster(m, sig, cfg.preprocess.transform)
        cols = cluster_samples(m, sig, cfg.preprocess.transform).leaf_order()
        rows = tree.leaf_order()
        emit_dendrogram(tree, run.wrote("dendrogram.nwk"))
    else:
        log.warning("fewer than 2 significant genes; dendrogram left empty")
        rows, cols = sig, list(m.sample_ids)
        with open(run.wrote("dendrogram.nwk"), "w", encoding="utf-8") as fh:
            fh.write(f"{sig[0]};\n" if sig else ";\n")
    emit_heatmap(m, rows, cols, run.wrote("heatmap.csv"))

    results = []
    if cfg.inputs.gmt:
        db = parse_gmt(run.read_input(cfg.inputs.gmt))
        results = enrich(sig, db, m.genes)
    else:
        log.warning("no GMT file configured; enrichment.csv has no rows")
    emit_enrichment(results, run.wrote("enrichment.csv"))
    run.finish()
    return EXIT_OK


def _load_run_matrix(run):
    return parse_expression_table(run.read_output("matrix.tsv"))


def _lines(text):
    return [line for line in text.splitlines() if line]


def cmd_network(cfg):
    """Build the co-expression network from an edge list or from profile correlations."""
    if not 0.0 < cfg.network.threshold <= 1.0:
        raise ValidationError(f"network threshold must lie in (0, 1], got {cfg.network.threshold}")
    run = _Run(cfg, "network")
    m = _load_run_matrix(run)
    sig = _lines(run.read_output("significant.txt"))
    if cfg.inputs.edges:
        edges = parse_edge_list(run.read_input(cfg.inputs.edges))
        present = set(m.genes)
        nodes = [g for g in edges.nodes() if g in present]
        missing = len(edges.nodes()) - len(nodes)
        if missing:
            log.warning("%d edge-list genes are absent from the matrix and were dropped", missing)
        net = network_from_edges(edges, nodes)
    else:
        net = build_coexpression_network(m, sig, cfg.network.threshold, cfg.preprocess.transform)
        if net.skipped_pairs:
            log.warning("%d gene pairs had undefined correlation", net.skipped_pairs)
    log.info("network: %d nodes, %d edges, %d components",
             len(net.nodes), len(net.edges.edges), net.n_components)
    with open(run.wrote("network.tsv"), "w", encoding="utf-8") as fh:
        fh.write(format_edge_list(net.edges.edges))
    with open(run.wrote("nodes.txt"), "w", encoding="utf-8") as fh:
        fh.write("".join(g + "\n" for g in net.nodes))
    run.finish()
    return EXIT_OK


def _load_network(run):
    nodes = _lines(run.read_output("nodes.txt"))
    edges = parse_edge_list(run.read_output("network.tsv"))
    return network_from_edges(edges, nodes)


def cmd_fgn(cfg):
    """Discretise expression with a GMM and run loopy belief propagation on the network."""
    run = _Run(cfg, "fgn")
    m = _load_run_matrix(run)
    net = _load_network(run)
    if not net.nodes:
        raise ValidationError("network has no nodes")
    fcfg = cfg.fgn_config()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = discretize_and_infer(m, net, cfg.fgn.states, fcfg)
    for w in caught:
        print(f"warning: {w.category.__name__}: {w.message}", file=sys.stderr)
    values = gene_values(m, net.nodes, cfg.preprocess.transform)
    observed = observed_state_proportions(res.gmm, values)
    ev = evaluate_marginals(res.marginals, observed)
    graph = build_factor_graph(net, gene_evidence(res.gmm, values), fcfg.coupling)

    emit_marginals(res.marginals, run.wrote("marginals.csv"))
    emit_convergence_trace(res.trace, run.wrote("trace.csv"))
    emit_evaluation(ev.r, ev.p, ev.n, run.wrote("evaluation.json"))
    with open(run.wrote("gmm.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(res.gmm.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(run.wrote("graph.json"), "w", encoding="utf-8") as fh:
        fh.write(graph.to_json())
    log.info("LBP: %d sweeps, converged=%s; evaluation r=%.4f p=%.3g n=%d",
             res.trace.iterations, res.trace.converged, ev.r, ev.p, ev.n)
    run.finish()
    return EXIT_OK


def _count_data(run):
    cfg = run.cfg
    if cfg.inputs.counts:
        meta = run.read_input(_require(cfg.inputs.count_metadata, "count metadata"))
        data = parse_count_data(run.read_input(cfg.inputs.counts), meta)
    else:
        m = _load_run_matrix(run)
        genes = _lines(run.read_output("significant.txt"))
        log.info("no count table configured; using fold-change pseudo-counts")
        data = fold_to_pseudocounts(m, genes, cfg.fit.pseudocount_base, cfg.fit.pseudocount_depth)
    nodes_path = run.path("nodes.txt")
    if os.path.exists(nodes_path):
        nodes = set(_lines(run.read_input(nodes_path)))
        keep = [i for i, g in enumerate(data.gene_ids) if g in nodes]
        if keep and len(keep) < data.n_genes:
            from .bayes import CountData

            data = CountData(data.counts[keep], data.totals, data.stage,
                             tuple(data.gene_ids[i] for i in keep), data.sample_ids)
    return data


def cmd_fit(cfg):
    """Fit the hierarchical negative-binomial model by HMC and summarise the posterior."""
    run = _Run(cfg, "fit")
    data = _count_data(run)
    model = HierarchicalNBModel(data, cfg.prior_config())
    hcfg = cfg.hmc_config()
    log.info("fitting %d genes x %d samples: %d chains x (%d warmup + %d draws)",
             data.n_genes, data.n_samples, hcfg.chains, hcfg.warmup, hcfg.samples)
    chains = sample_model(model, hcfg)
    names = model.names
    genes = [""] * len(names)
    for i, g in enumerate(data.gene_ids):
        genes[2 + i] = g
        genes[3 + data.n_genes + i] = g
    for c, ch in enumerate(chains):
        emit_draws(ch.draws, names, run.wrote(f"draws_chain{c}.csv"))
    summary = summarize(chains, names, genes)
    emit_posterior_table(summary, run.wrote("posterior.csv"))
    divergences = sum(ch.divergence_count for ch in chains)
    if divergences:
        log.warning("%d divergent transitions after warmup", divergences)
    run.finish()

    bad = [r.variable for r in summary if r.rhat is None or r.rhat > cfg.fit.rhat_threshold]
    if bad:
        msg = f"R-hat above {cfg.fit.rhat_threshold} or undefined for {len(bad)} parameters: {', '.join(bad[:5])}"
        if cfg.run.allow_nonconverged:
            log.warning("%s (continuing: --allow-nonconverged)", msg)
        else:
            raise ConvergenceFailure(msg)
    return EXIT_OK


def cmd_report(cfg):
    """Write the five-column posterior table and record digests of all outputs."""
    run = _Run(cfg, "report")
    declared = [n for step in ("preprocess", "network", "fgn", "fit") for n in OUTPUTS[step]]
    missing = [n for n in declared if not os.path.exists(run.path(n))]
    if missing:
        raise InputError(f"missing outputs in {run.out}: {', '.join(missing)}")
    summary = parse_posterior_table(run.read_output("posterior.csv"))
    emit_posterior_table(summary, run.wrote("posterior_table.csv"), layout="table")
    ev = json.loads(run.read_output("evaluation.json"))
    run.outputs.extend(n for n in declared if n not in run.outputs)
    run.outputs.extend(sorted(f for f in os.listdir(run.out) if f.startswith("draws_chain")))
    run.finish()
    worst = max((r.rhat for r in summary if r.rhat is not None), default=float("nan"))
    print(f"posterior: {len(summary)} parameters, max R-hat {worst:.4f}")
    print(f"evaluation: r={ev['r']:.4f} p={ev['p']:.3g} n={ev['n']}")
    print(f"outputs in {run.out}")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "network": cmd_network,
    "fgn": cmd_fgn,
    "fit": cmd_fit,
    "report": cmd_report,
}


# -- argument parsing ------------------------------------------------------------


def _add_overrides(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("-v", "--verbose", action="count", default=0)
    groups = {}
    for sec, name, typ in iter_fields():
        if (sec, name) == ("run", "allow_nonconverged"):
            p.add_argument("--allow-nonconverged", action="store_const", const="true",
                           dest="run__allow_nonconverged",
                           help="exit 0 even when R-hat exceeds the threshold")
            continue
        g = groups.get(sec) or p.add_argument_group(f"[{sec}] overrides")
        groups[sec] = g
        tname = typ if isinstance(typ, str) else typ.__name__
        g.add_argument(flag_name(sec, name), dest=f"{sec}__{name}", metavar=tname.upper(),
                       help=f"{sec}.{name} ({tname})")


def build_parser():
    parser = argparse.ArgumentParser(prog="smabayes", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        doc = (fn.__doc__ or "").strip() or name
        sp = sub.add_parser(name, help=doc, description=doc)
        _add_overrides(sp)
    return parser


def resolve_config(args):
    cfg = load_config(args.config)
    overrides = {}
    for key, val in vars(args).items():
        if "__" in key and val is not None:
            sec, name = key.split("__", 1)
            overrides[(sec, name)] = val
    return apply_overrides(cfg, overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConvergenceFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (InputError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SmaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
