"""Command line entry point: ``nictr <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import checkpoint
from .ablation import ABLATION_HEADER, run_mask_ablation, summarise
from .hin import GraphFormatError, HinGraph, load_graph, load_schema, write_graph
from .interaction import MASK_KINDS, parse_kinds
from .metrics import cold_start_report, format_table
from .sampler import SamplerBudget, SamplerConfig, ghn_sample, metapath_sample, node_wise_sample
from .synth import SynthConfig, config_dict, synth
from .train import NumericError, Pipeline, TrainConfig, fit, read_instances, score

log = logging.getLogger("nictr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _graph_files(graph: str) -> tuple[Path, Path]:
    """``--graph`` is a directory holding nodes.tsv/edges.tsv or ``nodes,edges``."""
    if "," in graph:
        nodes, edges = graph.split(",", 1)
        return Path(nodes), Path(edges)
    d = Path(graph)
    return d / "nodes.tsv", d / "edges.tsv"


def _schema_path(args) -> Path:
    if getattr(args, "schema", None):
        return Path(args.schema)
    nodes, _ = _graph_files(args.graph)
    return nodes.parent / "schema.yaml"


def _load(args, stats: dict | None = None) -> HinGraph:
    if not args.graph:
        raise UsageError("--graph is required")
    nodes, edges = _graph_files(args.graph)
    return load_graph(nodes, edges, load_schema(_schema_path(args)), stats)


def _merge_config_file(args, parser) -> None:
    """Fill unset flags from ``--config``; flags given on the command line win."""
    path = getattr(args, "config", None)
    if not path:
        args.file_config = {}
        return
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise GraphFormatError("config file must be a mapping", path)
    args.file_config = doc
    for key, value in doc.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) is None:
            setattr(args, attr, value)


def _train_config(args) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    doc = {k: v for k, v in args.file_config.items() if k in known}
    if getattr(args, "seed", None) is not None:
        doc["seed"] = int(args.seed)
    if getattr(args, "epochs", None) is not None:
        doc["epochs"] = int(args.epochs)
    return TrainConfig.from_dict(doc)


def _emit(text: str, out: str | None) -> None:
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    doc = {k: v for k, v in args.file_config.items() if k in SynthConfig.__dataclass_fields__}
    for name in ("users", "items", "publishers", "articles", "communities", "train", "test", "seed"):
        if getattr(args, name) is not None:
            doc[name] = int(getattr(args, name))
    if args.noise is not None:
        doc["noise"] = float(args.noise)
    cfg = SynthConfig(**doc)
    paths = synth(cfg, args.out)
    (Path(args.out) / "synth.yaml").write_text(yaml.safe_dump(config_dict(cfg), sort_keys=True), encoding="utf-8")
    for name, p in paths.items():
        print(f"{name}\t{p}")
    return EXIT_OK


def cmd_build_graph(args) -> int:
    stats: dict = {}
    g = _load(args, stats)
    for t, c in sorted(stats["nodes"].items()):
        print(f"nodes\t{t}\t{c}")
    for (a, b), c in sorted(stats["edges"].items()):
        print(f"edges\t{a}-{b}\t{c}")
    print(f"duplicate_edges\t{stats['duplicate_edges']}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_graph(g, out / "nodes.tsv", out / "edges.tsv")
    return EXIT_OK


def _parse_metapaths(text: str | None) -> list[list[str]]:
    if not text:
        return []
    return [[t for t in p.split("-") if t] for p in text.split(";") if p]


def cmd_sample(args) -> int:
    g = _load(args)
    seed = int(args.seed or 0)
    budgets = SamplerBudget.parse(args.budgets).sizes if args.budgets else SamplerConfig().budgets
    cfg = SamplerConfig(kind=args.sampler or "ghn",
                        budgets={t: s for t, s in budgets.items() if t in g.type_names},
                        max_hops=int(args.max_hops or 4), fanout=int(args.fanout or 3),
                        depth=int(args.depth or 2), metapaths=_parse_metapaths(args.metapaths),
                        walks_per_path=int(args.walks or 4))
    rng = np.random.default_rng(seed)
    target = g.resolve(args.target)
    if args.item is None:
        if cfg.kind == "ghn":
            found = ghn_sample(g, target, SamplerBudget(cfg.budgets, cfg.max_hops), rng=rng)
        elif cfg.kind == "nodewise":
            found = node_wise_sample(g, target, cfg.fanout, cfg.depth, rng=rng)
        else:
            found = metapath_sample(g, target, cfg.metapaths, cfg.walks_per_path, rng=rng)
        for nid, hop in sorted(found.items(), key=lambda kv: (kv[1], kv[0])):
            print(f"{g.ids[nid]}\t{g.type_of(nid)}\t{hop}")
        return EXIT_OK
    tc = TrainConfig(sampler=cfg, seed=seed)
    pipe = Pipeline(g, tc)
    from .train import Instance
    nb, masks, _ = pipe.item(Instance(target, g.resolve(args.item), 0), rng)
    for nid, side, hop in zip(nb.nodes, nb.sides, nb.hops):
        print(f"{g.ids[nid]}\t{g.type_of(nid)}\t{hop}\t{side}")
    if args.emit_masks:
        for m in masks.masks():
            print(f"# mask {m.kind}")
            for row in m.matrix:
                print(" ".join(f"{x:.6g}" for x in row))
    return EXIT_OK


def cmd_train(args) -> int:
    g = _load(args)
    if not args.train or not args.out:
        raise UsageError("train needs --train and --out")
    cfg = _train_config(args)
    train = read_instances(args.train, g)
    valid = read_instances(args.valid, g) if args.valid else None

    def report(step, loss, bce, cr):
        log.debug("step=%d\tloss=%.6f\tbce=%.6f\tcr=%.6f", step, loss, bce, cr)

    params, history = fit(g, train, cfg, valid, callback=report)
    for entry in history:
        sys.stderr.write(entry.line() + "\n")
        if args.log:
            with open(args.log, "a", encoding="utf-8") as fh:
                fh.write(entry.line() + "\n")
    checkpoint.save(args.out, params, cfg.to_dict())
    return EXIT_OK


def _parse_buckets(text) -> list[int]:
    if text is None:
        return [0, 1, 6, 21]
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def cmd_eval(args) -> int:
    if not args.checkpoint or not args.test:
        raise UsageError("eval needs --checkpoint and --test")
    g = _load(args)
    params, train_cfg = checkpoint.load(args.checkpoint, g.schema)
    cfg = TrainConfig.from_dict(train_cfg) if train_cfg else TrainConfig()
    test = read_instances(args.test, g)
    scores = score(g, params, test, cfg)
    labels = np.array([i.label for i in test])
    history = np.array([g.degree(i.u, params.v_type) for i in test])
    report = cold_start_report(scores, labels, history, _parse_buckets(args.buckets))
    _emit(format_table(report.rows()), args.report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    g = _load(args)
    if not args.train or not args.test:
        raise UsageError("ablate needs --train and --test")
    cfg = _train_config(args)
    subsets_text = args.subsets or "IG,SG,CG,PG;PG;IG;SG;CG"
    subsets = [parse_kinds(s) for s in subsets_text.split(";") if s.strip()]
    seeds = [int(s) for s in str(args.seeds if args.seeds is not None else cfg.seed).split(",")]
    train, test = read_instances(args.train, g), read_instances(args.test, g)
    rows = run_mask_ablation(g, train, test, cfg, subsets, seeds)
    _emit(format_table(summarise(rows), ABLATION_HEADER), args.report)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nictr", description="Neighbourhood-interaction CTR prediction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def graph_args(sp):
        sp.add_argument("--graph", help="directory with nodes.tsv/edges.tsv, or 'nodes,edges'")
        sp.add_argument("--schema", help="schema YAML (default: schema.yaml next to the nodes)")
        sp.add_argument("--config", help="YAML file supplying any flag")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth", help="generate a synthetic HIN and instance files")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    for name in ("users", "items", "publishers", "articles", "communities", "train", "test", "seed"):
        s.add_argument(f"--{name}", type=int)
    s.add_argument("--noise", type=float)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-graph", help="validate node/edge files and print counts")
    graph_args(s)
    s.add_argument("--out", help="write normalised node/edge files here")
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("sample", help="sample a neighbourhood")
    graph_args(s)
    s.add_argument("--target")
    s.add_argument("--item", help="pair target with this item and print the merged neighbourhood")
    s.add_argument("--budgets", help="type=count,... (ghn)")
    s.add_argument("--sampler", choices=["ghn", "nodewise", "metapath"])
    s.add_argument("--max-hops", type=int)
    s.add_argument("--fanout", type=int)
    s.add_argument("--depth", type=int)
    s.add_argument("--metapaths", help="e.g. 'user-publisher-item;user-item'")
    s.add_argument("--walks", type=int)
    s.add_argument("--emit-masks", action="store_true")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", help="train and write a checkpoint")
    graph_args(s)
    s.add_argument("--train")
    s.add_argument("--valid")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out")
    s.add_argument("--log", help="append epoch lines to this file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    graph_args(s)
    s.add_argument("--checkpoint")
    s.add_argument("--test")
    s.add_argument("--buckets", help="increasing history-count lower edges, e.g. 0,1,6,21")
    s.add_argument("--report", help="also write the table here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="retrain with subsets of the attention masks")
    graph_args(s)
    s.add_argument("--train")
    s.add_argument("--test")
    s.add_argument("--epochs", type=int)
    s.add_argument("--subsets", help="';'-separated mask sets, e.g. 'IG,SG,CG,PG;PG;IG'")
    s.add_argument("--seeds", help="comma-separated seeds")
    s.add_argument("--report")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"nictr: error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        _merge_config_file(args, parser)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"nictr {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        sys.stderr.write(f"nictr {args.command}: numeric failure: {exc}\n")
        return EXIT_NUMERIC
    except (GraphFormatError, checkpoint.CheckpointError, OSError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"nictr {args.command}: {msg}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
