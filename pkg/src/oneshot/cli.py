"""Command-line entry point: ``oneshot <subcommand> [flags]``.

Every configuration key can come from a JSON ``--config`` file and be overridden by a
``--<section>.<key>`` flag. The resolved configuration is written to ``<out>/config.json``
and can be fed back through ``--config`` to repeat a run.

Output layout (version 1) inside ``--out``::

    config.json       resolved run configuration
    run.json          subcommand, dataset path, layout version
    subgraph.json     sample
    coverage.txt/.jsonl
    checkpoint.pt, train_report.jsonl          train, search
    metrics.json      eval
    sweep.txt, sweep.json                       sweep
    trials.jsonl, best.json                     search
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import evaluation
from .kg import ConfigError, LoadError, augment_inverse, load_dataset
from .predictor import Predictor, PredictorConfig, load_checkpoint, save_checkpoint
from .sampler import ObservedGraph, SamplerConfig, extract_subgraph
from .search import TrialLog, bilevel_search
from .training import TrainConfig, fit

LAYOUT_VERSION = 1
SUBCOMMANDS = ("prepare", "sample", "coverage", "train", "eval", "sweep", "search")
log = logging.getLogger("oneshot")


@dataclass
class EvalConfig:
    split: str = "valid"
    batch_size: int = 32
    max_queries: int | None = None


@dataclass
class SearchConfig:
    predictor_budget: int = 10
    sampler_budget: int = 10
    epochs_per_trial: int = 2
    n_init: int = 5
    n_candidates: int = 500
    final_epochs: int | None = None


@dataclass
class RunConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        sections = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
        kwargs = {}
        for name, value in data.items():
            sub = _SECTIONS.get(name)
            if sub is None:
                kwargs[name] = value
                continue
            allowed = {f.name for f in fields(sub)}
            bad = set(value) - allowed
            if bad:
                raise ConfigError(f"unknown config key: {name}.{sorted(bad)[0]}")
            kwargs[name] = sub(**value)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {"sampler": SamplerConfig, "predictor": PredictorConfig, "train": TrainConfig, "eval": EvalConfig, "search": SearchConfig}


def _parse_value(text: str, annotation):
    ann = str(annotation)
    if "dict" in ann:
        return json.loads(text)
    if "bool" in ann:
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if text.lower() == "none" and "None" in ann:
        return None
    if "int" in ann and "float" not in ann:
        return int(text)
    if "float" in ann:
        return float(text)
    return text


def _add_config_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("configuration keys")
    for section, cls in _SECTIONS.items():
        hints = typing.get_type_hints(cls)
        default = cls()
        for f in fields(cls):
            group.add_argument(
                f"--{section}.{f.name}",
                dest=f"cfg:{section}.{f.name}",
                default=argparse.SUPPRESS,
                metavar=f.name.upper(),
                help=f"(default: {getattr(default, f.name)!r})",
                type=lambda s, a=hints[f.name]: _parse_value(s, a),
            )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oneshot", description="One-shot subgraph link prediction.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    def common(p: argparse.ArgumentParser, dataset=True):
        if dataset:
            p.add_argument("--dataset", required=True, help="directory with train/valid/test.txt")
        p.add_argument("--config", help="JSON run configuration (default: none)")
        p.add_argument("--out", default="runs/latest", help="output directory (default: runs/latest)")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every module (default: 0)")
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="torch threads (default: 1)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress (default: False)")
        _add_config_flags(p)

    p = sub.add_parser("prepare", help="load, augment and print dataset statistics")
    common(p)

    p = sub.add_parser("sample", help="extract and serialize one subgraph")
    common(p)
    p.add_argument("--head", required=True, help="query entity (name or integer id)")
    p.add_argument("--relation", required=True, help="query relation (name or integer id)")
    p.add_argument("--split", default="valid", help="observation graph of this split (default: valid)")

    p = sub.add_parser("coverage", help="coverage ratio table of sampling heuristics")
    common(p)
    p.add_argument("--heuristics", default="ppr,bfs,rw,pr,rand", help="(default: ppr,bfs,rw,pr,rand)")
    p.add_argument("--ratios", default="0.1,0.2,0.5", help="(default: 0.1,0.2,0.5)")
    p.add_argument("--split", default="test", help="(default: test)")
    p.add_argument("--max-queries", type=int, default=None, help="subsample queries (default: all)")

    p = sub.add_parser("train", help="train a predictor and save the best checkpoint")
    common(p)

    p = sub.add_parser("eval", help="filtered ranking metrics of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint path")

    p = sub.add_parser("sweep", help="MRR over a grid of sampling ratios")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint path")
    p.add_argument("--entity-ratios", default="0.05,0.1,0.2,0.5,1.0", help="(default: 0.05,0.1,0.2,0.5,1.0)")
    p.add_argument("--edge-ratios", default="0.05,0.1,0.2,0.5,1.0", help="(default: 0.05,0.1,0.2,0.5,1.0)")

    p = sub.add_parser("search", help="two-stage hyperparameter search")
    common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
    cfg = RunConfig.from_dict(data)
    merged = cfg.to_dict()
    for key, value in vars(args).items():
        if key.startswith("cfg:"):
            section, name = key[4:].split(".", 1)
            merged[section][name] = value
    if hasattr(args, "seed"):
        merged["seed"] = args.seed
        for section in ("sampler", "predictor", "train"):
            merged[section]["seed"] = args.seed
    if hasattr(args, "threads"):
        merged["threads"] = args.threads
    return RunConfig.from_dict(merged)


def _ratios(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _lookup(name: str, vocab) -> int:
    if name in vocab:
        return vocab.index(name)
    try:
        idx = int(name)
    except ValueError:
        raise ConfigError(f"unknown name {name!r}") from None
    if not 0 <= idx < len(vocab):
        raise ConfigError(f"id {idx} out of range")
    return idx


def _histogram(values) -> str:
    vals, counts = np.unique(np.asarray(values), return_counts=True)
    return " ".join(f"{v}:{c}" for v, c in zip(vals.tolist(), counts.tolist()))


def _subgraph_distances(sub) -> np.ndarray:
    n = sub.n_entities
    adj = [[] for _ in range(n)]
    for h, _, t in sub.edges.tolist():
        adj[h].append(t)
        adj[t].append(h)
    dist = np.full(n, -1)
    dist[sub.anchor] = 0
    frontier = [sub.anchor]
    while frontier:
        nxt = []
        for x in frontier:
            for y in adj[x]:
                if dist[y] < 0:
                    dist[y] = dist[x] + 1
                    nxt.append(y)
        frontier = nxt
    return dist


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in SUBCOMMANDS + ("-h", "--help"):
        parser.print_usage(sys.stderr)
        print(f"oneshot: error: first argument must be one of {', '.join(SUBCOMMANDS)}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
        return _dispatch(args, cfg)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (LoadError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, cfg: RunConfig) -> int:
    torch.set_num_threads(max(1, cfg.threads))
    torch.use_deterministic_algorithms(True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    _write_json(out / "run.json", {"command": args.command, "dataset": args.dataset, "layout_version": LAYOUT_VERSION})

    kg = augment_inverse(load_dataset(args.dataset))
    cmd = args.command

    if cmd == "prepare":
        st = kg.stats()
        print(f"{'dataset':<12}{'|V|':>10}{'|R|':>6}{'train':>10}{'valid':>10}{'test':>10}")
        print(f"{Path(args.dataset).name:<12}{st['entities']:>10}{st['relations']:>6}{st['train']:>10}{st['valid']:>10}{st['test']:>10}")
        print(f"|V|={st['entities']} |R|={st['relations']}")
        return 0

    if cmd == "sample":
        u = _lookup(args.head, list(kg.entities))
        q = _lookup(args.relation, list(kg.relations))
        graph = evaluation.observation_graph(kg, args.split)
        sub = extract_subgraph(graph, u, q, cfg.sampler)
        (out / "subgraph.json").write_text(sub.to_json() + "\n", encoding="utf-8")
        deg = np.bincount(sub.edges[:, 0], minlength=sub.n_entities) + np.bincount(sub.edges[:, 2], minlength=sub.n_entities)
        print(f"entities {sub.n_entities} / {kg.n_entities}  edges {len(sub.edges)} / {graph.n_edges}")
        print(f"provenance {json.dumps(sub.provenance, sort_keys=True)}")
        print(f"degree histogram   {_histogram(deg)}")
        print(f"distance histogram {_histogram(_subgraph_distances(sub))}  (-1 = unreachable)")
        return 0

    if cmd == "coverage":
        ratios = _ratios(args.ratios)
        heur = [h.strip().lower() for h in args.heuristics.split(",") if h.strip()]
        table = evaluation.coverage_ratio(kg, args.split, heur, ratios, cfg.sampler, max_queries=args.max_queries)
        name = Path(args.dataset).name
        text = evaluation.format_coverage_table(table, name)
        print(text)
        (out / "coverage.txt").write_text(text + "\n", encoding="utf-8")
        (out / "coverage.jsonl").write_text(evaluation.coverage_records(table, name) + "\n", encoding="utf-8")
        return 0

    if cmd == "train":
        report_path = out / "train_report.jsonl"
        report_path.write_text("", encoding="utf-8")

        def on_epoch(stats):
            with open(report_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(stats), sort_keys=True) + "\n")
            print(f"epoch {stats.epoch} loss {stats.loss:.4f} valid mrr {stats.valid['mrr']:.4f} ({stats.seconds:.1f}s)")

        result = fit(kg, cfg.sampler, cfg.predictor, cfg.train, callback=on_epoch)
        save_checkpoint(result.model, out / "checkpoint.pt", n_entities=kg.n_entities)
        print(f"best epoch {result.report.best_epoch} valid mrr {result.report.best_mrr:.4f}")
        return 0

    if cmd == "eval":
        model = load_checkpoint(args.checkpoint, kg.n_relations)
        rep = evaluation.evaluate(kg, cfg.eval.split, cfg.sampler, model, cfg.eval.batch_size, cfg.eval.max_queries, cfg.seed)
        _write_json(out / "metrics.json", rep.summary())
        print(f"{cfg.eval.split}: MRR {rep.mrr:.4f}  H@1 {100 * rep.hits1:.1f}  H@10 {100 * rep.hits10:.1f}  "
              f"queries {rep.n_queries}  missed {rep.missed}")
        return 0

    if cmd == "sweep":
        model = load_checkpoint(args.checkpoint, kg.n_relations)
        res = evaluation.extrapolation_sweep(
            kg, model, cfg.sampler, _ratios(args.entity_ratios), _ratios(args.edge_ratios),
            split=cfg.eval.split, batch_size=cfg.eval.batch_size, max_queries=cfg.eval.max_queries, seed=cfg.seed,
        )
        text = res.to_grid_text()
        print(text, end="")
        (out / "sweep.txt").write_text(text, encoding="utf-8")
        _write_json(out / "sweep.json", res.to_record())
        return 0

    if cmd == "search":
        sc = cfg.search
        res = bilevel_search(
            kg, sc.predictor_budget, sc.sampler_budget, sampler_cfg=cfg.sampler, train_cfg=cfg.train,
            epochs_per_trial=sc.epochs_per_trial, seed=cfg.seed, log_path=out / "trials.jsonl",
            n_init=sc.n_init, n_candidates=sc.n_candidates, final_epochs=sc.final_epochs,
            base_config=cfg.predictor,
        )
        model = Predictor(res.predictor, kg.n_relations)
        model.load_state_dict(res.state["params"])
        save_checkpoint(model, out / "checkpoint.pt", n_entities=kg.n_entities)
        _write_json(out / "best.json", {
            "sampler": asdict(res.sampler), "predictor": asdict(res.predictor),
            "stage1_mrr": res.stage1_mrr, "final_mrr": res.final_mrr,
        })
        print(f"stage 1 MRR {res.stage1_mrr:.4f}  final MRR {res.final_mrr:.4f}  trials {len(res.audit)}")
        return 0
    raise AssertionError(cmd)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
