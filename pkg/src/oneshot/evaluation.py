"""Filtered ranking metrics, coverage ratios of sampling heuristics, extrapolation sweeps."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .kg import ConfigError, KnowledgeGraph, known_answers
from .predictor import GraphBatch, Predictor
from .sampler import (
    ObservedGraph,
    SamplerConfig,
    budget,
    extract_subgraphs,
    heuristic_scores_batch,
    select_entities,
)

SENTINEL = -np.inf


@dataclass
class MetricReport:
    mrr: float
    hits1: float
    hits10: float
    n_queries: int
    missed: int
    reciprocal_ranks: list[float] = field(default_factory=list, repr=False)

    @classmethod
    def from_ranks(cls, ranks, missed: int = 0) -> "MetricReport":
        ranks = np.asarray(ranks, dtype=np.float64)
        if len(ranks) == 0:
            return cls(0.0, 0.0, 0.0, 0, missed)
        return cls(
            mrr=float(np.mean(1.0 / ranks)),
            hits1=float(np.mean(ranks <= 1)),
            hits10=float(np.mean(ranks <= 10)),
            n_queries=len(ranks),
            missed=missed,
            reciprocal_ranks=(1.0 / ranks).tolist(),
        )

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("reciprocal_ranks")
        return d


def rank_filtered(scores, answer: int, known_true) -> float:
    """Filtered rank of ``answer`` with mean-rank tie handling.

    ``known_true`` are the other correct answers of the query; they are removed before
    ranking. Entities outside the subgraph should carry ``SENTINEL``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    filt = np.fromiter(known_true, dtype=np.int64) if len(known_true) else np.zeros(0, np.int64)
    if np.any(filt == answer):
        raise ValueError(f"answer {answer} is among the filtered entities")
    keep = np.ones(len(scores), dtype=bool)
    keep[filt] = False
    s = scores[keep]
    target = scores[answer]
    greater = np.count_nonzero(s > target)
    ties = np.count_nonzero(s == target) - 1
    return 1.0 + greater + ties / 2.0


def random_scorer_mrr(n: int) -> float:
    """Expected MRR of a uniformly random ranking of n candidates, H_n / n."""
    return float(np.sum(1.0 / np.arange(1, n + 1)) / n)


def observation_graph(kg: KnowledgeGraph, split: str) -> ObservedGraph:
    """Train facts when answering valid queries, train + valid when answering test queries."""
    if split not in ("valid", "test"):
        raise ConfigError(f"evaluation split must be 'valid' or 'test', got {split!r}")
    return ObservedGraph.from_kg(kg, include_valid=(split == "test"))


def _select(n: int, max_queries: int | None, seed: int) -> np.ndarray:
    if max_queries is None or max_queries >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=max_queries, replace=False))


@torch.no_grad()
def evaluate(
    kg: KnowledgeGraph,
    split: str,
    sampler_cfg: SamplerConfig,
    model: Predictor,
    batch_size: int = 32,
    max_queries: int | None = None,
    seed: int = 0,
    graph: ObservedGraph | None = None,
    known: dict | None = None,
) -> MetricReport:
    """Filtered MRR / Hits@k over every query row of ``split`` (both directions when augmented).

    Ranking is over all entities; those not sampled into the query's subgraph share the
    sentinel score.
    """
    graph = graph or observation_graph(kg, split)
    known = known if known is not None else known_answers(kg)
    rows = kg.split(split)
    rows = rows[_select(len(rows), max_queries, seed)]
    model.eval()
    ranks, missed = [], 0
    for start in range(0, len(rows), batch_size):
        chunk = rows[start : start + batch_size]
        subs = extract_subgraphs(graph, chunk[:, 0], chunk[:, 1], sampler_cfg)
        logits = model(GraphBatch.from_subgraphs(subs), train=False)
        offsets = np.zeros(len(subs) + 1, dtype=np.int64)
        np.cumsum([s.n_entities for s in subs], out=offsets[1:])
        logits = logits.detach().cpu().double().numpy()
        for (u, q, v), sub, a, b in zip(chunk.tolist(), subs, offsets[:-1], offsets[1:]):
            full = np.full(kg.n_entities, SENTINEL)
            full[sub.entities] = logits[a:b]
            if not sub.contains(v):
                missed += 1
            ranks.append(rank_filtered(full, v, known[(u, q)] - {v}))
    return MetricReport.from_ranks(ranks, missed)


def coverage_ratio(
    kg: KnowledgeGraph,
    split: str = "test",
    heuristics=("ppr",),
    ratios=(0.1, 0.2, 0.5),
    base_cfg: SamplerConfig | None = None,
    max_queries: int | None = None,
    chunk: int = 64,
    seed: int = 0,
    graph: ObservedGraph | None = None,
) -> dict[str, dict[float, float]]:
    """Fraction of ``split`` answers that survive entity sampling, per heuristic and ratio."""
    base_cfg = base_cfg or SamplerConfig()
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ConfigError(f"coverage ratios must lie in (0, 1], got {r}")
    graph = graph or observation_graph(kg, split)
    rows = kg.split(split)
    rows = rows[_select(len(rows), max_queries, seed)]
    table: dict[str, dict[float, float]] = {}
    for h in heuristics:
        cfg = base_cfg.replace(heuristic=h)
        hits = np.zeros(len(ratios))
        for start in range(0, len(rows), chunk):
            part = rows[start : start + chunk]
            scores = heuristic_scores_batch(graph, part[:, 0], cfg)
            for (u, _, v), s in zip(part.tolist(), scores):
                for j, r in enumerate(ratios):
                    ents = select_entities(s, u, budget(r, kg.n_entities))
                    hits[j] += np.isin(v, ents).item()
        table[cfg.heuristic] = {float(r): float(hits[j] / max(len(rows), 1)) for j, r in enumerate(ratios)}
    return table


HEURISTIC_LABELS = {
    "rand": "Random Sampling (RAND)",
    "pr": "PageRank (PR)",
    "rw": "Random Walk (RW)",
    "bfs": "Breadth-first-searching (BFS)",
    "ppr": "Personalized PageRank (PPR)",
}


def format_coverage_table(table: dict[str, dict[float, float]], dataset: str = "") -> str:
    ratios = sorted({r for row in table.values() for r in row})
    width = max(len(HEURISTIC_LABELS.get(h, h)) for h in table) + 2
    head = "heuristics".ljust(width) + "".join(f"r={r:<8g}" for r in ratios)
    lines = [dataset, head] if dataset else [head]
    for h in ("rand", "pr", "rw", "bfs", "ppr"):
        if h in table:
            lines.append(HEURISTIC_LABELS[h].ljust(width) + "".join(f"{table[h][r]:<10.3f}" for r in ratios))
    return "\n".join(lines)


def coverage_records(table: dict[str, dict[float, float]], dataset: str = "") -> str:
    return "\n".join(
        json.dumps({"dataset": dataset, "heuristic": h, "entity_ratio": r, "coverage": cr}, sort_keys=True)
        for h, row in table.items()
        for r, cr in row.items()
    )


@dataclass
class SweepResult:
    entity_ratios: list[float]
    edge_ratios: list[float]
    mrr: np.ndarray

    def to_grid_text(self) -> str:
        """Whitespace grid: header row of edge ratios, then one row per entity ratio."""
        lines = ["r_V\\r_E " + " ".join(f"{r:g}" for r in self.edge_ratios)]
        for rv, row in zip(self.entity_ratios, self.mrr):
            lines.append(f"{rv:g} " + " ".join(f"{x:.6f}" for x in row))
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        return {"entity_ratios": self.entity_ratios, "edge_ratios": self.edge_ratios, "mrr": self.mrr.tolist()}


def extrapolation_sweep(
    kg: KnowledgeGraph,
    model: Predictor,
    base_cfg: SamplerConfig,
    entity_ratios,
    edge_ratios,
    split: str = "valid",
    **eval_kwargs,
) -> SweepResult:
    """Validation MRR of a frozen model at every (entity ratio, edge ratio) cell."""
    entity_ratios, edge_ratios = [float(r) for r in entity_ratios], [float(r) for r in edge_ratios]
    if not entity_ratios or not edge_ratios:
        raise ConfigError("sweep grid must be non-empty")
    graph = observation_graph(kg, split)
    known = known_answers(kg)
    mrr = np.zeros((len(entity_ratios), len(edge_ratios)))
    for i, rv in enumerate(entity_ratios):
        for j, re in enumerate(edge_ratios):
            cfg = base_cfg.replace(entity_ratio=rv, edge_ratio=re, relation_entity_ratio={}, relation_edge_ratio={})
            mrr[i, j] = evaluate(kg, split, cfg, model, graph=graph, known=known, **eval_kwargs).mrr
    return SweepResult(entity_ratios, edge_ratios, mrr)


