"""Mini-batch training with per-epoch observation/query re-splits."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .evaluation import MetricReport, evaluate, observation_graph
from .kg import ConfigError, KnowledgeGraph, known_answers, split_train_edges
from .predictor import GraphBatch, Predictor, PredictorConfig, checkpoint_state
from .sampler import ObservedGraph, SamplerConfig, extract_subgraphs

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    grad_clip: float | None = None
    split_fraction: float = 0.95
    # cap on query rows per epoch (None = every query of the split)
    max_queries_per_epoch: int | None = None
    # cap on validation queries used for model selection (None = whole split)
    max_valid_queries: int | None = None
    eval_batch_size: int = 32
    check_leakage: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("train.learning_rate must be non-negative")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("train.optimizer must be 'adam' or 'sgd'")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("train.split_fraction must lie in (0, 1)")


class TrainingError(RuntimeError):
    pass


class LeakageError(AssertionError):
    pass


def bce_loss(logits: torch.Tensor, answer: int) -> torch.Tensor:
    """Summed binary cross-entropy over the subgraph's entities, the answer labelled 1."""
    y = torch.zeros_like(logits)
    y[answer] = 1.0
    return F.binary_cross_entropy_with_logits(logits, y, reduction="sum")


def make_optimizer(model: Predictor, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(
            model.parameters(),
            lr=cfg.learning_rate,
            betas=(cfg.beta1, cfg.beta2),
            eps=cfg.eps,
            weight_decay=cfg.weight_decay,
        )
    return torch.optim.SGD(
        model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


@dataclass
class EpochStats:
    epoch: int
    loss: float
    seconds: float
    query_facts: int
    queries: int
    missed: int
    steps: int
    valid: dict = field(default_factory=dict)


def check_no_leakage(graph: ObservedGraph, queries: np.ndarray, kg: KnowledgeGraph) -> None:
    """Raise if a query triple or its inverse copy is an observation edge."""
    obs = {tuple(t) for t in graph.triples.tolist()}
    for h, r, t in queries.tolist():
        if (h, r, t) in obs:
            raise LeakageError(f"query ({h}, {r}, {t}) is an observation edge")
        if kg.augmented and (t, int(kg.inverse_relation(r)), h) in obs:
            raise LeakageError(f"inverse of query ({h}, {r}, {t}) is an observation edge")


def _batch_loss(model, subs, answers, generator):
    batch = GraphBatch.from_subgraphs(subs)
    logits = model(batch, train=True, generator=generator)
    losses = [bce_loss(l, a) for l, a in zip(batch.split(logits), answers)]
    return torch.stack(losses).mean()


def train_epoch(
    kg: KnowledgeGraph,
    sampler_cfg: SamplerConfig,
    model: Predictor,
    optimizer: torch.optim.Optimizer,
    cfg: TrainConfig,
    seed: int,
    epoch: int = 0,
) -> EpochStats:
    """One pass over a fresh query split; subgraphs see observation edges only."""
    t0 = time.perf_counter()
    split = split_train_edges(kg, cfg.split_fraction, seed)
    graph = ObservedGraph.from_kg(kg, split.observed)
    queries = kg.train[split.queries]
    if cfg.check_leakage:
        check_no_leakage(graph, queries, kg)
    rng = np.random.default_rng(seed)
    queries = queries[rng.permutation(len(queries))]
    if cfg.max_queries_per_epoch is not None:
        queries = queries[: cfg.max_queries_per_epoch]
    gen = torch.Generator().manual_seed(seed)

    model.train()
    total, n_used, missed, steps = 0.0, 0, 0, 0
    for start in range(0, len(queries), cfg.batch_size):
        chunk = queries[start : start + cfg.batch_size]
        subs = extract_subgraphs(graph, chunk[:, 0], chunk[:, 1], sampler_cfg)
        kept, answers = [], []
        for (_, _, v), sub in zip(chunk.tolist(), subs):
            local = int(sub.local(v))
            if local < 0:
                missed += 1
                continue
            kept.append(sub)
            answers.append(local)
        if not kept:
            continue
        optimizer.zero_grad()
        loss = _batch_loss(model, kept, answers, gen)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}, step {steps}, queries {chunk.tolist()}")
        loss.backward()
        if cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        total += loss.item() * len(kept)
        n_used += len(kept)
        steps += 1
    n_facts = len(split.queries) // 2 if kg.augmented else len(split.queries)
    return EpochStats(
        epoch=epoch,
        loss=total / max(n_used, 1),
        seconds=time.perf_counter() - t0,
        query_facts=n_facts,
        queries=n_used,
        missed=missed,
        steps=steps,
    )


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    best_epoch: int
    best_mrr: float

    def to_lines(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.epochs)


@dataclass
class FitResult:
    model: Predictor
    best_state: dict
    report: TrainReport


def fit(
    kg: KnowledgeGraph,
    sampler_cfg: SamplerConfig,
    predictor_cfg: PredictorConfig,
    train_cfg: TrainConfig,
    valid_sampler_cfg: SamplerConfig | None = None,
    callback=None,
) -> FitResult:
    """Train for ``train_cfg.epochs`` epochs, keeping the parameters with the best validation MRR.

    Ties keep the earlier epoch. ``callback(stats)`` is invoked after each epoch.
    """
    train_cfg.validate()
    if len(kg.valid) == 0:
        raise ConfigError("fit needs a non-empty valid split")
    torch.manual_seed(train_cfg.seed)
    model = Predictor(predictor_cfg, kg.n_relations)
    optimizer = make_optimizer(model, train_cfg)
    valid_cfg = valid_sampler_cfg or sampler_cfg
    vgraph = observation_graph(kg, "valid")
    known = known_answers(kg)

    history: list[EpochStats] = []
    best_state, best_mrr, best_epoch = None, -math.inf, 0
    for epoch in range(1, train_cfg.epochs + 1):
        stats = train_epoch(kg, sampler_cfg, model, optimizer, train_cfg, epoch_seed(train_cfg.seed, epoch), epoch)
        rep: MetricReport = evaluate(
            kg,
            "valid",
            valid_cfg,
            model,
            batch_size=train_cfg.eval_batch_size,
            max_queries=train_cfg.max_valid_queries,
            seed=train_cfg.seed,
            graph=vgraph,
            known=known,
        )
        stats.valid = rep.summary()
        history.append(stats)
        log.info("epoch %d loss %.4f valid mrr %.4f (%.1fs)", epoch, stats.loss, rep.mrr, stats.seconds)
        if callback is not None:
            callback(stats)
        if rep.mrr > best_mrr:
            best_mrr, best_epoch = rep.mrr, epoch
            best_state = checkpoint_state(model)
    model.load_state_dict(best_state["params"])
    return FitResult(model=model, best_state=best_state, report=TrainReport(history, best_epoch, best_mrr))
