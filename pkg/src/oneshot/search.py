"""Two-stage hyperparameter search with a random-forest surrogate and expected improvement.

Stage one freezes the sampler and searches predictor hyperparameters (each trial trains a
model); stage two freezes the trained predictor and searches sampling ratios, which only
requires re-evaluation.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import norm
from sklearn.ensemble import RandomForestRegressor

from .evaluation import evaluate, observation_graph
from .kg import ConfigError, KnowledgeGraph, known_answers
from .predictor import DESIGN_SPACE, Predictor, PredictorConfig, model_from_state
from .sampler import SamplerConfig
from .training import TrainConfig, TrainingError, fit

log = logging.getLogger(__name__)

CATEGORICAL, INTEGER, CONTINUOUS = "categorical", "integer", "continuous"


@dataclass(frozen=True)
class Dimension:
    """One search dimension.

    ``domain`` holds the choices for categorical / integer dims and ``(lo, hi)`` for
    continuous ones; ``closed`` says whether each continuous end is included.
    """

    name: str
    kind: str
    domain: tuple
    closed: tuple[bool, bool] = (True, True)

    def sample(self, rng: np.random.Generator):
        if self.kind == CONTINUOUS:
            lo, hi = self.domain
            while True:
                x = float(lo + (hi - lo) * rng.random())
                if self.contains(x):
                    return x
        return self.domain[int(rng.integers(len(self.domain)))]

    def contains(self, value) -> bool:
        if self.kind != CONTINUOUS:
            return value in self.domain
        lo, hi = self.domain
        lo_ok = value >= lo if self.closed[0] else value > lo
        hi_ok = value <= hi if self.closed[1] else value < hi
        return bool(lo_ok and hi_ok)

    def encode(self, value) -> list[float]:
        if self.kind == CATEGORICAL:
            return [float(value == c) for c in self.domain]
        lo, hi = (self.domain[0], self.domain[-1]) if self.kind == INTEGER else self.domain
        if lo == hi:
            return [0.0]
        return [(float(value) - lo) / (hi - lo)]


@dataclass
class SearchSpace:
    dimensions: list[Dimension]
    stage: str

    def sample(self, rng: np.random.Generator) -> dict:
        return {d.name: d.sample(rng) for d in self.dimensions}

    def contains(self, config: dict) -> bool:
        return set(config) == {d.name for d in self.dimensions} and all(
            d.contains(config[d.name]) for d in self.dimensions
        )

    def encode(self, config: dict) -> np.ndarray:
        return np.array([x for d in self.dimensions for x in d.encode(config[d.name])])


def predictor_space() -> SearchSpace:
    dims = [
        Dimension("layers", INTEGER, DESIGN_SPACE["layers"]),
        Dimension("hidden_dim", INTEGER, DESIGN_SPACE["hidden_dim"]),
        Dimension("dropout", CONTINUOUS, DESIGN_SPACE["dropout"], closed=(False, False)),
    ]
    for name in ("act", "agg", "mess", "init", "shortcut", "concat", "readout"):
        dims.append(Dimension(name, CATEGORICAL, DESIGN_SPACE[name]))
    return SearchSpace(dims, "predictor")


def sampler_space(relations=None, lo: float = 0.01) -> SearchSpace:
    """Global (entity_ratio, edge_ratio), or one pair per relation in ``relations``."""
    if relations is None:
        names = ["entity_ratio", "edge_ratio"]
    else:
        names = [f"{k}[{int(q)}]" for q in relations for k in ("entity_ratio", "edge_ratio")]
    return SearchSpace([Dimension(n, CONTINUOUS, (lo, 1.0)) for n in names], "sampler")


def sampler_config_from_point(base: SamplerConfig, point: dict) -> SamplerConfig:
    if "entity_ratio" in point:
        return base.replace(entity_ratio=point["entity_ratio"], edge_ratio=point["edge_ratio"])
    ent, edge = {}, {}
    for key, value in point.items():
        name, q = key[:-1].split("[")
        (ent if name == "entity_ratio" else edge)[int(q)] = value
    return base.replace(relation_entity_ratio=ent, relation_edge_ratio=edge)


@dataclass
class Trial:
    index: int
    config: dict
    measurement: float
    cost: float
    status: str = "ok"
    stage: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class TrialLog:
    """Line-delimited trial records; an existing file is reloaded so a search can resume."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.trials: list[Trial] = []
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                self.trials = [Trial(**json.loads(line)) for line in fh if line.strip()]

    def stage(self, stage: str) -> list[Trial]:
        return [t for t in self.trials if t.stage == stage]

    def append(self, trial: Trial):
        self.trials.append(trial)
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(trial.to_json() + "\n")


class Surrogate:
    def __init__(self, forest: RandomForestRegressor, space: SearchSpace, best: float):
        self.forest = forest
        self.space = space
        self.best = best

    def predict(self, configs: list[dict]) -> tuple[np.ndarray, np.ndarray]:
        """Mean and across-tree variance of the forest at ``configs``."""
        X = np.stack([self.space.encode(c) for c in configs])
        per_tree = np.stack([t.predict(X) for t in self.forest.estimators_])
        return per_tree.mean(axis=0), per_tree.var(axis=0)


def rf_surrogate_fit(trials: list[Trial], space: SearchSpace, n_trees: int = 100, seed: int = 0) -> Surrogate:
    """Fit a bootstrap random forest from encoded configs to measurements.

    Failed trials enter with measurement 0. Rows are put in a canonical order first so
    the forest does not depend on the order the trials were recorded in.
    """
    if not any(t.status == "ok" for t in trials):
        raise ValueError("cannot fit a surrogate without a successful trial")
    rows = sorted(
        ((tuple(space.encode(t.config)), t.measurement if t.status == "ok" else 0.0) for t in trials),
    )
    X = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    forest = RandomForestRegressor(
        n_estimators=n_trees,
        bootstrap=True,
        max_features=5 / 6 if X.shape[1] > 1 else 1.0,
        random_state=seed,
    ).fit(X, y)
    best = max(t.measurement for t in trials if t.status == "ok")
    return Surrogate(forest, space, best)


def expected_improvement(mean, var, best: float, xi: float = 0.0) -> np.ndarray:
    sigma = np.sqrt(np.maximum(var, 0.0))
    imp = mean - best - xi
    ei = np.maximum(imp, 0.0)
    pos = sigma > 0
    z = imp[pos] / sigma[pos]
    ei[pos] = imp[pos] * norm.cdf(z) + sigma[pos] * norm.pdf(z)
    return ei


def suggest_next(surrogate: Surrogate, space: SearchSpace, n_candidates: int, rng: np.random.Generator) -> dict:
    """Draw random candidates and return the one with the highest expected improvement.

    Ties go to the earliest draw.
    """
    cands = [space.sample(rng) for _ in range(max(1, n_candidates))]
    if len(cands) == 1:
        return cands[0]
    mean, var = surrogate.predict(cands)
    return cands[int(np.argmax(expected_improvement(mean, var, surrogate.best)))]


def incumbent(trials: list[Trial]) -> Trial:
    """Best successful trial; the earlier one wins a tie."""
    ok = [t for t in trials if t.status == "ok"]
    if not ok:
        raise ValueError("no successful trial")
    return max(ok, key=lambda t: (t.measurement, -t.index))


def bayes_opt(
    objective: Callable[[dict], float],
    space: SearchSpace,
    budget: int,
    n_init: int = 5,
    n_candidates: int = 500,
    n_trees: int = 100,
    seed: int = 0,
    initial: list[dict] | None = None,
    trial_log: TrialLog | None = None,
) -> list[Trial]:
    """Sequential model-based optimization (maximization) of ``objective`` over ``space``.

    Trials already present in ``trial_log`` for this stage are kept and the search continues
    after them. ``initial`` configs are evaluated first, then random warm-start draws up to
    ``n_init`` trials, then EI suggestions. An objective that raises ``TrainingError`` or
    returns a non-finite value is recorded as a failed trial with measurement 0.
    """
    if budget < 1:
        raise ConfigError("search budget must be >= 1")
    trial_log = trial_log or TrialLog()
    trials = list(trial_log.stage(space.stage))
    initial = list(initial or [])
    n_init = min(n_init, budget)
    for i in range(len(trials), budget):
        rng = np.random.default_rng([seed, i])
        if i < len(initial):
            config = initial[i]
        elif i < max(n_init, len(initial)) or not any(t.status == "ok" for t in trials):
            config = space.sample(rng)
        else:
            surrogate = rf_surrogate_fit(trials, space, n_trees=n_trees, seed=seed + i)
            config = suggest_next(surrogate, space, n_candidates, rng)
        t0 = time.perf_counter()
        status = "ok"
        try:
            value = float(objective(config))
            if not math.isfinite(value):
                raise TrainingError("non-finite measurement")
        except TrainingError as exc:
            log.warning("trial %d failed: %s", i, exc)
            value, status = 0.0, "failed"
        trial = Trial(i, config, value, time.perf_counter() - t0, status, space.stage)
        trial_log.append(trial)
        trials.append(trial)
    return trials


def _jsonable(config: dict) -> dict:
    return {k: (v.item() if hasattr(v, "item") else v) for k, v in config.items()}


@dataclass
class PredictorSearchResult:
    config: PredictorConfig
    state: dict
    trials: list[Trial]


def search_predictor(
    kg: KnowledgeGraph,
    sampler_cfg: SamplerConfig,
    budget: int,
    epochs_per_trial: int = 2,
    train_cfg: TrainConfig | None = None,
    space: SearchSpace | None = None,
    n_init: int = 5,
    n_candidates: int = 500,
    final_epochs: int | None = None,
    seed: int = 0,
    trial_log: TrialLog | None = None,
    base_config: PredictorConfig | None = None,
) -> PredictorSearchResult:
    """Search predictor hyperparameters with the sampler frozen.

    Each trial trains a fresh model for ``epochs_per_trial`` epochs and is measured by its
    best validation MRR. With ``final_epochs`` the incumbent is retrained for that many epochs.
    """
    if budget < 1:
        raise ConfigError("predictor search budget must be >= 1")
    space = space or predictor_space()
    train_cfg = train_cfg or TrainConfig()
    base = asdict(base_config or PredictorConfig())
    trial_log = trial_log or TrialLog()
    states: dict[int, dict] = {}

    def objective(point):
        index = len(trial_log.stage(space.stage))
        cfg = PredictorConfig(**{**base, **_jsonable(point)})
        result = fit(kg, sampler_cfg, cfg, TrainConfig(**{**asdict(train_cfg), "epochs": epochs_per_trial}))
        states[index] = result.best_state
        return result.report.best_mrr

    trials = bayes_opt(objective, space, budget, n_init, n_candidates, seed=seed, trial_log=trial_log)
    best = incumbent(trials)
    cfg = PredictorConfig(**{**base, **_jsonable(best.config)})
    # trials restored from a log have no parameters in memory; retrain those
    state = states.get(best.index)
    if final_epochs is not None or state is None:
        epochs = final_epochs or epochs_per_trial
        state = fit(kg, sampler_cfg, cfg, TrainConfig(**{**asdict(train_cfg), "epochs": epochs})).best_state
    return PredictorSearchResult(cfg, state, trials)


@dataclass
class SamplerSearchResult:
    config: SamplerConfig
    measurement: float
    trials: list[Trial]


def search_sampler(
    kg: KnowledgeGraph,
    model: Predictor | dict,
    base_cfg: SamplerConfig,
    budget: int = 20,
    candidates: list[tuple[float, float]] | None = None,
    per_relation: bool = False,
    relations=None,
    n_init: int = 5,
    n_candidates: int = 500,
    seed: int = 0,
    trial_log: TrialLog | None = None,
    eval_kwargs: dict | None = None,
) -> SamplerSearchResult:
    """Search sampling ratios for a frozen predictor by validation MRR, without training.

    With ``candidates`` exactly those global (entity, edge) ratio pairs are evaluated.
    Otherwise the frozen configuration ``base_cfg`` is always the first trial, so the
    incumbent can never be worse than it.
    """
    if isinstance(model, dict):
        model = model_from_state(model, kg.n_relations)
    eval_kwargs = dict(eval_kwargs or {})
    graph = observation_graph(kg, "valid")
    known = known_answers(kg)

    if per_relation:
        if relations is None:
            relations = sorted(set(kg.valid[:, 1].tolist()))
        space = sampler_space(relations)
        first = {}
        for q in relations:
            rv, re = base_cfg.ratios(q)
            first[f"entity_ratio[{int(q)}]"], first[f"edge_ratio[{int(q)}]"] = rv, re
    else:
        space = sampler_space()
        first = {"entity_ratio": base_cfg.entity_ratio, "edge_ratio": base_cfg.edge_ratio}

    def objective(point):
        cfg = sampler_config_from_point(base_cfg, point)
        return evaluate(kg, "valid", cfg, model, graph=graph, known=known, **eval_kwargs).mrr

    if candidates is not None:
        initial = [{"entity_ratio": float(a), "edge_ratio": float(b)} for a, b in candidates]
        trials = bayes_opt(objective, space, len(initial), initial=initial, seed=seed, trial_log=trial_log)
    else:
        trials = bayes_opt(
            objective, space, budget, n_init=n_init, n_candidates=n_candidates, seed=seed,
            initial=[first], trial_log=trial_log,
        )
    best = incumbent(trials)
    return SamplerSearchResult(sampler_config_from_point(base_cfg, best.config), best.measurement, trials)


@dataclass
class BilevelResult:
    sampler: SamplerConfig
    predictor: PredictorConfig
    state: dict
    stage1: list[Trial]
    stage2: list[Trial]
    stage1_mrr: float
    final_mrr: float

    @property
    def audit(self) -> list[Trial]:
        return self.stage1 + self.stage2


def bilevel_search(
    kg: KnowledgeGraph,
    predictor_budget: int,
    sampler_budget: int,
    sampler_cfg: SamplerConfig | None = None,
    train_cfg: TrainConfig | None = None,
    epochs_per_trial: int = 2,
    predictor_space_: SearchSpace | None = None,
    seed: int = 0,
    log_path=None,
    **kwargs,
) -> BilevelResult:
    """Predictor search under the frozen default sampler, then ratio search under the frozen predictor."""
    if predictor_budget < 1 or sampler_budget < 1:
        raise ConfigError("both search budgets must be >= 1")
    sampler_cfg = sampler_cfg or SamplerConfig(heuristic="ppr", entity_ratio=0.1, edge_ratio=0.1)
    trial_log = TrialLog(log_path)
    stage1 = search_predictor(
        kg, sampler_cfg, predictor_budget, epochs_per_trial, train_cfg, predictor_space_,
        seed=seed, trial_log=trial_log, **kwargs,
    )
    stage2 = search_sampler(kg, stage1.state, sampler_cfg, sampler_budget, seed=seed, trial_log=trial_log)
    return BilevelResult(
        sampler=stage2.config,
        predictor=stage1.config,
        state=stage1.state,
        stage1=stage1.trials,
        stage2=stage2.trials,
        stage1_mrr=incumbent(stage1.trials).measurement,
        final_mrr=stage2.measurement,
    )
