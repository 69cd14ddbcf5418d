import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oneshot.evaluation import evaluate
from oneshot.kg import ConfigError, KnowledgeGraph
from oneshot.predictor import Predictor, PredictorConfig
from oneshot.sampler import SamplerConfig
from oneshot.search import (
    CATEGORICAL,
    CONTINUOUS,
    INTEGER,
    Dimension,
    SearchSpace,
    Trial,
    TrialLog,
    bayes_opt,
    bilevel_search,
    expected_improvement,
    incumbent,
    predictor_space,
    rf_surrogate_fit,
    sampler_space,
    search_predictor,
    search_sampler,
    suggest_next,
)
from oneshot.synthetic import rule_kg
from oneshot.training import TrainConfig, TrainingError, fit

LINE = SearchSpace([Dimension("x", CONTINUOUS, (0.0, 1.0))], "line")


def trials_of(xs, f):
    return [Trial(i, {"x": float(x)}, float(f(x)), 0.0, "ok", "line") for i, x in enumerate(xs)]


def test_surrogate_tracks_identity():
    xs = np.linspace(0, 1, 20)
    sur = rf_surrogate_fit(trials_of(xs, lambda x: x), LINE, seed=0)
    grid = [{"x": float(x)} for x in np.linspace(0, 1, 11)]
    mean, var = sur.predict(grid)
    assert mean[9] > mean[1]
    assert np.all(np.diff(mean) >= -1e-12)
    assert np.all(var >= 0)


def test_surrogate_zero_variance_on_repeated_config():
    sur = rf_surrogate_fit(trials_of([0.3] * 6, lambda x: 0.25), LINE)
    mean, var = sur.predict([{"x": 0.3}])
    assert var[0] == 0 and mean[0] == 0.25


def test_surrogate_ignores_trial_order():
    xs = np.random.default_rng(0).random(15)
    trials = trials_of(xs, np.sin)
    shuffled = [trials[i] for i in np.random.default_rng(1).permutation(15)]
    q = [{"x": float(x)} for x in np.linspace(0, 1, 7)]
    a = rf_surrogate_fit(trials, LINE, seed=3).predict(q)
    b = rf_surrogate_fit(shuffled, LINE, seed=3).predict(q)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_expected_improvement_closed_form():
    ei = expected_improvement(np.array([1.0, 0.0, 2.0]), np.array([0.0, 1.0, 0.0]), best=1.5)
    assert ei[0] == 0 and ei[2] == 0.5
    assert ei[1] == pytest.approx(-1.5 * 0.0668072 + 0.1295176, abs=1e-6)


def test_single_candidate_returned():
    sur = rf_surrogate_fit(trials_of([0.1, 0.9], lambda x: x), LINE)
    rng = np.random.default_rng(5)
    expected = LINE.sample(np.random.default_rng(5))
    assert suggest_next(sur, LINE, 1, rng) == expected


def test_flat_surrogate_picks_first_draw():
    trials = trials_of([0.7] * 4, lambda x: 1.0)
    sur = rf_surrogate_fit(trials, LINE)
    draws = [LINE.sample(np.random.default_rng(9)) for _ in range(1)]
    rng = np.random.default_rng(9)
    assert suggest_next(sur, LINE, 50, rng) == draws[0]


MIXED = SearchSpace(
    [
        Dimension("a", CATEGORICAL, ("x", "y", "z")),
        Dimension("b", INTEGER, (1, 4, 9)),
        Dimension("c", CONTINUOUS, (0.0, 0.5), closed=(False, False)),
        Dimension("d", CATEGORICAL, (True, False)),
    ],
    "mixed",
)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_suggestions_stay_in_domain(seed):
    rng = np.random.default_rng(seed)
    trials = [Trial(i, MIXED.sample(rng), float(rng.random()), 0.0, "ok", "mixed") for i in range(6)]
    sur = rf_surrogate_fit(trials, MIXED, n_trees=10, seed=seed)
    for _ in range(3):
        assert MIXED.contains(suggest_next(sur, MIXED, 20, rng))
    assert MIXED.contains(predictor_space().sample(rng)) is False
    assert predictor_space().contains(predictor_space().sample(rng))


def test_budget_equal_to_warm_start_is_random_search():
    f = lambda c: -(c["x"] - 0.7) ** 2
    trials = bayes_opt(f, LINE, budget=5, n_init=5, seed=2)
    expected = [LINE.sample(np.random.default_rng([2, i])) for i in range(5)]
    assert [t.config for t in trials] == expected
    assert incumbent(trials).measurement == max(f(c) for c in expected)


def test_equal_measurements_keep_earlier():
    trials = [Trial(0, {"x": 0.1}, 0.5, 0, "ok"), Trial(1, {"x": 0.2}, 0.5, 0, "ok"), Trial(2, {"x": 0.3}, 0.9, 0, "failed")]
    assert incumbent(trials).index == 0


def test_failed_trials_score_zero():
    def f(c):
        if c["x"] > 0.5:
            raise TrainingError("diverged")
        return 1.0 + c["x"]

    trials = bayes_opt(f, LINE, budget=12, n_init=5, n_candidates=20, n_trees=10, seed=0)
    assert {t.status for t in trials} == {"ok", "failed"}
    assert all(t.measurement == 0 for t in trials if t.status == "failed")
    assert incumbent(trials).config["x"] <= 0.5


def test_quadratic_optimum_found():
    trials = bayes_opt(lambda c: -(c["x"] - 0.7) ** 2, LINE, budget=30, n_init=5, seed=1)
    assert abs(incumbent(trials).config["x"] - 0.7) < 0.05


def test_resume_from_log(tmp_path):
    f = lambda c: -(c["x"] - 0.3) ** 2
    full = bayes_opt(f, LINE, budget=9, n_candidates=50, n_trees=10, seed=4)
    path = tmp_path / "trials.jsonl"
    bayes_opt(f, LINE, budget=6, n_candidates=50, n_trees=10, seed=4, trial_log=TrialLog(path))
    resumed = bayes_opt(f, LINE, budget=9, n_candidates=50, n_trees=10, seed=4, trial_log=TrialLog(path))
    assert [t.config for t in resumed] == [t.config for t in full]
    assert len(TrialLog(path).trials) == 9


def test_reproducible_trajectory():
    f = lambda c: float(np.sin(5 * c["x"]))
    a = bayes_opt(f, LINE, budget=10, n_candidates=50, seed=8)
    b = bayes_opt(f, LINE, budget=10, n_candidates=50, seed=8)
    assert [t.config for t in a] == [t.config for t in b]


@pytest.fixture(scope="module")
def trained(small_kg):
    res = fit(small_kg, SamplerConfig(entity_ratio=0.5, edge_ratio=0.5),
              PredictorConfig(layers=2, hidden_dim=16, dropout=0.0), TrainConfig(epochs=3, learning_rate=1e-2))
    return res.model


def test_identity_candidate(small_kg, trained):
    base = SamplerConfig(entity_ratio=0.3, edge_ratio=0.3)
    res = search_sampler(small_kg, trained, base, candidates=[(1.0, 1.0)])
    assert (res.config.entity_ratio, res.config.edge_ratio) == (1.0, 1.0)
    assert res.measurement == evaluate(small_kg, "valid", base.replace(entity_ratio=1.0, edge_ratio=1.0), trained).mrr


def test_bo_close_to_exhaustive_grid(small_kg, trained):
    base = SamplerConfig(entity_ratio=0.5, edge_ratio=0.5)
    grid = list(itertools.product((0.1, 0.2, 0.5, 1.0), repeat=2))
    exhaustive = search_sampler(small_kg, trained, base, candidates=grid)
    bo = search_sampler(small_kg, trained, base, budget=len(grid), n_candidates=200, seed=0)
    assert bo.measurement >= 0.95 * exhaustive.measurement
    assert len(bo.trials) == len(grid)
    assert bo.trials[0].config == {"entity_ratio": 0.5, "edge_ratio": 0.5}


def chain_kg(n_chains=2, length=6):
    """Chains c0 - ... - c5; relation 1 asks for the far end, relation 2 for the neighbour."""
    train, valid = [], []
    for c in range(n_chains):
        nodes = [c * length + i for i in range(length)]
        train += [(a, 0, b) for a, b in zip(nodes, nodes[1:])]
        valid += [(nodes[0], 1, nodes[-1]), (nodes[0], 2, nodes[1])]
    n = n_chains * length
    return KnowledgeGraph(
        entities=tuple(f"e{i}" for i in range(n)),
        relations=("next", "far", "near"),
        train=np.array(train),
        valid=np.array(valid),
        test=np.zeros((0, 3), dtype=np.int64),
        n_base_relations=3,
    )


def test_per_relation_ratios_beat_global():
    kg = chain_kg()
    model = Predictor(PredictorConfig(layers=2, hidden_dim=4), kg.n_relations)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()  # uniform logits: the best ratio is the smallest one that still covers the answer
    base = SamplerConfig(entity_ratio=0.5, edge_ratio=1.0)
    fine = np.round(np.arange(1, 13) / 12, 6)
    best_global = search_sampler(kg, model, base, candidates=[(r, 1.0) for r in fine])
    per_rel = search_sampler(kg, model, base, budget=30, per_relation=True, n_candidates=200, seed=0)
    assert per_rel.config.relation_entity_ratio[2] < per_rel.config.relation_entity_ratio[1]
    assert per_rel.measurement > best_global.measurement
    assert set(per_rel.trials[0].config) == {"entity_ratio[1]", "edge_ratio[1]", "entity_ratio[2]", "edge_ratio[2]"}


@pytest.fixture(scope="module")
def tiny_rule_kg():
    return rule_kg(60, n_noise=40, seed=3)


def test_bilevel_minimal_budgets(tiny_rule_kg, tmp_path):
    res = bilevel_search(tiny_rule_kg, 1, 1, train_cfg=TrainConfig(batch_size=16), epochs_per_trial=1,
                         log_path=tmp_path / "log.jsonl")
    assert len(res.audit) == 2 == len(TrialLog(tmp_path / "log.jsonl").trials)
    assert res.final_mrr >= res.stage1_mrr
    assert Predictor(res.predictor, tiny_rule_kg.n_relations).load_state_dict(res.state["params"])
    assert res.sampler.entity_ratio == 0.1


def test_stage_two_never_worse(tiny_rule_kg):
    res = bilevel_search(tiny_rule_kg, 2, 4, train_cfg=TrainConfig(batch_size=16), epochs_per_trial=1, n_init=2,
                         n_candidates=50)
    assert len(res.audit) == 6
    assert res.final_mrr >= res.stage1_mrr
    assert res.stage2[0].config == {"entity_ratio": 0.1, "edge_ratio": 0.1}


def test_search_selects_deep_enough_predictor(tiny_rule_kg):
    # the target is a two-hop rule: one layer cannot reach the answer
    space = SearchSpace([Dimension("layers", INTEGER, (1, 4))], "predictor")
    seen = {}
    for seed in range(3):
        res = search_predictor(
            tiny_rule_kg, SamplerConfig(entity_ratio=0.5, edge_ratio=1.0), budget=4, epochs_per_trial=4,
            train_cfg=TrainConfig(learning_rate=5e-3), space=space, n_init=2, n_candidates=20, seed=seed,
            base_config=PredictorConfig(dropout=0.0),
        )
        assert res.config.layers == 4
        for t in res.trials:
            seen.setdefault(t.config["layers"], []).append(t.measurement)
    assert set(seen) == {1, 4}
    assert max(seen[1]) < min(seen[4])


def test_budget_errors(small_kg):
    with pytest.raises(ConfigError):
        bayes_opt(lambda c: 0.0, LINE, budget=0)
    with pytest.raises(ConfigError):
        bilevel_search(small_kg, 0, 1)
    assert len(sampler_space([0, 3]).dimensions) == 4
