import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oneshot.kg import ConfigError
from oneshot.sampler import (
    ObservedGraph,
    SamplerConfig,
    Subgraph,
    budget,
    extract_subgraph,
    heuristic_scores,
    ppr_scores,
    ppr_scores_batch,
    top_k,
)
from oneshot.synthetic import random_kg

from helpers import dense_ppr, undirected


def random_edges(rng, n, p):
    return [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]


def test_two_node_ppr():
    g = undirected([(0, 1)], 2)
    p = ppr_scores(g, 0, SamplerConfig(alpha=0.85, tol=1e-12))
    np.testing.assert_allclose(p, dense_ppr([(0, 1)], 2, 0, 0.85), atol=1e-9)
    np.testing.assert_allclose(p, [0.8696, 0.1304], atol=1e-4)


def test_restart_only_limit():
    g = undirected([(0, 1), (1, 2), (2, 3)], 4)
    p = ppr_scores(g, 2, SamplerConfig(alpha=1.0, max_iters=1))
    assert p.tolist() == [0.0, 0.0, 1.0, 0.0]


def test_isolated_anchor_keeps_alpha():
    g = undirected([(1, 2)], 3)
    p = ppr_scores(g, 0, SamplerConfig(alpha=0.85))
    assert p.tolist() == [0.85, 0.0, 0.0]


def test_invalid_inputs():
    g = undirected([(0, 1)], 2)
    with pytest.raises(ConfigError):
        ppr_scores(g, 5, SamplerConfig())
    with pytest.raises(ConfigError):
        SamplerConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        SamplerConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        SamplerConfig(heuristic="dfs")
    with pytest.raises(ConfigError):
        SamplerConfig(entity_ratio=0.0)


@pytest.mark.parametrize("orientation", ["row", "column"])
def test_ppr_matches_linear_solve(orientation):
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(2, 51))
        edges = random_edges(rng, n, rng.uniform(0.02, 0.3))
        u = int(rng.integers(n))
        p = ppr_scores(undirected(edges, n), u, SamplerConfig(tol=1e-12, orientation=orientation))
        np.testing.assert_allclose(p, dense_ppr(edges, n, u, 0.85, orientation), atol=1e-6)


def test_batch_equals_single():
    kg = random_kg(60, 3, 200, seed=3)
    g = ObservedGraph.from_kg(kg)
    cfg = SamplerConfig()
    batch = ppr_scores_batch(g, [0, 5, 17], cfg)
    for row, u in zip(batch, [0, 5, 17]):
        np.testing.assert_allclose(row, ppr_scores(g, u, cfg), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 50), p=st.floats(0.02, 0.4), seed=st.integers(0, 2**16), alpha=st.floats(0.5, 1.0))
def test_anchor_is_strict_max(n, p, seed, alpha):
    rng = np.random.default_rng(seed)
    edges = random_edges(rng, n, p)
    u = int(rng.integers(n))
    if not any(u in e for e in edges):
        edges.append((u, (u + 1) % n))
    for orientation in ("row", "column"):
        s = ppr_scores(undirected(edges, n), u, SamplerConfig(alpha=alpha, orientation=orientation))
        assert (s >= 0).all()
        assert s[u] > np.delete(s, u).max()


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 50), p=st.floats(0.0, 0.4), seed=st.integers(0, 2**16))
def test_column_mass_never_grows(n, p, seed):
    rng = np.random.default_rng(seed)
    edges = random_edges(rng, n, p)
    cfg = SamplerConfig(orientation="column")
    s = ppr_scores(undirected(edges, n), int(rng.integers(n)), cfg)
    assert s.sum() <= 1 + cfg.tol * cfg.max_iters


def test_bfs_scores_path():
    g = undirected([(0, 1), (1, 2)], 4)
    s = heuristic_scores(g, 0, SamplerConfig(heuristic="bfs"))
    np.testing.assert_allclose(s, [1, 0.5, 1 / 3, 0])


def test_random_walk_single_edge():
    # walks on u - a alternate u, a, u, ...; every visit lands on one of them
    g = undirected([(0, 1)], 3)
    for walks, length in itertools.product([1, 5], [1, 4]):
        s = heuristic_scores(g, 0, SamplerConfig(heuristic="rw", rw_walks=walks, rw_length=length))
        visits_a = (length + 1) // 2
        assert s[1] == pytest.approx(visits_a / (length + 1))
        assert s[2] == 0


def test_random_scores_deterministic():
    g = undirected([(0, 1), (1, 2)], 50)
    cfg = SamplerConfig(heuristic="rand", seed=3)
    a, b = heuristic_scores(g, 7, cfg), heuristic_scores(g, 7, cfg)
    assert np.array_equal(a, b) and a.argmax() == 7


def test_pagerank_query_independent():
    kg = random_kg(30, 2, 80, seed=1)
    g = ObservedGraph.from_kg(kg)
    cfg = SamplerConfig(heuristic="pr")
    a, b = heuristic_scores(g, 0, cfg), heuristic_scores(g, 9, cfg)
    assert np.array_equal(a, b)
    assert a.sum() <= 1 + 1e-9


def test_top_k_rules():
    assert top_k([7, 3, 2], [0.5, 0.9, 0.5], 2).tolist() == [2, 3]
    assert top_k([7, 3, 2], [0.5, 0.9, 0.5], 5).tolist() == [2, 3, 7]
    assert top_k([7, 3, 2], [0.5, 0.9, 0.5], 0).tolist() == []


def test_top_k_against_full_sort():
    rng = np.random.default_rng(0)
    ids = rng.permutation(5000)[:1000]
    scores = rng.integers(0, 50, size=1000) / 50.0  # plenty of ties
    order = sorted(range(1000), key=lambda i: (-scores[i], ids[i]))
    expected = sorted(ids[i] for i in order[:100])
    assert top_k(ids, scores, 100).tolist() == expected


def test_budget_rounding():
    assert budget(0.1, 41) == 4
    assert budget(0.5, 5) == 3  # half rounds up
    assert budget(0.001, 10) == 1
    assert budget(1.0, 7) == 7


def test_path_graph_extraction():
    edges = [(0, 1), (1, 2), (2, 3), (3, 4)]
    g = undirected(edges, 5)
    exact = dense_ppr(edges, 5, 0, 0.85)
    assert all(exact[i] > exact[i + 1] for i in range(4))
    sub = extract_subgraph(g, 0, 0, SamplerConfig(entity_ratio=0.6, edge_ratio=1.0))
    assert sub.entities.tolist() == [0, 1, 2]
    kept = {(int(sub.entities[h]), int(sub.entities[t])) for h, _, t in sub.edges}
    assert kept == {(0, 1), (1, 0), (1, 2), (2, 1)}


def test_identity_sampling_reproduces_graph():
    kg = random_kg(40, 3, 120, seed=2)
    g = ObservedGraph.from_kg(kg)
    sub = extract_subgraph(g, 4, 1, SamplerConfig(entity_ratio=1.0, edge_ratio=1.0))
    assert sub.entities.tolist() == list(range(kg.n_entities))
    assert sorted(map(tuple, sub.edges.tolist())) == sorted(map(tuple, kg.train.tolist()))


def test_anchor_forced_in():
    # anchor is isolated, so every other entity would outrank it under BFS from elsewhere
    g = undirected([(1, 2), (2, 3)], 5)
    cfg = SamplerConfig(heuristic="pr", entity_ratio=0.4)
    sub = extract_subgraph(g, 0, 0, cfg)
    assert 0 in sub.entities.tolist() and sub.n_entities == 2
    assert sub.entities[sub.anchor] == 0


def test_subgraph_invariants_and_serialization():
    kg = random_kg(80, 3, 300, seed=6)
    g = ObservedGraph.from_kg(kg)
    cfg = SamplerConfig(entity_ratio=0.3, edge_ratio=0.05)
    sub = extract_subgraph(g, 11, 2, cfg)
    assert sub.n_entities == budget(0.3, 80)
    assert len(sub.edges) <= budget(0.05, g.n_edges)
    observed = {tuple(t) for t in g.triples.tolist()}
    for (h, r, t), eid in zip(sub.edges.tolist(), sub.edge_ids.tolist()):
        tri = (int(sub.entities[h]), r, int(sub.entities[t]))
        assert tri in observed and tuple(g.triples[eid]) == tri
    again = extract_subgraph(g, 11, 2, cfg)
    assert sub.to_json() == again.to_json()
    back = Subgraph.from_json(sub.to_json())
    assert back.to_json() == sub.to_json()
    assert json.loads(sub.to_json())["version"] == 1


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.01, 1.0), b=st.floats(0.01, 1.0), seed=st.integers(0, 50))
def test_entity_sets_nested(a, b, seed):
    a, b = min(a, b), max(a, b)
    kg = random_kg(50, 2, 120, seed=seed)
    g = ObservedGraph.from_kg(kg)
    small = extract_subgraph(g, 3, 0, SamplerConfig(entity_ratio=a))
    large = extract_subgraph(g, 3, 0, SamplerConfig(entity_ratio=b))
    assert set(small.entities.tolist()) <= set(large.entities.tolist())


def test_per_relation_ratios():
    cfg = SamplerConfig(entity_ratio=0.1, edge_ratio=0.2, relation_entity_ratio={3: 0.5})
    assert cfg.ratios(3) == (0.5, 0.2)
    assert cfg.ratios(1) == (0.1, 0.2)
