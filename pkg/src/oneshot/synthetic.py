"""Synthetic knowledge graphs with known ground truth."""

from __future__ import annotations

import numpy as np

from .kg import KnowledgeGraph, augment_inverse


def compose_rule(first: set[tuple[int, int]], second: set[tuple[int, int]]) -> set[tuple[int, int]]:
    """Symbolic closure of ``target(x, z) <- first(x, y), second(y, z)``."""
    by_head: dict[int, list[int]] = {}
    for y, z in second:
        by_head.setdefault(y, []).append(z)
    return {(x, z) for x, y in first for z in by_head.get(y, ())}


def rule_kg(
    n_entities: int = 500,
    n_noise: int = 500,
    valid_fraction: float = 0.2,
    test_fraction: float = 0.2,
    seed: int = 0,
    augment: bool = True,
) -> KnowledgeGraph:
    """A KG whose ``target`` facts are exactly the 2-hop composition ``link1 . link2``.

    ``link1`` and ``link2`` are random permutations, so every entity has exactly one
    target answer in each direction; ``noise`` adds random distractor edges. All
    ``link1``/``link2``/``noise`` facts are train facts; the target facts are split
    into train/valid/test.
    """
    rng = np.random.default_rng(seed)
    n = n_entities
    x = np.arange(n)
    p1, p2 = rng.permutation(n), rng.permutation(n)
    link1 = {(int(a), int(b)) for a, b in zip(x, p1)}
    link2 = {(int(a), int(b)) for a, b in zip(x, p2)}
    target = sorted(compose_rule(link1, link2))

    noise = set()
    while len(noise) < n_noise:
        a, b = rng.integers(n, size=2)
        if a != b:
            noise.add((int(a), int(b)))

    order = rng.permutation(len(target))
    n_valid = int(round(valid_fraction * len(target)))
    n_test = int(round(test_fraction * len(target)))
    valid_t = [target[i] for i in order[:n_valid]]
    test_t = [target[i] for i in order[n_valid : n_valid + n_test]]
    train_t = [target[i] for i in order[n_valid + n_test :]]

    def rows(pairs, r):
        return [(a, r, b) for a, b in sorted(pairs)]

    train = rows(link1, 0) + rows(link2, 1) + rows(noise, 2) + rows(train_t, 3)
    kg = KnowledgeGraph(
        entities=tuple(f"e{i}" for i in range(n)),
        relations=("link1", "link2", "noise", "target"),
        train=np.array(train, dtype=np.int64),
        valid=np.array(rows(valid_t, 3), dtype=np.int64).reshape(-1, 3),
        test=np.array(rows(test_t, 3), dtype=np.int64).reshape(-1, 3),
        n_base_relations=4,
    )
    return augment_inverse(kg) if augment else kg


def random_kg(n_entities: int, n_relations: int, n_facts: int, seed: int = 0, augment: bool = True) -> KnowledgeGraph:
    """Uniformly random facts split 80/10/10 (duplicates removed)."""
    rng = np.random.default_rng(seed)
    facts = set()
    while len(facts) < n_facts:
        h, t = rng.integers(n_entities, size=2)
        facts.add((int(h), int(rng.integers(n_relations)), int(t)))
    facts = sorted(facts)
    order = rng.permutation(len(facts))
    cut1, cut2 = int(0.8 * len(facts)), int(0.9 * len(facts))
    pick = lambda idx: np.array([facts[i] for i in idx], dtype=np.int64).reshape(-1, 3)
    kg = KnowledgeGraph(
        entities=tuple(f"e{i}" for i in range(n_entities)),
        relations=tuple(f"r{i}" for i in range(n_relations)),
        train=pick(order[:cut1]),
        valid=pick(order[cut1:cut2]),
        test=pick(order[cut2:]),
        n_base_relations=n_relations,
    )
    return augment_inverse(kg) if augment else kg
