import numpy as np
import pytest

from oneshot.kg import KnowledgeGraph, augment_inverse
from oneshot.synthetic import random_kg, rule_kg


def make_kg(train, valid=(), test=(), n_entities=None, n_relations=None, augment=True):
    train = np.asarray(train, dtype=np.int64).reshape(-1, 3)
    valid = np.asarray(valid, dtype=np.int64).reshape(-1, 3)
    test = np.asarray(test, dtype=np.int64).reshape(-1, 3)
    allt = np.concatenate([train, valid, test])
    n_e = n_entities or int(allt[:, [0, 2]].max()) + 1
    n_r = n_relations or int(allt[:, 1].max()) + 1
    kg = KnowledgeGraph(
        entities=tuple(f"e{i}" for i in range(n_e)),
        relations=tuple(f"r{i}" for i in range(n_r)),
        train=train,
        valid=valid,
        test=test,
        n_base_relations=n_r,
    )
    return augment_inverse(kg) if augment else kg


@pytest.fixture(scope="session")
def small_kg():
    return random_kg(40, 3, 150, seed=1)


@pytest.fixture(scope="session")
def rule_graph():
    return rule_kg(500, seed=0)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            lines.append((props.get("criterion", 0), f"{outcome[:4].upper()} criterion {props.get('criterion', '?')}: "
                                                     f"{props.get('title', rep.nodeid)} | {props.get('detail', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
