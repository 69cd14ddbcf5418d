"""Knowledge-graph store: loading, inverse augmentation, CSR indexing and edge splits."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "valid", "test")


class LoadError(Exception):
    """A dataset file is missing or cannot be parsed."""


class VocabularyError(LoadError):
    """A triple references a name absent from a supplied dictionary file."""


class ConfigError(ValueError):
    """An argument or configuration value lies outside its valid range."""


@dataclass(frozen=True)
class CSR:
    """Compressed index over a triple array, keyed by one column.

    ``edges[indptr[i]:indptr[i + 1]]`` are the triple ids whose key column equals ``i``.
    """

    indptr: np.ndarray
    edges: np.ndarray

    @classmethod
    def build(cls, keys: np.ndarray, n: int) -> "CSR":
        order = np.argsort(keys, kind="stable")
        counts = np.bincount(keys, minlength=n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(_frozen(indptr), _frozen(order.astype(np.int64)))

    def __getitem__(self, i: int) -> np.ndarray:
        return self.edges[self.indptr[i] : self.indptr[i + 1]]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _as_triples(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return _frozen(arr.copy())


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable KG: vocabularies, three triple splits, CSR adjacency over train facts.

    When ``augmented`` is set, relation ``r + n_base_relations`` is the inverse of ``r`` and
    every split stores its original rows first followed by their inverses in the same order,
    so row ``i`` and row ``i + len(split) // 2`` are a mirrored pair.
    """

    entities: tuple[str, ...]
    relations: tuple[str, ...]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    n_base_relations: int
    augmented: bool = False
    out_index: CSR = field(init=False, repr=False)
    in_index: CSR = field(init=False, repr=False)
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in SPLITS:
            object.__setattr__(self, name, _as_triples(getattr(self, name)))
        self._validate()
        train = self.train
        object.__setattr__(self, "out_index", CSR.build(train[:, 0], self.n_entities))
        object.__setattr__(self, "in_index", CSR.build(train[:, 2], self.n_entities))
        base = self.base_facts("train")
        deg = np.bincount(base[:, 0], minlength=self.n_entities) + np.bincount(
            base[:, 2], minlength=self.n_entities
        )
        object.__setattr__(self, "degrees", _frozen(deg.astype(np.int64)))

    def _validate(self):
        n_e, n_r = self.n_entities, self.n_relations
        for name in SPLITS:
            t = getattr(self, name)
            if len(t) and (
                t[:, [0, 2]].min() < 0
                or t[:, [0, 2]].max() >= n_e
                or t[:, 1].min() < 0
                or t[:, 1].max() >= n_r
            ):
                raise VocabularyError(f"{name} split references ids outside the vocabulary")
        sets = {name: set(map(tuple, getattr(self, name).tolist())) for name in SPLITS}
        for a, b in (("train", "valid"), ("train", "test"), ("valid", "test")):
            if sets[a] & sets[b]:
                raise LoadError(f"{a} and {b} splits overlap ({len(sets[a] & sets[b])} triples)")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def base_facts(self, name: str) -> np.ndarray:
        """Rows of ``name`` excluding inverse copies."""
        t = self.split(name)
        return t[: len(t) // 2] if self.augmented else t

    def inverse_relation(self, r):
        if not self.augmented:
            raise ConfigError("graph has no inverse relations")
        nb = self.n_base_relations
        return np.where(np.asarray(r) < nb, np.asarray(r) + nb, np.asarray(r) - nb)

    def out_edges(self, head: int) -> np.ndarray:
        """(relation, tail) pairs of train facts with the given head."""
        return self.train[self.out_index[head]][:, 1:]

    def in_edges(self, tail: int) -> np.ndarray:
        """(head, relation) pairs of train facts with the given tail."""
        return self.train[self.in_index[tail]][:, :2]

    def stats(self) -> dict:
        return {
            "entities": self.n_entities,
            "relations": self.n_base_relations,
            "train": len(self.base_facts("train")),
            "valid": len(self.base_facts("valid")),
            "test": len(self.base_facts("test")),
            "augmented": self.augmented,
        }


def _read_dict(path: Path) -> list[str]:
    names: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise LoadError(f"{path}:{lineno}: expected 'id<TAB>name'")
            try:
                idx = int(parts[0])
            except ValueError as exc:
                raise LoadError(f"{path}:{lineno}: non-integer id {parts[0]!r}") from exc
            names[idx] = parts[1]
    if sorted(names) != list(range(len(names))):
        raise LoadError(f"{path}: ids must be exactly 0..{len(names) - 1}")
    return [names[i] for i in range(len(names))]


def _read_triples(path: Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise LoadError(f"{path}:{lineno}: expected 'head<TAB>relation<TAB>tail'")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def load_dataset(directory: str | os.PathLike) -> KnowledgeGraph:
    """Load ``train.txt``/``valid.txt``/``test.txt`` from a directory.

    Vocabularies come from ``entities.dict`` and ``relations.dict`` when both exist,
    otherwise they are induced in first-appearance order over train, valid, test.
    """
    directory = Path(directory)
    raw = {}
    for name in SPLITS:
        path = directory / f"{name}.txt"
        if not path.is_file():
            raise LoadError(f"missing dataset file: {path}")
        raw[name] = _read_triples(path)

    ent_dict, rel_dict = directory / "entities.dict", directory / "relations.dict"
    if ent_dict.is_file() and rel_dict.is_file():
        entities, relations = _read_dict(ent_dict), _read_dict(rel_dict)
        e_idx = {n: i for i, n in enumerate(entities)}
        r_idx = {n: i for i, n in enumerate(relations)}
        fixed = True
    else:
        entities, relations, e_idx, r_idx = [], [], {}, {}
        fixed = False

    def ids(name, h, r, t):
        out = []
        for vocab, idx, key in ((entities, e_idx, h), (relations, r_idx, r), (entities, e_idx, t)):
            if key not in idx:
                if fixed:
                    raise VocabularyError(f"{name}.txt: {key!r} not found in dictionary files")
                idx[key] = len(vocab)
                vocab.append(key)
            out.append(idx[key])
        return out

    arrays = {name: [ids(name, *row) for row in raw[name]] for name in SPLITS}
    return KnowledgeGraph(
        entities=tuple(entities),
        relations=tuple(relations),
        train=np.array(arrays["train"], dtype=np.int64).reshape(-1, 3),
        valid=np.array(arrays["valid"], dtype=np.int64).reshape(-1, 3),
        test=np.array(arrays["test"], dtype=np.int64).reshape(-1, 3),
        n_base_relations=len(relations),
    )


def save_dataset(kg: KnowledgeGraph, directory: str | os.PathLike, write_dicts: bool = True):
    """Write the original (non-inverse) facts back in the tab-separated format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rel_names = kg.relations[: kg.n_base_relations]
    for name in SPLITS:
        with open(directory / f"{name}.txt", "w", encoding="utf-8") as fh:
            for h, r, t in kg.base_facts(name).tolist():
                fh.write(f"{kg.entities[h]}\t{rel_names[r]}\t{kg.entities[t]}\n")
    if write_dicts:
        for fname, names in (("entities.dict", kg.entities), ("relations.dict", rel_names)):
            with open(directory / fname, "w", encoding="utf-8") as fh:
                fh.writelines(f"{i}\t{n}\n" for i, n in enumerate(names))


def augment_inverse(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Add relation ``r + |R|`` for every ``r`` and the mirrored copy of every fact."""
    if kg.augmented:
        raise ConfigError("knowledge graph is already inverse-augmented")
    nr = kg.n_relations

    def mirror(t):
        inv = np.stack([t[:, 2], t[:, 1] + nr, t[:, 0]], axis=1)
        return np.concatenate([t, inv], axis=0)

    return KnowledgeGraph(
        entities=kg.entities,
        relations=kg.relations + tuple(f"{r}_inv" for r in kg.relations),
        train=mirror(kg.train),
        valid=mirror(kg.valid),
        test=mirror(kg.test),
        n_base_relations=nr,
        augmented=True,
    )


@dataclass(frozen=True)
class EdgeSplit:
    """Partition of train row ids into observation edges and query edges."""

    observed: np.ndarray
    queries: np.ndarray
    seed: int

    @property
    def ratio(self) -> float:
        return len(self.observed) / max(len(self.queries), 1)


def split_train_edges(kg: KnowledgeGraph, fraction: float = 0.95, seed: int = 0) -> EdgeSplit:
    """Uniformly split train facts so that ``fraction`` of them stay observed.

    On an augmented graph a fact and its inverse copy always land on the same side.
    Returned ids index ``kg.train`` and are sorted.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"observed fraction must lie in (0, 1), got {fraction}")
    n_base = len(kg.base_facts("train"))
    if n_base < 2:
        raise ConfigError("need at least two train facts to split")
    rng = np.random.default_rng(seed)
    n_obs = int(np.floor(fraction * n_base + 0.5))
    n_obs = min(max(n_obs, 1), n_base - 1)
    perm = rng.permutation(n_base)
    obs, qry = np.sort(perm[:n_obs]), np.sort(perm[n_obs:])
    if kg.augmented:
        obs = np.concatenate([obs, obs + n_base])
        qry = np.concatenate([qry, qry + n_base])
    return EdgeSplit(observed=_frozen(obs), queries=_frozen(qry), seed=seed)


def known_answers(kg: KnowledgeGraph) -> dict[tuple[int, int], set[int]]:
    """Map (head, relation) to every tail seen in any split, used for filtered ranking."""
    out: dict[tuple[int, int], set[int]] = {}
    for name in SPLITS:
        for h, r, t in kg.split(name).tolist():
            out.setdefault((h, r), set()).add(t)
    return out
