"""Query-dependent one-shot subgraph sampling.

Entities are scored by a non-parametric heuristic anchored at the query entity (personalized
PageRank by default), the top entities are kept, and the kept edges are the top induced
edges by the product of their endpoint scores.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .kg import ConfigError, KnowledgeGraph

HEURISTICS = ("ppr", "bfs", "rw", "pr", "rand")
ORIENTATIONS = ("row", "column")
SUBGRAPH_FORMAT = "oneshot-subgraph"
SUBGRAPH_VERSION = 1


@dataclass
class SamplerConfig:
    heuristic: str = "ppr"
    alpha: float = 0.85
    max_iters: int = 100
    tol: float = 1e-6
    entity_ratio: float = 0.1
    edge_ratio: float = 0.1
    # per query-relation overrides of the two ratios
    relation_entity_ratio: dict[int, float] = field(default_factory=dict)
    relation_edge_ratio: dict[int, float] = field(default_factory=dict)
    rw_walks: int = 100
    rw_length: int = 10
    # "row": D^-1 A p as printed; "column": A D^-1 p, the mass-conserving transpose
    orientation: str = "row"
    seed: int = 0

    def __post_init__(self):
        self.heuristic = self.heuristic.lower()
        self.relation_entity_ratio = {int(k): float(v) for k, v in self.relation_entity_ratio.items()}
        self.relation_edge_ratio = {int(k): float(v) for k, v in self.relation_edge_ratio.items()}
        self.validate()

    def validate(self):
        if self.heuristic not in HEURISTICS:
            raise ConfigError(f"sampler.heuristic must be one of {HEURISTICS}, got {self.heuristic!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"sampler.alpha must lie in (0, 1], got {self.alpha}")
        if self.max_iters < 1:
            raise ConfigError("sampler.max_iters must be >= 1")
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"sampler.orientation must be one of {ORIENTATIONS}")
        ratios = [("entity_ratio", self.entity_ratio), ("edge_ratio", self.edge_ratio)]
        for name in ("relation_entity_ratio", "relation_edge_ratio"):
            ratios += [(f"{name}[{q}]", r) for q, r in getattr(self, name).items()]
        for name, r in ratios:
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"sampler.{name} must lie in (0, 1], got {r}")
        if self.rw_walks < 1 or self.rw_length < 1:
            raise ConfigError("sampler.rw_walks and sampler.rw_length must be >= 1")

    def ratios(self, q: int) -> tuple[float, float]:
        return (
            self.relation_entity_ratio.get(int(q), self.entity_ratio),
            self.relation_edge_ratio.get(int(q), self.edge_ratio),
        )

    def replace(self, **changes) -> "SamplerConfig":
        d = asdict(self)
        d.update(changes)
        return SamplerConfig(**d)


class ObservedGraph:
    """The edges a sampler may see, with the symmetrized transition structure.

    ``triples`` are directed (head, relation, tail) rows. With ``symmetric=False`` the
    reverse of each row is added to the adjacency (not to ``triples``) so every entity
    can be reached regardless of edge direction.
    """

    def __init__(self, triples: np.ndarray, n_entities: int, symmetric: bool = True):
        self.triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        self.n_entities = int(n_entities)
        h, t = self.triples[:, 0], self.triples[:, 2]
        if not symmetric:
            h, t = np.concatenate([h, t]), np.concatenate([t, h])
        n = self.n_entities
        order = np.lexsort((t, h))
        self._nbr = t[order]
        self._nbr_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(h, minlength=n), out=self._nbr_ptr[1:])
        # A counts parallel edges, so D^-1 A is row-stochastic on non-isolated rows
        self.adjacency = sp.csr_matrix(
            (np.ones(len(h), dtype=np.float64), (h, t)), shape=(n, n)
        )
        self.adjacency.sum_duplicates()
        self.degree = np.diff(self._nbr_ptr).astype(np.float64)

    @classmethod
    def from_kg(cls, kg: KnowledgeGraph, rows=None, include_valid: bool = False) -> "ObservedGraph":
        """Observation graph of train rows ``rows`` (all if None), optionally plus valid facts."""
        t = kg.train if rows is None else kg.train[np.asarray(rows, dtype=np.int64)]
        if include_valid:
            t = np.concatenate([t, kg.valid], axis=0)
        return cls(t, kg.n_entities, symmetric=kg.augmented)

    @property
    def n_edges(self) -> int:
        return len(self.triples)

    @cached_property
    def _inv_degree(self) -> np.ndarray:
        inv = np.zeros_like(self.degree)
        nz = self.degree > 0
        inv[nz] = 1.0 / self.degree[nz]
        return inv

    def transition(self, orientation: str = "row") -> sp.csr_matrix:
        """``D^-1 A`` for "row", ``A D^-1`` for "column"; zero rows/columns at isolated entities."""
        cache = self.__dict__.setdefault("_transition", {})
        if orientation not in cache:
            d = sp.diags(self._inv_degree)
            m = d @ self.adjacency if orientation == "row" else self.adjacency @ d
            cache[orientation] = sp.csr_matrix(m)
        return cache[orientation]

    def neighbors(self, i: int) -> np.ndarray:
        return self._nbr[self._nbr_ptr[i] : self._nbr_ptr[i + 1]]


def _check_entity(graph: ObservedGraph, u) -> None:
    u = np.asarray(u)
    if u.size and (u.min() < 0 or u.max() >= graph.n_entities):
        raise ConfigError(f"entity id out of range [0, {graph.n_entities})")


def _power_iteration(trans: sp.csr_matrix, restart: np.ndarray, alpha: float, max_iters: int, tol: float):
    p = restart.copy()
    for _ in range(max_iters):
        nxt = alpha * restart + (1.0 - alpha) * (trans @ p)
        delta = np.abs(nxt - p).sum(axis=0)
        p = nxt
        if np.all(delta < tol):
            break
    return p


def ppr_scores_batch(graph: ObservedGraph, us, cfg: SamplerConfig) -> np.ndarray:
    """Personalized PageRank for several anchors at once; row ``i`` belongs to ``us[i]``."""
    us = np.asarray(us, dtype=np.int64).reshape(-1)
    _check_entity(graph, us)
    if not 0.0 < cfg.alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {cfg.alpha}")
    s = np.zeros((graph.n_entities, len(us)))
    s[us, np.arange(len(us))] = 1.0
    p = _power_iteration(graph.transition(cfg.orientation), s, cfg.alpha, cfg.max_iters, cfg.tol)
    return np.ascontiguousarray(p.T)


def ppr_scores(graph: ObservedGraph, u: int, cfg: SamplerConfig) -> np.ndarray:
    return ppr_scores_batch(graph, [u], cfg)[0]


def pagerank_scores(graph: ObservedGraph, cfg: SamplerConfig) -> np.ndarray:
    """Global PageRank with a uniform restart vector (query independent, cached per graph)."""
    cache = graph.__dict__.setdefault("_pagerank", {})
    key = (cfg.alpha, cfg.max_iters, cfg.tol)
    if key not in cache:
        n = graph.n_entities
        s = np.full((n, 1), 1.0 / max(n, 1))
        # the row orientation maps a uniform vector to itself, so PR always uses A D^-1
        cache[key] = _power_iteration(graph.transition("column"), s, cfg.alpha, cfg.max_iters, cfg.tol)[:, 0]
    return cache[key].copy()


def bfs_scores(graph: ObservedGraph, u: int) -> np.ndarray:
    """1 / (1 + hop distance from u); unreachable entities score 0."""
    dist = np.full(graph.n_entities, -1, dtype=np.int64)
    dist[u] = 0
    frontier = np.array([u])
    d = 0
    adj = graph.adjacency
    while frontier.size:
        d += 1
        nb = np.unique(adj[frontier].indices)
        nb = nb[dist[nb] < 0]
        dist[nb] = d
        frontier = nb
    out = np.zeros(graph.n_entities)
    seen = dist >= 0
    out[seen] = 1.0 / (1.0 + dist[seen])
    return out


def random_walk_scores(graph: ObservedGraph, u: int, n_walks: int, length: int, seed: int) -> np.ndarray:
    """Visit frequencies of ``n_walks`` uniform walks of ``length`` steps started at u.

    The start position counts as a visit; a walk stuck at an isolated entity stops.
    """
    rng = np.random.default_rng([seed, int(u)])
    cur = np.full(n_walks, u, dtype=np.int64)
    visits = np.bincount(cur, minlength=graph.n_entities).astype(np.float64)
    deg = graph.degree.astype(np.int64)
    for _ in range(length):
        d = deg[cur]
        alive = d > 0
        if not alive.any():
            break
        cur, d = cur[alive], d[alive]
        offs = (rng.random(len(cur)) * d).astype(np.int64)
        cur = graph._nbr[graph._nbr_ptr[cur] + offs]
        visits += np.bincount(cur, minlength=graph.n_entities)
    return visits / visits.sum()


def random_scores(n_entities: int, u: int, seed: int) -> np.ndarray:
    s = np.random.default_rng([seed, int(u)]).random(n_entities)
    s[u] = 1.0
    return s


def heuristic_scores(graph: ObservedGraph, u: int, cfg: SamplerConfig) -> np.ndarray:
    """Entity scores for anchor ``u`` under ``cfg.heuristic``."""
    _check_entity(graph, u)
    h = cfg.heuristic
    if h == "ppr":
        return ppr_scores(graph, u, cfg)
    if h == "pr":
        return pagerank_scores(graph, cfg)
    if h == "bfs":
        return bfs_scores(graph, u)
    if h == "rw":
        return random_walk_scores(graph, u, cfg.rw_walks, cfg.rw_length, cfg.seed)
    if h == "rand":
        return random_scores(graph.n_entities, u, cfg.seed)
    raise ConfigError(f"unknown heuristic {h!r}")


def heuristic_scores_batch(graph: ObservedGraph, us, cfg: SamplerConfig) -> np.ndarray:
    if cfg.heuristic == "ppr":
        return ppr_scores_batch(graph, us, cfg)
    return np.stack([heuristic_scores(graph, int(u), cfg) for u in us]) if len(us) else np.zeros((0, graph.n_entities))


def top_k(ids, scores, k: int) -> np.ndarray:
    """The ``k`` ids with the largest scores, ties going to the smaller id; returned sorted by id."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if k >= len(ids):
        return np.sort(ids)
    kth = np.partition(scores, len(scores) - k)[len(scores) - k]
    above = ids[scores > kth]
    tied = np.sort(ids[scores == kth])
    return np.sort(np.concatenate([above, tied[: k - len(above)]]))


def budget(ratio: float, total: int) -> int:
    """round_half_up(ratio * total) with a floor of 1, capped at total."""
    if total <= 0:
        return 0
    return int(min(total, max(1, np.floor(ratio * total + 0.5))))


def select_entities(scores: np.ndarray, u: int, k: int) -> np.ndarray:
    """Top-k entities with the anchor forced in (evicting the weakest member if needed)."""
    n = len(scores)
    chosen = top_k(np.arange(n), scores, k)
    if not np.isin(u, chosen).item():
        ranked = chosen[np.lexsort((chosen, -scores[chosen]))]
        chosen = np.sort(np.append(ranked[:-1], u))
    return chosen


@dataclass
class Subgraph:
    """One sampled subgraph ``(V_s, E_s)`` in local ids.

    ``entities`` are the sorted original ids; ``edges`` rows are (local head, relation,
    local tail); ``edge_ids`` index the source ``ObservedGraph.triples``.
    """

    entities: np.ndarray
    edges: np.ndarray
    edge_ids: np.ndarray
    anchor: int
    query_relation: int
    provenance: dict = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def local_ids(self) -> dict[int, int]:
        return {int(e): i for i, e in enumerate(self.entities)}

    def local(self, original) -> np.ndarray:
        """Local ids of original ids (-1 where absent)."""
        original = np.asarray(original, dtype=np.int64)
        pos = np.searchsorted(self.entities, original)
        pos = np.minimum(pos, len(self.entities) - 1)
        return np.where(self.entities[pos] == original, pos, -1)

    def contains(self, original: int) -> bool:
        return bool(self.local(original) >= 0)

    def to_record(self) -> dict:
        return {
            "format": SUBGRAPH_FORMAT,
            "version": SUBGRAPH_VERSION,
            "entities": self.entities.tolist(),
            "edges": self.edges.tolist(),
            "edge_ids": self.edge_ids.tolist(),
            "anchor": int(self.anchor),
            "query_relation": int(self.query_relation),
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_record(cls, rec: dict) -> "Subgraph":
        if rec.get("format") != SUBGRAPH_FORMAT or rec.get("version") != SUBGRAPH_VERSION:
            raise ValueError(f"unsupported subgraph record {rec.get('format')!r} v{rec.get('version')}")
        return cls(
            entities=np.asarray(rec["entities"], dtype=np.int64),
            edges=np.asarray(rec["edges"], dtype=np.int64).reshape(-1, 3),
            edge_ids=np.asarray(rec["edge_ids"], dtype=np.int64),
            anchor=int(rec["anchor"]),
            query_relation=int(rec["query_relation"]),
            provenance=dict(rec["provenance"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "Subgraph":
        return cls.from_record(json.loads(text))


def extract_subgraph(
    graph: ObservedGraph,
    u: int,
    q: int,
    cfg: SamplerConfig,
    scores: np.ndarray | None = None,
    keep_scores: bool = False,
) -> Subgraph:
    """Sample the one-shot subgraph for query ``(u, q, ?)``.

    ``scores`` may be supplied when they were computed in a batch.
    """
    r_v, r_e = cfg.ratios(q)
    if not (0.0 < r_v <= 1.0 and 0.0 < r_e <= 1.0):
        raise ConfigError(f"sampling ratios must lie in (0, 1], got ({r_v}, {r_e})")
    if scores is None:
        scores = heuristic_scores(graph, u, cfg)
    ents = select_entities(scores, u, budget(r_v, graph.n_entities))

    member = np.zeros(graph.n_entities, dtype=bool)
    member[ents] = True
    h, t = graph.triples[:, 0], graph.triples[:, 2]
    cand = np.flatnonzero(member[h] & member[t])
    chosen = top_k(cand, scores[h[cand]] * scores[t[cand]], budget(r_e, graph.n_edges))

    local = np.full(graph.n_entities, -1, dtype=np.int64)
    local[ents] = np.arange(len(ents))
    tri = graph.triples[chosen]
    edges = np.stack([local[tri[:, 0]], tri[:, 1], local[tri[:, 2]]], axis=1) if len(tri) else np.zeros((0, 3), np.int64)
    prov = {"heuristic": cfg.heuristic, "entity_ratio": r_v, "edge_ratio": r_e}
    if keep_scores:
        prov["scores"] = scores[ents].tolist()
    return Subgraph(
        entities=ents,
        edges=edges.astype(np.int64),
        edge_ids=chosen,
        anchor=int(local[u]),
        query_relation=int(q),
        provenance=prov,
    )


def extract_subgraphs(graph: ObservedGraph, us, qs, cfg: SamplerConfig, chunk: int = 64) -> list[Subgraph]:
    """Batched extraction; scores for PPR are computed ``chunk`` anchors at a time."""
    out = []
    us, qs = np.asarray(us, dtype=np.int64), np.asarray(qs, dtype=np.int64)
    for start in range(0, len(us), chunk):
        u_c, q_c = us[start : start + chunk], qs[start : start + chunk]
        sc = heuristic_scores_batch(graph, u_c, cfg)
        out.extend(extract_subgraph(graph, int(u), int(q), cfg, scores=s) for u, q, s in zip(u_c, q_c, sc))
    return out
