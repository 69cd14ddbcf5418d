"""Query-conditioned message passing over sampled subgraphs.

Representations start as an indicator of the query entity and are propagated ``layers``
times along the sampled edges; the readout compares each entity with the anchor.
There are no entity embeddings: the parameter count depends only on the config and |R|.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .kg import ConfigError
from .sampler import Subgraph

CHECKPOINT_FORMAT = "oneshot-predictor"
CHECKPOINT_VERSION = 1

DESIGN_SPACE = {
    "layers": (4, 6, 8, 10),
    "hidden_dim": (16, 32, 64, 128),
    "dropout": (0.0, 0.5),
    "act": ("identity", "relu", "tanh"),
    "agg": ("max", "mean", "sum"),
    "mess": ("drum", "nbfnet", "redgnn"),
    "init": ("binary", "relational"),
    "shortcut": (True, False),
    "concat": (True, False),
    "readout": ("linear", "dot"),
}


@dataclass
class PredictorConfig:
    layers: int = 4
    hidden_dim: int = 32
    dropout: float = 0.1
    act: str = "relu"
    agg: str = "sum"
    mess: str = "nbfnet"
    init: str = "relational"
    shortcut: bool = True
    concat: bool = False
    readout: str = "linear"
    # "sum" adds the relation term regardless of whether the source was reached
    nbf_combine: str = "product"
    seed: int = 0

    def __post_init__(self):
        for name in ("act", "agg", "mess", "init", "readout", "nbf_combine"):
            setattr(self, name, str(getattr(self, name)).lower())
        self.validate()

    def validate(self):
        if self.layers < 1 or self.hidden_dim < 1:
            raise ConfigError("predictor.layers and predictor.hidden_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"predictor.dropout must lie in [0, 1), got {self.dropout}")
        for name in ("act", "agg", "mess", "init", "readout"):
            if getattr(self, name) not in DESIGN_SPACE[name]:
                raise ConfigError(f"predictor.{name} must be one of {DESIGN_SPACE[name]}")
        if self.nbf_combine not in ("sum", "product"):
            raise ConfigError("predictor.nbf_combine must be 'sum' or 'product'")

    def in_design_space(self) -> bool:
        """True when every searchable field lies in the searched ranges."""
        lo, hi = DESIGN_SPACE["dropout"]
        return (
            self.layers in DESIGN_SPACE["layers"]
            and self.hidden_dim in DESIGN_SPACE["hidden_dim"]
            and lo < self.dropout < hi
        )


ACTIVATIONS = {"identity": lambda x: x, "relu": torch.relu, "tanh": torch.tanh}


@dataclass
class GraphBatch:
    """Several subgraphs packed into one disjoint union with global node ids."""

    n_nodes: int
    src: torch.Tensor
    rel: torch.Tensor
    dst: torch.Tensor
    node_query: torch.Tensor
    node_graph: torch.Tensor
    anchors: torch.Tensor
    offsets: np.ndarray

    @classmethod
    def from_subgraphs(cls, subs: list[Subgraph]) -> "GraphBatch":
        sizes = np.array([s.n_entities for s in subs], dtype=np.int64)
        offsets = np.zeros(len(subs) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        edges = [s.edges + np.array([off, 0, off]) for s, off in zip(subs, offsets[:-1])]
        e = np.concatenate(edges) if edges else np.zeros((0, 3), np.int64)
        node_graph = np.repeat(np.arange(len(subs)), sizes)
        queries = np.array([s.query_relation for s in subs], dtype=np.int64)
        anchors = offsets[:-1] + np.array([s.anchor for s in subs], dtype=np.int64)
        t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=torch.long)
        return cls(
            n_nodes=int(offsets[-1]),
            src=t(e[:, 0]),
            rel=t(e[:, 1]),
            dst=t(e[:, 2]),
            node_query=t(queries[node_graph]),
            node_graph=t(node_graph),
            anchors=t(anchors),
            offsets=offsets,
        )

    def split(self, values: torch.Tensor) -> list[torch.Tensor]:
        return [values[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


class Predictor(nn.Module):
    def __init__(self, cfg: PredictorConfig, n_relations: int):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.n_relations = int(n_relations)
        L, d, R = cfg.layers, cfg.hidden_dim, self.n_relations
        gen = torch.Generator().manual_seed(cfg.seed)
        bound = 1.0 / math.sqrt(d)

        def uniform(*shape):
            return nn.Parameter((torch.rand(*shape, generator=gen) * 2 - 1) * bound)

        self.relation_emb = uniform(L, R, d)
        self.query_emb = uniform(R, d)
        if cfg.mess == "nbfnet":
            self.message_weight = uniform(L, d, d)
        if cfg.mess == "redgnn":
            self.attn_in = uniform(L, d, 3 * d)
            self.attn_out = uniform(L, d)
        if cfg.readout == "linear":
            width = d * L if cfg.concat else d
            self.readout_weight = uniform(2 * width)
            self.readout_bias = nn.Parameter(torch.zeros(1))

    # -- building blocks -------------------------------------------------------------

    def init_representations(self, batch: GraphBatch) -> torch.Tensor:
        d = self.cfg.hidden_dim
        dtype = self.relation_emb.dtype
        h = torch.zeros(batch.n_nodes, d, dtype=dtype)
        if self.cfg.init == "binary":
            h = h.index_put((batch.anchors,), torch.ones(len(batch.anchors), d, dtype=dtype))
        else:
            h = h.index_put((batch.anchors,), self.query_emb[batch.node_query[batch.anchors]])
        return h

    def message(self, hx, hr, hq, layer: int) -> torch.Tensor:
        mess = self.cfg.mess
        if hx.shape != hr.shape or hx.shape != hq.shape:
            raise ValueError(f"message inputs disagree in shape: {hx.shape}, {hr.shape}, {hq.shape}")
        if mess == "drum":
            return hx * hr
        if mess == "nbfnet":
            w = hr * hq
            c = hx + w if self.cfg.nbf_combine == "sum" else hx * w
            return c @ self.message_weight[layer].T
        z = torch.relu(torch.cat([hx, hr, hq], dim=-1) @ self.attn_in[layer].T)
        att = torch.sigmoid(z @ self.attn_out[layer])
        return att.unsqueeze(-1) * (hx + hr)

    def aggregate(self, messages: torch.Tensor, dst: torch.Tensor, n_nodes: int) -> torch.Tensor:
        out = torch.zeros(n_nodes, messages.shape[-1], dtype=messages.dtype)
        if self.cfg.agg == "max":
            idx = dst.unsqueeze(-1).expand_as(messages)
            return out.scatter_reduce(0, idx, messages, reduce="amax", include_self=False)
        out = out.index_add(0, dst, messages)
        if self.cfg.agg == "mean":
            count = torch.bincount(dst, minlength=n_nodes).clamp(min=1).to(messages.dtype)
            out = out / count.unsqueeze(-1)
        return out

    def propagate(self, batch: GraphBatch, h: torch.Tensor, layer: int, train: bool = False, generator=None):
        hx = h[batch.src]
        hr = self.relation_emb[layer][batch.rel]
        hq = self.query_emb[batch.node_query[batch.dst]]
        out = self.aggregate(self.message(hx, hr, hq, layer), batch.dst, batch.n_nodes)
        out = ACTIVATIONS[self.cfg.act](out)
        p = self.cfg.dropout
        if train and p > 0:
            keep = torch.rand(out.shape, generator=generator) >= p
            out = out * keep.to(out.dtype) / (1.0 - p)
        if self.cfg.shortcut:
            out = out + h
        return out

    def readout(self, batch: GraphBatch, rep: torch.Tensor) -> torch.Tensor:
        anchor_rep = rep[batch.anchors][batch.node_graph]
        if self.cfg.readout == "dot":
            return (rep * anchor_rep).sum(-1)
        return torch.cat([rep, anchor_rep], dim=-1) @ self.readout_weight + self.readout_bias

    # -- public ------------------------------------------------------------------------

    def forward(self, batch: GraphBatch, train: bool = False, generator=None, return_states: bool = False):
        """Raw logits for every node of the batch (sigmoid is left to the loss)."""
        h = self.init_representations(batch)
        states = [h]
        for layer in range(self.cfg.layers):
            h = self.propagate(batch, h, layer, train=train, generator=generator)
            states.append(h)
        rep = torch.cat(states[1:], dim=-1) if self.cfg.concat else h
        logits = self.readout(batch, rep)
        return (logits, states) if return_states else logits

    def score_subgraph(self, sub: Subgraph, u: int, q: int, train: bool = False, generator=None) -> torch.Tensor:
        if int(sub.entities[sub.anchor]) != int(u) or int(sub.query_relation) != int(q):
            raise ValueError(f"subgraph is anchored at ({sub.entities[sub.anchor]}, {sub.query_relation}), not ({u}, {q})")
        return self(GraphBatch.from_subgraphs([sub]), train=train, generator=generator)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def save_checkpoint(model: Predictor, path, n_entities: int | None = None, extra: dict | None = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "n_relations": model.n_relations,
        "n_entities": n_entities,
        "params": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def checkpoint_state(model: Predictor) -> dict:
    """In-memory checkpoint (config + parameter copies)."""
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "n_relations": model.n_relations,
        "params": {k: v.detach().clone() for k, v in model.state_dict().items()},
    }


def model_from_state(state: dict, n_relations: int | None = None) -> Predictor:
    if state.get("format") != CHECKPOINT_FORMAT or state.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint {state.get('format')!r} v{state.get('version')}")
    if n_relations is not None and int(state["n_relations"]) != int(n_relations):
        raise ValueError(f"checkpoint has {state['n_relations']} relations, graph has {n_relations}")
    model = Predictor(PredictorConfig(**state["config"]), state["n_relations"])
    expected = model.state_dict()
    params = state["params"]
    if set(params) != set(expected):
        raise ValueError(f"checkpoint keys {sorted(params)} do not match {sorted(expected)}")
    for k, v in params.items():
        if tuple(v.shape) != tuple(expected[k].shape):
            raise ValueError(f"shape mismatch for {k}: {tuple(v.shape)} vs {tuple(expected[k].shape)}")
    model.load_state_dict(params)
    return model


def load_checkpoint(path, n_relations: int | None = None) -> Predictor:
    return model_from_state(torch.load(path, weights_only=True), n_relations)
