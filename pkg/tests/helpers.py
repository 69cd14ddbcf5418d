"""Independent oracles shared by unit and acceptance tests."""

import itertools

import numpy as np
import torch

from oneshot.predictor import GraphBatch, Predictor, PredictorConfig
from oneshot.sampler import ObservedGraph, Subgraph


def make_subgraph(n, edges, anchor=0, q=0):
    e = np.array(edges, dtype=np.int64).reshape(-1, 3)
    return Subgraph(np.arange(n), e, np.arange(len(e)), anchor, q, {})


def count_walks(n, edges, start, length):
    """Number of directed walks of exactly ``length`` edges from ``start`` to each node, by enumeration."""
    out = [0] * n
    succ = [[] for _ in range(n)]
    for h, _, t in edges:
        succ[h].append(t)

    def walk(node, remaining):
        if remaining == 0:
            out[node] += 1
            return
        for nxt in succ[node]:
            walk(nxt, remaining - 1)

    walk(start, length)
    return out


def path_counting_model(n_relations, layers, hidden, readout="dot"):
    """NBFNet-sum with zero relation embeddings and identity transforms: messages are h_x."""
    cfg = PredictorConfig(
        layers=layers, hidden_dim=hidden, dropout=0.0, act="identity", agg="sum", mess="nbfnet",
        init="binary", shortcut=False, concat=False, readout=readout, nbf_combine="sum",
    )
    model = Predictor(cfg, n_relations).double()
    with torch.no_grad():
        model.relation_emb.zero_()
        model.message_weight.copy_(torch.eye(hidden, dtype=torch.float64).expand(layers, hidden, hidden))
    return model


def random_edges(rng, n, m, n_rel):
    return [(int(rng.integers(n)), int(rng.integers(n_rel)), int(rng.integers(n))) for _ in range(m)]


def loss_fn(model, sub, answer):
    logits = model(GraphBatch.from_subgraphs([sub]), train=False)
    y = torch.zeros_like(logits)
    y[answer] = 1
    return torch.nn.functional.binary_cross_entropy_with_logits(logits, y, reduction="sum")


def finite_difference_check(model, sub, answer, step=1e-4):
    """Largest per-tensor relative error between autograd and central differences."""
    model.zero_grad()
    loss_fn(model, sub, answer).backward()
    worst = 0.0
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1)
        numeric = torch.zeros_like(analytic)
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                up = loss_fn(model, sub, answer).item()
                flat[i] = orig - step
                down = loss_fn(model, sub, answer).item()
                flat[i] = orig
            numeric[i] = (up - down) / (2 * step)
        scale = max(analytic.norm().item(), numeric.norm().item())
        if scale < 1e-10:
            continue
        worst = max(worst, (analytic - numeric).norm().item() / scale)
    return worst


GRID = list(itertools.product(("drum", "nbfnet", "redgnn"), ("max", "mean", "sum"), ("identity", "relu", "tanh"), ("linear", "dot")))


def fixture_subgraph(seed=0, n=10, m=24, n_rel=3):
    rng = np.random.default_rng(seed)
    return make_subgraph(n, random_edges(rng, n, m, n_rel), anchor=0, q=1)


def undirected(edges, n):
    """Observation graph of undirected edges (each stored in both directions)."""
    rows = [(a, 0, b) for a, b in edges] + [(b, 0, a) for a, b in edges]
    return ObservedGraph(np.array(rows, dtype=np.int64).reshape(-1, 3), n)


def dense_ppr(edges, n, u, alpha, orientation="row"):
    """Direct solve of (I - (1 - alpha) T) p = alpha * s with a dense transition."""
    A = np.zeros((n, n))
    for a, b in edges:
        A[a, b] += 1
        A[b, a] += 1
    deg = A.sum(axis=1)
    inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    T = inv[:, None] * A if orientation == "row" else A * inv[None, :]
    s = np.zeros(n)
    s[u] = 1.0
    return np.linalg.solve(np.eye(n) - (1 - alpha) * T, alpha * s)
