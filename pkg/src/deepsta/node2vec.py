"""District embeddings via node2vec walks and skip-gram with negative sampling."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import _kernels
from .checkpoint import save_arrays
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 40
    p: float = 1.0
    q: float = 1.0
    window_size: int = 5
    negative_samples: int = 5
    embedding_dim: int = 128
    epochs: int = 5
    lr: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ConfigError(f"p and q must be positive, got p={self.p}, q={self.q}")
        if self.walk_length < self.window_size + 1:
            raise ConfigError(f"walk_length ({self.walk_length}) must be >= window_size + 1 ({self.window_size + 1})")
        if self.embedding_dim < 1 or self.walks_per_node < 1 or self.epochs < 1:
            raise ConfigError("embedding_dim, walks_per_node and epochs must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def alias_setup(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Walker/Vose alias table for a discrete distribution."""
    n = len(probs)
    scaled = np.asarray(probs, dtype=np.float64) * n / np.sum(probs)
    prob = np.zeros(n)
    alias = np.zeros(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] + scaled[s] - 1.0
        (small if scaled[l] < 1.0 else large).append(l)
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    return prob, alias


class AliasGraph:
    """CSR view of a weighted graph with node and edge alias tables.

    The table for directed edge ``e = (t -> v)`` covers the neighbours of ``v``
    with weights ``w(v, x) * bias(t, x)``, where the bias is ``1/p`` for
    returning to ``t``, 1 if ``x`` neighbours ``t`` and ``1/q`` otherwise.
    """

    def __init__(self, weights: np.ndarray, p: float = 1.0, q: float = 1.0):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DataError(f"weight matrix must be square, got {w.shape}")
        if (w < 0).any():
            raise DataError("node2vec needs non-negative weights")
        n = w.shape[0]
        nbrs = [np.flatnonzero((w[v] > 0) & (np.arange(n) != v)) for v in range(n)]
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        self.indptr[1:] = np.cumsum([len(x) for x in nbrs])
        self.indices = np.concatenate(nbrs).astype(np.int64) if n else np.zeros(0, np.int64)
        self.node_prob = np.zeros(len(self.indices))
        self.node_alias = np.zeros(len(self.indices), dtype=np.int64)
        for v in range(n):
            if len(nbrs[v]):
                pr, al = alias_setup(w[v, nbrs[v]])
                self.node_prob[self.indptr[v]:self.indptr[v + 1]] = pr
                self.node_alias[self.indptr[v]:self.indptr[v + 1]] = al
        adjacent = w > 0
        sizes = np.array([len(nbrs[int(v)]) for v in self.indices], dtype=np.int64)
        self.edge_off = np.zeros(len(self.indices), dtype=np.int64)
        if len(sizes):
            self.edge_off[1:] = np.cumsum(sizes)[:-1]
        total = int(sizes.sum())
        self.edge_prob = np.zeros(total)
        self.edge_alias = np.zeros(total, dtype=np.int64)
        for t in range(n):
            for e in range(self.indptr[t], self.indptr[t + 1]):
                v = self.indices[e]
                xs = nbrs[v]
                if not len(xs):
                    continue
                bias = np.where(xs == t, 1.0 / p, np.where(adjacent[t, xs] | adjacent[xs, t], 1.0, 1.0 / q))
                pr, al = alias_setup(w[v, xs] * bias)
                o = self.edge_off[e]
                self.edge_prob[o:o + len(xs)] = pr
                self.edge_alias[o:o + len(xs)] = al
        self.n_nodes = n


def walk_uniforms(seed: int, node: int, walk_index: int, walk_length: int) -> np.ndarray:
    """Uniform draws for one walk, from a stream keyed by (seed, node, walk_index)."""
    rng = np.random.default_rng([seed, node, walk_index])
    return rng.random((max(walk_length - 1, 0), 2))


def generate_walks(weights: np.ndarray, cfg: WalkConfig) -> np.ndarray:
    """Biased second-order random walks; returns an int array (walks, walk_length).

    Walks are ordered by walk index, then by start node.
    """
    graph = AliasGraph(weights, cfg.p, cfg.q)
    n = graph.n_nodes
    starts = np.tile(np.arange(n, dtype=np.int64), cfg.walks_per_node)
    uniforms = np.empty((len(starts), max(cfg.walk_length - 1, 0), 2))
    for k, node in enumerate(starts):
        uniforms[k] = walk_uniforms(cfg.seed, int(node), k // n, cfg.walk_length)
    return _kernels.walks(graph.indptr, graph.indices, graph.node_prob, graph.node_alias, graph.edge_off,
                          graph.edge_prob, graph.edge_alias, starts, uniforms, cfg.walk_length)


def skipgram_pairs(walks: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) pairs within ``window`` positions, walk by walk."""
    n_walks, length = walks.shape
    centers, contexts = [], []
    for off in range(-window, window + 1):
        if off == 0:
            continue
        lo, hi = max(0, -off), min(length, length - off)
        pos = np.arange(lo, hi)
        centers.append(np.broadcast_to(pos, (n_walks, len(pos))))
        contexts.append(np.broadcast_to(pos + off, (n_walks, len(pos))))
    cpos = np.concatenate(centers, axis=1)
    xpos = np.concatenate(contexts, axis=1)
    # order pairs by walk then by center position so updates sweep along each walk
    order = np.lexsort((xpos, cpos), axis=1)
    cpos = np.take_along_axis(cpos, order, axis=1)
    xpos = np.take_along_axis(xpos, order, axis=1)
    rows = np.arange(n_walks)[:, None]
    return walks[rows, cpos].ravel(), walks[rows, xpos].ravel()


def negative_distribution(walks: np.ndarray, n_nodes: int, power: float = 0.75) -> np.ndarray:
    """Unigram frequency of nodes over the walk corpus raised to ``power``, normalised."""
    counts = np.bincount(walks.ravel(), minlength=n_nodes).astype(np.float64)
    weights = counts**power
    return weights / weights.sum()


def train_skipgram(walks: np.ndarray, cfg: WalkConfig, n_nodes: int | None = None,
                   return_losses: bool = False):
    """Skip-gram with negative sampling; returns the (n_nodes, dim) input-vector matrix."""
    walks = np.asarray(walks, dtype=np.int64)
    if walks.size == 0:
        raise DataError("no walks to train on")
    n = int(walks.max()) + 1 if n_nodes is None else n_nodes
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    dim = cfg.embedding_dim
    syn0 = (rng.random((n, dim)) - 0.5) / dim
    syn1 = np.zeros((n, dim))
    centers, contexts = skipgram_pairs(walks, cfg.window_size)
    neg_p = negative_distribution(walks, n)
    lr_floor = cfg.lr * 1e-4
    losses = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(centers)) if epoch else np.arange(len(centers))
        negatives = rng.choice(n, size=(len(centers), cfg.negative_samples), p=neg_p)
        lr0 = cfg.lr - (cfg.lr - lr_floor) * epoch / cfg.epochs
        lr1 = cfg.lr - (cfg.lr - lr_floor) * (epoch + 1) / cfg.epochs
        losses.append(float(_kernels.sgns_epoch(syn0, syn1, centers[perm], contexts[perm], negatives, lr0, lr1)))
    return (syn0, losses) if return_losses else syn0


def embed_districts(weights: np.ndarray, cfg: WalkConfig | None = None) -> np.ndarray:
    cfg = cfg or WalkConfig()
    walks = generate_walks(weights, cfg)
    return train_skipgram(walks, cfg, n_nodes=weights.shape[0])


def save_embedding_csv(emb: np.ndarray, path: str | Path) -> None:
    dim = emb.shape[1]
    with open(path, "w") as fh:
        fh.write(",".join(["district_id"] + [f"e{k}" for k in range(dim)]) + "\n")
        for j, row in enumerate(emb):
            fh.write(",".join([str(j)] + [repr(float(x)) for x in row]) + "\n")


def load_embedding_csv(path: str | Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0])
    return data[order, 1:]


def save_embedding(emb: np.ndarray, csv_path: str | Path, bin_path: str | Path, cfg: WalkConfig) -> None:
    save_embedding_csv(emb, csv_path)
    save_arrays(bin_path, {"road_embedding": emb}, meta={"walk_config": cfg.to_dict()})
