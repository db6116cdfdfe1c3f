"""Road-district graph, courier correlation graph and GCN normalisation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import ConnectivityError, DataError, DegenerateInputError


@dataclass(frozen=True)
class RoadNetwork:
    """Road network as an edge list plus node coordinates (meters)."""

    edges: np.ndarray        # (E, 3): u, v, length
    node_xy: np.ndarray      # (V, 2)
    directed: bool = False

    @property
    def n_nodes(self) -> int:
        return self.node_xy.shape[0]


@dataclass(frozen=True)
class DistrictGraph:
    """Directed, fully connected district graph.

    ``weights[u, v] = 1 / shortest_path(u, v)`` for ``u != v``; the diagonal is
    zero. The weight matrix doubles as the adjacency matrix.
    """

    weights: np.ndarray
    distances: np.ndarray
    centroids: np.ndarray
    matched_nodes: np.ndarray

    @property
    def n_districts(self) -> int:
        return self.weights.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        return self.weights


@dataclass(frozen=True)
class CourierGraph:
    """Symmetric courier graph weighted by non-negative Pearson correlation."""

    weights: np.ndarray
    constant_couriers: tuple[int, ...] = field(default=())

    @property
    def n_couriers(self) -> int:
        return self.weights.shape[0]


def match_centroids(node_xy: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the nearest network node for each centroid; ties go to the lowest id."""
    d2 = ((centroids[:, None, :] - node_xy[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)  # argmin returns the first minimum


def build_district_graph(network: RoadNetwork, centroids: np.ndarray) -> DistrictGraph:
    centroids = np.asarray(centroids, dtype=np.float64)
    matched = match_centroids(network.node_xy, centroids)
    m = len(matched)
    edges = np.asarray(network.edges, dtype=np.float64)
    u = edges[:, 0].astype(np.int64)
    v = edges[:, 1].astype(np.int64)
    length = edges[:, 2]
    if (length <= 0).any():
        raise DataError("road segment lengths must be positive")
    n = network.n_nodes
    # keep the shortest of any parallel segments; csr_matrix would sum duplicates
    best: dict[tuple[int, int], float] = {}
    for a, b, w in zip(u.tolist(), v.tolist(), length.tolist()):
        pairs = [(a, b)] if network.directed else [(a, b), (b, a)]
        for key in pairs:
            if w < best.get(key, np.inf):
                best[key] = w
    rows, cols = zip(*best.keys()) if best else ((), ())
    graph = csr_matrix((list(best.values()), (rows, cols)), shape=(n, n))
    dist_all = dijkstra(graph, directed=True, indices=matched)
    dist = dist_all[:, matched]
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            if not np.isfinite(dist[i, j]):
                raise ConnectivityError(f"district {j} is unreachable from district {i}")
            if dist[i, j] == 0.0:
                raise DegenerateInputError(f"districts {i} and {j} map to the same network node")
    weights = np.zeros((m, m))
    off = ~np.eye(m, dtype=bool)
    weights[off] = 1.0 / dist[off]
    np.fill_diagonal(dist, 0.0)
    return DistrictGraph(weights=weights, distances=dist, centroids=centroids, matched_nodes=matched)


def pearson_matrix(series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise Pearson correlation of the rows of ``series``.

    Returns ``(corr, constant)`` where rows flagged in ``constant`` have zero
    variance and zero correlation with everything.
    """
    x = np.asarray(series, dtype=np.float64)
    xc = x - x.mean(axis=1, keepdims=True)
    norm = np.sqrt((xc * xc).sum(axis=1))
    constant = norm == 0.0
    safe = np.where(constant, 1.0, norm)
    z = xc / safe[:, None]
    corr = z @ z.T
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    return np.clip(corr, -1.0, 1.0), constant


def build_courier_graph(rates: np.ndarray) -> CourierGraph:
    """Courier graph from per-courier rate series (one row per courier)."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 2 or rates.shape[1] < 3:
        raise DataError(f"need an (N, L>=3) series matrix, got shape {rates.shape}")
    corr, constant = pearson_matrix(rates)
    w = np.where(corr >= 0.0, corr, 0.0)
    np.fill_diagonal(w, 0.0)
    # z @ z.T is symmetric up to rounding; enforce it exactly
    w = np.triu(w, 1)
    w = w + w.T
    flagged = tuple(int(i) for i in np.flatnonzero(constant))
    if flagged:
        warnings.warn(f"constant rate series for couriers {list(flagged)}; left unconnected", RuntimeWarning,
                      stacklevel=2)
    return CourierGraph(weights=w, constant_couriers=flagged)


def normalize_adjacency(weights: np.ndarray) -> np.ndarray:
    """Symmetric GCN normalisation with self-loops, D^-1/2 (W + I) D^-1/2."""
    w = np.asarray(weights, dtype=np.float64)
    a = w + np.eye(w.shape[0])
    d = 1.0 / np.sqrt(a.sum(axis=1))
    # forming the outer product first keeps the result bitwise symmetric
    return a * np.outer(d, d)


def load_road_network(edges_path: str | Path, nodes_path: str | Path, directed: bool = False) -> RoadNetwork:
    """Read ``node_u node_v length_meters`` and ``node_id x y`` whitespace files."""
    edges = np.loadtxt(edges_path, ndmin=2)
    nodes = np.loadtxt(nodes_path, ndmin=2)
    order = np.argsort(nodes[:, 0])
    ids = nodes[order, 0].astype(np.int64)
    if not np.array_equal(ids, np.arange(len(ids))):
        raise DataError(f"{nodes_path}: node ids must be 0..V-1")
    if edges.shape[1] != 3:
        raise DataError(f"{edges_path}: expected 3 columns, got {edges.shape[1]}")
    return RoadNetwork(edges=edges, node_xy=nodes[order, 1:3], directed=directed)


def load_centroids(path: str | Path) -> np.ndarray:
    """Read ``district_id x y`` rows; districts must be numbered 0..M-1."""
    rows = np.loadtxt(path, ndmin=2)
    order = np.argsort(rows[:, 0])
    ids = rows[order, 0].astype(np.int64)
    if not np.array_equal(ids, np.arange(len(ids))):
        raise DataError(f"{path}: district ids must be 0..M-1")
    return rows[order, 1:3]


def save_road_network(network: RoadNetwork, edges_path: str | Path, nodes_path: str | Path) -> None:
    e = network.edges
    with open(edges_path, "w") as fh:
        for a, b, w in e:
            fh.write(f"{int(a)} {int(b)} {float(w)!r}\n")
    with open(nodes_path, "w") as fh:
        for i, (x, y) in enumerate(network.node_xy):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")


def save_centroids(centroids: np.ndarray, path: str | Path) -> None:
    with open(path, "w") as fh:
        for i, (x, y) in enumerate(centroids):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")


def export_courier_graph_csv(graph: CourierGraph, path: str | Path) -> None:
    n = graph.n_couriers
    header = ",".join(["courier_id"] + [f"w_{j}" for j in range(n)])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(n):
            fh.write(",".join([str(i)] + [repr(float(x)) for x in graph.weights[i]]) + "\n")
