import inspect
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from dist_matrix import DistanceMatrix, dist_matrix_normalize, dist_percentile, ts_dist
from errors import InvalidArgumentError, LayerComputationError
from series_core import TimeSeries, ts_to_windows, window_count

logger = logging.getLogger(__name__)

# 常量
WEIGHT_ATTR = "weight"
LABEL_ATTR = "label"

Edge = Tuple[int, int, Optional[float]]


class Network(BaseModel):
    """Graph over labelled nodes. Edge endpoints are 0-based positions in
    `node_labels`; undirected edges are stored with u < v, all edges sorted."""

    model_config = ConfigDict(frozen=True)

    node_labels: List[str]
    directed: bool = False
    weighted: bool = False
    self_loops: bool = False
    edges: List[Edge] = []

    @model_validator(mode="before")
    @classmethod
    def _canonical_edges(cls, data):
        if not isinstance(data, dict) or "edges" not in data:
            return data
        directed = data.get("directed", False)
        weighted = data.get("weighted", False)
        edges = []
        for edge in data["edges"]:
            u, v = int(edge[0]), int(edge[1])
            w = edge[2] if len(edge) > 2 else None
            if not directed and u > v:
                u, v = v, u
            edges.append((u, v, float(w) if weighted and w is not None else None))
        return {**data, "edges": sorted(edges, key=lambda e: (e[0], e[1]))}

    @model_validator(mode="after")
    def _check(self):
        n = len(self.node_labels)
        if len(set(self.node_labels)) != n:
            raise ValueError("node labels must be unique")
        seen = set()
        for u, v, w in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) refers to a node outside 0..{n - 1}")
            if u == v and not self.self_loops:
                raise ValueError(f"self-loop on node {self.node_labels[u]!r} is not allowed here")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            if self.weighted and w is None:
                raise ValueError(f"edge ({u}, {v}) of a weighted network has no weight")
            seen.add((u, v))
        return self

    @property
    def n(self) -> int:
        return len(self.node_labels)

    @property
    def m(self) -> int:
        return len(self.edges)

    def edge_set(self) -> Set[Tuple[int, int]]:
        """Edges as 1-based index pairs."""
        return {(u + 1, v + 1) for u, v, _ in self.edges}

    def weights(self) -> Dict[Tuple[int, int], float]:
        return {(u + 1, v + 1): w for u, v, w in self.edges}

    def degrees(self) -> List[int]:
        deg = [0] * self.n
        for u, v, _ in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def out_probabilities(self) -> Dict[Tuple[int, int], float]:
        """Out-weights of each node scaled to sum to 1 (transition probabilities)."""
        totals = [0.0] * self.n
        for u, _, w in self.edges:
            totals[u] += 1.0 if w is None else w
        return {
            (u + 1, v + 1): (1.0 if w is None else w) / totals[u]
            for u, v, w in self.edges if totals[u] > 0
        }

    def to_networkx(self, by_label: bool = False) -> nx.Graph:
        g = nx.DiGraph() if self.directed else nx.Graph()
        key = (lambda k: self.node_labels[k]) if by_label else (lambda k: k)
        for k, label in enumerate(self.node_labels):
            g.add_node(key(k), **{LABEL_ATTR: label})
        for u, v, w in self.edges:
            if self.weighted:
                g.add_edge(key(u), key(v), **{WEIGHT_ATTR: w})
            else:
                g.add_edge(key(u), key(v))
        return g

    @classmethod
    def from_networkx(cls, g: nx.Graph, weighted: Optional[bool] = None) -> "Network":
        nodes = list(g.nodes)
        position = {node: k for k, node in enumerate(nodes)}
        if weighted is None:
            weighted = g.number_of_edges() > 0 and all(WEIGHT_ATTR in d for _, _, d in g.edges(data=True))
        edges = [
            (position[a], position[b], d.get(WEIGHT_ATTR) if weighted else None)
            for a, b, d in g.edges(data=True)
        ]
        return cls(
            node_labels=[str(g.nodes[node].get(LABEL_ATTR, node)) for node in nodes],
            directed=g.is_directed(),
            weighted=weighted,
            self_loops=nx.number_of_selfloops(g) > 0,
            edges=edges,
        )


class TemporalNetwork(BaseModel):
    model_config = ConfigDict(frozen=True)

    layers: List[Network]
    width: int
    step: int

    @model_validator(mode="after")
    def _same_nodes(self):
        if self.layers and any(layer.node_labels != self.layers[0].node_labels for layer in self.layers):
            raise ValueError("all layers must share node labels and order")
        return self

    def __len__(self) -> int:
        return len(self.layers)


# ---- builders ----

def net_knn(D: DistanceMatrix, k: int) -> Network:
    """Link each node to its k nearest others (distance, then lower index); the
    result is the undirected union of the per-node choices."""
    n = D.n
    if not 1 <= k <= n - 1:
        raise InvalidArgumentError(f"k must lie in [1, {n - 1}] for {n} nodes, got {k}")
    edges = set()
    index = np.arange(n)
    for i in range(n):
        others = index[index != i]
        order = others[np.lexsort((others, D.values[i, others]))]
        for j in order[:k]:
            edges.add((min(i, int(j)), max(i, int(j))))
    return Network(node_labels=D.labels, edges=[(u, v, None) for u, v in edges])


def net_enn(D: DistanceMatrix, eps: float) -> Network:
    if eps < 0:
        raise InvalidArgumentError(f"eps must be >= 0, got {eps}")
    rows, cols = np.triu_indices(D.n, 1)
    keep = D.values[rows, cols] <= eps
    return Network(node_labels=D.labels, edges=[(int(u), int(v), None) for u, v in zip(rows[keep], cols[keep])])


def net_weighted(D: DistanceMatrix) -> Network:
    """Complete graph weighted by 1 - d; pairs at distance 1 get no edge."""
    if np.any(D.values > 1.0):
        raise InvalidArgumentError(
            "weighted networks need distances in [0, 1]; normalize the matrix first (dist_matrix_normalize)"
        )
    rows, cols = np.triu_indices(D.n, 1)
    weights = 1.0 - D.values[rows, cols]
    edges = [(int(u), int(v), float(w)) for u, v, w in zip(rows, cols, weights) if w > 0]
    return Network(node_labels=D.labels, weighted=True, edges=edges)


def net_significant(S, labels: Optional[Sequence[str]] = None) -> Network:
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidArgumentError(f"significance matrix must be square, got shape {S.shape}")
    if not np.all((S == 0) | (S == 1)):
        raise InvalidArgumentError("significance matrix must hold only 0 and 1")
    if not np.array_equal(S, S.T) or np.any(np.diag(S) != 0):
        raise InvalidArgumentError("significance matrix must be symmetric with a zero diagonal")
    n = S.shape[0]
    labels = list(labels) if labels is not None else [str(k) for k in range(1, n + 1)]
    if len(labels) != n:
        raise InvalidArgumentError(f"{len(labels)} labels for a {n}x{n} matrix")
    rows, cols = np.triu_indices(n, 1)
    keep = S[rows, cols] == 1
    return Network(node_labels=labels, edges=[(int(u), int(v), None) for u, v in zip(rows[keep], cols[keep])])


def significance_from_distances(D: DistanceMatrix, ceiling: float = 1.0) -> np.ndarray:
    """Binary matrix from a significance-aware kernel: non-significant pairs sit
    at `ceiling` (1, or vr_ceiling for van Rossum)."""
    S = (D.values < ceiling).astype(int)
    np.fill_diagonal(S, 0)
    return S


def _enn_builder(D: DistanceMatrix, eps: Optional[float] = None,
                 eps_percentile: Optional[float] = None) -> Network:
    if (eps is None) == (eps_percentile is None):
        raise InvalidArgumentError("give exactly one of eps and eps_percentile")
    if eps is None:
        eps = dist_percentile(D, eps_percentile)
        logger.info(f"eps at percentile {eps_percentile}: {eps!r}")
    return net_enn(D, eps)


def _weighted_builder(D: DistanceMatrix, normalize: bool = False) -> Network:
    return net_weighted(dist_matrix_normalize(D) if normalize else D)


def _significant_builder(D: DistanceMatrix, ceiling: float = 1.0) -> Network:
    if D.n > 1 and float(D.upper().max()) > ceiling:
        raise InvalidArgumentError(
            f"distances exceed {ceiling!r}; the significant builder needs a matrix computed "
            f"with a significance test, where non-significant pairs sit at the kernel maximum"
        )
    return net_significant(significance_from_distances(D, ceiling), D.labels)


BUILDERS = {
    "knn": net_knn,
    "enn": _enn_builder,
    "weighted": _weighted_builder,
    "significant": _significant_builder,
}


def make_builder(name: str, **params) -> Callable[[DistanceMatrix], Network]:
    if name not in BUILDERS:
        raise InvalidArgumentError(f"unknown builder {name!r}; choose from {sorted(BUILDERS)}")
    func = BUILDERS[name]
    try:
        inspect.signature(func).bind(None, **params)
    except TypeError as e:
        raise InvalidArgumentError(f"bad parameters for the {name} builder: {e}")
    return partial(func, **params)


# ---- temporal networks ----

def _window_slices(series: Sequence[TimeSeries], width: int, step: int) -> List[List[TimeSeries]]:
    """One list of aligned window slices per layer, ids kept from the source series."""
    window_sets = [ts_to_windows(s, width, step) for s in series]
    count = len(window_sets[0].windows)
    return [
        [TimeSeries(id=s.id, values=ws.windows[w].values) for s, ws in zip(series, window_sets)]
        for w in range(count)
    ]


def temporal_net(series: Sequence[TimeSeries], width: int, step: int, fn,
                 builder: Callable[[DistanceMatrix], Network], workers: int = 1) -> TemporalNetwork:
    if len(series) < 2:
        raise InvalidArgumentError(f"need at least 2 series, got {len(series)}")
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"temporal networks need equal-length series, got lengths {sorted(lengths)}")
    layers_in = _window_slices(series, width, step)
    logger.info(f"building {len(layers_in)} layer(s): width={width}, step={step}, "
                f"expected {window_count(lengths.pop(), width, step)}")

    def build(layer_series):
        return builder(ts_dist(layer_series, fn))

    results: List[Optional[Network]] = [None] * len(layers_in)
    failures = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        future_to_layer = {executor.submit(build, layer): w for w, layer in enumerate(layers_in)}
        for future in as_completed(future_to_layer):
            w = future_to_layer[future]
            try:
                results[w] = future.result()
            except Exception as e:
                failures.append((w, e))
    if failures:
        w, cause = min(failures, key=lambda f: f[0])
        logger.error(f"layer {w + 1} failed: {cause}")
        raise LayerComputationError(w + 1, cause)
    return TemporalNetwork(layers=results, width=width, step=step)
