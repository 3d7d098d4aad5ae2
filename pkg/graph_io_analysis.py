import logging
from pathlib import Path
from typing import List, Optional, Sequence
from xml.etree.ElementTree import ParseError

import networkx as nx
import pandas as pd
from pydantic import BaseModel, ConfigDict

from errors import DataError, InvalidArgumentError
from net_build import WEIGHT_ATTR, Network
from series_core import read_frame

logger = logging.getLogger(__name__)

# 常量
EDGE_COLUMNS = ["source", "target"]
WEIGHT_COLUMN = "weight"
BETWEENNESS_TIE = 1e-9
MODULARITY_GAIN = 1e-12


# ---- export / import ----

def export_edgelist(net: Network, path) -> None:
    """Tab-separated `source target [weight]`, one row per edge in canonical order."""
    rows = [
        [net.node_labels[u], net.node_labels[v]] + ([w] if net.weighted else [])
        for u, v, w in net.edges
    ]
    columns = EDGE_COLUMNS + ([WEIGHT_COLUMN] if net.weighted else [])
    pd.DataFrame(rows, columns=columns).to_csv(path, sep="\t", index=False, lineterminator="\n")
    logger.info(f"wrote {net.m} edges to {path}")


def import_edgelist(path, directed: bool = False, node_labels: Optional[Sequence[str]] = None) -> Network:
    """Read an edge list written by export_edgelist. Nodes follow `node_labels`
    when given, otherwise their first appearance; isolated nodes need `node_labels`."""
    path = Path(path)
    try:
        frame = read_frame(path, sep="\t", dtype=str, na_filter=False)
    except FileNotFoundError:
        raise DataError("file not found", str(path))
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, OSError) as e:
        raise DataError(f"cannot parse edge list ({e})", str(path))

    columns = list(frame.columns)
    if columns not in (EDGE_COLUMNS, EDGE_COLUMNS + [WEIGHT_COLUMN]):
        raise DataError(f"expected header {' '.join(EDGE_COLUMNS)} [{WEIGHT_COLUMN}]", str(path))
    weighted = WEIGHT_COLUMN in columns

    labels = list(node_labels) if node_labels is not None else []
    position = {label: k for k, label in enumerate(labels)}
    edges = []
    for row in frame.itertuples(index=False):
        ends = []
        for label in (row[0], row[1]):
            if label not in position:
                if node_labels is not None:
                    raise DataError(f"edge endpoint {label!r} is not a known node", str(path))
                position[label] = len(labels)
                labels.append(label)
            ends.append(position[label])
        try:
            weight = float(row[2]) if weighted else None
        except ValueError:
            raise DataError(f"weight {row[2]!r} is not a number", str(path))
        edges.append((ends[0], ends[1], weight))

    try:
        return Network(
            node_labels=labels,
            directed=directed,
            weighted=weighted,
            self_loops=any(u == v for u, v, _ in edges),
            edges=edges,
        )
    except ValueError as e:
        raise DataError(f"not a valid network ({e})", str(path))


def export_graphml(net: Network, path) -> None:
    g = nx.DiGraph() if net.directed else nx.Graph()
    g.add_nodes_from(net.node_labels)
    for u, v, w in net.edges:
        if net.weighted:
            g.add_edge(net.node_labels[u], net.node_labels[v], **{WEIGHT_ATTR: float(w)})
        else:
            g.add_edge(net.node_labels[u], net.node_labels[v])
    nx.write_graphml(g, str(path))
    logger.info(f"wrote {net.m} edges to {path}")


def import_graphml(path) -> Network:
    path = Path(path)
    if not path.is_file():
        raise DataError("file not found", str(path))
    try:
        g = nx.read_graphml(str(path))
    except (nx.NetworkXError, ParseError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse GraphML ({e})", str(path))
    try:
        return Network.from_networkx(g)
    except ValueError as e:
        raise DataError(f"not a valid network ({e})", str(path))


def read_network(path, directed: bool = False, node_labels: Optional[Sequence[str]] = None) -> Network:
    """Load a network by extension: .graphml, anything else as an edge list."""
    if Path(path).suffix.lower() == ".graphml":
        return import_graphml(path)
    if node_labels is None:
        logger.warning(f"{path}: an edge list carries no isolated nodes; pass the node labels "
                       f"or use GraphML when node counts matter")
    return import_edgelist(path, directed=directed, node_labels=node_labels)


def write_network(net: Network, path, output_format: str = "edgelist") -> None:
    if output_format == "graphml":
        export_graphml(net, path)
    elif output_format == "edgelist":
        export_edgelist(net, path)
    else:
        raise InvalidArgumentError(f"unknown format {output_format!r}; use edgelist or graphml")


# ---- analysis ----

class GraphStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    m: int
    density: float
    degrees: List[int]
    components: int
    component_sizes: List[int]


def graph_stats(net: Network) -> GraphStats:
    g = net.to_networkx()
    n, m = net.n, net.m
    loops = nx.number_of_selfloops(g)
    if n < 2:
        density = 0.0
    elif net.directed:
        density = (m - loops) / (n * (n - 1))
    else:
        density = 2.0 * (m - loops) / (n * (n - 1))
    if net.directed:
        parts = list(nx.weakly_connected_components(g))
    else:
        parts = list(nx.connected_components(g))
    return GraphStats(
        n=n,
        m=m,
        density=density,
        degrees=[int(d) for _, d in sorted(g.degree(), key=lambda item: item[0])],
        components=len(parts),
        component_sizes=sorted((len(p) for p in parts), reverse=True),
    )


class CommunityPartition(BaseModel):
    """assignment[k] is the 1-based community id of node k."""

    model_config = ConfigDict(frozen=True)

    assignment: List[int]
    communities: List[List[str]]
    modularity: float

    @property
    def groups(self) -> int:
        return len(self.communities)


def _ordered(parts) -> List[List[int]]:
    return sorted((sorted(p) for p in parts), key=lambda p: p[0])


def girvan_newman(net: Network) -> CommunityPartition:
    """Remove the highest-betweenness edge (ties: smallest index pair) until no
    edges remain and keep the component split with the best modularity."""
    if net.directed:
        raise InvalidArgumentError("community detection expects an undirected network")
    if net.n == 0:
        return CommunityPartition(assignment=[], communities=[], modularity=0.0)

    original = nx.Graph()
    original.add_nodes_from(range(net.n))
    original.add_edges_from((u, v) for u, v, _ in net.edges if u != v)
    if original.number_of_edges() == 0:
        best_parts, best_q = [[k] for k in range(net.n)], 0.0
    else:
        work = original.copy()
        best_parts = _ordered(nx.connected_components(work))
        best_q = nx.community.modularity(original, best_parts, weight=None)
        count = len(best_parts)
        while work.number_of_edges() > 0:
            betweenness = nx.edge_betweenness_centrality(work, normalized=False)
            top = max(betweenness.values())
            u, v = min((min(e), max(e)) for e, b in betweenness.items() if b >= top - BETWEENNESS_TIE)
            work.remove_edge(u, v)
            if nx.number_connected_components(work) == count:
                continue
            parts = _ordered(nx.connected_components(work))
            count = len(parts)
            q = nx.community.modularity(original, parts, weight=None)
            logger.debug(f"removed ({u + 1}, {v + 1}): {count} groups, modularity {q:.4f}")
            if q > best_q + MODULARITY_GAIN:
                best_parts, best_q = parts, q

    assignment = [0] * net.n
    for cid, part in enumerate(best_parts, start=1):
        for k in part:
            assignment[k] = cid
    return CommunityPartition(
        assignment=assignment,
        communities=[[net.node_labels[k] for k in part] for part in best_parts],
        modularity=float(best_q),
    )
