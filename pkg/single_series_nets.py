import logging
from typing import Callable, List, Literal, Optional

import numpy as np
from numba import njit
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.spatial.distance import pdist

from dist_matrix import DistanceMatrix, ts_dist
from errors import InvalidArgumentError
from net_build import Network
from series_core import TimeSeries, discretize, ts_to_windows

logger = logging.getLogger(__name__)

# 常量
VG_KINDS = ("natural", "horizontal")
VG_ALGORITHMS = ("naive", "divide_conquer")
PDIST_METRICS = {"euclidean": "euclidean", "manhattan": "cityblock", "chebyshev": "chebyshev"}


class EmbeddingSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    m: int = 1
    tau_embed: int = 1
    metric: Literal["euclidean", "manhattan", "chebyshev"] = "euclidean"
    radius: float

    @model_validator(mode="after")
    def _check(self):
        if self.m < 1 or self.tau_embed < 1:
            raise ValueError("embedding dimension and delay must be >= 1")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        return self

    def min_length(self) -> int:
        return (self.m - 1) * self.tau_embed + 2


def _labels(length: int) -> List[str]:
    return [str(t) for t in range(1, length + 1)]


# ---- transition (quantile) networks ----

def tsnet_qn(series: TimeSeries, breaks: int) -> Network:
    """Directed network over the occupied value bins, weighted by transition counts."""
    if isinstance(breaks, bool) or breaks < 2:
        raise InvalidArgumentError(f"breaks must be an integer >= 2, got {breaks}")
    if len(series) < 2:
        raise InvalidArgumentError("a transition network needs at least 2 values")
    symbols, _ = discretize(series, int(breaks))
    occupied = np.unique(symbols)
    if occupied.size == 1:
        logger.warning(f"series {series.id} is constant; transition network has a single node")
        return Network(node_labels=["1"], directed=True, weighted=True, self_loops=True)

    position = {int(s): k for k, s in enumerate(occupied)}
    steps, counts = np.unique(np.column_stack([symbols[:-1], symbols[1:]]), axis=0, return_counts=True)
    edges = [(position[int(a)], position[int(b)], float(c)) for (a, b), c in zip(steps, counts)]
    return Network(
        node_labels=[str(int(s)) for s in occupied],
        directed=True,
        weighted=True,
        self_loops=True,
        edges=edges,
    )


# ---- visibility graphs ----

@njit(cache=True)
def _scan(values, origin, stop, horizontal):
    """Nodes visible from `origin` walking towards `stop` (inclusive), either way."""
    direction = 1 if stop >= origin else -1
    found = np.empty(abs(stop - origin), dtype=np.int64)
    count = 0
    y0 = values[origin]
    best = -np.inf
    k = origin + direction
    while k != stop + direction:
        y = values[k]
        if horizontal:
            if best < y and best < y0:
                found[count] = k
                count += 1
            if y > best:
                best = y
            if best >= y0:
                break
        else:
            slope = (y - y0) / abs(k - origin)
            if slope > best:
                found[count] = k
                count += 1
                best = slope
        k += direction
    return found[:count]


def _vg_naive(values: np.ndarray, horizontal: bool, limit: Optional[int]) -> List[tuple]:
    n = values.size
    edges = []
    for i in range(n - 1):
        stop = n - 1 if limit is None else min(n - 1, i + limit)
        edges.extend((i, int(j)) for j in _scan(values, i, stop, horizontal))
    return edges


def _vg_divide_conquer(values: np.ndarray, horizontal: bool) -> List[tuple]:
    """Link the segment maximum to what it sees on each side, then recurse; no
    edge crosses the maximum."""
    edges = []
    stack = [(0, values.size - 1)]
    while stack:
        lo, hi = stack.pop()
        if lo >= hi:
            continue
        m = lo + int(np.argmax(values[lo:hi + 1]))
        if m > lo:
            edges.extend((int(i), m) for i in _scan(values, m, lo, horizontal))
            stack.append((lo, m - 1))
        if m < hi:
            edges.extend((m, int(j)) for j in _scan(values, m, hi, horizontal))
            stack.append((m + 1, hi))
    return edges


def tsnet_vg(series: TimeSeries, kind: str = "natural", directed: bool = False,
             limit: Optional[int] = None, algorithm: str = "naive") -> Network:
    if kind not in VG_KINDS:
        raise InvalidArgumentError(f"kind must be one of {VG_KINDS}, got {kind!r}")
    if algorithm not in VG_ALGORITHMS:
        raise InvalidArgumentError(f"algorithm must be one of {VG_ALGORITHMS}, got {algorithm!r}")
    if limit is not None and limit < 1:
        raise InvalidArgumentError(f"limit must be >= 1, got {limit}")
    if len(series) < 2:
        raise InvalidArgumentError("a visibility graph needs at least 2 values")

    values = np.ascontiguousarray(series.values, dtype=np.float64)
    horizontal = kind == "horizontal"
    if algorithm == "naive":
        edges = _vg_naive(values, horizontal, limit)
    else:
        edges = _vg_divide_conquer(values, horizontal)
        if limit is not None:
            edges = [(i, j) for i, j in edges if j - i <= limit]
    logger.debug(f"{kind} visibility graph of {series.id}: {len(edges)} edges ({algorithm})")
    return Network(
        node_labels=_labels(len(series)),
        directed=directed,
        edges=[(i, j, None) for i, j in edges],
    )


# ---- recurrence networks ----

def embed(values: np.ndarray, m: int, tau_embed: int) -> np.ndarray:
    """Delay embedding: row t is (x_t, x_{t+tau}, ..., x_{t+(m-1)tau})."""
    states = values.size - (m - 1) * tau_embed
    return np.column_stack([values[k * tau_embed:k * tau_embed + states] for k in range(m)])


def tsnet_rn(series: TimeSeries, spec: EmbeddingSpec) -> Network:
    if len(series) < spec.min_length():
        raise InvalidArgumentError(
            f"series {series.id} has {len(series)} values; m={spec.m}, tau={spec.tau_embed} "
            f"need at least {spec.min_length()}"
        )
    states = embed(series.values, spec.m, spec.tau_embed)
    dists = pdist(states, metric=PDIST_METRICS[spec.metric])
    rows, cols = np.triu_indices(states.shape[0], 1)
    keep = dists <= spec.radius
    return Network(
        node_labels=_labels(states.shape[0]),
        edges=[(int(u), int(v), None) for u, v in zip(rows[keep], cols[keep])],
    )


# ---- window proximity networks ----

def tsnet_windows(series: TimeSeries, width: int, step: int, fn,
                  builder: Callable[[DistanceMatrix], Network], workers: int = 1) -> Network:
    """Windows of one series become nodes (labelled by start index) of a proximity network."""
    window_set = ts_to_windows(series, width, step)
    if len(window_set.windows) == 1:
        return Network(node_labels=[window_set.windows[0].id])
    logger.info(f"{len(window_set.windows)} windows of width {width}, step {step} from {series.id}")
    return builder(ts_dist(window_set.windows, fn, workers))
