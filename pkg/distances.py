import logging
import math
from enum import Enum
from functools import partial
from typing import Callable, Literal, Optional, Tuple, Union

import numpy as np
from numba import njit
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.integrate import simpson
from scipy.stats import norm as normal_dist

from errors import DegenerateInputError, InvalidArgumentError
from series_core import BinRule, EventSeries, TimeSeries, discretize, events_from_ts

logger = logging.getLogger(__name__)

# 常量
VR_GRID_DIVISIONS = 20
VR_TAIL_TAUS = 8.0
NMI_NORMS = ("half_sum", "min", "max", "sqrt")


class CorrelationMode(str, Enum):
    ABS = "abs"
    POS = "pos"
    NEG = "neg"


class SignificanceSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = 0.05
    method: Literal["fisher_z", "surrogate"] = "fisher_z"
    n_surrogates: int = 100
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _check(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.method == "surrogate":
            if self.n_surrogates < 1:
                raise ValueError("n_surrogates must be >= 1")
            if self.seed is None:
                raise ValueError("a surrogate test needs an explicit seed")
        return self


class EsParams(BaseModel):
    """Event synchronization window: a fixed tau, or 'local' (optionally capped by tau_max)."""

    model_config = ConfigDict(frozen=True)

    tau: Union[float, Literal["local"]] = 1.0
    tau_max: Optional[float] = None
    mode: Literal["symmetric", "asymmetric"] = "symmetric"

    @model_validator(mode="after")
    def _check(self):
        if self.tau != "local" and self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.tau_max is not None and self.tau_max <= 0:
            raise ValueError("tau_max must be positive")
        return self


class VrParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    kernel: Literal["gaussian", "laplacian"] = "laplacian"
    tau: float = 1.0

    @model_validator(mode="after")
    def _check(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        return self


class SurrogateResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    observed: float
    null: Tuple[float, ...]
    threshold: float
    significant: bool
    clamped: bool = False


def _as_values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float)


def _same_length(a: np.ndarray, b: np.ndarray, minimum: int) -> None:
    if a.size != b.size:
        raise InvalidArgumentError(f"series lengths differ ({a.size} vs {b.size})")
    if a.size < minimum:
        raise InvalidArgumentError(f"series need at least {minimum} values, got {a.size}")


# ---- correlation family ----

def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateInputError("correlation is undefined for a constant series")
    da = a - a.mean()
    db = b - b.mean()
    r = float(np.dot(da, db) / math.sqrt(np.dot(da, da) * np.dot(db, db)))
    return min(1.0, max(-1.0, r))


def pcc(x, y) -> float:
    a, b = _as_values(x), _as_values(y)
    _same_length(a, b, 3)
    return _pearson(a, b)


def _mode_distance(r: float, mode: CorrelationMode) -> float:
    if mode is CorrelationMode.ABS:
        return 1.0 - abs(r)
    if mode is CorrelationMode.POS:
        return 1.0 - max(0.0, r)
    return 1.0 - max(0.0, -r)


def fisher_ci(r: float, length: int, alpha: float = 0.05) -> Tuple[float, float]:
    """Confidence interval of a correlation via the Fisher z-transformation."""
    if length < 4:
        raise InvalidArgumentError(f"the Fisher interval needs T >= 4, got {length}")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    if abs(r) >= 1.0:
        raise DegenerateInputError("the Fisher transform is infinite for |r| = 1")
    q = normal_dist.ppf(1.0 - alpha / 2.0)
    z = math.atanh(r)
    half_width = q / math.sqrt(length - 3)
    return math.tanh(z - half_width), math.tanh(z + half_width)


def _fisher_rejects(r: float, length: int, alpha: float) -> bool:
    if abs(r) >= 1.0:
        return True
    low, high = fisher_ci(r, length, alpha)
    return not low <= 0.0 <= high


def _require_fisher(sig: SignificanceSpec) -> None:
    if sig.method != "fisher_z":
        raise InvalidArgumentError("correlation distances only support the fisher_z significance test")


def dist_cor(x, y, mode: Union[str, CorrelationMode] = "abs",
             sig: Optional[SignificanceSpec] = None) -> float:
    mode = CorrelationMode(mode)
    a, b = _as_values(x), _as_values(y)
    r = pcc(a, b)
    if sig is not None:
        _require_fisher(sig)
        if not _fisher_rejects(r, a.size, sig.alpha):
            return 1.0
    return _mode_distance(r, mode)


def _lagged(a: np.ndarray, b: np.ndarray, lag: int) -> Tuple[np.ndarray, np.ndarray]:
    if lag >= 0:
        return a[lag:], b[:a.size - lag]
    return a[:a.size + lag], b[-lag:]


def dist_ccf(x, y, tau_max: int = 0, mode: Union[str, CorrelationMode] = "abs",
             sig: Optional[SignificanceSpec] = None) -> float:
    """Cross-correlation distance: best correlation over lags in [-tau_max, tau_max],
    each computed on the overlapping samples only."""
    mode = CorrelationMode(mode)
    a, b = _as_values(x), _as_values(y)
    if a.size != b.size:
        raise InvalidArgumentError(f"series lengths differ ({a.size} vs {b.size})")
    if tau_max < 0 or a.size - tau_max < 3:
        raise InvalidArgumentError(f"tau_max={tau_max} leaves fewer than 3 overlapping samples")

    best = None
    for lag in range(-tau_max, tau_max + 1):
        xa, yb = _lagged(a, b, lag)
        try:
            r = _pearson(xa, yb)
        except DegenerateInputError:
            continue
        score = abs(r) if mode is CorrelationMode.ABS else (r if mode is CorrelationMode.POS else -r)
        if best is None or score > best[0]:
            best = (score, r, xa.size)
    if best is None:
        raise DegenerateInputError("every lag has a constant overlapping segment")

    _, r, overlap = best
    if sig is not None:
        _require_fisher(sig)
        if not _fisher_rejects(r, overlap, sig.alpha):
            return 1.0
    return _mode_distance(r, mode)


# ---- information theory ----

def entropy(symbols) -> float:
    """Shannon entropy in nats. 2-D input is read row-wise as joint symbols."""
    arr = np.asarray(symbols)
    if arr.size == 0:
        raise InvalidArgumentError("entropy of an empty sequence is undefined")
    if arr.ndim == 2:
        _, counts = np.unique(arr, axis=0, return_counts=True)
    else:
        _, counts = np.unique(arr, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mutual_info(xs, ys) -> float:
    xs, ys = np.asarray(xs), np.asarray(ys)
    if xs.size != ys.size:
        raise InvalidArgumentError(f"symbol sequences differ in length ({xs.size} vs {ys.size})")
    joint = entropy(np.column_stack([xs, ys]))
    return max(0.0, entropy(xs) + entropy(ys) - joint)


def _information_terms(x, y, rule: BinRule) -> Tuple[float, float, float]:
    a, b = _as_values(x), _as_values(y)
    _same_length(a, b, 2)
    sx, _ = discretize(a, rule)
    sy, _ = discretize(b, rule)
    return entropy(sx), entropy(sy), mutual_info(sx, sy)


def dist_nmi(x, y, rule: BinRule = "sturges", norm: str = "sqrt") -> float:
    if norm not in NMI_NORMS:
        raise InvalidArgumentError(f"unknown normalization {norm!r}; use one of {NMI_NORMS}")
    hx, hy, info = _information_terms(x, y, rule)
    if hx == 0.0 and hy == 0.0:
        return 0.0
    if norm == "half_sum":
        u = 0.5 * (hx + hy)
    elif norm == "min":
        u = min(hx, hy)
    elif norm == "max":
        u = max(hx, hy)
    else:
        u = math.sqrt(hx * hy)
    if u <= 0.0:
        return 1.0
    return 1.0 - min(1.0, max(0.0, info / u))


def dist_voi(x, y, rule: BinRule = "sturges") -> float:
    hx, hy, info = _information_terms(x, y, rule)
    return max(0.0, hx + hy - 2.0 * info)


# ---- dynamic time warping ----

@njit(cache=True, nogil=True)
def _dtw_cost(a, b):
    n, m = a.size, b.size
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = abs(a[i - 1] - b[j - 1]) + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return acc[n, m]


def dtw(x, y) -> float:
    a = np.ascontiguousarray(_as_values(x), dtype=np.float64)
    b = np.ascontiguousarray(_as_values(y), dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("dtw needs two non-empty series")
    return float(_dtw_cost(a, b))


# ---- event synchronization ----

def _neighbour_gaps(times: np.ndarray) -> np.ndarray:
    """Smallest gap to an existing neighbour per event (inf when there is none)."""
    gaps = np.full(times.size, np.inf)
    if times.size > 1:
        steps = np.diff(times)
        gaps[1:] = steps
        gaps[:-1] = np.minimum(gaps[:-1], steps)
    return gaps


def _tau_matrix(tx: np.ndarray, ty: np.ndarray, params: EsParams) -> np.ndarray:
    if params.tau == "local":
        tau = np.minimum(_neighbour_gaps(tx)[:, None], _neighbour_gaps(ty)[None, :]) / 2.0
    else:
        tau = np.full((tx.size, ty.size), float(params.tau))
    if params.tau_max is not None:
        tau = np.minimum(tau, params.tau_max)
    return tau


def es_count(x: EventSeries, y: EventSeries, params: Optional[EsParams] = None) -> float:
    """c(X|Y): events of x occurring shortly after events of y (ties count 1/2)."""
    params = params or EsParams()
    tx, ty = x.as_array(), y.as_array()
    if tx.size == 0 or ty.size == 0:
        return 0.0
    lag = tx[:, None] - ty[None, :]
    tau = _tau_matrix(tx, ty, params)
    hits = ((lag > 0) & (lag <= tau)).sum() + 0.5 * (lag == 0).sum()
    return float(hits)


def _es_raw(x: EventSeries, y: EventSeries, params: EsParams) -> Tuple[float, bool]:
    if len(x) == 0 or len(y) == 0:
        raise DegenerateInputError("event synchronization needs at least one event in each series")
    c_xy = es_count(x, y, params)
    c_yx = es_count(y, x, params)
    scale = math.sqrt(len(x) * len(y))
    if params.mode == "symmetric":
        value = 1.0 - (c_xy + c_yx) / scale
    else:
        value = 1.0 - (c_yx - c_xy + scale) / (2.0 * scale)
    clamped = min(1.0, max(0.0, value))
    return clamped, clamped != value


def _shuffled(events: EventSeries, rng: np.random.Generator) -> EventSeries:
    picks = np.sort(rng.choice(events.horizon, size=len(events), replace=False)) + 1
    return EventSeries(id=events.id, horizon=events.horizon, times=tuple(int(t) for t in picks))


def surrogate_test(x: EventSeries, y: EventSeries,
                   distance: Callable[[EventSeries, EventSeries], float],
                   sig: SignificanceSpec) -> SurrogateResult:
    """Compare the observed distance with distances between shuffled event sets."""
    if sig.method != "surrogate":
        raise InvalidArgumentError("event distances only support the surrogate significance test")
    rng = np.random.default_rng(sig.seed)
    observed = float(distance(x, y))
    null = [float(distance(_shuffled(x, rng), _shuffled(y, rng))) for _ in range(sig.n_surrogates)]
    threshold = float(np.quantile(null, sig.alpha))
    return SurrogateResult(observed=observed, null=tuple(null), threshold=threshold,
                           significant=observed < threshold)


def es_surrogate_test(x: EventSeries, y: EventSeries, params: Optional[EsParams],
                      sig: SignificanceSpec) -> SurrogateResult:
    params = params or EsParams()
    result = surrogate_test(x, y, lambda a, b: _es_raw(a, b, params)[0], sig)
    return result.model_copy(update={"clamped": _es_raw(x, y, params)[1]})


def dist_es(x: EventSeries, y: EventSeries, params: Optional[EsParams] = None,
            sig: Optional[SignificanceSpec] = None) -> float:
    params = params or EsParams()
    if sig is not None:
        result = es_surrogate_test(x, y, params, sig)
        return result.observed if result.significant else 1.0
    value, clamped = _es_raw(x, y, params)
    if clamped:
        logger.warning(f"event synchronization between {x.id} and {y.id} clamped to [0, 1] "
                       f"(tau exceeds half the smallest inter-event gap)")
    return value


# ---- van Rossum ----

def _vr_trace(times: np.ndarray, grid: np.ndarray, params: VrParams) -> np.ndarray:
    """Filtered event train on one segment; events sitting on the right edge are
    left out so the segment sees the left limit there."""
    if times.size == 0:
        return np.zeros(grid.size)
    lag = grid[:, None] - times[None, :]
    active = lag >= 0
    active[-1, :] = lag[-1, :] > 0
    if params.kernel == "gaussian":
        h = np.exp(-lag ** 2 / (2.0 * params.tau ** 2)) / math.sqrt(2.0 * math.pi * params.tau ** 2)
    else:
        h = np.exp(-np.abs(lag) / params.tau) / (2.0 * params.tau)
    return (h * active).sum(axis=1) / times.size


def _vr_raw(x: EventSeries, y: EventSeries, params: VrParams) -> float:
    if len(x) == 0 and len(y) == 0:
        return 0.0
    end = max(x.horizon, y.horizon) + VR_TAIL_TAUS * params.tau
    cuts = sorted({0.0, end} | {float(t) for t in x.times} | {float(t) for t in y.times})
    spacing = params.tau / VR_GRID_DIVISIONS
    tx, ty = x.as_array(), y.as_array()
    total = 0.0
    for left, right in zip(cuts[:-1], cuts[1:]):
        intervals = max(2, math.ceil((right - left) / spacing))
        intervals += intervals % 2
        grid = np.linspace(left, right, intervals + 1)
        gap = _vr_trace(tx, grid, params) - _vr_trace(ty, grid, params)
        total += float(simpson(gap ** 2, x=grid))
    return math.sqrt(max(0.0, total))


def vr_ceiling(params: Optional[VrParams] = None) -> float:
    """Largest van Rossum distance the kernel allows: filtered trains are
    non-negative with L2 norm at most the kernel's, so d <= sqrt(2) * ||h||."""
    params = params or VrParams()
    if params.kernel == "gaussian":
        energy = 1.0 / (4.0 * math.sqrt(math.pi) * params.tau)
    else:
        energy = 1.0 / (8.0 * params.tau)
    return math.sqrt(2.0 * energy)


def dist_vr(x: EventSeries, y: EventSeries, params: Optional[VrParams] = None,
            sig: Optional[SignificanceSpec] = None) -> float:
    """With `sig`, non-significant pairs get vr_ceiling(params), the van Rossum
    counterpart of the unit distance other kernels use."""
    params = params or VrParams()
    if sig is not None:
        result = surrogate_test(x, y, lambda a, b: _vr_raw(a, b, params), sig)
        return result.observed if result.significant else vr_ceiling(params)
    return _vr_raw(x, y, params)


# ---- significance tests for significant-link networks ----

def fisher_significant(x, y, alpha: float = 0.05) -> bool:
    a = _as_values(x)
    return _fisher_rejects(pcc(a, y), a.size, alpha)


def surrogate_significant(x: EventSeries, y: EventSeries,
                          distance: Callable[[EventSeries, EventSeries], float],
                          sig: SignificanceSpec) -> bool:
    return surrogate_test(x, y, distance, sig).significant


# ---- kernel registry ----

class DistanceKernel:
    """A distance function bound to its parameters.

    `transform` is applied to raw TimeSeries before comparison (event kernels
    use it to extract events); `symmetric` is False for kernels with d(x, y) != d(y, x).
    """

    def __init__(self, name: str, func: Callable, params: Optional[dict] = None,
                 symmetric: bool = True, transform: Optional[Callable] = None):
        self.name = name
        self.func = func
        self.params = dict(params or {})
        self.symmetric = symmetric
        self.transform = transform

    def __call__(self, x, y) -> float:
        return float(self.func(x, y, **self.params))

    def prepare(self, item):
        if self.transform is not None and isinstance(item, TimeSeries):
            return self.transform(item)
        return item

    @property
    def ceiling(self) -> float:
        """Distance a significance-aware run gives to non-significant pairs."""
        if self.name == "vr":
            return vr_ceiling(self.params.get("params"))
        return 1.0

    def __repr__(self) -> str:
        return f"DistanceKernel({self.name}, {self.params})"


KERNELS = {
    "cor": dist_cor,
    "ccf": dist_ccf,
    "dtw": dtw,
    "nmi": dist_nmi,
    "voi": dist_voi,
    "es": dist_es,
    "vr": dist_vr,
}
EVENT_KERNELS = ("es", "vr")


def make_kernel(name: str, event_percentile: Optional[float] = None,
                event_direction: str = "highest", **params) -> DistanceKernel:
    if name not in KERNELS:
        raise InvalidArgumentError(f"unknown distance {name!r}; choose from {sorted(KERNELS)}")
    transform = None
    symmetric = True
    if name in EVENT_KERNELS:
        if event_percentile is not None:
            transform = partial(events_from_ts, percentile=event_percentile, direction=event_direction)
        if name == "es":
            symmetric = (params.get("params") or EsParams()).mode == "symmetric"
    elif event_percentile is not None:
        raise InvalidArgumentError(f"event extraction does not apply to the {name} distance")
    return DistanceKernel(name, KERNELS[name], params, symmetric=symmetric, transform=transform)


def as_kernel(fn: Callable) -> DistanceKernel:
    if isinstance(fn, DistanceKernel):
        return fn
    return DistanceKernel(getattr(fn, "__name__", "custom"), fn)
