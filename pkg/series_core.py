import logging
import math
from pathlib import Path
from typing import List, Literal, Sequence, Tuple, Union

import chardet
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from tenacity import retry, retry_if_exception, stop_after_attempt, wait_exponential

from errors import DataError, EmptyWindowSetError, InvalidArgumentError

logger = logging.getLogger(__name__)

# 常量
TIME_COLUMN = "t"
BIN_RULES = ("sturges", "scott", "fd")
FLOAT_FORMAT = "%.17g"

BinRule = Union[str, int]


class TimeSeries(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    id: str
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _finite_vector(cls, v):
        arr = np.array(v, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("a time series needs a non-empty 1-D sequence of values")
        if not np.all(np.isfinite(arr)):
            raise ValueError("time series values must be finite")
        arr.setflags(write=False)
        return arr

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.values, other.values)

    __hash__ = None


class EventSeries(BaseModel):
    """Event time indices (1-based) over a reference horizon."""

    model_config = ConfigDict(frozen=True)

    id: str
    horizon: int
    times: Tuple[int, ...] = ()

    @model_validator(mode="after")
    def _check_times(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        previous = 0
        for t in self.times:
            if t <= previous or t > self.horizon:
                raise ValueError(
                    f"event times must be strictly increasing and within [1, {self.horizon}]"
                )
            previous = t
        return self

    def __len__(self) -> int:
        return len(self.times)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)

    def binary(self) -> np.ndarray:
        """Binary view: ones at the event positions."""
        out = np.zeros(self.horizon, dtype=int)
        if self.times:
            out[np.asarray(self.times) - 1] = 1
        return out


class WindowSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    source_id: str
    width: int
    step: int
    windows: List[TimeSeries]

    def starts(self) -> List[int]:
        return [1 + k * self.step for k in range(len(self.windows))]


def _as_values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float)


def window_count(length: int, width: int, step: int) -> int:
    if length < width:
        return 0
    return (length - width) // step + 1


def ts_to_windows(series: TimeSeries, width: int, step: int) -> WindowSet:
    if width < 1 or step < 1:
        raise InvalidArgumentError(f"width and step must be >= 1 (got width={width}, step={step})")
    if width > len(series):
        raise EmptyWindowSetError(
            f"window width {width} exceeds series length {len(series)}: no window fits"
        )
    windows = []
    for k in range(window_count(len(series), width, step)):
        start = k * step
        windows.append(TimeSeries(id=str(start + 1), values=series.values[start:start + width]))
    return WindowSet(source_id=series.id, width=width, step=step, windows=windows)


def events_from_ts(
    series: TimeSeries,
    percentile: float,
    direction: Literal["highest", "lowest"] = "highest",
) -> EventSeries:
    """Mark the indices holding the top (or bottom) `percentile` share of values.

    The threshold is the ceil(percentile * T)-th most extreme value, so distinct
    values give exactly that many events; every value tied with the threshold
    becomes an event as well.
    """
    if not 0.0 < percentile < 1.0:
        raise InvalidArgumentError(f"percentile must lie in (0, 1), got {percentile}")
    values = series.values
    # rounding keeps products like 0.3 * 10 from ceiling to 4
    k = max(1, math.ceil(round(percentile * values.size, 9)))
    ordered = np.sort(values)
    if direction == "highest":
        threshold = ordered[-k]
        mask = values >= threshold
    elif direction == "lowest":
        threshold = ordered[k - 1]
        mask = values <= threshold
    else:
        raise InvalidArgumentError(f"direction must be 'highest' or 'lowest', got {direction!r}")
    times = tuple(int(i) + 1 for i in np.flatnonzero(mask))
    return EventSeries(id=series.id, horizon=len(series), times=times)


def bin_count(values: np.ndarray, rule: BinRule) -> int:
    n = values.size
    if isinstance(rule, (int, np.integer)) and not isinstance(rule, bool):
        if rule < 1:
            raise InvalidArgumentError(f"fixed bin count must be >= 1, got {rule}")
        return int(rule)
    if rule not in BIN_RULES:
        raise InvalidArgumentError(f"unknown binning rule {rule!r}; use {BIN_RULES} or an integer")
    if n < 2:
        raise InvalidArgumentError(f"the {rule} rule needs at least 2 values")
    if rule == "sturges":
        return int(math.ceil(math.log2(n))) + 1
    value_range = float(values.max() - values.min())
    if rule == "scott":
        width = 3.49 * float(np.std(values, ddof=1)) * n ** (-1.0 / 3.0)
    else:
        q75, q25 = np.quantile(values, [0.75, 0.25])
        width = 2.0 * float(q75 - q25) * n ** (-1.0 / 3.0)
    if width <= 0 or value_range <= 0:
        return 1
    return max(1, int(math.ceil(value_range / width)))


def discretize(series, rule: BinRule = "sturges") -> Tuple[np.ndarray, int]:
    """Equal-width binning over [min, max]; symbols are 1-based and the maximum
    is folded into the top bin."""
    values = _as_values(series)
    bins = bin_count(values, rule)
    low, high = float(values.min()), float(values.max())
    if high == low:
        return np.ones(values.size, dtype=int), bins
    symbols = np.floor((values - low) / (high - low) * bins).astype(int) + 1
    return np.clip(symbols, 1, bins), bins


def dataset_sincos_generate(
    count_each: int, length: int, noise_sd: float = 0.0, seed: int = 0
) -> List[TimeSeries]:
    if count_each < 1 or length < 2:
        raise InvalidArgumentError("count_each must be >= 1 and length >= 2")
    if noise_sd < 0:
        raise InvalidArgumentError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    phase = 2.0 * np.pi * np.arange(length) / length
    dataset = []
    for name, wave in (("sin", np.sin(phase)), ("cos", np.cos(phase))):
        for k in range(1, count_each + 1):
            values = wave + rng.normal(0.0, noise_sd, length) if noise_sd > 0 else wave.copy()
            dataset.append(TimeSeries(id=f"{name}_{k}", values=values))
    return dataset


def random_ets(horizon: int, n_events: int, seed: int = 0, series_id: str = "events") -> EventSeries:
    if horizon < 1 or not 0 <= n_events <= horizon:
        raise InvalidArgumentError(
            f"need 0 <= n_events <= horizon (got n_events={n_events}, horizon={horizon})"
        )
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(horizon, size=n_events, replace=False)) + 1
    return EventSeries(id=series_id, horizon=horizon, times=tuple(int(t) for t in picks))


# ---- CSV ingestion ----

def _transient_os_error(exc: BaseException) -> bool:
    return isinstance(exc, OSError) and not isinstance(exc, (FileNotFoundError, IsADirectoryError))


def detect_encoding(raw: bytes) -> str:
    detected = chardet.detect(raw[:65536]).get("encoding")
    if not detected or detected.lower() in ("ascii", "utf-8", "utf-8-sig"):
        return "utf-8-sig"
    return detected


@retry(
    retry=retry_if_exception(_transient_os_error),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.5, min=0.5, max=5),
    reraise=True,
)
def read_frame(path: Path, **kwargs) -> pd.DataFrame:
    raw = path.read_bytes()
    return pd.read_csv(path, encoding=detect_encoding(raw), float_precision="round_trip", **kwargs)


def read_series_csv(path) -> List[TimeSeries]:
    """Wide CSV: header of series ids, one column per series, optional leading `t`."""
    path = Path(path)
    try:
        frame = read_frame(path)
    except FileNotFoundError:
        raise DataError("file not found", str(path))
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot parse CSV ({e})", str(path))
    except OSError as e:
        raise DataError(f"cannot read file ({e})", str(path))

    if len(frame.columns) and str(frame.columns[0]) == TIME_COLUMN:
        frame = frame.drop(columns=frame.columns[0])
    if frame.shape[1] == 0 or frame.shape[0] == 0:
        raise DataError("no series found", str(path))
    missing = [str(c) for c in frame.columns if frame[c].isna().any()]
    if missing:
        raise DataError(f"missing cells in column(s): {', '.join(missing)}", str(path))
    series = []
    for column in frame.columns:
        try:
            values = pd.to_numeric(frame[column], errors="raise").to_numpy(dtype=float)
            series.append(TimeSeries(id=str(column), values=values))
        except (ValueError, TypeError) as e:
            raise DataError(f"column {column!r} is not numeric ({e})", str(path))
    return series


def read_series_file(path) -> TimeSeries:
    """One-series-per-file mode: a single column, id taken from the file stem."""
    path = Path(path)
    series = read_series_csv(path)
    if len(series) != 1:
        raise DataError(f"expected a single column, found {len(series)}", str(path))
    return TimeSeries(id=path.stem, values=series[0].values)


def list_series_files(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidArgumentError(f"{directory} is not a directory")
    files = sorted((p for p in directory.iterdir() if p.suffix.lower() == ".csv"), key=lambda p: p.name)
    if not files:
        raise InvalidArgumentError(f"no CSV series files in {directory}")
    return files


def read_series_dir(directory) -> List[TimeSeries]:
    return [read_series_file(p) for p in list_series_files(directory)]


def load_series(source) -> List[TimeSeries]:
    """Read a wide CSV file or a directory of single-series files."""
    source = Path(source)
    if source.is_dir():
        return read_series_dir(source)
    return read_series_csv(source)


def write_series_csv(series: Sequence[TimeSeries], path, with_time: bool = True) -> None:
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise InvalidArgumentError("all series must share one length to be written side by side")
    frame = pd.DataFrame({s.id: s.values for s in series})
    if with_time:
        frame.insert(0, TIME_COLUMN, np.arange(1, lengths.pop() + 1))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_events_csv(events: EventSeries, path) -> None:
    frame = pd.DataFrame({events.id: list(events.times)}, dtype=int)
    frame.to_csv(path, index=False, lineterminator="\n")
