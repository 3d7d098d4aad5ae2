import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from itertools import combinations, islice
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from distances import DistanceKernel, as_kernel
from errors import (
    DataError,
    DegenerateInputError,
    IncompleteMergeError,
    InvalidArgumentError,
    MergeConflictError,
    PairComputationError,
)
from series_core import FLOAT_FORMAT, list_series_files, read_frame, read_series_file

logger = logging.getLogger(__name__)

# 常量
PART_NAME = "part_{index}_of_{total}.csv"
PART_PATTERN = re.compile(r"^part_(\d+)_of_(\d+)\.csv$")
PART_COLUMNS = ["i", "j", "dist"]
LABELS_FILE = "labels.txt"
CHUNKS_PER_WORKER = 4

Pair = Tuple[int, int]


class DistanceMatrix(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    labels: List[str]
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _copy_values(cls, v):
        arr = np.array(v, dtype=float)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check(self):
        n = len(self.labels)
        if self.values.shape != (n, n):
            raise ValueError(f"a matrix for {n} labels must be {n}x{n}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("distances must be finite")
        if np.any(self.values < 0):
            raise ValueError("distances must be >= 0")
        if not np.array_equal(self.values, self.values.T):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(self.values) != 0):
            raise ValueError("distance matrix diagonal must be 0")
        return self

    @property
    def n(self) -> int:
        return len(self.labels)

    def upper(self) -> np.ndarray:
        """Off-diagonal distances in canonical pair order."""
        return self.values[np.triu_indices(self.n, 1)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.values, other.values)

    __hash__ = None


class DistancePart(BaseModel):
    """One job's slice of the canonical pair list; indices are 1-based."""

    model_config = ConfigDict(frozen=True)

    part_index: int
    total_parts: int
    triples: List[Tuple[int, int, float]] = []

    @model_validator(mode="after")
    def _check(self):
        if not 1 <= self.part_index <= self.total_parts:
            raise ValueError(f"need 1 <= part_index <= total_parts (got {self.part_index} of {self.total_parts})")
        for i, j, _ in self.triples:
            if not 1 <= i < j:
                raise ValueError(f"pair ({i}, {j}) is not an upper-triangle pair")
        return self


# ---- canonical pair order ----

def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def part_bounds(total_pairs: int, part_index: int, total_parts: int) -> Tuple[int, int]:
    """[start, stop) positions of one part; the first (P mod k) parts get one extra pair."""
    base, extra = divmod(total_pairs, total_parts)
    k = part_index - 1
    start = k * base + min(k, extra)
    return start, start + base + (1 if k < extra else 0)


def canonical_pairs(n: int, start: int = 0, stop: Optional[int] = None) -> List[Pair]:
    """0-based (i, j), i < j, sorted by (i, j)."""
    return list(islice(combinations(range(n), 2), start, stop))


def _check_part(part_index: int, total_parts: int) -> None:
    if total_parts < 1 or not 1 <= part_index <= total_parts:
        raise InvalidArgumentError(
            f"need 1 <= part <= total parts (got part {part_index} of {total_parts})"
        )


# ---- pair engine ----

def _run_chunk(items: Sequence, kernel: Callable, pairs: Sequence[Pair], offset: int,
               out: np.ndarray) -> Optional[Tuple[int, Exception]]:
    """Fill out[offset + k] for each pair; stop at the chunk's first failure."""
    for k, (i, j) in enumerate(pairs):
        try:
            d = float(kernel(items[i], items[j]))
            if not math.isfinite(d):
                raise DegenerateInputError(f"kernel returned {d}")
        except Exception as e:
            return offset + k, e
        out[offset + k] = d
    return None


def compute_pairs(items: Sequence, kernel: Callable, pairs: Sequence[Pair], workers: int = 1) -> np.ndarray:
    """Evaluate `kernel` on every pair; raises PairComputationError for the first
    failing pair in canonical order, whatever the worker count."""
    if workers < 1:
        raise InvalidArgumentError(f"workers must be >= 1, got {workers}")
    out = np.zeros(len(pairs))
    if not pairs:
        return out

    failures = []
    if workers == 1:
        failure = _run_chunk(items, kernel, pairs, 0, out)
        if failure:
            failures.append(failure)
    else:
        size = max(1, math.ceil(len(pairs) / (workers * CHUNKS_PER_WORKER)))
        done = 0
        with ThreadPoolExecutor(max_workers=workers) as executor:
            future_to_chunk = {
                executor.submit(_run_chunk, items, kernel, pairs[start:start + size], start, out): start
                for start in range(0, len(pairs), size)
            }
            for future in as_completed(future_to_chunk):
                failure = future.result()
                if failure:
                    failures.append(failure)
                done += 1
                logger.debug(f"chunk {done}/{len(future_to_chunk)} finished")

    if failures:
        position, cause = min(failures, key=lambda f: f[0])
        i, j = pairs[position]
        logger.error(f"distance failed for pair ({i + 1}, {j + 1}): {cause}")
        raise PairComputationError(i + 1, j + 1, cause)
    return out


def _labels_of(series: Sequence) -> List[str]:
    return [str(getattr(s, "id", k + 1)) for k, s in enumerate(series)]


def _symmetric_kernel(fn) -> DistanceKernel:
    kernel = as_kernel(fn)
    if not kernel.symmetric:
        raise InvalidArgumentError(
            f"{kernel.name} is asymmetric; a distance matrix needs a symmetric kernel"
        )
    return kernel


def ts_dist(series: Sequence, fn, workers: int = 1) -> DistanceMatrix:
    kernel = _symmetric_kernel(fn)
    n = len(series)
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 series, got {n}")
    items = [kernel.prepare(s) for s in series]
    pairs = canonical_pairs(n)
    logger.info(f"computing {len(pairs)} {kernel.name} distances for {n} series with {workers} worker(s)")
    dists = compute_pairs(items, kernel, pairs, workers)

    values = np.zeros((n, n))
    rows, cols = np.triu_indices(n, 1)
    values[rows, cols] = dists
    values[cols, rows] = dists
    return DistanceMatrix(labels=_labels_of(series), values=values)


def ts_dist_part(series: Sequence, fn, part_index: int, total_parts: int, workers: int = 1) -> DistancePart:
    _check_part(part_index, total_parts)
    kernel = _symmetric_kernel(fn)
    n = len(series)
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 series, got {n}")
    start, stop = part_bounds(pair_count(n), part_index, total_parts)
    pairs = canonical_pairs(n, start, stop)
    items = [kernel.prepare(s) for s in series]
    dists = compute_pairs(items, kernel, pairs, workers)
    triples = [(i + 1, j + 1, float(d)) for (i, j), d in zip(pairs, dists)]
    return DistancePart(part_index=part_index, total_parts=total_parts, triples=triples)


def ts_dist_part_file(directory, fn, part_index: int, total_parts: int) -> DistancePart:
    """Like ts_dist_part over a directory of one-series files, holding at most the
    two series of the current pair in memory."""
    _check_part(part_index, total_parts)
    kernel = _symmetric_kernel(fn)
    files = list_series_files(directory)
    n = len(files)
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 series files, got {n}")
    start, stop = part_bounds(pair_count(n), part_index, total_parts)

    triples = []
    current: Optional[Tuple[int, object]] = None
    for i, j in islice(combinations(range(n), 2), start, stop):
        if current is None or current[0] != i:
            current = (i, kernel.prepare(read_series_file(files[i])))
        other = kernel.prepare(read_series_file(files[j]))
        try:
            d = float(kernel(current[1], other))
            if not math.isfinite(d):
                raise DegenerateInputError(f"kernel returned {d}")
        except Exception as e:
            logger.error(f"distance failed for {files[i].name} / {files[j].name}: {e}")
            raise PairComputationError(i + 1, j + 1, e)
        triples.append((i + 1, j + 1, d))
    logger.info(f"part {part_index}/{total_parts}: {len(triples)} pairs from {directory}")
    return DistancePart(part_index=part_index, total_parts=total_parts, triples=triples)


def file_labels(directory) -> List[str]:
    return [p.stem for p in list_series_files(directory)]


# ---- part files ----

def write_part(part: DistancePart, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / PART_NAME.format(index=part.part_index, total=part.total_parts)
    frame = pd.DataFrame(part.triples, columns=PART_COLUMNS)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"wrote {len(part.triples)} pairs to {path}")
    return path


def read_part(path) -> DistancePart:
    path = Path(path)
    match = PART_PATTERN.match(path.name)
    if not match:
        raise DataError(f"part file names must look like {PART_NAME}", str(path))
    try:
        frame = read_frame(path)
    except FileNotFoundError:
        raise DataError("file not found", str(path))
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, OSError) as e:
        raise DataError(f"cannot read part file ({e})", str(path))
    if list(frame.columns) != PART_COLUMNS:
        raise DataError(f"expected header {','.join(PART_COLUMNS)}", str(path))
    if frame.isna().any().any():
        raise DataError("missing cells", str(path))
    try:
        triples = [(int(i), int(j), float(d)) for i, j, d in frame.itertuples(index=False)]
        return DistancePart(part_index=int(match.group(1)), total_parts=int(match.group(2)), triples=triples)
    except ValueError as e:
        raise DataError(f"malformed part ({e})", str(path))


def write_labels(labels: Sequence[str], directory) -> Path:
    path = Path(directory) / LABELS_FILE
    path.write_text("".join(f"{label}\n" for label in labels), encoding="utf-8")
    return path


def read_labels(directory) -> Optional[List[str]]:
    path = Path(directory) / LABELS_FILE
    if not path.is_file():
        return None
    return path.read_text(encoding="utf-8-sig").splitlines()


# ---- merging ----

def _gap_ranges(filled: np.ndarray, n: int) -> List[Tuple[Pair, Pair]]:
    gaps = []
    run_start = previous = None
    for i, j in combinations(range(n), 2):
        if not filled[i, j]:
            if run_start is None:
                run_start = (i + 1, j + 1)
            previous = (i + 1, j + 1)
        elif run_start is not None:
            gaps.append((run_start, previous))
            run_start = None
    if run_start is not None:
        gaps.append((run_start, previous))
    return gaps


def dist_parts_merge(parts: Sequence[DistancePart], n: int,
                     labels: Optional[Sequence[str]] = None) -> DistanceMatrix:
    if n < 2:
        raise InvalidArgumentError(f"n must be >= 2, got {n}")
    if labels is not None and len(labels) != n:
        raise InvalidArgumentError(f"{len(labels)} labels given for n={n}")
    values = np.zeros((n, n))
    filled = np.zeros((n, n), dtype=bool)
    for part in parts:
        for i, j, d in part.triples:
            if j > n:
                raise InvalidArgumentError(f"part {part.part_index} holds pair ({i}, {j}) beyond n={n}")
            if filled[i - 1, j - 1]:
                if values[i - 1, j - 1] != d:
                    raise MergeConflictError(
                        f"pair ({i}, {j}) has conflicting distances {values[i - 1, j - 1]!r} and {d!r}"
                    )
                continue
            values[i - 1, j - 1] = values[j - 1, i - 1] = d
            filled[i - 1, j - 1] = True

    gaps = _gap_ranges(filled, n)
    if gaps:
        raise IncompleteMergeError(gaps)
    labels = list(labels) if labels is not None else [str(k) for k in range(1, n + 1)]
    return DistanceMatrix(labels=labels, values=values)


def dist_parts_merge_files(directory, n: Optional[int] = None,
                           labels: Optional[Sequence[str]] = None) -> DistanceMatrix:
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidArgumentError(f"{directory} is not a directory")
    paths = sorted(p for p in directory.iterdir() if PART_PATTERN.match(p.name))
    if labels is None:
        labels = read_labels(directory)
    if n is None:
        if labels is None:
            raise InvalidArgumentError(f"no {LABELS_FILE} in {directory}; pass the series count explicitly")
        n = len(labels)
    elif labels is not None and len(labels) != n:
        raise InvalidArgumentError(f"{LABELS_FILE} lists {len(labels)} series but n={n}")
    logger.info(f"merging {len(paths)} part file(s) from {directory}")
    return dist_parts_merge([read_part(p) for p in paths], n, labels)


# ---- normalization and thresholds ----

def dist_matrix_normalize(D: DistanceMatrix) -> DistanceMatrix:
    if D.n < 2:
        raise InvalidArgumentError("normalization needs at least 2 series")
    off = D.upper()
    low, high = float(off.min()), float(off.max())
    if high == low:
        logger.warning(f"all off-diagonal distances equal {low}; normalized matrix is all zeros")
        return DistanceMatrix(labels=D.labels, values=np.zeros((D.n, D.n)))
    values = (D.values - low) / (high - low)
    np.fill_diagonal(values, 0.0)
    return DistanceMatrix(labels=D.labels, values=values)


def is_normalized(D: DistanceMatrix) -> bool:
    return bool(np.all(D.values <= 1.0))


def dist_percentile(D: DistanceMatrix, p: float) -> float:
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"p must lie in (0, 1), got {p}")
    if D.n < 2:
        raise InvalidArgumentError("a percentile needs at least 2 series")
    return float(np.quantile(D.upper(), p))


# ---- matrix files ----

def write_matrix_csv(D: DistanceMatrix, path) -> None:
    frame = pd.DataFrame(D.values, index=D.labels, columns=D.labels)
    frame.to_csv(path, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_matrix_csv(path) -> DistanceMatrix:
    path = Path(path)
    try:
        frame = read_frame(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise DataError("file not found", str(path))
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError, OSError) as e:
        raise DataError(f"cannot parse matrix CSV ({e})", str(path))
    if frame.shape[1] < 2:
        raise DataError("a matrix file needs a label column and at least one series", str(path))
    labels = [str(c) for c in frame.columns[1:]]
    row_labels = list(frame.iloc[:, 0])
    if row_labels != labels:
        raise DataError("row labels do not match the header", str(path))
    try:
        # float() on the text keeps 17-digit values exact
        values = frame.iloc[:, 1:].to_numpy(dtype=str).astype(float)
        return DistanceMatrix(labels=labels, values=values)
    except (ValueError, TypeError) as e:
        raise DataError(f"not a valid distance matrix ({e})", str(path))


# ---- significance ----

def significance_matrix(items: Sequence, test: Callable[[object, object], bool], workers: int = 1) -> np.ndarray:
    """Binary matrix s_ij = test(items[i], items[j]) over all pairs; zero diagonal."""
    n = len(items)
    if n < 2:
        raise InvalidArgumentError(f"need at least 2 series, got {n}")
    flags = compute_pairs(items, lambda x, y: 1.0 if test(x, y) else 0.0, canonical_pairs(n), workers)
    out = np.zeros((n, n), dtype=int)
    rows, cols = np.triu_indices(n, 1)
    out[rows, cols] = flags.astype(int)
    out[cols, rows] = flags.astype(int)
    return out
