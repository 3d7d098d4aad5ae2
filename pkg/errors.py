from typing import List, Optional, Tuple

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_KERNEL = 4
EXIT_MERGE_INCOMPLETE = 5


class SeriesNetError(Exception):
    exit_code = EXIT_DATA


class InvalidArgumentError(SeriesNetError, ValueError):
    exit_code = EXIT_USAGE


class EmptyWindowSetError(InvalidArgumentError):
    pass


class DegenerateInputError(SeriesNetError, ValueError):
    exit_code = EXIT_DATA


class DataError(SeriesNetError):
    """Unreadable or malformed input file."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


class PairComputationError(SeriesNetError):
    exit_code = EXIT_KERNEL

    def __init__(self, i: int, j: int, cause: Exception):
        super().__init__(f"distance failed for pair ({i}, {j}): {cause}")
        self.i = i
        self.j = j
        self.cause = cause


class LayerComputationError(SeriesNetError):
    exit_code = EXIT_KERNEL

    def __init__(self, layer: int, cause: Exception):
        super().__init__(f"layer {layer} failed: {cause}")
        self.layer = layer
        self.cause = cause
        if isinstance(cause, SeriesNetError):
            self.exit_code = cause.exit_code


class IncompleteMergeError(SeriesNetError):
    exit_code = EXIT_MERGE_INCOMPLETE

    def __init__(self, gaps: List[Tuple[Tuple[int, int], Tuple[int, int]]]):
        ranges = ", ".join(
            f"{first}" if first == last else f"{first}..{last}" for first, last in gaps
        )
        super().__init__(f"merge is missing pairs: {ranges}")
        self.gaps = gaps


class MergeConflictError(SeriesNetError):
    exit_code = EXIT_DATA


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, SeriesNetError):
        return exc.exit_code
    if isinstance(exc, ValueError):
        return EXIT_USAGE
    if isinstance(exc, OSError):
        return EXIT_DATA
    return 1
