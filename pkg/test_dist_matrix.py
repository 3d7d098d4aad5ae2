import numpy as np
import pandas as pd
import pytest

from dist_matrix import (
    DistanceMatrix,
    DistancePart,
    dist_matrix_normalize,
    dist_parts_merge,
    dist_parts_merge_files,
    dist_percentile,
    part_bounds,
    read_matrix_csv,
    read_part,
    significance_matrix,
    ts_dist,
    ts_dist_part,
    ts_dist_part_file,
    write_labels,
    write_matrix_csv,
    write_part,
)
from distances import EsParams, dist_cor, fisher_significant, make_kernel
from errors import (
    DataError,
    IncompleteMergeError,
    InvalidArgumentError,
    MergeConflictError,
    PairComputationError,
)
from series_core import TimeSeries


def random_series(n, length=40, seed=0):
    rng = np.random.default_rng(seed)
    return [TimeSeries(id=f"s{k + 1}", values=rng.normal(size=length)) for k in range(n)]


def matrix(values, labels=None):
    values = np.asarray(values, dtype=float)
    labels = labels or [str(k) for k in range(1, values.shape[0] + 1)]
    return DistanceMatrix(labels=labels, values=values)


def from_upper(upper, n):
    values = np.zeros((n, n))
    rows, cols = np.triu_indices(n, 1)
    values[rows, cols] = upper
    values[cols, rows] = upper
    return matrix(values)


def test_matrix_invariants():
    with pytest.raises(ValueError):
        matrix([[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        matrix([[1, 1], [1, 0]])
    with pytest.raises(ValueError):
        matrix([[0, -1], [-1, 0]])


def test_identical_series_give_zero_matrix():
    s = TimeSeries(id="a", values=[1, 3, 2, 5])
    copies = [s, TimeSeries(id="b", values=s.values), TimeSeries(id="c", values=s.values)]
    D = ts_dist(copies, make_kernel("cor"))
    assert D.labels == ["a", "b", "c"]
    assert np.allclose(D.values, 0.0, atol=1e-12)


def test_noisy_sine_is_closer_than_cosine():
    t = np.linspace(0, 2 * np.pi, 100)
    rng = np.random.default_rng(2)
    series = [
        TimeSeries(id="sin", values=np.sin(t)),
        TimeSeries(id="cos", values=np.cos(t)),
        TimeSeries(id="noisy", values=np.sin(t) + rng.normal(0, 0.1, t.size)),
    ]
    D = ts_dist(series, dist_cor)
    assert D.values[0, 2] < D.values[0, 1]


@pytest.mark.parametrize("metric", ["cor", "dtw", "nmi"])
def test_worker_count_does_not_change_result(metric):
    series = random_series(30, length=200, seed=4)
    kernel = make_kernel(metric)
    reference = ts_dist(series, kernel, workers=1)
    for workers in (2, 8):
        assert ts_dist(series, kernel, workers=workers) == reference


def test_mixed_lengths_with_dtw():
    series = [TimeSeries(id="a", values=[0, 1, 2]), TimeSeries(id="b", values=[0, 1, 1, 2, 2])]
    assert ts_dist(series, make_kernel("dtw")).values[0, 1] == 0.0


def test_custom_callable_kernel():
    series = random_series(4)
    D = ts_dist(series, lambda x, y: abs(x.values.mean() - y.values.mean()))
    assert D.values[0, 1] == pytest.approx(abs(series[0].values.mean() - series[1].values.mean()))


def test_failing_pair_is_reported():
    series = random_series(5)
    series[3] = TimeSeries(id="flat", values=np.ones(40))
    for workers in (1, 4):
        with pytest.raises(PairComputationError) as info:
            ts_dist(series, make_kernel("cor"), workers=workers)
        assert (info.value.i, info.value.j) == (1, 4)


def test_asymmetric_kernel_rejected():
    with pytest.raises(InvalidArgumentError):
        ts_dist(random_series(3), make_kernel("es", event_percentile=0.2, params=EsParams(mode="asymmetric")))


def test_needs_two_series():
    with pytest.raises(InvalidArgumentError):
        ts_dist(random_series(1), dist_cor)


def test_part_bounds():
    sizes = [part_bounds(6, k, 4)[1] - part_bounds(6, k, 4)[0] for k in range(1, 5)]
    assert sizes == [2, 2, 1, 1]
    assert part_bounds(6, 1, 1) == (0, 6)
    assert part_bounds(3, 5, 5) == (3, 3)


def test_parts_tile_the_pairs():
    series = random_series(4)
    part = ts_dist_part(series, dist_cor, 1, 1)
    assert [(i, j) for i, j, _ in part.triples] == [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]
    parts = [ts_dist_part(series, dist_cor, k, 4) for k in range(1, 5)]
    assert [len(p.triples) for p in parts] == [2, 2, 1, 1]
    with pytest.raises(InvalidArgumentError):
        ts_dist_part(series, dist_cor, 5, 4)


@pytest.mark.parametrize("total", [1, 3, 7, 66])
def test_merge_equals_single_shot(total):
    series = random_series(12, seed=8)
    kernel = make_kernel("cor")
    parts = [ts_dist_part(series, kernel, k, total) for k in range(1, total + 1)]
    merged = dist_parts_merge(parts, 12, labels=[s.id for s in series])
    assert merged == ts_dist(series, kernel)


def test_merge_reports_gaps():
    series = random_series(5)
    parts = [ts_dist_part(series, dist_cor, k, 4) for k in range(1, 5)]
    del parts[1]
    with pytest.raises(IncompleteMergeError) as info:
        dist_parts_merge(parts, 5)
    assert info.value.gaps == [((1, 5), (2, 4))]
    assert "(1, 5)..(2, 4)" in str(info.value)


def test_merge_duplicates():
    series = random_series(4)
    part = ts_dist_part(series, dist_cor, 1, 1)
    assert dist_parts_merge([part, part], 4) == dist_parts_merge([part], 4)
    i, j, d = part.triples[0]
    clash = DistancePart(part_index=1, total_parts=1, triples=[(i, j, d + 0.5)])
    with pytest.raises(MergeConflictError):
        dist_parts_merge([part, clash], 4)


def test_part_files_round_trip(tmp_path):
    series = random_series(6)
    for k in range(1, 4):
        write_part(ts_dist_part(series, dist_cor, k, 3), tmp_path)
    write_labels([s.id for s in series], tmp_path)
    assert (tmp_path / "part_2_of_3.csv").read_text().splitlines()[0] == "i,j,dist"
    assert read_part(tmp_path / "part_1_of_3.csv") == ts_dist_part(series, dist_cor, 1, 3)
    assert dist_parts_merge_files(tmp_path) == ts_dist(series, dist_cor)


def test_empty_part_file(tmp_path):
    path = write_part(DistancePart(part_index=3, total_parts=3), tmp_path)
    assert path.read_text() == "i,j,dist\n"
    assert read_part(path).triples == []


def test_bad_part_file_name(tmp_path):
    path = tmp_path / "chunk1.csv"
    path.write_text("i,j,dist\n1,2,0.5\n")
    with pytest.raises(DataError):
        read_part(path)


def test_part_from_directory_matches_memory(tmp_path):
    series = random_series(5)
    for s in reversed(series):
        pd.DataFrame({"v": s.values}).to_csv(tmp_path / f"{s.id}.csv", index=False, float_format="%.17g")
    for k in range(1, 4):
        assert ts_dist_part_file(tmp_path, dist_cor, k, 3) == ts_dist_part(series, dist_cor, k, 3)


def test_part_from_empty_directory(tmp_path):
    with pytest.raises(InvalidArgumentError):
        ts_dist_part_file(tmp_path, dist_cor, 1, 1)


def test_normalize():
    D = from_upper([2, 4, 6], 3)
    assert dist_matrix_normalize(D).upper().tolist() == [0.0, 0.5, 1.0]
    once = dist_matrix_normalize(from_upper([0.3, 1.7, 0.9, 2.2, 5.0, 0.1], 4))
    assert dist_matrix_normalize(once) == once
    unit = from_upper([0.0, 0.25, 1.0], 3)
    assert dist_matrix_normalize(unit) == unit


def test_normalize_constant_matrix_warns(caplog):
    D = from_upper([3, 3, 3], 3)
    assert np.all(dist_matrix_normalize(D).values == 0)
    assert "all off-diagonal distances equal" in caplog.text


def test_percentile():
    D = from_upper([1, 2, 3, 4, 5, 5], 4)
    assert dist_percentile(D, 0.5) == pytest.approx(3.5)
    five = from_upper([3, 1, 2, 5, 4, 3, 3, 3, 3, 3], 5)
    assert dist_percentile(five, 0.5) == 3.0
    assert dist_percentile(from_upper([7, 7, 7], 3), 0.9) == 7.0
    with pytest.raises(InvalidArgumentError):
        dist_percentile(D, 1.0)


def test_matrix_csv_round_trip(tmp_path):
    D = ts_dist(random_series(4), dist_cor)
    path = tmp_path / "D.csv"
    write_matrix_csv(D, path)
    assert path.read_text().splitlines()[0] == ",s1,s2,s3,s4"
    assert read_matrix_csv(path) == D


def test_matrix_csv_rejects_mismatched_labels(tmp_path):
    path = tmp_path / "D.csv"
    path.write_text(",a,b\nb,0,1\na,1,0\n")
    with pytest.raises(DataError):
        read_matrix_csv(path)


def test_significance_matrix():
    t = np.linspace(0, 10, 100)
    rng = np.random.default_rng(0)
    items = [np.sin(t), np.sin(t) + rng.normal(0, 0.2, 100), rng.normal(size=100)]
    S = significance_matrix(items, lambda x, y: fisher_significant(x, y, 0.05), workers=2)
    assert S[0, 1] == 1
    assert S.diagonal().tolist() == [0, 0, 0]
    assert np.array_equal(S, S.T)
