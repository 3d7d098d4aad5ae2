import json

import pytest

from cli import ENV_KEYS, PipelineConfig, main, resolve_settings
from errors import InvalidArgumentError


@pytest.fixture(autouse=True)
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for env in ENV_KEYS.values():
        monkeypatch.delenv(env, raising=False)
    return tmp_path


@pytest.fixture
def sincos(workspace):
    assert main(["generate", "sincos", "--each", "4", "--length", "60", "--noise", "0.1",
                 "--seed", "3", "--out", "data.csv"]) == 0
    return workspace / "data.csv"


def write_column(path, name, values):
    path.write_text(name + "\n" + "".join(f"{v}\n" for v in values))
    return path


def edge_rows(path):
    return path.read_text().splitlines()[1:]


# ---- distances ----

def test_dist_is_independent_of_workers(sincos, workspace):
    assert main(["dist", str(sincos), "--workers", "1", "--out", "one.csv"]) == 0
    assert main(["dist", str(sincos), "--workers", "8", "--out", "eight.csv"]) == 0
    assert (workspace / "one.csv").read_bytes() == (workspace / "eight.csv").read_bytes()
    assert (workspace / "one.csv").read_text().splitlines()[0].startswith(",sin_1,sin_2")


def test_parts_merge_to_the_full_matrix(sincos, workspace):
    assert main(["dist", str(sincos), "--metric", "dtw", "--out", "full.csv"]) == 0
    for k in range(1, 5):
        assert main(["dist-part", str(sincos), "--metric", "dtw", "--part", str(k), "--of", "4",
                     "--out", "parts"]) == 0
    assert sorted(p.name for p in (workspace / "parts").iterdir()) == [
        "labels.txt", "part_1_of_4.csv", "part_2_of_4.csv", "part_3_of_4.csv", "part_4_of_4.csv",
    ]
    assert main(["merge", "parts", "--out", "merged.csv"]) == 0
    assert (workspace / "merged.csv").read_bytes() == (workspace / "full.csv").read_bytes()

    (workspace / "parts" / "part_2_of_4.csv").unlink()
    assert main(["merge", "parts", "--out", "again.csv"]) == 5
    assert not (workspace / "again.csv").exists()


def test_surrogate_significance_needs_a_seed(sincos):
    assert main(["dist", str(sincos), "--metric", "es", "--event-percentile", "0.2",
                 "--sig", "surrogate", "--out", "D.csv"]) == 2
    assert main(["dist", str(sincos), "--metric", "es", "--out", "D.csv"]) == 2


def test_exit_codes_for_bad_input(workspace):
    bad = workspace / "bad.csv"
    bad.write_text("a,b\n1,x\n2,3\n3,4\n")
    assert main(["dist", str(bad), "--out", "D.csv"]) == 3
    flat = workspace / "flat.csv"
    flat.write_text("a,b,c\n1,5,2\n1,6,4\n1,7,3\n1,9,1\n")
    assert main(["dist", str(flat), "--out", "D.csv"]) == 4
    assert main(["dist", "missing.csv", "--out", "D.csv"]) == 3
    assert main(["dist", str(flat), "--metric", "euclid", "--out", "D.csv"]) == 2


# ---- networks ----

def test_net_from_matrix(sincos, workspace):
    assert main(["dist", str(sincos), "--out", "D.csv"]) == 0
    assert main(["net", "D.csv", "--eps-percentile", "0.3", "--out", "net.tsv"]) == 0
    assert (workspace / "net.tsv").read_text().startswith("source\ttarget\n")
    assert main(["net", "D.csv", "--out", "net.tsv"]) == 2
    assert main(["net", "D.csv", "--builder", "weighted", "--out", "w.graphml", "--format", "graphml"]) == 0
    assert "<graphml" in (workspace / "w.graphml").read_text()


def test_weighted_net_needs_normalized_distances(sincos, workspace):
    assert main(["dist", str(sincos), "--metric", "dtw", "--out", "D.csv"]) == 0
    assert main(["net", "D.csv", "--builder", "weighted", "--out", "w.tsv"]) == 2
    assert main(["net", "D.csv", "--builder", "weighted", "--normalize", "--out", "w.tsv"]) == 0
    assert (workspace / "w.tsv").read_text().startswith("source\ttarget\tweight\n")


def test_significant_builder_needs_a_significance_matrix(sincos, workspace):
    assert main(["dist", str(sincos), "--metric", "dtw", "--out", "D.csv"]) == 0
    assert main(["net", "D.csv", "--builder", "significant", "--out", "net.tsv"]) == 2
    assert not (workspace / "net.tsv").exists()


def test_knn_saturates_on_four_series(workspace):
    data = workspace / "four.csv"
    data.write_text("a,b,c,d\n1,2,9,4\n2,1,3,8\n3,5,1,2\n4,3,2,7\n")
    assert main(["dist", str(data), "--out", "D.csv"]) == 0
    assert main(["net", "D.csv", "--builder", "knn", "--k", "3", "--out", "knn.tsv"]) == 0
    assert edge_rows(workspace / "knn.tsv") == [
        "a\tb", "a\tc", "a\td", "b\tc", "b\td", "c\td",
    ]


# ---- single series ----

def test_single_visibility_and_transition(workspace):
    write_column(workspace / "hvg.csv", "x", [1, 3, 2, 4])
    assert main(["single", "vg", "hvg.csv", "--kind", "horizontal", "--out", "hvg.tsv"]) == 0
    assert edge_rows(workspace / "hvg.tsv") == ["1\t2", "2\t3", "2\t4", "3\t4"]

    write_column(workspace / "qn.csv", "x", [1, 2, 3, 1, 2, 3])
    assert main(["single", "qn", "qn.csv", "--breaks", "3", "--out", "qn.tsv"]) == 0
    assert edge_rows(workspace / "qn.tsv") == ["1\t2\t2.0", "2\t3\t2.0", "3\t1\t1.0"]


def test_single_recurrence(workspace):
    write_column(workspace / "rn.csv", "x", [0, 10, 0, 10])
    assert main(["single", "rn", "rn.csv", "--radius", "1", "--out", "rn.tsv"]) == 0
    assert edge_rows(workspace / "rn.tsv") == ["1\t3", "2\t4"]


def test_single_windows(workspace, capsys):
    write_column(workspace / "saw.csv", "saw", [t % 12 for t in range(120)])
    assert main(["single", "windows", "saw.csv", "--width", "12", "--by", "1", "--mode", "pos",
                 "--eps", "0.25", "--out", "win.tsv"]) == 0
    assert main(["stats", "win.tsv", "--json"]) == 0
    # stats only sees nodes that carry an edge; every window has a same-phase partner
    stats = json.loads(capsys.readouterr().out)
    assert stats["components"] == 12
    assert stats["n"] == 109


def test_single_needs_a_column_choice(workspace):
    (workspace / "two.csv").write_text("a,b\n1,2\n3,1\n2,5\n")
    assert main(["single", "vg", "two.csv", "--out", "vg.tsv"]) == 2
    assert main(["single", "vg", "two.csv", "--column", "b", "--out", "vg.tsv"]) == 0


# ---- analysis ----

@pytest.fixture
def bridged(workspace):
    path = workspace / "bridged.tsv"
    rows = ["a\tb", "a\tc", "b\tc", "c\td", "d\te", "d\tf", "e\tf"]
    path.write_text("source\ttarget\n" + "\n".join(rows) + "\n")
    return path


def test_stats_text(bridged, capsys):
    assert main(["stats", str(bridged)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[:2] == ["nodes: 6", "edges: 7"]
    assert out[3] == "components: 1 (sizes: 6)"
    assert out[4] == "degrees: 2 2 3 3 2 2"


def test_communities_text_and_json(bridged, workspace, capsys):
    assert main(["communities", str(bridged)]) == 0
    assert capsys.readouterr().out.splitlines() == [
        "clustering edge betweenness, groups: 2, mod: 0.36",
        "[1] a b c",
        "[2] d e f",
    ]
    assert main(["communities", str(bridged), "--json", "--out", "c.json"]) == 0
    report = json.loads((workspace / "c.json").read_text())
    assert report["groups"] == 2
    assert report["communities"] == [["a", "b", "c"], ["d", "e", "f"]]
    assert report["modularity"] == pytest.approx(5 / 14)


def test_node_labels_restore_isolated_nodes(workspace, capsys, caplog):
    (workspace / "pair.tsv").write_text("source\ttarget\na\tb\n")
    (workspace / "labels.txt").write_text("a\nb\nc\n")
    with caplog.at_level("WARNING"):
        assert main(["stats", "pair.tsv", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 2
    assert "isolated nodes" in caplog.text

    caplog.clear()
    assert main(["stats", "pair.tsv", "--nodes", "labels.txt", "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert (stats["n"], stats["components"]) == (3, 2)
    assert "isolated nodes" not in caplog.text
    assert main(["communities", "pair.tsv", "--nodes", "labels.txt", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["communities"][-1] == ["c"]
    assert main(["stats", "pair.tsv", "--nodes", "missing.txt"]) == 3


# ---- generators ----

def test_generators_are_reproducible(workspace):
    for name in ("a.csv", "b.csv"):
        assert main(["generate", "sincos", "--each", "2", "--length", "30", "--noise", "0.5",
                     "--seed", "11", "--out", name]) == 0
    assert (workspace / "a.csv").read_bytes() == (workspace / "b.csv").read_bytes()
    assert (workspace / "a.csv").read_text().splitlines()[0] == "t,sin_1,sin_2,cos_1,cos_2"

    for name in ("e1.csv", "e2.csv"):
        assert main(["generate", "events", "--horizon", "100", "--n", "7", "--seed", "2", "--out", name]) == 0
    assert (workspace / "e1.csv").read_bytes() == (workspace / "e2.csv").read_bytes()
    assert len((workspace / "e1.csv").read_text().splitlines()) == 8


def test_generate_requires_seed():
    assert main(["generate", "sincos", "--each", "2", "--length", "30", "--out", "x.csv"]) == 2
    assert main(["generate", "events", "--horizon", "10", "--n", "11", "--seed", "1", "--out", "x.csv"]) == 2


# ---- configuration ----

def test_settings_file_is_only_written_on_request(workspace):
    settings = resolve_settings()
    assert not (workspace / "settings.cfg").exists()
    assert main(["generate", "events", "--horizon", "10", "--n", "2", "--seed", "1", "--out", "e.csv"]) == 0
    assert not (workspace / "settings.cfg").exists()
    resolve_settings(create_missing=True)
    assert (workspace / "settings.cfg").exists()
    assert (settings.workers, settings.format, settings.alpha) == (1, "edgelist", 0.05)


def test_configuration_layers(workspace, monkeypatch):
    (workspace / "settings.cfg").write_text("[seriesnet]\nworkers = 3\nformat = edgelist\n")
    assert resolve_settings().workers == 3
    monkeypatch.setenv("SERIESNET_WORKERS", "5")
    monkeypatch.setenv("SERIESNET_FORMAT", "graphml")
    assert (resolve_settings().workers, resolve_settings().format) == (5, "graphml")
    override = workspace / "run.cfg"
    override.write_text("workers=2\nlog_level=debug\n")
    settings = resolve_settings(str(override))
    assert (settings.workers, settings.format, settings.log_level) == (2, "graphml", "DEBUG")
    override.write_text("threads=4\n")
    with pytest.raises(InvalidArgumentError):
        resolve_settings(str(override))


def test_environment_picks_output_format(sincos, workspace, monkeypatch):
    assert main(["dist", str(sincos), "--out", "D.csv"]) == 0
    monkeypatch.setenv("SERIESNET_FORMAT", "graphml")
    assert main(["net", "D.csv", "--eps", "0.5", "--out", "net.out"]) == 0
    assert "<graphml" in (workspace / "net.out").read_text()
    assert main(["net", "D.csv", "--eps", "0.5", "--out", "net.out", "--format", "edgelist"]) == 0
    assert (workspace / "net.out").read_text().startswith("source\ttarget")


def test_pipeline_config_describes_itself():
    config = PipelineConfig(command="net", builder="knn", builder_params={"k": 3})
    assert json.loads(config.describe())["builder_params"] == {"k": 3}
    with pytest.raises(ValueError):
        PipelineConfig(command="generate")
