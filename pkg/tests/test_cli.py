import csv

import pytest

from mlpart.cli import CSV_HEADER, main
from mlpart.graph import edge_cut
from mlpart.io import read_graph, read_partition, write_metis_graph
from mlpart.testing import grid_graph


@pytest.fixture
def grid_file(tmp_path):
    path = tmp_path / "grid.metis"
    write_metis_graph(path, grid_graph(24, 24))
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_partition_writes_files(tmp_path, grid_file):
    out, rep = tmp_path / "part", tmp_path / "runs.csv"
    code = main(["partition", "--graph", str(grid_file), "--k", "8", "--epsilon", "0.03",
                 "--seed", "1", "--output", str(out), "--report", str(rep)])
    assert code == 0
    rows = read_csv(rep)
    assert list(rows[0]) == CSV_HEADER and len(rows) == 1
    a = read_partition(out)
    assert len(a) == 576 and set(a.tolist()) == set(range(8))
    assert edge_cut(read_graph(grid_file), a) == int(rows[0]["cut"])


def test_repetitions_and_mean(tmp_path, grid_file):
    rep = tmp_path / "runs.csv"
    assert main(["partition", "--graph", str(grid_file), "--k", "4", "--repetitions", "5",
                 "--report", str(rep), "--compress", "on", "--refiner", "lp+fm"]) == 0
    rows = read_csv(rep)
    assert [r["seed"] for r in rows] == ["0", "1", "2", "3", "4", "mean"]
    mean = sum(int(r["cut"]) for r in rows[:5]) / 5
    assert float(rows[-1]["cut"]) == pytest.approx(mean)
    assert float(rows[0]["compression_ratio"]) > 1


def test_k_zero_usage_error(grid_file):
    with pytest.raises(SystemExit) as err:
        main(["partition", "--graph", str(grid_file), "--k", "0"])
    assert err.value.code == 2


def test_bad_choice_usage_error(grid_file):
    with pytest.raises(SystemExit) as err:
        main(["partition", "--graph", str(grid_file), "--k", "2", "--gain-table", "full"])
    assert err.value.code == 2


def test_missing_file(tmp_path, capsys):
    assert main(["partition", "--graph", str(tmp_path / "nope"), "--k", "2"]) == 1
    assert "cannot load" in capsys.readouterr().err


def test_malformed_file(tmp_path):
    (tmp_path / "bad.metis").write_text("3 3\n2 x\n")
    assert main(["partition", "--graph", str(tmp_path / "bad.metis"), "--k", "2"]) == 1


def test_bench_and_profile(tmp_path, grid_file):
    runs, prof = tmp_path / "bench.csv", tmp_path / "prof.csv"
    assert main(["bench", "--graph", str(grid_file), "--k", "2", "--k", "4",
                 "--repetitions", "2", "--output", str(runs)]) == 0
    rows = read_csv(runs)
    assert {r["algorithm"] for r in rows} == {"lp", "lp+fm"} and len(rows) == 12
    assert main(["profile", "--run", str(runs), "--tau", "1", "--tau", "2",
                 "--output", str(prof)]) == 0
    lines = prof.read_text().splitlines()
    assert lines[0] == "tau,lp,lp+fm" and lines[-1].startswith("2.0,1.0")


def test_profile_missing_pairs(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("instance,k,seed,cut\nG,2,0,5\nH,2,0,3\n")
    (tmp_path / "b.csv").write_text("instance,k,seed,cut\nG,2,0,4\n")
    assert main(["profile", "--run", f"A={tmp_path / 'a.csv'}",
                 "--run", f"B={tmp_path / 'b.csv'}"]) == 1
    assert "H:k=2, B" in capsys.readouterr().err
