import csv
import json

import pytest

from etdopt.cli import main


@pytest.fixture
def files(tmp_path):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"objectives": [{"a": 1}, {"a": 2, "b": 1}, {"a": 1}],
                             "constraints": {"C": [[1, 1, 0], [0, 1, 1]], "d": [1, 2]}}))
    g = tmp_path / "g.txt"
    g.write_text("1 2\n2 3\n")
    return tmp_path, p, g


def test_oracle_prints_solution(files, capsys):
    _, p, _ = files
    assert main(["oracle", "--problem", str(p)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["y_star"] == pytest.approx([0.375, 0.625, 1.375])


def test_run_from_files_writes_outputs(files, capsys):
    tmp, p, g = files
    code = main(["run", "--problem", str(p), "--graph", str(g), "--t-final", "2",
                 "--plant", "uncertain", "--eps", "0.01", "--out", str(tmp / "r")])
    assert code == 0
    for name in ("states.csv", "events.csv", "metrics.csv", "manifest.json"):
        assert (tmp / "r" / name).exists()
    assert json.loads(capsys.readouterr().out)["ticks"] == 2000


def test_sweep_makes_one_directory_per_eps(tmp_path):
    assert main(["sweep", "--scenario", "case1", "--eps", "0.05,0.01", "--t-final", "1",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "eps_0.05" / "states.csv").exists()
    assert (tmp_path / "eps_0.01" / "manifest.json").exists()
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert [float(r["eps"]) for r in rows] == [0.05, 0.01]


def test_exit_codes(files, tmp_path):
    _, p, _ = files
    bad = tmp_path / "bad.txt"
    bad.write_text("1 3\n")
    assert main(["run", "--problem", str(p), "--graph", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["run", "--scenario", "case1", "--dt", "-1", "--out", str(tmp_path / "y")]) == 2
    assert main(["run", "--scenario", "case1", "--raw-objective", "--t-final", "20",
                 "--out", str(tmp_path / "z")]) == 3
    inf = tmp_path / "inf.json"
    inf.write_text(json.dumps({"objectives": [{"a": 1}, {"a": 1}],
                               "constraints": {"C": [[1, 1], [2, 2]], "d": [1, 3]}}))
    assert main(["oracle", "--problem", str(inf)]) == 4


def test_problem_requires_graph(files, tmp_path):
    _, p, _ = files
    assert main(["run", "--problem", str(p), "--out", str(tmp_path / "q")]) == 2
