import csv
import json
import shutil

import pytest

from peco import fixture_path
from peco.cli import main

PROBLEM = {
    "n": 2, "u": 2, "objective": "x1 + x2",
    "constraints": ["xi1 - x1", "xi2 - x2"],
    "bounds": [[0, 10], [0, 10]], "start": [0, 0],
}


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "problem.json").write_text(json.dumps(PROBLEM))
    shutil.copy(fixture_path("fig2.csv"), "fig2.csv")
    shutil.copy(fixture_path("eq5_density.json"), "eq5.json")
    (tmp_path / "grid.json").write_text(json.dumps({"grid_n": 101}))
    return tmp_path


def test_dalpha(work):
    assert main(["dalpha", "--data", "fig2.csv", "--alpha", "0.1", "--eta", "0.5", "--out", "da.csv"]) == 0
    rows = list(csv.reader(open("da.csv")))
    assert rows[0] == ["xi1", "xi2"] and rows[1] == ["int", "int"]
    assert len(rows) == 2 + 85


def test_dalpha_needs_one_eta_source(work, capsys):
    with pytest.raises(SystemExit) as info:
        main(["dalpha", "--data", "fig2.csv", "--alpha", "0.1", "--eta", "0.5", "--eta-rule", "--out", "x"])
    assert info.value.code == 3
    assert main(["dalpha", "--data", "fig2.csv", "--alpha", "0.1", "--eta-rule", "--out", "x.csv"]) == 0


def test_sdds_samplesize_validate(work, capsys):
    main(["dalpha", "--data", "fig2.csv", "--alpha", "0.1", "--eta", "0.5", "--out", "da.csv"])
    assert main(["sdds", "--problem", "problem.json", "--scenarios", "da.csv", "--solver", "grid-oracle",
                 "--solver-config", "grid.json", "--out", "fam.json"]) == 0
    fam = json.load(open("fam.json"))
    assert fam["sets"] == [[2, 3]] and fam["r_bar"] == [[[1], 2]]

    assert main(["samplesize", "--family", "fam.json", "--dalpha-size", "4", "--target", "0.5",
                 "--out", "plan.json"]) == 0
    plan = json.load(open("plan.json"))
    assert plan["z_min"] == 3 and plan["rho_table"][3] == [3, 0.5]

    capsys.readouterr()
    assert main(["validate-rho", "--family", "fam.json", "--dalpha-size", "4", "--z", "3",
                 "--trials", "20000", "--seed", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rho"] == 0.5 and abs(out["monte_carlo"] - 0.5) < 0.02


def test_sdds_refuses_large(work):
    with open("many.csv", "w") as fh:
        fh.write("xi1,xi2\n" + "".join(f"{i},{i}\n" for i in range(16)))
    assert main(["sdds", "--problem", "problem.json", "--scenarios", "many.csv", "--out", "f.json"]) == 3


def test_solve(work):
    with open("emb.csv", "w") as fh:
        fh.write("xi1,xi2\n3,2\n2,3\n")
    assert main(["solve", "--problem", "problem.json", "--embed", "emb.csv", "--solver", "builtin-penalty",
                 "--out", "sol.json"]) == 0
    sol = json.load(open("sol.json"))
    assert sol["status"] == "optimal"
    assert sol["x_star"] == pytest.approx([3, 3], abs=1e-6)


def test_solve_unknown_solver(work):
    with pytest.raises(SystemExit) as info:
        main(["solve", "--problem", "problem.json", "--embed", "fig2.csv", "--solver", "cplex", "--out", "x"])
    assert info.value.code == 3


def test_solve_infeasible_exits_2(work):
    bad = dict(PROBLEM, constraints=["xi1 - x1", "x1 - xi1 + 1"])
    (work / "bad.json").write_text(json.dumps(bad))
    with open("emb.csv", "w") as fh:
        fh.write("xi1,xi2\n3,2\n")
    assert main(["solve", "--problem", "bad.json", "--embed", "emb.csv", "--solver", "grid-oracle",
                 "--out", "sol.json"]) == 2


def test_pipeline(work):
    cfg = {"problem": "problem.json", "data": "fig2.csv", "alpha": 0.1, "eta": 0.5, "target": 1.0,
           "seed": 3, "solver": {"solver_id": "grid-oracle", "grid_n": 101}}
    (work / "cfg.json").write_text(json.dumps(cfg))
    assert main(["pipeline", "--config", "cfg.json", "--store", "runs.jsonl", "--out", "a.json"]) == 0
    assert main(["pipeline", "--config", "cfg.json", "--store", "runs.jsonl", "--out", "b.json"]) == 0
    assert open("a.json").read() == open("b.json").read()
    assert json.load(open("a.json"))["solution"]["x_star"] == [3.0, 3.0]
    assert len(open("runs.jsonl").read().splitlines()) == 2


def test_pipeline_exit_codes(work):
    cfg = {"problem": "problem.json", "data": "fig2.csv", "alpha": 0.95, "eta": 0.5, "target": 1.0, "seed": 3}
    (work / "cfg.json").write_text(json.dumps(cfg))
    assert main(["pipeline", "--config", "cfg.json", "--store", "r.jsonl", "--out", "o.json"]) == 2
    (work / "cfg.json").write_text(json.dumps(dict(cfg, target=2.0)))
    assert main(["pipeline", "--config", "cfg.json", "--store", "r.jsonl", "--out", "o.json"]) == 3
    assert main(["pipeline", "--config", "missing.json", "--store", "r.jsonl", "--out", "o.json"]) == 3


def test_bad_problem_syntax(work):
    (work / "bad.json").write_text(json.dumps(dict(PROBLEM, objective="x1 +")))
    assert main(["solve", "--problem", "bad.json", "--embed", "fig2.csv", "--solver", "grid-oracle",
                 "--out", "x"]) == 3


def test_alpha_from_beta(work, capsys):
    assert main(["alpha-from-beta", "--density", "eq5.json", "--beta", "0.05"]) == 2
    capsys.readouterr()
    assert main(["alpha-from-beta", "--density", "eq5.json", "--beta", "0.05", "--normalize"]) == 0
    assert json.loads(capsys.readouterr().out)["alpha"] > 0


def test_contour(work):
    assert main(["contour", "--density", "eq5.json", "--alpha", "0.01", "--nodes", "7", "--out", "c.csv"]) == 0
    rows = list(csv.reader(open("c.csv")))
    assert rows[0] == ["xi1", "xi2", "density", "member"]
    assert len(rows) == 1 + 49
    assert {r[3] for r in rows[1:]} <= {"0", "1"}


def test_no_subcommand_is_config_error():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 3
