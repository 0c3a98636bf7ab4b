import json

import pytest

from bandedge.cli import main


def test_edges(tmp_path, capsys):
    assert main(["edges"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "E_b,edge_sign,x,x_sigma_m2,inward"
    assert len(lines) == 3


def test_edges_custom_model(tmp_path):
    doc = {"L": 2, "hop": [1.0, 0.5], "pot": [0.0, 0.0],
           "disorder": {"kind": "uniform", "pot_amp": [1.0, 1.0], "hop_amp": [0.0, 0.0]},
           "lambda": 0.0}
    model = tmp_path / "m.json"
    model.write_text(json.dumps(doc))
    out = tmp_path / "edges.csv"
    assert main(["edges", "--model", str(model), "--out", str(out)]) == 0
    assert len(out.read_text().strip().splitlines()) == 5


def test_classify(capsys):
    assert main(["classify", "--edge", "2", "--eps", "-1"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["type"] == "elliptic"
    assert main(["classify", "--edge", "2", "--eps", "0", "--eta", "4/3"]) == 0
    assert json.loads(capsys.readouterr().out)["order"] == "second"


def test_simulate_outputs_and_thread_determinism(tmp_path):
    outs = []
    for threads in (1, 3):
        out = tmp_path / f"t{threads}" / "stats.csv"
        argv = ["simulate", "--E", "1.0", "--lambda", "0.1", "--steps", "1e5",
                "--seed", "4", "--threads", str(threads), "--out", str(out)]
        assert main(argv) == 0
        outs.append((out.read_bytes(), out.with_name("hist.csv").read_bytes()))
    assert outs[0] == outs[1]
    stats = outs[0][0].decode().splitlines()
    assert stats[0] == "quantity,value,stderr"
    assert [s.split(",")[0] for s in stats[1:4]] == ["gamma", "R", "ids"]
    assert outs[0][1].decode().splitlines()[0] == "bin_lo,bin_hi,count"


def test_groundstate(tmp_path):
    out = tmp_path / "rho.csv"
    assert main(["groundstate", "--epsx", "0", "--m2", "0.3333333333333333",
                 "--grid", "1024", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "theta,rho" and len(lines) == 1025


def test_scaling_writes_report(tmp_path):
    out = tmp_path / "sweep"
    code = main(["scaling", "--edge", "2", "--regime", "elliptic", "--eps", "-1",
                 "--steps", "1e5", "--threads", "2", "--out", str(out)])
    assert code in (0, 2)
    rep = json.loads((out / "report.json").read_text())
    assert rep["regime"] == "elliptic" and len(rep["rows"]) == 4
    assert (out / "rows.csv").read_text().startswith("lambda,gamma,")
    assert code == (0 if rep["passed"] else 2)


def test_density_compare_fail_exit(capsys):
    # a tolerance of zero cannot be met
    code = main(["density-compare", "--edge", "2", "--lambda", "1e-2", "--steps", "1e5",
                 "--tol", "0"])
    assert code == 2
    assert json.loads(capsys.readouterr().out)["pass"] is False


@pytest.mark.parametrize("argv", [
    ["classify", "--edge", "1.0", "--eps", "1"],  # not a band edge
    ["scaling", "--edge", "2", "--regime", "hyperbolic", "--eps", "-1"],  # wrong side
    ["edges", "--model", "/nonexistent/model.json"],
])
def test_errors_exit_one(argv, capsys):
    assert main(argv) == 1
    assert "error:" in capsys.readouterr().err
