import json

import pytest

from udcantor.cli import run


def load(path):
    return json.loads(path.read_text())


def test_invariants_epsilon(tmp_path):
    out = tmp_path / "r.json"
    code, _ = run(["invariants", "--system", "epsilon:0.125", "--depth", "6", "--out", str(out)])
    assert code == 0 and load(out)["result"]["ud"] >= 3.5


def test_julia_backward_csv(tmp_path):
    out = tmp_path / "j.csv"
    code, _ = run(["julia", "--n", "2", "--depth", "12", "--method", "backward", "--out", str(out)])
    assert code == 0 and len(out.read_text().splitlines()) == 4097


def test_oracle_check():
    code, report = run(["oracle-check", "--max-points", "12", "--trials", "50", "--seed", "7"])
    assert code == 0 and report["result"]["mismatches"] == []


def test_config_errors_write_nothing(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"depth": "3", "bogus": 1}))
    out = tmp_path / "o.json"
    assert run(["invariants", "--config", str(cfg), "--out", str(out)])[0] == 2
    assert run(["julia", "--b", "0.06", "--out", str(out)])[0] == 2
    assert run(["invariants", "--system", "nonsense", "--out", str(out)])[0] == 2
    assert run(["frobnicate"])[0] == 2
    assert run(["plot", "--artifact", str(tmp_path / "missing.csv"), "--out", str(out)])[0] == 2
    assert not out.exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "invariants", "system": "middle_third", "depth": "4"}))
    _, report = run(["invariants", "--config", str(cfg), "--depth", "5"])
    assert report["config"]["depth"] == "5" and report["result"]["ud"] == pytest.approx(3.0)
    cfg.write_text(json.dumps({"command": "julia"}))
    assert run(["invariants", "--config", str(cfg)])[0] == 2


def test_deterministic_payloads(tmp_path):
    payloads = []
    out = tmp_path / "e.json"
    for _ in range(2):
        assert run(["conjugate", "--n", "2", "--scale", "2", "--shift", "1,0", "--out", str(out)])[0] == 0
        data = load(out)
        data.pop("wall_time")
        payloads.append(json.dumps(data, sort_keys=True))
    assert payloads[0] == payloads[1]


def test_necklace_exit_codes(tmp_path):
    out = tmp_path / "n8.json"
    assert run(["necklace", "--links", "8", "--out", str(out)])[0] == 1
    assert not load(out)["result"]["valid"]


def test_necklace_and_link_matrix_plot(tmp_path):
    out = tmp_path / "n.json"
    code, _ = run(["necklace", "--links", "20", "--out", str(out), "--ply", str(tmp_path / "t.ply")])
    assert code == 0
    svg = tmp_path / "m.svg"
    assert run(["plot", "--artifact", str(out), "--kind", "link-matrix", "--out", str(svg)])[0] == 0
    assert svg.read_text().count("<rect") == 1 + 400


def test_plots(tmp_path):
    csv2 = tmp_path / "j.csv"
    run(["julia", "--depth", "6", "--out", str(csv2), "--report", str(tmp_path / "j.json")])
    svg = tmp_path / "j.svg"
    assert run(["plot", "--artifact", str(csv2), "--kind", "scatter2d", "--out", str(svg)])[0] == 0
    text = svg.read_text()
    assert text.startswith("<svg") and text.count('stroke="#555"') == 6
    csv3 = tmp_path / "j3.csv"
    run(["julia", "--n", "3", "--depth", "6", "--out", str(csv3)])
    assert run(["plot", "--artifact", str(csv3), "--kind", "scatter3d-projection",
                "--out", str(tmp_path / "j3.svg")])[0] == 0
    inv = tmp_path / "m.json"
    run(["invariants", "--system", "middle_third", "--depth", "3,4,5,6", "--out", str(inv)])
    assert run(["plot", "--artifact", str(inv), "--kind", "constants-vs-depth",
                "--out", str(tmp_path / "c.svg")])[0] == 0
    assert run(["plot", "--artifact", str(inv), "--kind", "pie", "--out", str(tmp_path / "p.svg")])[0] == 2


def test_expansion_command(tmp_path):
    out = tmp_path / "x.json"
    code, report = run(["expansion", "--samples", "20", "--depth", "10", "--out", str(out)])
    assert code == 0 and all(report["checks"].values())
