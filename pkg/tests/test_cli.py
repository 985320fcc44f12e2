import json
import subprocess
import sys

import numpy as np
import pytest

from mcdirichlet import Lattice
from mcdirichlet.cli import main

SOLVE = """\
seed: 11
instance: harmonic-ball
probes: [[0.2, 0.0, 0.0], [0.0, 0.5, 0.0]]
sim: {h: 4.0e-3, N: 3000}
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_is_byte_identical_across_workers(tmp_path):
    cfg = write(tmp_path, SOLVE)
    outs = []
    for w in (1, 8):
        out = tmp_path / f"w{w}.json"
        assert main(["solve", "--config", cfg, "--workers", str(w), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    res = json.loads(outs[0])
    assert res["command"] == "solve"
    assert res["config"] == {"seed": 11, "instance": "harmonic-ball", "probes": [[0.2, 0.0, 0.0], [0.0, 0.5, 0.0]],
                             "sim": {"h": 4e-3, "N": 3000}}
    e = res["estimates"][0]
    assert abs(e["value"] - 0.2) <= 4 * e["stderr"]
    assert res["estimates"][1]["point"] == [0.0, 0.5, 0.0]
    assert res["exact"] == 0.2


def test_seed_override_is_echoed(tmp_path, capsys):
    cfg = write(tmp_path, SOLVE)
    code, out, _ = run(["solve", "--config", cfg, "--seed", "12"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["config"]["seed"] == 12 and res["estimates"][0]["seed"] == 12


def test_out_key_in_config(tmp_path):
    target = tmp_path / "from-config.json"
    cfg = write(tmp_path, SOLVE + f"out: {target}\n")
    assert main(["solve", "--config", cfg]) == 0
    assert json.loads(target.read_text())["command"] == "solve"


def test_config_errors_exit_2_with_line(tmp_path, capsys):
    cfg = write(tmp_path, SOLVE + "mystery: 1\n")
    code, out, err = run(["solve", "--config", cfg], capsys)
    assert code == 2 and out == ""
    assert err.startswith("config error: ") and "line 5" in err and "mystery" in err
    code, _, err = run(["solve", "--config", str(tmp_path / "nope.yaml")], capsys)
    assert code == 2
    code, _, _ = run(["solve", "--config", write(tmp_path, SOLVE, "b.yaml"), "--workers", "0"], capsys)
    assert code == 2
    code, _, _ = run(["solve", "--config", write(tmp_path, "seed: 1\n", "c.yaml")], capsys)
    assert code == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    text = "seed: 1\ndomain: {kind: ball, center: [0, 0, 0], radius: 1}\noracle: {kind: fd}\n"
    code, _, err = run(["oracle", "--config", write(tmp_path, text)], capsys)
    assert code == 1 and "UnsupportedKind" in err


def test_kato_on_hyperplane(tmp_path, capsys):
    text = """\
seed: 1
kato:
  alpha: 1.0
  measures:
    - label: plane
      measure: {kind: hyperplane, level: 0.0, lo: [-1, -1], hi: [1, 1]}
"""
    code, out, _ = run(["kato", "--config", write(tmp_path, text)], capsys)
    assert code == 0
    rep = json.loads(out)["reports"]["plane"]
    assert rep["verdict"] == "rejected"
    assert set(rep) == {"alpha", "radii", "norms", "trend", "verdict"}


def test_kato_on_instance_coefficients(tmp_path, capsys):
    text = "seed: 1\ninstance: poisson-ball\nkato: {alpha: 1.0, radii: [0.5, 0.25, 0.125, 0.0625]}\n"
    code, out, _ = run(["kato", "--config", write(tmp_path, text)], capsys)
    assert code == 0
    assert list(json.loads(out)["reports"]) == ["rho"]


def test_gauge_command(tmp_path, capsys):
    text = ("seed: 3\ninstance: killing-ball\nsim: {h: 4.0e-3}\n"
            "gauge: {N: 2000, probe_per_axis: 0, max_k: 3}\n")
    code, out, _ = run(["gauge", "--config", write(tmp_path, text)], capsys)
    assert code == 0
    res = json.loads(out)
    assert [m["k"] for m in res["moments"]] == [1, 2, 3]
    g = res["report"]["gauge"]
    assert g["value"] == pytest.approx(np.sqrt(2) / np.sinh(np.sqrt(2)), abs=4 * g["stderr"] + 5e-3)


def test_fd_oracle_command(tmp_path, capsys):
    text = "seed: 1\ninstance: smooth-box\noracle: {kind: fd, grid_n: [9, 17, 33]}\n"
    code, out, _ = run(["oracle", "--config", write(tmp_path, text)], capsys)
    assert code == 0
    res = json.loads(out)["result"]
    assert res["grids"] == [9, 17, 33]
    assert 3.5 <= res["values"][0]["ratios"][0] <= 4.5


def test_contraction_oracle_command(tmp_path, capsys):
    lat = tmp_path / "u.lat"
    text = f"""\
seed: 1
domain: {{kind: ball, center: [0, 0, 0], radius: 1}}
coefficients:
  mu:
    - {{kind: smooth, density: constant, params: {{value: 0.2}}, lo: [-2, -2, -2], hi: [2, 2, 2]}}
    - {{kind: zero}}
    - {{kind: zero}}
  rho: {{kind: smooth, density: constant, params: {{value: 1.0}}, lo: [-2, -2, -2], hi: [2, 2, 2]}}
probes: [[0.3, 0.0, 0.0]]
oracle: {{kind: contraction, radii: [1.0], pitch: 0.25, lattice_out: {lat}}}
"""
    code, out, _ = run(["oracle", "--config", write(tmp_path, text)], capsys)
    assert code == 0
    res = json.loads(out)["result"]
    assert res["values"][0]["value"] == pytest.approx(0.29540, abs=3e-4)
    assert res["contraction"]["kappa"][0] < 0.5
    assert Lattice.load(lat).shape == tuple(res["lattice"]["shape"])


def test_sweep_writes_csv_with_config_echo(tmp_path, capsys):
    csv_path = tmp_path / "sweep.csv"
    text = (f"seed: 4\ninstance: harmonic-ball\nsweep: {{levels: [[8.0e-3, auto, 300], [4.0e-3, auto, 300]], "
            f"csv: {csv_path}}}\n")
    assert main(["sweep", "--config", write(tmp_path, text)]) == 0
    lines = csv_path.read_text().splitlines()
    head = [ln[2:] for ln in lines if ln.startswith("# ")]
    assert json.loads("\n".join(head))["config"]["seed"] == 4
    body = [ln for ln in lines if not ln.startswith("#")]
    assert body[0] == "h,level,N,value,stderr,diff" and len(body) == 3
    bad = write(tmp_path, "seed: 4\ninstance: harmonic-ball\nsweep: {coupled: true}\n", "bad.yaml")
    code, _, _ = run(["sweep", "--config", bad], capsys)
    assert code == 2


def test_verify_quick_on_one_instance(tmp_path, capsys):
    text = "seed: 1\nverify: {instances: [drift-exp], quick: true}\n"
    code, out, err = run(["verify", "--config", write(tmp_path, text)], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["passed"] and [c["number"] for c in res["criteria"]] == [3]
    assert err.startswith("criterion  3 PASS")
    bad = write(tmp_path, "seed: 1\nverify: {instances: [nope]}\n", "bad.yaml")
    assert run(["verify", "--config", bad], capsys)[0] == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mcdirichlet", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "solve" in r.stdout
    r = subprocess.run([sys.executable, "-m", "mcdirichlet", "launch", "--config", "x"], capture_output=True)
    assert r.returncode == 2
    np.testing.assert_equal(r.stdout, b"")
