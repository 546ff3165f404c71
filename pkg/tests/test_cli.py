import csv
import io
import json
import math
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from coalsim.cli import main


def _run(*args):
    return subprocess.run([sys.executable, "-m", "coalsim", *args], capture_output=True, text=True)


def test_erdos_taylor_row_count():
    r = _run("erdos-taylor", "--t", "100", "--alpha", "0.5", "--beta", "1", "--replicates", "20", "--seed", "3")
    assert r.returncode == 0, r.stderr
    rows = r.stdout.strip().splitlines()
    assert len(rows) == 21
    assert rows[0].startswith("scenario,t,alpha")


def test_invalid_config_exits_2_with_one_line():
    r = _run("theorem1", "--alpha", "0.5", "--beta", "0.4,0.8", "--rho", "1")
    assert r.returncode == 2
    lines = r.stderr.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("config-error:") and "beta_grid" in lines[0]


def test_validate_subcommand(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"scenario": "theorem5", "alpha": 0.3, "rho": 1.0, "u_vector": [0.5, 0.8]}))
    assert main(["validate", "--config", str(good)]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "theorem5", "alpha": 0.3, "rho": 1.0, "u_vector": [0.2, 0.8]}))
    assert main(["validate", "--config", str(bad)]) == 2


def test_unknown_flag_is_rejected():
    r = _run("erdos-taylor", "--colour", "red")
    assert r.returncode == 2


def test_output_file_is_deterministic(tmp_path):
    args = ["erdos-taylor", "--t", "50", "--alpha", "0.5", "--beta", "1", "--replicates", "10", "--seed", "11"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert not list(tmp_path.glob(".coalsim-*"))


def test_json_summary(capsys):
    assert main(["sparse-recursion", "--n", "3", "--alpha", "0.2", "--beta", "0.4", "--format", "json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["_meta"]["max_abs_difference"] < 1e-12
    assert "recursion_p[beta=0.4,k=1]" in out


def test_goldens_match_checked_in_tables():
    r = _run("goldens")
    assert r.returncode == 0, r.stdout
    assert r.stdout.count("match") == 2


def _golden(name):
    text = (resources.files("coalsim") / "goldens" / name).read_text()
    return list(csv.DictReader(io.StringIO(text)))


def test_tiny_torus_goldens_by_eigendecomposition():
    # the together/apart block has eigenvalues -(2 + g -+ sqrt(4 + g^2)) / 2
    for row in _golden("tiny_torus.csv"):
        g, t = float(row["gamma"]), float(row["time"])
        q = np.array([[-(1 + g), 1.0], [1.0, -1.0]])
        lam, vec = np.linalg.eigh(q)
        surv = vec @ np.diag(np.exp(lam * t)) @ vec.T
        start = 0 if row["together"] == "1" else 1
        assert float(row["p_merged"]) == pytest.approx(1 - surv[start].sum(), abs=1e-12)


def test_kingman_goldens_by_closed_form():
    for row in _golden("kingman_marginals.csv"):
        n0, s, k, p = int(row["n0"]), float(row["s"]), int(row["k"]), float(row["probability"])
        if n0 == 2:
            expect = math.exp(-s) if k == 2 else 1 - math.exp(-s)
        elif n0 == 3:
            # rates 3 then 1
            e3, e1 = math.exp(-3 * s), math.exp(-s)
            p2 = 1.5 * (e1 - e3)
            expect = {3: e3, 2: p2, 1: 1 - e3 - p2}[k]
        else:
            continue
        assert p == pytest.approx(expect, abs=1e-12)
