import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cohesive_pf.cli import main
from cohesive_pf.surface import SurfaceDensityCurve


def _out(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_law_eval(capsys):
    assert main(["law", "eval", "--psi", "euclidean_squared", "--ell", "1", "--xi", "0.3"]) == 0
    d = _out(capsys)
    assert d["psi"] == pytest.approx(0.09) and d["h"] == pytest.approx(0.09)
    assert main(["law", "eval", "--psi", "dist_sq_SOn", "--m", "2", "--n", "2", "--xi", "1,0,0,1"]) == 0
    assert _out(capsys)["psi"] == pytest.approx(0.0, abs=1e-14)


def test_law_eval_bad_size():
    with pytest.raises(SystemExit):
        main(["law", "eval", "--m", "2", "--n", "2", "--xi", "1,2,3"])


def test_envelope_build_and_query(tmp_path, capsys):
    out = str(tmp_path / "conv.json")
    assert main(["envelope", "build", "--law", "euclidean_squared", "--ell", "1", "--kind", "convex",
                 "--grid=-3,3,601", "--out", out]) == 0
    capsys.readouterr()
    assert main(["envelope", "query", out, "--at", "0.75"]) == 0
    assert _out(capsys)["value"] == pytest.approx(0.5, abs=1e-4)


def test_envelope_build_lamination(tmp_path, capsys):
    out = str(tmp_path / "lam.npz")
    assert main(["envelope", "build", "--law", "euclidean_squared", "--m", "2", "--n", "2", "--kind",
                 "lamination", "--depth", "1", "--split-budget", "64", "--count", "21", "--out", out]) == 0
    assert _out(capsys)["kind"] == "lamination"
    assert os.path.exists(out)


def test_gscal(tmp_path, capsys):
    out = str(tmp_path / "curve.json")
    assert main(["gscal", "--amplitudes", "0.5,1.0", "--T", "4,8", "--nodes-per-unit", "32", "--out", out]) == 0
    c = SurfaceDensityCurve.load(out)
    assert np.all(c.g_values > 0) and np.all(c.g_values <= 1.02)


def _run_cfg(tmp_path, t):
    cfg = {"grid": {"dim": 1, "extent": 1.0, "nodes": 101}, "law": {"psi": "euclidean_squared", "ell": 1.0},
           "eps": 0.05, "eta_rule": "eps^1.5",
           "bc": {"left": {"u": 0.0}, "right": {"u": t}}, "tolerances": {"max_rounds": 200}}
    p = tmp_path / "run.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def test_simulate(tmp_path, capsys):
    out = str(tmp_path / "state.csv")
    assert main(["simulate", "--config", _run_cfg(tmp_path, 0.3), "--out", out]) == 0
    data = np.genfromtxt(out, delimiter=",", names=True)
    assert data.dtype.names == ("x", "u0", "v")
    np.testing.assert_allclose(data["u0"], 0.3 * data["x"], atol=1e-12)
    with open(str(tmp_path / "state.json")) as fh:
        side = json.load(fh)
    assert side["energy_parts"]["total"] == pytest.approx(_out(capsys)["energy"])
    assert len(side["trace"]) >= 1


def test_gamma_sweep_exit_codes(tmp_path, curve, capsys):
    cpath = str(tmp_path / "curve.json")
    curve.save(cpath)
    ok = {"L": 1.0, "t_load": 0.3, "ell": 1.0, "psi": "euclidean_squared", "eps": [0.1, 0.05],
          "gates": {"final_rel_error_max": 0.05}}
    bad = dict(ok, gates={"final_rel_error_max": 1e-12})
    for cfg, code in ((ok, 0), (bad, 1)):
        p = tmp_path / "sweep.json"
        p.write_text(json.dumps(cfg))
        out = str(tmp_path / f"res{code}")
        assert main(["gamma-sweep", "--config", str(p), "--curve", cpath, "--out", out]) == code
        assert os.path.exists(os.path.join(out, "manifest.json"))
    text = capsys.readouterr().out
    assert "gate final_rel_error: PASS" in text and "gate final_rel_error: FAIL" in text


def test_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "cohesive_pf.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("law", "envelope", "gscal", "simulate", "gamma-sweep"):
        assert cmd in r.stdout
