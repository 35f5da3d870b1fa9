import json
import math
import subprocess
import sys

import numpy as np
import pytest

from specwass.cli import ConfigError, build_model, main, validate
from specwass.core import PathEnsemble

REPORT_SUFFIXES = (".csv", ".json", ".dat", ".gp", ".swpe")


def run(tmp_path, cfg, *extra, name="out"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main(["--config", str(path), "--out", str(out), *extra, cfg["command"]])
    return code, out


def reports(out):
    return {f.name: f.read_bytes() for f in sorted(out.iterdir())
            if f.suffix in REPORT_SUFFIXES and f.name != "meta.json"}


class TestValidation:
    def test_missing_field_named(self, tmp_path, capsys):
        code, _ = run(tmp_path, {"command": "converge", "Q": {"kind": "sine"}, "p": 1.0, "n_exponents": [2]})
        assert code == 2
        assert "'K'" in capsys.readouterr().err

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="bogus"):
            validate("optimal", {"p": 1.0, "bogus": 1})

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            validate("optimal", {"p": -1.0})
        with pytest.raises(ConfigError):
            validate("converge", {"Q": {"kind": "win", "p": 0.5, "x0": 0.5}, "p": 1.0, "n_exponents": [2], "K": 10})
        with pytest.raises(ConfigError):
            validate("verify", {"claimed_optimal": "nope"})

    def test_command_mismatch(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"command": "filter"}))
        assert main(["--config", str(path), "--out", str(tmp_path), "optimal"]) == 2

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        assert main(["--config", str(path), "--out", str(tmp_path), "optimal"]) == 2

    def test_build_model(self):
        assert build_model(validate("simulate", {"model": {"kind": "constant", "x0": 0.2}, "K": 1})["model"]).x0 == 0.2
        with pytest.raises(ConfigError):
            validate("simulate", {"model": {"kind": "sprocket"}, "K": 1})


class TestCommands:
    def test_converge_scaled_bm(self, tmp_path):
        cfg = {"command": "converge", "Q": {"kind": "brownian", "scale": 2.0}, "P": {"kind": "brownian"},
               "p": 1.0, "n_exponents": [1, 3, 5], "K": 20}
        code, out = run(tmp_path, cfg)
        assert code == 0
        rows = np.genfromtxt(out / "converge.csv", delimiter=",", names=True, dtype=None, encoding="utf-8")
        np.testing.assert_allclose(rows["scaled_value"], math.sqrt(2.0 / math.pi), rtol=1e-12)
        assert (out / "converge.dat").exists() and (out / "converge.gp").exists()
        assert json.loads((out / "converge.json").read_text())["anchor"]

    def test_converge_sine_decreasing(self, tmp_path):
        cfg = {"command": "converge", "Q": {"kind": "sine"}, "p": 1.0, "n_exponents": [2, 4, 6], "K": 2000}
        code, out = run(tmp_path, cfg)
        assert code == 0
        rows = np.genfromtxt(out / "converge.csv", delimiter=",", names=True, dtype=None, encoding="utf-8")
        assert np.all(np.diff(rows["rel_error"]) < 0)

    @pytest.mark.parametrize("p,c", [(0.5, math.sqrt(2.0)), (1.0, math.log(2 * math.pi)), (2.0, 1.0)])
    def test_optimal_header(self, tmp_path, p, c):
        code, out = run(tmp_path, {"command": "optimal", "p": p, "n_nodes": 1025})
        assert code == 0
        header = json.loads((out / "profile.json").read_text())
        assert abs(header["C_p"] - c) < 1e-8
        if p == 2.0:
            tab = np.loadtxt(out / "profile.csv", delimiter=",", skiprows=1)
            np.testing.assert_allclose(tab[:, 1], tab[:, 0] * (1 - tab[:, 0]), atol=1e-12)

    def test_simulate_constant_round_trip(self, tmp_path):
        cfg = {"command": "simulate", "model": {"kind": "constant", "x0": 0.25}, "K": 7, "n_exponent": 3}
        code, out = run(tmp_path, cfg)
        assert code == 0
        ens = PathEnsemble.load(out / "ensemble.swpe")
        np.testing.assert_array_equal(ens.states, np.full((7, 9), 0.25))
        again = tmp_path / "again.swpe"
        ens.save(again)
        assert again.read_bytes() == (out / "ensemble.swpe").read_bytes()

    def test_filter(self, tmp_path):
        code, out = run(tmp_path, {"command": "filter", "K": 4000, "n_steps": 256})
        assert code == 0
        assert json.loads((out / "filter.json").read_text())["pass"]

    def test_wrong_claim_exits_one(self, tmp_path, capsys):
        cfg = {"command": "verify", "K": 3000, "value_cases": [], "optimality_p": [0.5], "competitors": ["bass"],
               "claimed_optimal": "bass", "convex_p": [0.5, 2.0], "convex_t": [0.5], "follmer_K": 500}
        code, out = run(tmp_path, cfg)
        assert code == 1
        failures = json.loads(capsys.readouterr().out)["failures"]
        assert failures == ["optimality p=0.5"]
        assert json.loads((out / "verify.json").read_text())["failures"] == failures

    def test_anchors_recorded(self, tmp_path):
        cfg = {"command": "verify", "K": 500, "value_cases": [[0.5, 0.3]], "optimality_p": [3.0],
               "convex_p": [0.5, 2.0], "convex_t": [0.5], "follmer_K": 200}
        _, out = run(tmp_path, cfg)
        for c in json.loads((out / "verify.json").read_text())["checks"]:
            assert isinstance(c["anchor"], str) and c["anchor"]


class TestDeterminism:
    @pytest.mark.parametrize("cfg", [
        {"command": "converge", "Q": {"kind": "sine"}, "p": 3.0, "n_exponents": [2, 4], "K": 500,
         "methods": ["surrogate", "nested"], "K_outer": 4, "M_inner": 64},
        {"command": "simulate", "model": {"kind": "win", "p": 3.0, "x0": 0.4}, "K": 50, "n_exponent": 4},
        {"command": "optimal", "p": 1.5, "n_nodes": 513},
        {"command": "filter", "K": 300, "n_steps": 64},
        {"command": "schrodinger", "K": 300, "entropy_K": 100, "n_steps": 32},
    ], ids=lambda c: c["command"])
    def test_workers_do_not_change_reports(self, tmp_path, cfg):
        _, a = run(tmp_path, cfg, "--workers", "1", "--seed", "11", name="a")
        _, b = run(tmp_path, cfg, "--workers", "3", "--seed", "11", name="b")
        ra, rb = reports(a), reports(b)
        assert ra and ra == rb
        assert json.loads((b / "meta.json").read_text())["workers"] == 3

    def test_env_overrides_out(self, tmp_path, monkeypatch):
        target = tmp_path / "env"
        monkeypatch.setenv("SPECWASS_OUT", str(target))
        code, out = run(tmp_path, {"command": "optimal", "p": 2.0, "n_nodes": 33})
        assert code == 0
        assert (target / "profile.json").exists() and not out.exists()


def test_module_entry_point(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"command": "optimal"}))
    proc = subprocess.run([sys.executable, "-m", "specwass", "--config", str(path), "optimal"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2 and "'p'" in proc.stderr
