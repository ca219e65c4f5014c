import json

import numpy as np
import pytest

from cachefield import io
from cachefield.cli import apply_overrides, main

RR_CFG = {"scheme": "rr", "phi": 0.45, "cache_size": 2, "popularity": {"kind": "explicit", "values": [0.5, 0.29, 0.21]}}


@pytest.fixture
def cfg_file(tmp_path):
    def write(cfg):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        return str(p)

    return write


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, (out.read_text() if out.exists() else None)


def test_states_listing(tmp_path):
    code, text = run(tmp_path, "states", "--set", "n_contents=5", "--set", "cache_size=2", "--format", "csv")
    assert code == 0
    sp = io.read_states(text, "csv")
    assert sp.n_states == 10 and sp.states[6] == (2, 5)
    code, text = run(tmp_path, "states", "--set", "n_contents=30", "--set", "cache_size=3")
    assert json.loads(text)["n_states"] == 4060
    code, text = run(tmp_path, "states", "--set", "n_contents=3", "--set", "cache_size=2", "--set", "output=cache_matrix", "--format", "csv")
    assert text.splitlines()[1] == "1,1,1,0"


def test_field_scaling_and_decompose(tmp_path, cfg_file):
    path = cfg_file(RR_CFG)
    _, a = run(tmp_path, "field", "--config", path, "--format", "csv", name="a")
    _, b = run(tmp_path, "field", "--config", path, "--set", "phi=0.2", "--format", "csv", "--decompose", name="b")
    fa, fb = io.read_field(a, "csv"), io.read_field(b, "csv")
    assert fa["eta"].shape == (66, 3) and fa["u_by_content"] is None
    assert fb["u_by_content"].shape == (66, 3, 3)
    np.testing.assert_allclose(fa["u"], 2.25 * fb["u"], atol=1e-11)
    np.testing.assert_allclose(fa["meta"]["steady_state"], fb["meta"]["steady_state"], atol=1e-10)


def test_steady_rr_both_methods(tmp_path, cfg_file):
    code, text = run(tmp_path, "steady", "--config", cfg_file(RR_CFG))
    d = json.loads(text)
    assert code == 0 and d["agreement"] and d["balance_residual"] < 1e-9
    np.testing.assert_allclose(d["eta_star"], d["closed_form"], atol=1e-9)
    assert set(d) >= {"eta_star", "iterations", "residual", "method"}


def test_steady_lp_absorbing(tmp_path, cfg_file):
    code, text = run(tmp_path, "steady", "--config", cfg_file(RR_CFG), "--set", "scheme=lp", "--set", "alpha=0.9")
    d = json.loads(text)
    assert d["method"] == "absorbing-analytic" and d["eta_star"] == [1, 0, 0]
    assert d["power_iteration_check"]["converged"] and d["replacement_activity"] == 0


def test_spectrum_lp(tmp_path, cfg_file):
    code, text = run(tmp_path, "spectrum", "--config", cfg_file(RR_CFG), "--set", "scheme=lp", "--set", "alpha=0.9", "--set", "bound_t=[10]")
    d = json.loads(text)
    assert d["closed_form"] == pytest.approx(0.739) and d["agreement"] is True
    assert d["bound"][0]["bound"] == pytest.approx(0.0280468283510, rel=1e-9)


def test_simulate_tasks(tmp_path, cfg_file):
    path = cfg_file(RR_CFG)
    code, text = run(tmp_path, "simulate", "--config", path, "--set", "task=trace", "--set", "n_requests=200", "--format", "csv")
    assert code == 0 and io.read_trajectory(text, "csv")["requests"].size == 200
    code, text = run(tmp_path, "simulate", "--config", path, "--set", "task=theta", "--set", "samples_per_state=2000", "--threads", "2")
    assert np.allclose(np.array(json.loads(text)["theta"]).sum(axis=0), 1)
    code, text = run(tmp_path, "simulate", "--config", path, "--set", "scheme=lru", "--set", "task=stf", "--mode", "trace", "--set", "n_requests=3000")
    d = json.loads(text)
    assert np.max(np.abs(np.subtract(d["u_empirical"], d["u_analytic"]))) < 0.03


def test_ccp_and_byte_identical_output(tmp_path):
    args = ["ccp", "--set", "scheme=tlp", "--set", "variant=A", "--set", "n_contents=12", "--set", "cache_size=3"]
    args += ["--set", "popularity.kind=zipf", "--set", "popularity.exponent=0.8", "--set", "n_rounds=40", "--set", "n_requests=30"]
    args += ["--set", "tracked_contents=[1,5]", "--seed", "7", "--format", "csv"]
    _, a = run(tmp_path, *args, name="a")
    _, b = run(tmp_path, *args, name="b")
    assert a == b
    d = io.read_ccp(a, "csv")
    assert d["values"].shape == (30, 2) and d["meta"]["seed"] == 7


def test_compare(tmp_path):
    code, text = run(tmp_path, "compare", "--set", "cache_size=2", "--set", "popularity.kind=explicit", "--set", "popularity.values=[0.5,0.29,0.21]")
    d = json.loads(text)
    assert d["delta"][0] > 0 and d["lru_field_at_rr_steady_state"][0] > 0
    assert d["hit_probability_lru"] > d["hit_probability_rr"]


def test_matrix_command(tmp_path, cfg_file):
    code, text = run(tmp_path, "matrix", "--config", cfg_file(RR_CFG), "--format", "csv")
    assert io.read_matrix(text, "csv")[0, 0] == pytest.approx(0.811)
    code, text = run(tmp_path, "matrix", "--config", cfg_file(RR_CFG), "--set", "content=3")
    assert io.read_matrix(text)[0, 0] == pytest.approx(0.1)


def test_errors_and_exit_codes(tmp_path, cfg_file, capsys, monkeypatch):
    assert run(tmp_path, "steady", "--config", cfg_file({**RR_CFG, "colour": "red"}))[0] == 2
    assert "colour" in capsys.readouterr().err
    assert run(tmp_path, "steady", "--config", cfg_file({**RR_CFG, "phi": 0.9}))[0] == 1
    assert run(tmp_path, "steady", "--config", str(tmp_path / "missing.json"))[0] == 1
    assert "missing.json" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(tmp_path, "steady", "--config", str(bad))[0] == 2
    assert run(tmp_path, "steady", "--config", cfg_file({**RR_CFG, "popularity": {"kind": "explicit", "values": [0.5, 0.4, 0.3]}}))[0] == 1
    assert run(tmp_path, "nonsense")[0] == 2
    monkeypatch.setenv("STF_CACHE_MAX_STATES", "2")
    assert run(tmp_path, "steady", "--config", cfg_file(RR_CFG))[0] == 1
    assert "too large" in capsys.readouterr().err


def test_overrides():
    cfg = apply_overrides({"a": {"b": 1}}, ["a.c=[1,2]", "d=text", "e=0.5"])
    assert cfg == {"a": {"b": 1, "c": [1, 2]}, "d": "text", "e": 0.5}
    with pytest.raises(ValueError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ValueError):
        apply_overrides({"a": 1}, ["a.b=2"])
