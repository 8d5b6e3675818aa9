import json
import warnings

import numpy as np
import pytest

from rdode import cli, io
from rdode.grid import make_grid
from rdode.model import SystemModel, register_model, sqcoupled_model
from rdode.stationary import assemble_stationary


def no_roots_model():
    # f = u^2 + 1 never vanishes
    return SystemModel(
        name="no-roots", n=1,
        f=lambda u, v: u**2 + 1.0,
        g=lambda u, v: u[0] - v,
        jac_fu=lambda u, v: (2 * u)[None, ...],
        jac_fv=lambda u, v: np.zeros((1,) + np.shape(v)),
        jac_gu=lambda u, v: np.ones((1,) + np.shape(v)),
        jac_gv=lambda u, v: -np.ones(np.shape(v)),
    )


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


SQ = {"model": "sqcoupled", "continuation": {"d_range": [0.95, 1.05]}}
LIN = {
    "model": "linear(-1,1,2,-1)",
    "state": {"source": "explicit"},
    "simulation": {"eps_list": [1e-3], "T": 30.0},
}


def test_state_round_trip(tmp_path):
    g = make_grid(M=51)
    m = sqcoupled_model()
    V = 1.0 + 0.1 * np.cos(g.nodes) + 1e-17
    st = assemble_stationary(m, g, V, u_guess=[1.0], d_ell=0.97, v_bar=1.0)
    path = io.write_state(tmp_path / "s.csv", st, g, "sqcoupled", "abc")
    back, g2, model, spec = io.read_state(path)
    assert g2 == g and spec == "sqcoupled"
    assert np.array_equal(back.V, st.V) and np.array_equal(back.U, st.U)
    assert back.d_ell == 0.97 and back.v_bar == 1.0
    assert model.name.startswith("sqcoupled[d=0.97")
    text = path.read_text()
    assert "# config_hash: abc" in text and '"numpy"' in text


def test_read_table_rejects_garbage(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# model: x\n")
    with pytest.raises(ValueError):
        io.read_table(p)


def test_config_hash_is_order_independent():
    assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


def test_config_validation():
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_dict({})
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_dict({"model": "sqcoupled", "bogus": 1})
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_dict({"model": "sqcoupled", "simulation": {"delta": -1}})
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_dict({"model": "sqcoupled", "grid": {"nodes": 3}})
    cfg = cli.ExperimentConfig.from_dict(SQ)
    assert cfg.grid.M == 401 and cfg.continuation.d_range == [0.95, 1.05]


def test_equilibria_command(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["equilibria", "--config", write_cfg(tmp_path, SQ), "--out", str(out)]) == 0
    rep = json.loads((out / "equilibria.json").read_text())
    rows = {round(r["v_bar"], 9): r for r in rep["equilibria"]}
    assert set(rows) == {0.0, 1.0}
    assert rows[1.0]["bifurcation_index"] == 1
    assert rows[0.0]["bifurcation_index"] is None
    assert rep["meta"]["config_hash"]


def test_equilibria_linear_lhs(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, {"model": "linear(-1,1,2,-1)"})
    assert cli.main(["equilibria", "--config", cfg, "--out", str(out)]) == 0
    (row,) = json.loads((out / "equilibria.json").read_text())["equilibria"]
    assert row["det_identity"]["schur"] == pytest.approx(1.0, abs=1e-12)
    assert row["bifurcation_index"] == 1


def test_exit_codes(tmp_path):
    out = str(tmp_path / "o")
    assert cli.main(["equilibria", "--config", write_cfg(tmp_path, {}), "--out", out]) == 1
    assert cli.main(["equilibria", "--config", write_cfg(tmp_path, {"model": "lin(("}), "--out", out]) == 1
    assert cli.main(["equilibria", "--config", str(tmp_path / "missing.json"), "--out", out]) == 1
    register_model("no-roots", no_roots_model)
    assert cli.main(["equilibria", "--config", write_cfg(tmp_path, {"model": "no-roots"}), "--out", out]) == 2
    no_branch = dict(SQ, continuation={"d_range": [0.95, 1.05], "k": 2})
    assert cli.main(["branch", "--config", write_cfg(tmp_path, no_branch), "--out", out]) == 3
    assert cli.main(["spectrum", "--config", write_cfg(tmp_path, SQ), "--out", out,
                     "--state", str(tmp_path / "none.csv")]) == 1


def test_branch_spectrum_simulate_pipeline(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, dict(SQ, simulation={"eps_list": [1e-3], "T": 30.0}))
    assert cli.main(["branch", "--config", cfg, "--out", str(out)]) == 0
    meta, cols = io.read_table(out / "branch.csv")
    assert np.all(cols["residual_pde"] < 1e-8) and meta["k"] == "1"
    state = str(out / "state.csv")
    assert cli.main(["spectrum", "--config", cfg, "--out", str(out), "--state", state]) == 0
    spec = json.loads((out / "spectrum.json").read_text())
    assert spec["verdict"] == "unstable-fixed-point" and spec["lambda_bar"] > 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(out), "--state", state]) == 0
    sim = json.loads((out / "simulate.json").read_text())
    assert sim["escape_test"]["result"] == "PASS"
    tmeta, trace = io.read_table(out / "trace_00.csv")
    assert set(trace) == {"t", "deviation", "dev_U_1", "dev_V"}
    assert tmeta["config_hash"] == spec["meta"]["config_hash"]


def test_verify_linear_and_stable(tmp_path):
    out = tmp_path / "lin"
    assert cli.main(["verify", "--config", write_cfg(tmp_path, LIN), "--out", str(out)]) == 0
    v = json.loads((out / "verify.json").read_text())
    assert v["rate"] == pytest.approx(np.sqrt(2) - 1, rel=0.05) and v["outcome"] == "unstable-confirmed"
    stable = {"model": "frozen-stable(1)", "state": {"source": "explicit"},
              "simulation": {"eps_list": [1e-3], "T": 10.0}}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert cli.main(["verify", "--config", write_cfg(tmp_path, stable, "s.json"), "--out", str(tmp_path / "st")]) == 0
    v = json.loads((tmp_path / "st" / "verify.json").read_text())
    assert v["verdict"] == "degenerate-det-zero" and v["escape_test"] == "FAIL" and v["outcome"] == "expected-stable"


def test_verify_rate_mismatch_exit(tmp_path):
    # T too short to escape from an unstable state -> the verdict and the experiment disagree
    cfg = dict(LIN, simulation={"eps_list": [1e-5], "T": 1.0})
    assert cli.main(["verify", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 4


def test_outputs_reproducible_and_env_override(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, dict(LIN, simulation={"eps_list": [1e-3], "T": 20.0}))
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "a"))
    assert cli.main(["verify", "--config", cfg, "--seed", "5"]) == 0
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "b"))
    assert cli.main(["verify", "--config", cfg, "--seed", "5"]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    # --out beats the environment
    assert cli.main(["equilibria", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "equilibria.json").exists()
