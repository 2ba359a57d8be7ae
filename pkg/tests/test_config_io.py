import json
import os

import numpy as np
import pytest

from chdelay.config import build_profile, load_config, parse_config
from chdelay.errors import FormatError, ParseError, ValidationError
from chdelay.grid import Field, Grid
from chdelay.io import (
    field_to_csv,
    load_trajectory,
    read_field_csv,
    save_trajectory,
    snapshot_steps,
    write_field_csv,
)
from chdelay.scheme import DelayConfig, solve


# -- configuration --------------------------------------------------------------

def test_empty_config_uses_defaults():
    cfg = parse_config("")
    assert cfg.grid == Grid((64,))
    assert (cfg.delay.T, cfg.delay.N, cfg.delay.M) == (0.25, 16, 4)
    assert cfg.delay.mu_weight == "lagged" and cfg.delay.beta_mode == "yosida"
    assert cfg.physics["graph"] == "log" and cfg.physics["conductivity"] == "demo_exp_cos"
    assert cfg.output == {"directory": "chdelay-out", "stride": 8}
    assert cfg.audit_names() is None and not cfg.manufactured


def test_two_dimensional_default_cells():
    assert parse_config("[grid]\ndim = 2\n").grid == Grid((64, 64))


def test_log_graph_round_trip():
    cfg = parse_config('[physics]\ngraph = "log"\nc = 1.0\n')
    spec = cfg.potential()
    assert spec.names["graph"] == "log" and spec.names["graph_params"] == {"c": 1.0}
    assert float(spec.graph.beta(0.5)) == pytest.approx(0.0, abs=1e-15)
    assert float(spec.graph.beta(0.75)) == pytest.approx(np.log(3.0))


def test_zero_steps_reports_key_path():
    with pytest.raises(ValidationError) as info:
        parse_config("[delay]\nN = 0\n")
    assert [p for p, _ in info.value.problems] == ["delay.N"]


def test_problems_are_aggregated():
    with pytest.raises(ValidationError) as info:
        parse_config("[delay]\nN = 0\nfoo = 1\n[grid]\ncells = [0]\n[bogus]\n")
    keys = {p for p, _ in info.value.problems}
    assert {"delay.N", "delay.foo", "grid.cells", "bogus"} <= keys
    doc = info.value.to_dict()
    assert doc["code"] == "ValidationError" and len(doc["problems"]) == len(keys)


@pytest.mark.parametrize("text, key", [
    ('[physics]\ngraph = "spline"\n', "physics.graph"),
    ("[physics]\nkappa_amp = 2.0\n", "physics.kappa_amp"),
    ("[physics]\nkappa_min = 1.1\n", "physics.kappa_min"),
    ("[delay]\nnewton_damping = 1.5\n", "delay.newton_damping"),
    ("[delay]\nT = -1.0\n", "delay.T"),
    ('[audits]\nnames = ["bogus"]\n', "audits.names"),
    ('[initial]\nmanufactured = true\nmu = {profile = "const", value = 1.0}\n', "initial"),
])
def test_invalid_values(text, key):
    with pytest.raises(ValidationError) as info:
        parse_config(text)
    assert key in {p for p, _ in info.value.problems}


def test_malformed_toml_is_parse_error():
    with pytest.raises(ParseError):
        parse_config("[delay\nN = 3\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ParseError):
        load_config(str(tmp_path / "absent.toml"))


def test_audit_options_follow_config():
    cfg = parse_config("[audits]\nC_G = 2.5\nenergy_rel_tol = 1e-7\n")
    opts = cfg.audit_options()
    assert opts["phase_energy"] == {"C_G": 2.5}
    assert opts["weighted_energy"] == {"rel_tol": 1e-7}


def test_profiles():
    g = Grid((8,))
    cos = build_profile({"profile": "cos", "mean": 0.25, "amp": 0.05}, g)
    assert cos.flat.mean() == pytest.approx(0.25)
    r1 = build_profile({"profile": "random", "mean": 0.3, "amp": 0.1, "seed": 4}, g)
    r2 = build_profile({"profile": "random", "mean": 0.3, "amp": 0.1, "seed": 4}, g)
    assert np.array_equal(r1.flat, r2.flat)
    assert np.all(np.abs(r1.flat - 0.3) <= 0.1)


def test_file_profile_relative_to_config(tmp_path):
    g = Grid((4,))
    write_field_csv(str(tmp_path / "rho0.csv"), Field(g, np.array([0.2, 0.3, 0.4, 0.5])))
    path = tmp_path / "run.toml"
    path.write_text('[grid]\ncells = [4]\n[initial]\nrho = {profile = "file", path = "rho0.csv"}\n')
    cfg = load_config(str(path))
    data = cfg.initial_data(cfg.potential())
    assert np.array_equal(data.rho0.flat, [0.2, 0.3, 0.4, 0.5])


# -- field CSV --------------------------------------------------------------------

@pytest.mark.parametrize("cells, lengths", [((5,), (1.0,)), ((3, 4), (1.0, 2.5))])
def test_field_csv_round_trip(tmp_path, cells, lengths):
    g = Grid(cells, lengths)
    fld = Field(g, np.random.default_rng(0).normal(size=g.size))
    path = str(tmp_path / "f.csv")
    write_field_csv(path, fld)
    back = read_field_csv(path)
    assert back.grid == g and np.array_equal(back.flat, fld.flat)
    assert field_to_csv(back) == open(path).read()


def test_field_csv_nan_names_file(tmp_path):
    path = tmp_path / "mu_bad.csv"
    path.write_text("# grid: 1,3,1.0\n0.1\nnan\n0.3\n")
    with pytest.raises(FormatError, match="mu_bad.csv"):
        read_field_csv(str(path))


@pytest.mark.parametrize("text", ["0.1\n0.2\n", "# grid: 3,2,1.0\n0.1\n0.2\n",
                                  "# grid: 1,3,1.0\n0.1\n0.2\n", "# grid: 1,2,1.0\n0.1\nx\n"])
def test_field_csv_malformed(tmp_path, text):
    path = tmp_path / "f.csv"
    path.write_text(text)
    with pytest.raises(FormatError, match="f.csv"):
        read_field_csv(str(path))


# -- saved trajectories -------------------------------------------------------------

@pytest.fixture
def saved(tmp_path, log_spec, demo_cond):
    from conftest import default_data

    traj = solve(DelayConfig(T=0.1, N=5, M=2), default_data(Grid((16,)), log_spec), log_spec, demo_cond)
    out = str(tmp_path / "run")
    index = save_trajectory(out, traj, stride=4, config_text="# cfg\n")
    return out, traj, index


def test_snapshot_steps_include_last():
    assert snapshot_steps(10, 4) == [0, 4, 8, 10]
    assert snapshot_steps(8, 4) == [0, 4, 8]


def test_trajectory_round_trip(saved):
    out, traj, index = saved
    back, idx = load_trajectory(out)
    assert idx == index and idx["config_text"] == "# cfg\n"
    for name in ("times", "mu", "rho", "xi", "newton_residual", "substeps"):
        assert np.array_equal(getattr(back, name), getattr(traj, name))
    assert back.config == traj.config and back.grid == traj.grid
    assert [s["step"] for s in idx["snapshots"]] == [0, 4, 8, 10]
    assert not any(f.startswith(".tmp-") for f in os.listdir(out))


def test_truncated_index(saved):
    out = saved[0]
    path = os.path.join(out, "index.json")
    text = open(path).read()
    with open(path, "w") as fh:
        fh.write(text[: len(text) // 2])
    with pytest.raises(FormatError, match="index.json"):
        load_trajectory(out)


def test_corrupted_snapshot(saved):
    out = saved[0]
    path = os.path.join(out, "snapshots", "mu_000004.csv")
    lines = open(path).read().splitlines()
    lines[3] = "NaN"
    open(path, "w").write("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="mu_000004.csv"):
        load_trajectory(out)


def test_altered_snapshot_value(saved):
    out = saved[0]
    path = os.path.join(out, "snapshots", "rho_000008.csv")
    lines = open(path).read().splitlines()
    lines[2] = repr(float(lines[2]) + 1e-12)
    open(path, "w").write("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="differ"):
        load_trajectory(out)


def test_wrong_format_version(saved):
    out = saved[0]
    path = os.path.join(out, "index.json")
    doc = json.load(open(path))
    doc["format"] = 99
    json.dump(doc, open(path, "w"))
    with pytest.raises(FormatError, match="format"):
        load_trajectory(out)
