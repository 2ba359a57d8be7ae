import json
import math

import numpy as np
import pytest

from chdelay.errors import AuditFailure, InvalidScenario, LostPositivity
from chdelay.estimates import (
    audit_gradK,
    audit_homogeneous_invariant,
    audit_linf_truncation,
    audit_nonnegativity,
    audit_phase_energy,
    audit_weighted_energy,
    audit_xi_l6,
    gradK_series,
    homogeneous_invariant,
    nonnegativity_refusal,
    relative_spread,
    run_audits,
)
from chdelay.grid import Field, Grid
from chdelay.nonlin import make_conductivity, make_graph, make_potential
from chdelay.scheme import DelayConfig, InitialData, Trajectory, solve

from conftest import constant_data, default_data


@pytest.fixture(scope="module")
def default_run():
    spec = make_potential(make_graph("log", c=1.0))
    cond = make_conductivity("demo_exp_cos")
    traj = solve(DelayConfig(), default_data(Grid((64,)), spec, mu_amp=0.1), spec, cond)
    return traj, spec, cond


def _frozen(grid, mu, rho, h=0.1):
    """A one-step trajectory holding a fixed snapshot twice."""
    mu = np.vstack([mu, mu])
    rho = np.vstack([rho, rho])
    return Trajectory(grid=grid, config=DelayConfig(T=h, N=1, M=1), times=np.array([0.0, h]),
                      mu=mu, rho=rho, xi=np.zeros_like(rho), newton_residual=np.zeros(1),
                      newton_iterations=np.zeros(1, int), picard_change=np.zeros(1),
                      picard_iterations=np.zeros(1, int), substeps=np.ones(1, int))


# -- weighted energy ----------------------------------------------------------

def test_weighted_energy_constant_state():
    spec = make_potential(make_graph("zero"), f2="none", coupling="const", g0=0.0)
    cond = make_conductivity("const")
    traj = solve(DelayConfig(T=0.1, N=2, M=2), constant_data(spec, 1.0, 0.2, cells=8), spec, cond)
    res = audit_weighted_energy(traj, spec, cond)
    assert res.verdict and res.details["W0"] == pytest.approx(1.0)
    assert np.allclose(res.series["weighted_energy"], 1.0) and np.all(res.series["cumulative_dissipation"] == 0)


def test_weighted_energy_against_stepwise_summation(default_run):
    traj, spec, cond = default_run
    g = traj.grid
    res = audit_weighted_energy(traj, spec, cond).check()
    # independent oracle: plain loops over cells and faces
    vol, dx = g.cell_volume, g.spacing[0]
    W0 = sum((1 + 2 * float(spec.g(traj.rho[0, i]))) * traj.mu[0, i] ** 2 * vol for i in range(g.size))
    D = 0.0
    for k in range(1, traj.n_levels):
        mu, rho = traj.mu[k], traj.rho[k]
        for i in range(g.size - 1):
            kap = 0.5 * (cond.kappa(mu[i], rho[i]) + cond.kappa(mu[i + 1], rho[i + 1]))
            D += traj.h * kap * ((mu[i + 1] - mu[i]) / dx) ** 2 * vol
        Wk = sum((1 + 2 * float(spec.g(rho[i]))) * mu[i] ** 2 * vol for i in range(g.size))
        assert Wk + 2 * D <= W0 * (1 + 1e-6)
    assert res.details["W0"] == pytest.approx(W0, rel=1e-13)
    assert res.series["cumulative_dissipation"][-1] == pytest.approx(D, rel=1e-12)


def test_weighted_energy_defect_shrinks_with_h(log_spec, demo_cond):
    defects = []
    for N in (50, 100):
        traj = solve(DelayConfig(T=0.25, N=N, M=1), constant_data(log_spec, 1.0, 0.3), log_spec, demo_cond)
        res = audit_weighted_energy(traj, log_spec, demo_cond)
        defects.append(-res.series["excess"][-1])
    assert defects[0] > 0 and defects[1] > 0
    assert defects[0] / defects[1] >= 1.6


# -- phase energy -------------------------------------------------------------

def test_phase_energy_gradient_flow_dissipates():
    spec = make_potential(make_graph("zero"), f2="quad", a=1.0, coupling="const")
    cond = make_conductivity("const")
    g = Grid((32,))
    data = InitialData.from_fields(Field.constant(g, 0.0),
                                   Field(g, np.cos(math.pi * g.centers()[0])), spec)
    traj = solve(DelayConfig(T=0.2, N=4, M=2), data, spec, cond)
    res = audit_phase_energy(traj, spec).check()
    E = np.concatenate([[res.details["E0"]], res.series["phase_energy"]])
    assert np.all(np.diff(E) <= 1e-14)


def test_phase_energy_constant_at_critical_point(log_spec, demo_cond):
    traj = solve(DelayConfig(T=0.1, N=2, M=2), constant_data(log_spec, 0.0, 0.5, cells=8), log_spec,
                 demo_cond)
    res = audit_phase_energy(traj, log_spec).check()
    assert np.allclose(res.series["phase_energy"], res.details["E0"], atol=1e-14)


def test_phase_energy_default_bound(default_run):
    traj, spec, cond = default_run
    res = audit_phase_energy(traj, spec).check()
    assert res.details["sup_E"] <= res.details["E_bound"]
    assert math.isfinite(res.details["dtrho_sum"])


# -- nonnegativity ------------------------------------------------------------

def test_nonnegativity_zero_and_default(default_run, log_spec, demo_cond):
    traj = solve(DelayConfig(T=0.1, N=2, M=2), default_data(Grid((16,)), log_spec, mu_mean=0.0),
                 log_spec, demo_cond)
    assert audit_nonnegativity(traj).check().details["min_mu"] == 0.0
    assert audit_nonnegativity(default_run[0]).verdict


def test_nonnegativity_reports_refusal():
    res = nonnegativity_refusal(LostPositivity("refused", step=3, min_diagonal=-0.5))
    assert not res.verdict and res.details["refused"] and res.worst_step == 3
    with pytest.raises(AuditFailure):
        res.check()


def test_nonnegativity_flags_negative_values():
    g = Grid((3,))
    traj = _frozen(g, np.array([0.1, -1e-9, 0.2]), np.full(3, 0.3))
    res = audit_nonnegativity(traj)
    assert not res.verdict and res.details["cell"] == 1


# -- truncation -------------------------------------------------------------

def test_truncation_without_coupling_source():
    spec = make_potential(make_graph("log"), coupling="const", g0=0.3)
    cond = make_conductivity("demo_exp_cos")
    traj = solve(DelayConfig(T=0.1, N=2, M=2), default_data(Grid((32,)), spec, mu_amp=0.1), spec, cond)
    mu0 = traj.mu[0].max()
    res = audit_linf_truncation(traj, levels=mu0 + np.array([0.0, 0.1, 1.0])).check()
    assert np.all(res.series["y"] == 0) and res.details["delta_cap"] == 0.0


def test_truncation_default_scenario(log_spec, demo_cond):
    traj = solve(DelayConfig(), default_data(Grid((64,)), log_spec), log_spec, demo_cond)
    res = audit_linf_truncation(traj).check()
    assert res.details["delta_cap"] > 0
    assert np.all(np.diff(res.series["y"]) <= 0) and res.series["y"][0] > 0


def test_truncation_rejects_low_levels(default_run):
    with pytest.raises(ValueError):
        audit_linf_truncation(default_run[0], levels=[0.0])


# -- xi in L6 -----------------------------------------------------------------

def test_xi_l6_zero_graph():
    spec = make_potential(make_graph("zero"))
    cond = make_conductivity("const")
    traj = solve(DelayConfig(T=0.1, N=2, M=2), default_data(Grid((16,)), spec), spec, cond)
    res = audit_xi_l6(traj, spec).check()
    assert np.all(res.series["xi_L6"] == 0)


def test_xi_l6_single_cell_equality(log_spec, demo_cond):
    traj = solve(DelayConfig(T=0.1, N=2, M=2), constant_data(log_spec, 1.0, 0.3), log_spec, demo_cond)
    res = audit_xi_l6(traj, log_spec).check()
    assert np.allclose(res.series["xi_L6"], res.series["h_L6"], rtol=0, atol=1e-9)


def test_xi_l6_default(default_run):
    traj, spec, _ = default_run
    assert audit_xi_l6(traj, spec).verdict


def test_xi_l6_slack_bounded_by_newton_tolerance(log_spec, demo_cond):
    g = Grid((64,))
    tol = 1e-5
    cfg = DelayConfig(T=0.1, N=4, M=2, newton_tol=tol, newton_max=1)
    try:
        traj = solve(cfg, default_data(g, log_spec, mu_amp=0.2), log_spec, demo_cond)
    except Exception:
        cfg = DelayConfig(T=0.1, N=4, M=2, newton_tol=tol)
        traj = solve(cfg, default_data(g, log_spec, mu_amp=0.2), log_spec, demo_cond)
    res = audit_xi_l6(traj, log_spec, rel_tol=0.0)
    worst_residual_inf = traj.newton_residual.max() / math.sqrt(g.cell_volume)
    assert res.details["max_slack"] <= worst_residual_inf + 1e-14


# -- grad K -------------------------------------------------------------------

def test_gradK_constant_conductivity_exact(log_spec):
    cond = make_conductivity("const")
    traj = solve(DelayConfig(T=0.1, N=2, M=2), default_data(Grid((32,)), log_spec, mu_amp=0.1),
                 log_spec, cond)
    res = audit_gradK(traj, cond).check()
    assert res.details["max_identity_residual"] <= 1e-13


def test_gradK_constant_rho():
    cond = make_conductivity("demo_exp_cos")
    g = Grid((64,))
    x = g.centers()[0]
    traj = _frozen(g, 1 + 0.5 * np.cos(math.pi * x), np.full(64, 0.4))
    assert audit_gradK(traj, cond).verdict


def test_gradK_identity_residual_first_order():
    cond = make_conductivity("demo_exp_cos")
    res = []
    for n in (32, 64, 128):
        g = Grid((n,))
        x = g.centers()[0]
        traj = _frozen(g, 1 + 0.5 * np.cos(math.pi * x), 0.5 + 0.3 * np.sin(2 * x))
        res.append(gradK_series(traj, cond)[1][0])
    assert res[0] / res[1] >= 1.9 and res[1] / res[2] >= 1.9


# -- homogeneous invariant ------------------------------------------------------

def test_invariant_initial_value(log_spec, demo_cond):
    rho = 0.2 - 0.01 / 0.8  # g(rho) = 0.2
    traj = solve(DelayConfig(T=0.01, N=1, M=1), constant_data(log_spec, 1.0, rho), log_spec, demo_cond)
    assert homogeneous_invariant(traj, log_spec)[0] == pytest.approx(math.sqrt(1.4))
    assert math.sqrt(1.4) == pytest.approx(1.18322, abs=1e-5)


def test_invariant_constant_coupling_has_no_drift(demo_cond):
    spec = make_potential(make_graph("log"), coupling="const", g0=0.7)
    traj = solve(DelayConfig(T=0.1, N=2, M=2), constant_data(spec, 2.0, 0.3), spec, demo_cond)
    assert audit_homogeneous_invariant(traj, spec).details["max_drift"] <= 1e-14


def test_invariant_drift_is_first_order(log_spec, demo_cond):
    drifts = []
    for N in (250, 500):
        traj = solve(DelayConfig(T=0.25, N=N, M=1), constant_data(log_spec, 1.0, 0.3), log_spec, demo_cond)
        drifts.append(audit_homogeneous_invariant(traj, log_spec).check().details["max_drift"])
    assert drifts[0] <= 1e-2 and 1.6 <= drifts[0] / drifts[1] <= 2.4


def test_invariant_requires_constant_data(default_run):
    traj, spec, _ = default_run
    with pytest.raises(InvalidScenario):
        audit_homogeneous_invariant(traj, spec)


# -- report -----------------------------------------------------------------

def test_report_is_pure_and_serializable(default_run):
    traj, spec, cond = default_run
    a = run_audits(traj, spec, cond).to_json()
    b = run_audits(traj, spec, cond).to_json()
    assert a == b
    doc = json.loads(a)
    assert doc["passed"]
    names = {x["name"] for x in doc["audits"]}
    assert "homogeneous_invariant" not in names and "xi_l6" in names
    for audit in doc["audits"]:
        assert set(audit) >= {"name", "verdict", "tolerance", "series", "worst_step"}
    assert all(len(v) == traj.n_levels - 1 for v in doc["series"].values())


def test_report_rejects_unknown_audit(default_run):
    traj, spec, cond = default_run
    with pytest.raises(KeyError):
        run_audits(traj, spec, cond, ["bogus"])


def test_relative_spread():
    assert relative_spread([1.1, 0.95, 1.0]) == pytest.approx(0.1)
    assert relative_spread([0.0, 0.0]) == 0.0
    assert relative_spread([1.0, 0.0]) == math.inf
