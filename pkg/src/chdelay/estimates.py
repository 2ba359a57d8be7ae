"""Runtime audits of the uniform bounds a trajectory must satisfy.

Each audit is a pure function of a finished trajectory and the physics specs.
It returns an :class:`AuditResult`; calling ``check()`` on the result raises
:class:`AuditFailure` when the verdict is negative.  Series are indexed by
accepted step ``k = 1..n`` (level ``k`` is the state after step ``k``);
quantities of the initial state are kept as scalars in ``details``.

Continuous identities turn into one-sided discrete inequalities because the
implicit Euler step dissipates; every audit states its direction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import AuditFailure, InvalidScenario, LostPositivity
from .grid import Grid
from .nonlin import ConductivitySpec, PotentialSpec
from .scheme import POSITIVITY_TOL, Trajectory, delayed_level

AUDITS = ("weighted_energy", "phase_energy", "nonnegativity", "linf_truncation",
          "xi_l6", "gradK", "homogeneous_invariant")


@dataclass
class AuditResult:
    name: str
    verdict: bool
    tolerance: object
    series: dict = field(default_factory=dict)
    worst_step: Optional[int] = None
    details: dict = field(default_factory=dict)

    def check(self) -> "AuditResult":
        if not self.verdict:
            raise AuditFailure(f"audit {self.name} failed", audit=self.name,
                               worst_step=self.worst_step, details=self.details)
        return self

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": "pass" if self.verdict else "fail",
            "tolerance": self.tolerance,
            "series": {k: np.asarray(v).tolist() for k, v in self.series.items()},
            "worst_step": self.worst_step,
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _l2_rows(grid: Grid, rows: np.ndarray) -> np.ndarray:
    return np.sqrt(grid.cell_volume * np.sum(rows * rows, axis=-1))


def _lp_rows(grid: Grid, rows: np.ndarray, p: float) -> np.ndarray:
    # max-scaled so that sixth powers cannot overflow
    a = np.abs(rows)
    top = a.max(axis=-1, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    s = np.sum((a / safe) ** p, axis=-1)
    return np.where(top[..., 0] > 0, top[..., 0] * (grid.cell_volume * s) ** (1.0 / p), 0.0)


def _face_l2_rows(grid: Grid, face_rows: np.ndarray) -> np.ndarray:
    return np.sqrt(grid.face_volume * np.sum(face_rows * face_rows, axis=-1))


def _dt(traj: Trajectory, name: str) -> np.ndarray:
    arr = getattr(traj, name)
    return np.diff(arr, axis=0) / traj.h


def _delayed_rows(traj: Trajectory) -> np.ndarray:
    """``T_tau mu`` used at each step ``k = 1..n``."""
    out = np.empty((traj.n_levels - 1, traj.grid.size))
    for k in range(1, traj.n_levels):
        j = delayed_level(traj.times[k], traj.tau, traj.h)
        out[k - 1] = traj.mu[0] if j is None else traj.mu[j]
    return out


def _worst(values: np.ndarray) -> Optional[int]:
    if values.size == 0:
        return None
    return int(np.argmax(values)) + 1


def weighted_energy_series(traj: Trajectory, spec: PotentialSpec, cond: ConductivitySpec):
    """``W^k = sum (1 + 2 g(rho^k)) (mu^k)^2`` and cumulative dissipation ``D^k``.

    ``D^k`` sums ``h * sum_faces kappa_face |grad mu^j|^2`` over levels
    ``j = 1..k``, with kappa frozen at level ``j``.
    """
    grid = traj.grid
    W = grid.cell_volume * np.sum((1 + 2 * spec.g(traj.rho)) * traj.mu**2, axis=1)
    G = grid.gradient
    flux = np.zeros(traj.n_levels)
    for k in range(1, traj.n_levels):
        kap = grid.face_mean(cond.kappa(np.maximum(traj.mu[k], 0.0), traj.rho[k]))
        gm = G @ traj.mu[k]
        flux[k] = grid.face_volume * float(np.sum(kap * gm * gm))
    D = traj.h * np.cumsum(flux)
    return W, D


def phase_energy_series(traj: Trajectory, spec: PotentialSpec) -> np.ndarray:
    """``E^k = 1/2 |grad rho^k|^2 + sum (F(rho^k) + f2(rho^k))``.

    ``F`` is the convex potential actually used by the run: the Moreau
    envelope of ``f1`` in Yosida mode (its derivative is ``beta_eps``, and
    ``rho`` may leave the domain of ``f1`` slightly), ``f1`` itself in exact
    mode.
    """
    grid = traj.grid
    rho = traj.rho
    if traj.config.beta_mode == "exact":
        convex = spec.graph.f1(rho)
    else:
        convex = spec.graph.moreau_envelope(rho, traj.meta.get("eps", traj.config.eps_value))
    grad = rho @ grid.gradient.T
    return (0.5 * grid.face_volume * np.sum(grad * grad, axis=1)
            + grid.cell_volume * np.sum(convex + spec.f2(rho), axis=1))


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

def audit_weighted_energy(traj: Trajectory, spec: PotentialSpec, cond: ConductivitySpec,
                          rel_tol: float = 1e-6) -> AuditResult:
    """``W^k + 2 D^k <= W^0 + rel_tol * W^0`` at every step."""
    W, D = weighted_energy_series(traj, spec, cond)
    tol = rel_tol * W[0]
    excess = (W + 2 * D - W[0])[1:]
    ok = bool(np.all(excess <= tol))
    return AuditResult(
        "weighted_energy", ok, float(tol),
        series={"weighted_energy": W[1:], "cumulative_dissipation": D[1:], "excess": excess},
        worst_step=_worst(excess),
        details={"W0": float(W[0]), "max_excess": float(excess.max(initial=-math.inf))},
    )


def audit_phase_energy(traj: Trajectory, spec: PotentialSpec, C_G: float = 1.0) -> AuditResult:
    """``sup_k E^k <= E^0 + C_G (1 + sup_k |T_tau mu|^2)``, with the time-derivative sum."""
    E = phase_energy_series(traj, spec)
    delayed = _delayed_rows(traj)
    sup_delay = float(np.max(_l2_rows(traj.grid, delayed) ** 2, initial=0.0))
    bound = float(E[0] + C_G * (1.0 + sup_delay))
    dtr = _l2_rows(traj.grid, _dt(traj, "rho"))
    dt_sum = float(traj.h * np.sum(dtr**2))
    ok = bool(np.all(np.isfinite(E)) and np.max(E) <= bound and math.isfinite(dt_sum))
    return AuditResult(
        "phase_energy", ok, {"C_G": C_G, "bound": bound},
        series={"phase_energy": E[1:], "dtrho_L2": dtr},
        worst_step=_worst(E[1:]),
        details={"E0": float(E[0]), "E_bound": bound, "sup_E": float(np.max(E)),
                 "dtrho_sum": dt_sum},
    )


def audit_nonnegativity(traj: Trajectory, tol: float = POSITIVITY_TOL) -> AuditResult:
    """``min mu >= -tol`` over all levels and cells."""
    mins = traj.mu.min(axis=1)
    k = int(np.argmin(mins))
    cell = int(np.argmin(traj.mu[k]))
    ok = bool(mins[k] >= -tol)
    return AuditResult(
        "nonnegativity", ok, tol,
        series={"min_mu": mins[1:], "max_mu": traj.mu.max(axis=1)[1:]},
        worst_step=k, details={"min_mu": float(mins[k]), "cell": cell},
    )


def nonnegativity_refusal(exc: LostPositivity) -> AuditResult:
    """Report a solve the mu step refused because positivity could not be guaranteed."""
    return AuditResult("nonnegativity", False, POSITIVITY_TOL,
                       worst_step=exc.context.get("step"),
                       details={"refused": True, **exc.to_dict()})


def truncation_profile(traj: Trajectory, levels: Iterable[float]) -> np.ndarray:
    """``y(k) = sup_steps sum |(mu - k)^+|^2 * cellvol`` for each level ``k``."""
    levels = np.asarray(list(levels), dtype=float)
    out = np.empty(levels.size)
    for i, lev in enumerate(levels):
        pos = np.maximum(traj.mu - lev, 0.0)
        out[i] = traj.grid.cell_volume * float(np.max(np.sum(pos * pos, axis=1)))
    return out


def audit_linf_truncation(traj: Trajectory, levels: Optional[Iterable[float]] = None,
                          n_levels: int = 9) -> AuditResult:
    """Truncation levels above ``max mu0``: ``y`` nonincreasing and zero at the cap.

    The cap ``Delta_cap = max(mu) - max(mu0)`` (at least zero) is read from
    the run; the audit confirms that ``y`` vanishes at ``max(mu0) + Delta_cap``.
    """
    mu0_max = float(traj.mu[0].max())
    cap = max(0.0, float(traj.mu.max()) - mu0_max)
    if levels is None:
        span = cap if cap > 0 else 1.0
        levels = mu0_max + span * np.linspace(0.0, 1.0, n_levels)
    levels = np.sort(np.asarray(list(levels), dtype=float))
    if levels.size and levels[0] < mu0_max:
        raise ValueError("truncation levels must be at least max(mu0)")
    y = truncation_profile(traj, levels)
    y_top = float(truncation_profile(traj, [mu0_max + cap])[0])
    ok = bool(np.all(np.diff(y) <= 0) and y_top == 0.0)
    return AuditResult(
        "linf_truncation", ok, 0.0,
        series={"levels": levels, "y": y},
        worst_step=int(np.argmax(traj.mu.max(axis=1))),
        details={"mu0_max": mu0_max, "delta_cap": cap, "y_at_cap": y_top},
    )


def xi_residual_source(traj: Trajectory, spec: PotentialSpec) -> np.ndarray:
    """``h^k = -dt rho - pi(rho) + (T_tau mu) g'(rho)`` (+ manufactured source), k = 1..n."""
    rho = traj.rho[1:]
    out = -_dt(traj, "rho") - spec.pi(rho) + _delayed_rows(traj) * spec.gprime(rho)
    if traj.rho_source is not None:
        out = out + traj.rho_source
    return out


def audit_xi_l6(traj: Trajectory, spec: PotentialSpec, rel_tol: float = 1e-8) -> AuditResult:
    """``|xi^k|_6 <= |h^k|_6 + rel_tol (1 + |h^k|_6)`` at every step.

    Since ``xi - Lap rho = h`` up to the Newton residual and ``-Lap`` is
    accretive in every ``L^p``, the sixth-power norm of ``xi`` cannot exceed
    that of ``h``.
    """
    grid = traj.grid
    xi6 = _lp_rows(grid, traj.xi[1:], 6)
    h6 = _lp_rows(grid, xi_residual_source(traj, spec), 6)
    slack = xi6 - h6 - rel_tol * (1 + h6)
    ok = bool(np.all(slack <= 0))
    return AuditResult(
        "xi_l6", ok, {"rel_tol": rel_tol},
        series={"xi_L6": xi6, "h_L6": h6},
        worst_step=_worst(slack), details={"max_slack": float(slack.max(initial=-math.inf))},
    )


def gradK_series(traj: Trajectory, cond: ConductivitySpec):
    """Face-gradient norm of ``K(mu, rho)`` and the chain-rule identity residual."""
    grid = traj.grid
    G = grid.gradient
    m = np.maximum(traj.mu, 0.0)
    K, K1, _ = cond.K_family(m, traj.rho)
    gK = K @ G.T
    kap = cond.kappa(m, traj.rho)
    left, right = grid.face_cells
    kap_f = 0.5 * (kap[:, left] + kap[:, right])
    K1_f = 0.5 * (K1[:, left] + K1[:, right])
    resid = gK - (kap_f * (traj.mu @ G.T) + K1_f * (traj.rho @ G.T))
    return _face_l2_rows(grid, gK), _face_l2_rows(grid, resid)


def audit_gradK(traj: Trajectory, cond: ConductivitySpec, C_id: float = 1.0) -> AuditResult:
    """Chain rule ``grad K = kappa grad mu + K1 grad rho`` on faces, to first order.

    ``tol_id = C_id * dx * (1 + sup |grad K|)``; also reports ``sup |grad K|``
    and ``sum h |dt mu|^2`` for the refinement study.
    """
    grid = traj.grid
    gK, resid = gradK_series(traj, cond)
    dx = max(grid.spacing) if grid.size > 1 else 0.0
    sup_gK = float(gK.max())
    tol = C_id * dx * (1 + sup_gK)
    dtm = _l2_rows(grid, _dt(traj, "mu"))
    cum = traj.h * np.cumsum(dtm**2)
    ok = bool(np.all(resid <= tol))
    return AuditResult(
        "gradK", ok, {"C_id": C_id, "tol_id": tol},
        series={"gradK_L2": gK[1:], "identity_residual": resid[1:], "dtmu_L2_cum": cum},
        worst_step=_worst(resid[1:]),
        details={"sup_gradK": sup_gK, "dtmu_sum": float(cum[-1]) if cum.size else 0.0,
                 "max_identity_residual": float(resid.max())},
    )


def homogeneous_invariant(traj: Trajectory, spec: PotentialSpec) -> np.ndarray:
    """``I^k = mu^k sqrt(1 + 2 g(rho^k))`` for spatially constant runs."""
    return traj.mu[:, 0] * np.sqrt(1 + 2 * spec.g(traj.rho[:, 0]))


def audit_homogeneous_invariant(traj: Trajectory, spec: PotentialSpec,
                                C_drift: float = 10.0) -> AuditResult:
    """``max_k |I^k - I^0| / I^0 <= C_drift * h`` for spatially constant data."""
    if np.ptp(traj.mu[0]) != 0 or np.ptp(traj.rho[0]) != 0:
        raise InvalidScenario("the homogeneous invariant needs spatially constant data")
    if np.any(traj.rho_source != 0) if traj.rho_source is not None else False:
        raise InvalidScenario("the homogeneous invariant needs a source-free run")
    I = homogeneous_invariant(traj, spec)
    if I[0] == 0:
        raise InvalidScenario("the invariant vanishes initially; relative drift is undefined")
    drift = np.abs(I - I[0]) / abs(I[0])
    tol = C_drift * traj.h
    return AuditResult(
        "homogeneous_invariant", bool(drift.max() <= tol), {"C_drift": C_drift, "tol": tol},
        series={"invariant": I[1:], "drift": drift[1:]}, worst_step=int(np.argmax(drift)),
        details={"I0": float(I[0]), "max_drift": float(drift.max())},
    )


# ---------------------------------------------------------------------------
# monitors and reports
# ---------------------------------------------------------------------------

def dtrho_monitor(traj: Trajectory) -> dict:
    """``sup |dt rho|_2`` and ``sum h |grad dt rho|^2`` (bounded uniformly in tau)."""
    dtr = _dt(traj, "rho")
    grad = dtr @ traj.grid.gradient.T
    return {
        "dtrho_sup_L2": float(np.max(_l2_rows(traj.grid, dtr), initial=0.0)),
        "dtrho_H1_sum": float(traj.h * traj.grid.face_volume * np.sum(grad * grad)),
    }


def study_monitors(traj: Trajectory, cond: ConductivitySpec) -> dict:
    """Per-level quantities that must stay stable across tau halvings."""
    gK, _ = gradK_series(traj, cond)
    dtm = _l2_rows(traj.grid, _dt(traj, "mu"))
    out = {"delta_cap": max(0.0, float(traj.mu.max() - traj.mu[0].max())),
           "eps": float(traj.meta.get("eps", traj.config.eps_value))}
    out.update(dtrho_monitor(traj))
    out["gradK_sup_L2"] = float(gK.max())
    out["dtmu_sum"] = float(traj.h * np.sum(dtm**2))
    return out


STUDY_TOLERANCES = {"delta_cap": 0.10, "dtrho_sup_L2": 0.15, "dtrho_H1_sum": 0.15,
                    "gradK_sup_L2": 0.15, "dtmu_sum": 0.15}


def relative_spread(values) -> float:
    """Largest relative deviation of ``values`` from the finest (last) entry."""
    v = np.asarray(values, dtype=float)
    ref = v[-1]
    if ref == 0:
        return 0.0 if np.all(v == 0) else math.inf
    return float(np.max(np.abs(v - ref)) / abs(ref))


@dataclass
class DiagnosticsReport:
    """Per-step series plus one :class:`AuditResult` per audit that was run."""

    steps: np.ndarray
    times: np.ndarray
    series: dict
    audits: list
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.verdict for a in self.audits)

    def audit(self, name: str) -> AuditResult:
        for a in self.audits:
            if a.name == name:
                return a
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "steps": self.steps.tolist(),
            "times": self.times.tolist(),
            "series": {k: np.asarray(v).tolist() for k, v in self.series.items()},
            "audits": [a.to_dict() for a in self.audits],
            "summary": self.summary,
        }

    def to_json(self) -> str:
        return json.dumps(json_safe(self.to_dict()), indent=2, sort_keys=True, allow_nan=False)


def json_safe(obj):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_audits(traj: Trajectory, spec: PotentialSpec, cond: ConductivitySpec,
               names: Optional[Iterable[str]] = None, options: Optional[dict] = None
               ) -> DiagnosticsReport:
    """Run the selected audits; the homogeneous invariant only on constant data."""
    options = options or {}
    constant = bool(np.ptp(traj.mu[0]) == 0 and np.ptp(traj.rho[0]) == 0
                    and traj.rho_source is None)
    if names is None:
        names = [n for n in AUDITS if n != "homogeneous_invariant" or constant]
    names = list(names)
    unknown = [n for n in names if n not in AUDITS]
    if unknown:
        raise KeyError(f"unknown audits: {', '.join(unknown)}")
    opt = lambda n: dict(options.get(n, {}))  # noqa: E731
    runners = {
        "weighted_energy": lambda: audit_weighted_energy(traj, spec, cond, **opt("weighted_energy")),
        "phase_energy": lambda: audit_phase_energy(traj, spec, **opt("phase_energy")),
        "nonnegativity": lambda: audit_nonnegativity(traj, **opt("nonnegativity")),
        "linf_truncation": lambda: audit_linf_truncation(traj, **opt("linf_truncation")),
        "xi_l6": lambda: audit_xi_l6(traj, spec, **opt("xi_l6")),
        "gradK": lambda: audit_gradK(traj, cond, **opt("gradK")),
        "homogeneous_invariant": lambda: audit_homogeneous_invariant(
            traj, spec, **opt("homogeneous_invariant")),
    }
    results = [runners[n]() for n in names]

    W, D = weighted_energy_series(traj, spec, cond)
    gK, _ = gradK_series(traj, cond)
    dtr = _l2_rows(traj.grid, _dt(traj, "rho"))
    dtm = _l2_rows(traj.grid, _dt(traj, "mu"))
    series = {
        "weighted_energy": W[1:],
        "cumulative_dissipation": D[1:],
        "phase_energy": phase_energy_series(traj, spec)[1:],
        "min_mu": traj.mu.min(axis=1)[1:],
        "max_mu": traj.mu.max(axis=1)[1:],
        "dtrho_L2": dtr,
        "xi_L6": _lp_rows(traj.grid, traj.xi[1:], 6),
        "h_L6": _lp_rows(traj.grid, xi_residual_source(traj, spec), 6),
        "gradK_L2": gK[1:],
        "dtmu_L2_cum": traj.h * np.cumsum(dtm**2),
    }
    summary = {"W0": float(W[0]), **study_monitors(traj, cond)}
    steps = np.arange(1, traj.n_levels)
    return DiagnosticsReport(steps, traj.times[1:], series, results, summary)
