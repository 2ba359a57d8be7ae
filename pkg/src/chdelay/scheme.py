"""Time-delay approximation of the strongly coupled viscous Cahn-Hilliard system.

Within each inner step of length ``h`` the phase equation is advanced first,
driven by the chemical potential delayed by ``tau = T/N``; the chemical
potential is then advanced with the new phase field:

    (rho+ - rho)/h - Lap rho+ + beta_eps(rho+) + pi(rho+) = mu(t+ - tau) g'(rho+)
    w (mu+ - mu)/h + mu+ (g(rho+) - g(rho))/h - div(kappa(mu+, rho+) grad mu+) = 0

where ``w = 1 + 2 g(rho)`` (``mu_weight="lagged"``, the default) or
``w = 1 + 2 g(rho+)`` (``mu_weight="implicit"``).  Only the lagged weight
makes the discrete weighted energy ``sum (1 + 2 g(rho)) mu^2`` telescope.

The rho step is a damped semismooth Newton iteration; the mu step freezes the
conductivity (Picard) so that each pass is one symmetric M-matrix solve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import grid as gridmod
from .errors import (
    CgBreakdown,
    CgNoConvergence,
    HistoryGap,
    IndefiniteJacobian,
    InvalidInitialData,
    LostPositivity,
    NewtonNoConvergence,
    PicardNoConvergence,
    SolverError,
)
from .grid import Field, Grid
from .nonlin import ConductivitySpec, PotentialSpec

log = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-12


@dataclass(frozen=True)
class DelayConfig:
    """Discretisation parameters.

    ``tau = T/N`` and ``h = tau/M``.  ``eps=None`` ties the Yosida parameter
    to the delay (``eps = tau``).  ``beta_mode="exact"`` uses the graph
    itself instead of its Yosida approximation; it requires a graph that is
    a differentiable function on its open domain.
    """

    T: float = 0.25
    N: int = 16
    M: int = 4
    eps: Optional[float] = None
    beta_mode: str = "yosida"
    mu_weight: str = "lagged"
    newton_tol: float = 1e-10
    newton_max: int = 100
    newton_damping: float = 1.0
    picard_tol: float = 1e-10
    picard_max: int = 100
    picard_guess: str = "previous"
    cg_tol: float = 1e-13
    max_halvings: int = 3

    def __post_init__(self):
        problems = []
        if not self.T > 0:
            problems.append("T must be positive")
        if int(self.N) != self.N or self.N < 1:
            problems.append("N must be a positive integer")
        if int(self.M) != self.M or self.M < 1:
            problems.append("M must be a positive integer")
        if self.eps is not None and not self.eps > 0:
            problems.append("eps must be positive")
        for name in ("newton_tol", "picard_tol", "cg_tol"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if not 0 < self.newton_damping <= 1:
            problems.append("newton_damping must lie in (0, 1]")
        if self.beta_mode not in ("yosida", "exact"):
            problems.append("beta_mode must be 'yosida' or 'exact'")
        if self.mu_weight not in ("lagged", "implicit"):
            problems.append("mu_weight must be 'lagged' or 'implicit'")
        if self.picard_guess not in ("previous", "zero"):
            problems.append("picard_guess must be 'previous' or 'zero'")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def h(self) -> float:
        return self.tau / self.M

    @property
    def n_steps(self) -> int:
        return self.N * self.M

    @property
    def eps_value(self) -> float:
        return self.tau if self.eps is None else float(self.eps)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class InitialData:
    mu0: Field
    rho0: Field
    xi0: Field

    @property
    def grid(self) -> Grid:
        return self.mu0.grid

    def validate(self, spec: PotentialSpec) -> None:
        g = spec.graph
        if self.rho0.grid != self.mu0.grid or self.xi0.grid != self.mu0.grid:
            raise InvalidInitialData("initial fields live on different grids")
        if self.mu0.flat.min() < 0:
            raise InvalidInitialData("mu0 must be nonnegative", min_mu0=float(self.mu0.flat.min()))
        if not np.all(g.in_domain(self.rho0.flat)):
            raise InvalidInitialData("rho0 leaves the domain of beta")
        if g.single_valued_interior:
            inner = g.in_domain(self.rho0.flat, closed=False)
            ref = g.beta(self.rho0.flat[inner])
            if np.any(np.abs(ref - self.xi0.flat[inner]) > 1e-9 * (1 + np.abs(ref))):
                raise InvalidInitialData("xi0 is not a selection of beta(rho0)")
            if not np.all(inner) and g.kind == "log":
                raise InvalidInitialData("rho0 touches an endpoint where beta is unbounded")

    @classmethod
    def from_fields(cls, mu0: Field, rho0: Field, spec: PotentialSpec) -> "InitialData":
        """Pick ``xi0`` as the minimal-norm section of ``beta(rho0)``."""
        xi = np.nan_to_num(spec.graph.beta(rho0.flat), nan=0.0, posinf=np.inf, neginf=-np.inf)
        data = cls(mu0, rho0, Field(rho0.grid, xi))
        data.validate(spec)
        return data


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time levels ``t_k = k h`` of (mu, rho, xi) plus solver certificates.

    Field arrays have shape ``(n_levels, n_cells)``.  ``rho_source`` holds the
    manufactured phase-equation source used at each step (zeros if none).
    """

    grid: Grid
    config: DelayConfig
    times: np.ndarray
    mu: np.ndarray
    rho: np.ndarray
    xi: np.ndarray
    newton_residual: np.ndarray
    newton_iterations: np.ndarray
    picard_change: np.ndarray
    picard_iterations: np.ndarray
    substeps: np.ndarray
    rho_source: Optional[np.ndarray] = None
    mu_source: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return self.config.h

    @property
    def tau(self) -> float:
        return self.config.tau

    @property
    def n_levels(self) -> int:
        return self.mu.shape[0]

    @property
    def mu0(self) -> np.ndarray:
        return self.mu[0]

    def field(self, name: str, k: int) -> Field:
        return Field(self.grid, getattr(self, name)[k])

    def delayed_mu(self, k: int) -> np.ndarray:
        """``T_tau mu`` at time level ``k``."""
        j = delayed_level(self.times[k], self.tau, self.h)
        return self.mu0 if j is None else self.mu[j]


def delayed_level(t: float, tau: float, h: float) -> Optional[int]:
    """Index of the stored level used for ``mu(t - tau)``; ``None`` means mu0.

    Uses the nearest stored level at or below ``t - tau``; at ``t <= tau``
    (including ``t == tau``) the initial datum is used.
    """
    s = (t - tau) / h
    if s <= 1e-9:
        return None
    return int(math.floor(s + 1e-9))


def translate(traj, tau: float, t: float, mu0) -> Field:
    """The delayed chemical potential ``(T_tau mu)(t)``.

    ``traj`` may be a complete :class:`Trajectory` or a partial one (any
    object with ``mu`` rows, ``h`` and optionally ``grid``).
    """
    mu0_flat = gridmod._flat(mu0)
    grid = mu0.grid if isinstance(mu0, Field) else getattr(traj, "grid", None)
    j = delayed_level(t, tau, traj.h)
    if j is None:
        out = mu0_flat
    else:
        if j >= len(traj.mu):
            raise HistoryGap(f"mu at level {j} (t - tau = {t - tau:g}) is not stored yet",
                             level=j, stored=len(traj.mu))
        out = np.asarray(traj.mu[j])
    return Field(grid, out) if grid is not None else out


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

@dataclass
class StepInfo:
    residual: float = 0.0
    iterations: int = 0


def _wnorm(grid: Grid, v: np.ndarray) -> float:
    return math.sqrt(grid.cell_volume * float(v @ v))


def _beta_parts(spec: PotentialSpec, eps: float, mode: str):
    graph = spec.graph
    if mode == "exact":
        return graph.beta, graph.dbeta
    return (lambda x: graph.yosida(x, eps)), (lambda x: graph.yosida_derivative(x, eps))


def _solve_rho(grid: Grid, rho_prev, mu_d, h, spec: PotentialSpec, eps, *, source=None,
               tol=1e-10, max_iter=100, damping=1.0, mode="yosida", cg_tol=1e-13):
    B, dB = _beta_parts(spec, eps, mode)
    L = grid.laplacian
    rhs_fixed = rho_prev / h + (0.0 if source is None else source)
    graph = spec.graph

    def residual(r):
        with np.errstate(all="ignore"):
            return r / h - L @ r + B(r) + spec.pi(r) - mu_d * spec.gprime(r) - rhs_fixed

    if mode == "exact" and not np.all(graph.in_domain(rho_prev, closed=False)):
        raise NewtonNoConvergence("exact-beta mode needs rho strictly inside the domain")

    rho = rho_prev.copy()
    R = residual(rho)
    rnorm = _wnorm(grid, R)
    neg_lap = -L
    for it in range(max_iter + 1):
        if rnorm <= tol:
            return rho, B(rho), StepInfo(rnorm, it)
        if it == max_iter or not np.isfinite(rnorm):
            break
        with np.errstate(all="ignore"):
            d = 1.0 / h + dB(rho) + spec.dpi(rho) - mu_d * spec.gsecond(rho)
        if not np.all(np.isfinite(d)):
            break
        if d.min() <= 0:
            raise IndefiniteJacobian("Newton reaction diagonal is not positive",
                                     min_diagonal=float(d.min()))
        J = neg_lap + sp.diags(d)
        try:
            delta = gridmod.cg_solve(J, -R, tol=cg_tol, preconditioner=J.diagonal())
        except CgBreakdown as exc:
            raise IndefiniteJacobian("Newton system lost positive definiteness") from exc
        except CgNoConvergence as exc:
            raise NewtonNoConvergence("linear solve inside Newton did not converge") from exc
        theta = damping
        if mode == "exact":
            # fraction-to-boundary rule keeps iterates in the open domain
            lo, hi = graph.domain_lo, graph.domain_hi
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.where(delta < 0, (lo - rho) / delta, np.where(delta > 0, (hi - rho) / delta, np.inf))
            theta = min(theta, 0.99 * float(np.min(lim)))
        while True:
            trial = rho + theta * delta
            Rt = residual(trial)
            tn = _wnorm(grid, Rt)
            if np.isfinite(tn) and tn <= (1 - 1e-4 * theta) * rnorm:
                break
            # accept tiny full steps that only fail by roundoff
            if np.isfinite(tn) and theta == damping and tn <= tol:
                break
            theta *= 0.5
            if theta < 1e-10:
                raise NewtonNoConvergence("line search failed", residual=rnorm, iteration=it)
        rho, R, rnorm = trial, Rt, tn
    raise NewtonNoConvergence(f"Newton did not reach {tol:g} in {max_iter} iterations",
                              residual=rnorm)


def _solve_mu(grid: Grid, mu_prev, rho_prev, rho_next, h, spec: PotentialSpec,
              cond: ConductivitySpec, *, source=None, weight="lagged", tol=1e-10,
              max_iter=100, guess="previous", cg_tol=1e-13):
    g_old = spec.g(rho_prev)
    g_new = spec.g(rho_next)
    w = 1.0 + 2.0 * (g_old if weight == "lagged" else g_new)
    react = w + g_new - g_old
    if react.min() <= 0:
        raise LostPositivity("M-matrix condition 1 + 3g(rho+) - g(rho) > 0 violated; reduce h",
                             min_diagonal=float(react.min()))
    rhs = w * mu_prev
    if source is not None:
        rhs = rhs + h * source
    G = grid.gradient
    react_diag = sp.diags(react)
    mu = mu_prev.copy() if guess == "previous" else np.zeros_like(mu_prev)
    change = math.inf
    for it in range(1, max_iter + 1):
        kappa = cond.kappa(np.maximum(mu, 0.0), rho_next)
        A = react_diag + h * (G.T @ sp.diags(grid.face_mean(kappa)) @ G)
        A = A.tocsr()
        new = gridmod.cg_solve(A, rhs, tol=cg_tol, x0=mu, preconditioner=A.diagonal())
        change = _wnorm(grid, new - mu)
        mu = new
        if change <= tol:
            break
    else:
        raise PicardNoConvergence(f"Picard iteration did not reach {tol:g}", change=change)
    if (source is None or np.all(source >= 0)) and mu_prev.min() >= 0 and mu.min() < -POSITIVITY_TOL:
        raise LostPositivity("mu became negative", min_mu=float(mu.min()))
    return mu, StepInfo(change, it)


def rho_step(rho_prev: Field, mu_delayed: Field, h: float, spec: PotentialSpec, eps: float,
             *, source=None, tol: float = 1e-10, max_iter: int = 100, damping: float = 1.0,
             mode: str = "yosida"):
    """One implicit Euler step of the delayed phase equation.

    Returns ``(rho_next, xi_next)`` with ``xi_next = beta_eps(rho_next)``.
    """
    if not h > 0:
        raise ValueError("time step must be positive")
    grid = rho_prev.grid
    src = None if source is None else gridmod._flat(source)
    rho, xi, _ = _solve_rho(grid, rho_prev.flat.copy(), mu_delayed.flat, h, spec, eps,
                            source=src, tol=tol, max_iter=max_iter, damping=damping, mode=mode)
    return Field(grid, rho), Field(grid, xi)


def mu_step(mu_prev: Field, rho_prev: Field, rho_next: Field, h: float, spec: PotentialSpec,
            cond: ConductivitySpec, *, source=None, weight: str = "lagged",
            tol: float = 1e-10, max_iter: int = 100, guess: str = "previous") -> Field:
    """One implicit Euler step of the chemical-potential equation."""
    if mu_prev.flat.min() < 0:
        raise ValueError("mu_prev must be nonnegative")
    grid = mu_prev.grid
    src = None if source is None else gridmod._flat(source)
    mu, _ = _solve_mu(grid, mu_prev.flat, rho_prev.flat, rho_next.flat, h, spec, cond,
                      source=src, weight=weight, tol=tol, max_iter=max_iter, guess=guess)
    return Field(grid, mu)


# ---------------------------------------------------------------------------
# full solve
# ---------------------------------------------------------------------------

@dataclass
class _Record:
    residual: float = 0.0
    newton_its: int = 0
    change: float = 0.0
    picard_its: int = 0
    substeps: int = 0


def _advance(grid, cfg: DelayConfig, mu, rho, mu_d, t0, h, spec, cond, sources, eps, depth, rec):
    """Advance (rho, mu) from ``t0`` by ``h``; halve ``h`` on indefinite Jacobians."""
    t1 = t0 + h
    s_rho = s_mu = None
    if sources is not None:
        s_rho, s_mu = sources.rho(t1), sources.mu(t1)
    try:
        rho_new, xi_new, rinfo = _solve_rho(
            grid, rho, mu_d, h, spec, eps, source=s_rho, tol=cfg.newton_tol,
            max_iter=cfg.newton_max, damping=cfg.newton_damping, mode=cfg.beta_mode,
            cg_tol=cfg.cg_tol)
    except IndefiniteJacobian:
        if depth >= cfg.max_halvings:
            raise
        log.info("indefinite Newton system at t=%g; halving h=%g", t0, h)
        half = 0.5 * h
        mu_m, rho_m, _ = _advance(grid, cfg, mu, rho, mu_d, t0, half, spec, cond, sources,
                                  eps, depth + 1, rec)
        return _advance(grid, cfg, mu_m, rho_m, mu_d, t0 + half, half, spec, cond, sources,
                        eps, depth + 1, rec)
    mu_new, minfo = _solve_mu(
        grid, mu, rho, rho_new, h, spec, cond, source=s_mu, weight=cfg.mu_weight,
        tol=cfg.picard_tol, max_iter=cfg.picard_max, guess=cfg.picard_guess, cg_tol=cfg.cg_tol)
    rec.residual = max(rec.residual, rinfo.residual)
    rec.newton_its += rinfo.iterations
    rec.change = max(rec.change, minfo.residual)
    rec.picard_its += minfo.iterations
    rec.substeps += 1
    return mu_new, rho_new, xi_new


def solve(config: DelayConfig, data: InitialData, spec: PotentialSpec, cond: ConductivitySpec,
          sources=None, on_step: Optional[Callable] = None) -> Trajectory:
    """March from ``t = 0`` to ``T``: delayed mu, then rho, then mu, every step."""
    data.validate(spec)
    if config.beta_mode == "exact" and not spec.graph.single_valued_interior:
        raise ValueError(f"exact beta mode is unavailable for the {spec.graph.kind} graph")
    grid = data.grid
    n = config.n_steps
    h = config.h
    eps = config.eps_value
    size = grid.size
    mu = np.empty((n + 1, size))
    rho = np.empty((n + 1, size))
    xi = np.empty((n + 1, size))
    mu[0], rho[0], xi[0] = data.mu0.flat, data.rho0.flat, data.xi0.flat
    res = np.zeros(n)
    n_its = np.zeros(n, dtype=int)
    change = np.zeros(n)
    p_its = np.zeros(n, dtype=int)
    subs = np.ones(n, dtype=int)
    rho_src = np.zeros((n, size)) if sources is not None else None
    mu_src = np.zeros((n, size)) if sources is not None else None
    times = np.arange(n + 1) * h

    for k in range(n):
        t1 = times[k + 1]
        j = delayed_level(t1, config.tau, h)
        mu_d = mu[0] if j is None else mu[j]
        rec = _Record()
        try:
            mu[k + 1], rho[k + 1], xi[k + 1] = _advance(
                grid, config, mu[k], rho[k], mu_d, times[k], h, spec, cond, sources, eps, 0, rec)
        except SolverError as exc:
            exc.context.setdefault("step", k + 1)
            exc.context.setdefault("time", float(t1))
            raise
        res[k], n_its[k], change[k], p_its[k], subs[k] = (
            rec.residual, rec.newton_its, rec.change, rec.picard_its, rec.substeps)
        if sources is not None:
            rho_src[k], mu_src[k] = sources.rho(t1), sources.mu(t1)
        if on_step is not None:
            on_step(k + 1, t1, mu[k + 1], rho[k + 1], xi[k + 1], rec)

    for arr in (mu, rho, xi):
        arr.setflags(write=False)
    return Trajectory(
        grid=grid, config=config, times=times, mu=mu, rho=rho, xi=xi,
        newton_residual=res, newton_iterations=n_its, picard_change=change,
        picard_iterations=p_its, substeps=subs, rho_source=rho_src, mu_source=mu_src,
        meta={"eps": eps, "names": dict(spec.names), "conductivity": cond.name},
    )


# ---------------------------------------------------------------------------
# tau refinement
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    N: int
    tau: float
    h: float
    mu_diff_L2Q: float = math.nan
    rho_diff_LinfQ: float = math.nan
    monitors: dict = field(default_factory=dict)


@dataclass
class ConvergenceTable:
    rows: list
    trajectories: list = field(default_factory=list, repr=False)

    def column(self, name: str) -> np.ndarray:
        if hasattr(self.rows[0], name):
            return np.array([getattr(r, name) for r in self.rows], dtype=float)
        return np.array([r.monitors.get(name, math.nan) for r in self.rows], dtype=float)

    def mu_diffs_decreasing(self) -> bool:
        d = self.column("mu_diff_L2Q")[1:]
        return bool(np.all(np.diff(d) < 0))


def coarse_fine_differences(coarse: Trajectory, fine: Trajectory) -> tuple[float, float]:
    """Discrete ``L2(Q)`` distance of mu and ``Linf(Q)`` distance of rho.

    The fine run must have exactly twice as many steps; comparison uses the
    coarse time levels.
    """
    if fine.n_levels - 1 != 2 * (coarse.n_levels - 1):
        raise ValueError("fine trajectory must have twice the coarse step count")
    dmu = fine.mu[::2] - coarse.mu
    drho = fine.rho[::2] - coarse.rho
    vol = coarse.grid.cell_volume
    l2q = math.sqrt(coarse.h * vol * float(np.sum(dmu[1:] ** 2)))
    return l2q, float(np.max(np.abs(drho)))


def refine_study(base_config: DelayConfig, data: InitialData, spec: PotentialSpec,
                 cond: ConductivitySpec, levels: int,
                 monitor: Optional[Callable[[Trajectory], dict]] = None,
                 keep_trajectories: bool = False) -> ConvergenceTable:
    """Run ``N, 2N, 4N, ...`` with ``M`` fixed and compare successive levels.

    When ``base_config.eps`` is unset, the Yosida parameter is frozen at the
    finest level's delay for every level, so the study isolates the effect of
    the delay and step size from the regularization.  Letting ``eps`` follow
    ``tau`` mixes two first-order effects and the coarse levels then carry a
    visibly different regularized problem.
    """
    if levels < 2:
        raise ValueError("a refinement study needs at least two levels")
    eps = base_config.eps
    if eps is None:
        eps = base_config.T / (base_config.N * 2 ** (levels - 1))
    rows, trajs = [], []
    prev = None
    for lvl in range(levels):
        cfg = replace(base_config, N=base_config.N * 2**lvl, eps=eps)
        traj = solve(cfg, data, spec, cond)
        row = ConvergenceRow(N=cfg.N, tau=cfg.tau, h=cfg.h)
        if prev is not None:
            row.mu_diff_L2Q, row.rho_diff_LinfQ = coarse_fine_differences(prev, traj)
        if monitor is not None:
            row.monitors = dict(monitor(traj))
        rows.append(row)
        if keep_trajectories:
            trajs.append(traj)
        prev = traj
    return ConvergenceTable(rows, trajs)
