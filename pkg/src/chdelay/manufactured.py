"""Manufactured solutions: exact fields plus the sources that make them exact.

The exact pair depends on time and the first coordinate only and has zero
normal flux on the box, so it is compatible with the Neumann closure:

    mu*(x, t)  = 2 + cos(pi x / L) exp(-t)
    rho*(x, t) = 1/2 + 1/4 cos(pi x / L) exp(-t)

Sources are obtained by symbolic substitution into the undelayed system

    S_rho = d_t rho - rho_xx + beta(rho) + pi(rho) - mu g'(rho)
    S_mu  = (1 + 2 g(rho)) d_t mu + mu g'(rho) d_t rho - (kappa(mu, rho) mu_x)_x

so the delayed discrete scheme converges to the exact pair at the rate of
the delay and the step.  Nonlinearities are rebuilt symbolically from the
builtin names recorded on the specs; custom callables are not supported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy

from .grid import Field, Grid
from .nonlin import ConductivitySpec, PotentialSpec

_x, _t, _r, _m = sympy.symbols("x t r m", real=True)


def _beta_expr(names: dict):
    kind = names.get("graph")
    c = names.get("graph_params", {}).get("c", 1.0)
    if kind == "log":
        return c * sympy.log(_r / (1 - _r))
    if kind == "poly":
        return c * _r**3
    if kind in ("zero", "obstacle"):
        # the obstacle graph vanishes on the open interval the exact rho stays in
        return sympy.Integer(0)
    raise ValueError(f"no symbolic form for graph {kind!r}")


def _pi_expr(names: dict):
    a = names.get("a", 3.0)
    kind = names.get("f2")
    if kind == "well":
        return a * (1 - 2 * _r)
    if kind == "quad":
        return a * _r
    if kind == "none":
        return sympy.Integer(0)
    raise ValueError(f"no symbolic form for smooth part {kind!r}")


def _g_expr(names: dict):
    kind = names.get("coupling")
    if kind == "smooth_id":
        d = names.get("delta", 0.1)
        return (_r + sympy.sqrt(_r**2 + d**2)) / 2
    if kind == "const":
        return sympy.Float(names.get("g0", 0.0))
    raise ValueError(f"no symbolic form for coupling {kind!r}")


def _kappa_expr(cond: ConductivitySpec):
    if cond.name == "const":
        return sympy.Float(cond.params.get("value", 1.0))
    if cond.name == "demo_exp_cos":
        amp = cond.params.get("amp", 0.5)
        return 1 + amp * sympy.exp(-_m) * sympy.cos(_r) ** 2
    raise ValueError(f"no symbolic form for conductivity {cond.name!r}")


def _lambdify(expr) -> Callable:
    fn = sympy.lambdify((_x, _t), expr, modules="numpy")

    def wrapped(x, t):
        return np.broadcast_to(np.asarray(fn(x, t), dtype=float), np.shape(x)).copy()

    return wrapped


@dataclass
class ManufacturedSources:
    """Exact fields and sources on ``grid``, usable as ``solve(..., sources=...)``."""

    grid: Grid
    spec: PotentialSpec
    cond: ConductivitySpec
    exprs: dict = field(init=False, repr=False)

    def __post_init__(self):
        L = self.grid.lengths[0]
        wave = sympy.cos(sympy.pi * _x / L) * sympy.exp(-_t)
        mu = 2 + wave
        rho = sympy.Rational(1, 2) + wave / 4
        names = self.spec.names
        sub = {_r: rho, _m: mu}
        beta = _beta_expr(names).subs(_r, rho)
        pi = _pi_expr(names).subs(_r, rho)
        g = _g_expr(names)
        g_rho = g.subs(_r, rho)
        gp_rho = sympy.diff(g, _r).subs(_r, rho)
        kappa = _kappa_expr(self.cond).subs(sub)
        s_rho = sympy.diff(rho, _t) - sympy.diff(rho, _x, 2) + beta + pi - mu * gp_rho
        s_mu = ((1 + 2 * g_rho) * sympy.diff(mu, _t) + mu * gp_rho * sympy.diff(rho, _t)
                - sympy.diff(kappa * sympy.diff(mu, _x), _x))
        self.exprs = {"mu": mu, "rho": rho, "s_rho": s_rho, "s_mu": s_mu}
        self._fns = {k: _lambdify(v) for k, v in self.exprs.items()}
        self._x = self.grid.centers()[0].reshape(-1)

    def _eval(self, key: str, t: float) -> np.ndarray:
        return self._fns[key](self._x, float(t))

    def rho(self, t: float) -> np.ndarray:
        """Phase-equation source at time ``t`` (flat cell array)."""
        return self._eval("s_rho", t)

    def mu(self, t: float) -> np.ndarray:
        """Chemical-potential source at time ``t``."""
        return self._eval("s_mu", t)

    def mu_exact(self, t: float) -> Field:
        return Field(self.grid, self._eval("mu", t))

    def rho_exact(self, t: float) -> Field:
        return Field(self.grid, self._eval("rho", t))

    def initial_data(self):
        from .scheme import InitialData

        return InitialData.from_fields(self.mu_exact(0.0), self.rho_exact(0.0), self.spec)
