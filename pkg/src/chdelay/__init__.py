"""Time-delay finite-difference solver for a strongly coupled viscous
Cahn-Hilliard system with state-dependent conductivity, plus runtime audits of
its uniform a priori bounds."""

__version__ = "0.1.0"

from .errors import ChDelayError
from .grid import Field, Grid, cg_solve, div_kappa_grad, laplacian_neumann, norms
from .nonlin import (
    ConductivitySpec,
    PotentialSpec,
    beta_resolvent,
    eval_coupling,
    eval_f1,
    eval_K_family,
    make_conductivity,
    make_graph,
    make_potential,
    yosida_eval,
)
from .scheme import DelayConfig, InitialData, Trajectory, mu_step, refine_study, rho_step, solve, translate

__all__ = [
    "ChDelayError", "Field", "Grid", "cg_solve", "div_kappa_grad", "laplacian_neumann", "norms",
    "ConductivitySpec", "PotentialSpec", "beta_resolvent", "eval_coupling", "eval_f1",
    "eval_K_family", "make_conductivity", "make_graph", "make_potential", "yosida_eval",
    "DelayConfig", "InitialData", "Trajectory", "mu_step", "refine_study", "rho_step", "solve",
    "translate",
]
