"""Run configuration: TOML text with typed sections.

Every key has a default, so an empty document is a valid run.  Unknown keys
and out-of-range values are collected across the whole document and reported
together in one :class:`ValidationError` with their key paths.

Sections and defaults::

    [grid]      dim = 1, cells = [64] (or [64, 64] in 2D), lengths = [1.0, ...]
    [physics]   graph = "log", c = 1.0, f2 = "well", a = 3.0,
                coupling = "smooth_id", delta = 0.1, g0 = 0.0,
                conductivity = "demo_exp_cos", kappa_amp = 0.5, kappa_value = 1.0,
                kappa_min, kappa_max (optional declared bounds)
    [delay]     T = 0.25, N = 16, M = 4, eps (default tau), beta_mode = "yosida",
                mu_weight = "lagged", newton_tol, newton_max, newton_damping,
                picard_tol, picard_max, picard_guess, max_halvings
    [initial]   manufactured = false,
                mu = {profile = "const", value = 0.3},
                rho = {profile = "cos", mean = 0.25, amp = 0.05}
    [audits]    names (default: every applicable audit), energy_rel_tol = 1e-6,
                C_G = 1.0, xi_rel_tol = 1e-8, C_id = 1.0, C_drift = 10.0
    [output]    directory = "chdelay-out", stride = 8
    [study]     fine_N = 1000, fine_cells = 256 (manufactured order study only)

Initial profiles: ``const`` (value), ``cos`` (mean, amp, modes: mean + amp *
prod cos(modes pi x_i / L_i)), ``random`` (mean, amp, seed: uniform noise),
``file`` (path of a Field CSV, relative to the config file).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import tomli

from .errors import ParseError, ValidationError
from .estimates import AUDITS
from .grid import Field, Grid
from .nonlin import (
    CONDUCTIVITIES,
    COUPLINGS,
    GRAPHS,
    SMOOTH_PARTS,
    ConductivitySpec,
    PotentialSpec,
    make_conductivity,
    make_graph,
    make_potential,
)
from .scheme import DelayConfig, InitialData

_SCHEMA = {
    "grid": {"dim", "cells", "lengths"},
    "physics": {"graph", "c", "f2", "a", "coupling", "delta", "g0", "conductivity",
                "kappa_amp", "kappa_value", "kappa_min", "kappa_max"},
    "delay": {"T", "N", "M", "eps", "beta_mode", "mu_weight", "newton_tol", "newton_max",
              "newton_damping", "picard_tol", "picard_max", "picard_guess", "max_halvings"},
    "initial": {"manufactured", "mu", "rho"},
    "audits": {"names", "energy_rel_tol", "C_G", "xi_rel_tol", "C_id", "C_drift"},
    "output": {"directory", "stride"},
    "study": {"fine_N", "fine_cells"},
}
_PROFILE_KEYS = {
    "const": {"value"},
    "cos": {"mean", "amp", "modes"},
    "random": {"mean", "amp", "seed"},
    "file": {"path"},
}

DEFAULT_MU = {"profile": "const", "value": 0.3}
DEFAULT_RHO = {"profile": "cos", "mean": 0.25, "amp": 0.05}


@dataclass
class RunConfig:
    grid: Grid
    physics: dict
    delay: DelayConfig
    initial: dict
    audits: dict
    output: dict
    study: dict
    text: str = ""
    base_dir: str = "."

    def potential(self) -> PotentialSpec:
        p = self.physics
        graph = make_graph(p["graph"], c=p["c"])
        return make_potential(graph, f2=p["f2"], a=p["a"], coupling=p["coupling"],
                              delta=p["delta"], g0=p["g0"])

    def conductivity(self) -> ConductivitySpec:
        p = self.physics
        if p["conductivity"] == "const":
            return make_conductivity("const", value=p["kappa_value"])
        return make_conductivity(p["conductivity"], amp=p["kappa_amp"])

    @property
    def manufactured(self) -> bool:
        return bool(self.initial["manufactured"])

    def audit_names(self) -> Optional[list]:
        return self.audits.get("names")

    def audit_options(self) -> dict:
        a = self.audits
        return {
            "weighted_energy": {"rel_tol": a["energy_rel_tol"]},
            "phase_energy": {"C_G": a["C_G"]},
            "xi_l6": {"rel_tol": a["xi_rel_tol"]},
            "gradK": {"C_id": a["C_id"]},
            "homogeneous_invariant": {"C_drift": a["C_drift"]},
        }

    def initial_data(self, spec: PotentialSpec, grid: Optional[Grid] = None) -> InitialData:
        grid = grid or self.grid
        mu = build_profile(self.initial["mu"], grid, self.base_dir, "initial.mu")
        rho = build_profile(self.initial["rho"], grid, self.base_dir, "initial.rho")
        return InitialData.from_fields(mu, rho, spec)


def build_profile(prof: dict, grid: Grid, base_dir: str = ".", path: str = "profile") -> Field:
    kind = prof["profile"]
    if kind == "const":
        return Field.constant(grid, prof.get("value", 0.0))
    if kind == "cos":
        modes = prof.get("modes", 1)
        wave = np.ones(grid.shape)
        for x, L in zip(grid.centers(), grid.lengths):
            wave = wave * np.cos(modes * math.pi * x / L)
        return Field(grid, prof.get("mean", 0.0) + prof.get("amp", 0.0) * wave)
    if kind == "random":
        rng = np.random.default_rng(prof.get("seed", 0))
        noise = rng.uniform(-1.0, 1.0, grid.shape)
        return Field(grid, prof.get("mean", 0.0) + prof.get("amp", 0.0) * noise)
    if kind == "file":
        from .io import read_field_csv

        fpath = os.path.join(base_dir, prof["path"])
        fld = read_field_csv(fpath)
        if fld.grid != grid:
            raise ValidationError([(f"{path}.path", f"grid of {prof['path']} does not match [grid]")])
        return fld
    raise ValidationError([(f"{path}.profile", f"unknown profile {kind!r}")])


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

class _Checker:
    def __init__(self):
        self.problems: list[tuple[str, str]] = []

    def add(self, path, msg):
        self.problems.append((path, msg))

    def number(self, table, key, path, default, *, integer=False, positive=False,
               nonneg=False, optional=False):
        if key not in table:
            return default
        v = table[key]
        full = f"{path}.{key}"
        if optional and v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.add(full, "must be a number")
            return default
        if integer and (not isinstance(v, int)):
            self.add(full, "must be an integer")
            return default
        if not math.isfinite(v):
            self.add(full, "must be finite")
            return default
        if positive and not v > 0:
            self.add(full, "must be positive" if not integer else "must be >= 1")
            return default
        if nonneg and v < 0:
            self.add(full, "must be nonnegative")
            return default
        return v

    def choice(self, table, key, path, default, options):
        v = table.get(key, default)
        if v not in options:
            self.add(f"{path}.{key}", f"must be one of {', '.join(map(str, options))}")
            return default
        return v


def _table(doc, name, chk):
    t = doc.get(name, {})
    if not isinstance(t, dict):
        chk.add(name, "must be a table")
        return {}
    for key in t:
        if key not in _SCHEMA[name]:
            chk.add(f"{name}.{key}", "unknown key")
    return t


def _profile(raw, path, default, chk) -> dict:
    if raw is None:
        return dict(default)
    if not isinstance(raw, dict):
        chk.add(path, "must be a table with a 'profile' key")
        return dict(default)
    kind = raw.get("profile")
    if kind not in _PROFILE_KEYS:
        chk.add(f"{path}.profile", f"must be one of {', '.join(_PROFILE_KEYS)}")
        return dict(default)
    out = {"profile": kind}
    for key in raw:
        if key != "profile" and key not in _PROFILE_KEYS[kind]:
            chk.add(f"{path}.{key}", "unknown key")
    for key in _PROFILE_KEYS[kind]:
        if key not in raw:
            continue
        if key == "path":
            if not isinstance(raw[key], str):
                chk.add(f"{path}.path", "must be a string")
            else:
                out[key] = raw[key]
        elif key in ("modes", "seed"):
            out[key] = chk.number(raw, key, path, 1 if key == "modes" else 0, integer=True,
                                  nonneg=True)
        else:
            out[key] = chk.number(raw, key, path, 0.0)
    return out


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    """Parse and validate a run configuration document."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"config is not valid TOML: {exc}") from None
    chk = _Checker()
    for key in doc:
        if key not in _SCHEMA:
            chk.add(key, "unknown section")

    # grid
    g = _table(doc, "grid", chk)
    dim = chk.choice(g, "dim", "grid", 1, (1, 2))
    cells = g.get("cells", [64] * dim)
    if isinstance(cells, int) and not isinstance(cells, bool):
        cells = [cells] * dim
    lengths = g.get("lengths", [1.0] * dim)
    if isinstance(lengths, (int, float)) and not isinstance(lengths, bool):
        lengths = [float(lengths)] * dim
    grid = None
    if not (isinstance(cells, list) and len(cells) == dim
            and all(isinstance(n, int) and not isinstance(n, bool) for n in cells)):
        chk.add("grid.cells", f"must be a list of {dim} integers")
    elif any(n < (1 if dim == 1 else 2) for n in cells):
        chk.add("grid.cells", "too few cells")
    if not (isinstance(lengths, list) and len(lengths) == dim
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in lengths)):
        chk.add("grid.lengths", f"must be a list of {dim} numbers")
    elif any(not v > 0 for v in lengths):
        chk.add("grid.lengths", "must be positive")
    if not any(p.startswith("grid.") for p, _ in chk.problems):
        grid = Grid(tuple(cells), tuple(float(v) for v in lengths))

    # physics
    p = _table(doc, "physics", chk)
    physics = {
        "graph": chk.choice(p, "graph", "physics", "log", GRAPHS),
        "c": chk.number(p, "c", "physics", 1.0, nonneg=True),
        "f2": chk.choice(p, "f2", "physics", "well", SMOOTH_PARTS),
        "a": chk.number(p, "a", "physics", 3.0),
        "coupling": chk.choice(p, "coupling", "physics", "smooth_id", COUPLINGS),
        "delta": chk.number(p, "delta", "physics", 0.1, positive=True),
        "g0": chk.number(p, "g0", "physics", 0.0, nonneg=True),
        "conductivity": chk.choice(p, "conductivity", "physics", "demo_exp_cos", CONDUCTIVITIES),
        "kappa_amp": chk.number(p, "kappa_amp", "physics", 0.5, nonneg=True),
        "kappa_value": chk.number(p, "kappa_value", "physics", 1.0, positive=True),
        "kappa_min": chk.number(p, "kappa_min", "physics", None, positive=True),
        "kappa_max": chk.number(p, "kappa_max", "physics", None, positive=True),
    }
    if physics["graph"] == "log" and not physics["c"] > 0:
        chk.add("physics.c", "log graph needs c > 0")
    if physics["kappa_amp"] > 1:
        chk.add("physics.kappa_amp", "must not exceed 1")
    if not any(path.startswith("physics.") for path, _ in chk.problems):
        cond = (make_conductivity("const", value=physics["kappa_value"])
                if physics["conductivity"] == "const"
                else make_conductivity(physics["conductivity"], amp=physics["kappa_amp"]))
        lo, hi = physics["kappa_min"], physics["kappa_max"]
        if lo is not None and hi is not None and lo > hi:
            chk.add("physics.kappa_max", "must be at least kappa_min")
        if lo is not None and cond.kmin < lo:
            chk.add("physics.kappa_min", f"conductivity reaches {cond.kmin:g} below the declared bound")
        if hi is not None and cond.kmax > hi:
            chk.add("physics.kappa_max", f"conductivity reaches {cond.kmax:g} above the declared bound")

    # delay
    d = _table(doc, "delay", chk)
    dvals = {
        "T": chk.number(d, "T", "delay", 0.25, positive=True),
        "N": chk.number(d, "N", "delay", 16, integer=True, positive=True),
        "M": chk.number(d, "M", "delay", 4, integer=True, positive=True),
        "eps": chk.number(d, "eps", "delay", None, positive=True),
        "beta_mode": chk.choice(d, "beta_mode", "delay", "yosida", ("yosida", "exact")),
        "mu_weight": chk.choice(d, "mu_weight", "delay", "lagged", ("lagged", "implicit")),
        "newton_tol": chk.number(d, "newton_tol", "delay", 1e-10, positive=True),
        "newton_max": chk.number(d, "newton_max", "delay", 100, integer=True, positive=True),
        "newton_damping": chk.number(d, "newton_damping", "delay", 1.0, positive=True),
        "picard_tol": chk.number(d, "picard_tol", "delay", 1e-10, positive=True),
        "picard_max": chk.number(d, "picard_max", "delay", 100, integer=True, positive=True),
        "picard_guess": chk.choice(d, "picard_guess", "delay", "previous", ("previous", "zero")),
        "max_halvings": chk.number(d, "max_halvings", "delay", 3, integer=True, nonneg=True),
    }
    if dvals["newton_damping"] > 1:
        chk.add("delay.newton_damping", "must lie in (0, 1]")
    delay = None
    if not any(path.startswith("delay.") for path, _ in chk.problems):
        delay = DelayConfig(**dvals)

    # initial data
    i = _table(doc, "initial", chk)
    manufactured = i.get("manufactured", False)
    if not isinstance(manufactured, bool):
        chk.add("initial.manufactured", "must be true or false")
        manufactured = False
    if manufactured and ("mu" in i or "rho" in i):
        chk.add("initial", "manufactured runs take their initial data from the exact solution")
    initial = {
        "manufactured": manufactured,
        "mu": _profile(i.get("mu"), "initial.mu", DEFAULT_MU, chk),
        "rho": _profile(i.get("rho"), "initial.rho", DEFAULT_RHO, chk),
    }

    # audits
    a = _table(doc, "audits", chk)
    names = a.get("names")
    if names is not None:
        if not (isinstance(names, list) and all(isinstance(n, str) for n in names)):
            chk.add("audits.names", "must be a list of audit names")
            names = None
        else:
            for n in names:
                if n not in AUDITS:
                    chk.add("audits.names", f"unknown audit {n!r}")
    audits = {
        "names": names,
        "energy_rel_tol": chk.number(a, "energy_rel_tol", "audits", 1e-6, positive=True),
        "C_G": chk.number(a, "C_G", "audits", 1.0, positive=True),
        "xi_rel_tol": chk.number(a, "xi_rel_tol", "audits", 1e-8, positive=True),
        "C_id": chk.number(a, "C_id", "audits", 1.0, positive=True),
        "C_drift": chk.number(a, "C_drift", "audits", 10.0, positive=True),
    }

    # output
    o = _table(doc, "output", chk)
    directory = o.get("directory", "chdelay-out")
    if not isinstance(directory, str) or not directory:
        chk.add("output.directory", "must be a non-empty string")
    output = {"directory": directory,
              "stride": chk.number(o, "stride", "output", 8, integer=True, positive=True)}

    s = _table(doc, "study", chk)
    study = {"fine_N": chk.number(s, "fine_N", "study", 1000, integer=True, positive=True),
             "fine_cells": chk.number(s, "fine_cells", "study", 256, integer=True, positive=True)}

    if chk.problems:
        raise ValidationError(chk.problems)
    return RunConfig(grid=grid, physics=physics, delay=delay, initial=initial, audits=audits,
                     output=output, study=study, text=text, base_dir=base_dir)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror}", path=path) from None
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))
