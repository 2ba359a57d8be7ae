"""Command line front end: ``solve``, ``study`` and ``verify``.

Exit codes: 0 pass, 2 audit failure, 3 solver failure, 4 configuration or
input error.  Errors are printed to stderr as one JSON object with a stable
``code`` field.  ``CHDELAY_OUTPUT_DIR`` overrides the configured output
directory; ``--output`` overrides both.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from typing import Optional

from . import __version__
from .config import RunConfig, load_config
from .errors import (
    AuditFailure,
    ChDelayError,
    FormatError,
    InvalidInitialData,
    InvalidScenario,
    LostPositivity,
    ParseError,
    SolverError,
    ValidationError,
)
from .estimates import (
    STUDY_TOLERANCES,
    json_safe,
    nonnegativity_refusal,
    relative_spread,
    run_audits,
    study_monitors,
)
from .grid import Grid
from .io import atomic_write, load_trajectory, save_trajectory, write_csv_table
from .manufactured import ManufacturedSources
from .scheme import refine_study, solve

EXIT_PASS = 0
EXIT_AUDIT = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4
OUTPUT_ENV = "CHDELAY_OUTPUT_DIR"

# below this the L2(Q) differences are solver noise and count as converged
DIFF_FLOOR = 1e-9
SPATIAL_ORDER_WINDOW = (1.7, 2.3)
TEMPORAL_ORDER_WINDOW = (0.8, 1.3)

log = logging.getLogger("chdelay")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ParseError, ValidationError, InvalidInitialData, InvalidScenario, FormatError)):
        return EXIT_CONFIG
    if isinstance(exc, AuditFailure):
        return EXIT_AUDIT
    return EXIT_SOLVER


def _emit_error(exc: ChDelayError, out_dir: Optional[str] = None) -> int:
    doc = exc.to_dict()
    text = json.dumps(doc, sort_keys=True, default=str)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            atomic_write(os.path.join(out_dir, "error.json"), text + "\n")
        except OSError:
            pass
    return _exit_code(exc)


def _output_dir(cfg: RunConfig, override: Optional[str]) -> str:
    if override:
        return override
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return env
    d = cfg.output["directory"]
    return d if os.path.isabs(d) else os.path.join(cfg.base_dir, d)


def _build(cfg: RunConfig, grid: Optional[Grid] = None):
    spec = cfg.potential()
    cond = cfg.conductivity()
    grid = grid or cfg.grid
    sources = None
    if cfg.manufactured:
        sources = ManufacturedSources(grid, spec, cond)
        data = sources.initial_data()
    else:
        data = cfg.initial_data(spec, grid)
    return spec, cond, data, sources


def report_document(report, traj, cfg_text: str = "") -> dict:
    """The ``report.json`` payload; only ``created`` depends on wall-clock time."""
    doc = report.to_dict()
    doc["run"] = {
        "grid": traj.grid.to_dict(),
        "delay": traj.config.to_dict(),
        "eps": traj.meta.get("eps"),
        "physics": traj.meta.get("names"),
        "conductivity": traj.meta.get("conductivity"),
        "n_steps": traj.n_levels - 1,
    }
    doc["created"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return doc


def _dump_report(doc: dict) -> str:
    return json.dumps(json_safe(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_series_csv(path: str, report) -> None:
    names = list(report.series)
    rows = [[int(report.steps[i]), float(report.times[i]), *(float(report.series[n][i]) for n in names)]
            for i in range(len(report.steps))]
    write_csv_table(path, ["step", "time", *names], rows)


def _audit_names(arg: Optional[str], cfg_names):
    if arg:
        return [s.strip() for s in arg.split(",") if s.strip()]
    return cfg_names


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(config_path: str, output: Optional[str] = None) -> int:
    try:
        cfg = load_config(config_path)
    except ChDelayError as exc:
        return _emit_error(exc)
    out_dir = _output_dir(cfg, output)
    os.makedirs(out_dir, exist_ok=True)
    try:
        spec, cond, data, sources = _build(cfg)
        t0 = time.perf_counter()
        traj = solve(cfg.delay, data, spec, cond, sources=sources)
        elapsed = time.perf_counter() - t0
    except LostPositivity as exc:
        refusal = nonnegativity_refusal(exc)
        atomic_write(os.path.join(out_dir, "report.json"),
                     _dump_report({"passed": False, "audits": [refusal.to_dict()]}))
        return _emit_error(exc, out_dir)
    except ChDelayError as exc:
        return _emit_error(exc, out_dir)
    except ValueError as exc:
        return _emit_error(ValidationError([("config", str(exc))]), out_dir)

    save_trajectory(out_dir, traj, stride=cfg.output["stride"], config_text=cfg.text)
    try:
        report = run_audits(traj, spec, cond, cfg.audit_names(), cfg.audit_options())
    except ChDelayError as exc:
        return _emit_error(exc, out_dir)
    atomic_write(os.path.join(out_dir, "report.json"), _dump_report(report_document(report, traj)))
    write_series_csv(os.path.join(out_dir, "series.csv"), report)
    summary = {
        "passed": report.passed,
        "steps": traj.n_levels - 1,
        "seconds": round(elapsed, 3),
        "output": out_dir,
        "verdicts": {a.name: ("pass" if a.verdict else "fail") for a in report.audits},
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_PASS if report.passed else EXIT_AUDIT


def _study_tau(cfg: RunConfig, levels: int, out_dir: str) -> tuple[int, dict]:
    spec, cond, data, sources = _build(cfg)
    if sources is not None:
        raise InvalidScenario("tau study of a manufactured run: use the order study")
    table = refine_study(cfg.delay, data, spec, cond, levels,
                         monitor=lambda tr: study_monitors(tr, cond))
    monitors = list(STUDY_TOLERANCES)
    cols = ["level", "N", "tau", "h", "mu_diff_L2Q", "rho_diff_LinfQ", *monitors]
    rows = [[i, r.N, r.tau, r.h, r.mu_diff_L2Q, r.rho_diff_LinfQ, *(r.monitors[m] for m in monitors)]
            for i, r in enumerate(table.rows)]
    write_csv_table(os.path.join(out_dir, "study.csv"), cols, rows)

    diffs = table.column("mu_diff_L2Q")[1:]
    problems = []
    for i in range(1, len(diffs)):
        if not (diffs[i] < diffs[i - 1] or diffs[i] <= DIFF_FLOOR):
            problems.append({"check": "mu_diff_L2Q", "levels": [i, i + 1],
                             "values": [float(diffs[i - 1]), float(diffs[i])]})
    spreads = {}
    for m in monitors:
        spread = relative_spread(table.column(m))
        spreads[m] = spread
        if spread > STUDY_TOLERANCES[m]:
            problems.append({"check": m, "spread": spread, "tolerance": STUDY_TOLERANCES[m]})
    summary = {"passed": not problems, "mu_diff_L2Q": diffs.tolist(), "spreads": spreads,
               "tolerances": STUDY_TOLERANCES, "eps": table.rows[-1].monitors.get("eps"),
               "problems": problems}
    return (EXIT_PASS if not problems else EXIT_AUDIT), summary


def manufactured_errors(cfg: RunConfig, cells: tuple, N: int) -> float:
    """Discrete L2 error of mu at the final time against the exact solution."""
    from dataclasses import replace

    grid = Grid(cells, cfg.grid.lengths)
    spec, cond, data, sources = _build(cfg, grid)
    delay = replace(cfg.delay, N=N)
    traj = solve(delay, data, spec, cond, sources=sources)
    err = traj.mu[-1] - sources.mu_exact(delay.T).flat
    return math.sqrt(grid.cell_volume * float(err @ err))


def order_study(cfg: RunConfig, levels: int) -> dict:
    """Observed orders in space (fine step) and in time (fine grid)."""
    base = cfg.grid.cells
    space_cells = [tuple(n * 2**l for n in base) for l in range(levels)]
    space_err = [manufactured_errors(cfg, c, cfg.study["fine_N"]) for c in space_cells]
    fine = (cfg.study["fine_cells"],) * cfg.grid.dim
    time_N = [cfg.delay.N * 2**l for l in range(levels)]
    time_err = [manufactured_errors(cfg, fine, n) for n in time_N]
    ratio = lambda e: [math.log2(e[i] / e[i + 1]) for i in range(len(e) - 1)]  # noqa: E731
    return {"space_cells": space_cells, "space_err": space_err, "space_order": ratio(space_err),
            "time_N": time_N, "time_err": time_err, "time_order": ratio(time_err)}


def _study_orders(cfg: RunConfig, levels: int, out_dir: str) -> tuple[int, dict]:
    res = order_study(cfg, levels)
    rows = []
    for i in range(levels):
        so = res["space_order"][i - 1] if i else float("nan")
        to = res["time_order"][i - 1] if i else float("nan")
        rows.append([i, res["space_cells"][i][0], res["space_err"][i], so,
                     res["time_N"][i], res["time_err"][i], to])
    write_csv_table(os.path.join(out_dir, "study.csv"),
                    ["level", "cells", "space_error", "spatial_order", "N", "time_error",
                     "temporal_order"], rows)
    lo, hi = SPATIAL_ORDER_WINDOW
    tlo, thi = TEMPORAL_ORDER_WINDOW
    problems = [{"check": "spatial_order", "levels": [i, i + 1], "value": o}
                for i, o in enumerate(res["space_order"]) if not lo <= o <= hi]
    problems += [{"check": "temporal_order", "levels": [i, i + 1], "value": o}
                 for i, o in enumerate(res["time_order"]) if not tlo <= o <= thi]
    summary = {"passed": not problems, "spatial_order": res["space_order"],
               "temporal_order": res["time_order"], "problems": problems}
    return (EXIT_PASS if not problems else EXIT_AUDIT), summary


def cmd_study(config_path: str, levels: int, output: Optional[str] = None) -> int:
    try:
        cfg = load_config(config_path)
        if levels < 2:
            raise ValidationError([("--levels", "a study needs at least 2 levels")])
    except ChDelayError as exc:
        return _emit_error(exc)
    out_dir = _output_dir(cfg, output)
    os.makedirs(out_dir, exist_ok=True)
    try:
        if cfg.manufactured:
            code, summary = _study_orders(cfg, levels, out_dir)
        else:
            code, summary = _study_tau(cfg, levels, out_dir)
    except ChDelayError as exc:
        return _emit_error(exc, out_dir)
    text = json.dumps(summary, sort_keys=True, default=str)
    atomic_write(os.path.join(out_dir, "study.json"), text + "\n")
    print(text)
    return code


def cmd_verify(directory: str, audits: Optional[str] = None) -> int:
    """Recompute audits from a saved run; writes ``verify_report.json``."""
    from .config import parse_config

    try:
        traj, index = load_trajectory(directory)
        cfg = parse_config(index.get("config_text", ""), base_dir=directory)
        spec, cond = cfg.potential(), cfg.conductivity()
        names = _audit_names(audits, cfg.audit_names())
        report = run_audits(traj, spec, cond, names, cfg.audit_options())
    except KeyError as exc:
        return _emit_error(ValidationError([("--audits", str(exc.args[0]))]))
    except ChDelayError as exc:
        return _emit_error(exc)
    text = _dump_report(report_document(report, traj))
    atomic_write(os.path.join(directory, "verify_report.json"), text)
    print(json.dumps({"passed": report.passed,
                      "verdicts": {a.name: ("pass" if a.verdict else "fail") for a in report.audits}},
                     sort_keys=True))
    return EXIT_PASS if report.passed else EXIT_AUDIT


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chdelay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="march one configuration and audit it")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory")

    p = sub.add_parser("study", help="tau-refinement or manufactured order study")
    p.add_argument("config")
    p.add_argument("--levels", type=int, default=3, help="number of runs (default 3)")
    p.add_argument("-o", "--output", help="output directory")

    p = sub.add_parser("verify", help="recompute audits from a saved run")
    p.add_argument("directory")
    p.add_argument("--audits", help="comma separated audit names")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "solve":
        return cmd_solve(args.config, args.output)
    if args.command == "study":
        return cmd_study(args.config, args.levels, args.output)
    return cmd_verify(args.directory, args.audits)


if __name__ == "__main__":
    sys.exit(main())
