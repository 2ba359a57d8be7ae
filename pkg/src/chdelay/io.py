"""On-disk formats.

Field CSV::

    # grid: dim,nx[,ny],Lx[,Ly]
    <one value per line, row-major (x index slowest)>

A saved trajectory directory holds

* ``trajectory.npz``: every time level of mu, rho, xi plus solver
  certificates, so audits can be recomputed exactly;
* ``snapshots/{mu,rho,xi}_<step>.csv``: stride-decimated Field CSV files;
* ``index.json``: grid, delay parameters, the config text, and the list of
  snapshot times and file names.

All writes go to a temporary file in the target directory and are moved into
place with :func:`os.replace`.
"""

from __future__ import annotations

import io as _io
import json
import os
import tempfile
from typing import Iterable

import numpy as np

from .errors import FormatError
from .grid import Field, Grid
from .scheme import DelayConfig, Trajectory

INDEX_NAME = "index.json"
NPZ_NAME = "trajectory.npz"
FORMAT_VERSION = 1


def atomic_write(path: str, data) -> None:
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "w" if isinstance(data, str) else "wb"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({"encoding": "utf-8", "newline": "\n"} if mode == "w" else {})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_to_csv(fld: Field) -> str:
    g = fld.grid
    header = "# grid: " + ",".join([str(g.dim), *map(str, g.cells), *map(repr, g.lengths)])
    body = "\n".join(repr(float(v)) for v in fld.flat)
    return header + "\n" + body + "\n"


def write_field_csv(path: str, fld: Field) -> None:
    atomic_write(path, field_to_csv(fld))


def read_field_csv(path: str) -> Field:
    """Parse a Field CSV; any defect raises :class:`FormatError` naming the file."""
    name = os.path.basename(path)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(f"{name}: cannot read ({exc.strerror})", file=path) from None
    if not lines or not lines[0].startswith("# grid:"):
        raise FormatError(f"{name}: missing '# grid:' header", file=path)
    try:
        parts = [s.strip() for s in lines[0][len("# grid:"):].split(",")]
        dim = int(parts[0])
        if dim not in (1, 2) or len(parts) != 1 + 2 * dim:
            raise ValueError
        grid = Grid(tuple(int(v) for v in parts[1:1 + dim]),
                    tuple(float(v) for v in parts[1 + dim:]))
    except (ValueError, IndexError):
        raise FormatError(f"{name}: malformed grid header", file=path) from None
    rows = [ln.strip() for ln in lines[1:] if ln.strip()]
    if len(rows) != grid.size:
        raise FormatError(f"{name}: expected {grid.size} values, found {len(rows)}", file=path)
    try:
        values = np.array([float(v) for v in rows])
    except ValueError:
        raise FormatError(f"{name}: non-numeric value", file=path) from None
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FormatError(f"{name}: non-finite value at entry {bad}", file=path, entry=bad)
    return Field(grid, values)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

_ARRAYS = ("times", "mu", "rho", "xi", "newton_residual", "newton_iterations",
           "picard_change", "picard_iterations", "substeps")


def snapshot_steps(n_steps: int, stride: int) -> list:
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def save_trajectory(directory: str, traj: Trajectory, stride: int = 8,
                    config_text: str = "") -> dict:
    """Write npz, decimated CSV snapshots and the JSON index; returns the index."""
    os.makedirs(os.path.join(directory, "snapshots"), exist_ok=True)
    arrays = {k: np.asarray(getattr(traj, k)) for k in _ARRAYS}
    if traj.rho_source is not None:
        arrays["rho_source"] = traj.rho_source
        arrays["mu_source"] = traj.mu_source
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write(os.path.join(directory, NPZ_NAME), buf.getvalue())

    snaps = []
    for k in snapshot_steps(traj.n_levels - 1, stride):
        entry = {"step": k, "time": float(traj.times[k])}
        for name in ("mu", "rho", "xi"):
            fname = f"snapshots/{name}_{k:06d}.csv"
            write_field_csv(os.path.join(directory, fname), traj.field(name, k))
            entry[name] = fname
        snaps.append(entry)
    index = {
        "format": FORMAT_VERSION,
        "grid": traj.grid.to_dict(),
        "delay": traj.config.to_dict(),
        "meta": traj.meta,
        "n_steps": traj.n_levels - 1,
        "stride": stride,
        "arrays": NPZ_NAME,
        "snapshots": snaps,
        "config_text": config_text,
    }
    atomic_write(os.path.join(directory, INDEX_NAME), json.dumps(index, indent=2, sort_keys=True))
    return index


def read_index(directory: str) -> dict:
    path = os.path.join(directory, INDEX_NAME)
    try:
        with open(path, encoding="utf-8") as fh:
            index = json.load(fh)
    except OSError as exc:
        raise FormatError(f"{INDEX_NAME}: cannot read ({exc.strerror})", file=path) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{INDEX_NAME}: not valid JSON ({exc.msg})", file=path) from None
    required = ("format", "grid", "delay", "n_steps", "arrays", "snapshots")
    missing = [k for k in required if k not in index]
    if missing:
        raise FormatError(f"{INDEX_NAME}: missing keys {', '.join(missing)}", file=path)
    if index["format"] != FORMAT_VERSION:
        raise FormatError(f"{INDEX_NAME}: unsupported format {index['format']!r}", file=path)
    return index


def load_trajectory(directory: str, check_snapshots: bool = True) -> tuple[Trajectory, dict]:
    """Read a saved trajectory, validating every snapshot against the arrays."""
    index = read_index(directory)
    try:
        g = index["grid"]
        grid = Grid(tuple(g["cells"]), tuple(g["lengths"]))
        config = DelayConfig(**index["delay"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{INDEX_NAME}: invalid grid or delay block ({exc})") from None
    npz_path = os.path.join(directory, index["arrays"])
    try:
        with np.load(npz_path) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{index['arrays']}: cannot read ({exc})", file=npz_path) from None
    missing = [k for k in _ARRAYS if k not in arrays]
    n = index["n_steps"]
    if missing:
        raise FormatError(f"{index['arrays']}: missing arrays {', '.join(missing)}", file=npz_path)
    for name in ("mu", "rho", "xi"):
        if arrays[name].shape != (n + 1, grid.size) or not np.all(np.isfinite(arrays[name])):
            raise FormatError(f"{index['arrays']}: array {name} is malformed", file=npz_path)
    traj = Trajectory(
        grid=grid, config=config, times=arrays["times"], mu=arrays["mu"], rho=arrays["rho"],
        xi=arrays["xi"], newton_residual=arrays["newton_residual"],
        newton_iterations=arrays["newton_iterations"], picard_change=arrays["picard_change"],
        picard_iterations=arrays["picard_iterations"], substeps=arrays["substeps"],
        rho_source=arrays.get("rho_source"), mu_source=arrays.get("mu_source"),
        meta=dict(index.get("meta", {})),
    )
    if check_snapshots:
        _check_snapshots(directory, index, traj)
    return traj, index


def _check_snapshots(directory: str, index: dict, traj: Trajectory) -> None:
    for entry in index["snapshots"]:
        k = entry.get("step")
        if not isinstance(k, int) or not 0 <= k < traj.n_levels:
            raise FormatError(f"{INDEX_NAME}: snapshot step {k!r} out of range")
        for name in ("mu", "rho", "xi"):
            fname = entry.get(name)
            if not isinstance(fname, str):
                raise FormatError(f"{INDEX_NAME}: snapshot {k} lacks a {name} file")
            fld = read_field_csv(os.path.join(directory, fname))
            if fld.grid != traj.grid:
                raise FormatError(f"{fname}: grid differs from the index", file=fname)
            if not np.array_equal(fld.flat, getattr(traj, name)[k]):
                raise FormatError(f"{fname}: values differ from {index['arrays']}", file=fname)


def write_csv_table(path: str, columns: Iterable[str], rows) -> None:
    """Plain CSV with one header row naming the columns."""
    columns = list(columns)
    out = [",".join(columns)]
    for row in rows:
        out.append(",".join(_fmt(v) for v in row))
    atomic_write(path, "\n".join(out) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))
