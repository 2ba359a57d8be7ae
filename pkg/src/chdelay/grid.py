"""Cell-centred grids on boxes with zero-flux (Neumann) closure.

Fluxes live on interior faces only; boundary faces carry zero flux by
construction, so the discrete divergence theorem holds exactly.  All
operators are assembled from one face-gradient matrix ``G`` (faces x cells):

    div(kappa grad u) = -G.T @ diag(kappa_face) @ G @ u
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .errors import CgBreakdown, CgNoConvergence, NonFiniteField, NonPositiveConductivity


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cell-centred grid on ``[0, L_1] x ... x [0, L_dim]``.

    Cells are stored in C order with the x index first, so a 2D field has
    shape ``(nx, ny)``.  A single cell (the 0D reduction) is allowed only in
    1D, where it is the spatially homogeneous problem.
    """

    cells: tuple
    lengths: Optional[tuple] = None

    def __post_init__(self):
        cells = tuple(int(n) for n in np.atleast_1d(self.cells))
        lengths = self.lengths
        if lengths is None:
            lengths = (1.0,) * len(cells)
        lengths = tuple(float(L) for L in np.atleast_1d(lengths))
        if len(cells) not in (1, 2):
            raise ValueError("only 1D and 2D boxes are supported")
        if len(lengths) != len(cells):
            raise ValueError("one length per axis is required")
        if any(n < 1 for n in cells) or (len(cells) == 2 and any(n < 2 for n in cells)):
            raise ValueError("need at least 2 cells per axis (1 cell allowed in 1D)")
        if any(not L > 0 for L in lengths):
            raise ValueError("box lengths must be positive")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lengths", lengths)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.cells == other.cells and self.lengths == other.lengths

    def __hash__(self):
        return hash((self.cells, self.lengths))

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def centers(self):
        """Cell-centre coordinates, one array of ``shape`` per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.cells, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")

    @cached_property
    def gradient(self) -> sp.csr_matrix:
        """Interior-face difference quotients, x faces first."""
        blocks = []
        for axis, (n, h) in enumerate(zip(self.cells, self.spacing)):
            if n < 2:
                continue
            d = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
            factors = [sp.identity(m) for m in self.cells]
            factors[axis] = d
            op = factors[0]
            for f in factors[1:]:
                op = sp.kron(op, f)
            blocks.append(op)
        if not blocks:
            return sp.csr_matrix((0, self.size))
        return sp.vstack(blocks).tocsr()

    @property
    def n_faces(self) -> int:
        return self.gradient.shape[0]

    @cached_property
    def face_cells(self) -> tuple:
        """Index arrays ``(left, right)`` of the two cells adjacent to each face."""
        G = self.gradient.tocoo()
        left = np.zeros(G.shape[0], dtype=int)
        right = np.zeros(G.shape[0], dtype=int)
        neg = G.data < 0
        left[G.row[neg]] = G.col[neg]
        right[G.row[~neg]] = G.col[~neg]
        return left, right

    @cached_property
    def face_volume(self) -> float:
        # each face difference represents a dual cell of one cell volume
        return self.cell_volume

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        G = self.gradient
        return (-(G.T @ G)).tocsr()

    def face_mean(self, cell_values: np.ndarray) -> np.ndarray:
        left, right = self.face_cells
        v = np.asarray(cell_values).reshape(-1)
        return 0.5 * (v[left] + v[right])

    def diffusion_matrix(self, kappa_face: np.ndarray) -> sp.csr_matrix:
        """Matrix of ``-div(kappa grad .)``: symmetric positive semidefinite."""
        G = self.gradient
        return (G.T @ sp.diags(kappa_face) @ G).tocsr()

    def to_dict(self) -> dict:
        return {"dim": self.dim, "cells": list(self.cells), "lengths": list(self.lengths)}


@dataclass(frozen=True, eq=False)
class Field:
    """One scalar per cell of ``grid``; values are kept finite."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise NonFiniteField("field contains NaN or Inf values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "Field":
        return cls(grid, fn(*grid.centers()))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _flat(u) -> np.ndarray:
    return np.asarray(u.values if isinstance(u, Field) else u, dtype=float).reshape(-1)


def laplacian_neumann(u: Field) -> Field:
    return Field(u.grid, u.grid.laplacian @ u.flat)


def div_kappa_grad(kappa_cells: Field, u: Field) -> Field:
    """``div(kappa grad u)`` with arithmetic-mean face conductivity."""
    k = _flat(kappa_cells)
    if np.any(k <= 0):
        raise NonPositiveConductivity("conductivity must be positive in every cell",
                                      min_value=float(k.min()))
    grid = u.grid
    return Field(grid, -(grid.diffusion_matrix(grid.face_mean(k)) @ u.flat))


class Norms(NamedTuple):
    L1: float
    L2: float
    Linf: float
    L4: float
    L6: float
    H1_seminorm: float


def lp_norm(grid: Grid, values, p: float) -> float:
    v = np.abs(_flat(values))
    if math.isinf(p):
        return float(v.max()) if v.size else 0.0
    # scale by the max before powering so p = 6 cannot overflow
    top = v.max() if v.size else 0.0
    if top == 0:
        return 0.0
    return float(top * (grid.cell_volume * np.sum((v / top) ** p)) ** (1.0 / p))


def h1_seminorm(grid: Grid, values) -> float:
    du = grid.gradient @ _flat(values)
    return float(math.sqrt(grid.face_volume * float(du @ du)))


def inner(grid: Grid, u, v) -> float:
    return float(grid.cell_volume * (_flat(u) @ _flat(v)))


def norms(u: Field) -> Norms:
    g = u.grid
    return Norms(
        L1=lp_norm(g, u, 1), L2=lp_norm(g, u, 2), Linf=lp_norm(g, u, math.inf),
        L4=lp_norm(g, u, 4), L6=lp_norm(g, u, 6), H1_seminorm=h1_seminorm(g, u),
    )


class CgResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def cg_solve(apply_operator, rhs, tol: float = 1e-10, max_iter: Optional[int] = None,
             x0=None, preconditioner=None, check_symmetry: bool = False, rng=None,
             full_output: bool = False):
    """Conjugate gradients for a symmetric positive definite operator.

    ``apply_operator`` is a callable or anything supporting ``@``; ``rhs``
    may be a :class:`Field` (a Field is returned) or a flat array.  Stops
    when ``||r|| <= tol*||rhs||``.  ``preconditioner`` is an array holding
    the operator diagonal (Jacobi) or ``None``.  With ``full_output`` a
    :class:`CgResult` carrying the iteration count is returned instead.
    """
    grid = rhs.grid if isinstance(rhs, Field) else None
    b = _flat(rhs)
    A = apply_operator if callable(apply_operator) else (lambda v: apply_operator @ v)
    n = b.size
    if max_iter is None:
        max_iter = max(10 * n, 100)
    if check_symmetry:
        rng = np.random.default_rng(rng)
        for _ in range(3):
            u, v = rng.standard_normal(n), rng.standard_normal(n)
            lhs, rhs_ = A(u) @ v, u @ A(v)
            if abs(lhs - rhs_) > 1e-10 * (abs(lhs) + abs(rhs_) + 1):
                raise CgBreakdown("operator failed the random symmetry probe")
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else _flat(x0).copy()
    if bnorm == 0.0:
        x = np.zeros(n)
        return _wrap(grid, CgResult(x, 0, 0.0), full_output)
    r = b - A(x) if x0 is not None else b.copy()
    inv_diag = None if preconditioner is None else 1.0 / np.asarray(preconditioner).reshape(-1)
    z = r if inv_diag is None else inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    target = tol * bnorm
    rnorm = float(np.linalg.norm(r))
    for it in range(max_iter + 1):
        if rnorm <= target:
            return _wrap(grid, CgResult(x, it, rnorm / bnorm), full_output)
        if it == max_iter:
            break
        Ap = A(p)
        curv = float(p @ Ap)
        if curv <= 0.0:
            raise CgBreakdown("non-positive curvature direction: operator is not SPD",
                              iteration=it, curvature=curv)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        z = r if inv_diag is None else inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        rnorm = float(np.linalg.norm(r))
    raise CgNoConvergence("CG iteration budget exhausted", iterations=max_iter,
                          relative_residual=rnorm / bnorm)


def _wrap(grid, result: CgResult, full_output: bool):
    if grid is not None:
        result = result._replace(x=Field(grid, result.x))
    return result if full_output else result.x
