import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chdelay.errors import CgBreakdown, CgNoConvergence, NonFiniteField, NonPositiveConductivity
from chdelay.grid import (
    Field,
    Grid,
    cg_solve,
    div_kappa_grad,
    h1_seminorm,
    inner,
    laplacian_neumann,
    norms,
)


def test_grid_geometry():
    g = Grid((4, 8), (2.0, 1.0))
    assert g.dim == 2 and g.size == 32
    assert g.spacing == (0.5, 0.125)
    assert g.cell_volume == pytest.approx(0.0625)
    assert g.volume == pytest.approx(2.0)
    assert g == Grid((4, 8), (2.0, 1.0)) and hash(g) == hash(Grid((4, 8), (2.0, 1.0)))


@pytest.mark.parametrize("cells,lengths", [((0,),None), ((1, 4), None), ((4,), (-1.0,)), ((2, 2, 2), None)])
def test_grid_rejects_bad_shapes(cells, lengths):
    with pytest.raises(ValueError):
        Grid(cells, lengths)


def test_field_rejects_nonfinite():
    with pytest.raises(NonFiniteField):
        Field(Grid((3,)), [0.0, np.nan, 1.0])


def test_field_is_read_only():
    f = Field.constant(Grid((3,)), 1.0)
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_laplacian_of_constant_is_zero():
    g = Grid((7, 5))
    assert np.all(laplacian_neumann(Field.constant(g, 3.0)).flat == 0)


def test_laplacian_hand_stencil():
    g = Grid((5,), (5.0,))
    out = laplacian_neumann(Field(g, [0, 1, 2, 3, 4]))
    assert np.allclose(out.flat, [1, 0, 0, 0, -1])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.integers(0, 2**31))
def test_divergence_theorem_and_operator_properties(nx, ny, seed):
    rng = np.random.default_rng(seed)
    g = Grid((nx, ny), (1.0, 2.0))
    u, v = Field(g, rng.normal(size=g.shape)), Field(g, rng.normal(size=g.shape))
    kappa = Field(g, rng.uniform(0.5, 2.0, g.shape))
    Lu, Lv = div_kappa_grad(kappa, u), div_kappa_grad(kappa, v)
    scale = 1 + np.abs(Lu.flat).sum()
    assert abs(Lu.flat.sum()) <= 1e-12 * scale
    a, b = inner(g, Lu, v), inner(g, u, Lv)
    assert abs(a - b) <= 1e-12 * (abs(a) + abs(b) + 1)
    assert inner(g, Lu, u) <= 1e-12
    # summation by parts against a monotone function
    phi = np.tanh(3 * u.flat) + u.flat**5
    assert float(-laplacian_neumann(u).flat @ phi) >= -1e-12 * (1 + np.abs(phi).sum())


def test_div_kappa_grad_reduces_to_laplacian():
    g = Grid((5,), (5.0,))
    u = Field(g, [0, 1, 2, 3, 4])
    assert np.allclose(div_kappa_grad(Field.constant(g, 1.0), u).flat, laplacian_neumann(u).flat)
    assert np.all(div_kappa_grad(Field(g, [1, 2, 3, 4, 5]), Field.constant(g, 2.0)).flat == 0)


def test_div_kappa_grad_rejects_nonpositive_kappa():
    g = Grid((3,))
    with pytest.raises(NonPositiveConductivity):
        div_kappa_grad(Field(g, [1.0, 0.0, 1.0]), Field.constant(g, 1.0))


def test_laplacian_second_order():
    errs = []
    for n in (16, 32, 64, 128):
        g = Grid((n,))
        x = g.centers()[0]
        out = laplacian_neumann(Field(g, np.cos(math.pi * x)))
        errs.append(np.abs(out.flat + math.pi**2 * np.cos(math.pi * x)).max())
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3.5 <= r <= 4.5 for r in ratios)


def test_norms_examples():
    g = Grid((10, 10))
    n = norms(Field.constant(g, 2.0))
    assert n.L2 == pytest.approx(2.0) and n.Linf == 2.0 and n.L6 == pytest.approx(2.0)
    half = Field(g, (np.arange(100) < 50).reshape(10, 10).astype(float))
    assert norms(half).L1 == pytest.approx(0.5)
    g1 = Grid((128,))
    assert h1_seminorm(g1, g1.centers()[0]) == pytest.approx(1.0, abs=2e-2)


def test_l6_norm_does_not_overflow():
    g = Grid((4,))
    assert norms(Field(g, [1e60, 0, 0, 0])).L6 == pytest.approx(1e60 * 0.25 ** (1 / 6))


def test_cg_identity_and_shifted_laplacian():
    g = Grid((32,))
    r = Field(g, np.linspace(-1, 1, 32))
    assert np.allclose(cg_solve(lambda v: v, r).flat, r.flat)
    A = lambda v: v - 0.01 * (g.laplacian @ v)  # noqa: E731
    out = cg_solve(A, Field.constant(g, 1.0), tol=1e-12)
    assert isinstance(out, Field) and np.allclose(out.flat, 1.0)


def test_cg_recovers_known_solution():
    g = Grid((64,))
    x = g.centers()[0]
    u_star = np.cos(3 * x) + x**2
    A = lambda v: v - g.laplacian @ v  # noqa: E731
    res = cg_solve(A, Field(g, A(u_star)), tol=1e-10, full_output=True, check_symmetry=True, rng=1)
    assert np.abs(res.x.flat - u_star).max() < 1e-8
    assert res.residual <= 1e-10


def test_cg_detects_indefinite_operator():
    g = Grid((8,))
    with pytest.raises(CgBreakdown):
        cg_solve(lambda v: -v, Field.constant(g, 1.0))


def test_cg_symmetry_probe():
    M = np.triu(np.ones((6, 6)))
    with pytest.raises(CgBreakdown):
        cg_solve(M, np.ones(6), check_symmetry=True, rng=0)


def test_cg_budget():
    g = Grid((200,))
    A = lambda v: v - 100.0 * (g.laplacian @ v)  # noqa: E731
    with pytest.raises(CgNoConvergence):
        cg_solve(A, Field(g, np.random.default_rng(0).normal(size=200)), tol=1e-14, max_iter=3)
