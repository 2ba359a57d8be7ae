"""Monotone graphs, potentials, coupling functions and conductivities.

The convex part of the double-well potential enters the phase equation only
through its subdifferential ``beta``.  A graph is never evaluated as a
multivalued object: the solver touches it through the resolvent
``J_lam = (I + lam*beta)^-1`` and the Yosida approximation
``beta_eps = (I - J_eps)/eps``, both single-valued and globally Lipschitz.

All graph methods are vectorised over numpy arrays.  The module-level
functions (``eval_f1``, ``beta_resolvent``, ...) are thin scalar-friendly
wrappers that return plain floats for scalar input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logit, xlogy

from .errors import NonConvergence, QuadratureFailure

RESOLVENT_TOL = 1e-12
RESOLVENT_MAX_ITER = 200

ArrayFn = Callable[[np.ndarray], np.ndarray]


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(np.asarray(value).reshape(()))
    return value


def _broadcast(x, lam):
    """Broadcast ``x`` and a scalar or array parameter; returns (x, flat x, flat lam)."""
    x, lam = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(lam, dtype=float))
    if np.any(lam <= 0):
        raise ValueError("resolvent parameter must be positive")
    return x, x.reshape(-1), lam.reshape(-1)


def _safeguarded_root(F, dF, lo, hi, y0, tol=RESOLVENT_TOL, rtol=0.0,
                      max_iter=RESOLVENT_MAX_ITER):
    """Vectorised Newton iteration safeguarded by a bisection bracket.

    ``F`` must be nondecreasing with ``F(lo) <= 0 <= F(hi)`` elementwise.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    y = np.clip(np.array(y0, dtype=float), lo, hi)
    active = np.ones(y.shape, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            return y
        ya = y[active]
        la, ha = lo[active], hi[active]
        fa = F(ya, active)
        la = np.where(fa < 0, ya, la)
        ha = np.where(fa > 0, ya, ha)
        da = dF(ya, active)
        with np.errstate(divide="ignore", invalid="ignore"):
            yn = ya - fa / da
        bad = ~np.isfinite(yn) | (yn <= la) | (yn >= ha)
        yn = np.where(bad, 0.5 * (la + ha), yn)
        step_tol = tol + rtol * np.abs(ya)
        done = (fa == 0) | (np.abs(yn - ya) <= step_tol) | (ha - la <= step_tol)
        yn = np.where(fa == 0, ya, yn)
        y[active], lo[active], hi[active] = yn, la, ha
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    if active.any():
        raise NonConvergence(
            f"resolvent iteration did not converge in {max_iter} steps",
            unconverged=int(active.sum()),
        )
    return y


# ---------------------------------------------------------------------------
# maximal monotone graphs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarGraph:
    """A maximal monotone graph on the real line.

    Subclasses implement ``resolvent`` and may override the Yosida
    derivative with a closed form.  ``beta`` evaluates the minimal-norm
    section, which coincides with the graph wherever it is single-valued.
    """

    kind: str = "custom"
    domain_lo: float = -math.inf
    domain_hi: float = math.inf
    params: dict = field(default_factory=dict)

    # subclasses override -------------------------------------------------
    def beta(self, x):
        raise NotImplementedError

    def dbeta(self, x):
        raise NotImplementedError

    def f1(self, x):
        raise NotImplementedError

    def resolvent(self, x, lam):
        raise NotImplementedError

    # shared machinery ----------------------------------------------------
    def in_domain(self, x, closed=True):
        x = np.asarray(x, dtype=float)
        if closed:
            return (x >= self.domain_lo) & (x <= self.domain_hi)
        return (x > self.domain_lo) & (x < self.domain_hi)

    def yosida(self, x, eps):
        if np.any(np.asarray(eps) <= 0):
            raise ValueError("Yosida parameter must be positive")
        x = np.asarray(x, dtype=float)
        return (x - self.resolvent(x, eps)) / eps

    def yosida_derivative(self, x, eps):
        """An element of the generalized derivative of ``beta_eps``."""
        x = np.asarray(x, dtype=float)
        step = 1e-7 * np.maximum(1.0, np.abs(x))
        return (self.yosida(x + step, eps) - self.yosida(x - step, eps)) / (2 * step)

    def moreau_envelope(self, x, eps):
        """``min_y f1(y) + |x - y|^2/(2 eps)``, the potential of ``beta_eps``."""
        x = np.asarray(x, dtype=float)
        j = self.resolvent(x, eps)
        return self.f1(j) + 0.5 * (x - j) ** 2 / eps

    @property
    def single_valued_interior(self) -> bool:
        """True when ``beta`` is a differentiable function on the open domain."""
        return True


@dataclass(frozen=True)
class LogGraph(ScalarGraph):
    """``beta(y) = c*log(y/(1-y))`` on (0, 1), derivative of the entropy."""

    kind: str = "log"
    domain_lo: float = 0.0
    domain_hi: float = 1.0
    params: dict = field(default_factory=lambda: {"c": 1.0})

    @property
    def c(self) -> float:
        return float(self.params.get("c", 1.0))

    def beta(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.c * logit(x)
        return np.where(self.in_domain(x), out, np.nan)

    def dbeta(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(self.in_domain(x, closed=False), self.c / (x * (1 - x)), np.inf)

    def f1(self, x):
        x = np.asarray(x, dtype=float)
        inside = self.in_domain(x)
        xc = np.clip(x, 0.0, 1.0)
        val = self.c * (xlogy(xc, xc) + xlogy(1 - xc, 1 - xc) + math.log(2.0))
        # the shift keeps f1 >= 0; clip the rounding residue at the minimum
        return np.where(inside, np.maximum(val, 0.0), np.inf)

    def _logit_resolvent(self, x, lam):
        """Solve ``sigma(z) + lam*c*z = x`` for the logit ``z`` of the resolvent."""
        x, flat, lam = _broadcast(x, lam)
        lc = lam * self.c
        lo = (flat - 1.0) / lc
        hi = flat / lc
        z0 = np.clip(logit(np.clip(flat, 1e-3, 1 - 1e-3)), lo, hi)

        def F(z, mask):
            return expit(z) + lc[mask] * z - flat[mask]

        def dF(z, mask):
            return expit(z) * expit(-z) + lc[mask]

        # tolerance is in the logit variable; |dy| <= |dz|*sigma'(z) <= |dz|/4
        z = _safeguarded_root(F, dF, lo, hi, z0, tol=RESOLVENT_TOL, rtol=4e-16)
        return z.reshape(x.shape)

    def resolvent(self, x, lam):
        return expit(self._logit_resolvent(x, lam))

    def yosida(self, x, eps):
        if np.any(np.asarray(eps) <= 0):
            raise ValueError("Yosida parameter must be positive")
        x = np.asarray(x, dtype=float)
        return (x - expit(self._logit_resolvent(x, eps))) / eps

    def yosida_derivative(self, x, eps):
        z = self._logit_resolvent(x, eps)
        s = expit(z) * expit(-z)
        # beta'(J)/(1 + eps*beta'(J)) with beta'(J) = c/s, safe when s underflows
        return self.c / (s + eps * self.c)


@dataclass(frozen=True)
class ObstacleGraph(ScalarGraph):
    """Subdifferential of the indicator of [0, 1]."""

    kind: str = "obstacle"
    domain_lo: float = 0.0
    domain_hi: float = 1.0

    def beta(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(self.in_domain(x), 0.0, np.nan)

    def dbeta(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def f1(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(self.in_domain(x), 0.0, np.inf)

    def resolvent(self, x, lam):
        return np.clip(np.asarray(x, dtype=float), 0.0, 1.0)

    def yosida_derivative(self, x, eps):
        x = np.asarray(x, dtype=float)
        return np.where((x < 0) | (x > 1), 1.0 / eps, 0.0)

    @property
    def single_valued_interior(self) -> bool:
        return False


@dataclass(frozen=True)
class PolyGraph(ScalarGraph):
    """``beta(y) = c*y**3``, subdifferential of ``c*y**4/4``."""

    kind: str = "poly"
    params: dict = field(default_factory=lambda: {"c": 1.0})

    @property
    def c(self) -> float:
        return float(self.params.get("c", 1.0))

    def beta(self, x):
        return self.c * np.asarray(x, dtype=float) ** 3

    def dbeta(self, x):
        return 3 * self.c * np.asarray(x, dtype=float) ** 2

    def f1(self, x):
        return 0.25 * self.c * np.asarray(x, dtype=float) ** 4

    def resolvent(self, x, lam):
        x, flat, lam = _broadcast(x, lam)
        lc = lam * self.c
        lo = np.minimum(flat, 0.0)
        hi = np.maximum(flat, 0.0)

        def F(y, mask):
            return y + lc[mask] * y**3 - flat[mask]

        def dF(y, mask):
            return 1 + 3 * lc[mask] * y**2

        # start from x/(1+lc*x^2): inside the bracket and exact for small x
        y0 = flat / (1 + lc * flat**2)
        return _safeguarded_root(F, dF, lo, hi, y0).reshape(x.shape)

    def yosida_derivative(self, x, eps):
        j = self.resolvent(x, eps)
        d = 3 * self.c * j**2
        return d / (1 + eps * d)


@dataclass(frozen=True)
class ZeroGraph(ScalarGraph):
    kind: str = "zero"

    def beta(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    dbeta = beta

    def f1(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def resolvent(self, x, lam):
        return np.array(x, dtype=float)

    def yosida_derivative(self, x, eps):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class CustomGraph(ScalarGraph):
    """Graph given by a nondecreasing function on the open domain.

    At a finite endpoint the graph is completed by a vertical half-line, so
    the resolvent saturates there.  ``f1`` is optional; without it the
    potential energy of the graph is unknown and evaluates to NaN.
    """

    kind: str = "custom"
    fn: Optional[ArrayFn] = None
    dfn: Optional[ArrayFn] = None
    f1_fn: Optional[ArrayFn] = None

    def beta(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            return np.where(self.in_domain(x, closed=False), self.fn(x), np.nan)

    def dbeta(self, x):
        if self.dfn is None:
            x = np.asarray(x, dtype=float)
            step = 1e-7 * np.maximum(1.0, np.abs(x))
            return (self.fn(x + step) - self.fn(x - step)) / (2 * step)
        return self.dfn(np.asarray(x, dtype=float))

    def f1(self, x):
        x = np.asarray(x, dtype=float)
        if self.f1_fn is None:
            return np.full(x.shape, np.nan)
        return np.where(self.in_domain(x), self.f1_fn(x), np.inf)

    def resolvent(self, x, lam):
        x, flat, lam = _broadcast(x, lam)
        lo_d, hi_d = self.domain_lo, self.domain_hi
        # tiny inset so fn is only ever called on the open domain
        inset = 1e-300

        def G(y, target, lam=lam):
            with np.errstate(all="ignore"):
                return y + lam * self.fn(y) - target

        lo = np.where(np.isfinite(lo_d), lo_d + inset, flat - 1.0)
        hi = np.where(np.isfinite(hi_d), hi_d - inset, flat + 1.0)
        lo = np.minimum(lo, hi)
        for _ in range(RESOLVENT_MAX_ITER):
            glo = G(lo, flat)
            need = glo > 0
            if np.isfinite(lo_d):
                need &= lo > lo_d + inset
            if not need.any():
                break
            lo = np.where(need, flat - 2 * (flat - lo) - 1.0, lo)
        else:
            raise NonConvergence("could not bracket custom resolvent from below")
        for _ in range(RESOLVENT_MAX_ITER):
            ghi = G(hi, flat)
            need = ghi < 0
            if np.isfinite(hi_d):
                need &= hi < hi_d - inset
            if not need.any():
                break
            hi = np.where(need, flat + 2 * (hi - flat) + 1.0, hi)
        else:
            raise NonConvergence("could not bracket custom resolvent from above")

        sat_lo = G(lo, flat) >= 0
        sat_hi = G(hi, flat) <= 0
        free = ~(sat_lo | sat_hi)
        y = np.where(sat_lo, lo_d if np.isfinite(lo_d) else lo, flat)
        y = np.where(sat_hi, hi_d if np.isfinite(hi_d) else hi, y)
        if free.any():
            tgt, lam_free = flat[free], lam[free]

            def F(v, mask):
                return G(v, tgt[mask], lam_free[mask])

            def dF(v, mask):
                return 1 + lam_free[mask] * self.dbeta(v)

            y0 = np.clip(tgt, lo[free], hi[free])
            y[free] = _safeguarded_root(F, dF, lo[free], hi[free], y0)
        return y.reshape(x.shape)


# ---------------------------------------------------------------------------
# smooth parts of the potential and coupling functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """The phase-equation nonlinearities.

    ``f2``/``pi``/``dpi`` are the smooth part of the potential and its first
    two derivatives; ``g``/``gprime``/``gsecond`` the nonnegative coupling.
    ``lip_bounds`` declares Lipschitz constants for ``pi``, ``g`` and
    ``gprime`` (keys ``"pi"``, ``"g"``, ``"gprime"``).
    """

    graph: ScalarGraph
    f2: ArrayFn
    pi: ArrayFn
    dpi: ArrayFn
    g: ArrayFn
    gprime: ArrayFn
    gsecond: ArrayFn
    lip_bounds: dict
    names: dict = field(default_factory=dict)

    def f1(self, x):
        return self.graph.f1(x)

    def validate(self, samples: Optional[np.ndarray] = None) -> list[str]:
        """Sample the structural assumptions; returns a list of violations."""
        if samples is None:
            samples = np.linspace(-3.0, 3.0, 2001)
        problems = []
        dom = samples[self.graph.in_domain(samples)]
        f1v = self.graph.f1(dom)
        if np.any(f1v < -1e-14):
            problems.append("f1 takes negative values on its domain")
        if np.any(self.g(samples) < 0):
            problems.append("g takes negative values")
        dx = np.diff(samples)
        for key, fn in (("pi", self.pi), ("g", self.g), ("gprime", self.gprime)):
            quot = np.abs(np.diff(fn(samples))) / dx
            bound = self.lip_bounds.get(key, math.inf)
            if np.any(quot > bound * (1 + 1e-9) + 1e-12):
                problems.append(f"difference quotients of {key} exceed its Lipschitz bound {bound}")
        return problems


def smooth_identity(delta: float = 0.1):
    """``g(r) = (r + sqrt(r^2 + delta^2))/2``: positive, increasing, ~max(r, 0)."""
    d2 = delta * delta

    def g(r):
        r = np.asarray(r, dtype=float)
        return 0.5 * (r + np.sqrt(r * r + d2))

    def gp(r):
        r = np.asarray(r, dtype=float)
        return 0.5 * (1 + r / np.sqrt(r * r + d2))

    def gpp(r):
        r = np.asarray(r, dtype=float)
        return 0.5 * d2 / (r * r + d2) ** 1.5

    return g, gp, gpp, {"g": 1.0, "gprime": 0.5 / delta}


def constant_coupling(value: float = 0.0):
    if value < 0:
        raise ValueError("coupling constant must be nonnegative")

    def g(r):
        return np.full(np.shape(r), float(value))

    def zero(r):
        return np.zeros(np.shape(r))

    return g, zero, zero, {"g": 0.0, "gprime": 0.0}


def double_well_part(a: float = 3.0):
    """``f2(r) = a*r*(1 - r)``, the concave part of the double well."""

    def f2(r):
        r = np.asarray(r, dtype=float)
        return a * r * (1 - r)

    def pi(r):
        return a * (1 - 2 * np.asarray(r, dtype=float))

    def dpi(r):
        return np.full(np.shape(r), -2.0 * a)

    return f2, pi, dpi, 2 * abs(a)


def quadratic_part(a: float = 1.0):
    def f2(r):
        return 0.5 * a * np.asarray(r, dtype=float) ** 2

    def pi(r):
        return a * np.asarray(r, dtype=float)

    def dpi(r):
        return np.full(np.shape(r), float(a))

    return f2, pi, dpi, abs(a)


def no_smooth_part():
    def zero(r):
        return np.zeros(np.shape(r))

    return zero, zero, zero, 0.0


# ---------------------------------------------------------------------------
# conductivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConductivitySpec:
    kappa: Callable
    kappa_r: Callable
    kappa_rr: Callable
    kmin: float
    kmax: float
    closed_form_K: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.kmin > 0:
            raise ValueError("conductivity lower bound must be positive")
        if not self.kmax >= self.kmin:
            raise ValueError("conductivity upper bound below lower bound")

    def K_family(self, m, r, rtol: float = 1e-10):
        """Vectorised ``(K, K1, K2)``; closed form when available."""
        m = np.asarray(m, dtype=float)
        r = np.asarray(r, dtype=float)
        if np.any(m < 0):
            raise ValueError("K family is defined for m >= 0")
        if self.closed_form_K is not None:
            K, K1, K2 = self.closed_form_K(m, r)
            return np.asarray(K, float), np.asarray(K1, float), np.asarray(K2, float)
        return _antiderivatives(self, m, r, rtol=rtol)

    def validate(self, m_samples=None, r_samples=None) -> list[str]:
        if m_samples is None:
            m_samples = np.linspace(0.0, 10.0, 41)
        if r_samples is None:
            r_samples = np.linspace(-5.0, 5.0, 41)
        mm, rr = np.meshgrid(m_samples, r_samples, indexing="ij")
        k = self.kappa(mm, rr)
        problems = []
        if np.any(k < self.kmin * (1 - 1e-12)) or np.any(k > self.kmax * (1 + 1e-12)):
            problems.append("kappa leaves [kmin, kmax] on the sample lattice")
        if np.any(np.abs(self.kappa_r(mm, rr)) > self.kmax * (1 + 1e-12)):
            problems.append("|d kappa/dr| exceeds kmax on the sample lattice")
        if np.any(np.abs(self.kappa_rr(mm, rr)) > self.kmax * (1 + 1e-12)):
            problems.append("|d2 kappa/dr2| exceeds kmax on the sample lattice")
        return problems


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _gl_panel(fns, a, b, r):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    s = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    rr = np.broadcast_to(r[:, None], s.shape)
    return [half * (fn(s, rr) @ _GL_WEIGHTS) for fn in fns]


def _antiderivatives(cond: ConductivitySpec, m, r, rtol=1e-10, max_depth=30):
    """Adaptive Gauss-Legendre for the three integrals over [0, m]."""
    m_b, r_b = np.broadcast_arrays(m, r)
    shape = m_b.shape
    fns = (cond.kappa, cond.kappa_r, cond.kappa_rr)
    out = np.zeros((3, m_b.size))
    owner = np.arange(m_b.size)
    a = np.zeros(m_b.size)
    b = m_b.reshape(-1).astype(float).copy()
    rv = r_b.reshape(-1).astype(float)
    for _ in range(max_depth + 1):
        if owner.size == 0:
            return tuple(out[i].reshape(shape) for i in range(3))
        whole = _gl_panel(fns, a, b, rv)
        mid = 0.5 * (a + b)
        left = _gl_panel(fns, a, mid, rv)
        right = _gl_panel(fns, mid, b, rv)
        ok = np.ones(owner.size, dtype=bool)
        fine = []
        for q1, ql, qr in zip(whole, left, right):
            q2 = ql + qr
            floor = 1e-15 * cond.kmax * (b - a)
            ok &= np.abs(q2 - q1) <= rtol * np.abs(q2) + floor
            fine.append(q2)
        for i in range(3):
            np.add.at(out[i], owner[ok], fine[i][ok])
        bad = ~ok
        owner = np.concatenate([owner[bad], owner[bad]])
        a, b = np.concatenate([a[bad], mid[bad]]), np.concatenate([mid[bad], b[bad]])
        rv = np.concatenate([rv[bad], rv[bad]])
    raise QuadratureFailure("adaptive quadrature exceeded its depth budget", depth=max_depth)


def constant_conductivity(value: float = 1.0) -> ConductivitySpec:
    def kappa(m, r):
        return np.full(np.broadcast(m, r).shape, float(value))

    def zero(m, r):
        return np.zeros(np.broadcast(m, r).shape)

    def closed(m, r):
        m = np.asarray(m, dtype=float)
        z = np.zeros(np.broadcast(m, r).shape)
        return value * m + z, z, z.copy()

    return ConductivitySpec(kappa, zero, zero, kmin=value, kmax=value,
                            closed_form_K=closed, name="const", params={"value": float(value)})


def demo_conductivity(amp: float = 0.5) -> ConductivitySpec:
    """``kappa(m, r) = 1 + amp*exp(-m)*cos(r)^2``; bounds 1 and 1 + amp (amp <= 1)."""

    def kappa(m, r):
        return 1.0 + amp * np.exp(-m) * np.cos(r) ** 2

    def kappa_r(m, r):
        return -amp * np.exp(-m) * np.sin(2 * r)

    def kappa_rr(m, r):
        return -2 * amp * np.exp(-m) * np.cos(2 * r)

    def closed(m, r):
        m = np.asarray(m, dtype=float)
        r = np.asarray(r, dtype=float)
        w = -np.expm1(-m)
        return m + amp * w * np.cos(r) ** 2, -amp * w * np.sin(2 * r), -2 * amp * w * np.cos(2 * r)

    kmax = max(1.0 + amp, 2 * amp)
    return ConductivitySpec(kappa, kappa_r, kappa_rr, kmin=1.0, kmax=kmax,
                            closed_form_K=closed, name="demo_exp_cos", params={"amp": float(amp)})


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def make_graph(name: str, **params) -> ScalarGraph:
    if name == "log":
        c = float(params.get("c", 1.0))
        if c <= 0:
            raise ValueError("log graph needs c > 0")
        return LogGraph(params={"c": c})
    if name == "obstacle":
        return ObstacleGraph()
    if name == "poly":
        c = float(params.get("c", 1.0))
        if c < 0:
            raise ValueError("poly graph needs c >= 0")
        return PolyGraph(params={"c": c})
    if name == "zero":
        return ZeroGraph()
    raise KeyError(f"unknown graph {name!r}")


def make_potential(graph: ScalarGraph, f2: str = "well", a: float = 3.0,
                   coupling: str = "smooth_id", delta: float = 0.1,
                   g0: float = 0.0) -> PotentialSpec:
    if f2 == "well":
        f2fn, pi, dpi, lpi = double_well_part(a)
    elif f2 == "quad":
        f2fn, pi, dpi, lpi = quadratic_part(a)
    elif f2 == "none":
        f2fn, pi, dpi, lpi = no_smooth_part()
    else:
        raise KeyError(f"unknown smooth part {f2!r}")
    if coupling == "smooth_id":
        if delta <= 0:
            raise ValueError("smoothing width must be positive")
        g, gp, gpp, lips = smooth_identity(delta)
    elif coupling == "const":
        g, gp, gpp, lips = constant_coupling(g0)
    else:
        raise KeyError(f"unknown coupling {coupling!r}")
    return PotentialSpec(
        graph=graph, f2=f2fn, pi=pi, dpi=dpi, g=g, gprime=gp, gsecond=gpp,
        lip_bounds={"pi": lpi, **lips},
        names={"graph": graph.kind, "graph_params": dict(graph.params), "f2": f2, "a": float(a),
               "coupling": coupling, "delta": float(delta), "g0": float(g0)},
    )


def make_conductivity(name: str, **params) -> ConductivitySpec:
    if name == "const":
        return constant_conductivity(float(params.get("value", 1.0)))
    if name == "demo_exp_cos":
        return demo_conductivity(float(params.get("amp", 0.5)))
    raise KeyError(f"unknown conductivity {name!r}")


GRAPHS = ("log", "obstacle", "poly", "zero")
COUPLINGS = ("smooth_id", "const")
CONDUCTIVITIES = ("const", "demo_exp_cos")
SMOOTH_PARTS = ("well", "quad", "none")


# ---------------------------------------------------------------------------
# scalar-friendly operations
# ---------------------------------------------------------------------------

def eval_f1(spec, x):
    """Convex part of the potential; ``+inf`` outside its domain."""
    graph = spec.graph if isinstance(spec, PotentialSpec) else spec
    return _scalar_or_array(graph.f1(x), x)


def beta_resolvent(graph: ScalarGraph, lam: float, x):
    if not lam > 0:
        raise ValueError("resolvent parameter must be positive")
    return _scalar_or_array(graph.resolvent(x, lam), x)


def yosida_eval(graph: ScalarGraph, eps: float, x):
    return _scalar_or_array(graph.yosida(x, eps), x)


def eval_K_family(cond: ConductivitySpec, m, r):
    if np.any(np.asarray(m) < 0):
        raise ValueError("K family is defined for m >= 0")
    K, K1, K2 = cond.K_family(m, r)
    if np.ndim(m) == 0 and np.ndim(r) == 0:
        return float(K), float(K1), float(K2)
    return K, K1, K2


def eval_coupling(spec: PotentialSpec, rho):
    return tuple(_scalar_or_array(fn(rho), rho) for fn in (spec.g, spec.gprime, spec.pi))
