"""Stationary Fokker-Planck system for a sticky diffusion on a network.

The process has generator ``mu f'' + b f'`` on each edge.  Its invariant
measure is ``m dx + sum_v eta_v T_v[m] delta_v`` where, on every edge,

    -mu m'' + (b m)' = 0,
    m|_alpha(v) / gamma_{v,alpha} = T_v[m]          (interior vertices),
    sum_alpha mu_alpha d_alpha m(v) - n_{v,alpha} b_alpha(v) m_alpha(v) = 0.

``d_alpha`` is the outward derivative and ``n_{v,alpha}`` the orientation sign.
The density with unit interior mass is computed once; the sticky mass split
then follows in closed form because the equations are linear in ``m``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray
from scipy.integrate import simpson
from scipy.interpolate import BPoly

from .errors import DomainError, PositivityError, SolverError
from .network import (
    EdgeField,
    GraphMeasure,
    Network,
    derivative,
    endpoint_slope,
    quadrature,
    trace_ratio,
    trapezoid_weights,
)
from .report import SolveReport

TAU_POS = 1e-10
TAU_DOM = 1e-8


@dataclass(frozen=True, eq=False)
class FPSolution:
    measure: GraphMeasure
    theta_star: float  # interior mass
    traces: dict[int, float]  # T_v[m] of the returned density
    report: SolveReport


def _offsets(net: Network) -> NDArray[np.int64]:
    return np.concatenate([[0], np.cumsum([e.n_points for e in net.edges])]).astype(np.int64)


def _pinned_vertex(net: Network) -> int:
    interior = net.interior_vertices
    return interior[0] if interior else net.boundary_vertices[0]


def assemble(b: EdgeField, net: Network) -> tuple[sp.csr_matrix, NDArray[np.float64]]:
    """Sparse system for the unit-mass density; the flux row of one vertex carries the mass constraint."""
    off = _offsets(net)
    size = int(off[-1])
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    def put(r: int, c: int, v: float) -> None:
        rows.append(r)
        cols.append(c)
        vals.append(v)

    row = 0
    for a, e in enumerate(net.edges):
        h, mu, ba = e.h, e.mu, b[a]
        o = int(off[a])
        for j in range(1, e.n_points - 1):
            put(row, o + j - 1, mu / h**2 + ba[j - 1] / (2 * h))
            put(row, o + j, -2.0 * mu / h**2)
            put(row, o + j + 1, mu / h**2 - ba[j + 1] / (2 * h))
            row += 1

    rhs = np.zeros(size)
    pinned = _pinned_vertex(net)
    for v, vert in enumerate(net.vertices):
        incs = net.incidence[v]
        if not vert.is_boundary:
            first = incs[0]
            g0 = vert.gamma[first.edge]
            for inc in incs[1:]:
                put(row, _node(off, net, inc.edge, inc.end), 1.0 / vert.gamma[inc.edge])
                put(row, _node(off, net, first.edge, first.end), -1.0 / g0)
                row += 1
        if v == pinned:
            w = trapezoid_weights(net)
            for k in np.flatnonzero(w):
                put(row, int(k), float(w[k]))
            rhs[row] = 1.0
        else:
            for inc in incs:
                e = net.edges[inc.edge]
                h, mu = e.h, e.mu
                c = _slope_cols(off, net, inc.edge, inc.end)
                coef = (-3.0, 4.0, -1.0) if inc.end == 0 else (3.0, -4.0, 1.0)
                for col, k in zip(c, coef):
                    put(row, col, inc.sign * mu * k / (2 * h))
                put(row, c[0], -inc.sign * float(b[inc.edge][inc.end]))
        row += 1
    if row != size:
        raise SolverError(f"internal assembly error: {row} rows for {size} unknowns")
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    return mat, rhs


def _node(off: NDArray[np.int64], net: Network, a: int, end: int) -> int:
    return int(off[a]) if end == 0 else int(off[a]) + net.edges[a].n_points - 1


def _slope_cols(off: NDArray[np.int64], net: Network, a: int, end: int) -> tuple[int, int, int]:
    o, n = int(off[a]), net.edges[a].n_points
    return (o, o + 1, o + 2) if end == 0 else (o + n - 1, o + n - 2, o + n - 3)


def solve_unit_mass(b: EdgeField, net: Network, report: SolveReport | None = None) -> EdgeField:
    """Density ``m1`` with unit interior mass solving the stationary equations for drift ``b``.

    Raises :class:`SolverError` on a singular system and :class:`PositivityError`
    when the solution dips below ``-TAU_POS * max|m|``.  Smaller undershoots
    are clamped to zero and the mass renormalized.
    """
    if not b.matches(net):
        raise ValueError("drift field does not match the network grid")
    if not all(np.all(np.isfinite(v)) for v in b):
        raise ValueError("drift must be finite")
    mat, rhs = assemble(b, net)
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(mat.tocsc(), rhs)
        except (spla.MatrixRankWarning, RuntimeError) as exc:
            raise SolverError(f"singular Fokker-Planck system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("singular Fokker-Planck system (non-finite solution)")
    scale = float(np.max(np.abs(x)))
    tau = TAU_POS * scale
    low = float(np.min(x))
    if low < -tau:
        raise PositivityError(
            f"density undershoot {low:.3e} below -{tau:.1e}; refine the grid (cell Peclet number too large)"
        )
    if report is not None:
        report.achieved["min_density"] = low
        if low <= 0.0:
            report.warn("density not strictly positive")
    if low < 0.0:
        x = np.maximum(x, 0.0)
        x = x / float(trapezoid_weights(net) @ x)
    return EdgeField.from_flat(net, x)


def solve_stationary(b: EdgeField, net: Network) -> FPSolution:
    """Invariant measure of the sticky diffusion with drift ``b``.

    With ``S = sum_v eta_v T_v[m1]`` the interior mass is ``1 / (1 + S)``, the
    density ``m1 / (1 + S)`` and the atom at ``v`` is ``eta_v T_v[m1] / (1 + S)``.
    """
    t0 = time.perf_counter()
    report = SolveReport("fokker_planck")
    m1 = solve_unit_mass(b, net, report)
    t1 = {v: trace_ratio(m1, v, net) for v in net.interior_vertices}
    s = sum(net.vertices[v].eta * t for v, t in t1.items())
    theta = 1.0 / (1.0 + s)
    density = m1 * theta
    atoms = {v: net.vertices[v].eta * theta * t for v, t in t1.items()}
    traces = {v: theta * t for v, t in t1.items()}
    measure = GraphMeasure(density, atoms)
    mass = measure.total_mass(net)
    report.iterations = 1
    report.converged = True
    report.achieved["mass_error"] = abs(mass - 1.0)
    report.achieved["interior_mass"] = theta
    report.wall_time = time.perf_counter() - t0
    return FPSolution(measure, theta, traces, report)


def weak_form_residual(m: EdgeField, b: EdgeField, phi: EdgeField, net: Network) -> float:
    """``int mu m' phi' - b m phi' dx`` for a test field ``phi`` continuous at the vertices."""
    dm, dphi = derivative(m, net), derivative(phi, net)
    integrand = EdgeField(tuple(e.mu * dm[a] * dphi[a] - b[a] * m[a] * dphi[a] for a, e in enumerate(net.edges)))
    return quadrature(integrand, net)


def h1_norm(m: EdgeField, net: Network) -> float:
    dm = derivative(m, net)
    return float(np.sqrt(quadrature(m * m, net) + quadrature(dm * dm, net)))


def l1_norm(m: EdgeField, net: Network) -> float:
    return quadrature(m.map(np.abs), net)


# ---------------------------------------------------------------------------
# generator duality


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Grid samples of a per-edge smooth function and its first two s-derivatives."""

    __test__ = False  # not a pytest class

    values: EdgeField
    d1: EdgeField
    d2: EdgeField

    def generator(self, b: EdgeField, net: Network) -> EdgeField:
        """``G f = mu f'' + b f'`` on every grid node."""
        return EdgeField(tuple(e.mu * self.d2[a] + b[a] * self.d1[a] for a, e in enumerate(net.edges)))

    def outward(self, v: int, alpha: int, net: Network) -> float:
        inc = net.incidence_of(v, alpha)
        return inc.sign * float(self.d1[alpha][inc.end])

    def with_d1(self, d1: EdgeField) -> TestFunction:
        return replace(self, d1=d1)


def make_test_function(seed: int, net: Network, drift: EdgeField | None = None) -> TestFunction:
    """Random element of the discrete generator domain for drift ``drift`` (zero by default).

    Each edge carries the quintic matching prescribed value, slope and
    curvature at both ends plus a random interior bump ``t^3 (1-t)^3``.  The
    vertex data are chosen so that ``f`` is single-valued, ``G f`` agrees
    across edges, ``eta_v G f(v) + sum mu gamma d_alpha f(v) = 0`` at interior
    vertices and ``d_alpha f = 0`` at boundary vertices.  The conditions are
    homogeneous, so the result is rescaled to ``max |f| = 1``.
    """
    b = drift if drift is not None else EdgeField.zeros(net)
    rng = np.random.default_rng(seed)
    n_e = net.n_edges
    end_val = np.zeros((n_e, 2))
    end_d1 = np.zeros((n_e, 2))
    end_d2 = np.zeros((n_e, 2))
    for v, vert in enumerate(net.vertices):
        incs = net.incidence[v]
        fv = rng.normal()
        if vert.is_boundary:
            slopes = np.zeros(len(incs))
            g = rng.normal()
        else:
            slopes = rng.normal(size=len(incs))
            w = np.array([net.edges[i.edge].mu * vert.gamma[i.edge] for i in incs])
            if vert.eta > 0:
                g = -float(w @ slopes) / vert.eta
            else:
                slopes = slopes - (w @ slopes) / (w @ w) * w
                g = rng.normal()
        for inc, s in zip(incs, slopes):
            k = 0 if inc.end == 0 else 1
            d1 = inc.sign * s
            end_val[inc.edge, k] = fv
            end_d1[inc.edge, k] = d1
            end_d2[inc.edge, k] = (g - b[inc.edge][inc.end] * d1) / net.edges[inc.edge].mu
    vals, d1s, d2s = [], [], []
    for a, e in enumerate(net.edges):
        s = e.grid()
        L = e.length
        poly = BPoly.from_derivatives(
            [0.0, L],
            [[end_val[a, 0], end_d1[a, 0], end_d2[a, 0]], [end_val[a, 1], end_d1[a, 1], end_d2[a, 1]]],
        )
        c = rng.normal()
        t = s / L
        bump = c * t**3 * (1 - t) ** 3
        dbump = c / L * (3 * t**2 * (1 - t) ** 3 - 3 * t**3 * (1 - t) ** 2)
        d2bump = c / L**2 * (6 * t * (1 - t) ** 3 - 18 * t**2 * (1 - t) ** 2 + 6 * t**3 * (1 - t))
        vals.append(poly(s) + bump)
        d1s.append(poly.derivative(1)(s) + dbump)
        d2s.append(poly.derivative(2)(s) + d2bump)
    scale = 1.0 / max(float(np.max(np.abs(v))) for v in vals)
    return TestFunction(
        EdgeField(tuple(v * scale for v in vals)),
        EdgeField(tuple(v * scale for v in d1s)),
        EdgeField(tuple(v * scale for v in d2s)),
    )


def domain_defect(f: TestFunction, b: EdgeField, net: Network) -> float:
    """Largest violation of the generator-domain conditions, relative to the field size."""
    gf = f.generator(b, net)
    scale = 1.0 + f.values.max_abs() + f.d1.max_abs() + gf.max_abs()
    worst = 0.0
    for v, vert in enumerate(net.vertices):
        incs = net.incidence[v]
        vals = [f.values.endpoint(i) for i in incs]
        worst = max(worst, max(vals) - min(vals))
        outward = [f.outward(v, i.edge, net) for i in incs]
        if vert.is_boundary:
            worst = max(worst, abs(outward[0]))
            continue
        gvals = [gf.endpoint(i) for i in incs]
        worst = max(worst, max(gvals) - min(gvals))
        flux = sum(net.edges[i.edge].mu * vert.gamma[i.edge] * d for i, d in zip(incs, outward))
        worst = max(worst, abs(vert.eta * float(np.mean(gvals)) + flux))
    return worst / scale


def duality_residual(
    f: TestFunction, sol: FPSolution, b: EdgeField, net: Network, tol: float = TAU_DOM
) -> float:
    """``|int G f d(measure)|``: zero for the exact invariant measure, O(h^2) on the grid.

    ``G f`` is known exactly at the nodes, so the edge integral uses Simpson's
    rule; the residual then measures the density error, not quadrature error.
    """
    defect = domain_defect(f, b, net)
    if defect > tol:
        raise DomainError(f"test function violates the generator domain (defect {defect:.3e} > {tol:.1e})")
    gf = f.generator(b, net)
    dens = sol.measure.density
    total = float(sum(simpson(gf[a] * dens[a], dx=e.h) for a, e in enumerate(net.edges)))
    for v, atom in sol.measure.atoms.items():
        gv = float(np.mean([gf.endpoint(i) for i in net.incidence[v]]))
        total += atom * gv
    return abs(total)


def vertex_flux_residual(m: EdgeField, b: EdgeField, net: Network) -> dict[int, float]:
    """Discrete flux balance ``sum mu d_alpha m - n b m`` at every vertex."""
    out = {}
    for v in range(net.n_vertices):
        total = 0.0
        for inc in net.incidence[v]:
            e = net.edges[inc.edge]
            slope = inc.sign * endpoint_slope(m[inc.edge], e.h, inc.end)
            total += e.mu * slope - inc.sign * b[inc.edge][inc.end] * m[inc.edge][inc.end]
        out[v] = total
    return out
