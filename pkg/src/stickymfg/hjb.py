"""Discounted and ergodic HJB equations with generalized Kirchhoff conditions.

Discounted problem, on every edge and at every interior vertex ``v``::

    -mu u'' + H(x, u') + lam u = F,
    sum_alpha mu_alpha gamma_{v,alpha} d_alpha u(v) + eta_v lam u(v) = eta_v theta_v,

with ``u`` continuous at vertices and ``d_alpha u = 0`` at boundary vertices.

Discretization
--------------
Interior nodes use centered differences for ``u''`` and for the gradient in
``H``, switching per node to the upwind one-sided gradient (in the direction
of the optimal drift ``-dH/dp``) when the cell Peclet number ``|H_p| h / mu``
exceeds one.  Outward vertex derivatives use the half-cell balance

    d_alpha u(v) ~ (u(v) - u_1) / h + h / (2 mu) (H(x_v, p_v) + lam u(v) - F(v)),

with ``p_v`` the one-sided slope.  It is second order and keeps every row
monotone, so the discrete scheme inherits the comparison principle.

The solver follows the existence argument: for given vertex values ``z`` every
edge is an independent two-point problem (Dirichlet at interior vertices,
Neumann at boundary vertices), and ``z`` is found by Newton's method on the
junction residuals.  A monolithic Newton solve over all nodes is available
as ``method="global"`` and is used as a cross-check.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray
from scipy.linalg import solve_banded

from .errors import NotAdmissibleError, SolverError
from .hamiltonian import HamiltonianModel
from .network import EdgeField, Network, derivative, outward_derivative, quadrature, vertex_value
from .report import SolveReport

Array = NDArray[np.float64]

TAU_NEWTON = 1e-10
TAU_JUNCTION = 1e-8
TAU_ERGO = 1e-6
MAX_NEWTON = 50
BOUND_SLACK = 1e-6
_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# local operators


def _interior(alpha: int, u: Array, lam: float, F: Array, H: HamiltonianModel, net: Network):
    """Residual and tridiagonal Jacobian of the interior rows of one edge."""
    e = net.edges[alpha]
    h, mu = e.h, e.mu
    x = e.grid()[1:-1]
    um, u0, up = u[:-2], u[1:-1], u[2:]
    pc = (up - um) / (2 * h)
    g = H.grad(alpha, x, pc)
    upwind = np.abs(g) * h > mu
    fwd = upwind & (g < 0)
    bwd = upwind & (g >= 0)
    p = np.where(fwd, (up - u0) / h, np.where(bwd, (u0 - um) / h, pc))
    hv = H.eval(alpha, x, p)
    hp = H.grad(alpha, x, p)
    cl = np.where(fwd, 0.0, np.where(bwd, -1.0 / h, -0.5 / h))
    cc = np.where(fwd, -1.0 / h, np.where(bwd, 1.0 / h, 0.0))
    cr = np.where(fwd, 1.0 / h, np.where(bwd, 0.0, 0.5 / h))
    res = -mu * (up - 2 * u0 + um) / h**2 + hv + lam * u0 - F[1:-1]
    sub = -mu / h**2 + hp * cl
    diag = 2 * mu / h**2 + lam + hp * cc
    sup = -mu / h**2 + hp * cr
    return res, sub, diag, sup


def _end_flux(alpha: int, end: int, u: Array, lam: float, F: Array, H: HamiltonianModel, net: Network,
              neumann: bool = False) -> tuple[float, float, float]:
    """Outward derivative at one end and its partials w.r.t. the end value and its neighbour."""
    e = net.edges[alpha]
    h, mu = e.h, e.mu
    sign = -1.0 if end == 0 else 1.0
    iv, inb = (0, 1) if end == 0 else (-1, -2)
    x = e.grid()[iv]
    p = 0.0 if neumann else sign * (u[iv] - u[inb]) / h
    hv = float(H.eval(alpha, x, p))
    hp = 0.0 if neumann else float(H.grad(alpha, x, p))
    d = (u[iv] - u[inb]) / h + h / (2 * mu) * (hv + lam * u[iv] - F[iv])
    d_v = 1.0 / h + h / (2 * mu) * (sign * hp / h + lam)
    d_nb = -1.0 / h - sign * hp / (2 * mu)
    return float(d), float(d_v), float(d_nb)


def _residual_floor(net: Network, lam: float, scale: float) -> float:
    """Attainable residual in double precision for rows of size ``mu/h^2``."""
    stiff = max(4 * e.mu / e.h**2 for e in net.edges) + lam
    return 64 * _EPS * stiff * (1.0 + scale)


# ---------------------------------------------------------------------------
# per-edge two-point problems


@dataclass(frozen=True, eq=False)
class EdgeBVPResult:
    u: Array
    iterations: int
    residual: float
    jacobian: Array  # banded (1, 1) storage at the solution


def _edge_system(alpha: int, u: Array, z: tuple[float | None, float | None], lam: float, F: Array,
                 H: HamiltonianModel, net: Network) -> tuple[Array, Array]:
    e = net.edges[alpha]
    n = e.n_points
    res = np.empty(n)
    ab = np.zeros((3, n))
    r, sub, diag, sup = _interior(alpha, u, lam, F, H, net)
    res[1:-1] = r
    ab[1, 1:-1] = diag
    ab[2, :-2] = sub
    ab[0, 2:] = sup
    for end, zval in ((0, z[0]), (-1, z[1])):
        i, nb = (0, 1) if end == 0 else (n - 1, n - 2)
        if zval is None:
            d, d_v, d_nb = _end_flux(alpha, end, u, lam, F, H, net, neumann=True)
            s = 2 * e.mu / e.h
            res[i] = s * d
            ab[1, i] = s * d_v
            ab[1 + i - nb, nb] = s * d_nb
        else:
            res[i] = u[i] - zval
            ab[1, i] = 1.0
            ab[1 + i - nb, nb] = 0.0
    return res, ab


def solve_edge_bvp(
    alpha: int,
    z: tuple[float | None, float | None],
    lam: float,
    F: EdgeField | Array,
    H: HamiltonianModel,
    net: Network,
    u_init: Array | None = None,
    tol: float = TAU_NEWTON,
    max_iter: int = MAX_NEWTON,
) -> EdgeBVPResult:
    """Newton solve of ``-mu u'' + H(x, u') + lam u = F`` on edge ``alpha``.

    ``z = (z_tail, z_head)``: a number imposes a Dirichlet value at that end,
    ``None`` the homogeneous Neumann condition.  Armijo backtracking on the
    sup-norm residual; raises :class:`SolverError` after ``max_iter`` steps.
    """
    if not lam > 0:
        raise ValueError("discount lam must be > 0")
    f = np.asarray(F[alpha] if isinstance(F, EdgeField) else F, dtype=float)
    e = net.edges[alpha]
    u = np.zeros(e.n_points) if u_init is None else np.array(u_init, dtype=float)
    if z[0] is not None:
        u[0] = z[0]
    if z[1] is not None:
        u[-1] = z[1]
    res, ab = _edge_system(alpha, u, z, lam, f, H, net)
    r = float(np.max(np.abs(res)))
    for it in range(max_iter + 1):
        target = max(tol, _residual_floor(net, lam, float(np.max(np.abs(u)))))
        if r <= target:
            return EdgeBVPResult(u, it, r, ab)
        if it == max_iter:
            break
        du = solve_banded((1, 1), ab, -res)
        t = 1.0
        while True:
            trial = u + t * du
            res_t, ab_t = _edge_system(alpha, trial, z, lam, f, H, net)
            r_t = float(np.max(np.abs(res_t)))
            if r_t <= (1 - 1e-4 * t) * r or t < 1e-3:
                break
            t *= 0.5
        u, res, ab, r = trial, res_t, ab_t, r_t
    raise SolverError(f"edge {e.id!r}: Newton did not converge (residual {r:.3e})", residual=r, iteration=max_iter)


# ---------------------------------------------------------------------------
# discounted problem


@dataclass(frozen=True, eq=False)
class DiscountedSolution:
    u: EdgeField
    lam: float
    z: dict[int, float]  # values at interior vertices
    report: SolveReport


def _theta(theta: Mapping[int, float] | None, net: Network) -> dict[int, float]:
    if theta is None:
        return {v: net.vertices[v].theta for v in net.interior_vertices}
    return {v: float(theta.get(v, 0.0)) for v in net.interior_vertices}


def sup_bound_constant(F: EdgeField, theta: Mapping[int, float], H: HamiltonianModel, net: Network) -> float:
    """``C1 = max(|F|_inf + |H(., 0)|_inf, max |theta_v|)``: a bound for ``|lam u|_inf``."""
    h0 = max(float(np.max(np.abs(H.eval(a, e.grid(), np.zeros(e.n_points))))) for a, e in enumerate(net.edges))
    th = max((abs(t) for t in theta.values()), default=0.0)
    return max(F.max_abs() + h0, th)


def _ends(alpha: int, z: Mapping[int, float], net: Network) -> tuple[float | None, float | None]:
    e = net.edges[alpha]
    return z.get(e.tail), z.get(e.head)


def junction_fluxes(u: EdgeField, v: int, lam: float, F: EdgeField, H: HamiltonianModel, net: Network
                    ) -> float:
    """``sum_alpha mu gamma d_alpha u(v)`` with the scheme's half-cell derivative."""
    vert = net.vertices[v]
    total = 0.0
    for inc in net.incidence[v]:
        d, _, _ = _end_flux(inc.edge, inc.end, u[inc.edge], lam, F[inc.edge], H, net)
        total += net.edges[inc.edge].mu * vert.gamma[inc.edge] * d
    return total


def solve_discounted(
    lam: float,
    F: EdgeField,
    theta: Mapping[int, float] | None,
    H: HamiltonianModel,
    net: Network,
    method: str = "vertex",
    u_init: EdgeField | None = None,
    tol_newton: float = TAU_NEWTON,
    tol_junction: float = TAU_JUNCTION,
    max_iter: int = MAX_NEWTON,
    check_bound: bool = True,
) -> DiscountedSolution:
    """Solve the discounted HJB problem with discount ``lam > 0``.

    ``theta`` maps interior vertex index to the vertex cost (defaults to the
    network's own ``theta``).  ``method`` is ``"vertex"`` (edge problems plus
    Newton on vertex values) or ``"global"`` (one Newton solve on all nodes).
    After the solve the sup bound ``|lam u| <= C1`` is checked.
    """
    if not lam > 0:
        raise ValueError("discount lam must be > 0")
    if not F.matches(net):
        raise ValueError("F does not match the network grid")
    t0 = time.perf_counter()
    th = _theta(theta, net)
    report = SolveReport(f"hjb_discounted[{method}]")
    if method == "vertex":
        u, z = _solve_vertex(lam, F, th, H, net, u_init, tol_newton, tol_junction, max_iter, report)
    elif method == "global":
        u, z = _solve_global(lam, F, th, H, net, u_init, tol_newton, tol_junction, max_iter, report)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = hjb_residuals(u, F, th, H, net, lam=lam)
    report.achieved.update(res)
    c1 = sup_bound_constant(F, th, H, net)
    bound = lam * u.max_abs()
    report.achieved["sup_bound_C1"] = c1
    report.achieved["sup_lam_u"] = bound
    report.converged = True
    report.wall_time = time.perf_counter() - t0
    if check_bound and bound > c1 + BOUND_SLACK:
        raise SolverError(f"sup bound violated: |lam u| = {bound:.6e} > C1 = {c1:.6e}", residual=bound - c1)
    return DiscountedSolution(u, float(lam), z, report)


def _solve_vertex(lam, F, th, H, net, u_init, tol_newton, tol_junction, max_iter, report):
    interior = net.interior_vertices
    pos = {v: i for i, v in enumerate(interior)}
    c1 = sup_bound_constant(F, th, H, net) + 1.0
    box = max(c1 / lam, c1)
    us: list[Array | None] = [None if u_init is None else np.array(u_init[a]) for a in range(net.n_edges)]
    if u_init is not None:
        z = np.array([vertex_value(u_init, v, net) for v in interior])
    else:
        z = np.zeros(len(interior))

    def phi(zv: Array) -> list[EdgeBVPResult]:
        zmap = {v: float(zv[pos[v]]) for v in interior}
        out = []
        for a in range(net.n_edges):
            r = solve_edge_bvp(a, _ends(a, zmap, net), lam, F, H, net, us[a], tol_newton, max_iter)
            out.append(r)
        return out

    def psi(sols: list[EdgeBVPResult], zv: Array) -> Array:
        field = EdgeField(tuple(s.u for s in sols))
        out = np.empty(len(interior))
        for v in interior:
            eta = net.vertices[v].eta
            out[pos[v]] = eta * lam * zv[pos[v]] + junction_fluxes(field, v, lam, F, H, net) - eta * th[v]
        return out

    sols = phi(z)
    ps = psi(sols, z)
    total_newton = sum(s.iterations for s in sols)
    for it in range(max_iter + 1):
        r = float(np.max(np.abs(ps))) if len(ps) else 0.0
        report.residual_history.append(r)
        scale = max(float(np.max(np.abs(s.u))) for s in sols)
        floor = 64 * _EPS * max(e.mu / e.h for e in net.edges) * (1 + scale) * max(1, len(interior))
        if r <= max(tol_junction, floor):
            report.iterations = it
            report.extra["edge_newton_iterations"] = total_newton
            u = EdgeField(tuple(s.u for s in sols))
            return u, {v: float(z[pos[v]]) for v in interior}
        if it == max_iter:
            break
        jac = _vertex_jacobian(sols, z, lam, F, H, net, pos)
        dz = np.linalg.solve(jac, -ps)
        t = 1.0
        while True:
            zt = np.clip(z + t * dz, -box, box)
            for a, s in enumerate(sols):
                us[a] = s.u
            sols_t = phi(zt)
            ps_t = psi(sols_t, zt)
            total_newton += sum(s.iterations for s in sols_t)
            if float(np.max(np.abs(ps_t))) <= (1 - 1e-4 * t) * r or t < 1e-3:
                break
            t *= 0.5
        z, sols, ps = zt, sols_t, ps_t
    raise SolverError(f"junction Newton stagnated (residual {r:.3e})", residual=r, iteration=max_iter)


def _vertex_jacobian(sols, z, lam, F, H, net, pos) -> Array:
    """Exact derivative of the junction residuals w.r.t. vertex values.

    Sensitivities of the edge solutions to their Dirichlet data come from
    the edge Jacobians: ``du/dz_end = J^{-1} e_end``.
    """
    n = len(pos)
    jac = np.zeros((n, n))
    sens: dict[tuple[int, int], Array] = {}
    for a, s in enumerate(sols):
        e = net.edges[a]
        for end, v in ((0, e.tail), (-1, e.head)):
            if v in pos:
                rhs = np.zeros(e.n_points)
                rhs[0 if end == 0 else -1] = 1.0
                sens[(a, end)] = solve_banded((1, 1), s.jacobian, rhs)
    for v, i in pos.items():
        vert = net.vertices[v]
        jac[i, i] += vert.eta * lam
        for inc in net.incidence[v]:
            a = inc.edge
            e = net.edges[a]
            w = e.mu * vert.gamma[a]
            _, d_v, d_nb = _end_flux(a, inc.end, sols[a].u, lam, F[a], H, net)
            jac[i, i] += w * d_v
            nb = 1 if inc.end == 0 else e.n_points - 2
            for end, other in ((0, e.tail), (-1, e.head)):
                if other in pos:
                    jac[i, pos[other]] += w * d_nb * sens[(a, end)][nb]
    return jac


def _offsets(net: Network) -> NDArray[np.int64]:
    return np.concatenate([[0], np.cumsum([e.n_points for e in net.edges])]).astype(np.int64)


def _global_system(u: EdgeField, lam: float, F: EdgeField, th: Mapping[int, float], H: HamiltonianModel,
                   net: Network) -> tuple[Array, sp.csr_matrix, NDArray[np.bool_]]:
    """Residual vector, sparse Jacobian and a mask of junction rows for all nodes."""
    off = _offsets(net)
    size = int(off[-1])
    res = np.empty(size)
    junction = np.zeros(size, dtype=bool)
    rows: list[Array] = []
    cols: list[Array] = []
    vals: list[Array] = []
    for a, e in enumerate(net.edges):
        o = int(off[a])
        r, sub, diag, sup = _interior(a, u[a], lam, F[a], H, net)
        j = np.arange(1, e.n_points - 1) + o
        res[j] = r
        rows += [j, j, j]
        cols += [j - 1, j, j + 1]
        vals += [sub, diag, sup]

    def node(inc) -> tuple[int, int]:
        o, n = int(off[inc.edge]), net.edges[inc.edge].n_points
        return (o, o + 1) if inc.end == 0 else (o + n - 1, o + n - 2)

    er: list[int] = []
    ec: list[int] = []
    ev: list[float] = []
    for v, vert in enumerate(net.vertices):
        incs = net.incidence[v]
        if vert.is_boundary:
            inc = incs[0]
            e = net.edges[inc.edge]
            i, nb = node(inc)
            d, d_v, d_nb = _end_flux(inc.edge, inc.end, u[inc.edge], lam, F[inc.edge], H, net, neumann=True)
            s = 2 * e.mu / e.h
            res[i] = s * d
            er += [i, i]
            ec += [i, nb]
            ev += [s * d_v, s * d_nb]
            continue
        i0, _ = node(incs[0])
        u0 = u.endpoint(incs[0])
        for inc in incs[1:]:
            i, _ = node(inc)
            res[i] = u.endpoint(inc) - u0
            er += [i, i]
            ec += [i, i0]
            ev += [1.0, -1.0]
        total = vert.eta * lam * u0 - vert.eta * th[v]
        er.append(i0)
        ec.append(i0)
        ev.append(vert.eta * lam)
        for inc in incs:
            e = net.edges[inc.edge]
            w = e.mu * vert.gamma[inc.edge]
            d, d_v, d_nb = _end_flux(inc.edge, inc.end, u[inc.edge], lam, F[inc.edge], H, net)
            total += w * d
            i, nb = node(inc)
            er += [i0, i0]
            ec += [i, nb]
            ev += [w * d_v, w * d_nb]
        res[i0] = total
        junction[i0] = True
    rows.append(np.array(er, dtype=np.int64))
    cols.append(np.array(ec, dtype=np.int64))
    vals.append(np.array(ev))
    jac = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
    return res, jac, junction


def _solve_global(lam, F, th, H, net, u_init, tol_newton, tol_junction, max_iter, report):
    u = EdgeField.zeros(net) if u_init is None else u_init
    flat = u.flat().copy()
    res, jac, jmask = _global_system(u, lam, F, th, H, net)

    def done(res: Array, scale: float) -> tuple[bool, float]:
        rp = float(np.max(np.abs(res[~jmask])))
        rj = float(np.max(np.abs(res[jmask]))) if jmask.any() else 0.0
        ok = rp <= max(tol_newton, _residual_floor(net, lam, scale)) and rj <= max(
            tol_junction, 64 * _EPS * max(e.mu / e.h for e in net.edges) * (1 + scale))
        return ok, max(rp, rj)

    for it in range(max_iter + 1):
        ok, r = done(res, float(np.max(np.abs(flat))))
        report.residual_history.append(r)
        if ok:
            report.iterations = it
            u = EdgeField.from_flat(net, flat)
            return u, {v: vertex_value(u, v, net) for v in net.interior_vertices}
        if it == max_iter:
            break
        du = spla.spsolve(jac.tocsc(), -res)
        r0 = float(np.max(np.abs(res)))
        t = 1.0
        while True:
            trial = flat + t * du
            res_t, jac_t, _ = _global_system(EdgeField.from_flat(net, trial), lam, F, th, H, net)
            if float(np.max(np.abs(res_t))) <= (1 - 1e-4 * t) * r0 or t < 1e-3:
                break
            t *= 0.5
        flat, res, jac = trial, res_t, jac_t
    raise SolverError(f"global HJB Newton did not converge (residual {r:.3e})", residual=r, iteration=max_iter)


# ---------------------------------------------------------------------------
# residual diagnostics


def hjb_residuals(u: EdgeField, F: EdgeField, theta: Mapping[int, float] | None, H: HamiltonianModel,
                  net: Network, lam: float = 0.0, rho: float = 0.0) -> dict[str, float]:
    """Sup-norm residuals of the discrete equations (``lam u + rho`` is the zeroth-order term).

    ``pde``: interior rows; ``junction``: generalized Kirchhoff rows;
    ``boundary``: Neumann rows; ``continuity``: largest trace jump.
    """
    th = _theta(theta, net)
    Fs = F - rho
    pde = 0.0
    for a in range(net.n_edges):
        r, _, _, _ = _interior(a, u[a], lam, Fs[a], H, net)
        pde = max(pde, float(np.max(np.abs(r))))
    junction = 0.0
    boundary = 0.0
    cont = 0.0
    for v, vert in enumerate(net.vertices):
        incs = net.incidence[v]
        if vert.is_boundary:
            d, _, _ = _end_flux(incs[0].edge, incs[0].end, u[incs[0].edge], lam, Fs[incs[0].edge], H, net,
                                neumann=True)
            boundary = max(boundary, abs(d))
            continue
        vals = [u.endpoint(i) for i in incs]
        cont = max(cont, max(vals) - min(vals))
        uv = float(np.mean(vals))
        r = junction_fluxes(u, v, lam, Fs, H, net) + vert.eta * (lam * uv + rho - th[v])
        junction = max(junction, abs(r))
    return {"pde": pde, "junction": junction, "boundary": boundary, "continuity": cont}


def junction_residuals_one_sided(u: EdgeField, theta: Mapping[int, float] | None, net: Network,
                                 lam: float = 0.0, rho: float = 0.0) -> dict[int, float]:
    """Junction residuals with the three-point one-sided outward derivative of the grid field."""
    th = _theta(theta, net)
    out = {}
    for v in net.interior_vertices:
        vert = net.vertices[v]
        flux = sum(net.edges[i.edge].mu * vert.gamma[i.edge] * outward_derivative(u, v, i.edge, net)
                   for i in net.incidence[v])
        out[v] = flux + vert.eta * (lam * vertex_value(u, v, net) + rho - th[v])
    return out


def gradient_lq_norm(u: EdgeField, q: float, net: Network) -> float:
    du = derivative(u, net)
    return float(quadrature(du.map(lambda d: np.abs(d) ** q), net) ** (1.0 / q))


# ---------------------------------------------------------------------------
# ergodic problem


@dataclass(frozen=True, eq=False)
class ErgodicSolution:
    u: EdgeField
    rho: float
    report: SolveReport


def _extrapolate(seq: list) -> object:
    """Three-level Richardson for errors ``a lam + b lam^2`` with ``lam`` halving."""
    return (seq[-3] - 6 * seq[-2] + 8 * seq[-1]) / 3


def solve_ergodic(
    F: EdgeField,
    theta: Mapping[int, float] | None,
    H: HamiltonianModel,
    net: Network,
    k0: int = 0,
    k_max: int = 40,
    k_min: int = 8,
    tol: float = TAU_ERGO,
    u_init: EdgeField | None = None,
    method: str = "vertex",
    tol_newton: float = TAU_NEWTON,
    tol_junction: float = TAU_JUNCTION,
) -> ErgodicSolution:
    """Ergodic pair ``(u, rho)`` by vanishing discount with ``lam_k = 2^-k``.

    Each discounted problem is solved for the shifted data ``F - r``,
    ``theta - r`` with ``r`` the current estimate of ``rho``; the solution
    ``w`` of the shifted problem gives ``rho_k = r + lam_k mean(w)`` and
    ``u_k = w - mean(w)``.  Both sequences are Richardson-extrapolated over
    the last three levels; iteration stops once consecutive extrapolated
    values agree to ``tol`` (and ``k >= k_min``).
    """
    t0 = time.perf_counter()
    th = _theta(theta, net)
    L = net.total_length
    report = SolveReport(f"hjb_ergodic[{method}]")
    r_est = quadrature(F, net) / L
    warm = None
    if u_init is not None:
        warm = u_init - quadrature(u_init, net) / L
    rho_raw: list[float] = []
    us: list[Array] = []
    rho_ex: list[float] = []
    u_ex: list[Array] = []
    lams: list[float] = []
    inner = 0
    # inner solves must be well below the requested tolerance (floors still apply)
    tol_newton = min(tol_newton, 1e-2 * tol)
    tol_junction = min(tol_junction, 1e-2 * tol)
    for k in range(k0, k_max + 1):
        lam = 2.0**-k
        sol = solve_discounted(lam, F - r_est, {v: t - r_est for v, t in th.items()}, H, net, method=method,
                               u_init=warm, tol_newton=tol_newton, tol_junction=tol_junction, check_bound=False)
        inner += sol.report.iterations
        w = sol.u
        mw = quadrature(w, net) / L
        rho_k = r_est + lam * mw
        u_k = w - mw
        rho_raw.append(rho_k)
        us.append(u_k.flat())
        lams.append(lam)
        r_est = rho_k
        warm = u_k
        if len(rho_raw) >= 3:
            rho_ex.append(float(_extrapolate(rho_raw)))
            u_ex.append(_extrapolate(us))
        if len(rho_ex) >= 2:
            d_rho = abs(rho_ex[-1] - rho_ex[-2])
            d_u = float(np.max(np.abs(u_ex[-1] - u_ex[-2])))
            report.residual_history.append(max(d_rho, d_u))
            if d_rho <= tol and d_u <= tol and k >= k_min:
                u = EdgeField.from_flat(net, u_ex[-1])
                u = u - quadrature(u, net) / L
                rho = rho_ex[-1]
                report.iterations = len(rho_raw)
                report.converged = True
                report.achieved.update(hjb_residuals(u, F, th, H, net, rho=rho))
                report.achieved["d_rho"] = d_rho
                report.achieved["d_u"] = d_u
                report.achieved["grad_Lq"] = gradient_lq_norm(u, H.growth[1], net)
                report.extra.update(
                    {"lambdas": lams, "rho_raw": rho_raw, "rho_extrapolated": rho_ex, "inner_iterations": inner}
                )
                report.wall_time = time.perf_counter() - t0
                return ErgodicSolution(u, float(rho), report)
    raise SolverError(f"vanishing discount did not converge in k_max={k_max} halvings",
                      residual=report.residual_history[-1] if report.residual_history else None, iteration=k_max)


# ---------------------------------------------------------------------------
# comparison harness


@dataclass(frozen=True)
class ComparisonVerdict:
    passed: bool
    max_violation: float  # max(u_sub - u_super)
    sub_residual: float  # max of the sub-solution residuals (must be <= tau)
    super_residual: float  # min of the super-solution residuals (must be >= -tau)


def scheme_residual(u: EdgeField, lam: float, F: EdgeField, theta: Mapping[int, float] | None,
                    H: HamiltonianModel, net: Network) -> Array:
    """Signed residual of every discrete equation (continuity rows excluded)."""
    th = _theta(theta, net)
    res, _, _ = _global_system(u, lam, F, th, H, net)
    keep = np.ones(res.size, dtype=bool)
    off = _offsets(net)
    for v, vert in enumerate(net.vertices):
        if vert.is_boundary:
            continue
        for inc in net.incidence[v][1:]:
            o, n = int(off[inc.edge]), net.edges[inc.edge].n_points
            keep[o if inc.end == 0 else o + n - 1] = False
    return res[keep]


def check_comparison(u_sub: EdgeField, u_super: EdgeField, lam: float, F: EdgeField,
                     theta: Mapping[int, float] | None, H: HamiltonianModel, net: Network,
                     tau: float = 1e-8) -> ComparisonVerdict:
    """Check ``u_sub <= u_super + tau`` after verifying both residual signs.

    Raises :class:`NotAdmissibleError` if either field is discontinuous at a
    vertex or has a residual of the wrong sign beyond ``tau``.
    """
    from .network import is_continuous

    for name, f in (("sub", u_sub), ("super", u_super)):
        if not is_continuous(f, net):
            raise NotAdmissibleError(f"{name}-solution is not continuous at the vertices")
    rs = float(np.max(scheme_residual(u_sub, lam, F, theta, H, net)))
    rp = float(np.min(scheme_residual(u_super, lam, F, theta, H, net)))
    if rs > tau:
        raise NotAdmissibleError(f"sub-solution residual {rs:.3e} > {tau:.1e}")
    if rp < -tau:
        raise NotAdmissibleError(f"super-solution residual {rp:.3e} < -{tau:.1e}")
    gap = (u_sub - u_super).max()
    return ComparisonVerdict(gap <= tau, gap, rs, rp)
