"""Stationary mean field game on a network with sticky vertices.

Unknowns are ``(u, rho, measure)``: ``(u, rho)`` solve the ergodic HJB
problem with running cost ``F_I[m]`` on the edges and vertex cost
``theta_v + F_V(T_v[m])``, and ``measure`` is the invariant measure of the
diffusion with the optimal drift ``-dH/dp(x, u')``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, SolverError
from .fokker_planck import solve_stationary, weak_form_residual
from .hamiltonian import HamiltonianModel
from .hjb import solve_ergodic
from .network import EdgeField, GraphMeasure, Network, derivative, quadrature, trace_ratio
from .report import SolveReport

Array = NDArray[np.float64]


@dataclass(frozen=True)
class CouplingModel:
    """Pointwise coupling ``F_I[m](x) = f(m(x))`` plus an explicit vertex part ``F_V(T_v)``."""

    edge_fn: Callable[[Array], Array]
    vertex_fn: Callable[[float], float]
    monotone: str = "strict"  # strict | monotone | none
    spec: Mapping[str, Any] = field(default_factory=dict)

    def edge_cost(self, m: EdgeField) -> EdgeField:
        return m.map(self.edge_fn)

    def vertex_cost(self, t: float) -> float:
        return float(self.vertex_fn(t))

    @classmethod
    def identity(cls) -> CouplingModel:
        return cls(lambda m: np.array(m, dtype=float), lambda t: float(t), "strict",
                   {"edge": "identity", "vertex": "identity", "monotone": "strict"})

    @classmethod
    def zero(cls) -> CouplingModel:
        return cls(lambda m: np.zeros_like(m), lambda t: 0.0, "monotone", {"edge": "zero", "vertex": "zero"})

    @classmethod
    def constant(cls, c: float) -> CouplingModel:
        return cls(lambda m: np.full_like(m, c), lambda t: float(c), "monotone",
                   {"edge": f"constant:{c!r}", "vertex": f"constant:{c!r}"})

    @classmethod
    def from_spec(cls, spec: Mapping[str, Any]) -> CouplingModel:
        """Build from the ``coupling.json`` format.

        ``edge``: ``identity`` | ``power:k`` | ``table`` (with ``table: {"m": [...], "F": [...]}``,
        linearly interpolated); ``vertex``: ``identity`` | ``power:k``.
        """
        allowed = {"edge", "vertex", "monotone", "table"}
        extra = set(spec) - allowed
        if extra:
            raise ConfigError(f"unknown coupling keys: {sorted(extra)}")
        edge = _parse_fn(str(spec.get("edge", "identity")), spec.get("table"))
        vertex = _parse_fn(str(spec.get("vertex", "identity")), None)
        monotone = str(spec.get("monotone", "strict"))
        if monotone not in ("strict", "monotone", "none"):
            raise ConfigError(f"monotone must be strict|monotone|none, got {monotone!r}")
        return cls(edge, lambda t: float(vertex(np.asarray(t))), monotone, dict(spec))


def _parse_fn(kind: str, table: Mapping[str, Any] | None) -> Callable[[Array], Array]:
    if kind == "identity":
        return lambda m: np.array(m, dtype=float)
    if kind.startswith("power:"):
        try:
            k = float(kind.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad power exponent in {kind!r}") from exc
        if not k > 0:
            raise ConfigError("power exponent must be > 0")
        return lambda m: np.maximum(np.asarray(m, dtype=float), 0.0) ** k
    if kind == "table":
        if not table or "m" not in table or "F" not in table:
            raise ConfigError("table coupling needs table.m and table.F")
        xs = np.asarray(table["m"], dtype=float)
        ys = np.asarray(table["F"], dtype=float)
        if xs.shape != ys.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ConfigError("table.m must be strictly increasing and match table.F")
        return lambda m: np.interp(m, xs, ys)
    raise ConfigError(f"unknown coupling kind {kind!r}")


def check_monotone(F: CouplingModel, net: Network, n_samples: int = 20, seed: int = 0) -> bool:
    """Sampled check of the declared monotonicity class (always true for ``none``)."""
    if F.monotone == "none":
        return True
    rng = np.random.default_rng(seed)
    for _ in range(n_samples):
        m1 = EdgeField(tuple(rng.uniform(0, 2, e.n_points) for e in net.edges))
        m2 = EdgeField(tuple(rng.uniform(0, 2, e.n_points) for e in net.edges))
        val = quadrature((F.edge_cost(m1) - F.edge_cost(m2)) * (m1 - m2), net)
        if val < 0 or (F.monotone == "strict" and not val > 0):
            return False
    t = np.sort(rng.uniform(0, 5, n_samples))
    fv = np.array([F.vertex_cost(x) for x in t])
    d = np.diff(fv)
    return bool(np.all(d > 0) if F.monotone == "strict" else np.all(d >= 0))


def coupling_evaluate(F: CouplingModel, measure: GraphMeasure, net: Network) -> tuple[EdgeField, dict[int, float]]:
    """Edge cost field ``F_I[m]`` and vertex values ``F_V(T_v[m])``."""
    edge = F.edge_cost(measure.density)
    vert = {v: F.vertex_cost(trace_ratio(measure.density, v, net)) for v in net.interior_vertices}
    return edge, vert


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MFGSolution:
    u: EdgeField
    rho: float
    measure: GraphMeasure
    drift: EdgeField
    report: SolveReport


def optimal_drift(u: EdgeField, H: HamiltonianModel, net: Network) -> EdgeField:
    """``b = -dH/dp(x, u')`` with second-order differences of ``u``."""
    du = derivative(u, net)
    return EdgeField(tuple(-H.grad(a, e.grid(), du[a]) for a, e in enumerate(net.edges)))


def initial_measure(net: Network) -> GraphMeasure:
    """Invariant measure for zero drift (the default first iterate)."""
    return solve_stationary(EdgeField.zeros(net), net).measure


def concentrated_measure(net: Network, alpha: int) -> GraphMeasure:
    """All mass in a sine bump on edge ``alpha``; vanishing traces keep it admissible."""
    e = net.edges[alpha]
    dens = [np.zeros(x.n_points) for x in net.edges]
    dens[alpha] = np.sin(np.pi * e.grid() / e.length)
    m = EdgeField(tuple(dens))
    m = m / quadrature(m, net)
    return GraphMeasure(m, {v: 0.0 for v in net.interior_vertices})


@dataclass
class _PhiResult:
    u: EdgeField
    rho: float
    measure: GraphMeasure
    drift: EdgeField
    inner: int


def apply_phi(measure: GraphMeasure, F: CouplingModel, theta: Mapping[int, float], H: HamiltonianModel,
              net: Network, tol: float, u_init: EdgeField | None = None) -> _PhiResult:
    """One application of the best-response map: coupling, ergodic HJB, then Fokker-Planck."""
    fe, fv = coupling_evaluate(F, measure, net)
    th = {v: theta.get(v, 0.0) + fv[v] for v in net.interior_vertices}
    erg = solve_ergodic(fe, th, H, net, tol=tol, u_init=u_init)
    b = optimal_drift(erg.u, H, net)
    fp = solve_stationary(b, net)
    return _PhiResult(erg.u, erg.rho, fp.measure, b, erg.report.iterations)


def solve_mfg(
    F: CouplingModel,
    theta: Mapping[int, float] | None,
    H: HamiltonianModel,
    net: Network,
    damping: float = 0.5,
    tol: float = 1e-8,
    max_iter: int = 200,
    m0: GraphMeasure | None = None,
    shrink: float = 0.7,
) -> MFGSolution:
    """Damped fixed-point iteration ``m <- (1 - tau) m + tau Phi(m)``.

    The gap is the undamped change ``|Phi(m) - m|`` (sup density gap plus
    largest atom gap) plus ``|rho - rho_prev|``; ``tau`` shrinks by
    ``shrink`` whenever the gap grows.  Returns ``(u, rho, Phi(m))`` of the
    last iterate.  Total mass is asserted at every step.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    t0 = time.perf_counter()
    th = {v: net.vertices[v].theta for v in net.interior_vertices} if theta is None else dict(theta)
    report = SolveReport("mfg")
    m = initial_measure(net) if m0 is None else m0
    tau = damping
    rho_prev: float | None = None
    prev_gap = np.inf
    warm = None
    history: list[dict[str, float]] = []
    for it in range(1, max_iter + 1):
        mass = m.total_mass(net)
        if abs(mass - 1.0) > 1e-10:
            raise SolverError(f"mass drifted to {mass!r} at iteration {it}", iteration=it)
        try:
            phi = apply_phi(m, F, th, H, net, tol / 10, warm)
        except SolverError as exc:
            raise SolverError(f"inner solver failed at MFG iteration {it}: {exc}", exc.residual, it) from exc
        warm = phi.u
        d_rho = abs(phi.rho - rho_prev) if rho_prev is not None else np.inf
        gap_m = m.distance(phi.measure)
        gap = gap_m + (d_rho if np.isfinite(d_rho) else 0.0)
        history.append({"iteration": it, "gap": gap, "rho": phi.rho, "damping": tau,
                        "mass": phi.measure.total_mass(net)})
        report.residual_history.append(gap)
        if gap <= tol and np.isfinite(d_rho):
            report.iterations = it
            report.converged = True
            report.achieved["gap"] = gap
            report.achieved["mass_error"] = abs(phi.measure.total_mass(net) - 1.0)
            report.extra["history"] = history
            report.wall_time = time.perf_counter() - t0
            return MFGSolution(phi.u, phi.rho, phi.measure, phi.drift, report)
        if gap > prev_gap:
            tau *= shrink
        prev_gap = gap
        rho_prev = phi.rho
        m = m.mix(phi.measure, tau)
    raise SolverError(f"MFG iteration did not converge in {max_iter} steps (gap {prev_gap:.3e})",
                      residual=float(prev_gap), iteration=max_iter)


def fixed_point_defect(sol: MFGSolution, F: CouplingModel, theta: Mapping[int, float] | None,
                       H: HamiltonianModel, net: Network, tol: float = 1e-8) -> dict[str, float]:
    """How far one more application of the best-response map moves a solution."""
    th = {v: net.vertices[v].theta for v in net.interior_vertices} if theta is None else dict(theta)
    phi = apply_phi(sol.measure, F, th, H, net, tol / 10, sol.u)
    return {
        "measure": sol.measure.distance(phi.measure),
        "rho": abs(phi.rho - sol.rho),
        "u": (phi.u - sol.u).max_abs(),
    }


# ---------------------------------------------------------------------------
# uniqueness identity


@dataclass(frozen=True)
class DualityGap:
    coupling: float  # int (F[m1] - F[m2]) d(m1 - m2), vertex atoms included
    bregman_1: float  # int m1 [H(p2) - H(p1) - H_p(p1)(p2 - p1)]
    bregman_2: float  # int m2 [H(p1) - H(p2) - H_p(p2)(p1 - p2)]
    total: float
    weak_residual: float  # FP weak forms of both measures tested against u1 - u2


def _bregman(H: HamiltonianModel, a: int, x: Array, q: Array, p: Array) -> Array:
    return H.eval(a, x, q) - H.eval(a, x, p) - H.grad(a, x, p) * (q - p)


def duality_gap(sol1: MFGSolution, sol2: MFGSolution, F: CouplingModel, H: HamiltonianModel,
                net: Network) -> DualityGap:
    """The three terms of the uniqueness identity; for two MFG solutions each is ~0."""
    m1, m2 = sol1.measure, sol2.measure
    f1, v1 = coupling_evaluate(F, m1, net)
    f2, v2 = coupling_evaluate(F, m2, net)
    coupling = quadrature((f1 - f2) * (m1.density - m2.density), net)
    for v in net.interior_vertices:
        coupling += (v1[v] - v2[v]) * (m1.atoms.get(v, 0.0) - m2.atoms.get(v, 0.0))
    p1, p2 = derivative(sol1.u, net), derivative(sol2.u, net)
    b1 = EdgeField(tuple(_bregman(H, a, e.grid(), p2[a], p1[a]) for a, e in enumerate(net.edges)))
    b2 = EdgeField(tuple(_bregman(H, a, e.grid(), p1[a], p2[a]) for a, e in enumerate(net.edges)))
    breg1 = quadrature(m1.density * b1, net)
    breg2 = quadrature(m2.density * b2, net)
    ubar = sol1.u - sol2.u
    weak = weak_form_residual(m1.density, sol1.drift, ubar, net) - weak_form_residual(
        m2.density, sol2.drift, ubar, net)
    return DualityGap(float(coupling), float(breg1), float(breg2), float(coupling + breg1 + breg2), abs(float(weak)))
