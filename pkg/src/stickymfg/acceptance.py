"""Acceptance suite: every check is oracle-based and runnable on a laptop.

Each ``criterion_*`` function returns a :class:`CriterionResult` whose
``details`` hold only deterministic numbers, so two runs with the same seed
serialize to identical bytes.  Wall times are tracked separately and only
enter the runtime-budget verdict.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from . import fixtures
from .errors import StickyMFGError
from .fokker_planck import duality_residual, make_test_function, solve_stationary
from .hamiltonian import ControlModel, QuadraticHamiltonian, hamiltonian_from_control
from .hjb import hjb_residuals, solve_discounted, solve_ergodic, sup_bound_constant
from .mfg import CouplingModel, concentrated_measure, fixed_point_defect, solve_mfg
from .network import EdgeField, Network, build_network, quadrature, trace_ratio
from .sde_sim import build_ctmc, estimate_occupation, exact_occupation, verify_hjb

# Ergodic constant of -u'' + u'^2/2 + rho = cos(2 pi x) on [0, 1] with Neumann ends.
# Grid reference: this package's solver at N = 8193 (vanishing discount, tol 1e-11).
RHO_COSINE_FINE = -0.006332129017795257
# Independent oracle: Hopf-Cole reduces the problem to Mathieu's equation,
# rho = 2 pi^2 a_0(q) with q = 1 / (4 pi^2).
RHO_COSINE_MATHIEU = -0.006332129638335252

BIAS_C = 1.0  # constant in the "3 SE + C h" Monte Carlo allowance


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)
    budget: float = math.inf  # seconds
    wall_time: float = 0.0
    error: str | None = None

    @property
    def within_budget(self) -> bool:
        return self.wall_time <= self.budget

    @property
    def ok(self) -> bool:
        return self.passed and self.within_budget

    def line(self) -> str:
        flag = "PASS" if self.ok else "FAIL"
        extra = "" if self.within_budget else f" (over budget {self.budget:g}s)"
        msg = f" [{self.error}]" if self.error else ""
        return f"[{flag}] criterion {self.number:2d}: {self.title} ({self.wall_time:.1f}s){extra}{msg}"

    def to_dict(self) -> dict[str, Any]:
        return {"number": self.number, "title": self.title, "passed": self.passed, "details": self.details,
                "error": self.error}


def _spec(name: str, overrides: Mapping[str, Mapping[str, Any]] | None, *args: Any) -> dict[str, Any]:
    if overrides and name in overrides:
        spec = dict(overrides[name])
        return fixtures.with_grid(spec, args[0]) if args else spec
    return getattr(fixtures, name)(*args)


def _orders(errors: list[float]) -> list[float]:
    return [math.log2(a / b) if b > 0 else math.inf for a, b in zip(errors, errors[1:])]


# ---------------------------------------------------------------------------


def criterion_1(overrides=None, seed: int = 42) -> CriterionResult:
    net = build_network(_spec("sticky_star", overrides, 65))
    sol = solve_stationary(EdgeField.zeros(net), net)
    v = net.interior_vertices[0]
    d = {
        "density_error": (sol.measure.density - 1 / 3).max_abs(),
        "trace_error": abs(trace_ratio(sol.measure.density, v, net) - 2 / 3),
        "atom_error": abs(sol.measure.atoms[v] - 1 / 3),
        "mass_error": abs(sol.measure.total_mass(net) - 1.0),
    }
    return CriterionResult(1, TITLES[1], max(d.values()) <= 1e-8, d, budget=1.0)


def criterion_2(overrides=None, seed: int = 42) -> CriterionResult:
    errs = []
    for n in (33, 65, 129, 257):
        net = build_network(fixtures.single_edge(n))
        sol = solve_stationary(EdgeField.constant(net, 1.0), net)
        x = net.grid(0)
        errs.append(float(np.max(np.abs(sol.measure.density[0] - np.exp(x) / (math.e - 1)))))
    orders = _orders(errs)
    return CriterionResult(2, TITLES[2], min(orders) >= 1.9,
                           {"errors": errs, "orders": orders}, budget=5.0)


def criterion_3(overrides=None, seed: int = 42) -> CriterionResult:
    details: dict[str, Any] = {}
    ok = True
    for name, (_, amp) in fixtures.DUALITY_FIXTURES.items():
        worst = []
        for n in (65, 129, 257):
            net = build_network(_spec(name, overrides, n))
            b = fixtures.smooth_drift(net, amp)
            sol = solve_stationary(b, net)
            worst.append(max(duality_residual(make_test_function(seed + k, net, b), sol, b, net) for k in range(20)))
        # below 1e-10 the residual is at round-off and carries no order information
        orders = [o for o, e in zip(_orders(worst), worst[1:]) if e > 1e-10]
        passed = worst[0] <= 1e-3 and all(o >= 1.5 for o in orders)
        ok &= passed
        details[name] = {"max_residual": worst, "orders": orders, "passed": passed}
    return CriterionResult(3, TITLES[3], ok, details, budget=10.0)


def criterion_4(overrides=None, seed: int = 42) -> CriterionResult:
    H = QuadraticHamiltonian()
    details: dict[str, Any] = {}
    ok = True
    for name in fixtures.DUALITY_FIXTURES:
        net = build_network(_spec(name, overrides, 65))
        F = EdgeField.constant(net, 2.0)
        th = {v: 2.0 for v in net.interior_vertices}
        ds = solve_discounted(1.0, F, th, H, net)
        res = hjb_residuals(ds.u, F, th, H, net, lam=1.0)
        es = solve_ergodic(F, th, H, net)
        d = {
            "u_error": (ds.u - 2.0).max_abs(),
            "junction": res["junction"],
            "rho_error": abs(es.rho - 2.0),
            "u_ergodic": es.u.max_abs(),
        }
        passed = d["u_error"] <= 1e-9 and d["junction"] <= 1e-9 and d["rho_error"] <= 1e-6 and d["u_ergodic"] <= 1e-6
        ok &= passed
        details[name] = d
    return CriterionResult(4, TITLES[4], ok, details, budget=5.0)


def _random_data(rng: np.random.Generator, net: Network) -> tuple[EdgeField, dict[int, float]]:
    coef = rng.normal(size=(net.n_edges, 3))
    F = EdgeField.from_function(net, lambda a, s: coef[a, 0] + coef[a, 1] * np.sin(2 * np.pi * s / net.edges[a].length + coef[a, 2]))
    th = {v: float(rng.uniform(-2, 2)) for v in net.interior_vertices}
    return F, th


def _fixture_cycle(i: int, overrides) -> Network:
    names = list(fixtures.DUALITY_FIXTURES)
    return build_network(_spec(names[i % len(names)], overrides, 65))


def criterion_5(overrides=None, seed: int = 42) -> CriterionResult:
    H = QuadraticHamiltonian()
    rng = np.random.default_rng(seed)
    ratios = []
    slack = []
    for i in range(10):
        net = _fixture_cycle(i, overrides)
        F, th = _random_data(rng, net)
        lam = float(rng.uniform(0.1, 2.0))
        sol = solve_discounted(lam, F, th, H, net, check_bound=False)
        c1 = sup_bound_constant(F, th, H, net)
        sup = lam * sol.u.max_abs()
        ratios.append(sup / c1)
        slack.append(c1 + 1e-6 - sup)
    return CriterionResult(5, TITLES[5], min(slack) >= 0,
                           {"sup_over_C1": ratios, "min_slack": min(slack)}, budget=30.0)


def criterion_6(overrides=None, seed: int = 42) -> CriterionResult:
    H = QuadraticHamiltonian()
    rng = np.random.default_rng(seed + 1)
    gaps = []
    for i in range(10):
        net = _fixture_cycle(i, overrides)
        F1, th = _random_data(rng, net)
        bump = rng.uniform(0, 1, size=(net.n_edges, 2))
        F2 = F1 + EdgeField.from_function(net, lambda a, s: bump[a, 0] * (1 + np.cos(2 * np.pi * s / net.edges[a].length + 3 * bump[a, 1])))
        lam = float(rng.uniform(0.1, 2.0))
        u1 = solve_discounted(lam, F1, th, H, net).u
        u2 = solve_discounted(lam, F2, th, H, net).u
        gaps.append((u1 - u2).max())
    return CriterionResult(6, TITLES[6], max(gaps) <= 1e-8,
                           {"max_u1_minus_u2": gaps}, budget=30.0)


def criterion_7(overrides=None, seed: int = 42) -> CriterionResult:
    net = build_network(fixtures.single_edge(129))
    F = EdgeField.from_function(net, lambda a, s: np.cos(2 * np.pi * s))
    sol = solve_ergodic(F, None, QuadraticHamiltonian(), net)
    raw = sol.report.extra["rho_raw"]
    lams = sol.report.extra["lambdas"]
    ks = [round(-math.log2(x)) for x in lams]
    diffs = [abs(a - b) for a, b in zip(raw, raw[1:])]
    tail = [d for k, d in zip(ks, diffs) if k >= 5]
    monotone = all(b < a for a, b in zip(tail, tail[1:])) and len(tail) >= 2
    err = abs(sol.rho - RHO_COSINE_FINE)
    d = {"rho": sol.rho, "rho_reference": RHO_COSINE_FINE, "rho_mathieu": RHO_COSINE_MATHIEU,
         "error": err, "k": ks, "rho_k": raw, "diffs": diffs, "monotone_from_k5": monotone,
         "mean_u": quadrature(sol.u, net)}
    return CriterionResult(7, TITLES[7], monotone and err <= 1e-3, d, budget=60.0)


def criterion_8(overrides=None, seed: int = 42) -> CriterionResult:
    net = build_network(_spec("sticky_star", overrides, 65))
    F = CouplingModel.identity()
    H = QuadraticHamiltonian()
    tol = 1e-8
    th = {v: 0.0 for v in net.interior_vertices}
    s1 = solve_mfg(F, th, H, net, tol=tol)
    s2 = solve_mfg(F, th, H, net, tol=tol, m0=concentrated_measure(net, 0))
    atoms = max(abs(s1.measure.atoms[v] - s2.measure.atoms[v]) for v in net.interior_vertices)
    agree = {
        "u": (s1.u - s2.u).max_abs(),
        "rho": abs(s1.rho - s2.rho),
        "m": (s1.measure.density - s2.measure.density).max_abs(),
        "atoms": atoms,
    }
    defect = fixed_point_defect(s1, F, th, H, net, tol)
    mass = max(abs(h["mass"] - 1.0) for s in (s1, s2) for h in s.report.extra["history"])
    passed = max(agree.values()) <= 1e-6 and defect["measure"] + defect["rho"] <= 2 * tol and mass <= 1e-10
    d = {"agreement": agree, "phi_defect": defect, "max_mass_error": mass,
         "iterations": [s1.report.iterations, s2.report.iterations], "rho": s1.rho}
    return CriterionResult(8, TITLES[8], passed, d, budget=120.0)


def _edge_masses(est, net: Network, q) -> list[float]:
    return [float(np.sum(est.fractions[q.node_state[a][1:-1]])) for a in range(net.n_edges)]


def _fp_edge_masses(m: EdgeField, net: Network) -> list[float]:
    return [float(np.sum(m[a][1:-1]) * e.h) for a, e in enumerate(net.edges)]


def _mc_compare(name: str, overrides, h: float, T: float, n_traj: int, seed: int, amp: float) -> dict[str, Any]:
    net = build_network(_spec(name, overrides, 65))
    b = fixtures.smooth_drift(net, amp)
    q = build_ctmc(b, net, h)
    fp = solve_stationary(q.drift, q.net)
    x0 = q.net.interior_vertices[0] if q.net.interior_vertices else 0
    est = estimate_occupation(q, x0, T=T, n_traj=n_traj, seed=seed, burn_in=min(100.0, T / 20))
    allow = BIAS_C * h
    rows = []
    for v in q.net.interior_vertices:
        rows.append(("atom:" + q.net.vertices[v].id, est.atoms[v], est.atoms_se[v], fp.measure.atoms[v]))
    se_nodes = est.fractions_se
    for a, (mc, ref) in enumerate(zip(_edge_masses(est, q.net, q), _fp_edge_masses(fp.measure.density, q.net))):
        se = float(np.sqrt(np.sum(se_nodes[q.node_state[a][1:-1]] ** 2)))  # conservative (ignores anticorrelation)
        rows.append(("edge:" + q.net.edges[a].id, mc, se, ref))
    checks = {k: {"mc": mc, "se": se, "fp": ref, "ok": abs(mc - ref) <= 3 * se + allow} for k, mc, se, ref in rows}
    return {"checks": checks, "passed": all(c["ok"] for c in checks.values()), "events": est.events,
            "vertex_fraction": {q.net.vertices[v].id: est.vertex_fraction[v] for v in q.net.interior_vertices}}


def _exact_bias(name: str, overrides, h: float, amp: float) -> float:
    net = build_network(_spec(name, overrides, 65))
    ref_net = net.with_grid(1025)
    ref = solve_stationary(fixtures.smooth_drift(ref_net, amp), ref_net).measure
    q = build_ctmc(fixtures.smooth_drift(net, amp), net, h)
    ex = exact_occupation(q)
    worst = max((abs(ex.atoms[v] - ref.atoms[v]) for v in net.interior_vertices), default=0.0)
    ref_mass = [float(np.trapezoid(ref.density[a], dx=e.h)) for a, e in enumerate(ref_net.edges)]
    for a in range(net.n_edges):
        # chain mass of edge a: its interior nodes plus its share of the end vertex states
        mass = float(np.sum(ex.fractions[q.node_state[a][1:-1]]))
        e = q.net.edges[a]
        for v in (e.tail, e.head):
            vert = q.net.vertices[v]
            mass += ex.fractions[v] * 0.5 * vert.gamma[a] * e.h / q.vertex_weight(v)
        worst = max(worst, abs(mass - ref_mass[a]))
    return worst


def criterion_9(overrides=None, seed: int = 42, scale: float = 1.0) -> CriterionResult:
    h = 0.02
    star = _mc_compare("sticky_star", overrides, h, 1e4 * scale, max(2, int(100 * scale)), seed, 0.0)
    v = star["checks"]["atom:c"]
    lo = 1 / 3 - 3 * v["se"] - BIAS_C * h
    hi = 1 / 3 + 3 * v["se"] + BIAS_C * h
    star_ok = lo <= v["mc"] <= hi and star["passed"]
    others = {name: _mc_compare(name, overrides, h, 2e3 * scale, max(2, int(20 * scale)), seed + 1, amp)
              for name, (_, amp) in fixtures.DUALITY_FIXTURES.items() if name != "sticky_star"}
    bias = {}
    for name, (_, amp) in fixtures.DUALITY_FIXTURES.items():
        b1, b2 = _exact_bias(name, overrides, h, amp), _exact_bias(name, overrides, h / 2, amp)
        bias[name] = {"h": b1, "h/2": b2, "shrinks": bool(b2 < b1 or b2 <= 1e-10)}
    passed = star_ok and all(o["passed"] for o in others.values()) and all(b["shrinks"] for b in bias.values())
    d = {"sticky_star": star, "vertex_interval": [lo, hi], "others": others, "exact_chain_bias": bias,
         "h": h, "C": BIAS_C}
    return CriterionResult(9, TITLES[9], passed, d, budget=300.0)


def criterion_10(overrides=None, seed: int = 42, n_traj: int = 2000) -> CriterionResult:
    net = build_network(_spec("sticky_star", overrides, 65))
    v = net.interior_vertices[0]
    net = net.with_vertex_data(v, theta=1.0)
    H = hamiltonian_from_control(ControlModel.quadratic_model(10.0))
    lam, h, T_eff = 1.0, 0.02, 10.0

    def F(a, s):
        return 0.5 + 0.5 * np.cos(2 * np.pi * s) + 0.3 * a

    perturbs: dict[str, Callable] = {
        "shift+0.5": lambda a, s: 0.5 + 0 * s,
        "shift-0.5": lambda a, s: -0.5 + 0 * s,
        "sine0.8": lambda a, s: 0.8 * np.sin(2 * np.pi * s),
    }
    starts = {"vertex:c": v, "edge:e1:0.5": (0, 0.5), "edge:e2:0.25": (1, 0.25)}
    ok = True
    details: dict[str, Any] = {}
    for sname, x0 in starts.items():
        r = verify_hjb(net, lam, F, None, H, x0, h, n_traj, T_eff, seed)
        opt_ok = abs(r.J_mc - r.u_pde) <= 3 * r.stderr + BIAS_C * h
        entry = {"u_pde": r.u_pde, "J_mc": r.J_mc, "stderr": r.stderr, "ok": opt_ok, "perturbed": {}}
        for pname, p in perturbs.items():
            rp = verify_hjb(net, lam, F, None, H, x0, h, n_traj, T_eff, seed, perturb=p)
            p_ok = rp.J_mc >= r.u_pde - 3 * rp.stderr
            entry["perturbed"][pname] = {"J_mc": rp.J_mc, "stderr": rp.stderr, "ok": p_ok}
            ok &= p_ok
        ok &= opt_ok
        details[sname] = entry
    return CriterionResult(10, TITLES[10], ok, details, budget=300.0)


CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}
TITLES = {
    1: "closed-form sticky star Fokker-Planck", 2: "Fokker-Planck with drift, order >= 1.9",
    3: "generator duality, 20 test functions per fixture", 4: "discounted and ergodic HJB with constant data",
    5: "sup bound |lam u| <= C1 on 10 random fixtures", 6: "discrete comparison F1 <= F2 implies u1 <= u2",
    7: "vanishing discount on the cosine fixture", 8: "MFG fixed point and uniqueness from two starts",
    9: "Monte Carlo occupation vs Fokker-Planck", 10: "verification: simulated cost of the HJB feedback",
}
QUICK = (1, 2, 3, 4)
FULL = tuple(range(1, 11))


def run_criterion(number: int, overrides=None, seed: int = 42, **kwargs: Any) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        res = CRITERIA[number](overrides, seed, **kwargs)
    except (StickyMFGError, ValueError) as exc:
        res = CriterionResult(number, TITLES[number], False, {}, error=f"{type(exc).__name__}: {exc}")
    res.wall_time = time.perf_counter() - t0
    return res


def run_suite(level: str = "quick", seed: int = 42, overrides=None) -> list[CriterionResult]:
    if level not in ("quick", "full"):
        raise ValueError("level must be quick or full")
    return [run_criterion(n, overrides, seed) for n in (QUICK if level == "quick" else FULL)]


def suite_report(results: list[CriterionResult], level: str, seed: int) -> dict[str, Any]:
    return {"level": level, "seed": seed, "passed": all(r.passed for r in results),
            "criteria": [r.to_dict() for r in results]}
