from __future__ import annotations

import math

import numpy as np
import pytest

from stickymfg import fixtures
from stickymfg.errors import NotAdmissibleError, SolverError
from stickymfg.hamiltonian import QuadraticHamiltonian, zero_hamiltonian
from stickymfg.hjb import (check_comparison, hjb_residuals, junction_residuals_one_sided, solve_discounted,
                           solve_edge_bvp, solve_ergodic, sup_bound_constant)
from stickymfg.network import EdgeField, build_network, quadrature

H = QuadraticHamiltonian()


def cosine_line(n):
    net = build_network(fixtures.single_edge(n))
    return net, EdgeField.from_function(net, lambda a, s: np.cos(2 * np.pi * s))


def test_edge_bvp_constant_solution():
    net = build_network(fixtures.single_edge(33))
    r = solve_edge_bvp(0, (2.0, 2.0), 1.0, EdgeField.constant(net, 2.0), H, net)
    assert np.max(np.abs(r.u - 2.0)) <= 1e-12


def test_edge_bvp_linear_sinh():
    net = build_network(fixtures.single_edge(129))
    r = solve_edge_bvp(0, (0.0, 1.0), 1.0, EdgeField.zeros(net), zero_hamiltonian(), net)
    x = net.grid(0)
    assert np.max(np.abs(r.u - np.sinh(x) / math.sinh(1.0))) <= 1e-5


def test_edge_bvp_cosine_against_fine_grid():
    net, F = cosine_line(129)
    fine, Ff = cosine_line(4097)
    u = solve_edge_bvp(0, (0.0, 0.0), 1.0, F, H, net).u
    uf = solve_edge_bvp(0, (0.0, 0.0), 1.0, Ff, H, fine).u
    assert np.max(np.abs(u - uf[::32])) <= 5e-4


def test_discounted_constant_solution():
    for name in fixtures.DUALITY_FIXTURES:
        net = build_network(getattr(fixtures, name)(33))
        F = EdgeField.constant(net, 2.0)
        th = {v: 2.0 for v in net.interior_vertices}
        sol = solve_discounted(1.0, F, th, H, net)
        assert (sol.u - 2.0).max_abs() <= 1e-9
        res = hjb_residuals(sol.u, F, th, H, net, lam=1.0)
        assert res["junction"] <= 1e-9 and res["continuity"] <= 1e-12


def test_vertex_reward_raises_value():
    net = build_network(fixtures.sticky_star(65))
    sol = solve_discounted(1.0, EdgeField.zeros(net), {0: 1.0}, H, net)
    assert sol.z[0] > 0
    fine = build_network(fixtures.sticky_star(513))
    ref = solve_discounted(1.0, EdgeField.zeros(fine), {0: 1.0}, H, fine)
    assert abs(sol.z[0] - ref.z[0]) <= 1e-3


def test_one_sided_junction_residual_decays():
    vals = []
    for n in (65, 129, 257):
        net = build_network(fixtures.sticky_star(n))
        sol = solve_discounted(1.0, EdgeField.zeros(net), {0: 1.0}, H, net)
        vals.append(abs(junction_residuals_one_sided(sol.u, {0: 1.0}, net, lam=1.0)[0]))
    assert vals[1] < vals[0] / 3 and vals[2] < vals[1] / 3


@pytest.mark.parametrize("name", list(fixtures.DUALITY_FIXTURES))
def test_vertex_and_global_paths_agree(name):
    net = build_network(getattr(fixtures, name)(65))
    F = EdgeField.from_function(net, lambda a, s: np.sin(3 * s + a))
    a = solve_discounted(0.5, F, None, H, net, method="vertex")
    b = solve_discounted(0.5, F, None, H, net, method="global")
    assert (a.u - b.u).max_abs() <= 1e-7


def test_kirchhoff_limit_without_stickiness():
    spec = fixtures.triangle_with_tail(65)
    for v in spec["vertices"]:
        v["eta"] = 0.0
    net = build_network(spec)
    F = EdgeField.from_function(net, lambda a, s: np.cos(2 * s) + a)
    sol = solve_discounted(1.0, F, None, H, net)
    assert hjb_residuals(sol.u, F, None, H, net, lam=1.0)["junction"] <= 1e-8
    # theta is irrelevant when no vertex is sticky
    other = solve_discounted(1.0, F, {v: 5.0 for v in net.interior_vertices}, H, net, method="global")
    assert (sol.u - other.u).max_abs() <= 1e-8


def test_sup_bound_and_bad_inputs():
    net = build_network(fixtures.sticky_star(33))
    F = EdgeField.from_function(net, lambda a, s: 3 * np.cos(5 * s))
    sol = solve_discounted(0.3, F, {0: -4.0}, H, net)
    assert 0.3 * sol.u.max_abs() <= sup_bound_constant(F, {0: -4.0}, H, net) + 1e-6
    with pytest.raises(ValueError):
        solve_discounted(0.0, F, None, H, net)
    with pytest.raises(ValueError):
        solve_discounted(1.0, F, None, H, net, method="bogus")


def test_ergodic_constants():
    net = build_network(fixtures.asymmetric_star(33))
    F = EdgeField.constant(net, 2.0)
    sol = solve_ergodic(F, {v: 2.0 for v in net.interior_vertices}, H, net)
    assert abs(sol.rho - 2.0) <= 1e-6 and sol.u.max_abs() <= 1e-6


def test_ergodic_cosine_and_shift_invariance():
    net, F = cosine_line(129)
    sol = solve_ergodic(F, None, H, net)
    assert abs(quadrature(sol.u, net)) <= 1e-12
    assert abs(sol.rho - (-0.006332129017795257)) <= 1e-3
    shifted = solve_ergodic(F + 0.75, None, H, net)
    assert shifted.rho - sol.rho == pytest.approx(0.75, abs=1e-10)
    assert (shifted.u - sol.u).max_abs() <= 1e-10


def test_ergodic_shift_with_vertex_costs():
    net = build_network(fixtures.sticky_star(65))
    F = EdgeField.from_function(net, lambda a, s: np.sin(2 * np.pi * s) * (a + 1))
    a = solve_ergodic(F, {0: 0.4}, H, net)
    b = solve_ergodic(F + 1.5, {0: 1.9}, H, net)
    assert b.rho - a.rho == pytest.approx(1.5, abs=1e-9)
    assert (b.u - a.u).max_abs() <= 1e-9


def test_ergodic_reports_failure():
    net, F = cosine_line(65)
    with pytest.raises(SolverError):
        solve_ergodic(F, None, H, net, k_max=3, k_min=3, tol=1e-14)


def test_comparison_examples():
    net = build_network(fixtures.sticky_star(65))
    F = EdgeField.from_function(net, lambda a, s: np.cos(2 * np.pi * s))
    th = {0: 0.5}
    lam = 1.0
    c1 = sup_bound_constant(F, th, H, net)
    lo, hi = EdgeField.constant(net, -c1 / lam), EdgeField.constant(net, c1 / lam)
    assert check_comparison(lo, hi, lam, F, th, H, net).passed
    u = solve_discounted(lam, F, th, H, net).u
    same = check_comparison(u, u, lam, F, th, H, net)
    assert same.passed and same.max_violation == 0.0
    assert check_comparison(u, u + 0.1, lam, F, th, H, net).passed
    with pytest.raises(NotAdmissibleError):
        check_comparison(u + 0.1, u, lam, F, th, H, net)
