from __future__ import annotations

import math

import numpy as np
import pytest

from stickymfg import fixtures
from stickymfg.errors import DomainError
from stickymfg.fokker_planck import (TestFunction, domain_defect, duality_residual, make_test_function,
                                     solve_stationary, solve_unit_mass, vertex_flux_residual, weak_form_residual)
from stickymfg.network import EdgeField, build_network, quadrature, trace_ratio


@pytest.fixture
def star():
    return build_network(fixtures.sticky_star(65))


def test_unit_mass_single_edge_is_constant():
    net = build_network(fixtures.single_edge(33))
    m = solve_unit_mass(EdgeField.zeros(net), net)
    assert np.allclose(m[0], 1.0, atol=1e-12)


def test_unit_mass_star_closed_form(star):
    m = solve_unit_mass(EdgeField.zeros(star), star)
    assert m.max_abs() == pytest.approx(0.5, abs=1e-12)
    assert (m - 0.5).max_abs() <= 1e-12
    assert trace_ratio(m, 0, star) == pytest.approx(1.0)


def test_unit_mass_with_drift_converges_at_second_order():
    errs = []
    for n in (33, 65, 129):
        net = build_network(fixtures.single_edge(n))
        m = solve_unit_mass(EdgeField.constant(net, 1.0), net)
        x = net.grid(0)
        errs.append(np.max(np.abs(m[0] - np.exp(x) / (math.e - 1))))
    assert errs[0] < 1e-3
    assert math.log2(errs[1] / errs[2]) >= 1.9


def test_sticky_star_stationary_measure(star):
    sol = solve_stationary(EdgeField.zeros(star), star)
    assert (sol.measure.density - 1 / 3).max_abs() <= 1e-8
    assert sol.measure.atoms[0] == pytest.approx(1 / 3, abs=1e-8)
    assert sol.theta_star == pytest.approx(2 / 3, abs=1e-12)
    assert sol.traces[0] == pytest.approx(2 / 3, abs=1e-8)
    assert sol.measure.total_mass(star) == pytest.approx(1.0, abs=1e-12)


def test_non_sticky_network_has_no_atoms_mass():
    spec = fixtures.triangle_with_tail(33)
    for v in spec["vertices"]:
        v["eta"] = 0.0
    net = build_network(spec)
    b = fixtures.smooth_drift(net, 0.7)
    sol = solve_stationary(b, net)
    assert all(a == 0.0 for a in sol.measure.atoms.values())
    assert sol.theta_star == 1.0
    assert (sol.measure.density - solve_unit_mass(b, net)).max_abs() <= 1e-12


def test_single_edge_has_empty_atoms():
    net = build_network(fixtures.single_edge(33))
    sol = solve_stationary(EdgeField.constant(net, 2.0), net)
    assert sol.measure.atoms == {}
    assert sol.theta_star == 1.0


@pytest.mark.parametrize("name", list(fixtures.DUALITY_FIXTURES))
def test_measure_is_positive_with_unit_mass_and_balanced_fluxes(name):
    builder, amp = fixtures.DUALITY_FIXTURES[name]
    net = build_network(builder(65))
    b = fixtures.smooth_drift(net, amp)
    sol = solve_stationary(b, net)
    assert sol.measure.density.min() > 0
    assert sol.measure.total_mass(net) == pytest.approx(1.0, abs=1e-10)
    flux = vertex_flux_residual(sol.measure.density, b, net)
    pinned = (net.interior_vertices or net.boundary_vertices)[0]
    assert max(abs(r) for v, r in flux.items() if v != pinned) < 1e-8
    # the pinned vertex row carries the mass constraint; its balance holds to truncation order
    fine = build_network(builder(129))
    fsol = solve_stationary(fixtures.smooth_drift(fine, amp), fine)
    fflux = vertex_flux_residual(fsol.measure.density, fixtures.smooth_drift(fine, amp), fine)
    assert abs(fflux[pinned]) <= max(abs(flux[pinned]) / 3.5, 1e-10)


def test_constant_test_function_has_zero_residual(star):
    sol = solve_stationary(EdgeField.zeros(star), star)
    one = TestFunction(EdgeField.constant(star, 1.0), EdgeField.zeros(star), EdgeField.zeros(star))
    assert duality_residual(one, sol, EdgeField.zeros(star), star) == 0.0


def test_make_test_function_properties():
    line = build_network(fixtures.single_edge(65))
    f = make_test_function(0, line)
    assert abs(f.outward(0, 0, line)) < 1e-12 and abs(f.outward(1, 0, line)) < 1e-12
    net = build_network(fixtures.sticky_star(65))
    g = make_test_function(1, net)
    assert domain_defect(g, EdgeField.zeros(net), net) <= 1e-12
    h = make_test_function(1, net)
    assert all(np.array_equal(a, b) for a, b in zip(g.values, h.values))


def test_domain_violation_is_rejected(star):
    f = make_test_function(3, star)
    bad = f.with_d1(f.d1 + EdgeField.from_function(star, lambda a, s: np.where(s == 0, 1.0, 0.0)))
    sol = solve_stationary(EdgeField.zeros(star), star)
    with pytest.raises(DomainError):
        duality_residual(bad, sol, EdgeField.zeros(star), star)


def test_duality_residual_decays_on_refinement():
    res = []
    for n in (65, 129):
        net = build_network(fixtures.asymmetric_star(n))
        b = fixtures.smooth_drift(net, 1.0)
        sol = solve_stationary(b, net)
        res.append(max(duality_residual(make_test_function(s, net, b), sol, b, net) for s in range(5)))
    assert res[0] <= 1e-3
    assert res[0] / res[1] >= 3.5


def test_weak_form_residual_small_for_smooth_phi(star):
    b = fixtures.smooth_drift(star, 0.0)
    sol = solve_stationary(b, star)
    phi = EdgeField.from_function(star, lambda a, s: np.cos(np.pi * s))
    assert abs(weak_form_residual(sol.measure.density, b, phi, star)) < 1e-6
    assert quadrature(sol.measure.density, star) == pytest.approx(2 / 3)
