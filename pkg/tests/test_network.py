from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stickymfg import fixtures
from stickymfg.errors import InconsistentTraceError, NetworkError
from stickymfg.network import (EdgeField, GraphMeasure, build_network, derivative, is_continuous,
                               network_to_spec, outward_derivative, quadrature, trace_ratio)


def star(g1=0.5, g2=0.5, normalize=False, n=65):
    spec = fixtures.sticky_star(n)
    spec["edges"][0]["gamma_from"] = g1
    spec["edges"][1]["gamma_from"] = g2
    spec["normalize_gamma"] = normalize
    return spec


def test_single_edge_has_two_boundary_vertices():
    net = build_network(fixtures.single_edge())
    assert net.boundary_vertices == [0, 1]
    assert net.interior_vertices == []


def test_sticky_star_is_valid():
    net = build_network(star())
    v = net.vertex_index("c")
    assert net.interior_vertices == [v]
    assert net.vertices[v].eta == 0.5
    assert sum(net.edges[a].mu * g for a, g in net.vertices[v].gamma.items()) == pytest.approx(1.0)


def test_gamma_violation_is_reported():
    with pytest.raises(NetworkError, match="H1"):
        build_network(star(0.7, 0.7))


def test_normalize_gamma_rescales():
    net = build_network(star(0.7, 0.7, normalize=True))
    assert net.vertices[0].gamma == {0: 0.5, 1: 0.5}


@pytest.mark.parametrize("mutate, msg", [
    (lambda s: s["edges"][0].update(length=0.0), "length"),
    (lambda s: s["edges"][0].update(mu=-1.0), "mu"),
    (lambda s: s["edges"][1].update(id="e1"), "duplicate edge"),
    (lambda s: s["edges"][0].update(to="c"), "self-loop"),
    (lambda s: s["edges"].append({"id": "x", "from": "p", "to": "q", "length": 1.0}), "connected"),
    (lambda s: s.update(bogus=1), "schema"),
])
def test_invalid_specs(mutate, msg):
    spec = star()
    mutate(spec)
    with pytest.raises(NetworkError, match=msg):
        build_network(spec)


def test_spec_round_trip():
    net = build_network(fixtures.triangle_with_tail(17))
    again = build_network(network_to_spec(net))
    assert again == net


def line(n=11):
    return build_network(fixtures.single_edge(n))


def test_derivative_exact_for_affine_and_quadratic():
    net = line(11)
    x = net.grid(0)
    assert np.allclose(derivative(EdgeField((x,)), net)[0], 1.0, atol=1e-13)
    d = derivative(EdgeField((x**2,)), net)[0]
    assert np.allclose(d, 2 * x, atol=1e-12)


def test_derivative_second_order_on_sine():
    errs = []
    for n in (33, 65, 129):
        net = line(n)
        x = net.grid(0)
        errs.append(np.max(np.abs(derivative(EdgeField((np.sin(x),)), net)[0] - np.cos(x))))
    assert math.log2(errs[0] / errs[1]) > 1.9
    assert math.log2(errs[1] / errs[2]) > 1.9


def test_outward_derivative_signs():
    net = line(11)
    x = net.grid(0)
    f = EdgeField((x,))
    assert outward_derivative(f, 0, 0, net) == pytest.approx(-1.0)
    assert outward_derivative(f, 1, 0, net) == pytest.approx(1.0)
    assert outward_derivative(EdgeField.constant(net, 3.0), 0, 0, net) == 0.0
    g = EdgeField((x * (1 - x),))
    assert outward_derivative(g, 0, 0, net) == pytest.approx(-1.0)
    assert outward_derivative(g, 1, 0, net) == pytest.approx(-1.0)


def test_quadrature_examples():
    net = build_network(star())
    assert quadrature(EdgeField.constant(net, 1.0), net) == pytest.approx(2.0)
    e = line(11)
    x = e.grid(0)
    assert quadrature(EdgeField((x,)), e) == pytest.approx(0.5, abs=1e-15)
    e = line(101)
    assert abs(quadrature(EdgeField((e.grid(0) ** 2,)), e) - 1 / 3) <= 1e-4


def test_trace_ratio_examples():
    net = build_network(star())
    v = net.vertex_index("c")
    assert trace_ratio(EdgeField.constant(net, 0.5), v, net) == pytest.approx(1.0)
    assert trace_ratio(EdgeField.constant(net, 1 / 3), v, net) == pytest.approx(2 / 3)
    bad = EdgeField((np.full(65, 0.5), np.full(65, 1.0)))
    with pytest.raises(InconsistentTraceError):
        trace_ratio(bad, v, net)


def test_edge_field_arithmetic_and_continuity():
    net = build_network(star())
    f = EdgeField.constant(net, 2.0)
    g = (f * 3 - 1) / 5
    assert g.max_abs() == pytest.approx(1.0)
    assert is_continuous(f, net)
    jump = EdgeField((np.full(65, 1.0), np.full(65, 2.0)))
    assert not is_continuous(jump, net)


def test_measure_mass_and_mix():
    net = build_network(star())
    m1 = GraphMeasure(EdgeField.constant(net, 1 / 3), {0: 1 / 3})
    m2 = GraphMeasure(EdgeField.constant(net, 0.5), {0: 0.0})
    assert m1.total_mass(net) == pytest.approx(1.0)
    assert m1.mix(m2, 0.5).total_mass(net) == pytest.approx(1.0)
    assert m1.distance(m1) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.1, 4.0))
def test_normalized_gamma_always_satisfies_balance(g1, g2, mu):
    spec = star(g1, g2, normalize=True)
    spec["edges"][1]["mu"] = mu
    net = build_network(spec)
    v = net.vertices[0]
    assert sum(net.edges[a].mu * g for a, g in v.gamma.items()) == pytest.approx(1.0)
