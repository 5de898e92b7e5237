from __future__ import annotations

import numpy as np
import pytest

from stickymfg import fixtures
from stickymfg.errors import ConfigError
from stickymfg.fokker_planck import solve_stationary
from stickymfg.hamiltonian import QuadraticHamiltonian
from stickymfg.mfg import (CouplingModel, MFGSolution, check_monotone, concentrated_measure, coupling_evaluate,
                           duality_gap, fixed_point_defect, optimal_drift, solve_mfg)
from stickymfg.network import EdgeField, GraphMeasure, build_network

H = QuadraticHamiltonian()


@pytest.fixture(scope="module")
def star():
    return build_network(fixtures.sticky_star(65))


@pytest.fixture(scope="module")
def two_solutions(star):
    F = CouplingModel.identity()
    s1 = solve_mfg(F, {0: 0.0}, H, star)
    s2 = solve_mfg(F, {0: 0.0}, H, star, m0=concentrated_measure(star, 0))
    return s1, s2


def test_coupling_on_closed_form_measure(star):
    m = solve_stationary(EdgeField.zeros(star), star).measure
    edge, vert = coupling_evaluate(CouplingModel.identity(), m, star)
    assert (edge - 1 / 3).max_abs() <= 1e-8
    assert vert[0] == pytest.approx(2 / 3, abs=1e-8)
    edge, vert = coupling_evaluate(CouplingModel.zero(), m, star)
    assert edge.max_abs() == 0.0 and vert[0] == 0.0
    sq = CouplingModel.from_spec({"edge": "power:2", "vertex": "identity"})
    half = GraphMeasure(EdgeField.constant(star, 0.5), {0: 0.0})
    assert (sq.edge_cost(half.density) - 0.25).max_abs() == 0.0


def test_coupling_spec_validation():
    with pytest.raises(ConfigError):
        CouplingModel.from_spec({"edge": "identity", "colour": "red"})
    with pytest.raises(ConfigError):
        CouplingModel.from_spec({"edge": "power:-1"})
    with pytest.raises(ConfigError):
        CouplingModel.from_spec({"edge": "table", "table": {"m": [1, 0], "F": [0, 1]}})
    t = CouplingModel.from_spec({"edge": "table", "table": {"m": [0, 1], "F": [0, 2]}})
    assert t.edge_fn(np.array([0.25]))[0] == pytest.approx(0.5)


def test_monotonicity_check(star):
    assert check_monotone(CouplingModel.identity(), star)
    dec = CouplingModel(lambda m: -np.asarray(m), lambda t: -t, "strict")
    assert not check_monotone(dec, star)


def test_decoupled_system(star):
    sol = solve_mfg(CouplingModel.zero(), {0: 0.0}, H, star)
    assert sol.report.iterations <= 2
    assert abs(sol.rho) <= 1e-10 and sol.u.max_abs() <= 1e-8
    assert (sol.measure.density - 1 / 3).max_abs() <= 1e-8
    assert sol.measure.atoms[0] == pytest.approx(1 / 3, abs=1e-8)


def test_constant_coupling_shifts_rho(star):
    sol = solve_mfg(CouplingModel.constant(0.8), {0: 0.0}, H, star)
    assert sol.rho == pytest.approx(0.8, abs=1e-9)
    assert (sol.measure.density - 1 / 3).max_abs() <= 1e-8


def test_uniqueness_from_two_starts(two_solutions):
    s1, s2 = two_solutions
    assert s1.report.converged and s2.report.converged
    assert (s1.u - s2.u).max_abs() <= 1e-6
    assert abs(s1.rho - s2.rho) <= 1e-6
    assert s1.measure.distance(s2.measure) <= 1e-6
    for s in (s1, s2):
        assert all(abs(h["mass"] - 1.0) <= 1e-10 for h in s.report.extra["history"])


def test_reapplying_the_map_is_stationary(star, two_solutions):
    s1, _ = two_solutions
    d = fixed_point_defect(s1, CouplingModel.identity(), {0: 0.0}, H, star, 1e-8)
    assert d["measure"] + d["rho"] <= 2e-8


def test_duality_gap_examples(star, two_solutions):
    s1, s2 = two_solutions
    F = CouplingModel.identity()
    same = duality_gap(s1, s1, F, H, star)
    assert abs(same.total) <= 1e-10
    two = duality_gap(s1, s2, F, H, star)
    assert abs(two.total) <= 1e-8
    # pairs that are not solutions: each Bregman term is still nonnegative
    rng = np.random.default_rng(5)
    for _ in range(5):
        u1 = EdgeField.from_function(star, lambda a, s: rng.normal() * np.sin(3 * s + rng.normal()))
        u2 = EdgeField.from_function(star, lambda a, s: rng.normal() * np.cos(2 * s))
        m = solve_stationary(optimal_drift(u1, H, star), star).measure
        m2 = solve_stationary(optimal_drift(u2, H, star), star).measure
        a = MFGSolution(u1, 0.0, m, optimal_drift(u1, H, star), s1.report)
        b = MFGSolution(u2, 0.0, m2, optimal_drift(u2, H, star), s1.report)
        g = duality_gap(a, b, F, H, star)
        assert g.bregman_1 >= -1e-10 and g.bregman_2 >= -1e-10 and g.coupling >= -1e-10


def test_invalid_options(star):
    with pytest.raises(ValueError):
        solve_mfg(CouplingModel.identity(), None, H, star, damping=0.0)
    with pytest.raises(ValueError):
        solve_mfg(CouplingModel.identity(), None, H, star, tol=-1.0)
