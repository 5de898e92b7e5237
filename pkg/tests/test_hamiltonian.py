from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stickymfg.hamiltonian import (ControlHamiltonian, ControlModel, FunctionHamiltonian, QuadraticHamiltonian,
                                   check_gradient, check_growth, hamiltonian_from_control)


def test_quadratic_control_examples():
    H = hamiltonian_from_control(ControlModel.quadratic_model(10.0))
    assert H.eval(0, 0.0, 1.0) == pytest.approx(0.5)
    assert H.optimal_control(0, 0.0, 1.0) == pytest.approx(-1.0)
    assert H.eval(0, 0.0, 0.0) == 0.0
    assert H.optimal_control(0, 0.0, 0.0) == 0.0
    H1 = hamiltonian_from_control(ControlModel.quadratic_model(1.0))
    assert H1.eval(0, 0.0, 3.0) == pytest.approx(2.5)
    assert H1.optimal_control(0, 0.0, 3.0) == pytest.approx(-1.0)


def test_generic_search_matches_closed_form():
    # same model written as a polynomial with a non-trivial drift offset, so the closed form is not used
    ctrl = ControlModel.polynomial(2.0, [0.0, 1.0], [0.0, 0.0, 0.5])
    assert ctrl.quadratic
    generic = ControlHamiltonian(ControlModel(ctrl.drift, ctrl.cost, 2.0, False, ctrl.params))
    closed = ControlHamiltonian(ctrl)
    p = np.linspace(-5, 5, 41)
    assert np.allclose(generic.eval(0, 0.3, p), closed.eval(0, 0.3, p), atol=1e-10)
    assert np.allclose(generic.optimal_control(0, 0.3, p), closed.optimal_control(0, 0.3, p), atol=1e-6)


def test_gradient_is_envelope_of_eval():
    H = hamiltonian_from_control(ControlModel.polynomial(3.0, [0.2, 1.5], [0.1, 0.3, 0.8]))
    p = np.linspace(-4, 4, 33)
    assert check_gradient(H, 0, 0.5, p) <= 1e-6
    assert check_gradient(QuadraticHamiltonian(), 0, 0.5, p) <= 1e-6


def test_flat_maximum_is_flagged():
    H = hamiltonian_from_control(ControlModel.polynomial(1.0, [0.0, 1.0], [0.0, 0.0, 0.0]))
    H.eval(0, 0.0, 0.0)  # -a*0 - 0 is flat in a
    assert H.h4_violations > 0


def test_quadratic_growth_bounds_hold():
    assert max(check_growth(QuadraticHamiltonian()).values()) <= 0.0


def test_zero_bound_rejected():
    with pytest.raises(ValueError):
        ControlHamiltonian(ControlModel.quadratic_model(0.0))


def test_function_hamiltonian_wraps_callables():
    H = FunctionHamiltonian(lambda a, x, p: np.abs(p), lambda a, x, p: np.sign(p), (1.0, 1.0), "abs")
    assert H.eval(0, 0.0, -2.0) == 2.0
    assert H.process_drift(0, 0.0, 3.0) == -1.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-20, 20), st.floats(0.5, 15))
def test_quadratic_control_is_convex_and_nonnegative(p, R):
    H = hamiltonian_from_control(ControlModel.quadratic_model(R))
    val = float(H.eval(0, 0.0, p))
    assert val >= 0.0
    lo, hi = float(H.eval(0, 0.0, p - 0.5)), float(H.eval(0, 0.0, p + 0.5))
    assert val <= 0.5 * (lo + hi) + 1e-12
