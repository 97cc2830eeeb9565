import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offline_smpc import geometry
from offline_smpc.controller import MPCController, value_function
from offline_smpc.optkernel import StatusKind
from offline_smpc.simulator import sample_initial_states


def test_origin_is_fixed_point(plant_design):
    art = plant_design[2].artifact
    dec = MPCController(art).solve(np.zeros(2))
    assert dec.feasible
    np.testing.assert_allclose(dec.v_star, 0.0, atol=1e-10)
    np.testing.assert_allclose(dec.u, 0.0, atol=1e-10)
    assert value_function(art, np.zeros(2)) == pytest.approx(0.0, abs=1e-12)


def test_deadbeat_closed_form(deadbeat_design):
    art = deadbeat_design[2].artifact
    # J = x^2 + 2 v0^2 + (1 + P) v1^2: optimum v = 0 and V_T = x^2
    dec = MPCController(art).solve([0.5])
    np.testing.assert_allclose(dec.v_star, 0.0, atol=1e-12)
    assert dec.u == pytest.approx([0.0], abs=1e-12)
    assert dec.objective == pytest.approx(0.25, abs=1e-12)


def test_matches_grid_minimization(deadbeat_design):
    art = deadbeat_design[2].artifact
    # coupling terms push the unconstrained optimum out of the box |v| <= 1
    Qt = np.array([[3.0, 2.5, 2.0], [2.5, 2.0, 0.0], [2.0, 0.0, 2.0]])
    art2 = dataclasses.replace(art, Qtilde=Qt)
    x = 1.0
    dec = MPCController(art2).solve([x])
    g = np.linspace(-1.0, 1.0, 2001)
    V0, V1 = np.meshgrid(g, g, indexing="ij")
    J = Qt[0, 0] * x**2 + 2 * x * (Qt[0, 1] * V0 + Qt[0, 2] * V1) + Qt[1, 1] * V0**2 + Qt[2, 2] * V1**2
    i = np.unravel_index(np.argmin(J), J.shape)
    assert dec.objective == pytest.approx(J[i], abs=1e-5)
    np.testing.assert_allclose(dec.v_star, [V0[i], V1[i]], atol=2e-3)
    assert np.any(np.isclose(np.abs(dec.v_star), 1.0))


def test_far_state_infeasible(plant_design):
    art = plant_design[2].artifact
    x_b = sample_initial_states(art, 5, seed=1, mode="boundary")
    ctrl = MPCController(art)
    for x in 10 * x_b:
        assert not geometry.contains(art.C_inf, x)
        dec = ctrl.solve(x)
        assert dec.status is StatusKind.INFEASIBLE
        assert dec.u is None and dec.v_star is None and dec.objective is None


def test_decision_structure_and_step_state(plant_design):
    art = plant_design[2].artifact
    ctrl = MPCController(art)
    x = sample_initial_states(art, 3, seed=2)[0]
    dec = ctrl.step(x)
    assert dec.feasible
    assert np.array_equal(dec.u, art.K @ x + dec.v_star[: art.m])
    assert ctrl.k == 1 and ctrl.last_status is StatusKind.OPTIMAL
    assert np.array_equal(ctrl.last_v, dec.v_star)
    assert ctrl.is_feasible(x, dec.v_star)
    # hard input row on the applied input
    assert np.all(art.H_u @ dec.u <= 1 + 1e-8)
    np.testing.assert_array_equal(ctrl.shifted_candidate(dec.v_star)[-art.m:], 0.0)


def test_deterministic_decisions(plant_design):
    art = plant_design[2].artifact
    x = sample_initial_states(art, 4, seed=5)[3]
    a, b = MPCController(art).solve(x), MPCController(art).solve(x)
    assert np.array_equal(a.v_star, b.v_star) and a.objective == b.objective


def test_rejects_bad_state(plant_design):
    art = plant_design[2].artifact
    with pytest.raises(ValueError):
        MPCController(art).solve([np.nan, 0.0])
    with pytest.raises(ValueError):
        MPCController(art).solve([0.0])


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_value_function_convex(plant_design, seed, lam):
    art = plant_design[2].artifact
    ctrl = MPCController(art)
    a, b = sample_initial_states(art, 2, seed=seed)
    mix = lam * a + (1 - lam) * b
    va, vb, vm = (value_function(art, x, ctrl) for x in (a, b, mix))
    assert vm <= lam * va + (1 - lam) * vb + 1e-7
