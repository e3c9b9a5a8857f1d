import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from qstateprep.bloch import GROUND_STATE, ControlPulse, SystemParams, exact_rotation_step, fidelity
from qstateprep.errors import ControlCapExceeded, DivergentControl, NonPureTarget, ResidualExceeded
from qstateprep.mlp import (
    BoundaryPair,
    analytic_path,
    geometric_solve,
    ground_state_angle,
    optimal_rabi,
    optimal_time,
    solve_mlp,
    verify_variational_solution,
)
from qstateprep.rng import stream
from qstateprep.trajectories import path_log_likelihood, simulate_ensemble, sample_noise, simulate_trajectory

sphere = st.tuples(st.floats(0, 2 * math.pi), st.floats(-0.999, 0.999)).map(
    lambda a: np.array([math.sqrt(1 - a[1] ** 2) * math.cos(a[0]), math.sqrt(1 - a[1] ** 2) * math.sin(a[0]), a[1]])
)


def land(b, ctrl):
    return exact_rotation_step(b.initial, 0.0, ctrl.omega, SystemParams(), ctrl.time)


def test_reference_control(reference_target):
    ctrl = solve_mlp(BoundaryPair.from_ground(reference_target))
    assert ctrl.omega == pytest.approx(-1 / math.sqrt(3), abs=1e-12)
    assert ctrl.time == pytest.approx(math.pi * math.sqrt(3) / 2, abs=1e-12)
    assert not ctrl.quadrant_corrected
    assert ctrl.to_dict() == {"omega": ctrl.omega, "time": ctrl.time, "quadrant_corrected": False}


def test_equator_target():
    b = BoundaryPair.from_ground([1.0, 0.0, 0.0])
    assert optimal_rabi(b) == pytest.approx(1.0)
    assert optimal_time(b) == pytest.approx(math.pi / math.sqrt(2), abs=1e-12)
    g = geometric_solve(b)
    assert g.omega == pytest.approx(1.0, abs=1e-15)
    assert math.atan2(1.0, 1.0) == pytest.approx(math.pi / 4)


def test_flat_boundaries_give_zero_drive():
    b = BoundaryPair([0.6, 0.0, 0.8], [0.0, 0.6, 0.8])
    ctrl = solve_mlp(b)
    assert ctrl.omega == 0.0
    np.testing.assert_allclose(land(b, ctrl), b.target, atol=1e-12)


def test_divergent_and_capped_controls():
    with pytest.raises(DivergentControl, match="unreachable with a single constant pulse"):
        solve_mlp(BoundaryPair.from_ground([0.0, 0.0, 1.0]))
    with pytest.raises(DivergentControl):
        geometric_solve(BoundaryPair.from_ground([0.0, 1.0, 0.0]))
    steep = BoundaryPair.from_ground([-0.04, math.sqrt(1 - 0.04**2 - 0.01), 0.1])
    with pytest.raises(ControlCapExceeded):
        solve_mlp(steep)
    assert solve_mlp(steep, omega_cap=100.0).omega == pytest.approx(-27.5)
    with pytest.raises(NonPureTarget):
        BoundaryPair.from_ground([0.5, 0.0, 0.0])


def test_endpoint_exactness(pairs_1000):
    for b in pairs_1000:
        ctrl = solve_mlp(b)
        assert ctrl.time > 0
        assert fidelity(land(b, ctrl), b.target) >= 1 - 1e-9


def test_solver_equivalence(pairs_1000):
    for b in pairs_1000:
        a, g = solve_mlp(b), geometric_solve(b)
        assert abs(a.omega - g.omega) <= 1e-9
        assert abs(a.time - g.time) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(sphere)
def test_mirror_symmetry(q):
    assume(abs(q[0]) > 1e-2)
    mirror = np.array([-q[0], -q[1], q[2]])
    try:
        a = solve_mlp(BoundaryPair.from_ground(q))
    except ControlCapExceeded:
        return
    b = solve_mlp(BoundaryPair.from_ground(mirror))
    assert b.omega == pytest.approx(-a.omega, abs=1e-12)
    assert b.time == pytest.approx(a.time, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(sphere, sphere)
def test_quadrant_rule_self_certifies(qi, qf):
    assume(abs(qf[0] - qi[0]) > 1e-3)
    b = BoundaryPair(qi, qf)
    try:
        ctrl = solve_mlp(b)
    except ControlCapExceeded:
        return
    assert fidelity(land(b, ctrl), qf) >= 1 - 1e-12


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([-1.0, 1.0]), st.floats(-0.95, 0.95))
def test_ground_state_angle_formula(sign, z):
    x = sign * math.sqrt(1 - z * z)
    target = np.array([x, 0.0, z])
    try:
        ctrl = solve_mlp(BoundaryPair.from_ground(target))
    except ControlCapExceeded:
        return
    w = math.hypot(ctrl.omega, 1.0)
    # arccos loses half the digits next to a half turn
    assert ground_state_angle(x, z) == pytest.approx(ctrl.time * w, abs=1e-7)


def test_gamma_independence(reference_target):
    b = BoundaryPair.from_ground(reference_target)
    ctrl = solve_mlp(b)
    for gamma in (0.0, 0.1, 0.8):
        report = verify_variational_solution(b, params=SystemParams.from_gamma(gamma, kappa=2.0))
        assert report.ok
        assert solve_mlp(b) == ctrl


def test_analytic_path(reference_target):
    b = BoundaryPair.from_ground(reference_target)
    times, states = analytic_path(b, n_points=2)
    np.testing.assert_array_equal(states, [b.initial, b.target])
    times, states = analytic_path(b, n_points=257)
    np.testing.assert_allclose(np.linalg.norm(states, axis=1), 1.0, atol=1e-9)
    eq = BoundaryPair.from_ground([1.0, 0.0, 0.0])
    times, states = analytic_path(eq, n_points=3)
    mid = exact_rotation_step(GROUND_STATE, 0.0, 1.0, SystemParams(), times[1])
    np.testing.assert_allclose(states[1], mid, atol=1e-9)
    with pytest.raises(ValueError):
        analytic_path(b, n_points=1)


def test_full_revolution_returns_to_start():
    b = BoundaryPair.from_ground([0.6, 0.0, 0.8])
    w = math.hypot(solve_mlp(b).omega, 1.0)
    np.testing.assert_allclose(exact_rotation_step(GROUND_STATE, 0.0, solve_mlp(b).omega, SystemParams(), 2 * math.pi / w), GROUND_STATE, atol=1e-12)


def test_variational_residuals(reference_target):
    b = BoundaryPair.from_ground(reference_target)
    p = SystemParams.from_gamma(0.1)
    zero = verify_variational_solution(b, params=p, p0=np.zeros(3))
    assert zero.max_residual == 0.0
    for c in (0.5, -3.0):
        rep = verify_variational_solution(b, params=p, p0=c * b.initial)
        assert rep.ok and rep.max_residual <= 1e-6
        assert rep.path_deviation < 1e-3
    assert verify_variational_solution(b, params=p).endpoint_miss < 1e-12
    probe = verify_variational_solution(b, params=p, omega=1.1 * solve_mlp(b).omega)
    assert probe.endpoint_miss > 1e-3
    with pytest.raises(ResidualExceeded):
        verify_variational_solution(b, params=p, p0=[1.0, 0.0, 0.0])
    assert not verify_variational_solution(b, params=p, p0=[1.0, 0.0, 0.0], raise_on_failure=False).ok


def test_variational_residuals_random_pairs():
    from conftest import solvable_pairs

    for b in solvable_pairs(5, seed=4):
        assert verify_variational_solution(b, params=SystemParams.from_gamma(0.3), p0=2.0 * b.initial).ok


def test_zero_path_maximizes_likelihood_among_successes(reference_target):
    # rejection sampling at a coarse step: keep noise paths that land near the target
    b = BoundaryPair.from_ground(reference_target)
    pulse = solve_mlp(b).pulse()
    params = SystemParams.from_gamma(0.1)
    dt = 0.1
    accepted = []
    for i in range(1000):
        q, noise = simulate_trajectory(GROUND_STATE, pulse, params, dt, stream(21, i))
        if fidelity(q, reference_target) >= 1 - 0.01:
            accepted.append(path_log_likelihood(noise, params.kappa))
    assert len(accepted) > 10
    assert max(accepted) < 0.0
