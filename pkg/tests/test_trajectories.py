import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qstateprep.bloch import GROUND_STATE, ControlPulse, SystemParams, fidelity, lindblad_evolve
from qstateprep.errors import NonPureTarget
from qstateprep.mlp import BoundaryPair, path_states, solve_mlp
from qstateprep.rng import stream
from qstateprep.trajectories import (
    DEFAULT_BINS,
    NoisePath,
    chi_square_band,
    final_state_histogram,
    path_log_likelihood,
    sample_noise,
    simulate_ensemble,
    simulate_trajectory,
    success_rate,
)

MLP_PULSE = ControlPulse.constant(-1 / math.sqrt(3), math.pi * math.sqrt(3) / 2)


def test_noise_variance_within_chi_square_band():
    path = sample_noise(10**6, 0.01, 1.0, stream(3))
    lo, hi = chi_square_band(10**6, 100.0)
    assert lo <= path.values.var(ddof=1) <= hi
    assert abs(path.values.var(ddof=1) - 100.0) <= 0.5
    assert abs(path.values.mean()) < 5 * 10 / 1000


def test_noise_determinism_and_zero_kappa():
    a = sample_noise(100, 0.01, 2.0, stream(5, 1))
    b = sample_noise(100, 0.01, 2.0, stream(5, 1))
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_noise(100, 0.01, 2.0, stream(5, 2)).values)
    assert np.all(sample_noise(10, 0.01, 0.0, stream(0)).values == 0.0)
    with pytest.raises(ValueError):
        sample_noise(0, 0.01, 1.0, stream(0))


def test_log_likelihood_examples():
    assert path_log_likelihood(NoisePath.zeros(np.full(5, 0.01)), 1.0) == 0.0
    assert path_log_likelihood(NoisePath([1.0], 0.01), 1.0) == pytest.approx(-0.005)
    path = sample_noise(50, 0.01, 1.0, stream(9))
    doubled = NoisePath(2 * path.values, path.dt)
    assert path_log_likelihood(doubled, 1.0) == pytest.approx(4 * path_log_likelihood(path, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 5.0))
def test_zero_path_is_likelihood_maximum(seed, kappa):
    path = sample_noise(200, 0.01, kappa, stream(seed))
    assert path_log_likelihood(path, kappa) < path_log_likelihood(NoisePath.zeros(path.dt), kappa)


def test_noiseless_trajectory_independent_of_seed():
    p = SystemParams(g=0.0)
    a, _ = simulate_trajectory(GROUND_STATE, MLP_PULSE, p, rng=stream(1))
    b, _ = simulate_trajectory(GROUND_STATE, MLP_PULSE, p, rng=stream(2))
    np.testing.assert_array_equal(a, b)


def test_zero_noise_trajectory_hits_mlp_endpoint(reference_target):
    b = BoundaryPair.from_ground(reference_target)
    ctrl = solve_mlp(b)
    pulse = ctrl.pulse()
    widths, _ = pulse.step_grid(0.01)
    for renorm in (False, True):
        q, _ = simulate_trajectory(GROUND_STATE, pulse, SystemParams.from_gamma(0.5), noise=NoisePath.zeros(widths), renormalize=renorm)
        assert np.linalg.norm(q - reference_target) < ctrl.time * 0.01**2


def test_recorded_states_follow_analytic_path(reference_target):
    ctrl = solve_mlp(BoundaryPair.from_ground(reference_target))
    pulse = ctrl.pulse()
    widths, _ = pulse.step_grid(0.01)
    _, _, states = simulate_trajectory(GROUND_STATE, pulse, SystemParams(), noise=NoisePath.zeros(widths), record=True, stepper="exact")
    times = np.concatenate([[0], np.cumsum(widths)])
    np.testing.assert_allclose(states, path_states(GROUND_STATE, ctrl.omega, 1.0, times), atol=1e-12)


def test_prescribed_noise_length_checked():
    with pytest.raises(ValueError):
        simulate_trajectory(GROUND_STATE, MLP_PULSE, SystemParams(), noise=NoisePath.zeros(np.full(3, 0.01)))
    with pytest.raises(ValueError):
        simulate_trajectory(GROUND_STATE, MLP_PULSE, SystemParams())


def test_single_member_ensemble_is_trajectory():
    p = SystemParams.from_gamma(0.4)
    ens = simulate_ensemble(GROUND_STATE, MLP_PULSE, p, n_total=1, master_seed=11)
    q, _ = simulate_trajectory(GROUND_STATE, MLP_PULSE, p, rng=stream(11, 0))
    np.testing.assert_array_equal(ens.finals[0], q)


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_ensemble_bit_identical_across_threads(threads, reference_target):
    p = SystemParams.from_gamma(0.8)
    ref = simulate_ensemble(GROUND_STATE, MLP_PULSE, p, n_total=5000, master_seed=4, target=reference_target)
    other = simulate_ensemble(GROUND_STATE, MLP_PULSE, p, n_total=5000, master_seed=4, target=reference_target, threads=threads)
    assert ref.finals.tobytes() == other.finals.tobytes()
    assert ref.avg_fidelity == other.avg_fidelity


def test_ensemble_statistics_invariants(reference_target):
    p = SystemParams.from_gamma(0.1)
    ens = simulate_ensemble(GROUND_STATE, MLP_PULSE, p, n_total=4000, master_seed=2, target=reference_target)
    np.testing.assert_allclose(ens.mean_final, ens.finals.mean(axis=0), atol=1e-15)
    assert ens.avg_fidelity == pytest.approx(fidelity(ens.mean_final, reference_target), abs=1e-12)
    mean_path = lindblad_evolve(GROUND_STATE, MLP_PULSE, p)
    assert np.all(np.abs(ens.mean_final - mean_path) <= 5 * ens.std_final / math.sqrt(ens.n_total))


def test_noiseless_ensemble_histogram_single_bin(reference_target):
    ens = simulate_ensemble(GROUND_STATE, MLP_PULSE, SystemParams(), n_total=50, master_seed=0)
    for ax in "xyz":
        h = final_state_histogram(ens, ax)
        assert h.counts.sum() == 50 and np.count_nonzero(h.counts) == 1
    assert success_rate(ens, reference_target).rate_percent == 100.0


def test_histogram_csv_and_mode(reference_target):
    ens = simulate_ensemble(GROUND_STATE, MLP_PULSE, SystemParams.from_gamma(0.1), n_total=3000, master_seed=0)
    h = final_state_histogram(ens, "x")
    assert len(h.counts) == DEFAULT_BINS and h.counts.sum() == 3000
    mode = 0.5 * (h.edges[np.argmax(h.counts)] + h.edges[np.argmax(h.counts) + 1])
    assert abs(mode - reference_target[0]) < 0.1
    lines = h.to_csv().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count" and len(lines) == DEFAULT_BINS + 1
    single = simulate_ensemble(GROUND_STATE, MLP_PULSE, SystemParams.from_gamma(0.1), n_total=1)
    assert np.count_nonzero(final_state_histogram(single, "y", 10).counts) == 1
    with pytest.raises(ValueError):
        final_state_histogram(ens, "w")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-4, 1.0), min_size=2, max_size=6))
def test_success_rate_monotone_in_delta(deltas):
    ens = _shared_ensemble()
    target = np.array([-math.sin(2 * math.pi / 3), 0.0, -0.5])
    rates = [success_rate(ens, target, d).rate_percent for d in sorted(deltas)]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert success_rate(ens, target, 1.0).rate_percent == 100.0


_CACHE = {}


def _shared_ensemble():
    if "ens" not in _CACHE:
        _CACHE["ens"] = simulate_ensemble(GROUND_STATE, MLP_PULSE, SystemParams.from_gamma(0.3), n_total=2000, master_seed=1)
    return _CACHE["ens"]


def test_success_rate_validation(reference_target):
    ens = _shared_ensemble()
    with pytest.raises(ValueError):
        success_rate(ens, reference_target, 0.0)
    with pytest.raises(NonPureTarget):
        success_rate(ens, reference_target * 0.5)
    rep = success_rate(ens, reference_target, 0.01)
    assert rep.rate_percent == 100 * rep.n_success / rep.n_total
    assert rep.to_dict()["n_total"] == 2000


def test_streaming_matches_full(reference_target):
    p = SystemParams.from_gamma(0.3)
    full = simulate_ensemble(GROUND_STATE, MLP_PULSE, p, n_total=5000, master_seed=8, target=reference_target)
    streamed = simulate_ensemble(GROUND_STATE, MLP_PULSE, p, n_total=5000, master_seed=8, target=reference_target, max_retained=500, threads=2)
    assert not streamed.complete and len(streamed.finals) == 500
    np.testing.assert_allclose(streamed.mean_final, full.mean_final, atol=1e-12)
    np.testing.assert_allclose(streamed.std_final, full.std_final, rtol=1e-9)
    assert streamed.avg_fidelity == pytest.approx(full.avg_fidelity, abs=1e-12)
    for d in (0.005, 0.01):
        assert success_rate(streamed, reference_target, d).n_success == success_rate(full, reference_target, d).n_success
    np.testing.assert_array_equal(final_state_histogram(streamed, "z").counts, final_state_histogram(full, "z").counts)
    # reservoir rows are genuine trajectory finals
    full_rows = {tuple(r) for r in full.finals}
    assert all(tuple(r) in full_rows for r in streamed.finals)
    with pytest.raises(ValueError):
        success_rate(streamed, reference_target, 0.02)


def test_ensemble_to_dict(reference_target):
    ens = simulate_ensemble(GROUND_STATE, MLP_PULSE, SystemParams.from_gamma(0.1), n_total=3, target=reference_target)
    d = ens.to_dict()
    assert len(d["finals"]) == 3 and d["n_total"] == 3
    assert "finals" not in ens.to_dict(include_finals=False)
