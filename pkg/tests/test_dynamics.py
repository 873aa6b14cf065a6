import math
import warnings

import numpy as np
import pytest
from scipy import stats

from spinphoton.core import (
    DensityMatrix,
    StateVector,
    UnphysicalStateError,
    build_qd_model,
    entangled_state,
    ket,
    precession_operator,
)
from spinphoton.dynamics import (
    StepSizeError,
    TrajectoryEngine,
    conditional_joint_state,
    emission_branches,
    emission_joint_state,
    lindblad_evolve,
    max_step,
    mixed_spin,
    sample_ensemble,
    sample_trajectory,
)
from spinphoton.core import joint_from_branches
from spinphoton.sequences import NS, PS, Pulse, PulseSequence, preset_sequence

DE = 2 * math.pi * 7.35e9
DH = 2 * math.pi * 3e9
GAMMA = 1e9


@pytest.fixture(scope="module")
def model():
    return build_qd_model(DE, DH, GAMMA)


def trion_minus():
    return StateVector([0, 0, 1, 0], "levels")


def test_pi_pulse_flips_without_decay(model):
    seq = PulseSequence((Pulse(1 * NS, 250 * PS, "V4", "V", area=math.pi),), frame_period=2 * NS)
    ev = lindblad_evolve(model.without_decay(), seq, ket("x-").density(), dt=0.5 * PS)
    i = np.searchsorted(ev.times, 1.25 * NS + 1e-15)
    assert ev.populations[i, 2] >= 0.999


def test_free_decay_is_exponential_with_even_branching(model):
    seq = PulseSequence((), frame_period=3 * NS)
    ev = lindblad_evolve(model, seq, trion_minus(), record_every=100)
    decay = np.exp(-GAMMA * ev.times)
    np.testing.assert_allclose(ev.populations[:, 2], decay, atol=1e-8)
    np.testing.assert_allclose(ev.populations[:, 0], 0.5 * (1 - decay), atol=1e-8)
    np.testing.assert_allclose(ev.populations[:, 1], 0.5 * (1 - decay), atol=1e-8)


def test_pumping_reaches_frozen_level(model):
    seq = PulseSequence((Pulse(0.0, 4 * NS, "V1", "V", rabi=2 * math.pi * 1e9),), frame_period=5 * NS)
    ev = lindblad_evolve(model, seq, mixed_spin(), record_every=100)
    i = np.argmin(np.abs(ev.times - 4 * NS))
    # dt-converged value of the x- population after the 4 ns V1 pump
    assert ev.populations[i, 1] == pytest.approx(0.81438, abs=2e-4)
    assert ev.populations[i, 1] > ev.populations[i, 0]


@pytest.mark.parametrize("name", ["x_basis_positive_H", "x_basis_anticorr_H", "z_basis_sigma_plus"])
def test_density_matrix_stays_physical(model, name):
    ev = lindblad_evolve(model, preset_sequence(name), mixed_spin(), record_every=1)
    bad = ev.worst_violation()
    assert bad["trace"] < 1e-9
    assert bad["hermiticity"] < 1e-10
    assert bad["min_eigenvalue"] > -1e-10


def test_step_limit(model):
    assert max_step(model) == pytest.approx(0.02 * 2 * math.pi / DE)
    with pytest.raises(StepSizeError):
        lindblad_evolve(model, preset_sequence("x_basis_positive_H"), mixed_spin(), dt=10 * PS)
    with pytest.raises(StepSizeError):
        TrajectoryEngine(model, preset_sequence("x_basis_positive_H"), dt=-1.0)


def test_unphysical_initial_state(model):
    with pytest.raises(UnphysicalStateError):
        lindblad_evolve(model, PulseSequence((), frame_period=1 * NS), np.diag([1.2, -0.2, 0, 0]))


def test_emission_joint_state_from_trion(model):
    joint = emission_joint_state(trion_minus())
    assert joint.equals_up_to_phase(entangled_state())
    rho = emission_joint_state(trion_minus().density())
    np.testing.assert_allclose(rho.elements, entangled_state().density().elements, atol=1e-12)


def test_conditional_state_examples(model):
    period = 2 * math.pi / DE
    s2 = 1 / math.sqrt(2)
    assert conditional_joint_state(model, 0.0).equals_up_to_phase(entangled_state())
    assert conditional_joint_state(model, period).equals_up_to_phase(entangled_state())
    half = conditional_joint_state(model, period / 2)
    assert half.equals_up_to_phase(StateVector([s2, 0, 0, 1j * s2], "HV*x"))


@pytest.mark.parametrize("t", [0.0, 17 * PS, 40 * PS, 211 * PS])
def test_conditional_phase_matches_emission_then_precession(model, t):
    # emit in the lab frame, then undo the free spin precession accumulated since t = 0
    bh, bv = emission_branches(ket("Tx-").amplitudes)
    undo = precession_operator(DE, t).matrix.conj().T
    joint = joint_from_branches(undo @ bh, undo @ bv).normalized()
    assert joint.equals_up_to_phase(conditional_joint_state(model, t))


def test_unresolved_timing_warns(model):
    with pytest.warns(UserWarning, match="which-path"):
        conditional_joint_state(model, 0.0, detection_time_resolution=200 * PS)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        conditional_joint_state(model, 0.0, detection_time_resolution=20 * PS)


def test_trajectory_is_deterministic(model):
    seq = preset_sequence("x_basis_positive_H")
    engine = TrajectoryEngine(model, seq)
    a = sample_trajectory(model, seq, mixed_spin(), seed=5, n_frames=20, engine=engine)
    b = sample_trajectory(model, seq, mixed_spin(), seed=5, n_frames=20, engine=engine)
    assert [p.emission_time for p in a.photons] == [p.emission_time for p in b.photons]
    assert [p.polarization for p in a.photons] == [p.polarization for p in b.photons]
    assert len(a.photons) > 0


@pytest.fixture(scope="module")
def decay_engine(model):
    return TrajectoryEngine(model, PulseSequence((), frame_period=12 * NS))


def test_polarization_split_is_even(decay_engine):
    rng = np.random.default_rng(11)
    out = decay_engine.run_chains(np.tile(trion_minus().amplitudes, (100_000, 1)), 1, rng, axis="H")
    assert len(out.events) >= 99_990
    assert out.events.passed.mean() == pytest.approx(0.5, abs=0.005)


def test_emission_times_are_exponential(decay_engine):
    rng = np.random.default_rng(12)
    out = decay_engine.run_chains(np.tile(trion_minus().amplitudes, (5000, 1)), 1, rng)
    t = out.events.step * decay_engine.h
    res = stats.kstest(t, "expon", args=(0, 1 / GAMMA))
    assert res.pvalue > 0.01


def test_spin_branches_follow_polarization(decay_engine):
    rng = np.random.default_rng(13)
    out = decay_engine.run_chains(np.tile(trion_minus().amplitudes, (200, 1)), 1, rng)
    ev = out.events
    assert np.unique(ev.chain).size == ev.chain.size
    spin = out.final_psi[ev.chain, :2]
    passed = ev.passed
    # H photons leave x+, V photons leave x-
    assert np.allclose(np.abs(spin[passed, 0]), 1)
    assert np.allclose(np.abs(spin[~passed, 1]), 1)


def test_trajectories_match_master_equation(model):
    seq = preset_sequence("x_basis_positive_H")
    cps = np.linspace(0.5 * NS, 12.5 * NS, 7)
    ens = sample_ensemble(model, seq, mixed_spin(), 40_000, seed=3, checkpoints=cps)
    ev = lindblad_evolve(model, seq, mixed_spin())
    idx = np.round(ens.times / ens.step).astype(int)
    ref = ev.populations[idx]
    n = ens.n_trajectories
    sigma = np.sqrt(np.clip(ref * (1 - ref), 1e-12, None) / n)
    assert np.all(np.abs(ens.populations - ref) <= 5 * sigma + 1e-9)
