"""End-to-end acceptance checks; each test records one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts are repeated
in an "acceptance criteria" block of the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from spinphoton.analysis import (
    detector_limited_fidelity,
    fidelity_lower_bound,
    fringe_data,
    fringe_fit,
    gaussian_smearing_factor,
    timing_ratio,
)
from spinphoton.config import RunConfig
from spinphoton.core import build_qd_model, entangled_state, fringe_signal, joint_from_branches, ket
from spinphoton.detection import IRF, DetectorModel, run_experiment
from spinphoton.dynamics import (
    TrajectoryEngine,
    emission_joint_state,
    lindblad_evolve,
    mixed_spin,
    sample_ensemble,
)
from spinphoton.pipeline import detector_limited_section, scenario_seed
from spinphoton.rates import RateBudget, entangled_photon_rate, measurement_success_rate, per_minute, spin_spin_rate
from spinphoton.sequences import NS, PS, Pulse, PulseSequence, preset_sequence

DE = 2 * math.pi * 7.35e9
DH = 2 * math.pi * 3e9
GAMMA = 1e9
JITTER = 48e-12


@pytest.fixture(scope="module")
def model():
    return build_qd_model(DE, DH, GAMMA)


def test_entangled_state_generation(model, criterion):
    start = time.perf_counter()
    target = entangled_state()
    # 10 ps pi pulse on V4 from x-, then integrate through the pulse
    seq = PulseSequence((Pulse(0.2 * NS, 10 * PS, "V4", "V", area=math.pi),), frame_period=4 * NS)
    ev = lindblad_evolve(model, seq, ket("x-"), dt=0.5 * PS, record_every=2)
    i = np.searchsorted(ev.times, 0.21 * NS - 1e-16)
    trion = ev.populations[i, 2]
    rho_joint = emission_joint_state(ev.state(i)).elements
    f_master = float(np.real(np.vdot(target.amplitudes, rho_joint @ target.amplitudes)))
    # independent route: photon records of single-frame quantum-jump trajectories
    engine = TrajectoryEngine(model, seq, dt=0.5 * PS)
    out = engine.run_chains(np.tile(ket("x-", "levels").amplitudes, (500, 1)), 1, np.random.default_rng(1), keep_branches=True)
    photons = [joint_from_branches(bh, bv).normalized() for bh, bv in out.events.branches]
    f_traj = min(ph.fidelity(target) for ph in photons)
    elapsed = time.perf_counter() - start
    ok = trion >= 0.99 and f_master >= 0.999 and f_traj >= 0.999 and len(photons) > 450 and elapsed < 1.0
    criterion(
        1,
        "entangled-state generation",
        ok,
        f"trion population {trion:.4f}, F(master equation) = {f_master:.6f}, min F(trajectories, {len(photons)} photons) = {f_traj:.6f}, {elapsed:.2f} s",
    )


def test_fringe_signal_symbolic(criterion):
    start = time.perf_counter()
    tau = np.linspace(0, 5 * 2 * math.pi / DE, 100)
    expect = 0.25 * (1 + np.sin(DE * tau))
    err = max(np.max(np.abs(fringe_signal(DE, tau, ax) - expect)) for ax in ("sigma+", "sigma-"))
    elapsed = time.perf_counter() - start
    criterion(2, "fringe signal", err <= 1e-10 and elapsed < 1.0, f"max deviation {err:.2e} on 100 tau points, {elapsed:.3f} s")


def _fringe_run(model, jitter_fwhm, seed):
    seq = preset_sequence("z_basis_sigma_plus")
    det = DetectorModel(jitter_fwhm=jitter_fwhm, efficiency=4e-5)
    tags = run_experiment(model, seq, det, None, 1_000_000, seed, mode="importance")
    fd = fringe_data(tags, seq.raman_time, seq.windows["entangled"], seq.windows["readout"], 25 * PS)
    return fd


@pytest.mark.slow
def test_fringe_frequency_and_contrast(model, criterion):
    start = time.perf_counter()
    seed = scenario_seed(1, "z_basis_sigma_plus")
    sharp = _fringe_run(model, 0.0, seed)
    fit0 = fringe_fit(sharp.tau, sharp.probability, DE, sharp.error, bin_width=sharp.bin_width)
    # residual test: detuning the fixed frequency by 10% must visibly worsen the fit
    span = 3 * 2 * math.pi / DE
    ratios = []
    for factor in (0.9, 1.1):
        wrong = fringe_fit(
            sharp.tau, sharp.probability, factor * DE, sharp.error, n_periods=span * factor * DE / (2 * math.pi), bin_width=sharp.bin_width
        )
        ratios.append(wrong.residual_norm / fit0.residual_norm)
    blurred = _fringe_run(model, JITTER, seed)
    sigma = JITTER / 2.355
    fit1 = fringe_fit(blurred.tau, blurred.probability, DE, blurred.error, start=3 * sigma, bin_width=blurred.bin_width)
    analytic = gaussian_smearing_factor(JITTER, DE)
    elapsed = time.perf_counter() - start
    ok = (
        abs(fit0.contrast - 1.0) <= 0.02
        and abs(fit1.contrast - analytic) <= 0.03
        and abs(fit1.contrast - 0.64) <= 0.03
        and min(ratios) > 2
        and elapsed < 300
    )
    criterion(
        3,
        "fringe frequency and contrast",
        ok,
        f"C(no jitter) = {fit0.contrast:.3f} +- {fit0.contrast_error:.3f}, "
        f"C(48 ps) = {fit1.contrast:.3f} +- {fit1.contrast_error:.3f} (analytic {analytic:.3f}), "
        f"residual ratios at -/+10% = {ratios[0]:.1f}/{ratios[1]:.1f}, {elapsed:.0f} s",
    )


def test_timing_ratio(criterion):
    r = timing_ratio(DE, JITTER)
    criterion(4, "timing ratio", abs(r - 2.83) <= 0.01 and abs(r / 2.8 - 1) <= 0.02, f"period / resolution = {r:.3f}")


def test_fidelity_bound_arithmetic(criterion):
    x = {"x+|H": 0.94, "x-|V": 0.84, "x-|H": 0.06, "x+|V": 0.16}
    z = {"z-|sigma+": 0.70, "z+|sigma+": 0.30, "z+|sigma-": 0.69, "z-|sigma-": 0.31}
    fb = fidelity_lower_bound(x, z)
    criterion(5, "fidelity bound arithmetic", abs(fb.value - 0.59) <= 0.01, f"F >= {fb.value:.4f}")


def test_detector_limited_estimate(criterion):
    fb = detector_limited_fidelity(IRF.gaussian(JITTER), DE)
    section = detector_limited_section(RunConfig())
    flagged = section["reference_estimate"] == 0.7 and "Gaussian" in section["note"]
    ok = abs(fb.value - 0.82) <= 0.01 and flagged and abs(section["fidelity"] - fb.value) < 1e-12
    criterion(6, "detector-limited estimate", ok, f"Gaussian-response bound {fb.value:.4f}; report note present: {flagged}")


def test_rates(criterion):
    b = RateBudget(76e6, 4e-5, 4e-5)
    photons = entangled_photon_rate(b)
    x_rate, _ = measurement_success_rate(b, "x")
    ss = per_minute(spin_spin_rate(b, b, 0.125))
    ok = abs(photons / 3e3 - 1) <= 0.02 and 0.06 / 1.5 <= x_rate <= 0.06 * 1.5 and 0.5 <= ss <= 10
    criterion(7, "rates", ok, f"entangled photons {photons:.0f}/s, x success {x_rate:.4f}/s, spin-spin {ss:.2f}/min")


@pytest.mark.slow
def test_trajectories_reproduce_master_equation(model, criterion):
    start = time.perf_counter()
    n = 100_000
    worst_binomial, worst_sample = 0.0, 0.0
    details = []
    for name in ("x_basis_positive_H", "x_basis_anticorr_H", "z_basis_sigma_plus"):
        seq = preset_sequence(name)
        engine = TrajectoryEngine(model, seq)
        cps = np.linspace(0, seq.frame_period, 22)[1:-1]
        ens = sample_ensemble(model, seq, mixed_spin(), n, seed=2024, checkpoints=cps, engine=engine)
        ref = lindblad_evolve(model, seq, mixed_spin()).populations[np.round(ens.times / ens.step).astype(int)]
        # binomial spread of an n-sample estimate at the master-equation population
        sigma = np.sqrt(ref * (1 - ref) / n)
        diff = np.abs(ens.populations - ref)
        z_bin = np.max(np.where(sigma > 0, diff / np.where(sigma > 0, sigma, 1), np.where(diff > 1e-12, np.inf, 0)))
        with np.errstate(divide="ignore", invalid="ignore"):
            z_samp = np.nanmax(np.where(ens.stderr > 0, diff / ens.stderr, 0))
        worst_binomial = max(worst_binomial, z_bin)
        worst_sample = max(worst_sample, z_samp)
        details.append(f"{name}: {z_bin:.2f}")
    elapsed = time.perf_counter() - start
    criterion(
        8,
        "trajectory / master-equation equivalence",
        worst_binomial <= 3 and elapsed < 600,
        f"worst deviation in binomial sigmas ({', '.join(details)}); "
        f"worst in sample-stderr units {worst_sample:.2f}; 20 checkpoints x 4 levels each, {elapsed:.0f} s",
    )


@pytest.mark.slow
def test_off_resonant_ordering(model, criterion):
    from spinphoton.analysis import coincidences, conditional_probability

    probs = {}
    for name in ("x_basis_positive_H", "x_basis_anticorr_H", "x_basis_positive_V", "x_basis_anticorr_V"):
        seq = preset_sequence(name, off_resonant=True)
        tags = run_experiment(model, seq, DetectorModel(), None, 200_000, scenario_seed(1, name), mode="importance")
        probs[name] = conditional_probability(coincidences(tags, seq.windows["entangled"], seq.windows["readout"]))
    h_pos, h_anti = probs["x_basis_positive_H"].value, probs["x_basis_anticorr_H"].value
    v_pos, v_anti = probs["x_basis_positive_V"].value, probs["x_basis_anticorr_V"].value
    ok = v_pos < h_pos and v_anti > h_anti
    criterion(
        9,
        "off-resonant degradation ordering",
        ok,
        f"H: {h_pos:.3f}/{h_anti:.3f}, V: {v_pos:.3f}/{v_anti:.3f} (correlated/anti-correlated)",
    )
