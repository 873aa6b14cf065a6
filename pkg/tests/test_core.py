import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinphoton.core import (
    BasisError,
    DensityMatrix,
    InvalidParameterError,
    OperatorMatrix,
    StateVector,
    UnphysicalStateError,
    basis_transform,
    build_qd_model,
    concurrence,
    emission_operators,
    entangled_state,
    fringe_signal,
    ket,
    precession_operator,
    project_photon,
    random_state,
    rotation_operator,
    schmidt_coefficients,
    transition_frequency,
)

DE = 2 * math.pi * 7.35e9
S2 = 1 / math.sqrt(2)


def test_build_model_reference_dot():
    m = build_qd_model(DE, 2 * math.pi * 3e9, 1e9, 1.1)
    assert m.delta_e == DE and m.gamma == 1e9 and m.b_field == 1.1
    assert m.precession_period == pytest.approx(136.05e-12, rel=1e-3)


def test_zero_splitting_is_valid():
    m = build_qd_model(0.0, None, 1e9)
    assert m.precession_period == math.inf
    np.testing.assert_allclose(precession_operator(m, 1e-9).matrix, np.eye(2))


@pytest.mark.parametrize("kw", [dict(gamma=-1.0), dict(gamma=0.0), dict(delta_e=-1.0), dict(delta_e=float("nan"))])
def test_invalid_parameters(kw):
    args = dict(delta_e=DE, delta_h=None, gamma=1e9) | kw
    with pytest.raises(InvalidParameterError):
        build_qd_model(**args)


def test_missing_delta_h_is_reported_when_needed():
    m = build_qd_model(DE, None, 1e9)
    with pytest.raises(InvalidParameterError, match="delta_h"):
        m.require_delta_h()


def test_selection_rules():
    d = emission_operators()
    # Tx- -> H x+ and -i V x-
    tm = ket("Tx-").amplitudes
    np.testing.assert_allclose(d["H"] @ tm, [1, 0, 0, 0])
    np.testing.assert_allclose(d["V"] @ tm, [0, -1j, 0, 0])
    tp = ket("Tx+").amplitudes
    np.testing.assert_allclose(d["H"] @ tp, [0, 1, 0, 0])
    np.testing.assert_allclose(d["V"] @ tp, [-1j, 0, 0, 0])


def test_transitions_ordered_by_energy():
    m = build_qd_model(DE, 2 * math.pi * 3e9, 1e9)
    f = [transition_frequency(m, n) for n in ("V1", "H2", "H3", "V4")]
    assert f == sorted(f)
    # the H pair is separated by delta_e - delta_h, the V pair by delta_e + delta_h
    assert f[2] - f[1] == pytest.approx(DE - 2 * math.pi * 3e9)
    assert f[3] - f[0] == pytest.approx(DE + 2 * math.pi * 3e9)


def test_entangled_state_amplitudes():
    psi = entangled_state()
    assert psi.norm() == pytest.approx(1, abs=1e-12)
    assert psi.amplitude("H x+") == pytest.approx(S2)
    assert psi.amplitude("V x-") == pytest.approx(-1j * S2)


def test_projection_on_h():
    spin = project_photon(entangled_state(), "H")
    assert spin.norm() ** 2 == pytest.approx(0.5)
    assert spin.normalized().equals_up_to_phase(ket("x+"))


def test_projection_on_sigma_plus_brute_force():
    # 4-dim projector |sigma+><sigma+| (x) 1 on the joint state
    sp = np.array([1, 1j]) * S2
    proj = np.kron(np.outer(sp, sp.conj()), np.eye(2))
    out = proj @ entangled_state().amplitudes
    reduced = sp.conj() @ out.reshape(2, 2)
    assert np.vdot(reduced, reduced).real == pytest.approx(0.5)
    expect = np.array([1, -1]) * S2
    assert abs(abs(np.vdot(expect, reduced / np.linalg.norm(reduced))) - 1) < 1e-12
    # (x+ - x-)/sqrt(2) is the z+ ket under z-+ = (x+ +- x-)/sqrt(2)
    assert StateVector(reduced, "x").normalized().equals_up_to_phase(ket("z+"))
    assert project_photon(entangled_state(), "sigma+").normalized().equals_up_to_phase(ket("z+"))


def test_basis_examples():
    z = ket("x+").to_basis("z")
    np.testing.assert_allclose(z.amplitudes, [S2, S2], atol=1e-15)
    s = ket("sigma+").to_basis("HV")
    np.testing.assert_allclose(s.amplitudes, [S2, 1j * S2], atol=1e-15)


@pytest.mark.parametrize("pair", [("x", "z"), ("HV", "sigma"), ("HV*x", "sigma*z"), ("HV*z", "sigma*x")])
def test_basis_round_trip(pair):
    rng = np.random.default_rng(0)
    dim = 2 if "*" not in pair[0] else 4
    v = StateVector(random_state(dim, rng), pair[0])
    back = v.to_basis(pair[1]).to_basis(pair[0])
    assert np.max(np.abs(back.amplitudes - v.amplitudes)) < 1e-12


def test_unknown_or_incompatible_basis():
    with pytest.raises(BasisError):
        basis_transform(ket("x+"), "x", "nope")
    with pytest.raises(BasisError):
        basis_transform(ket("x+"), "x", "HV")


def test_density_matrix_transform_and_validation():
    rho = entangled_state().density()
    r2 = rho.to_basis("sigma*z").to_basis("HV*x")
    assert np.max(np.abs(r2.elements - rho.elements)) < 1e-12
    with pytest.raises(UnphysicalStateError):
        DensityMatrix(np.diag([0.7, 0.7]), "x")
    with pytest.raises(UnphysicalStateError):
        DensityMatrix(np.diag([1.2, -0.2]), "x")


def test_rotation_pi_half_matches_matrix():
    r_minus = rotation_operator("-", math.pi / 2).matrix
    np.testing.assert_allclose(r_minus, np.array([[1, 1j], [1j, 1]]) * S2, atol=1e-15)
    r_plus = rotation_operator("+", math.pi / 2).matrix
    np.testing.assert_allclose(r_plus, np.array([[1, -1j], [-1j, 1]]) * S2, atol=1e-15)


def test_rotation_on_z_minus():
    zm = np.array([1, -1]) * S2
    r = np.array([[1, 1j], [1j, 1]]) * S2
    expect = abs((r @ zm)[0]) ** 2
    got = rotation_operator("-", math.pi / 2) @ StateVector(zm, "x")
    assert abs(got.amplitude("x+")) ** 2 == pytest.approx(expect, abs=1e-14)
    assert expect == pytest.approx(0.5)


@pytest.mark.parametrize("sign", ["+", "-"])
def test_zero_rotation_is_identity(sign):
    np.testing.assert_allclose(rotation_operator(sign, 0.0).matrix, np.eye(2))


@settings(max_examples=50, deadline=None)
@given(angle=st.floats(-20, 20), sign=st.sampled_from(["+", "-", "sigma+", "sigma-", 1, -1]))
def test_rotation_unitary(angle, sign):
    assert rotation_operator(sign, angle).is_unitary(1e-12)


def test_rotation_bad_axis():
    with pytest.raises(ValueError):
        rotation_operator("x", 1.0)


def test_precession_examples():
    np.testing.assert_allclose(precession_operator(DE, 0.0).matrix, np.eye(2))
    full = precession_operator(DE, 2 * math.pi / DE).matrix
    np.testing.assert_allclose(full, -np.eye(2), atol=1e-12)
    with pytest.raises(ValueError):
        precession_operator(DE, -1e-12)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(0, 1e-9), b=st.floats(0, 1e-9))
def test_precession_composes(a, b):
    u = precession_operator(DE, a) @ precession_operator(DE, b)
    np.testing.assert_allclose(u.matrix, precession_operator(DE, a + b).matrix, atol=1e-9)
    assert u.is_unitary(1e-12)


@pytest.mark.parametrize("axis", ["sigma+", "sigma-"])
def test_fringe_signal_on_grid_of_three_periods(axis):
    tau = np.linspace(0, 3 * 2 * math.pi / DE, 61)
    np.testing.assert_allclose(fringe_signal(DE, tau, axis), 0.25 * (1 + np.sin(DE * tau)), atol=1e-10)


def test_entanglement_measures():
    assert concurrence(entangled_state()) == pytest.approx(1, abs=1e-10)
    np.testing.assert_allclose(schmidt_coefficients(entangled_state()), [S2, S2], atol=1e-12)
    assert concurrence(StateVector([1, 0, 0, 0], "HV*x")) == pytest.approx(0)


def test_json_round_trips():
    psi = entangled_state()
    assert StateVector.from_json(psi.to_json()).equals_up_to_phase(psi)
    rho = psi.density()
    np.testing.assert_array_equal(DensityMatrix.from_json(rho.to_json()).elements, rho.elements)
    op = rotation_operator("-", 0.3)
    back = OperatorMatrix.from_json(op.to_json())
    np.testing.assert_array_equal(back.matrix, op.matrix)
    assert back.label == op.label


def test_global_phase_equality():
    psi = entangled_state()
    assert psi.equals_up_to_phase(StateVector(np.exp(0.7j) * psi.amplitudes, "HV*x"))
    assert not psi.equals_up_to_phase(StateVector([S2, 0, 0, 1j * S2], "HV*x"))
