"""Linear-algebra core for the charged quantum dot in Voigt geometry.

Level ordering is fixed throughout the package::

    levels   : (x+, x-, Tx-, Tx+)
    spin 'x' : (x+, x-)          spin 'z' : (z+, z-)
    photon   : (H, V)            'sigma'  : (sigma+, sigma-)
    joint    : photon (major) x spin, e.g. 'HV*x' = (H x+, H x-, V x+, V x-)

with z-+ = (x+ +- x-)/sqrt(2) and sigma+- = (H +- iV)/sqrt(2).

Energies in the optical rotating frame are x+ = +delta_e/2, x- = -delta_e/2,
Tx- = +delta_h/2, Tx+ = -delta_h/2, which orders the transitions
V1 < H2 < H3 < V4 for delta_h < delta_e. Free spin precession is therefore
``U(tau) = diag(exp(-i delta_e tau/2), exp(+i delta_e tau/2))`` on (x+, x-).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SQRT_HALF = 1.0 / math.sqrt(2.0)

LEVELS = ("x+", "x-", "Tx-", "Tx+")
XP, XM, TM, TP = range(4)

UNITARY_TOL = 1e-12
PHASE_TOL = 1e-10


class InvalidParameterError(ValueError):
    """A physical parameter violates its contract."""


class BasisError(ValueError):
    """Unknown basis or incompatible dimension."""


# columns are the basis vectors expressed in the canonical basis of the space
_SPIN_Z = np.array([[1, 1], [-1, 1]], dtype=complex) * SQRT_HALF
_PHOTON_SIGMA = np.array([[1, 1], [1j, -1j]], dtype=complex) * SQRT_HALF

_BASES: dict[str, tuple[str, tuple[str, ...], np.ndarray]] = {
    # name: (space, labels, columns in canonical basis)
    "x": ("spin", ("x+", "x-"), np.eye(2, dtype=complex)),
    "z": ("spin", ("z+", "z-"), _SPIN_Z),
    "HV": ("photon", ("H", "V"), np.eye(2, dtype=complex)),
    "sigma": ("photon", ("sigma+", "sigma-"), _PHOTON_SIGMA),
    "levels": ("levels", LEVELS, np.eye(4, dtype=complex)),
}
for _p in ("HV", "sigma"):
    for _s in ("x", "z"):
        _, _pl, _pm = _BASES[_p]
        _, _sl, _sm = _BASES[_s]
        _BASES[f"{_p}*{_s}"] = (
            "joint",
            tuple(f"{a} {b}" for a in _pl for b in _sl),
            np.kron(_pm, _sm),
        )

PHOTON_AXES = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "sigma+": _PHOTON_SIGMA[:, 0].copy(),
    "sigma-": _PHOTON_SIGMA[:, 1].copy(),
}
ORTHOGONAL_AXIS = {"H": "V", "V": "H", "sigma+": "sigma-", "sigma-": "sigma+"}

SPIN_KETS = {
    "x+": np.array([1, 0], dtype=complex),
    "x-": np.array([0, 1], dtype=complex),
    "z+": _SPIN_Z[:, 0].copy(),
    "z-": _SPIN_Z[:, 1].copy(),
}


def basis_labels(basis: str) -> tuple[str, ...]:
    try:
        return _BASES[basis][1]
    except KeyError:
        raise BasisError(f"unknown basis {basis!r}") from None


def _basis_matrix(basis: str) -> tuple[str, np.ndarray]:
    try:
        space, _, mat = _BASES[basis]
    except KeyError:
        raise BasisError(f"unknown basis {basis!r}") from None
    return space, mat


def _pairs(values: np.ndarray) -> list:
    return [[float(v.real), float(v.imag)] for v in np.ravel(values)]


def _unpairs(pairs) -> np.ndarray:
    return np.array([complex(re, im) for re, im in pairs], dtype=complex)


@dataclass(frozen=True)
class QdModel:
    """Parameters of the four-level dot.

    Angular frequencies in rad/s, rates in 1/s. ``delta_h`` may be left as
    ``None`` only while no off-resonant trion coupling is requested.
    """

    delta_e: float
    delta_h: float | None
    gamma: float
    b_field: float = float("nan")
    spin_dephasing: float = 0.0
    decay: bool = True

    @property
    def precession_period(self) -> float:
        return 2 * math.pi / self.delta_e if self.delta_e > 0 else math.inf

    def require_delta_h(self) -> float:
        if self.delta_h is None:
            raise InvalidParameterError(
                "delta_h is required for off-resonant trion coupling but was not given"
            )
        return self.delta_h

    def without_decay(self) -> "QdModel":
        """Copy with spontaneous emission switched off (coherent test mode)."""
        return replace(self, decay=False)

    def level_energies(self) -> np.ndarray:
        """Diagonal of the bare Hamiltonian in the optical rotating frame."""
        dh = 0.0 if self.delta_h is None else self.delta_h
        return np.array(
            [self.delta_e / 2, -self.delta_e / 2, dh / 2, -dh / 2], dtype=float
        )


def build_qd_model(
    delta_e: float,
    delta_h: float | None,
    gamma: float,
    b_field: float = float("nan"),
    spin_dephasing: float = 0.0,
) -> QdModel:
    """Validate parameters and return a :class:`QdModel`."""
    for name, val in (("delta_e", delta_e), ("gamma", gamma)):
        if not np.isfinite(val):
            raise InvalidParameterError(f"{name} must be finite, got {val}")
    if delta_e < 0:
        raise InvalidParameterError(f"delta_e must be >= 0, got {delta_e}")
    if gamma <= 0:
        raise InvalidParameterError(f"gamma must be > 0, got {gamma}")
    if delta_h is not None and (not np.isfinite(delta_h) or delta_h < 0):
        raise InvalidParameterError(f"delta_h must be finite and >= 0, got {delta_h}")
    if spin_dephasing < 0 or not np.isfinite(spin_dephasing):
        raise InvalidParameterError("spin_dephasing must be finite and >= 0")
    return QdModel(
        delta_e=float(delta_e),
        delta_h=None if delta_h is None else float(delta_h),
        gamma=float(gamma),
        b_field=float(b_field),
        spin_dephasing=float(spin_dephasing),
    )


# -- selection rules ---------------------------------------------------------

# (ground, trion, photon polarization, emission amplitude)
TRANSITIONS = {
    "V1": (XP, TP, "V", -1j),
    "H2": (XP, TM, "H", 1.0),
    "H3": (XM, TP, "H", 1.0),
    "V4": (XM, TM, "V", -1j),
}


def emission_operators() -> dict[str, np.ndarray]:
    """Lowering operators D_H, D_V on the level space (unit decay amplitude).

    Tx- -> H x+ - i V x- and Tx+ -> H x- - i V x+, so that
    ``sqrt(gamma/2) * D_p`` are the two radiative collapse channels.
    """
    ops = {"H": np.zeros((4, 4), dtype=complex), "V": np.zeros((4, 4), dtype=complex)}
    for g, t, pol, amp in TRANSITIONS.values():
        ops[pol][g, t] = amp
    return ops


def transition_frequency(model: QdModel, name: str) -> float:
    g, t, _, _ = TRANSITIONS[name]
    e = model.level_energies()
    return float(e[t] - e[g])


# -- states and operators ----------------------------------------------------


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    basis: str

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        if len(basis_labels(self.basis)) != amps.size:
            raise BasisError(
                f"basis {self.basis!r} has {len(basis_labels(self.basis))} labels, "
                f"got {amps.size} amplitudes"
            )

    @property
    def labels(self) -> tuple[str, ...]:
        return basis_labels(self.basis)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalize a zero vector")
        return StateVector(self.amplitudes / n, self.basis)

    def amplitude(self, label: str) -> complex:
        return complex(self.amplitudes[self.labels.index(label)])

    def to_basis(self, basis: str) -> "StateVector":
        return basis_transform(self, self.basis, basis)

    def overlap(self, other: "StateVector") -> complex:
        other = other.to_basis(self.basis)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def fidelity(self, other: "StateVector") -> float:
        return abs(self.overlap(other)) ** 2

    def equals_up_to_phase(self, other: "StateVector", tol: float = PHASE_TOL) -> bool:
        other = other.to_basis(self.basis)
        ov = np.vdot(other.amplitudes, self.amplitudes)
        if abs(ov) == 0:
            return bool(np.allclose(self.amplitudes, 0, atol=tol)) and bool(
                np.allclose(other.amplitudes, 0, atol=tol)
            )
        phase = ov / abs(ov)
        return bool(np.max(np.abs(self.amplitudes - phase * other.amplitudes)) < tol)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.basis)

    def to_json(self) -> str:
        return json.dumps(
            {"basis": self.basis, "labels": list(self.labels), "amplitudes": _pairs(self.amplitudes)}
        )

    @classmethod
    def from_json(cls, text: str) -> "StateVector":
        d = json.loads(text)
        return cls(_unpairs(d["amplitudes"]), d["basis"])


def ket(label: str, basis: str | None = None) -> StateVector:
    """Basis ket by label; the basis is inferred from the label if not given."""
    if basis is None:
        basis = next(b for b, (_, labels, _) in _BASES.items() if label in labels)
    labels = basis_labels(basis)
    amps = np.zeros(len(labels), dtype=complex)
    amps[labels.index(label)] = 1.0
    return StateVector(amps, basis)


@dataclass(frozen=True)
class DensityMatrix:
    elements: np.ndarray
    basis: str
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        rho = np.array(self.elements, dtype=complex)
        rho.setflags(write=False)
        object.__setattr__(self, "elements", rho)
        n = len(basis_labels(self.basis))
        if rho.shape != (n, n):
            raise BasisError(f"expected {n}x{n} matrix for basis {self.basis!r}")
        if self.validate:
            check_physical(rho)

    @property
    def labels(self) -> tuple[str, ...]:
        return basis_labels(self.basis)

    def element(self, row: str, col: str | None = None) -> complex:
        col = row if col is None else col
        return complex(self.elements[self.labels.index(row), self.labels.index(col)])

    def populations(self) -> np.ndarray:
        return self.elements.diagonal().real.copy()

    def to_basis(self, basis: str) -> "DensityMatrix":
        return basis_transform(self, self.basis, basis)

    def fidelity(self, state: StateVector) -> float:
        psi = state.to_basis(self.basis).amplitudes
        return float(np.real(np.vdot(psi, self.elements @ psi)))

    def to_json(self) -> str:
        return json.dumps(
            {
                "basis": self.basis,
                "labels": list(self.labels),
                "elements": [_pairs(row) for row in self.elements],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DensityMatrix":
        d = json.loads(text)
        return cls(np.array([_unpairs(r) for r in d["elements"]]), d["basis"])


class UnphysicalStateError(ValueError):
    pass


def check_physical(rho: np.ndarray, herm_tol=1e-12, trace_tol=1e-10, eig_tol=1e-10) -> None:
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise UnphysicalStateError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1) > trace_tol:
        raise UnphysicalStateError(f"density matrix trace {tr} != 1")
    w = np.linalg.eigvalsh((rho + rho.conj().T) / 2)
    if w.min() < -eig_tol:
        raise UnphysicalStateError(f"density matrix has negative eigenvalue {w.min():.3g}")


@dataclass(frozen=True)
class OperatorMatrix:
    matrix: np.ndarray
    basis: str
    label: str

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def is_unitary(self, tol: float = UNITARY_TOL) -> bool:
        m = self.matrix
        return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) < tol)

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            other_m = basis_transform(other, other.basis, self.basis).matrix
            return OperatorMatrix(self.matrix @ other_m, self.basis, f"{self.label}*{other.label}")
        if isinstance(other, StateVector):
            v = other.to_basis(self.basis)
            return StateVector(self.matrix @ v.amplitudes, self.basis)
        return NotImplemented

    def to_json(self) -> str:
        return json.dumps(
            {
                "basis": self.basis,
                "label": self.label,
                "matrix": [_pairs(row) for row in self.matrix],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "OperatorMatrix":
        d = json.loads(text)
        return cls(np.array([_unpairs(r) for r in d["matrix"]]), d["basis"], d["label"])


def basis_transform(obj, from_basis: str, to_basis: str):
    """Re-express a state vector, density matrix, operator or raw array.

    Only bases of the same space (spin, photon, joint, levels) convert into
    each other. Raw arrays are treated as vectors when 1-D, matrices when 2-D.
    """
    s_from, m_from = _basis_matrix(from_basis)
    s_to, m_to = _basis_matrix(to_basis)
    if s_from != s_to:
        raise BasisError(f"cannot transform between {from_basis!r} ({s_from}) and {to_basis!r} ({s_to})")
    t = m_to.conj().T @ m_from  # coordinates in from -> coordinates in to
    if isinstance(obj, StateVector):
        return StateVector(t @ obj.amplitudes, to_basis)
    if isinstance(obj, DensityMatrix):
        return DensityMatrix(t @ obj.elements @ t.conj().T, to_basis, validate=obj.validate)
    if isinstance(obj, OperatorMatrix):
        return OperatorMatrix(t @ obj.matrix @ t.conj().T, to_basis, obj.label)
    arr = np.asarray(obj, dtype=complex)
    if arr.shape[0] != t.shape[0]:
        raise BasisError(f"dimension {arr.shape[0]} incompatible with basis {from_basis!r}")
    if arr.ndim == 1:
        return t @ arr
    if arr.ndim == 2:
        return t @ arr @ t.conj().T
    raise BasisError("expected a vector or a square matrix")


# -- protocol objects ----------------------------------------------------------


def entangled_state() -> StateVector:
    """(|H>|x+> - i|V>|x->)/sqrt(2) on (H x+, H x-, V x+, V x-)."""
    return StateVector(np.array([1, 0, 0, -1j], dtype=complex) * SQRT_HALF, "HV*x")


def _axis_name(axis_sign) -> str:
    aliases = {"+": "sigma+", "-": "sigma-", "sigma+": "sigma+", "sigma-": "sigma-", 1: "sigma+", -1: "sigma-"}
    try:
        return aliases[axis_sign]
    except (KeyError, TypeError):
        raise ValueError(f"axis_sign must be one of {sorted(map(str, aliases))}, got {axis_sign!r}") from None


def rotation_operator(axis_sign, angle: float) -> OperatorMatrix:
    """Raman spin rotation R_sigma-+ (angle) on (x+, x-).

    ``cos(angle/2) I + s i sin(angle/2) sigma_x`` with s = +1 for the
    sigma- rotation and s = -1 for sigma+; at angle = pi/2 this is
    (|x+><x+| +- i|x+><x-| +- i|x-><x+| + |x-><x-|)/sqrt(2).
    """
    axis = _axis_name(axis_sign)
    s = 1.0 if axis == "sigma-" else -1.0
    c, sn = math.cos(angle / 2), math.sin(angle / 2)
    m = np.array([[c, s * 1j * sn], [s * 1j * sn, c]], dtype=complex)
    return OperatorMatrix(m, "x", f"R_{axis}({angle:.6g})")


def precession_operator(model_or_delta_e, tau: float) -> OperatorMatrix:
    """Free spin precession U(tau) on (x+, x-)."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    de = getattr(model_or_delta_e, "delta_e", model_or_delta_e)
    ph = 0.5 * de * tau
    return OperatorMatrix(np.diag([np.exp(-1j * ph), np.exp(1j * ph)]), "x", f"U({tau:.6g})")


def project_photon(joint: StateVector, axis: str) -> StateVector:
    """Unnormalized spin state <axis|psi> of a photon x spin state (x basis)."""
    j = joint.to_basis("HV*x").amplitudes.reshape(2, 2)
    return StateVector(PHOTON_AXES[axis].conj() @ j, "x")


def concurrence(state: StateVector) -> float:
    """Concurrence of a pure two-qubit state."""
    a = state.to_basis("HV*x").normalized().amplitudes
    return float(2 * abs(a[0] * a[3] - a[1] * a[2]))


def schmidt_coefficients(state: StateVector) -> np.ndarray:
    a = state.to_basis("HV*x").normalized().amplitudes.reshape(2, 2)
    return np.linalg.svd(a, compute_uv=False)


def fringe_signal(delta_e: float, tau, axis: str = "sigma+") -> np.ndarray:
    """|<x+| R U(tau) <axis|Psi>|^2 with the rotation paired to ``axis``.

    A sigma+ photon is paired with the sigma- rotation and vice versa.
    """
    spin = project_photon(entangled_state(), axis)
    rot = rotation_operator(ORTHOGONAL_AXIS[axis], math.pi / 2)
    out = []
    for t in np.atleast_1d(tau):
        v = rot @ (precession_operator(delta_e, float(t)) @ spin)
        out.append(abs(v.amplitude("x+")) ** 2)
    return np.array(out)


def embed_spin_operator(op2: np.ndarray) -> np.ndarray:
    """Lift a 2x2 spin operator to the level space, identity on the trions."""
    m = np.eye(4, dtype=complex)
    m[:2, :2] = op2
    return m


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def joint_from_branches(branch_h: Sequence[complex], branch_v: Sequence[complex]) -> StateVector:
    """Joint photon x spin ket from the spin vectors attached to H and V."""
    amps = np.concatenate([np.asarray(branch_h, complex), np.asarray(branch_v, complex)])
    return StateVector(amps, "HV*x")
