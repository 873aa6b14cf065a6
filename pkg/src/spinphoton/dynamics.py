"""Driven, dissipative dynamics of the four-level dot.

Two routes to the same physics:

* :func:`lindblad_evolve` integrates the master equation with fixed-step RK4.
* :class:`TrajectoryEngine` unravels it into quantum-jump trajectories. The
  no-jump propagator of every RK4 step is precomputed once per pulse
  sequence; jump times are then located by bisection on the (monotone)
  no-jump norm, which makes millions of frames affordable.

All drive phases are referenced to the start of each frame, i.e. every frame
sees identical pulses.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PHOTON_AXES,
    ORTHOGONAL_AXIS,
    TRANSITIONS,
    DensityMatrix,
    QdModel,
    StateVector,
    UnphysicalStateError,
    XM,
    XP,
    emission_operators,
    embed_spin_operator,
    joint_from_branches,
    rotation_operator,
    transition_frequency,
)
from .sequences import PulseSequence

DEFAULT_DT = 1e-12


class StepSizeError(ValueError):
    pass


def max_step(model: QdModel) -> float:
    """Largest admissible integration step for ``model``."""
    lim = 1 / (10 * model.gamma)
    if model.delta_e > 0:
        lim = min(lim, 0.02 * 2 * math.pi / model.delta_e)
    return lim


def check_step(model: QdModel, dt: float) -> None:
    if not dt > 0 or dt > max_step(model) * (1 + 1e-9):
        raise StepSizeError(
            f"dt = {dt:.3g} s exceeds min(1/(10 gamma), 0.02 * 2pi/delta_e) = {max_step(model):.3g} s"
        )


def frame_grid(sequence: PulseSequence, dt: float) -> tuple[int, float]:
    """Number of steps per frame and the actual step (<= dt)."""
    n = int(math.ceil(sequence.frame_period / dt - 1e-9))
    return n, sequence.frame_period / n


def hamiltonian(model: QdModel, sequence: PulseSequence, t, envelope_t=None) -> np.ndarray:
    """H(t) in the optical rotating frame, shape ``(len(t), 4, 4)``.

    ``envelope_t`` optionally gives the times at which square envelopes are
    read; the integrators pass step midpoints so that a square pulse is
    either fully on or off within a step.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    env_t = t if envelope_t is None else np.atleast_1d(np.asarray(envelope_t, dtype=float))
    h = np.zeros((t.size, 4, 4), dtype=complex)
    h[:, range(4), range(4)] = model.level_energies()
    if sequence.off_resonant and sequence.optical_pulses:
        model.require_delta_h()
    for p in sequence.optical_pulses:
        env = p.envelope(env_t if p.shape == "square" else t)
        if not env.any():
            continue
        omega_l = transition_frequency(model, p.target) + p.detuning
        scale = 1 / abs(p.coupling_weight())
        carrier = np.exp(-1j * omega_l * t)
        names = TRANSITIONS if sequence.off_resonant else (p.target,)
        for name in names:
            g, tr, pol, amp = TRANSITIONS[name]
            c = PHOTON_AXES[p.polarization][0 if pol == "H" else 1] * np.conj(amp) * scale
            if c == 0:
                continue
            term = 0.5 * env * c * carrier
            h[:, tr, g] += term
            h[:, g, tr] += np.conj(term)
    return h


def collapse_operators(model: QdModel) -> list[tuple[str, np.ndarray]]:
    """Named Lindblad operators: radiative 'H', 'V' and optional 'dephasing'."""
    ops = []
    if model.decay:
        for pol, d in emission_operators().items():
            ops.append((pol, math.sqrt(model.gamma / 2) * d))
    if model.spin_dephasing > 0:
        ops.append(
            (
                "dephasing",
                math.sqrt(model.spin_dephasing / 2) * np.diag([1, -1, 0, 0]).astype(complex),
            )
        )
    return ops


def _kick_operators(sequence: PulseSequence, n_steps: int, h: float) -> dict[int, tuple[str, np.ndarray]]:
    kicks = {}
    for p in sequence.kicks:
        idx = min(max(int(round(p.start / h)), 1), n_steps - 1)
        if p.target == "raman":
            op = embed_spin_operator(rotation_operator(p.rotation_axis, p.area).matrix)
            kicks[idx] = ("unitary", op)
        else:
            ket = np.zeros(4, dtype=complex)
            ket[XP if p.state == "x+" else XM] = 1
            kicks[idx] = ("reset", ket)
    return kicks


def _rk4_propagators(generators) -> np.ndarray:
    """Step propagators of dx/dt = A(t) x for classic RK4.

    ``generators`` is ``(a0, a_mid, a1, h)`` with each ``a`` of shape
    ``(n, d, d)`` sampled at the start, middle and end of each step.
    """
    a0, am, a1, h = generators
    eye = np.eye(a0.shape[-1], dtype=complex)
    k2 = am @ (eye + 0.5 * h * a0)
    k3 = am @ (eye + 0.5 * h * k2)
    k4 = a1 @ (eye + h * k3)
    return eye + (h / 6) * (a0 + 2 * k2 + 2 * k3 + k4)


def _sample_times(n_steps: int, h: float, lo: int, hi: int):
    k = np.arange(lo, hi)
    return k * h, (k + 0.5) * h, (k + 1) * h


def _liouvillian(hs: np.ndarray, ops) -> np.ndarray:
    d = hs.shape[-1]
    eye = np.eye(d)
    diss = np.zeros((d * d, d * d), dtype=complex)
    for _, lop in ops:
        ldl = lop.conj().T @ lop
        diss += np.kron(lop, lop.conj()) - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T))
    ham = -1j * (np.einsum("nij,kl->nikjl", hs, eye) - np.einsum("ij,nkl->nikjl", eye, np.transpose(hs, (0, 2, 1))))
    return ham.reshape(hs.shape[0], d * d, d * d) + diss


@dataclass
class DensityEvolution:
    """Density matrices on the level basis sampled at ``times`` (s)."""

    times: np.ndarray
    rho: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        return np.einsum("nii->ni", self.rho).real

    def state(self, i: int) -> DensityMatrix:
        return DensityMatrix(self.rho[i], "levels", validate=False)

    def worst_violation(self) -> dict:
        herm = np.max(np.abs(self.rho - np.conj(np.transpose(self.rho, (0, 2, 1)))))
        trace = np.max(np.abs(np.einsum("nii->n", self.rho) - 1))
        eig = np.linalg.eigvalsh(0.5 * (self.rho + np.conj(np.transpose(self.rho, (0, 2, 1))))).min()
        return {"hermiticity": float(herm), "trace": float(trace), "min_eigenvalue": float(eig)}


def _as_level_density(initial) -> np.ndarray:
    if isinstance(initial, StateVector):
        initial = initial.density()
    if isinstance(initial, DensityMatrix):
        rho = np.array(initial.elements)
        if initial.basis == "x":
            full = np.zeros((4, 4), dtype=complex)
            full[:2, :2] = rho
            rho = full
        elif initial.basis != "levels":
            rho = DensityMatrix(rho, initial.basis).to_basis("levels").elements
    else:
        rho = np.asarray(initial, dtype=complex)
    if rho.shape != (4, 4):
        raise UnphysicalStateError("initial state must live on the four dot levels")
    DensityMatrix(rho, "levels")  # validates
    return rho


def lindblad_evolve(
    model: QdModel,
    sequence: PulseSequence,
    initial,
    dt: float = DEFAULT_DT,
    n_frames: int = 1,
    record_every: int = 1,
) -> DensityEvolution:
    """Integrate the master equation over ``n_frames`` repetitions of ``sequence``.

    Samples are taken every ``record_every`` steps plus the final point; the
    state recorded at a kick (Raman rotation, ideal reset) is the post-kick
    state.
    """
    check_step(model, dt)
    rho0 = _as_level_density(initial)
    n, h = frame_grid(sequence, dt)
    ops = collapse_operators(model)
    kicks = _kick_operators(sequence, n, h)

    props = np.empty((n, 16, 16), dtype=complex)
    chunk = 2048
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        t0, tm, t1 = _sample_times(n, h, lo, hi)
        gens = [_liouvillian(hamiltonian(model, sequence, t, tm), ops) for t in (t0, tm, t1)]
        props[lo:hi] = _rk4_propagators((*gens, h))

    kick_sup = {}
    for k, (kind, op) in kicks.items():
        if kind == "unitary":
            kick_sup[k] = np.kron(op, op.conj())
        else:
            kick_sup[k] = np.outer(np.outer(op, op.conj()).reshape(-1), np.eye(4).reshape(-1))

    x = rho0.reshape(-1)
    times, out = [0.0], [x.copy()]
    total = n * n_frames
    for step in range(total):
        k = step % n
        x = props[k] @ x
        nxt = (step + 1) % n
        if nxt in kick_sup:
            x = kick_sup[nxt] @ x
        if (step + 1) % record_every == 0 or step + 1 == total:
            times.append((step + 1) * h)
            out.append(x.copy())
    rho = np.array(out).reshape(-1, 4, 4)
    return DensityEvolution(np.array(times), rho)


# -- emission ------------------------------------------------------------------


def emission_branches(psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spin vectors attached to an H and a V photon emitted from ``psi``."""
    d = emission_operators()
    return (d["H"] @ psi)[:2], (d["V"] @ psi)[:2]


def emission_joint_state(state):
    """Photon x spin state created by one spontaneous emission.

    A level-basis :class:`StateVector` yields a normalized joint
    :class:`StateVector`; a density matrix yields a joint
    :class:`DensityMatrix` conditioned on an emission having happened.
    """
    if isinstance(state, StateVector):
        bh, bv = emission_branches(state.to_basis("levels").amplitudes)
        return joint_from_branches(bh, bv).normalized()
    rho = state.to_basis("levels").elements if isinstance(state, DensityMatrix) else np.asarray(state)
    d = emission_operators()
    stack = np.stack([d["H"][:2], d["V"][:2]])  # (2, 2, 4)
    big = stack.reshape(4, 4)
    joint = big @ rho @ big.conj().T
    tr = np.trace(joint).real
    if tr <= 0:
        raise ValueError("state has no trion population to emit from")
    return DensityMatrix(joint / tr, "HV*x", validate=False)


def conditional_joint_state(model: QdModel, emission_time: float, detection_time_resolution: float = 0.0) -> StateVector:
    """Photon x spin state for an emission at ``emission_time`` after ideal excitation.

    Expressed in the frame co-rotating with the spin precession, so the V
    branch carries the which-path phase exp(-i delta_e t) relative to H.
    Warns when the detector resolution does not resolve a precession period.
    """
    if detection_time_resolution and model.delta_e > 0 and detection_time_resolution >= model.precession_period:
        warnings.warn(
            "detector resolution exceeds the spin precession period; which-path "
            "information is not erased",
            stacklevel=2,
        )
    ph = np.exp(-1j * model.delta_e * emission_time)
    return StateVector(np.array([1, 0, 0, -1j * ph]) / math.sqrt(2), "HV*x")


def apply_instantaneous_rotation(spin: StateVector, angle: float, axis_sign, duration: float | None = None, model: QdModel | None = None) -> StateVector:
    """Apply the Raman rotation as an instantaneous unitary on the spin."""
    if duration is not None and model is not None and duration > 0.05 * model.precession_period:
        warnings.warn("rotation pulse is not short compared with the precession period", stacklevel=2)
    return rotation_operator(axis_sign, angle) @ spin


# -- quantum-jump trajectories -------------------------------------------------


@dataclass
class PhotonRecord:
    """One spontaneous emission.

    ``branch_h``/``branch_v`` are the spin vectors (x basis) attached to an H
    and a V photon, jointly normalized. ``polarization`` is the outcome of the
    projective polarization measurement made at emission, if any.
    """

    emission_time: float
    branch_h: np.ndarray
    branch_v: np.ndarray
    origin_pulse: int
    frame: int = 0
    polarization: str | None = None

    @property
    def amplitude_h(self) -> float:
        return float(np.linalg.norm(self.branch_h))

    @property
    def amplitude_v(self) -> float:
        return float(np.linalg.norm(self.branch_v))

    def joint_state(self) -> StateVector:
        return joint_from_branches(self.branch_h, self.branch_v)


@dataclass
class TrajectoryResult:
    photons: list
    final_state: StateVector
    final_spin: StateVector | None
    rng_seed: int


@dataclass
class ChainEvents:
    """Flat arrays of emissions produced by a batch of trajectory chains."""

    chain: np.ndarray
    frame: np.ndarray
    step: np.ndarray
    passed: np.ndarray
    origin_pulse: np.ndarray
    branches: np.ndarray | None = None  # (n, 2, 2): [H, V] x spin

    def __len__(self):
        return int(self.chain.size)


@dataclass
class ChainOutput:
    events: ChainEvents
    final_psi: np.ndarray
    checkpoint_mean: np.ndarray | None = None
    checkpoint_sq: np.ndarray | None = None
    n_chains: int = 0


def _quad(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ni,nij,nj->n", v.conj(), g, v).real


class TrajectoryEngine:
    """Precomputed no-jump propagators for one frame of ``sequence``.

    Parameters
    ----------
    model, sequence
        Physics and drive.
    dt
        Requested step; the actual step divides the frame period evenly.
    segment_steps
        Maximum length of a propagator segment. Segments bound the condition
        number of the cumulative no-jump propagators.
    """

    def __init__(self, model: QdModel, sequence: PulseSequence, dt: float = DEFAULT_DT, segment_steps: int = 4096):
        check_step(model, dt)
        self.model = model
        self.sequence = sequence
        self.n_steps, self.h = frame_grid(sequence, dt)
        n, h = self.n_steps, self.h
        ops = collapse_operators(model)
        self.ops = ops
        heff_extra = sum((-0.5j * lop.conj().T @ lop for _, lop in ops), np.zeros((4, 4), complex))
        t0, tm, t1 = _sample_times(n, h, 0, n)
        gens = [-1j * (hamiltonian(model, sequence, t, tm) + heff_extra) for t in (t0, tm, t1)]
        steps = _rk4_propagators((*gens, h))
        self.kicks = _kick_operators(sequence, n, h)

        bounds = sorted({0, n, *self.kicks, *range(0, n, segment_steps)})
        self.C = np.zeros((n + 1, 4, 4), dtype=complex)
        self.Cinv = np.zeros((n + 1, 4, 4), dtype=complex)
        self.seg_end = np.zeros(n + 1, dtype=np.int64)
        eye = np.eye(4, dtype=complex)
        for s, e in zip(bounds, bounds[1:]):
            acc = eye
            for m in range(s + 1, e + 1):
                acc = steps[m - 1] @ acc
                self.C[m] = acc
            self.Cinv[s] = eye
            self.Cinv[s + 1 : e] = np.linalg.inv(self.C[s + 1 : e])
            self.seg_end[s:e] = e
        self.G = np.einsum("nji,njk->nik", self.C.conj(), self.C)

        starts = np.array([p.start for p in sequence.pulses])
        grid_t = np.arange(n + 1) * h
        self.origin = np.searchsorted(starts, grid_t, side="right") - 1
        self._dh = emission_operators()["H"][:2]
        self._dv = emission_operators()["V"][:2]
        self.photon_rate = model.gamma / 2 if model.decay else 0.0
        self.dephasing_rate = model.spin_dephasing / 2

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h

    def _apply_kicks(self, psi, pos):
        for k, (kind, op) in self.kicks.items():
            sel = pos == k
            if not sel.any():
                continue
            if kind == "unitary":
                psi[sel] = psi[sel] @ op.T
            else:
                psi[sel] = op

    def run_chains(
        self,
        psi0: np.ndarray,
        n_frames: int,
        rng: np.random.Generator,
        axis: str | None = None,
        checkpoints=None,
        keep_branches: bool = False,
    ) -> ChainOutput:
        """Evolve ``len(psi0)`` independent chains for ``n_frames`` frames each.

        Every emission is measured at once in the polarization basis
        {axis, orthogonal(axis)} (H/V when ``axis`` is None); ``passed`` marks
        projection onto ``axis``. ``checkpoints`` are absolute grid indices
        (frame * n_steps + step) at which level populations are averaged.
        """
        n = self.n_steps
        m_chains = psi0.shape[0]
        psi = np.array(psi0, dtype=complex)
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        pos = np.zeros(m_chains, dtype=np.int64)
        frame = np.zeros(m_chains, dtype=np.int64)
        r = rng.random(m_chains)
        axis = axis or "H"
        a_vec = PHOTON_AXES[axis]
        o_vec = PHOTON_AXES[ORTHOGONAL_AXIS[axis]]

        cps = np.array(sorted(checkpoints), dtype=np.int64) if checkpoints is not None else np.zeros(0, np.int64)
        cp_sum = np.zeros((cps.size, 4))
        cp_sq = np.zeros((cps.size, 4))

        ev = {k: [] for k in ("chain", "frame", "step", "passed", "origin", "branches")}
        n_frames = np.broadcast_to(np.asarray(n_frames, dtype=np.int64), (m_chains,))
        active = frame < n_frames

        while active.any():
            ids = np.flatnonzero(active)
            p0 = pos[ids]
            e = self.seg_end[p0]
            phi = np.einsum("nij,nj->ni", self.Cinv[p0], psi[ids])
            rr = r[ids]
            n_end = _quad(self.G[e], phi)
            jump = n_end <= rr
            target = e.copy()

            if jump.any():
                j = np.flatnonzero(jump)
                lo, hi, ph, rj = p0[j].copy(), e[j].copy(), phi[j], rr[j]
                while True:
                    gap = hi - lo > 1
                    if not gap.any():
                        break
                    mid = np.where(gap, (lo + hi) // 2, hi)
                    below = _quad(self.G[mid], ph) <= rj
                    hi = np.where(gap & below, mid, hi)
                    lo = np.where(gap & ~below, mid, lo)
                n_hi = _quad(self.G[hi], ph)
                inner = lo > p0[j]
                n_lo = np.where(inner, _quad(self.G[lo], ph), 1.0)
                with np.errstate(invalid="ignore", divide="ignore"):
                    frac = (n_lo - rj) / (n_lo - n_hi)
                target[j] = np.where(inner & (frac < 0.5), lo, hi)

            if cps.size:
                base = frame[ids] * n
                a0, a1 = base + p0, base + target
                for ci, c in enumerate(cps):
                    sel = (a0 <= c) & (c < a1)
                    if not sel.any():
                        continue
                    loc = c - base[sel]
                    at_start = loc == p0[sel]
                    v = np.einsum("nij,nj->ni", self.C[loc], phi[sel])
                    v[at_start] = psi[ids[sel][at_start]]
                    pops = np.abs(v) ** 2
                    pops /= pops.sum(axis=1, keepdims=True)
                    cp_sum[ci] += pops.sum(axis=0)
                    cp_sq[ci] += (pops**2).sum(axis=0)

            new = np.einsum("nij,nj->ni", self.C[target], phi)
            norms = np.linalg.norm(new, axis=1)
            new /= norms[:, None]
            rr = rr / norms**2

            if jump.any():
                j = np.flatnonzero(jump)
                pre = new[j]
                bh = pre @ self._dh.T
                bv = pre @ self._dv.T
                w_ph = self.photon_rate * (np.sum(np.abs(bh) ** 2, 1) + np.sum(np.abs(bv) ** 2, 1))
                w_de = self.dephasing_rate * np.sum(np.abs(pre[:, :2]) ** 2, 1)
                tot = w_ph + w_de
                u = rng.random(j.size)
                valid = tot > 0
                is_ph = valid & (u * tot < w_ph)
                is_de = valid & ~is_ph
                post = pre.copy()
                if is_ph.any():
                    k = np.flatnonzero(is_ph)
                    amp_a = a_vec[0].conjugate() * bh[k] + a_vec[1].conjugate() * bv[k]
                    amp_o = o_vec[0].conjugate() * bh[k] + o_vec[1].conjugate() * bv[k]
                    pa = np.sum(np.abs(amp_a) ** 2, 1)
                    po = np.sum(np.abs(amp_o) ** 2, 1)
                    passed = rng.random(k.size) * (pa + po) < pa
                    spin = np.where(passed[:, None], amp_a, amp_o)
                    spin /= np.linalg.norm(spin, axis=1, keepdims=True)
                    post[k] = 0
                    post[k, :2] = spin
                    gi = ids[j[k]]
                    ev["chain"].append(gi)
                    ev["frame"].append(frame[gi].copy())
                    ev["step"].append(target[j[k]].copy())
                    ev["passed"].append(passed)
                    ev["origin"].append(self.origin[target[j[k]]])
                    if keep_branches:
                        nb = np.sqrt(pa + po)[:, None]
                        ev["branches"].append(np.stack([bh[k] / nb, bv[k] / nb], axis=1))
                if is_de.any():
                    k = np.flatnonzero(is_de)
                    g = pre[k, :2] * np.array([1, -1])
                    post[k] = 0
                    post[k, :2] = g / np.linalg.norm(g, axis=1, keepdims=True)
                new[j] = post
                rr[j] = rng.random(j.size)

            psi[ids] = new
            r[ids] = rr
            pos[ids] = target
            sub_pos = pos[ids]
            sub_psi = psi[ids]
            self._apply_kicks(sub_psi, sub_pos)
            psi[ids] = sub_psi
            wrap = ids[pos[ids] == n]
            pos[wrap] = 0
            frame[wrap] += 1
            active = frame < n_frames

        if cps.size:
            final = cps == int(n_frames.max()) * n
            if final.any():
                pops = np.abs(psi) ** 2
                cp_sum[final] += pops.sum(0)
                cp_sq[final] += (pops**2).sum(0)

        def cat(key, dtype):
            return np.concatenate(ev[key]).astype(dtype) if ev[key] else np.zeros(0, dtype)

        events = ChainEvents(
            chain=cat("chain", np.int64),
            frame=cat("frame", np.int64),
            step=cat("step", np.int64),
            passed=cat("passed", bool),
            origin_pulse=cat("origin", np.int64),
            branches=np.concatenate(ev["branches"]) if keep_branches and ev["branches"] else None,
        )
        out = ChainOutput(events, psi, n_chains=m_chains)
        if cps.size:
            out.checkpoint_mean = cp_sum / m_chains
            out.checkpoint_sq = cp_sq / m_chains
        return out


def sample_initial(initial, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` pure level-basis states whose mixture is ``initial``."""
    if isinstance(initial, StateVector) and initial.basis in ("levels", "x"):
        v = initial.amplitudes
        if v.size == 2:
            v = np.concatenate([v, [0, 0]])
        return np.tile(v / np.linalg.norm(v), (n, 1))
    rho = _as_level_density(initial)
    w, vecs = np.linalg.eigh(rho)
    w = np.clip(w, 0, None)
    w /= w.sum()
    idx = rng.choice(4, size=n, p=w)
    return vecs[:, idx].T.copy()


def mixed_spin() -> DensityMatrix:
    return DensityMatrix(np.diag([0.5, 0.5, 0, 0]).astype(complex), "levels")


def sample_trajectory(
    model: QdModel,
    sequence: PulseSequence,
    initial,
    seed: int,
    dt: float = DEFAULT_DT,
    n_frames: int = 1,
    axis: str | None = None,
    engine: TrajectoryEngine | None = None,
) -> TrajectoryResult:
    """One quantum-jump trajectory with a full record of its emissions."""
    engine = engine or TrajectoryEngine(model, sequence, dt)
    rng = np.random.default_rng(seed)
    psi0 = sample_initial(initial, 1, rng)
    out = engine.run_chains(psi0, n_frames, rng, axis=axis, keep_branches=True)
    ev = out.events
    photons = []
    for i in range(len(ev)):
        pol = axis or "H"
        photons.append(
            PhotonRecord(
                emission_time=float(ev.frame[i] * sequence.frame_period + ev.step[i] * engine.h),
                branch_h=ev.branches[i, 0],
                branch_v=ev.branches[i, 1],
                origin_pulse=int(ev.origin_pulse[i]),
                frame=int(ev.frame[i]),
                polarization=pol if ev.passed[i] else ORTHOGONAL_AXIS[pol],
            )
        )
    final = StateVector(out.final_psi[0], "levels")
    g = out.final_psi[0, :2]
    spin = StateVector(g / np.linalg.norm(g), "x") if np.linalg.norm(g) > 1e-12 else None
    return TrajectoryResult(photons, final, spin, int(seed))


@dataclass
class EnsembleResult:
    times: np.ndarray
    populations: np.ndarray
    stderr: np.ndarray
    n_trajectories: int
    events: ChainEvents = field(repr=False)
    step: float = 0.0


def sample_ensemble(
    model: QdModel,
    sequence: PulseSequence,
    initial,
    n_trajectories: int,
    seed: int,
    checkpoints,
    dt: float = DEFAULT_DT,
    axis: str | None = None,
    block: int = 16384,
    engine: TrajectoryEngine | None = None,
) -> EnsembleResult:
    """Average level populations of many single-frame trajectories.

    ``checkpoints`` are times (s) within the frame; they are snapped to the
    integration grid. Blocks of trajectories draw from independent child
    streams of ``seed`` so the result does not depend on scheduling.
    """
    engine = engine or TrajectoryEngine(model, sequence, dt)
    idx = np.unique(np.clip(np.round(np.asarray(checkpoints) / engine.h).astype(np.int64), 0, engine.n_steps))
    s1 = np.zeros((idx.size, 4))
    s2 = np.zeros((idx.size, 4))
    evs = []
    done = 0
    for b, child in enumerate(np.random.SeedSequence(seed).spawn(math.ceil(n_trajectories / block))):
        m = min(block, n_trajectories - done)
        rng = np.random.default_rng(child)
        out = engine.run_chains(sample_initial(initial, m, rng), 1, rng, axis=axis, checkpoints=idx)
        s1 += out.checkpoint_mean * m
        s2 += out.checkpoint_sq * m
        out.events.chain += done
        evs.append(out.events)
        done += m
    mean = s1 / n_trajectories
    var = np.clip(s2 / n_trajectories - mean**2, 0, None)
    events = ChainEvents(
        *(np.concatenate([getattr(e, f) for e in evs]) for f in ("chain", "frame", "step", "passed", "origin_pulse"))
    )
    return EnsembleResult(
        times=idx * engine.h,
        populations=mean,
        stderr=np.sqrt(var / max(n_trajectories - 1, 1)),
        n_trajectories=n_trajectories,
        events=events,
        step=engine.h,
    )
