"""Laser pulses, frame sequences and the six measurement presets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import PHOTON_AXES, TRANSITIONS, ORTHOGONAL_AXIS

PS = 1e-12
NS = 1e-9
REP_RATE = 76e6
FRAME_PERIOD = 1 / REP_RATE

OPTICAL_TARGETS = tuple(TRANSITIONS)
KICK_TARGETS = ("raman", "reset")
SHAPES = ("square", "gaussian")
SEQUENCE_LABELS = (
    "x_basis_positive",
    "x_basis_anticorr",
    "z_basis_sigma_plus",
    "z_basis_sigma_minus",
    "custom",
)


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class Pulse:
    """One laser pulse inside a frame.

    Exactly one of ``area`` (rad) or ``rabi`` (rad/s, peak Rabi frequency on
    the target transition) is given. ``raman`` pulses are applied as an
    instantaneous spin rotation at ``start`` and ``reset`` pulses as an ideal
    projection onto ``state``; neither needs a Rabi frequency.
    """

    start: float
    duration: float
    target: str
    polarization: str = "V"
    shape: str = "square"
    area: float | None = None
    rabi: float | None = None
    detuning: float = 0.0
    state: str | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise SequenceError(f"pulse duration must be > 0, got {self.duration}")
        if self.target not in OPTICAL_TARGETS + KICK_TARGETS:
            raise SequenceError(f"unknown target transition {self.target!r}")
        if self.shape not in SHAPES:
            raise SequenceError(f"unknown pulse shape {self.shape!r}")
        if self.polarization not in PHOTON_AXES:
            raise SequenceError(f"unknown polarization {self.polarization!r}")
        if self.target == "reset":
            if self.state not in ("x+", "x-"):
                raise SequenceError("reset pulses need state 'x+' or 'x-'")
            return
        if (self.area is None) == (self.rabi is None):
            raise SequenceError("give exactly one of area or rabi")
        if self.target == "raman":
            if self.area is None:
                raise SequenceError("raman pulses are specified by their area")
            self.rotation_axis
        if self.target in OPTICAL_TARGETS and abs(self.coupling_weight()) == 0:
            raise SequenceError(
                f"{self.polarization} light does not couple to {self.target}"
            )
        if self.target in OPTICAL_TARGETS and not math.isfinite(self.peak_rabi()):
            raise SequenceError("derived Rabi frequency is not finite")

    @property
    def stop(self) -> float:
        return self.start + self.duration

    @property
    def is_kick(self) -> bool:
        return self.target in KICK_TARGETS

    @property
    def rotation_axis(self) -> str:
        """Raman rotation label; the rotation carries the pulse polarization."""
        if not self.polarization.startswith("sigma"):
            raise SequenceError("raman pulses must be circularly polarized")
        return self.polarization

    def coupling_weight(self) -> complex:
        pol = TRANSITIONS[self.target][2]
        return PHOTON_AXES[self.polarization][0 if pol == "H" else 1]

    def _unit_envelope(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.start) & (t < self.stop)
        if self.shape == "square":
            return inside.astype(float)
        s = self.duration / 6
        mid = self.start + self.duration / 2
        return np.where(inside, np.exp(-0.5 * ((t - mid) / s) ** 2), 0.0)

    def _unit_area(self) -> float:
        if self.shape == "square":
            return self.duration
        s = self.duration / 6
        return s * math.sqrt(2 * math.pi) * math.erf(3 / math.sqrt(2))

    def peak_rabi(self) -> float:
        if self.rabi is not None:
            return float(self.rabi)
        return float(self.area) / self._unit_area()

    def envelope(self, t) -> np.ndarray:
        """Rabi frequency on the target transition at times ``t`` (rad/s)."""
        return self.peak_rabi() * self._unit_envelope(t)


@dataclass(frozen=True)
class PulseSequence:
    """Pulses repeated every ``frame_period``.

    ``windows`` maps analysis window names to (start, stop) in seconds from
    the start of the frame holding the herald; a window may extend into the
    next frame. ``off_resonant`` lets every pulse drive all transitions its
    polarization couples to, not only its target.
    """

    pulses: tuple[Pulse, ...]
    frame_period: float = FRAME_PERIOD
    label: str = "custom"
    windows: dict = field(default_factory=dict)
    off_resonant: bool = False
    analyzer_axis: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(sorted(self.pulses, key=lambda p: p.start)))
        if self.label not in SEQUENCE_LABELS:
            raise SequenceError(f"unknown sequence label {self.label!r}")
        if self.frame_period <= 0:
            raise SequenceError("frame_period must be > 0")
        for p in self.pulses:
            if p.start < 0 or p.stop > self.frame_period * (1 + 1e-12):
                raise SequenceError(f"pulse on {p.target} at {p.start:.3g}s does not fit in the frame")
        for a, b in zip(self.pulses, self.pulses[1:]):
            end_a = a.start if a.is_kick else a.stop
            if b.start < end_a - 1e-18:
                raise SequenceError(f"pulses on {a.target} and {b.target} overlap")
        for name, (lo, hi) in self.windows.items():
            if not hi > lo:
                raise SequenceError(f"window {name!r} is empty")
            if hi - lo > self.frame_period * (1 + 1e-12):
                raise SequenceError(f"window {name!r} is longer than a frame")

    @property
    def optical_pulses(self) -> tuple[Pulse, ...]:
        return tuple(p for p in self.pulses if not p.is_kick)

    @property
    def kicks(self) -> tuple[Pulse, ...]:
        return tuple(p for p in self.pulses if p.is_kick)

    @property
    def raman_time(self) -> float | None:
        for p in self.pulses:
            if p.target == "raman":
                return p.start
        return None

    def with_options(self, **kw) -> "PulseSequence":
        return replace(self, **kw)


# -- presets -----------------------------------------------------------------

INIT_DURATION = 4 * NS
INIT_RABI = 2 * math.pi * 1e9
EXCITE_START = 4.25 * NS
EXCITE_DURATION = 250 * PS
PROBE_START = 8.5 * NS
RAMAN_DELAY = 600 * PS
RAMAN_DURATION = 2 * PS

# scenario -> (sequence label, analyzer axis, laser polarization, init, excite)
SCENARIOS = {
    "x_basis_positive_H": ("x_basis_positive", "H", "V", "V1", "V4"),
    "x_basis_anticorr_H": ("x_basis_anticorr", "H", "V", "V1", "V4"),
    "x_basis_positive_V": ("x_basis_positive", "V", "H", "H3", "H2"),
    "x_basis_anticorr_V": ("x_basis_anticorr", "V", "H", "H3", "H2"),
    "z_basis_sigma_plus": ("z_basis_sigma_plus", "sigma+", "sigma-", "V1", "V4"),
    "z_basis_sigma_minus": ("z_basis_sigma_minus", "sigma-", "sigma+", "V1", "V4"),
}

# the spin outcome each scenario's readout pulse scatters from
READOUT_SPIN = {
    "x_basis_positive_H": "x+",
    "x_basis_anticorr_H": "x-",
    "x_basis_positive_V": "x-",
    "x_basis_anticorr_V": "x+",
    "z_basis_sigma_plus": "x+",
    "z_basis_sigma_minus": "x+",
}

_DARK_STATE = {"V1": "x-", "H3": "x+"}


def scenario_names(family: str | None = None) -> list[str]:
    """Scenario names matching an exact name or a sequence-label family."""
    if family is None or family == "all":
        return list(SCENARIOS)
    if family in SCENARIOS:
        return [family]
    names = [k for k, v in SCENARIOS.items() if v[0] == family]
    if not names:
        raise SequenceError(f"unknown preset {family!r}")
    return names


def preset_sequence(
    scenario: str,
    *,
    off_resonant: bool = False,
    ideal_init: bool = False,
    frame_period: float = FRAME_PERIOD,
) -> PulseSequence:
    """Pulse sequence for one of the six measurements.

    Each frame opens with the 4 ns pumping pulse, which also reads out the
    spin left by the previous frame, followed by the 250 ps pi pulse. The
    anti-correlation runs add a second pi pulse as probe; the rotated-basis
    runs add a pi/2 Raman rotation 600 ps after the excitation pulse.
    """
    if scenario not in SCENARIOS:
        raise SequenceError(f"unknown scenario {scenario!r}")
    label, axis, laser_pol, init_t, excite_t = SCENARIOS[scenario]
    pulses = [
        Pulse(0.0, INIT_DURATION, init_t, laser_pol, rabi=INIT_RABI),
        Pulse(EXCITE_START, EXCITE_DURATION, excite_t, laser_pol, area=math.pi),
    ]
    if ideal_init:
        pulses.append(Pulse(INIT_DURATION, PS, "reset", laser_pol, state=_DARK_STATE[init_t]))
    excite_end = EXCITE_START + EXCITE_DURATION
    readout_next = (frame_period, frame_period + EXCITE_START)
    if label == "x_basis_anticorr":
        pulses.append(Pulse(PROBE_START, EXCITE_DURATION, excite_t, laser_pol, area=math.pi))
        windows = {"entangled": (EXCITE_START, PROBE_START), "readout": (PROBE_START, frame_period)}
    elif label == "x_basis_positive":
        windows = {"entangled": (EXCITE_START, frame_period), "readout": readout_next}
    else:
        t_r = excite_end + RAMAN_DELAY
        pulses.append(Pulse(t_r, RAMAN_DURATION, "raman", ORTHOGONAL_AXIS[axis], area=math.pi / 2))
        windows = {"entangled": (EXCITE_START, t_r), "readout": readout_next}
    return PulseSequence(
        tuple(pulses),
        frame_period=frame_period,
        label=label,
        windows=windows,
        off_resonant=off_resonant,
        analyzer_axis=axis,
    )
