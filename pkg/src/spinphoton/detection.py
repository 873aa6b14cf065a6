"""Polarization analysis, HBT splitting, detector response and time-tag streams."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ORTHOGONAL_AXIS, PHOTON_AXES, QdModel, StateVector
from .dynamics import DEFAULT_DT, PhotonRecord, TrajectoryEngine, mixed_spin, sample_initial
from .sequences import PulseSequence

FWHM_TO_SIGMA = 1 / 2.355
CHANNELS = ("A", "B")
KINDS = ("signal", "leak", "dark")
MAX_LEAK = 0.05
CHAINS_PER_BLOCK = 256
MAX_FRAMES_PER_CHAIN = 1024


class DetectionError(ValueError):
    pass


class TagFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# -- instrument response --------------------------------------------------------


@dataclass(frozen=True)
class IRF:
    """Timing-error distribution of a detector.

    ``kind`` is ``"gaussian"`` (parameterized by ``fwhm``), ``"delta"`` or
    ``"tabulated"`` (density sampled on ``times``; must integrate to one).
    """

    kind: str
    fwhm: float = 0.0
    times: tuple = ()
    density: tuple = ()

    def __post_init__(self):
        if self.kind not in ("gaussian", "delta", "tabulated"):
            raise DetectionError(f"unknown IRF kind {self.kind!r}")
        if self.kind == "gaussian" and not self.fwhm >= 0:
            raise DetectionError("IRF fwhm must be >= 0")
        if self.kind == "tabulated":
            t, d = np.asarray(self.times, float), np.asarray(self.density, float)
            if t.size < 2 or t.shape != d.shape or np.any(np.diff(t) <= 0):
                raise DetectionError("tabulated IRF needs increasing times and matching densities")
            if np.any(d < 0):
                raise DetectionError("IRF density must be non-negative")

    @classmethod
    def gaussian(cls, fwhm: float) -> "IRF":
        return cls("gaussian", fwhm=float(fwhm)) if fwhm > 0 else cls("delta")

    @classmethod
    def delta(cls) -> "IRF":
        return cls("delta")

    @classmethod
    def tabulated(cls, times, density) -> "IRF":
        return cls("tabulated", times=tuple(map(float, times)), density=tuple(map(float, density)))

    @property
    def sigma(self) -> float:
        if self.kind == "gaussian":
            return self.fwhm * FWHM_TO_SIGMA
        if self.kind == "delta":
            return 0.0
        t, w = self._table()
        mean = np.trapezoid(t * w, t)
        return float(np.sqrt(np.trapezoid((t - mean) ** 2 * w, t)))

    def _table(self):
        return np.asarray(self.times, float), np.asarray(self.density, float)

    def normalization(self) -> float:
        if self.kind != "tabulated":
            return 1.0
        t, w = self._table()
        return float(np.trapezoid(w, t))

    def check_normalized(self, tol: float = 1e-3) -> None:
        n = self.normalization()
        if abs(n - 1) > tol:
            raise DetectionError(f"IRF integrates to {n:.6g}, expected 1")

    def kernel(self, step: float) -> tuple[np.ndarray, np.ndarray]:
        """Offsets and weights (summing to 1) for discrete convolution."""
        self.check_normalized()
        if self.kind == "delta":
            return np.zeros(1), np.ones(1)
        if self.kind == "gaussian":
            s = self.sigma
            half = int(math.ceil(8 * s / step))
            t = np.arange(-half, half + 1) * step
            w = np.exp(-0.5 * (t / s) ** 2)
        else:
            tt, dd = self._table()
            t = np.arange(tt[0], tt[-1] + step / 2, step)
            w = np.interp(t, tt, dd)
        return t, w / w.sum()

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "delta":
            return np.zeros(n)
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, n)
        self.check_normalized()
        t, d = self._table()
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(t))])
        return np.interp(rng.random(n) * cdf[-1], cdf, t)


@dataclass(frozen=True)
class DetectorModel:
    """Single-photon detector: timing jitter (FWHM, s), efficiency and dark rate (1/s)."""

    jitter_fwhm: float = 48e-12
    efficiency: float = 4e-5
    dark_rate: float = 0.0
    label: str = "standard"
    irf: IRF | None = None

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise DetectionError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if not self.jitter_fwhm >= 0:
            raise DetectionError(f"jitter_fwhm must be >= 0, got {self.jitter_fwhm}")
        if not self.dark_rate >= 0:
            raise DetectionError("dark_rate must be >= 0")
        if self.label not in ("standard", "fast_timing"):
            raise DetectionError(f"unknown detector label {self.label!r}")

    @property
    def response(self) -> IRF:
        return self.irf if self.irf is not None else IRF.gaussian(self.jitter_fwhm)


STANDARD_DETECTOR = DetectorModel(48e-12, 4e-5, 0.0, "standard")
FAST_DETECTOR = DetectorModel(48e-12, 4e-6, 0.0, "fast_timing")


@dataclass(frozen=True)
class AnalyzerSetting:
    axis: str
    leak_probability: float = 0.0

    def __post_init__(self):
        if self.axis not in PHOTON_AXES:
            raise DetectionError(f"unknown analyzer axis {self.axis!r}")
        if not 0 <= self.leak_probability <= MAX_LEAK:
            raise DetectionError(f"leak_probability must lie in [0, {MAX_LEAK}]")


# -- single-event operations ------------------------------------------------------


def analyze_polarization(photon: PhotonRecord, setting: AnalyzerSetting, rng: np.random.Generator):
    """Project the photon on the analyzer axis.

    Returns ``(passed, spin)`` where ``spin`` is the normalized spin state
    conditioned on the observed outcome (x basis).
    """
    bh, bv = np.asarray(photon.branch_h), np.asarray(photon.branch_v)
    total = np.vdot(bh, bh).real + np.vdot(bv, bv).real
    if total <= 0:
        raise DetectionError("photon has zero norm")
    a = PHOTON_AXES[setting.axis]
    o = PHOTON_AXES[ORTHOGONAL_AXIS[setting.axis]]
    amp_a = np.conj(a[0]) * bh + np.conj(a[1]) * bv
    amp_o = np.conj(o[0]) * bh + np.conj(o[1]) * bv
    p_pass = np.vdot(amp_a, amp_a).real / total
    passed = bool(rng.random() < p_pass)
    spin = amp_a if passed else amp_o
    return passed, StateVector(spin / np.linalg.norm(spin), "x")


def pass_probability(photon: PhotonRecord, axis: str) -> float:
    bh, bv = np.asarray(photon.branch_h), np.asarray(photon.branch_v)
    a = PHOTON_AXES[axis]
    amp = np.conj(a[0]) * bh + np.conj(a[1]) * bv
    return float(np.vdot(amp, amp).real / (np.vdot(bh, bh).real + np.vdot(bv, bv).real))


def hbt_route(rng: np.random.Generator, size: int | None = None):
    """50/50 splitter: 'A' or 'B' (or an array of 0/1 channel indices)."""
    if size is None:
        return CHANNELS[int(rng.random() < 0.5)]
    return (rng.random(size) < 0.5).astype(np.int8)


@dataclass(frozen=True)
class TimeTag:
    frame_index: int
    channel: str
    time_in_frame: float
    weight: float = 1.0
    kind_truth: str | None = "signal"


def detect(time: float, detector: DetectorModel, rng: np.random.Generator, channel: str = "A", frame: int = 0, frame_period: float | None = None) -> TimeTag | None:
    """Thin by efficiency and add timing jitter to one photon arriving at ``time``."""
    if rng.random() >= detector.efficiency:
        return None
    t = time + detector.response.sample(1, rng)[0]
    if frame_period is not None:
        shift = math.floor(t / frame_period)
        frame, t = frame + shift, t - shift * frame_period
    return TimeTag(frame, channel, t)


# -- tag streams ----------------------------------------------------------------


@dataclass
class TagStream:
    """Columnar time-tag stream sorted by (frame, time)."""

    frame: np.ndarray
    channel: np.ndarray  # 0 = A, 1 = B
    time: np.ndarray  # s from the frame start
    weight: np.ndarray
    kind: np.ndarray | None = None  # index into KINDS; None when blind
    n_frames: int = 0
    frame_period: float = 1 / 76e6
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frame = np.asarray(self.frame, dtype=np.int64)
        self.channel = np.asarray(self.channel, dtype=np.int8)
        self.time = np.asarray(self.time, dtype=float)
        self.weight = np.asarray(self.weight, dtype=float)
        if self.kind is not None:
            self.kind = np.asarray(self.kind, dtype=np.int8)
        n = self.frame.size
        if not (self.channel.size == self.time.size == self.weight.size == n):
            raise TagFormatError("tag columns have different lengths")

    def __len__(self) -> int:
        return int(self.frame.size)

    @classmethod
    def empty(cls, n_frames: int = 0, frame_period: float = 1 / 76e6, header=None) -> "TagStream":
        z = np.zeros(0)
        return cls(z, z, z, z, np.zeros(0, np.int8), n_frames, frame_period, dict(header or {}))

    @property
    def absolute_time(self) -> np.ndarray:
        return self.frame * self.frame_period + self.time

    @property
    def weighted(self) -> bool:
        return self.header.get("mode") == "importance"

    def sorted(self) -> "TagStream":
        order = np.lexsort((self.channel, self.time, self.frame))
        return self.subset(order)

    def subset(self, idx) -> "TagStream":
        return TagStream(
            self.frame[idx],
            self.channel[idx],
            self.time[idx],
            self.weight[idx],
            None if self.kind is None else self.kind[idx],
            self.n_frames,
            self.frame_period,
            dict(self.header),
        )

    def select(self, channel: str | None = None, kind: str | None = None) -> "TagStream":
        m = np.ones(len(self), bool)
        if channel is not None:
            m &= self.channel == CHANNELS.index(channel)
        if kind is not None:
            if self.kind is None:
                raise DetectionError("stream carries no ground-truth kinds")
            m &= self.kind == KINDS.index(kind)
        return self.subset(np.flatnonzero(m))

    def blind(self) -> "TagStream":
        s = self.subset(slice(None))
        s.kind = None
        return s

    def tags(self):
        for i in range(len(self)):
            yield TimeTag(
                int(self.frame[i]),
                CHANNELS[self.channel[i]],
                float(self.time[i]),
                float(self.weight[i]),
                None if self.kind is None else KINDS[self.kind[i]],
            )

    @staticmethod
    def concatenate(streams, n_frames: int | None = None) -> "TagStream":
        streams = list(streams)
        if not streams:
            return TagStream.empty()
        kinds = None if any(s.kind is None for s in streams) else np.concatenate([s.kind for s in streams])
        return TagStream(
            np.concatenate([s.frame for s in streams]),
            np.concatenate([s.channel for s in streams]),
            np.concatenate([s.time for s in streams]),
            np.concatenate([s.weight for s in streams]),
            kinds,
            streams[0].n_frames if n_frames is None else n_frames,
            streams[0].frame_period,
            dict(streams[0].header),
        ).sorted()

    # text format: '# key = json' headers, then frame, channel, time_ps, weight[, kind]
    def to_text(self, blind: bool = True) -> str:
        head = dict(self.header)
        head["n_frames"] = int(self.n_frames)
        head["frame_period_ps"] = self.frame_period / 1e-12
        lines = [f"# {k} = {json.dumps(head[k], sort_keys=True)}" for k in sorted(head)]
        with_kind = not blind and self.kind is not None
        for i in range(len(self)):
            row = f"{self.frame[i]}\t{CHANNELS[self.channel[i]]}\t{self.time[i] / 1e-12:.4f}\t{self.weight[i]:.12g}"
            if with_kind:
                row += f"\t{KINDS[self.kind[i]]}"
            lines.append(row)
        return "\n".join(lines) + "\n"

    def write(self, path, blind: bool = True) -> Path:
        path = Path(path)
        path.write_text(self.to_text(blind))
        return path

    @classmethod
    def from_text(cls, text: str) -> "TagStream":
        header = {}
        cols = ([], [], [], [], [])
        n_kind = 0
        data_lines = 0
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, val = line[1:].partition("=")
                if not sep:
                    continue
                try:
                    header[key.strip()] = json.loads(val.strip())
                except json.JSONDecodeError:
                    header[key.strip()] = val.strip()
                continue
            parts = line.split("\t")
            if len(parts) not in (4, 5):
                raise TagFormatError(f"expected 4 or 5 tab-separated fields, got {len(parts)}", lineno)
            try:
                frame = int(parts[0])
                t = float(parts[2]) * 1e-12
                w = float(parts[3])
            except ValueError as exc:
                raise TagFormatError(str(exc), lineno) from None
            if parts[1] not in CHANNELS:
                raise TagFormatError(f"unknown channel {parts[1]!r}", lineno)
            if frame < 0 or not math.isfinite(t) or not math.isfinite(w) or w < 0:
                raise TagFormatError("negative frame, non-finite time or bad weight", lineno)
            cols[0].append(frame)
            cols[1].append(CHANNELS.index(parts[1]))
            cols[2].append(t)
            cols[3].append(w)
            data_lines += 1
            if len(parts) == 5:
                if parts[4] not in KINDS:
                    raise TagFormatError(f"unknown tag kind {parts[4]!r}", lineno)
                cols[4].append(KINDS.index(parts[4]))
                n_kind += 1
        if n_kind not in (0, data_lines):
            raise TagFormatError("kind column present on some lines only")
        period = float(header.pop("frame_period_ps", 1e12 / 76e6)) * 1e-12
        n_frames = int(header.pop("n_frames", (max(cols[0]) + 1) if cols[0] else 0))
        t = np.array(cols[2])
        if np.any((t < 0) | (t >= period)):
            raise TagFormatError("time_in_frame outside [0, frame_period)")
        return cls(
            np.array(cols[0], np.int64),
            np.array(cols[1], np.int8),
            t,
            np.array(cols[3]),
            np.array(cols[4], np.int8) if n_kind else None,
            n_frames,
            period,
            header,
        )

    @classmethod
    def read(cls, path) -> "TagStream":
        return cls.from_text(Path(path).read_text())


# -- full measurement chain ----------------------------------------------------------


def _detectors(detectors) -> tuple[DetectorModel, DetectorModel]:
    if isinstance(detectors, DetectorModel):
        return detectors, detectors
    if isinstance(detectors, dict):
        return detectors["A"], detectors["B"]
    a, b = detectors
    return a, b


def _wrap(frame, t, period):
    shift = np.floor(t / period).astype(np.int64)
    t = t - shift * period
    # floating guard: t == period after subtraction
    over = t >= period
    shift[over] += 1
    t[over] -= period
    return frame + shift, np.clip(t, 0, None)


def run_experiment(
    model: QdModel,
    sequence: PulseSequence,
    detectors,
    analyzer: AnalyzerSetting | None,
    n_frames: int,
    seed: int,
    mode: str = "plain",
    dt: float = DEFAULT_DT,
    initial=None,
    engine: TrajectoryEngine | None = None,
) -> TagStream:
    """Simulate ``n_frames`` repetitions of ``sequence`` and detect the emitted light.

    Frames are simulated as chains of up to 1024 consecutive frames (the
    spin carries over between frames of a chain); chains are grouped into
    blocks of 256 whose random streams derive from ``seed`` and the block
    index only. In ``importance`` mode every photon reaching a detector is
    kept with weight equal to its efficiency instead of being thinned.
    """
    if n_frames < 0:
        raise DetectionError("n_frames must be >= 0")
    if mode not in ("plain", "importance"):
        raise DetectionError(f"unknown sampling mode {mode!r}")
    if analyzer is None:
        analyzer = AnalyzerSetting(sequence.analyzer_axis or "H")
    det = _detectors(detectors)
    period = sequence.frame_period
    header = {
        "seed": int(seed),
        "mode": mode,
        "sequence": sequence.label,
        "analyzer_axis": analyzer.axis,
        "leak_probability": analyzer.leak_probability,
        "efficiency_A": det[0].efficiency,
        "efficiency_B": det[1].efficiency,
        "jitter_fwhm_ps": [det[0].jitter_fwhm / 1e-12, det[1].jitter_fwhm / 1e-12],
        "windows_ps": {k: [v[0] / 1e-12, v[1] / 1e-12] for k, v in sequence.windows.items()},
    }
    if sequence.raman_time is not None:
        header["raman_time_ps"] = sequence.raman_time / 1e-12
    if n_frames == 0:
        return TagStream.empty(0, period, header)
    engine = engine or TrajectoryEngine(model, sequence, dt)
    initial = mixed_spin() if initial is None else initial

    per_chain = int(min(MAX_FRAMES_PER_CHAIN, max(1, math.ceil(n_frames / CHAINS_PER_BLOCK))))
    n_chains = math.ceil(n_frames / per_chain)
    parts = []
    for block, c0 in enumerate(range(0, n_chains, CHAINS_PER_BLOCK)):
        chains = np.arange(c0, min(n_chains, c0 + CHAINS_PER_BLOCK))
        offsets = chains * per_chain
        limits = np.minimum(per_chain, n_frames - offsets)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))
        psi0 = sample_initial(initial, chains.size, rng)
        out = engine.run_chains(psi0, limits, rng, axis=analyzer.axis)
        ev = out.events
        keep = ev.passed
        frame = offsets[ev.chain[keep]] + ev.frame[keep]
        t_emit = ev.step[keep] * engine.h
        parts.append(_detect_block(frame, t_emit, 0, det, mode, rng, period))
        # leak-through background, one Bernoulli trial per frame
        lo_f, hi_f = offsets[0], offsets[-1] + limits[-1]
        if analyzer.leak_probability > 0 and "entangled" in sequence.windows:
            w0, w1 = sequence.windows["entangled"]
            lf = lo_f + np.flatnonzero(rng.random(hi_f - lo_f) < analyzer.leak_probability)
            lt = w0 + (w1 - w0) * rng.random(lf.size)
            parts.append(_detect_block(lf, lt, 1, det, mode, rng, period, jitter=False))
        for ch, d in enumerate(det):
            if d.dark_rate > 0:
                counts = rng.poisson(d.dark_rate * period, hi_f - lo_f)
                df = lo_f + np.repeat(np.arange(hi_f - lo_f), counts)
                parts.append(
                    (df, np.full(df.size, ch, np.int8), period * rng.random(df.size), np.ones(df.size), np.full(df.size, 2, np.int8))
                )
    frame, ch, t, w, kind = (np.concatenate(c) for c in zip(*parts))
    inside = (frame >= 0) & (frame < n_frames)
    stream = TagStream(frame[inside], ch[inside], t[inside], w[inside], kind[inside], n_frames, period, header)
    return stream.sorted()


def _detect_block(frame, t, kind, det, mode, rng, period, jitter=True):
    ch = hbt_route(rng, frame.size)
    eff = np.where(ch == 0, det[0].efficiency, det[1].efficiency)
    if mode == "plain":
        keep = rng.random(frame.size) < eff
        frame, t, ch = frame[keep], t[keep], ch[keep]
        w = np.ones(frame.size)
    else:
        w = eff
    t = np.array(t, dtype=float)
    if jitter:
        for c, d in enumerate(det):
            sel = ch == c
            t[sel] += d.response.sample(int(sel.sum()), rng)
    frame, t = _wrap(np.asarray(frame, np.int64), t, period)
    return frame, ch, t, w, np.full(frame.size, kind, np.int8)
