"""Run configuration: INI text with times in ps, frequencies in GHz, areas in units of pi."""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import QdModel, build_qd_model, InvalidParameterError
from .detection import IRF, AnalyzerSetting, DetectionError, DetectorModel
from .rates import RateBudget, RateError
from .sequences import (
    SCENARIOS,
    Pulse,
    PulseSequence,
    SequenceError,
    preset_sequence,
    scenario_names,
)

PS = 1e-12
GHZ = 2 * math.pi * 1e9


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass
class QdSection:
    delta_e_ghz: float = 7.35
    delta_h_ghz: float | None = None
    gamma_per_ns: float = 1.0
    spin_dephasing_per_ns: float = 0.0


@dataclass
class DetectorSection:
    jitter_fwhm_ps: float = 48.0
    efficiency: float = 4e-5
    dark_rate: float = 0.0
    label: str = "standard"
    irf_file: str = ""


@dataclass
class AnalyzerSection:
    leak_probability_x: float = 0.0
    leak_probability_z: float = 0.0


@dataclass
class RunSection:
    preset: str = "all"
    n_frames: int = 200000
    seed: int = 1
    mode: str = "importance"
    out_dir: str = "out"
    dt_ps: float = 1.0


@dataclass
class SequenceSection:
    off_resonant: bool = False
    ideal_init: bool = False
    rep_rate_mhz: float = 76.0
    custom_pulses: str = ""
    custom_analyzer: str = "H"
    window_entangled_ps: str = ""
    window_readout_ps: str = ""


@dataclass
class AnalysisSection:
    bin_width_ps: float = 25.0
    baseline_offset: int = 10
    fit_periods: float = 3.0
    fit_start_ps: float = 0.0
    correct: bool = True


@dataclass
class RatesSection:
    rep_rate_mhz: float = 76.0
    de_entangled: float = 4e-5
    de_readout: float = 4e-5
    de_fast: float = 4e-6
    branching: float = 1.0
    coincidence_factor: float = 0.125


SECTIONS = {
    "qd": QdSection,
    "detector.A": DetectorSection,
    "detector.B": DetectorSection,
    "analyzer": AnalyzerSection,
    "run": RunSection,
    "sequence": SequenceSection,
    "analysis": AnalysisSection,
    "rates": RatesSection,
}
_ATTR = {
    "qd": "qd",
    "detector.A": "detector_a",
    "detector.B": "detector_b",
    "analyzer": "analyzer",
    "run": "run",
    "sequence": "sequence",
    "analysis": "analysis",
    "rates": "rates",
}


@dataclass
class RunConfig:
    qd: QdSection = field(default_factory=QdSection)
    detector_a: DetectorSection = field(default_factory=DetectorSection)
    detector_b: DetectorSection = field(default_factory=DetectorSection)
    analyzer: AnalyzerSection = field(default_factory=AnalyzerSection)
    run: RunSection = field(default_factory=RunSection)
    sequence: SequenceSection = field(default_factory=SequenceSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    rates: RatesSection = field(default_factory=RatesSection)

    # -- derived objects -----------------------------------------------------
    def model(self) -> QdModel:
        q = self.qd
        try:
            return build_qd_model(
                q.delta_e_ghz * GHZ,
                None if q.delta_h_ghz is None else q.delta_h_ghz * GHZ,
                q.gamma_per_ns * 1e9,
                spin_dephasing=q.spin_dephasing_per_ns * 1e9,
            )
        except InvalidParameterError as exc:
            raise ConfigError(str(exc), "qd") from None

    def detectors(self) -> tuple[DetectorModel, DetectorModel]:
        out = []
        for name in ("detector.A", "detector.B"):
            d = getattr(self, _ATTR[name])
            irf = _load_irf(d.irf_file, name) if d.irf_file else None
            try:
                out.append(DetectorModel(d.jitter_fwhm_ps * PS, d.efficiency, d.dark_rate, d.label, irf))
            except DetectionError as exc:
                raise ConfigError(str(exc), name) from None
        return tuple(out)

    @property
    def frame_period(self) -> float:
        return 1 / (self.sequence.rep_rate_mhz * 1e6)

    def scenarios(self) -> list[str]:
        if self.run.preset == "custom":
            return ["custom"]
        try:
            return scenario_names(self.run.preset)
        except SequenceError as exc:
            raise ConfigError(str(exc), "run.preset") from None

    def sequence_for(self, scenario: str) -> PulseSequence:
        s = self.sequence
        try:
            if scenario == "custom":
                return _custom_sequence(s, self.frame_period)
            return preset_sequence(
                scenario, off_resonant=s.off_resonant, ideal_init=s.ideal_init, frame_period=self.frame_period
            )
        except SequenceError as exc:
            raise ConfigError(str(exc), "sequence") from None

    def analyzer_for(self, sequence: PulseSequence) -> AnalyzerSetting:
        axis = sequence.analyzer_axis or "H"
        leak = self.analyzer.leak_probability_z if axis.startswith("sigma") else self.analyzer.leak_probability_x
        try:
            return AnalyzerSetting(axis, leak)
        except DetectionError as exc:
            raise ConfigError(str(exc), "analyzer") from None

    def budget(self, fast: bool = False) -> RateBudget:
        r = self.rates
        try:
            return RateBudget(r.rep_rate_mhz * 1e6, r.de_fast if fast else r.de_entangled, r.de_readout, r.branching, r.coincidence_factor)
        except RateError as exc:
            raise ConfigError(str(exc), "rates") from None

    def validate(self) -> "RunConfig":
        self.model()
        self.detectors()
        if self.run.n_frames < 0:
            raise ConfigError("must be >= 0", "run.n_frames")
        if self.run.mode not in ("plain", "importance"):
            raise ConfigError("must be 'plain' or 'importance'", "run.mode")
        if not self.run.dt_ps > 0:
            raise ConfigError("must be > 0", "run.dt_ps")
        if self.sequence.rep_rate_mhz <= 0:
            raise ConfigError("must be > 0", "sequence.rep_rate_mhz")
        if not self.analysis.bin_width_ps > 0:
            raise ConfigError("must be > 0", "analysis.bin_width_ps")
        if self.analysis.baseline_offset < 1:
            raise ConfigError("must be >= 1", "analysis.baseline_offset")
        for sc in self.scenarios():
            seq = self.sequence_for(sc)
            self.analyzer_for(seq)
            if seq.off_resonant and self.qd.delta_h_ghz is None:
                raise ConfigError("required when off_resonant is enabled", "qd.delta_h_ghz")
        self.budget()
        return self

    # -- text form -------------------------------------------------------------
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for name, attr in _ATTR.items():
            sec = getattr(self, attr)
            cp[name] = {f.name: _format(getattr(sec, f.name)) for f in fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def with_overrides(self, **kw) -> "RunConfig":
        run = replace(self.run, **{k: v for k, v in kw.items() if v is not None})
        return replace(self, run=run)


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(value: str, ftype: str, key: str):
    value = value.strip()
    try:
        if ftype == "bool":
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if ftype == "int":
            return int(value)
        if ftype == "float":
            return float(value)
        if ftype == "float | None":
            return None if value in ("", "none", "None") else float(value)
        return value
    except ValueError as exc:
        raise ConfigError(str(exc), key) from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError("unknown section", f"[{name}]")
        sec = getattr(cfg, _ATTR[name])
        known = {f.name: f.type for f in fields(sec)}
        vals = {}
        for key, raw in cp[name].items():
            if key not in known:
                raise ConfigError("unknown key", f"{name}.{key}")
            vals[key] = _parse(raw, str(known[key]), f"{name}.{key}")
        setattr(cfg, _ATTR[name], replace(sec, **vals))
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def _load_irf(path: str, section: str) -> IRF:
    try:
        data = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read IRF table: {exc}", f"{section}.irf_file") from None
    t = data[:, 0] * PS
    dens = data[:, 1] / PS
    try:
        irf = IRF.tabulated(t, dens)
        irf.check_normalized()
    except DetectionError as exc:
        raise ConfigError(str(exc), f"{section}.irf_file") from None
    return irf


def _window(text: str, key: str):
    parts = text.split()
    if len(parts) != 2:
        raise ConfigError("expected 'start stop' in ps", key)
    return float(parts[0]) * PS, float(parts[1]) * PS


def _custom_sequence(s: SequenceSection, frame_period: float) -> PulseSequence:
    """Pulses given one per line: target start_ps duration_ps polarization key=value..."""
    pulses = []
    for n, line in enumerate(filter(None, (ln.strip() for ln in s.custom_pulses.splitlines())), 1):
        tok = line.split()
        if len(tok) < 4:
            raise ConfigError(f"pulse {n}: expected 'target start_ps duration_ps polarization ...'", "sequence.custom_pulses")
        kw = dict(target=tok[0], start=float(tok[1]) * PS, duration=float(tok[2]) * PS, polarization=tok[3])
        for item in tok[4:]:
            k, _, v = item.partition("=")
            if k == "area_pi":
                kw["area"] = float(v) * math.pi
            elif k == "rabi_ghz":
                kw["rabi"] = float(v) * GHZ
            elif k == "detuning_ghz":
                kw["detuning"] = float(v) * GHZ
            elif k in ("shape", "state"):
                kw[k] = v
            else:
                raise ConfigError(f"pulse {n}: unknown field {k!r}", "sequence.custom_pulses")
        pulses.append(Pulse(**kw))
    windows = {}
    if s.window_entangled_ps:
        windows["entangled"] = _window(s.window_entangled_ps, "sequence.window_entangled_ps")
    if s.window_readout_ps:
        windows["readout"] = _window(s.window_readout_ps, "sequence.window_readout_ps")
    return PulseSequence(
        tuple(pulses),
        frame_period=frame_period,
        label="custom",
        windows=windows,
        off_resonant=s.off_resonant,
        analyzer_axis=s.custom_analyzer,
    )


HOLE_SPLITTING_GHZ = 3.0


def imperfect_config(**run_overrides) -> RunConfig:
    """Every imperfection switched on; the hole splitting is set to 3 GHz."""
    cfg = RunConfig()
    cfg.qd = replace(cfg.qd, delta_h_ghz=HOLE_SPLITTING_GHZ)
    cfg.analyzer = AnalyzerSection(0.02, 0.05)
    cfg.sequence = replace(cfg.sequence, off_resonant=True)
    return cfg.with_overrides(**run_overrides)


def ideal_config(**run_overrides) -> RunConfig:
    """Same parameters with ideal initialization, no leak, no jitter and no off-resonant driving."""
    cfg = RunConfig()
    cfg.detector_a = replace(cfg.detector_a, jitter_fwhm_ps=0.0)
    cfg.detector_b = replace(cfg.detector_b, jitter_fwhm_ps=0.0)
    cfg.sequence = replace(cfg.sequence, ideal_init=True)
    return cfg.with_overrides(**run_overrides)


KNOWN_SCENARIOS = tuple(SCENARIOS)
