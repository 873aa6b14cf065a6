"""Data reduction: histograms, coincidences, conditional probabilities, fringes, fidelity."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .detection import IRF, TagStream

DEFAULT_BASELINE_OFFSET = 10
FRINGE_BIN = 25e-12


class AnalysisError(ValueError):
    pass


# -- histograms -------------------------------------------------------------------


@dataclass
class Histogram:
    """Weighted time histogram; ``counts`` are sums of tag weights per bin."""

    bin_width: float
    origin: float
    counts: np.ndarray
    raw_counts: np.ndarray
    sq_weights: np.ndarray
    label: str = ""

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(self.counts.size + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.origin + self.bin_width * (np.arange(self.counts.size) + 0.5)

    @property
    def total(self) -> int:
        return int(self.raw_counts.sum())

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(self.sq_weights)


def fold_into_window(tags: TagStream, window) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map tags onto a frame-relative window that may extend into the next frame.

    Returns ``(herald_frame, t_rel, index)`` for tags inside ``window``.
    """
    lo, hi = window
    if hi - lo > tags.frame_period * (1 + 1e-12):
        raise AnalysisError("window is longer than a frame")
    abs_t = tags.absolute_time
    k = np.floor((abs_t - lo) / tags.frame_period).astype(np.int64)
    rel = abs_t - k * tags.frame_period
    inside = (rel >= lo) & (rel < hi)
    return k[inside], rel[inside], np.flatnonzero(inside)


def build_histogram(tags: TagStream, bin_width: float, window, label: str = "") -> Histogram:
    if not bin_width > 0:
        raise AnalysisError("bin_width must be > 0")
    lo, hi = window
    nb = max(1, int(math.ceil((hi - lo) / bin_width - 1e-9)))
    _, rel, idx = fold_into_window(tags, window)
    b = np.minimum(((rel - lo) / bin_width).astype(np.int64), nb - 1)
    w = tags.weight[idx]
    return Histogram(
        bin_width,
        lo,
        np.bincount(b, weights=w, minlength=nb),
        np.bincount(b, minlength=nb),
        np.bincount(b, weights=w * w, minlength=nb),
        label,
    )


def fit_decay_rate(hist: Histogram, start: float | None = None, stop: float | None = None) -> tuple[float, float]:
    """Log-linear weighted fit of an exponential decay; returns (rate, stderr)."""
    x = hist.centers
    y = hist.counts
    m = y > 0
    if start is not None:
        m &= x >= start
    if stop is not None:
        m &= x < stop
    if m.sum() < 3:
        raise AnalysisError("need at least three populated bins to fit a decay")
    w = hist.counts[m] ** 2 / np.maximum(hist.sq_weights[m], 1e-300)  # 1/var(log y)
    a = np.vstack([np.ones(m.sum()), x[m]]).T
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(a * sw[:, None], np.log(y[m]) * sw, rcond=None)
    cov = np.linalg.inv((a * w[:, None]).T @ a)
    return float(-coef[1]), float(math.sqrt(cov[1, 1]))


# -- coincidences -----------------------------------------------------------------


@dataclass
class CoincidenceTable:
    """Weighted herald/readout pair sums for one window pair.

    ``n_corr`` pairs heralds with readout tags of the same frame,
    ``n_uncorr`` with the readout of the frame ``offset`` later; ``var_*``
    are sums of squared per-frame products. When heralds are binned, all
    four fields are arrays over ``bin_edges``.
    """

    n_corr: np.ndarray | float
    n_uncorr: np.ndarray | float
    var_corr: np.ndarray | float
    var_uncorr: np.ndarray | float
    entangled_window: tuple
    readout_window: tuple
    offset: int
    frames_used: int
    bin_edges: np.ndarray | None = None


def _windows_overlap(a, b) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def _frame_sums(k, w, n):
    sel = (k >= 0) & (k < n)
    return np.bincount(k[sel], weights=w[sel], minlength=n)


def coincidences(
    tags: TagStream,
    entangled_window,
    readout_window,
    offset_frames: int = DEFAULT_BASELINE_OFFSET,
    bin_edges=None,
    herald_coordinate=None,
) -> CoincidenceTable:
    """Pair weights of herald tags with readout tags.

    ``bin_edges`` optionally splits heralds by ``herald_coordinate(t_rel)``
    (the frame-relative herald time by default).
    """
    if _windows_overlap(entangled_window, readout_window):
        raise AnalysisError("entangled and readout windows overlap")
    if offset_frames < 1:
        raise AnalysisError("the baseline offset must be at least one frame")
    n = tags.n_frames
    span = int(math.ceil(max(entangled_window[1], readout_window[1]) / tags.frame_period)) - 1
    usable = max(0, n - offset_frames - span)
    kr, _, ir = fold_into_window(tags, readout_window)
    w_r = _frame_sums(kr, tags.weight[ir], n + offset_frames + 1)
    ke, te, ie = fold_into_window(tags, entangled_window)
    we = tags.weight[ie]
    sel = (ke >= 0) & (ke < usable)
    ke, te, we = ke[sel], te[sel], we[sel]
    if bin_edges is None:
        b = np.zeros(ke.size, np.int64)
        nb = 1
    else:
        coord = te if herald_coordinate is None else herald_coordinate(te)
        bin_edges = np.asarray(bin_edges, float)
        nb = bin_edges.size - 1
        b = np.searchsorted(bin_edges, coord, side="right") - 1
        ok = (b >= 0) & (b < nb)
        ke, b, we = ke[ok], b[ok], we[ok]
    # per (frame, bin) herald weights
    key = ke * nb + b
    uk, inv = np.unique(key, return_inverse=True)
    wsum = np.bincount(inv, weights=we)
    kf, bf = uk // nb, uk % nb
    pc = wsum * w_r[kf]
    pu = wsum * w_r[kf + offset_frames]
    out = [np.bincount(bf, weights=v, minlength=nb) for v in (pc, pu, pc**2, pu**2)]
    if bin_edges is None:
        out = [float(v[0]) for v in out]
    return CoincidenceTable(*out, tuple(entangled_window), tuple(readout_window), offset_frames, usable, bin_edges)


@dataclass
class Probability:
    value: float
    error: float

    def __iter__(self):
        yield self.value
        yield self.error


def conditional_probability(table: CoincidenceTable) -> Probability:
    """0.5 * n_corr / n_uncorr with first-order counting uncertainty."""
    nc, nu = np.asarray(table.n_corr, float), np.asarray(table.n_uncorr, float)
    if np.any(nu <= 0):
        raise AnalysisError("uncorrelated baseline is zero")
    p = 0.5 * nc / nu
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(nc > 0, np.asarray(table.var_corr) / nc**2, 0.0) + np.asarray(table.var_uncorr) / nu**2
    err = np.abs(p) * np.sqrt(rel)
    if np.ndim(p) == 0:
        return Probability(float(p), float(err))
    return Probability(p, err)


def coincidence_correction(raw_pair, double_detection_prob: float) -> tuple[float, float]:
    """Subtract the double-detection background from both elements, then renormalize."""
    a, b = map(float, raw_pair)
    if a == 0 and b == 0:
        raise AnalysisError("both raw values are zero")
    if not 0 <= double_detection_prob < 1:
        raise AnalysisError("double_detection_prob must lie in [0, 1)")
    a2 = max(a - double_detection_prob, 0.0)
    b2 = max(b - double_detection_prob, 0.0)
    if a2 + b2 == 0:
        raise AnalysisError("correction removes the whole signal")
    s = a2 + b2
    return a2 / s, b2 / s


def double_detection_probability(tags: TagStream, window, efficiency: float | None = None) -> float:
    """Background fraction to subtract from each conditional probability.

    Cross-channel coincidences inside the herald window measure how often a
    frame delivers two photons there; such heralds carry no spin correlation.
    With herald weight W_h and A/B coincidence weight W_AB, the fraction of
    multi-photon heralds is 4 W_AB / (eta W_h) and each conditional picks
    up half of it.
    """
    if efficiency is None:
        effs = [tags.header.get("efficiency_A"), tags.header.get("efficiency_B")]
        if None in effs:
            raise AnalysisError("detector efficiency unknown; pass it explicitly")
        efficiency = 0.5 * (effs[0] + effs[1])
    if efficiency <= 0:
        raise AnalysisError("efficiency must be > 0")
    k, _, idx = fold_into_window(tags, window)
    n = tags.n_frames + 2
    sel = (k >= 0) & (k < n)
    k, idx = k[sel], idx[sel]
    w = tags.weight[idx]
    ch = tags.channel[idx]
    wa = np.bincount(k[ch == 0], weights=w[ch == 0], minlength=n)
    wb = np.bincount(k[ch == 1], weights=w[ch == 1], minlength=n)
    w_h = w.sum()
    if w_h == 0:
        return 0.0
    frac = 4 * float(np.dot(wa, wb)) / (efficiency * w_h)
    return min(0.5 * frac, 0.5)


# -- fringes ------------------------------------------------------------------------


@dataclass
class FringeFit:
    contrast: float
    contrast_error: float
    phase: float
    offset: float
    delta_e: float
    window: tuple
    residual_norm: float
    dof: int
    clamped: bool = False

    @property
    def signed_contrast(self) -> float:
        return self.contrast * (1.0 if math.cos(self.phase) >= 0 else -1.0)

    @property
    def reduced_chi2(self) -> float:
        return self.residual_norm / max(self.dof, 1)


def fringe_fit(
    tau,
    values,
    delta_e: float,
    errors=None,
    envelope_rate: float | None = None,
    n_periods: float = 3.0,
    start: float = 0.0,
    bin_width: float = 0.0,
) -> FringeFit:
    """Fit a * (1 + C sin(delta_e tau + phi)) with the frequency held fixed.

    The model is linear in (a, a C cos phi, a C sin phi); only points with
    ``start <= tau < start + n_periods * 2 pi / delta_e`` are used. With
    ``envelope_rate`` the data are first divided by exp(-rate tau). When the
    values are averages over bins of width ``bin_width`` centred on ``tau``,
    the oscillating terms are scaled accordingly so C refers to the
    unbinned fringe.
    """
    tau = np.asarray(tau, float)
    y = np.asarray(values, float)
    sig = np.ones_like(y) if errors is None else np.asarray(errors, float)
    if delta_e <= 0:
        raise AnalysisError("delta_e must be > 0")
    period = 2 * math.pi / delta_e
    stop = start + n_periods * period
    step = np.min(np.diff(np.sort(tau))) if tau.size > 1 else period
    if tau.size < 4 or tau.max() + step < stop * (1 - 1e-9) or tau.min() > start + step:
        raise AnalysisError(f"data must span {n_periods:g} periods from tau = {start:.3g} s")
    m = (tau >= start) & (tau < stop) & np.isfinite(y) & (sig > 0)
    tau, y, sig = tau[m], y[m], sig[m]
    if envelope_rate:
        env = np.exp(-envelope_rate * tau)
        y, sig = y / env, sig / env
    x = delta_e * tau
    half = 0.5 * delta_e * bin_width
    sinc = math.sin(half) / half if half > 0 else 1.0
    a = np.vstack([np.ones_like(x), sinc * np.sin(x), sinc * np.cos(x)]).T
    aw = a / sig[:, None]
    coef, *_ = np.linalg.lstsq(aw, y / sig, rcond=None)
    resid = float(np.sum(((a @ coef - y) / sig) ** 2))
    dof = y.size - 3
    cov = np.linalg.pinv(aw.T @ aw)
    if errors is None:
        cov *= resid / max(dof, 1)
    a0, b, c = coef
    r = math.hypot(b, c)
    contrast = r / a0
    jac = np.array([-r / a0**2, b / (r * a0), c / (r * a0)]) if r > 0 else np.array([0, 1 / a0, 0])
    err = float(math.sqrt(max(jac @ cov @ jac, 0.0)))
    clamped = False
    if contrast > 1:
        warnings.warn(f"fitted contrast {contrast:.3f} exceeds 1; clamped", stacklevel=2)
        contrast, clamped = 1.0, True
    return FringeFit(contrast, err, math.atan2(c, b), float(a0), delta_e, (start, stop), resid, dof, clamped)


@dataclass
class FringeData:
    tau: np.ndarray
    probability: np.ndarray
    error: np.ndarray
    n_corr: np.ndarray
    n_uncorr: np.ndarray
    bin_width: float


def fringe_data(tags: TagStream, raman_time: float, entangled_window, readout_window, bin_width: float = FRINGE_BIN, offset_frames: int = DEFAULT_BASELINE_OFFSET) -> FringeData:
    """Conditional readout probability versus tau = t_raman - t_herald."""
    span = raman_time - entangled_window[0]
    nb = int(span // bin_width)
    edges = np.arange(nb + 1) * bin_width
    table = coincidences(
        tags, entangled_window, readout_window, offset_frames, bin_edges=edges, herald_coordinate=lambda t: raman_time - t
    )
    nu = np.asarray(table.n_uncorr)
    good = nu > 0
    p, e = conditional_probability(
        CoincidenceTable(
            np.asarray(table.n_corr)[good],
            nu[good],
            np.asarray(table.var_corr)[good],
            np.asarray(table.var_uncorr)[good],
            table.entangled_window,
            table.readout_window,
            table.offset,
            table.frames_used,
        )
    )
    centers = 0.5 * (edges[1:] + edges[:-1])
    return FringeData(centers[good], p, e, np.asarray(table.n_corr)[good], nu[good], bin_width)


# -- fidelity -------------------------------------------------------------------------

X_KEYS = ("x+|H", "x-|V", "x-|H", "x+|V")
Z_KEYS = ("z-|sigma+", "z+|sigma+", "z+|sigma-", "z-|sigma-")


@dataclass
class FidelityBound:
    value: float
    error: float
    joint_elements: dict = field(default_factory=dict)

    @property
    def entangled(self) -> bool:
        return self.value > 0.5


def _prob(v):
    if isinstance(v, (tuple, list, Probability)):
        val, err = v
    else:
        val, err = v, 0.0
    val, err = float(val), float(err)
    if not 0 <= val <= 1:
        raise AnalysisError(f"probability {val} outside [0, 1]")
    return val, err


def fidelity_lower_bound(x_probs: dict, z_probs: dict) -> FidelityBound:
    """Two-basis lower bound on the fidelity with the target Bell state.

    ``x_probs`` maps 'x+|H', 'x-|V', 'x-|H', 'x+|V' and ``z_probs`` maps
    'z-|sigma+', 'z+|sigma+', 'z+|sigma-', 'z-|sigma-' to conditional
    probabilities, optionally as (value, error). Each conditional becomes a
    joint density-matrix element through the photon-outcome probability 1/2.
    """
    missing = [k for k in X_KEYS if k not in x_probs] + [k for k in Z_KEYS if k not in z_probs]
    if missing:
        raise AnalysisError(f"missing conditional probabilities: {missing}")
    rho = {}
    for k in X_KEYS:
        v, e = _prob(x_probs[k])
        rho[k] = (0.5 * v, 0.5 * e)
    for k in Z_KEYS:
        v, e = _prob(z_probs[k])
        rho[k] = (0.5 * v, 0.5 * e)
    (hp, ehp), (vm, evm), (hm, ehm), (vp, evp) = (rho[k] for k in X_KEYS)
    (a, ea), (b, eb), (c, ec), (d, ed) = (rho[k] for k in Z_KEYS)
    root = math.sqrt(hm * vp)
    value = 0.5 * (hp + vm - 2 * root + a - b + c - d)
    # first order; fall back to sqrt(b * sigma_a) when an element is zero
    d_hm = math.sqrt(vp / hm) * ehm if hm > 0 else math.sqrt(vp * ehm)
    d_vp = math.sqrt(hm / vp) * evp if vp > 0 else math.sqrt(hm * evp)
    var = 0.25 * (ehp**2 + evm**2 + d_hm**2 + d_vp**2 + ea**2 + eb**2 + ec**2 + ed**2)
    if value > 1 + 1e-12:
        raise AnalysisError("bound exceeds 1; inputs are inconsistent")
    return FidelityBound(value, math.sqrt(var), {k: v[0] for k, v in rho.items()})


def z_probs_from_contrast(contrast: float, error: float = 0.0) -> dict:
    """Fringe contrast C to P(z-|sigma+) = P(z+|sigma-) = (1 + C)/2."""
    hi, lo = 0.5 * (1 + contrast), 0.5 * (1 - contrast)
    e = 0.5 * error
    return {"z-|sigma+": (hi, e), "z+|sigma+": (lo, e), "z+|sigma-": (hi, e), "z-|sigma-": (lo, e)}


PERFECT_X = {"x+|H": 1.0, "x-|V": 1.0, "x-|H": 0.0, "x+|V": 0.0}


def smeared_contrast(irf: IRF, delta_e: float, n_periods: int = 6, points_per_period: int = 400) -> float:
    """Residual fringe contrast after convolving (1 + sin)/4 with ``irf``."""
    irf.check_normalized()
    period = 2 * math.pi / delta_e
    step = period / points_per_period
    offs, w = irf.kernel(step)
    tau = np.arange(n_periods * points_per_period) * step
    signal = 0.25 * (1 + np.sin(delta_e * (tau[:, None] - offs[None, :]))) @ w
    fit = fringe_fit(tau, signal, delta_e, n_periods=n_periods)
    return fit.contrast


def detector_limited_fidelity(irf: IRF, delta_e: float, assume_perfect_x: bool = True, x_probs: dict | None = None) -> FidelityBound:
    """Fidelity bound attainable when only the detector response limits the z fringes."""
    irf.check_normalized()
    c = smeared_contrast(irf, delta_e)
    if assume_perfect_x:
        x_probs = PERFECT_X
    elif x_probs is None:
        raise AnalysisError("x_probs required when assume_perfect_x is False")
    return fidelity_lower_bound(x_probs, z_probs_from_contrast(c))


def gaussian_smearing_factor(fwhm: float, delta_e: float) -> float:
    s = fwhm / 2.355
    return math.exp(-0.5 * (s * delta_e) ** 2)


def timing_ratio(delta_e: float, resolution: float) -> float:
    """Precession period in units of the detector resolution."""
    return 2 * math.pi / delta_e / resolution
