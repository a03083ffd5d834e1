"""Balancing parameters, combined-signal variance and shot-noise normalization.

Spectra follow numpy's FFT sign convention, X(f) = sum x[n] exp(-2 pi i f n / fs).
With that convention a channel lagging by tau samples picks up
exp(-2 pi i f tau / fs), so the alpha that re-aligns it has phase
+2 pi f tau / fs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from ..fluctuations import db
from .spectral import SpectralEstimate, band_indices, lowpass, segment_spectra
from .traces import TraceSet

__all__ = [
    "CalibrationError",
    "BalanceFit",
    "CombinedVariance",
    "CalibrationCurve",
    "MeasuredNoise",
    "ProcessResult",
    "fit_alpha",
    "fit_beta",
    "combined_variance",
    "fit_calibration",
    "shot_noise_calibration",
    "normalize_to_snl",
    "process",
    "DEFAULT_HALFWIDTH",
    "WEAK_COHERENCE",
]

DEFAULT_HALFWIDTH = 50
WEAK_COHERENCE = 0.01
MAX_CAL_RESIDUAL = 0.05
PHASE_MODELS = ("delay", "constant", "per_bin")
_GRID = 4096
_PHASE_TOL = 1e-6


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class BalanceFit:
    """A fitted balancing coefficient at the analysis frequency ``f0``.

    ``value`` is the coefficient at ``f0``. Its phase at other frequencies
    follows ``phase_model``: 'delay' scales the phase as f/f0, 'constant'
    keeps it fixed and 'per_bin' stores one phase per bin of the band.
    """

    value: complex
    f0: float
    phase_model: str = "delay"
    minimum: float = float("nan")
    coherence: float = float("nan")
    weak: bool = False
    bin_phases: np.ndarray | None = None
    bin_freqs: np.ndarray | None = None

    @property
    def modulus(self) -> float:
        return float(abs(self.value))

    @property
    def phase(self) -> float:
        return float(np.angle(self.value))

    def at(self, freqs) -> np.ndarray:
        f = np.asarray(freqs, float)
        if self.phase_model == "per_bin":
            if self.bin_freqs is None or not np.all(np.isin(f, self.bin_freqs)):
                raise ValueError("per-bin fit only defined on its own bins")
            ph = self.bin_phases[np.searchsorted(self.bin_freqs, f)]
        elif self.phase_model == "delay":
            ph = self.phase * f / self.f0
        else:
            ph = np.full(f.shape, self.phase)
        return self.modulus * np.exp(1j * ph)


def _check_model(model: str) -> None:
    if model not in PHASE_MODELS:
        raise ValueError(f"phase model must be one of {PHASE_MODELS}")


def _fit_phase(X: np.ndarray, Y: np.ndarray, freqs: np.ndarray, f0: float, model: str,
               free_modulus: bool, modulus: float):
    """Minimize mean |X - a e^{i phi(f)} Y|^2 over segments and band bins.

    X, Y are (n_segments, n_bins). Returns (a, phi0 or per-bin phases,
    minimum, coherence).
    """
    cross = np.mean(X * np.conj(Y), axis=0)          # per-bin E[X Y*]
    pxx = np.mean(np.abs(X) ** 2, axis=0)
    pyy = np.mean(np.abs(Y) ** 2, axis=0)
    sxx, syy = float(np.mean(pxx)), float(np.mean(pyy))
    denom = np.sqrt(sxx * syy)
    coherence = float(abs(np.mean(cross)) / denom) if denom > 0 else 0.0
    if model == "delay":
        scale = freqs / f0
    else:
        scale = np.ones_like(freqs)

    def gain(phi0):
        # mean Re(cross * e^{-i phi(f)}): the part of |X - aY|^2 that depends on phase
        return float(np.mean(np.real(cross * np.exp(-1j * phi0 * scale))))

    if model == "per_bin":
        phases = np.angle(cross)
        g = float(np.mean(np.abs(cross)))
    else:
        grid = np.linspace(-np.pi, np.pi, _GRID, endpoint=False)
        vals = np.real(np.exp(-1j * np.outer(grid, scale)) @ cross) / scale.size
        best = grid[int(np.argmax(vals))]
        step = 2 * np.pi / _GRID
        res = minimize_scalar(lambda p: -gain(p), bounds=(best - step, best + step),
                              method="bounded", options={"xatol": _PHASE_TOL})
        phases = float(np.angle(np.exp(1j * res.x)))
        g = gain(phases)
    a = g / syy if free_modulus and syy > 0 else modulus
    minimum = sxx + a * a * syy - 2 * a * g
    return a, phases, float(minimum), coherence


def fit_alpha(est: SpectralEstimate, k: int, f0: float, halfwidth: int = DEFAULT_HALFWIDTH,
              phase_model: str = "delay", free_modulus: bool = False) -> BalanceFit:
    """Balance channel -k against channel k: alpha minimizes |I_k - alpha I_-k|^2.

    The modulus is the DC ratio dc_k/dc_-k unless ``free_modulus`` is set; the
    phase is found by a global grid search on [-pi, pi) refined to 1e-6 rad.
    """
    _check_model(phase_model)
    dk, dm = est.dc_levels[k], est.dc_levels[-k]
    if dk <= 0 or dm <= 0:
        raise ValueError(f"DC level of channel {k if dk <= 0 else -k} must be > 0")
    band = band_indices(est, f0, halfwidth)
    X, Y = est.channel(k)[:, band], est.channel(-k)[:, band]
    freqs = est.freqs[band]
    a, ph, minimum, coh = _fit_phase(X, Y, freqs, f0, phase_model, free_modulus, dk / dm)
    return _make_fit(a, ph, f0, phase_model, minimum, coh, freqs, X.size)


def _is_weak(coherence: float, n_samples: int) -> bool:
    """Coherence below the fixed floor, or statistically indistinguishable from 0.

    For independent channels the estimate itself scatters at ~1/sqrt(n), so a
    value under 3/sqrt(n) carries no usable phase information.
    """
    return coherence < max(WEAK_COHERENCE, 3.0 / np.sqrt(n_samples))


def _make_fit(a, ph, f0, model, minimum, coh, freqs, n_samples) -> BalanceFit:
    weak = _is_weak(coh, n_samples)
    if model == "per_bin":
        c = int(np.argmin(np.abs(freqs - f0)))
        return BalanceFit(complex(a * np.exp(1j * ph[c])), f0, model, minimum, coh, weak,
                          np.asarray(ph), np.asarray(freqs))
    return BalanceFit(complex(a * np.exp(1j * ph)), f0, model, minimum, coh, weak)


def _pair_diff(est: SpectralEstimate, k: int, alpha: BalanceFit, band) -> np.ndarray:
    return est.channel(k)[:, band] - alpha.at(est.freqs[band]) * est.channel(-k)[:, band]


def fit_beta(est: SpectralEstimate, alpha1: BalanceFit, alpha2: BalanceFit, f0: float,
             halfwidth: int = DEFAULT_HALFWIDTH, weights=(1.0, 2.0), phase_model: str = "delay",
             free_modulus: bool = False) -> BalanceFit:
    """Inter-pair coefficient beta minimizing |w1 D1 + w2 beta D2|^2.

    Unit modulus by default; if D2 vanishes identically beta = 1 is returned
    with the weak flag set.
    """
    _check_model(phase_model)
    band = band_indices(est, f0, halfwidth)
    w1, w2 = weights
    D1 = w1 * _pair_diff(est, 1, alpha1, band)
    D2 = w2 * _pair_diff(est, 2, alpha2, band)
    freqs = est.freqs[band]
    if not np.any(D2) or w2 == 0:
        v = float(np.mean(np.abs(D1) ** 2))
        return BalanceFit(1.0 + 0j, f0, "constant", v, 0.0, True)
    # C = D1 - (-beta) D2: reuse the alpha fit with Y = -D2
    a, ph, minimum, coh = _fit_phase(D1, -D2, freqs, f0, phase_model, free_modulus, 1.0)
    return _make_fit(a, ph, f0, phase_model, minimum, coh, freqs, D1.size)


@dataclass(frozen=True)
class CombinedVariance:
    """Band-averaged variances with standard errors across segments."""

    var_c: float
    stderr_c: float
    var_d1: float
    stderr_d1: float
    var_d2: float
    stderr_d2: float


def _mean_err(per_segment: np.ndarray) -> tuple[float, float]:
    n = per_segment.size
    err = float(np.std(per_segment, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(per_segment)), err


def combined_variance(est: SpectralEstimate, alpha1: BalanceFit, alpha2: BalanceFit,
                      beta: BalanceFit, f0: float, halfwidth: int = DEFAULT_HALFWIDTH,
                      weights=(1.0, 2.0)) -> CombinedVariance:
    """Variance of C = w1 (I1 - a1 I-1) + w2 beta (I2 - a2 I-2) around f0."""
    band = band_indices(est, f0, halfwidth)
    w1, w2 = weights
    D1 = _pair_diff(est, 1, alpha1, band)
    D2 = _pair_diff(est, 2, alpha2, band)
    C = w1 * D1 + w2 * beta.at(est.freqs[band]) * D2
    vc = _mean_err(np.mean(np.abs(C) ** 2, axis=1))
    v1 = _mean_err(np.mean(np.abs(D1) ** 2, axis=1))
    v2 = _mean_err(np.mean(np.abs(D2) ** 2, axis=1))
    return CombinedVariance(*vc, *v1, *v2)


# --------------------------------------------------------------------------
# shot-noise calibration


@dataclass(frozen=True)
class CalibrationCurve:
    """Coherent-light variance at the analysis frequency versus DC level."""

    label: int
    slope: float
    dc_levels: np.ndarray
    variances: np.ndarray
    residual_rms: float

    def snl(self, dc: float) -> float:
        return self.slope * dc


def fit_calibration(label: int, dc_levels, variances,
                    max_residual: float = MAX_CAL_RESIDUAL) -> CalibrationCurve:
    """Least-squares line through the origin, rejecting contaminated data."""
    d = np.asarray(dc_levels, float)
    v = np.asarray(variances, float)
    if d.size < 4:
        raise CalibrationError(f"detector {label}: need >= 4 levels")
    if np.any(np.diff(d) <= 0):
        raise CalibrationError(f"detector {label}: power levels must be strictly increasing")
    if np.any(np.diff(v) <= 0):
        raise CalibrationError(f"detector {label}: variance not monotone in power "
                               "(contaminated source)")
    slope = float(d @ v / (d @ d))
    if slope <= 0:
        raise CalibrationError(f"detector {label}: non-positive slope")
    rel = (v - slope * d) / (slope * d)
    rms = float(np.sqrt(np.mean(rel**2)))
    if rms > max_residual:
        raise CalibrationError(f"detector {label}: fit rejected, relative residual RMS "
                               f"{rms:.3g} > {max_residual} (classical noise?)")
    return CalibrationCurve(int(label), slope, d, v, rms)


def shot_noise_calibration(runs, f0: float, halfwidth: int = DEFAULT_HALFWIDTH,
                           f_max: float | None = None,
                           max_residual: float = MAX_CAL_RESIDUAL) -> dict[int, CalibrationCurve]:
    """Calibrate every detector from coherent-light runs at increasing power.

    ``runs`` is a sequence of TraceSets (or SpectralEstimates) with each
    detector under a coherent beam; the DC level of a channel in a run is the
    power at which its variance around ``f0`` is measured.
    """
    runs = list(runs)
    if len(runs) < 4:
        raise CalibrationError("need >= 4 levels")
    ests = [r if isinstance(r, SpectralEstimate)
            else segment_spectra(r, f_max or 2 * f0 + 1e6) for r in runs]
    curves = {}
    for label in ests[0].labels:
        band = [band_indices(e, f0, halfwidth) for e in ests]
        dc = [e.dc_levels[label] for e in ests]
        var = [float(np.mean(np.abs(e.channel(label)[:, b]) ** 2)) for e, b in zip(ests, band)]
        order = np.argsort(dc, kind="stable")
        curves[label] = fit_calibration(label, np.array(dc)[order], np.array(var)[order],
                                        max_residual)
    return curves


# --------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class MeasuredNoise:
    label: str
    variance: float
    stderr: float
    snl: float

    @property
    def normalized(self) -> float:
        return self.variance / self.snl

    @property
    def db(self) -> float:
        return float(db(self.normalized))

    @property
    def db_err(self) -> float:
        """First-order propagation of the standard error into dB."""
        return float(10 / np.log(10) * self.stderr / self.variance)


def _detector_snl(calibration: dict[int, CalibrationCurve], dc_levels, label: int) -> float:
    if label not in calibration:
        raise CalibrationError(f"missing calibration for detector {label:+d}")
    return calibration[label].snl(dc_levels[label])


def pair_snl(calibration, dc_levels, k: int, alpha: complex | BalanceFit) -> float:
    """Coherent level of I_k - alpha I_-k: SNL_k + |alpha|^2 SNL_-k."""
    a = alpha.modulus if isinstance(alpha, BalanceFit) else abs(alpha)
    return _detector_snl(calibration, dc_levels, k) + a * a * _detector_snl(calibration,
                                                                            dc_levels, -k)


def normalize_to_snl(variance: float, dc_levels: dict[int, float],
                     calibration: dict[int, CalibrationCurve], kind: str | int = "C",
                     alphas=(1.0, 1.0), beta: complex | BalanceFit = 1.0,
                     weights=(1.0, 2.0), stderr: float = float("nan")) -> MeasuredNoise:
    """Normalize a pair variance (``kind`` = 1 or 2) or the combined one ('C')."""
    a = [x.modulus if isinstance(x, BalanceFit) else abs(x) for x in alphas]
    if kind == "C":
        b = beta.modulus if isinstance(beta, BalanceFit) else abs(beta)
        w1, w2 = weights
        snl = w1**2 * pair_snl(calibration, dc_levels, 1, a[0]) \
            + w2**2 * b**2 * pair_snl(calibration, dc_levels, 2, a[1])
        label = "C"
    else:
        k = int(kind)
        if k not in (1, 2):
            raise ValueError("pair index must be 1 or 2")
        snl = pair_snl(calibration, dc_levels, k, a[k - 1])
        label = f"D{k}"
    return MeasuredNoise(label, float(variance), float(stderr), float(snl))


# --------------------------------------------------------------------------
# pipeline


@dataclass
class ProcessResult:
    alpha1: BalanceFit
    alpha2: BalanceFit
    beta: BalanceFit
    d1: MeasuredNoise
    d2: MeasuredNoise
    c: MeasuredNoise
    spectrum_rows: list[dict] = field(default_factory=list)

    def report(self) -> dict:
        out = {}
        for name, fit in (("alpha1", self.alpha1), ("alpha2", self.alpha2), ("beta", self.beta)):
            out[f"{name}_abs"] = fit.modulus
            out[f"{name}_arg"] = fit.phase
            out[f"{name}_weak"] = fit.weak
        for m in (self.d1, self.d2, self.c):
            out[f"{m.label}_dB"] = m.db
            out[f"{m.label}_dB_err"] = m.db_err
            out[f"{m.label}_var"] = m.variance
            out[f"{m.label}_snl"] = m.snl
        return out


def process(traces: TraceSet | SpectralEstimate, calibration: dict[int, CalibrationCurve],
            f0: float = 4e6, halfwidth: int = DEFAULT_HALFWIDTH,
            lowpass_hz: float | None = None, f_max: float | None = None,
            phase_model: str = "delay", free_modulus: bool = False,
            weights=(1.0, 2.0)) -> ProcessResult:
    """Full chain: optional low-pass, spectra, alpha/beta fits, normalized variances.

    Fits are made around ``f0`` and reused at other frequencies for the
    variance-versus-frequency table (one row per block of 2*halfwidth+1 bins).
    """
    for label in (1, -1, 2, -2):
        if label not in calibration:
            raise CalibrationError(f"missing calibration for detector {label:+d}")
    if isinstance(traces, SpectralEstimate):
        est = traces
    else:
        top = f_max or max(2 * f0, lowpass_hz or 0) + 1e6
        traces.check_band(top)
        if lowpass_hz:
            traces = lowpass(traces, lowpass_hz)
        est = segment_spectra(traces, top)
    a1 = fit_alpha(est, 1, f0, halfwidth, phase_model, free_modulus)
    a2 = fit_alpha(est, 2, f0, halfwidth, phase_model, free_modulus)
    b = fit_beta(est, a1, a2, f0, halfwidth, weights, phase_model, free_modulus)
    cv = combined_variance(est, a1, a2, b, f0, halfwidth, weights)
    dc = est.dc_levels
    d1 = normalize_to_snl(cv.var_d1, dc, calibration, 1, (a1, a2), stderr=cv.stderr_d1)
    d2 = normalize_to_snl(cv.var_d2, dc, calibration, 2, (a1, a2), stderr=cv.stderr_d2)
    c = normalize_to_snl(cv.var_c, dc, calibration, "C", (a1, a2), b, weights, cv.stderr_c)
    rows = []
    if phase_model != "per_bin":
        width = 2 * halfwidth + 1
        for centre in range(halfwidth + 1, est.freqs.size - halfwidth, width):
            fc = float(est.freqs[centre])
            v = combined_variance(est, a1, a2, b, fc, halfwidth, weights)
            nd1 = normalize_to_snl(v.var_d1, dc, calibration, 1, (a1, a2))
            nd2 = normalize_to_snl(v.var_d2, dc, calibration, 2, (a1, a2))
            nc = normalize_to_snl(v.var_c, dc, calibration, "C", (a1, a2), b, weights)
            rows.append({"freq_Hz": fc, "D1_dB": nd1.db, "D2_dB": nd2.db, "C_dB": nc.db,
                         "C_stderr": v.stderr_c / nc.snl})
    return ProcessResult(a1, a2, b, d1, d2, c, rows)
