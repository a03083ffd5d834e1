"""Low-pass filtering and segmented FFT noise estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .traces import TraceSet

__all__ = ["FIRFilter", "design_lowpass", "lowpass", "SpectralEstimate", "segment_spectra",
           "band_indices"]


@dataclass(frozen=True)
class FIRFilter:
    taps: np.ndarray
    cutoff: float
    sample_rate: float

    @property
    def group_delay(self) -> int:
        """Delay in samples of the (symmetric, odd-length) filter."""
        return (self.taps.size - 1) // 2

    def response(self, freqs) -> np.ndarray:
        _, h = signal.freqz(self.taps, worN=np.asarray(freqs, float), fs=self.sample_rate)
        return h


def design_lowpass(cutoff: float, sample_rate: float, attenuation_db: float = 60.0
                   ) -> FIRFilter:
    """Kaiser-window linear-phase FIR: flat below 0.8*cutoff, stopband from 1.5*cutoff.

    60 dB of stopband attenuation puts the Kaiser passband ripple near 0.01 dB,
    well inside the 0.1 dB budget.
    """
    nyq = 0.5 * sample_rate
    if not 0 < cutoff < nyq:
        raise ValueError("cutoff must lie below the Nyquist frequency")
    edge_pass, edge_stop = 0.8 * cutoff, min(1.5 * cutoff, nyq)
    numtaps, beta = signal.kaiserord(attenuation_db, (edge_stop - edge_pass) / nyq)
    numtaps |= 1
    taps = signal.firwin(numtaps, 0.5 * (edge_pass + edge_stop), window=("kaiser", beta),
                         fs=sample_rate)
    return FIRFilter(taps, cutoff, sample_rate)


def _filter_rows(x: np.ndarray, fir: FIRFilter) -> np.ndarray:
    """Circularly filter each row with the group delay removed.

    Each row is one disjoint record, which the segment FFT treats as periodic;
    circular filtering keeps that model exact, while linear convolution would
    add edge transients that do not cancel between mismatched channels.
    """
    n = x.shape[-1]
    if fir.taps.size > n:
        raise ValueError(f"segment of {n} samples shorter than the {fir.taps.size}-tap filter")
    f = np.fft.rfftfreq(n)
    H = np.fft.rfft(fir.taps, n) * np.exp(2j * np.pi * f * fir.group_delay)
    return np.fft.irfft(np.fft.rfft(x, axis=-1) * H, n, axis=-1)


def lowpass(traces: TraceSet | np.ndarray, cutoff: float, sample_rate: float | None = None,
            attenuation_db: float = 60.0):
    """Low-pass every channel, segment by segment (each acquisition is separate).

    Accepts a :class:`TraceSet` (returns a new one) or a plain array whose last
    axis is one record, with ``sample_rate`` given (returns the filtered
    array). The group delay is compensated so channels stay aligned.
    """
    if isinstance(traces, TraceSet):
        acq = traces.acquisition
        fir = design_lowpass(cutoff, acq.sample_rate, attenuation_db)
        out = np.empty_like(traces.data)
        L = acq.segment_length
        for s in range(acq.n_segments):
            seg = traces.data[:, s * L:(s + 1) * L].astype(np.float64)
            out[:, s * L:(s + 1) * L] = _filter_rows(seg, fir)
        return TraceSet(out, acq, traces.dc_levels, traces.labels,
                        {**traces.meta, "lowpass_hz": cutoff, "group_delay": fir.group_delay})
    if sample_rate is None:
        raise ValueError("sample_rate required for raw arrays")
    fir = design_lowpass(cutoff, sample_rate, attenuation_db)
    return _filter_rows(np.asarray(traces, float), fir)


@dataclass
class SpectralEstimate:
    """Per-segment unitary FFTs of each channel over a kept band of bins.

    ``spectra[c, s, b]`` is bin ``b`` of segment ``s`` of channel ``labels[c]``
    normalized so that E|X|^2 equals the per-sample variance of white noise.
    ``time_power`` and ``spectral_power`` hold, per channel and segment, the
    mean square in time and the same quantity from the full spectrum.
    """

    freqs: np.ndarray
    spectra: np.ndarray
    labels: tuple[int, ...]
    dc_levels: dict[int, float]
    sample_rate: float
    segment_length: int
    time_power: np.ndarray
    spectral_power: np.ndarray

    @property
    def n_segments(self) -> int:
        return self.spectra.shape[1]

    @property
    def resolution(self) -> float:
        return self.sample_rate / self.segment_length

    def channel(self, label: int) -> np.ndarray:
        return self.spectra[self.labels.index(label)]

    @property
    def variance(self) -> np.ndarray:
        """Segment-averaged |X|^2 per channel and bin."""
        return np.mean(np.abs(self.spectra) ** 2, axis=1)

    @property
    def stderr(self) -> np.ndarray:
        p = np.abs(self.spectra) ** 2
        return np.std(p, axis=1, ddof=1) / np.sqrt(p.shape[1]) if p.shape[1] > 1 \
            else np.full(p.shape[::2], np.nan)

    @property
    def parseval_error(self) -> np.ndarray:
        return np.abs(self.spectral_power - self.time_power) / self.time_power


def segment_spectra(traces: TraceSet, f_max: float | None = None,
                    window: str = "boxcar") -> SpectralEstimate:
    """Disjoint-segment FFTs (no overlap), keeping bins up to ``f_max``.

    The window is power-normalized so white-noise levels do not depend on it.
    """
    acq = traces.acquisition
    N = acq.segment_length
    if N < 16:
        raise ValueError("segment length shorter than 16 samples")
    freqs = acq.frequencies
    n_keep = freqs.size if f_max is None else int(np.searchsorted(freqs, f_max, "right"))
    win = signal.get_window(window, N, fftbins=True)
    win = win / np.sqrt(np.mean(win**2))
    n_ch = len(traces.labels)
    spectra = np.empty((n_ch, acq.n_segments, n_keep), complex)
    t_pow = np.empty((n_ch, acq.n_segments))
    f_pow = np.empty((n_ch, acq.n_segments))
    # full-band rfft weights for Parseval: interior bins count twice
    w = np.full(freqs.size, 2.0)
    w[0] = 1.0
    if N % 2 == 0:
        w[-1] = 1.0
    for s in range(acq.n_segments):
        seg = traces.data[:, s * N:(s + 1) * N].astype(np.float64) * win
        X = np.fft.rfft(seg, axis=-1) / np.sqrt(N)
        spectra[:, s, :] = X[:, :n_keep]
        t_pow[:, s] = np.mean(seg**2, axis=-1)
        f_pow[:, s] = (np.abs(X) ** 2 @ w) / N
    return SpectralEstimate(freqs[:n_keep], spectra, traces.labels, dict(traces.dc_levels),
                            acq.sample_rate, N, t_pow, f_pow)


def band_indices(est: SpectralEstimate, f0: float, halfwidth: int) -> np.ndarray:
    """Bins within ``halfwidth`` of the bin nearest ``f0``."""
    c = int(round(f0 / est.resolution))
    lo, hi = c - halfwidth, c + halfwidth
    if lo < 1 or hi >= est.freqs.size:
        raise ValueError(f"analysis band around {f0} Hz falls outside the kept spectrum")
    return np.arange(lo, hi + 1)
