"""Photocurrent records: container, file formats and a synthetic generator."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CHANNELS",
    "Acquisition",
    "TraceSet",
    "TraceFormatError",
    "synthesize_traces",
    "design_intensity_covariance",
    "covariance_from_noise",
    "write_traces",
    "read_traces",
    "write_csv",
    "read_csv",
]

CHANNELS = (1, -1, 2, -2)
MAGIC = b"KCTRACE1\n"


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Acquisition:
    """Oscilloscope settings: 50 disjoint 100 us records at 5 GS/s by default."""

    sample_rate: float = 5e9
    segment_length: int = 500_000
    n_segments: int = 50

    def __post_init__(self):
        if self.segment_length < 16:
            raise ValueError("segment length shorter than 16 samples")
        if self.n_segments < 1 or self.sample_rate <= 0:
            raise ValueError("need n_segments >= 1 and sample_rate > 0")

    @property
    def n_samples(self) -> int:
        return self.segment_length * self.n_segments

    @property
    def frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.segment_length, 1.0 / self.sample_rate)


@dataclass
class TraceSet:
    """AC photocurrent samples, one row per channel, plus DC levels.

    ``data`` has shape (n_channels, segment_length * n_segments); segment ``s``
    occupies samples ``[s*L, (s+1)*L)``.
    """

    data: np.ndarray
    acquisition: Acquisition
    dc_levels: dict[int, float]
    labels: tuple[int, ...] = CHANNELS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[0] != len(self.labels):
            raise ValueError("data must be (n_channels, n_samples) matching labels")
        if self.data.shape[1] != self.acquisition.n_samples:
            raise ValueError("channel length must equal segment_length * n_segments")
        self.dc_levels = {int(k): float(v) for k, v in self.dc_levels.items()}
        if set(self.dc_levels) != set(self.labels):
            raise ValueError("one DC level per channel required")

    def channel(self, label: int) -> np.ndarray:
        return self.data[self.labels.index(label)]

    def segments(self, label: int) -> np.ndarray:
        """View of one channel as (n_segments, segment_length)."""
        acq = self.acquisition
        return self.channel(label).reshape(acq.n_segments, acq.segment_length)

    def check_band(self, f_max: float) -> None:
        if self.acquisition.sample_rate <= 2 * f_max:
            raise ValueError(f"sample rate must exceed twice the analysis band ({f_max} Hz)")


def _as_target(target, freqs: np.ndarray, n_ch: int) -> np.ndarray:
    """Target as a constant (n_ch, n_ch) matrix or an (n_freq, n_ch, n_ch) array."""
    S = np.asarray(target(freqs) if callable(target) else target, complex)
    if S.shape != (n_ch, n_ch) and S.shape != (freqs.size, n_ch, n_ch):
        raise ValueError(f"target spectrum must be ({n_ch},{n_ch}) or (n_freq,{n_ch},{n_ch})")
    return S


def _matrix_sqrt(S: np.ndarray) -> np.ndarray:
    """L with L L^† = S for each Hermitian PSD slice; raises on non-PSD input."""
    herm = np.max(np.abs(S - np.conj(np.swapaxes(S, -1, -2))))
    scale = np.max(np.abs(S)) if S.size else 1.0
    if herm > 1e-10 * max(scale, 1e-300):
        raise ValueError("target spectrum is not Hermitian")
    w, V = np.linalg.eigh(S)
    if np.min(w) < -1e-10 * max(scale, 1e-300):
        raise ValueError("target spectrum is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0, None))[..., None, :]


def synthesize_traces(target, dc_levels: dict[int, float], acquisition: Acquisition = Acquisition(),
                      seed: int = 0, delays: dict[int, float] | None = None,
                      labels: tuple[int, ...] = CHANNELS) -> TraceSet:
    """Stationary Gaussian channels with a prescribed cross-spectral matrix.

    ``target`` gives E[X_i X_j^*] per rfft bin for unitary-normalized segment
    FFTs (so a white channel of variance s has target s). It may be a constant
    (n, n) matrix, an array (n_freq, n, n) on the rfft grid, or a callable of
    the frequency grid. Each segment is colored in the frequency domain;
    ``delays`` (samples, fractional allowed) shifts channels later in time.
    The DC bin is left empty, as on an AC-coupled detector.
    """
    acq = acquisition
    n_ch = len(labels)
    N = acq.segment_length
    freqs = acq.frequencies
    L = _matrix_sqrt(_as_target(target, freqs, n_ch))
    constant = L.ndim == 2
    phase = np.ones((n_ch, freqs.size), complex)
    for label, tau in (delays or {}).items():
        phase[labels.index(label)] = np.exp(-2j * np.pi * freqs * tau / acq.sample_rate)
    rng = np.random.default_rng(seed)
    data = np.empty((n_ch, acq.n_samples), dtype=np.float32)
    nyq = N % 2 == 0
    for s in range(acq.n_segments):
        z = (rng.standard_normal((freqs.size, n_ch))
             + 1j * rng.standard_normal((freqs.size, n_ch))) / np.sqrt(2)
        if nyq:
            z[-1] = rng.standard_normal(n_ch)
        X = z @ L.T if constant else np.einsum("fij,fj->fi", L, z)
        X[0] = 0.0
        X = X.T * phase
        data[:, s * N:(s + 1) * N] = np.fft.irfft(X * np.sqrt(N), n=N, axis=-1)
    return TraceSet(data, acq, dict(dc_levels), tuple(labels), {"seed": seed})


def design_intensity_covariance(snl: dict[int, float], dc_levels: dict[int, float],
                                pair_ratio: tuple[float, float], c_ratio: float,
                                excess: float = 1.0, weights: tuple[float, float] = (1.0, 2.0)
                                ) -> np.ndarray:
    """Channel covariance (labels +1,-1,+2,-2) hitting prescribed normalized noises.

    ``snl`` is each detector's coherent-light variance at its DC level. The
    result makes Var(I_k - alpha_k I_-k) equal ``pair_ratio[k-1]`` times its
    shot-noise level (alpha_k being the DC ratio) and the weighted combination
    equal ``c_ratio`` times its level. The orthogonal (sum) direction of each
    pair carries ``1 + excess`` shot-noise units.
    """
    idx = {k: i for i, k in enumerate(CHANNELS)}
    root = np.array([np.sqrt(snl[k]) for k in CHANNELS])
    d, s, snl_pair = [], [], []
    for k in (1, 2):
        alpha = dc_levels[k] / dc_levels[-k]
        v = np.zeros(4)
        v[idx[k]] = root[idx[k]]
        v[idx[-k]] = -alpha * root[idx[-k]]
        snl_pair.append(v @ v)
        v = v / np.linalg.norm(v)
        u = np.zeros(4)
        u[idx[k]], u[idx[-k]] = -v[idx[-k]], v[idx[k]]
        d.append(v)
        s.append(u)
    r1, r2 = pair_ratio
    w1, w2 = weights
    snl_c = w1**2 * snl_pair[0] + w2**2 * snl_pair[1]
    rho = (c_ratio * snl_c - w1**2 * snl_pair[0] * r1 - w2**2 * snl_pair[1] * r2) \
        / (2 * w1 * w2 * np.sqrt(snl_pair[0] * snl_pair[1]))
    if rho**2 > r1 * r2:
        raise ValueError("requested noise levels are not jointly realizable")
    D = np.column_stack(d)
    K = (1 + excess) * (np.outer(s[0], s[0]) + np.outer(s[1], s[1])) \
        + D @ np.array([[r1, rho], [rho, r2]]) @ D.T
    return root[:, None] * K * root[None, :]


def covariance_from_noise(cov_flux: np.ndarray, flux: np.ndarray, snl: np.ndarray) -> np.ndarray:
    """Map photon-flux covariances to photocurrent covariances.

    ``cov_flux`` is Cov(n_k, n_l) for the channels, ``flux`` the mean photon
    fluxes (their shot-noise levels) and ``snl`` each detector's coherent-light
    variance at its DC level.
    """
    norm = np.sqrt(np.outer(flux, flux))
    return np.sqrt(np.outer(snl, snl)) * cov_flux / norm


# --------------------------------------------------------------------------
# file formats


def _header(ts: TraceSet) -> dict:
    acq = ts.acquisition
    return {
        "labels": list(ts.labels),
        "sample_rate": acq.sample_rate,
        "segment_length": acq.segment_length,
        "n_segments": acq.n_segments,
        "dc_levels": {str(k): v for k, v in ts.dc_levels.items()},
        "dtype": "<f4",
        "meta": ts.meta,
    }


def _from_header(head: dict, data: np.ndarray) -> TraceSet:
    acq = Acquisition(float(head["sample_rate"]), int(head["segment_length"]),
                      int(head["n_segments"]))
    labels = tuple(int(k) for k in head["labels"])
    dc = {int(k): float(v) for k, v in head["dc_levels"].items()}
    return TraceSet(data, acq, dc, labels, dict(head.get("meta", {})))


def write_traces(path, ts: TraceSet) -> None:
    """Binary container: magic line, one JSON header line, then '<f4' samples
    channel after channel."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(_header(ts)).encode() + b"\n")
        fh.write(np.ascontiguousarray(ts.data, dtype="<f4").tobytes())


def read_traces(path) -> TraceSet:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise TraceFormatError(f"{path}: not a trace container")
        head = json.loads(fh.readline())
        raw = np.frombuffer(fh.read(), dtype="<f4")
    n_ch = len(head["labels"])
    n = int(head["segment_length"]) * int(head["n_segments"])
    if raw.size != n_ch * n:
        raise TraceFormatError(f"{path}: expected {n_ch * n} samples, found {raw.size}")
    return _from_header(head, raw.reshape(n_ch, n).astype(np.float32))


def write_csv(path, ts: TraceSet) -> None:
    """CSV with ``# key=value`` metadata lines, a label row, one row per sample."""
    head = _header(ts)
    with open(path, "w", newline="") as fh:
        for key in ("sample_rate", "segment_length", "n_segments"):
            fh.write(f"# {key}={head[key]}\n")
        fh.write("# dc_levels=" + json.dumps(head["dc_levels"]) + "\n")
        w = csv.writer(fh)
        w.writerow(ts.labels)
        # repr of float32 values round-trips exactly
        for row in ts.data.T:
            w.writerow([repr(float(x)) for x in row])


def read_csv(path, sample_rate: float | None = None, segment_length: int | None = None,
             n_segments: int | None = None, dc_levels: dict[int, float] | None = None) -> TraceSet:
    """Import a CSV export; keyword arguments override or supply metadata."""
    meta: dict = {}
    lines = Path(path).read_text().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(io.StringIO("\n".join(body))))
    labels = tuple(int(x) for x in rows[0])
    data = np.array(rows[1:], dtype=float).T.astype(np.float32)
    head = {
        "labels": labels,
        "sample_rate": sample_rate or float(meta.get("sample_rate", "nan")),
        "segment_length": segment_length or int(meta.get("segment_length", data.shape[1])),
        "n_segments": n_segments or int(meta.get("n_segments", 1)),
        "dc_levels": dc_levels or json.loads(meta.get("dc_levels", "{}")),
    }
    if not np.isfinite(head["sample_rate"]):
        raise TraceFormatError(f"{path}: sample_rate missing")
    return _from_header(head, data)
