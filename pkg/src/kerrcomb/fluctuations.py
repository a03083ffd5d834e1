"""Linearized quantum noise of the comb output.

Quadratures are ``x = da + da^†`` and ``p = -i(da - da^†)``, so vacuum has unit
variance and the spectral matrices below are normalized to the shot-noise level
of each quadrature. Intensity observables are linearized as
``dn_k = |A_out,k| * x_k(theta_k)`` with ``theta_k = arg(A_out,k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ClassicalState, rhs_jacobian
from .params import SystemParams
from .steady import stability_eigenvalues

__all__ = [
    "DarkModeError",
    "UnstableStateError",
    "NoiseSpectrum",
    "NoiseReport",
    "Decomposition",
    "drift_matrix",
    "output_amplitudes",
    "output_spectrum",
    "amplitude_selector",
    "intensity_covariance",
    "intensity_diff_noise",
    "carlos_noise",
    "variance_decomposition",
    "decompose_covariance",
    "apply_detection_chain",
    "remove_electronic_noise",
    "db",
]

DARK_FRACTION = 1e-12


class DarkModeError(ValueError):
    """An output mode is too dim for its shot-noise level to be meaningful."""


class UnstableStateError(ValueError):
    pass


def db(ratio):
    return 10.0 * np.log10(ratio)


@dataclass(frozen=True)
class NoiseSpectrum:
    """Symmetrized output quadrature spectrum at one analysis frequency.

    ``S`` is real symmetric, ordered (x_-M, p_-M, ..., x_M, p_M); vacuum is the
    identity.
    """

    S: np.ndarray
    omega: float

    @property
    def M(self) -> int:
        return (self.S.shape[0] // 2 - 1) // 2


@dataclass(frozen=True)
class NoiseReport:
    label: str
    raw: float
    snl: float
    snl_definition: str = ""

    @property
    def normalized(self) -> float:
        return self.raw / self.snl

    @property
    def db(self) -> float:
        return float(db(self.normalized))


@dataclass(frozen=True)
class Decomposition:
    """Var(C) split into symmetric-pair and cross-pair parts (raw flux units).

    ``cov_mp`` excludes the k = -l terms, which makes
    ``var_c == var_bp + cov_mp`` an identity; ``cov_mp_all_pairs`` is the
    sum over every k != l for comparison.
    """

    var_c: float
    var_bp: float
    cov_mp: float
    cov_mp_all_pairs: float
    snl: float

    @property
    def residual(self) -> float:
        return abs(self.var_c - self.var_bp - self.cov_mp)

    def normalized(self) -> "Decomposition":
        s = self.snl
        return Decomposition(self.var_c / s, self.var_bp / s, self.cov_mp / s,
                             self.cov_mp_all_pairs / s, 1.0)


def drift_matrix(params: SystemParams, state: ClassicalState) -> np.ndarray:
    """Drift matrix of the quadrature fluctuations around ``state``."""
    return rhs_jacobian(params, state)


def output_amplitudes(params: SystemParams, state: ClassicalState) -> np.ndarray:
    """Output field amplitudes sqrt(kappa_ext) A (minus the reflected pump)."""
    A_out = np.sqrt(params.kappa_ext) * state.A
    A_out[params.M] -= params.drive_amplitude(state.pump_power)
    return A_out


def output_spectrum(params: SystemParams, state: ClassicalState, omega: float,
                    check_stability: bool = True) -> NoiseSpectrum:
    """Symmetrized output quadrature spectral matrix at angular frequency omega.

    Every input port (coupling and intrinsic loss) carries vacuum; the ±omega
    sidebands are combined so the result is real symmetric.
    """
    if not omega > 0:
        raise ValueError("analysis frequency must be > 0 (phase diffusion diverges at 0)")
    if check_stability and not stability_eigenvalues(params, state).stable:
        raise UnstableStateError("unstable state: no stationary spectrum")
    drift = drift_matrix(params, state)
    n2 = drift.shape[0]
    k_ext = np.repeat(np.sqrt(params.kappa_ext), 2)
    k_int = np.repeat(np.sqrt(params.kappa_int), 2)
    T = np.linalg.inv(1j * omega * np.eye(n2) - drift)
    G_in = k_ext[:, None] * T * k_ext[None, :] - np.eye(n2)
    G_loss = k_ext[:, None] * T * k_int[None, :]
    S = G_in @ G_in.conj().T + G_loss @ G_loss.conj().T
    S = S.real
    return NoiseSpectrum(0.5 * (S + S.T), float(omega))


def amplitude_selector(params: SystemParams, state: ClassicalState, k: int) -> np.ndarray:
    """Vector u with u·v = dn_k for the quadrature fluctuation vector v."""
    A_out = output_amplitudes(params, state)[params.index(k)]
    u = np.zeros(2 * params.n_modes)
    i = params.index(k)
    u[2 * i] = abs(A_out) * np.cos(np.angle(A_out))
    u[2 * i + 1] = abs(A_out) * np.sin(np.angle(A_out))
    return u


def _check_bright(params: SystemParams, state: ClassicalState, modes) -> None:
    flux = np.abs(output_amplitudes(params, state)) ** 2
    ref = params.photon_flux(state.pump_power)
    for k in modes:
        if flux[params.index(k)] < DARK_FRACTION * ref or flux[params.index(k)] == 0:
            raise DarkModeError(f"dark mode {k}: output flux {flux[params.index(k)]:.3g}")


def intensity_covariance(params: SystemParams, state: ClassicalState,
                         spectrum: NoiseSpectrum, modes) -> np.ndarray:
    """Cov(n_k, n_l) of the output photon fluxes for ``modes`` (raw units)."""
    U = np.array([amplitude_selector(params, state, k) for k in modes])
    return U @ spectrum.S @ U.T


def intensity_diff_noise(params: SystemParams, state: ClassicalState,
                         spectrum: NoiseSpectrum, k: int) -> NoiseReport:
    """Noise of n_k - n_-k relative to the shot noise of the two beams."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_bright(params, state, (k, -k))
    u = amplitude_selector(params, state, k) - amplitude_selector(params, state, -k)
    raw = float(u @ spectrum.S @ u)
    flux = np.abs(output_amplitudes(params, state)) ** 2
    snl = float(flux[params.index(k)] + flux[params.index(-k)])
    return NoiseReport(f"n{k}-n{-k}", raw, snl, "|A_out,k|^2 + |A_out,-k|^2")


def _carlos_modes(params: SystemParams, M_meas: int) -> list[int]:
    if not 1 <= M_meas <= params.M:
        raise ValueError(f"M_meas must lie in [1, {params.M}]")
    return [k for k in range(-M_meas, M_meas + 1) if k != 0]


def carlos_noise(params: SystemParams, state: ClassicalState, spectrum: NoiseSpectrum,
                 M_meas: int) -> NoiseReport:
    """Noise of sum_k k n_k over |k| <= M_meas, relative to its coherent level."""
    modes = _carlos_modes(params, M_meas)
    _check_bright(params, state, modes)
    w = np.array(modes, float)
    cov = intensity_covariance(params, state, spectrum, modes)
    flux = np.abs(output_amplitudes(params, state)) ** 2
    snl = float(sum(k * k * flux[params.index(k)] for k in modes))
    return NoiseReport(f"C(M={M_meas})", float(w @ cov @ w), snl, "sum_k k^2 |A_out,k|^2")


def decompose_covariance(cov: np.ndarray, modes, snl: float = 1.0) -> Decomposition:
    """Split w^T cov w (w_k = k) into symmetric-pair and cross-pair sums.

    ``cov`` is the covariance of n_k for the listed ``modes`` (k = 0 may be
    present, it carries zero weight).
    """
    modes = list(modes)
    pos = {k: i for i, k in enumerate(modes)}
    w = np.array(modes, float)
    var_c = float(w @ cov @ w)
    var_bp = 0.0
    for k in modes:
        if k > 0:
            i, j = pos[k], pos[-k]
            var_bp += k * k * (cov[i, i] + cov[j, j] - 2 * cov[i, j])
    cov_mp = cov_all = 0.0
    for k in modes:
        for l in modes:
            if k == l:
                continue
            term = k * l * cov[pos[k], pos[l]]
            cov_all += term
            if k != -l:
                cov_mp += term
    return Decomposition(var_c, float(var_bp), float(cov_mp), float(cov_all), snl)


def variance_decomposition(params: SystemParams, state: ClassicalState,
                           spectrum: NoiseSpectrum, M_meas: int) -> Decomposition:
    modes = _carlos_modes(params, M_meas)
    _check_bright(params, state, modes)
    cov = intensity_covariance(params, state, spectrum, modes)
    flux = np.abs(output_amplitudes(params, state)) ** 2
    snl = float(sum(k * k * flux[params.index(k)] for k in modes))
    return decompose_covariance(cov, modes, snl)


def _check_eta(eta: float, electronic_noise_rel: float) -> None:
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if electronic_noise_rel < 0:
        raise ValueError("electronic noise must be >= 0")


def apply_detection_chain(x, eta: float, electronic_noise_rel: float = 0.0):
    """Beam-splitter loss plus additive electronic noise.

    For a :class:`NoiseReport` the normalized variance becomes
    ``eta*V + (1 - eta) + e``; for a :class:`NoiseSpectrum` the same map is
    applied to the quadrature matrix, which is equivalent for every intensity
    selector.
    """
    _check_eta(eta, electronic_noise_rel)
    if isinstance(x, NoiseSpectrum):
        n = x.S.shape[0]
        return NoiseSpectrum(eta * x.S + (1 - eta + electronic_noise_rel) * np.eye(n), x.omega)
    v = eta * x.normalized + (1 - eta) + electronic_noise_rel
    return NoiseReport(x.label, v * x.snl, x.snl, x.snl_definition)


def remove_electronic_noise(report: NoiseReport, electronic_noise_rel: float) -> NoiseReport:
    """Subtract the electronic floor only; losses stay in (no efficiency correction)."""
    if electronic_noise_rel < 0:
        raise ValueError("electronic noise must be >= 0")
    v = report.normalized - electronic_noise_rel
    return NoiseReport(report.label, v * report.snl, report.snl, report.snl_definition)
