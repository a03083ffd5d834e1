"""System parameters of the (2M+1)-mode Kerr resonator model.

All rates are angular (rad/s). Mode ``k`` lives at array index ``k + M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import constants

__all__ = [
    "ParameterError",
    "SystemParams",
    "default_params",
    "validate_params",
    "dispersion_detuning",
]

LINEWIDTH_HZ = 630e6
PUMP_WAVELENGTH = 1560.053e-9
FSR_HZ = 200e9  # informational only; the rotating-frame model never uses it


class ParameterError(ValueError):
    """Raised when a parameter set violates a model invariant.

    ``name`` is the offending field, so callers (e.g. the CLI) can point at the
    configuration key.
    """

    def __init__(self, name: str, message: str):
        super().__init__(f"{name}: {message}")
        self.name = name


def dispersion_detuning(M: int, delta0: float, D2: float) -> np.ndarray:
    """Per-mode detuning ``delta0 + D2/2 * k**2`` for ``k = -M..M``."""
    k = np.arange(-M, M + 1)
    return delta0 + 0.5 * D2 * k.astype(float) ** 2


@dataclass(frozen=True)
class SystemParams:
    M: int
    kappa_total: np.ndarray
    kappa_ext: np.ndarray
    detuning: np.ndarray
    g: float
    pump_power: float = 0.0
    eta_F: float = 0.90
    eta_g: float = 0.94
    eta_opt: float = 0.97
    eta_pd: float = 0.88
    electronic_noise_rel: float = 0.0
    pump_wavelength: float = PUMP_WAVELENGTH

    def __post_init__(self):
        n = 2 * self.M + 1 if isinstance(self.M, (int, np.integer)) and self.M >= 0 else 1
        for name in ("kappa_total", "kappa_ext", "detuning"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.ndim == 0:
                value = np.full(n, float(value))
            value = value.copy()
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_modes(self) -> int:
        return 2 * self.M + 1

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def index(self, k: int) -> int:
        if abs(k) > self.M:
            raise IndexError(f"mode {k} outside [-{self.M}, {self.M}]")
        return k + self.M

    @property
    def kappa_int(self) -> np.ndarray:
        return self.kappa_total - self.kappa_ext

    @property
    def kappa_ref(self) -> float:
        """Pump-mode linewidth; the natural unit of time for tolerances."""
        return float(self.kappa_total[self.M])

    @property
    def eta(self) -> float:
        return self.eta_F * self.eta_g * self.eta_opt * self.eta_pd

    @property
    def photon_energy(self) -> float:
        return constants.h * constants.c / self.pump_wavelength

    def photon_flux(self, P: float) -> float:
        """Input pump photon flux ``P / (hbar * omega0)`` in photons/s."""
        return P / self.photon_energy

    def drive_amplitude(self, P: float) -> float:
        """Real input amplitude ``s_in = sqrt(flux)``."""
        return float(np.sqrt(self.photon_flux(P)))

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def validate_params(params: SystemParams) -> SystemParams:
    """Check every invariant of ``params``; return it unchanged if all hold."""
    if not isinstance(params.M, (int, np.integer)) or params.M < 1:
        raise ParameterError("M", "need at least modes ±1 (M >= 1)")
    n = params.n_modes
    for name in ("kappa_total", "kappa_ext", "detuning"):
        arr = getattr(params, name)
        if arr.shape != (n,):
            raise ParameterError(name, f"expected {n} entries, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError(name, "entries must be finite")
    if np.any(params.kappa_ext <= 0):
        raise ParameterError("kappa_ext", "external coupling must be positive")
    if np.any(params.kappa_ext > params.kappa_total):
        raise ParameterError("kappa_ext", "kappa_ext > kappa_total")
    # g = 0 is the linear-cavity limit, kept legal for passivity checks
    if not (np.isfinite(params.g) and params.g >= 0):
        raise ParameterError("g", "Kerr coupling must be non-negative and finite")
    if not (np.isfinite(params.pump_power) and params.pump_power >= 0):
        raise ParameterError("pump_power", "pump power must be >= 0")
    for name in ("eta_F", "eta_g", "eta_opt", "eta_pd"):
        v = getattr(params, name)
        if not 0 < v <= 1:
            raise ParameterError(name, "efficiency must lie in (0, 1]")
    if not params.electronic_noise_rel >= 0:
        raise ParameterError("electronic_noise_rel", "must be >= 0")
    if not params.pump_wavelength > 0:
        raise ParameterError("pump_wavelength", "must be > 0")
    return params


def _default_g(kappa: float, kappa_ext: float, p_th: float, wavelength: float) -> float:
    # with delta0 = 0 and detuning[±1] = kappa the ±1 pair goes unstable exactly
    # at g|A0|^2 = kappa/2, where the pump cubic reads kappa^3 / (4 g) = kappa_ext * flux
    flux = p_th / (constants.h * constants.c / wavelength)
    return kappa**3 / (4.0 * kappa_ext * flux)


def default_params(M: int = 2, **overrides) -> SystemParams:
    """Hardware-like defaults: 630 MHz linewidth, overcoupled, P_th ≈ 53 mW.

    The pump sits on the cold resonance and the dispersion is strong enough that
    the ±1 pair is the first to oscillate.
    """
    kappa = 2 * np.pi * LINEWIDTH_HZ
    kappa_ext = 0.6 * kappa
    base = dict(
        M=M,
        kappa_total=np.full(2 * M + 1, kappa),
        kappa_ext=np.full(2 * M + 1, kappa_ext),
        detuning=dispersion_detuning(M, 0.0, 2.0 * kappa),
        g=_default_g(kappa, kappa_ext, 53e-3, PUMP_WAVELENGTH),
        pump_power=1.13 * 53e-3,
    )
    base.update(overrides)
    return validate_params(SystemParams(**base))
