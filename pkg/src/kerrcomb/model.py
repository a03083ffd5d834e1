"""Four-wave-mixing bookkeeping and the classical coupled-mode equations.

The equations of motion, in the rotating frame of the equidistant grid, are

    dA_j/dt = -(kappa_j/2 + i detuning_j) A_j
              + i g sum_{p+q-r=j} A_p A_q conj(A_r)
              + delta_{j0} sqrt(kappa_ext_0) s_in

with A in units of sqrt(photons) and s_in the real input amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .params import SystemParams

__all__ = [
    "CouplingQuadruple",
    "ClassicalState",
    "energy_conserving_quadruples",
    "coupled_mode_rhs",
    "rhs_jacobian",
    "state_to_real",
    "real_to_state",
]


class CouplingQuadruple(NamedTuple):
    """Ordered mode indices of one term ``a_r^† a_s^† a_p a_q`` with r+s = p+q."""

    r: int
    s: int
    p: int
    q: int


@dataclass(frozen=True)
class ClassicalState:
    """Intracavity amplitudes ``A[k + M]`` for k = -M..M."""

    A: np.ndarray
    pump_power: float = 0.0

    def __post_init__(self):
        A = np.array(self.A, dtype=complex)
        if A.ndim != 1 or A.size % 2 != 1 or A.size < 3:
            raise ValueError("state needs an odd number (>= 3) of mode amplitudes")
        if not np.all(np.isfinite(A)):
            raise ValueError("state amplitudes must be finite")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def M(self) -> int:
        return (self.A.size - 1) // 2

    def amp(self, k: int) -> complex:
        return complex(self.A[k + self.M])

    @property
    def photons(self) -> np.ndarray:
        return np.abs(self.A) ** 2

    @classmethod
    def zeros(cls, M: int, pump_power: float = 0.0) -> "ClassicalState":
        return cls(np.zeros(2 * M + 1, complex), pump_power)


def energy_conserving_quadruples(M: int) -> list[CouplingQuadruple]:
    """All ordered (r, s, p, q) in [-M, M]^4 with r + s = p + q.

    Self- and cross-phase terms are part of the list.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    out = []
    modes = range(-M, M + 1)
    for r in modes:
        for s in modes:
            total = r + s
            lo, hi = max(-M, total - M), min(M, total + M)
            for p in range(lo, hi + 1):
                out.append(CouplingQuadruple(r, s, p, total - p))
    return out


@lru_cache(maxsize=None)
def _triples(M: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # (j, p, q, r) array indices with p + q - r = j
    quads = np.array(energy_conserving_quadruples(M)) + M
    j, r, p, q = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    # quadruple (j, s, p, q) contributes A_p A_q conj(A_s) to equation j
    for arr in (j, r, p, q):
        arr.setflags(write=False)
    return j, p, q, r


def _nonlinear(A: np.ndarray) -> np.ndarray:
    M = (A.size - 1) // 2
    j, p, q, r = _triples(M)
    out = np.zeros_like(A)
    np.add.at(out, j, A[p] * A[q] * np.conj(A[r]))
    return out


def coupled_mode_rhs(params: SystemParams, state: ClassicalState | np.ndarray,
                     P: float | None = None) -> np.ndarray:
    """Time derivative dA/dt of the classical comb amplitudes.

    ``P`` overrides ``params.pump_power`` (and the power stored on the state).
    """
    A = state.A if isinstance(state, ClassicalState) else np.asarray(state, complex)
    if A.size != params.n_modes:
        raise ValueError(f"state has {A.size} modes, params expect {params.n_modes}")
    if P is None:
        P = state.pump_power if isinstance(state, ClassicalState) else params.pump_power
    lin = -(0.5 * params.kappa_total + 1j * params.detuning) * A
    F = lin + 1j * params.g * _nonlinear(A)
    F[params.M] += np.sqrt(params.kappa_ext[params.M]) * params.drive_amplitude(P)
    return F


def _wirtinger(params: SystemParams, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """dF/dA and dF/dconj(A) as (n, n) complex matrices."""
    n = A.size
    j, p, q, r = _triples(params.M)
    dA = np.diag(-(0.5 * params.kappa_total + 1j * params.detuning)).astype(complex)
    dAc = np.zeros((n, n), complex)
    g = 1j * params.g
    # d/dA_m of A_p A_q conj(A_r): the p and q slots are symmetric in the sum
    np.add.at(dA, (j, p), g * A[q] * np.conj(A[r]))
    np.add.at(dA, (j, q), g * A[p] * np.conj(A[r]))
    np.add.at(dAc, (j, r), g * A[p] * A[q])
    return dA, dAc


def rhs_jacobian(params: SystemParams, state: ClassicalState | np.ndarray) -> np.ndarray:
    """Real Jacobian of the rhs in interleaved (Re A_k, Im A_k) ordering.

    Because quadratures are a fixed real rescaling of (Re, Im), this is also the
    drift matrix of the linearized fluctuations.
    """
    A = state.A if isinstance(state, ClassicalState) else np.asarray(state, complex)
    a, b = _wirtinger(params, A)
    n = A.size
    J = np.empty((2 * n, 2 * n))
    du = a + b
    dv = 1j * (a - b)
    J[0::2, 0::2] = du.real
    J[1::2, 0::2] = du.imag
    J[0::2, 1::2] = dv.real
    J[1::2, 1::2] = dv.imag
    return J


def state_to_real(A: np.ndarray) -> np.ndarray:
    v = np.empty(2 * A.size)
    v[0::2] = A.real
    v[1::2] = A.imag
    return v


def real_to_state(v: np.ndarray) -> np.ndarray:
    return v[0::2] + 1j * v[1::2]
