"""Exact truncated Fock-space engine for the FWM Hamiltonian and its invariant.

Each mode k = -M..M is truncated independently at ``cutoff[k]`` photons. The
basis is the mixed-radix enumeration of occupation vectors with mode -M as the
most significant digit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .fluctuations import Decomposition, decompose_covariance
from .model import energy_conserving_quadruples

__all__ = [
    "DimensionError",
    "FockSpace",
    "FockState",
    "build_fwm_hamiltonian",
    "build_pair_hamiltonian",
    "build_weighted_number",
    "number_operator",
    "commutator_norm",
    "hermiticity_error",
    "phase_shift_unitary",
    "coherent_state",
    "evolve",
    "moments",
    "decomposition_check",
]

MAX_DIMENSION = 2_000_000
LEAKAGE_LIMIT = 1e-6


class DimensionError(ValueError):
    pass


class FockSpace:
    """Product of truncated single-mode Fock spaces for modes -M..M."""

    def __init__(self, M: int, cutoff, max_dim: int = MAX_DIMENSION):
        if M < 1:
            raise ValueError("M must be >= 1")
        cut = np.broadcast_to(np.asarray(cutoff, dtype=np.int64), (2 * M + 1,)).copy()
        if np.any(cut < 0):
            raise ValueError("cutoffs must be >= 0")
        if np.all(cut == 0):
            raise ValueError("trivial space: every cutoff is 0")
        dim = int(np.prod(cut + 1, dtype=float))
        if dim > max_dim:
            raise DimensionError(f"dimension overflow: D = {dim} > {max_dim}")
        self.M = M
        self.cutoff = cut
        self.dim = dim
        self.strides = self._strides(cut)

    @staticmethod
    def _strides(cut):
        dims = cut + 1
        strides = np.ones(dims.size, dtype=np.int64)
        for i in range(dims.size - 2, -1, -1):
            strides[i] = strides[i + 1] * dims[i + 1]
        return strides

    def __repr__(self):
        return f"FockSpace(M={self.M}, cutoff={self.cutoff.tolist()}, dim={self.dim})"

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    @cached_property
    def basis(self) -> np.ndarray:
        """(D, 2M+1) occupation numbers, row i is basis state i."""
        idx = np.arange(self.dim, dtype=np.int64)
        occ = (idx[:, None] // self.strides[None, :]) % (self.cutoff + 1)[None, :]
        occ.setflags(write=False)
        return occ

    def index(self, occupations) -> np.ndarray:
        occ = np.asarray(occupations, dtype=np.int64)
        return occ @ self.strides

    def occupation(self, i: int) -> tuple[int, ...]:
        return tuple(int(n) for n in self.basis[i])

    def state_index(self, occ_by_mode: dict[int, int]) -> int:
        """Index of the basis state with the given {k: n_k} (others empty)."""
        occ = np.zeros(2 * self.M + 1, dtype=np.int64)
        for k, n in occ_by_mode.items():
            occ[k + self.M] = n
        if np.any(occ > self.cutoff):
            raise ValueError("occupation beyond cutoff")
        return int(self.index(occ))

    def _apply_quadruple(self, quad):
        """Action of a_r^† a_s^† a_p a_q on every basis state.

        Returns (target occupations, squared amplitude as an exact integer,
        in-space mask). Squared amplitudes are kept integral so that matrix
        elements are single square roots, identical for a term and its adjoint.
        """
        r, s, p, q = (m + self.M for m in quad)
        occ = self.basis.copy()
        amp2 = np.ones(self.dim, dtype=np.int64)
        for m in (q, p):
            amp2 *= occ[:, m]
            occ[:, m] -= 1
        amp2[np.any(occ < 0, axis=1)] = 0
        occ = np.maximum(occ, 0)
        for m in (s, r):
            occ[:, m] += 1
            amp2 *= occ[:, m]
        inside = np.all(occ <= self.cutoff[None, :], axis=1)
        return occ, amp2, inside

    @cached_property
    def escape_mask(self) -> np.ndarray:
        """Basis states that the untruncated FWM Hamiltonian couples out of the space."""
        mask = np.zeros(self.dim, bool)
        for quad in energy_conserving_quadruples(self.M):
            _, amp2, inside = self._apply_quadruple(quad)
            mask |= (amp2 > 0) & ~inside
        return mask

    @cached_property
    def top_layer_mask(self) -> np.ndarray:
        """Basis states with at least one mode at its cutoff."""
        return np.any(self.basis == self.cutoff[None, :], axis=1)


@dataclass(frozen=True)
class FockState:
    """Normalized state vector on a :class:`FockSpace`.

    ``escape_population`` is the weight on states the full Hamiltonian couples
    out of the truncated space; ``valid`` is False when it exceeds 1e-6.
    """

    psi: np.ndarray
    t: float = 0.0
    escape_population: float = 0.0
    top_layer_population: float = 0.0

    @property
    def valid(self) -> bool:
        return self.escape_population <= LEAKAGE_LIMIT

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.psi))


def build_fwm_hamiltonian(space: FockSpace, g: float = 1.0, detuning=None) -> sp.csr_matrix:
    """g * sum over energy-conserving (r, s, p, q) of a_r^† a_s^† a_p a_q.

    Terms that would leave the truncated space are dropped. ``detuning``
    optionally adds sum_k detuning[k] n_k (a number-operator term, so the
    phase invariant is unaffected).
    """
    rows, cols, vals = [], [], []
    src = np.arange(space.dim)
    for quad in energy_conserving_quadruples(space.M):
        occ, amp2, inside = space._apply_quadruple(quad)
        keep = inside & (amp2 > 0)
        rows.append(space.index(occ[keep]))
        cols.append(src[keep])
        vals.append(g * np.sqrt(amp2[keep].astype(float)))
    H = sp.coo_matrix((np.concatenate(vals).astype(complex),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(space.dim, space.dim)).tocsr()
    if detuning is not None:
        H = H + build_weighted_number(space, detuning)
    H.sum_duplicates()
    return H


def build_pair_hamiltonian(space: FockSpace, xi: dict[int, complex]) -> sp.csr_matrix:
    """sum_k (xi_k a_k^† a_-k^† + h.c.) with the pump as an undepleted c-number.

    This is the (k, -k, 0, 0) part of the FWM Hamiltonian with a_0 a_0 replaced
    by a classical amplitude, so each pair evolves independently.
    """
    H = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for k, x in xi.items():
        if k <= 0:
            raise ValueError("pair labels must be positive")
        a_k = _ladder(space, k)
        a_mk = _ladder(space, -k)
        term = x * (a_k.T @ a_mk.T)
        H = H + term + term.conj().T
    return H.tocsr()


def _ladder(space: FockSpace, k: int) -> sp.csr_matrix:
    """Truncated annihilation operator of mode k on the full space."""
    i = k + space.M
    occ = space.basis
    has = occ[:, i] > 0
    src = np.flatnonzero(has)
    dst = src - space.strides[i]
    vals = np.sqrt(occ[has, i].astype(float))
    return sp.csr_matrix((vals.astype(complex), (dst, src)), shape=(space.dim, space.dim))


def build_weighted_number(space: FockSpace, weights=None) -> sp.csr_matrix:
    """Diagonal operator sum_k w_k n_k; default weights w_k = k."""
    w = space.modes.astype(float) if weights is None else np.asarray(weights, float)
    if w.shape != (2 * space.M + 1,):
        raise ValueError("weights need 2M+1 entries")
    return sp.diags((space.basis @ w).astype(complex), format="csr")


def number_operator(space: FockSpace, k: int) -> sp.csr_matrix:
    w = np.zeros(2 * space.M + 1)
    w[k + space.M] = 1.0
    return build_weighted_number(space, w)


def _max_abs(X) -> float:
    if sp.issparse(X):
        X = X.tocoo()
        return float(np.max(np.abs(X.data))) if X.nnz else 0.0
    return float(np.max(np.abs(X))) if np.size(X) else 0.0


def commutator_norm(X, Y) -> float:
    """Largest entry magnitude of XY - YX."""
    return _max_abs(X @ Y - Y @ X)


def hermiticity_error(X) -> float:
    return _max_abs(X - X.conj().T)


def phase_shift_unitary(space: FockSpace, theta: float) -> sp.csr_matrix:
    """prod_k exp(i theta k n_k): diagonal, phase exp(i theta C) on each basis state."""
    c = space.basis @ space.modes
    return sp.diags(np.exp(1j * theta * c), format="csr")


def coherent_state(space: FockSpace, alphas: dict[int, complex]) -> np.ndarray:
    """Product of per-mode truncated coherent states (each renormalized)."""
    psi = np.ones(1, complex)
    for i, k in enumerate(space.modes):
        n = np.arange(space.cutoff[i] + 1)
        a = complex(alphas.get(int(k), 0.0))
        # a^n / sqrt(n!) built recursively to stay finite for large n
        c = np.empty(n.size, complex)
        c[0] = 1.0
        for m in range(1, n.size):
            c[m] = c[m - 1] * a / np.sqrt(m)
        c /= np.linalg.norm(c)
        psi = np.kron(psi, c)
    return psi


def _diagnose(space: FockSpace, psi: np.ndarray, t: float) -> FockState:
    pop = np.abs(psi) ** 2
    return FockState(psi, float(t), float(pop[space.escape_mask].sum()),
                     float(pop[space.top_layer_mask].sum()))


def evolve(space: FockSpace, H, psi0, t, check_norm: float = 1e-10):
    """psi(t) = exp(-i H t) psi0 by truncated-Taylor action of the exponential.

    ``t`` may be a scalar (returns one :class:`FockState`) or a sequence of
    times (returns a list). Raises RuntimeError if the norm drifts more than
    ``check_norm``.
    """
    psi0 = np.asarray(psi0, complex)
    if abs(np.linalg.norm(psi0) - 1) > 1e-12:
        raise ValueError("initial state must be normalized")
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, float))
    A = -1j * sp.csr_matrix(H)
    out = []
    for tk in times:
        psi = psi0.copy() if tk == 0 else expm_multiply(A * tk, psi0)
        if abs(np.linalg.norm(psi) - 1) > check_norm:
            raise RuntimeError(f"matrix exponential lost norm at t={tk}")
        out.append(_diagnose(space, psi, tk))
    return out[0] if scalar else out


def _expect(psi, X) -> complex:
    return complex(np.vdot(psi, X @ psi))


def moments(space: FockSpace, psi, observables):
    """Means and symmetrized covariance matrix of the listed operators.

    Returns (means, covariance); variances are the diagonal.
    """
    psi = psi.psi if isinstance(psi, FockState) else np.asarray(psi, complex)
    ops = list(observables)
    vecs = [X @ psi for X in ops]
    means = np.array([np.vdot(psi, v) for v in vecs])
    n = len(ops)
    cov = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            # <{X_i, X_j}>/2 = Re <X_i psi | X_j psi> for Hermitian X
            cov[i, j] = np.vdot(vecs[i], vecs[j]).real - (means[i].conjugate() * means[j]).real
    return means.real, cov


def decomposition_check(space: FockSpace, psi, M_meas: int) -> Decomposition:
    """Exact Var(C), Var_BP and Cov_MP for the modes |k| <= M_meas.

    Var(C) comes straight from <C^2> - <C>^2, independently of the covariance
    sums, so ``residual`` is a genuine check of the identity.
    """
    if not 1 <= M_meas <= space.M:
        raise ValueError(f"M_meas must lie in [1, {space.M}]")
    psi = psi.psi if isinstance(psi, FockState) else np.asarray(psi, complex)
    modes = [k for k in range(-M_meas, M_meas + 1) if k != 0]
    _, cov = moments(space, psi, [number_operator(space, k) for k in modes])
    w = np.zeros(2 * space.M + 1)
    for k in modes:
        w[k + space.M] = k
    _, var = moments(space, psi, [build_weighted_number(space, w)])
    parts = decompose_covariance(cov, modes)
    return Decomposition(float(var[0, 0]), parts.var_bp, parts.cov_mp,
                         parts.cov_mp_all_pairs, 1.0)
