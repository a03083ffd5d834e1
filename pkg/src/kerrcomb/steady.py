"""Classical steady states: pump-only roots, threshold, comb solutions, sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .model import (ClassicalState, coupled_mode_rhs, real_to_state, rhs_jacobian,
                    state_to_real)
from .params import SystemParams

__all__ = [
    "SolverError",
    "NoThresholdError",
    "Branch",
    "BranchPoint",
    "StabilityReport",
    "ThresholdResult",
    "pump_only_roots",
    "sideband_growth",
    "threshold",
    "reference_power",
    "solve_comb",
    "residual",
    "stability_eigenvalues",
    "symmetry_generator",
    "seed_comb",
    "sweep_pump",
]

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 200
MAX_HALVINGS = 8
GOLDSTONE_TOL = 1e-9
SEED_FRACTION = 1e-3


class SolverError(RuntimeError):
    pass


class NoThresholdError(SolverError):
    pass


# --------------------------------------------------------------------------
# pump-only solutions


def _pump_cubic(params: SystemParams, P: float) -> np.ndarray:
    """Coefficients (highest first) of x[(k/2)^2 + (d0 - g x)^2] - k_ext flux."""
    i0 = params.M
    kappa, kext = params.kappa_total[i0], params.kappa_ext[i0]
    d0, g = params.detuning[i0], params.g
    return np.array([g * g, -2 * g * d0, 0.25 * kappa**2 + d0**2,
                     -kext * params.photon_flux(P)])


def _pump_amplitude(params: SystemParams, x: float, P: float) -> complex:
    i0 = params.M
    denom = 0.5 * params.kappa_total[i0] + 1j * (params.detuning[i0] - params.g * x)
    return np.sqrt(params.kappa_ext[i0]) * params.drive_amplitude(P) / denom


def pump_only_roots(params: SystemParams, P: float) -> list[ClassicalState]:
    """All pump-only steady states at input power ``P``, sorted by |A0|^2."""
    if P < 0:
        raise ValueError("pump power must be >= 0")
    M = params.M
    if P == 0:
        return [ClassicalState.zeros(M, 0.0)]
    coeffs = _pump_cubic(params, P)
    if params.g == 0:
        xs = [-coeffs[3] / coeffs[2]]
    else:
        roots = np.roots(coeffs)
        scale = np.max(np.abs(roots))
        xs = sorted(r.real for r in roots if abs(r.imag) <= 1e-7 * scale and r.real > 0)
        poly, dpoly = np.poly1d(coeffs), np.poly1d(coeffs).deriv()
        polished = []
        for x in xs:
            for _ in range(5):
                d = dpoly(x)
                if d == 0:
                    break
                x = x - poly(x) / d
            polished.append(x)
        # merge numerically coincident roots (exactly at a fold)
        xs = []
        for x in polished:
            if not xs or abs(x - xs[-1]) > 1e-9 * max(x, 1.0):
                xs.append(x)
    states = []
    for x in xs:
        A = np.zeros(2 * M + 1, complex)
        A[M] = _pump_amplitude(params, x, P)
        states.append(ClassicalState(A, P))
    return states


# --------------------------------------------------------------------------
# stability


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: np.ndarray
    goldstone: np.ndarray  # boolean mask over eigenvalues
    kappa_ref: float

    @property
    def max_growth(self) -> float:
        """Largest real part among non-Goldstone eigenvalues, in rad/s."""
        rest = self.eigenvalues[~self.goldstone].real
        return float(rest.max()) if rest.size else -np.inf

    @property
    def stable(self) -> bool:
        return self.max_growth <= GOLDSTONE_TOL * self.kappa_ref

    @property
    def n_goldstone(self) -> int:
        return int(self.goldstone.sum())


def symmetry_generator(state: ClassicalState | np.ndarray) -> np.ndarray:
    """Real tangent vector of A_k -> A_k exp(i k theta) at theta = 0."""
    A = state.A if isinstance(state, ClassicalState) else np.asarray(state, complex)
    M = (A.size - 1) // 2
    k = np.arange(-M, M + 1)
    return state_to_real(1j * k * A)


def stability_eigenvalues(params: SystemParams, state: ClassicalState) -> StabilityReport:
    """Eigenvalues of the drift matrix, with the phase-symmetry zero mode flagged.

    An eigenvalue is flagged as Goldstone when it lies within 1e-9 kappa of zero
    and its eigenvector overlaps the generator of A_k -> A_k exp(i k theta).
    """
    J = rhs_jacobian(params, state)
    kref = params.kappa_ref
    w, V = np.linalg.eig(J)
    t = symmetry_generator(state)
    tn = np.linalg.norm(t)
    goldstone = np.zeros(w.size, bool)
    if tn > 0:
        near = np.abs(w) <= GOLDSTONE_TOL * kref
        for i in np.flatnonzero(near):
            v = V[:, i]
            overlap = abs(np.vdot(t, v)) / (tn * np.linalg.norm(v))
            if overlap > 0.5:
                goldstone[i] = True
    return StabilityReport(w, goldstone, kref)


def sideband_growth(params: SystemParams, state: ClassicalState) -> np.ndarray:
    """Largest growth rate of each sideband pair ±k around a pump-only state.

    Around a pump-only state the drift matrix is block diagonal in the pairs
    (k, -k); entry ``k-1`` of the result is the max real eigenvalue of that block.
    """
    J = rhs_jacobian(params, state)
    M = params.M
    out = np.empty(M)
    for k in range(1, M + 1):
        idx = []
        for m in (-k, k):
            i = m + M
            idx += [2 * i, 2 * i + 1]
        block = J[np.ix_(idx, idx)]
        out[k - 1] = np.linalg.eigvals(block).real.max()
    return out


# --------------------------------------------------------------------------
# threshold


@dataclass(frozen=True)
class ThresholdResult:
    P_th: float
    k_star: int
    x_th: float  # intracavity pump photon number at threshold

    def __float__(self):
        return self.P_th


def reference_power(params: SystemParams) -> float:
    """Power scale hbar*w0 * kappa^3 / (8 g kappa_ext) of the pump mode."""
    i0 = params.M
    if params.g == 0:
        return np.inf
    return (params.photon_energy * params.kappa_total[i0] ** 3
            / (8 * params.g * params.kappa_ext[i0]))


def _lower_pump_state(params: SystemParams, P: float) -> ClassicalState:
    return pump_only_roots(params, P)[0]


def threshold(params: SystemParams, p_max: float | None = None, rtol: float = 1e-6,
              n_scan: int = 600) -> ThresholdResult:
    """Lowest pump power at which the (lower) pump-only state goes unstable.

    A geometric scan brackets the first crossing, then bisection refines it to
    ``rtol``. Raises :class:`NoThresholdError` if stable up to ``p_max``.
    """
    P_ref = reference_power(params)
    if not np.isfinite(P_ref):
        raise NoThresholdError("no threshold in range (g = 0)")
    if p_max is None:
        p_max = 1e3 * P_ref

    def growth(P):
        return sideband_growth(params, _lower_pump_state(params, P)).max()

    grid = np.geomspace(1e-3 * P_ref, p_max, n_scan)
    lo = hi = None
    prev = 0.0
    for P in grid:
        if growth(P) > 0:
            lo, hi = prev, P
            break
        prev = P
    if hi is None:
        raise NoThresholdError(f"no threshold in range (stable up to {p_max:.4g} W)")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if growth(mid) > 0:
            hi = mid
        else:
            lo = mid
    st = _lower_pump_state(params, hi)
    k_star = int(np.argmax(sideband_growth(params, st))) + 1
    return ThresholdResult(float(hi), k_star, float(abs(st.amp(0)) ** 2))


# --------------------------------------------------------------------------
# Newton solver


def residual(params: SystemParams, state: ClassicalState, P: float | None = None) -> float:
    """Scaled residual ||F||_inf / (kappa_ref * max(1, ||A||_inf)).

    F is measured in units of the pump linewidth so the tolerance is
    dimensionless.
    """
    F = coupled_mode_rhs(params, state, P)
    return float(np.max(np.abs(F)) / params.kappa_ref / max(1.0, np.max(np.abs(state.A))))


def _newton(params: SystemParams, P: float, A0: np.ndarray, max_iter: int,
            tol: float) -> np.ndarray:
    kref = params.kappa_ref
    v = state_to_real(A0)

    def fnorm(v):
        F = coupled_mode_rhs(params, real_to_state(v), P) / kref
        return F, np.linalg.norm(F)

    F, nF = fnorm(v)
    for _ in range(max_iter):
        A = real_to_state(v)
        if np.max(np.abs(F)) <= tol * max(1.0, np.max(np.abs(A))):
            return A
        J = rhs_jacobian(params, A) / kref
        t = symmetry_generator(A)
        tn = np.linalg.norm(t)
        # border with the phase-symmetry direction so the zero mode is removed
        if tn > 1e-12 * max(1.0, np.linalg.norm(v)):
            J = np.vstack([J, t / tn])
            rhs = np.concatenate([-state_to_real(F), [0.0]])
        else:
            rhs = -state_to_real(F)
        step = np.linalg.lstsq(J, rhs, rcond=None)[0]
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = v + lam * step
            F_new, n_new = fnorm(trial)
            if n_new < nF:
                break
            lam *= 0.5
        else:
            raise SolverError("no convergence: damping exhausted")
        v, F, nF = trial, F_new, n_new
    raise SolverError(f"no convergence after {max_iter} iterations")


def _fix_gauge(A: np.ndarray) -> np.ndarray:
    """Rotate along the phase symmetry so the brightest pair has equal phases."""
    M = (A.size - 1) // 2
    pair = np.array([abs(A[M + k]) * abs(A[M - k]) for k in range(1, M + 1)])
    if pair.max() == 0:
        return A
    k = int(np.argmax(pair)) + 1
    theta = -np.angle(A[M + k] * np.conj(A[M - k])) / (2 * k)
    return A * np.exp(1j * np.arange(-M, M + 1) * theta)


def seed_comb(params: SystemParams, state: ClassicalState, k: int | None = None,
              fraction: float = SEED_FRACTION) -> ClassicalState:
    """Pump state plus a small real symmetric perturbation on modes ±k.

    ``k`` defaults to the fastest-growing sideband pair around ``state``.
    """
    if k is None:
        pump_only = ClassicalState(np.where(params.modes == 0, state.A, 0), state.pump_power)
        k = int(np.argmax(sideband_growth(params, pump_only))) + 1
    A = np.array(state.A)
    eps = fraction * abs(A[params.M])
    A[params.M + k] += eps
    A[params.M - k] += eps
    return ClassicalState(A, state.pump_power)


def _relax(params: SystemParams, P: float, A: np.ndarray, t_chunk: float = 200.0,
           n_chunks: int = 100) -> np.ndarray:
    """Integrate the equations of motion (time in units of 1/kappa_ref) until a
    stable steady state is reached, polishing with Newton after every chunk."""
    kref = params.kappa_ref

    def f(_, v):
        return state_to_real(coupled_mode_rhs(params, real_to_state(v), P)) / kref

    def jac(_, v):
        return rhs_jacobian(params, real_to_state(v)) / kref

    v = state_to_real(A)
    for _ in range(n_chunks):
        sol = solve_ivp(f, (0.0, t_chunk), v, method="LSODA", jac=jac,
                        rtol=1e-9, atol=1e-12 * max(1.0, np.abs(v).max()))
        if not sol.success:
            raise SolverError(f"relaxation failed: {sol.message}")
        v = sol.y[:, -1]
        if residual(params, ClassicalState(real_to_state(v), P)) > 1e-3:
            continue
        try:
            cand = _newton(params, P, real_to_state(v), 50, NEWTON_TOL)
        except SolverError:
            continue
        if stability_eigenvalues(params, ClassicalState(cand, P)).stable:
            return cand
    raise SolverError("no convergence: relaxation did not settle on a stable state")


def solve_comb(params: SystemParams, P: float, guess: ClassicalState,
               relax: bool = True, max_iter: int = NEWTON_MAX_ITER,
               tol: float = NEWTON_TOL) -> ClassicalState:
    """Steady state of the coupled-mode equations at input power ``P``.

    Damped Newton on the real/imaginary split starting from ``guess``. With
    ``relax`` set, a converged but linearly unstable answer (or a Newton
    failure) triggers time integration from the guess, so a guess carrying a
    small sideband seed lands on the comb the dynamics actually select.
    """
    if guess.A.size != params.n_modes:
        raise ValueError("guess length does not match 2M+1")
    err = None
    try:
        A = _newton(params, P, guess.A, max_iter, tol)
        out = ClassicalState(_fix_gauge(A), P)
        if not relax or stability_eigenvalues(params, out).stable:
            return out
        start = guess.A
        if np.allclose(np.abs(np.delete(A, params.M)), 0) and \
                np.allclose(np.abs(np.delete(guess.A, params.M)), 0):
            # the pump-only manifold is invariant; seed it or relaxation cannot leave
            start = seed_comb(params, out).A
    except SolverError as exc:
        if not relax:
            raise
        err = exc
        start = guess.A
    log.debug("Newton %s at P=%.4g; relaxing", "failed" if err else "unstable", P)
    A = _relax(params, P, start)
    return ClassicalState(_fix_gauge(A), P)


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class BranchPoint:
    P: float
    state: ClassicalState
    stable: bool


@dataclass
class Branch:
    label: str
    points: list[BranchPoint] = field(default_factory=list)

    @property
    def powers(self) -> np.ndarray:
        return np.array([p.P for p in self.points])

    def amplitudes(self) -> np.ndarray:
        return np.array([p.state.A for p in self.points])


def _continue(params, powers, first_guess, label):
    branch = Branch(label)
    guess = first_guess
    for P in powers:
        try:
            st = solve_comb(params, P, ClassicalState(guess.A, P))
        except SolverError as exc:
            log.warning("branch %s truncated at P=%.4g: %s", label, P, exc)
            break
        stable = stability_eigenvalues(params, st).stable
        branch.points.append(BranchPoint(float(P), st, stable))
        guess = st
    return branch


def _rel_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.abs(a) - np.abs(b)) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def sweep_pump(params: SystemParams, P_list, seeds=None) -> list[Branch]:
    """Up- and down-sweep natural continuation over ``P_list`` (ascending).

    ``seeds`` optionally gives (first_up, first_down) ClassicalStates. The
    down-sweep is reported as a separate branch only where it disagrees with
    the up-sweep (relative distance of |A| above 1e-6), which is how
    bistability shows up.
    """
    P_list = np.asarray(P_list, float)
    if np.any(np.diff(P_list) <= 0):
        raise ValueError("P_list must be strictly ascending")
    if seeds is None:
        up_seed = _lower_pump_state(params, P_list[0])
        down_seed = None
    else:
        up_seed, down_seed = seeds
    up = _continue(params, P_list, up_seed, "up")
    if down_seed is None:
        if not up.points:
            return [up]
        down_seed = up.points[-1].state
        if len(up.points) < len(P_list):
            down_seed = pump_only_roots(params, P_list[-1])[-1]
    down = _continue(params, P_list[::-1], down_seed, "down")
    down.points.reverse()
    up_map = {p.P: p.state.A for p in up.points}
    differs = any(p.P not in up_map or _rel_distance(up_map[p.P], p.state.A) > 1e-6
                  for p in down.points)
    return [up, down] if differs else [up]
