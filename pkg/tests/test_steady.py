import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kerrcomb.model import ClassicalState, coupled_mode_rhs
from kerrcomb.params import default_params, dispersion_detuning
from kerrcomb.steady import (NoThresholdError, pump_only_roots, reference_power, residual,
                             seed_comb, sideband_growth, solve_comb, stability_eigenvalues,
                             sweep_pump, threshold)

from conftest import KAPPA


def cubic_real_root_count(p, P):
    """Number of distinct positive roots from the cubic discriminant."""
    i = p.M
    k, ke, d0, g = p.kappa_total[i], p.kappa_ext[i], p.detuning[i], p.g
    a, b, c, d = g * g, -2 * g * d0, k * k / 4 + d0 * d0, -ke * p.photon_flux(P)
    disc = 18 * a * b * c * d - 4 * b**3 * d + b * b * c * c - 4 * a * c**3 - 27 * a * a * d * d
    return 3 if disc > 0 else 1


def threshold_oracle(p):
    """Single pair (M=1): lowest pump photon number x with
    (g x)^2 - (D1 - 2 g x)^2 = kappa^2/4, mapped to power by the pump cubic."""
    k, ke, g = p.kappa_total[1], p.kappa_ext[1], p.g
    d0, d1 = p.detuning[1], p.detuning[2]
    xs = np.roots([-3 * g * g, 4 * g * d1, -(d1 * d1) - k * k / 4])
    x = min(r.real for r in xs if abs(r.imag) < 1e-9 * abs(r) and r.real > 0)
    flux = x * (k * k / 4 + (d0 - g * x) ** 2) / ke
    return flux * p.photon_energy


def test_default_threshold(params2):
    th = threshold(params2)
    assert th.P_th == pytest.approx(53e-3, rel=1e-5)
    assert th.k_star == 1
    # at threshold g x = kappa/2 exactly for detuning[±1] = kappa
    assert params2.g * th.x_th == pytest.approx(KAPPA / 2, rel=1e-5)


@settings(max_examples=10)
@given(st.floats(1.75, 6.0))
def test_threshold_matches_quadratic_oracle(d2):
    p = default_params(M=1, detuning=dispersion_detuning(1, 0.0, d2 * KAPPA))
    assert threshold(p).P_th == pytest.approx(threshold_oracle(p), rel=1e-5)


def test_weak_dispersion_never_oscillates():
    # the instability quadratic has real roots only for D1 >= (sqrt(3)/2) kappa
    p = default_params(M=1, detuning=dispersion_detuning(1, 0.0, 1.5 * KAPPA))
    with pytest.raises(NoThresholdError):
        threshold(p)


@pytest.mark.parametrize("lam", [0.5, 2.0, 7.0])
def test_threshold_scales_inversely_with_g(params2, lam):
    base = threshold(params2)
    th = threshold(params2.with_(g=params2.g / lam))
    assert th.P_th == pytest.approx(lam * base.P_th, rel=1e-5)
    assert th.k_star == base.k_star


def test_no_threshold_for_linear_cavity():
    with pytest.raises(NoThresholdError, match="no threshold"):
        threshold(default_params(g=0.0))


def test_pump_roots_solve_equations(params2):
    for P in (1e-3, 0.05, 0.2):
        for s in pump_only_roots(params2, P):
            assert residual(params2, s) < 1e-10
    assert pump_only_roots(params2, 0.0)[0].photons.sum() == 0


def test_pump_root_count_matches_discriminant(bistable_params):
    p = bistable_params
    Pr = reference_power(p)
    for P in np.geomspace(0.5 * Pr, 40 * Pr, 60):
        assert len(pump_only_roots(p, P)) == cubic_real_root_count(p, P)


def test_sideband_growth_sign_change(params2):
    th = threshold(params2)
    below = pump_only_roots(params2, 0.99 * th.P_th)[0]
    above = pump_only_roots(params2, 1.01 * th.P_th)[0]
    assert sideband_growth(params2, below).max() < 0 < sideband_growth(params2, above).max()


@pytest.fixture(scope="module")
def comb(params2):
    P = 1.13 * threshold(params2).P_th
    return solve_comb(params2, P, seed_comb(params2, pump_only_roots(params2, P)[0]))


def test_comb_converged_and_stable(params2, comb):
    assert residual(params2, comb) < 1e-10
    rep = stability_eigenvalues(params2, comb)
    assert rep.stable and rep.n_goldstone == 1
    n = comb.photons
    assert n[1] == pytest.approx(n[3], rel=1e-8) and n[0] == pytest.approx(n[4], rel=1e-8)
    assert n[3] > 1e-3 * n[2] and n[4] > 0


def test_comb_photon_balance(params2, comb):
    # steady state: photons out through loss = photons in (drive work = dissipation)
    F = coupled_mode_rhs(params2, comb)
    assert np.max(np.abs(F)) < 1e-6 * KAPPA * np.max(np.abs(comb.A))
    p = params2
    d = np.sqrt(p.kappa_ext[2]) * p.drive_amplitude(comb.pump_power)
    gain = 2 * (np.conj(comb.amp(0)) * d).real
    loss = float(p.kappa_total @ comb.photons)
    assert gain == pytest.approx(loss, rel=1e-8)


def test_comb_gauge_symmetric(comb):
    # the brightest pair carries equal phases after gauge fixing
    assert np.angle(comb.amp(1)) == pytest.approx(np.angle(comb.amp(-1)), abs=1e-9)


def test_guess_length_checked(params2):
    with pytest.raises(ValueError):
        solve_comb(params2, 0.05, ClassicalState.zeros(1))


def test_sweep_below_threshold_single_branch(params2):
    th = threshold(params2).P_th
    branches = sweep_pump(params2, th * np.array([0.5, 0.7, 0.9]))
    assert len(branches) == 1
    assert all(np.allclose(np.delete(pt.state.A, 2), 0) for pt in branches[0].points)


def test_sweep_must_ascend(params2):
    with pytest.raises(ValueError):
        sweep_pump(params2, [0.2, 0.1])


def test_bistable_sweeps_split(bistable_params):
    p = bistable_params
    Pr = reference_power(p)
    Ps = np.geomspace(0.5 * Pr, 40 * Pr, 60)
    branches = sweep_pump(p, Ps)
    assert [b.label for b in branches] == ["up", "down"]
    up, down = branches
    tri = [P for P in Ps if len(pump_only_roots(p, P)) == 3]
    differ = [P for P in tri
              if abs(abs(up.points[list(up.powers).index(P)].state.amp(0))
                     - abs(down.points[list(down.powers).index(P)].state.amp(0)))
              > 1e-3 * abs(down.points[list(down.powers).index(P)].state.amp(0))]
    assert differ, "branches should separate inside the three-root interval"
    assert all(pt.stable for b in branches for pt in b.points if pt.P in differ)
