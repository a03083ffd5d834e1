import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kerrcomb.dsp import (CHANNELS, Acquisition, BalanceFit, CalibrationCurve, CalibrationError,
                          TraceFormatError, TraceSet, band_indices, combined_variance,
                          design_intensity_covariance, design_lowpass, fit_alpha, fit_beta,
                          fit_calibration, lowpass, normalize_to_snl, process, read_csv,
                          read_traces, segment_spectra, shot_noise_calibration,
                          synthesize_traces, write_csv, write_traces)

FS, N, NSEG = 1e8, 5000, 50
ACQ = Acquisition(FS, N, NSEG)
F0, HW = 4e6, 50
DC = {1: 1.0, -1: 0.9, 2: 0.5, -2: 0.45}
SLOPE = 2.0
SNL = {k: SLOPE * v for k, v in DC.items()}
CAL = {k: CalibrationCurve(k, SLOPE, np.ones(4), np.ones(4), 0.0) for k in CHANNELS}
F_MAX = 10e6


def db(x):
    return 10 * np.log10(x)


def design(pair_db, c_db, excess=1e3):
    r = tuple(10 ** (x / 10) for x in pair_db)
    return design_intensity_covariance(SNL, DC, r, 10 ** (c_db / 10), excess)


def neutral_c_db(pair_db):
    """C level when the two pair differences are uncorrelated."""
    s1 = SNL[1] + (DC[1] / DC[-1]) ** 2 * SNL[-1]
    s2 = SNL[2] + (DC[2] / DC[-2]) ** 2 * SNL[-2]
    r1, r2 = (10 ** (x / 10) for x in pair_db)
    return db((s1 * r1 + 4 * s2 * r2) / (s1 + 4 * s2))


def white_traces(variances, seed=0, acq=ACQ, dc=DC):
    return synthesize_traces(np.diag(variances), dc, acq, seed=seed)


# --------------------------------------------------------------------------
# synthesis


def test_uncorrelated_channels_have_low_coherence():
    est = segment_spectra(white_traces([SNL[k] for k in CHANNELS]), F_MAX)
    band = band_indices(est, F0, HW)
    for i in range(4):
        for j in range(i + 1, 4):
            X, Y = est.spectra[i][:, band], est.spectra[j][:, band]
            coh = abs(np.mean(X * np.conj(Y))) / np.sqrt(np.mean(abs(X) ** 2) * np.mean(abs(Y) ** 2))
            assert coh <= 0.05


def test_difference_noise_round_trip():
    K = design((-3.0, 0.0), neutral_c_db((-3.0, 0.0)))
    res = process(synthesize_traces(K, DC, ACQ, seed=3), CAL, F0, HW, f_max=F_MAX)
    assert res.d1.db == pytest.approx(-3.0, abs=0.2)
    assert res.d2.db == pytest.approx(0.0, abs=0.2)


def test_frequency_dependent_target_is_reproduced():
    def target(f):
        s = 1.0 + 3.0 / (1.0 + (f / 5e6) ** 2)
        out = np.zeros((f.size, 4, 4), complex)
        for i in range(4):
            out[:, i, i] = s
        out[:, 0, 1] = out[:, 1, 0] = 0.5 * s
        return out
    est = segment_spectra(synthesize_traces(target, DC, ACQ, seed=4), 20e6)
    for f in (1e6, 5e6, 15e6):
        band = band_indices(est, f, 20)
        s = 1.0 + 3.0 / (1.0 + (est.freqs[band] / 5e6) ** 2)
        X, Y = est.channel(1)[:, band], est.channel(-1)[:, band]
        assert np.mean(abs(X) ** 2 / s) == pytest.approx(1.0, abs=0.06)
        assert np.mean((X * np.conj(Y)).real / s) == pytest.approx(0.5, abs=0.05)


def test_synthesis_rejects_bad_targets():
    with pytest.raises(ValueError, match="positive semidefinite"):
        synthesize_traces(np.diag([1.0, -1.0, 1.0, 1.0]), DC, ACQ)
    bad = np.eye(4, dtype=complex)
    bad[0, 1] = 0.5j
    with pytest.raises(ValueError, match="Hermitian"):
        synthesize_traces(bad, DC, ACQ)
    with pytest.raises(ValueError):
        synthesize_traces(np.eye(3), DC, ACQ)


def test_design_rejects_unrealizable_levels():
    with pytest.raises(ValueError, match="jointly realizable"):
        design((-10.0, -10.0), 3.0)


def test_determinism():
    a = white_traces([1, 2, 3, 4], seed=9)
    b = white_traces([1, 2, 3, 4], seed=9)
    assert np.array_equal(a.data, b.data)
    ea, eb = segment_spectra(a, F_MAX), segment_spectra(b, F_MAX)
    assert np.array_equal(ea.spectra, eb.spectra)
    assert not np.array_equal(a.data, white_traces([1, 2, 3, 4], seed=10).data)


def test_traceset_validation():
    with pytest.raises(ValueError):
        TraceSet(np.zeros((4, 10)), ACQ, DC)
    with pytest.raises(ValueError):
        TraceSet(np.zeros((4, ACQ.n_samples)), ACQ, {1: 1.0})
    with pytest.raises(ValueError, match="16 samples"):
        Acquisition(FS, 8, 2)
    ts = white_traces([1, 1, 1, 1])
    with pytest.raises(ValueError, match="twice"):
        ts.check_band(60e6)


# --------------------------------------------------------------------------
# low-pass


def tone(f, acq=Acquisition(5e9, 500_000, 1)):
    t = np.arange(acq.segment_length) / acq.sample_rate
    return np.sin(2 * np.pi * f * t)


def test_lowpass_passes_4MHz_tone():
    x = tone(4e6)
    y = lowpass(x, 20e6, 5e9)
    assert np.std(y) / np.std(x) == pytest.approx(1.0, abs=0.01)
    # zero-phase after delay compensation
    assert np.max(np.abs(y - x)) < 0.01


def test_lowpass_rejects_100MHz_tone():
    x = tone(100e6)
    assert 20 * np.log10(np.std(lowpass(x, 20e6, 5e9)) / np.std(x)) <= -40


def test_filter_design_specs():
    fir = design_lowpass(20e6, 5e9)
    assert fir.taps.size % 2 == 1 and fir.group_delay == (fir.taps.size - 1) // 2
    assert np.allclose(fir.taps, fir.taps[::-1])          # linear phase
    pb = 20 * np.log10(np.abs(fir.response(np.linspace(0, 16e6, 400))))
    sb = 20 * np.log10(np.abs(fir.response(np.linspace(30e6, 2.5e9, 4000))) + 1e-300)
    assert np.ptp(pb) <= 0.1 and np.max(np.abs(pb)) <= 0.1
    assert np.max(sb) <= -40


def test_white_noise_follows_magnitude_response():
    acq = Acquisition(1e9, 20_000, 50)
    ts = lowpass(white_traces([1, 1, 1, 1], seed=5, acq=acq), 20e6)
    est = segment_spectra(ts)
    fir = design_lowpass(20e6, 1e9)
    p = est.variance[0]
    H2 = np.abs(fir.response(est.freqs)) ** 2
    # compare 1 MHz-wide band averages where the response is above -30 dB
    for lo in np.arange(0, 28e6, 1e6):
        sel = (est.freqs >= lo) & (est.freqs < lo + 1e6) & (est.freqs > 0)
        if np.mean(H2[sel]) < 1e-3:
            continue
        assert abs(10 * np.log10(np.mean(p[sel]) / np.mean(H2[sel]))) <= 0.5
    assert ts.meta["group_delay"] == fir.group_delay


def test_lowpass_errors():
    with pytest.raises(ValueError, match="Nyquist"):
        design_lowpass(3e9, 5e9)
    with pytest.raises(ValueError):
        lowpass(np.zeros(100), 1e6)
    with pytest.raises(ValueError, match="shorter"):
        lowpass(np.zeros(20), 1e6, 1e8)


# --------------------------------------------------------------------------
# spectra


def test_bin_centred_tone_concentrates_in_one_bin():
    acq = Acquisition(FS, N, 2)
    f = 40 * FS / N
    t = np.arange(acq.n_samples) / FS
    data = np.tile(np.cos(2 * np.pi * f * t), (4, 1)).astype(np.float32)
    est = segment_spectra(TraceSet(data, acq, DC))
    p = est.variance[0]
    assert p[40] / p.sum() > 1 - 1e-9


def test_parseval_and_white_level():
    ts = white_traces([1.0, 2.0, 3.0, 4.0], seed=2)
    est = segment_spectra(ts)
    assert np.max(est.parseval_error) <= 1e-6
    mean_level = est.variance[:, 1:-1].mean(axis=1)
    assert np.allclose(mean_level, [1, 2, 3, 4], rtol=0.01)
    assert np.allclose(est.stderr[:, 5], est.variance[:, 5] / np.sqrt(NSEG), rtol=0.5)


def test_window_keeps_white_level():
    ts = white_traces([1.0, 1.0, 1.0, 1.0], seed=6)
    a = segment_spectra(ts, window="hann").variance[:, 1:-1].mean()
    assert a == pytest.approx(1.0, rel=0.02)


def test_band_outside_spectrum():
    est = segment_spectra(white_traces([1, 1, 1, 1]), F_MAX)
    with pytest.raises(ValueError):
        band_indices(est, 9.9e6, 50)


# --------------------------------------------------------------------------
# alpha / beta


def _est(K, seed=0, delays=None, dc=DC, acq=ACQ):
    return segment_spectra(synthesize_traces(K, dc, acq, seed=seed, delays=delays), F_MAX)


def test_identical_channels_alpha_one():
    K = np.ones((4, 4))
    dc = {k: 1.0 for k in CHANNELS}
    fit = fit_alpha(_est(K, dc=dc), 1, F0, HW)
    assert fit.value == pytest.approx(1.0, abs=1e-6)
    assert fit.minimum <= 1e-10 and not fit.weak


@pytest.mark.parametrize("tau", [10.0, 3.5, -7.0])
def test_delay_phase_recovered(tau):
    K = np.full((4, 4), 1.0) + 1e-3 * np.eye(4)
    fit = fit_alpha(_est(K, delays={-1: tau}), 1, F0, HW)
    assert fit.phase == pytest.approx(2 * np.pi * F0 * tau / FS, abs=1e-3)
    assert fit.modulus == pytest.approx(DC[1] / DC[-1])


def test_independent_channels_flagged_weak():
    est = _est(np.eye(4), seed=1)
    dc = {k: 1.0 for k in CHANNELS}
    est.dc_levels.update(dc)
    fit = fit_alpha(est, 1, F0, HW)
    assert fit.weak
    band = band_indices(est, F0, HW)
    total = np.mean(abs(est.channel(1)[:, band]) ** 2) + np.mean(abs(est.channel(-1)[:, band]) ** 2)
    assert fit.minimum == pytest.approx(total, rel=0.03)


def test_zero_dc_rejected():
    est = _est(np.eye(4))
    est.dc_levels[-1] = 0.0
    with pytest.raises(ValueError, match="-1"):
        fit_alpha(est, 1, F0, HW)


def test_phase_models_and_free_modulus():
    K = np.full((4, 4), 1.0) + 1e-7 * np.eye(4)
    K[1, :] *= 0.5
    K[:, 1] *= 0.5                 # channel -1 carries half the amplitude of channel 1
    est = _est(K, delays={-1: 2.0})
    free = fit_alpha(est, 1, F0, HW, free_modulus=True)
    assert free.modulus == pytest.approx(K[0, 1] / K[1, 1], rel=1e-3)   # least squares
    const = fit_alpha(est, 1, F0, HW, phase_model="constant")
    per_bin = fit_alpha(est, 1, F0, HW, phase_model="per_bin")
    band = band_indices(est, F0, HW)
    expect = 2 * np.pi * est.freqs[band] * 2.0 / FS
    assert np.allclose(per_bin.bin_phases, expect, atol=1e-3)
    assert const.phase == pytest.approx(2 * np.pi * F0 * 2.0 / FS, abs=2e-3)
    with pytest.raises(ValueError):
        fit_alpha(est, 1, F0, HW, phase_model="spline")


def coherent_pairs(eps):
    """I1 = z, I2 = -z/2 and weak independent partners: C = D1 + 2 D2 cancels z."""
    K = np.diag([0.0, eps, 0.0, eps])
    K[0, 0], K[2, 2], K[0, 2], K[2, 0] = 1.0, 0.25, -0.5, -0.5
    return K


def test_beta_recovers_interpair_delay():
    tau = 6.0
    dc = {k: 1.0 for k in CHANNELS}
    est = _est(coherent_pairs(1e-4), delays={2: tau, -2: tau}, dc=dc, seed=7)
    a1, a2 = fit_alpha(est, 1, F0, HW), fit_alpha(est, 2, F0, HW)
    beta = fit_beta(est, a1, a2, F0, HW)
    assert beta.modulus == 1.0
    assert beta.phase == pytest.approx(2 * np.pi * F0 * tau / FS, abs=1e-3)


def test_constructed_cancellation():
    dc = {k: 1.0 for k in CHANNELS}
    est = _est(coherent_pairs(1e-7), dc=dc, seed=8)
    a1, a2 = fit_alpha(est, 1, F0, HW), fit_alpha(est, 2, F0, HW)
    beta = fit_beta(est, a1, a2, F0, HW)
    cv = combined_variance(est, a1, a2, beta, F0, HW)
    assert cv.var_c <= 1e-3 * min(cv.var_d1, 4 * cv.var_d2)


def test_beta_free_modulus():
    dc = {k: 1.0 for k in CHANNELS}
    K = coherent_pairs(1e-6)
    K[2, :] *= 2
    K[:, 2] *= 2                  # I2 = -z: beta should shrink to 1/2
    est = _est(K, dc=dc, seed=2)
    a1, a2 = fit_alpha(est, 1, F0, HW), fit_alpha(est, 2, F0, HW)
    assert fit_beta(est, a1, a2, F0, HW, free_modulus=True).modulus == pytest.approx(0.5, rel=1e-3)


def test_beta_with_empty_second_pair():
    K = np.diag([1.0, 1.0, 0.0, 0.0])
    est = _est(K)
    a1, a2 = fit_alpha(est, 1, F0, HW), BalanceFit(1.0, F0)
    beta = fit_beta(est, a1, a2, F0, HW)
    assert beta.value == 1.0 and beta.weak
    cv = combined_variance(est, a1, a2, beta, F0, HW)
    assert cv.var_c == cv.var_d1


def test_weights_one_zero_reduce_to_pair():
    est = _est(design((-2.0, -1.0), neutral_c_db((-2.0, -1.0)) - 0.3), seed=5)
    a1, a2 = fit_alpha(est, 1, F0, HW), fit_alpha(est, 2, F0, HW)
    beta = fit_beta(est, a1, a2, F0, HW)
    cv = combined_variance(est, a1, a2, beta, F0, HW, weights=(1.0, 0.0))
    assert cv.var_c == cv.var_d1 and cv.stderr_c == cv.stderr_d1


def test_shot_noise_channels_give_zero_db():
    res = process(white_traces([SNL[k] for k in CHANNELS], seed=11), CAL, F0, HW, f_max=F_MAX)
    for m in (res.d1, res.d2, res.c):
        assert abs(m.db) <= 3 * m.db_err + 0.02


# --------------------------------------------------------------------------
# calibration and normalization


def calibration_runs(levels, classical=0.0, seed=0):
    runs = []
    for i, lv in enumerate(levels):
        dc = {k: lv * v for k, v in DC.items()}
        var = [SLOPE * dc[k] + classical * dc[k] ** 2 for k in CHANNELS]
        runs.append(white_traces(var, seed=100 + seed + i, dc=dc))
    return runs


def test_calibration_recovers_slope():
    curves = shot_noise_calibration(calibration_runs([0.25, 0.5, 0.75, 1.0, 1.5]), F0, HW)
    for k in CHANNELS:
        assert curves[k].slope == pytest.approx(SLOPE, rel=0.02)
        assert curves[k].residual_rms < 0.05
        assert curves[k].snl(0.0) == 0.0


def test_classical_noise_rejected():
    with pytest.raises(CalibrationError, match="rejected"):
        shot_noise_calibration(calibration_runs([0.25, 0.5, 0.75, 1.0], classical=4.0), F0, HW)


def test_calibration_needs_four_levels():
    with pytest.raises(CalibrationError, match="need >= 4 levels"):
        shot_noise_calibration(calibration_runs([1.0]), F0, HW)
    with pytest.raises(CalibrationError, match="need >= 4 levels"):
        fit_calibration(1, [1.0, 2.0], [1.0, 2.0])


def test_calibration_monotonicity():
    with pytest.raises(CalibrationError, match="not monotone"):
        fit_calibration(1, [1, 2, 3, 4], [1.0, 2.0, 1.5, 4.0])
    with pytest.raises(CalibrationError, match="strictly increasing"):
        fit_calibration(1, [1, 2, 2, 4], [1.0, 2.0, 3.0, 4.0])


def test_normalize_composites():
    s1 = SNL[1] + (DC[1] / DC[-1]) ** 2 * SNL[-1]
    s2 = SNL[2] + (DC[2] / DC[-2]) ** 2 * SNL[-2]
    alphas = (DC[1] / DC[-1], DC[2] / DC[-2])
    assert normalize_to_snl(s1, DC, CAL, 1, alphas).db == pytest.approx(0.0, abs=1e-12)
    assert normalize_to_snl(s2, DC, CAL, 2, alphas).db == pytest.approx(0.0, abs=1e-12)
    assert normalize_to_snl(s1 + 4 * s2, DC, CAL, "C", alphas).db == pytest.approx(0, abs=1e-12)


def test_missing_calibration_names_detector():
    cal = {k: v for k, v in CAL.items() if k != -2}
    with pytest.raises(CalibrationError, match="-2"):
        normalize_to_snl(1.0, DC, cal, 2)
    with pytest.raises(CalibrationError, match="-2"):
        process(white_traces([1, 1, 1, 1]), cal, F0, HW, f_max=F_MAX)


@given(st.floats(0.1, 10.0))
def test_normalization_scale_invariance(gain):
    dc2 = {k: gain * v for k, v in DC.items()}
    a = normalize_to_snl(3.0, DC, CAL, "C", (1.1, 0.9), 1.0)
    b = normalize_to_snl(3.0 * gain, dc2, CAL, "C", (1.1, 0.9), 1.0)
    assert a.db == pytest.approx(b.db, abs=1e-12)


def test_global_gain_invariance_end_to_end():
    ts = synthesize_traces(design((-2.5, -1.0), -2.0), DC, ACQ, seed=12)
    ref = process(ts, CAL, F0, HW, f_max=F_MAX)
    g = 2.0                                   # exact in binary floating point
    ts2 = TraceSet(ts.data * g, ACQ, {k: g * v for k, v in DC.items()})
    cal2 = {k: CalibrationCurve(k, SLOPE * g, c.dc_levels, c.variances, 0.0) for k, c in CAL.items()}
    out = process(ts2, cal2, F0, HW, f_max=F_MAX)
    for m, n in ((ref.d1, out.d1), (ref.d2, out.d2), (ref.c, out.c)):
        assert m.db == pytest.approx(n.db, abs=1e-9)


def test_process_report_and_rows():
    res = process(synthesize_traces(design((-2.5, -1.0), -2.0), DC, ACQ, seed=1), CAL, F0, HW,
                  lowpass_hz=20e6, f_max=F_MAX)
    rep = res.report()
    assert {"D1_dB", "D2_dB", "C_dB", "alpha1_arg", "beta_abs"} <= set(rep)
    assert res.spectrum_rows and all(r["freq_Hz"] < F_MAX for r in res.spectrum_rows)


@settings(max_examples=6)
@given(st.integers(0, 10_000))
def test_round_trip_random_psd_target(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((4, 6))
    K = X @ X.T / 6
    est = _est(K, seed=seed)
    for k in (1, 2):
        i, j = CHANNELS.index(k), CHANNELS.index(-k)
        a = DC[k] / DC[-k]
        truth = K[i, i] + a * a * K[j, j] - 2 * a * abs(K[i, j])
        fit = fit_alpha(est, k, F0, HW, phase_model="constant")
        band = band_indices(est, F0, HW)
        D = est.channel(k)[:, band] - fit.at(est.freqs[band]) * est.channel(-k)[:, band]
        per_seg = np.mean(abs(D) ** 2, axis=1)
        err = np.std(per_seg, ddof=1) / np.sqrt(NSEG)
        assert abs(per_seg.mean() - truth) <= 3 * err


# --------------------------------------------------------------------------
# file formats


def test_binary_round_trip(tmp_path):
    ts = white_traces([1, 2, 3, 4], seed=3)
    write_traces(tmp_path / "t.kct", ts)
    back = read_traces(tmp_path / "t.kct")
    assert np.array_equal(back.data, ts.data) and back.dc_levels == ts.dc_levels
    assert back.acquisition == ts.acquisition and back.labels == ts.labels


def test_csv_round_trip_and_equivalence(tmp_path):
    acq = Acquisition(FS, N, 4)
    ts = synthesize_traces(design((-2.5, -1.0), -2.0), DC, acq, seed=2)
    write_csv(tmp_path / "t.csv", ts)
    back = read_csv(tmp_path / "t.csv")
    assert np.array_equal(back.data, ts.data) and back.dc_levels == ts.dc_levels
    a = process(ts, CAL, F0, HW, f_max=F_MAX).report()
    b = process(back, CAL, F0, HW, f_max=F_MAX).report()
    assert a == b


def test_bad_files(tmp_path):
    (tmp_path / "x.kct").write_bytes(b"garbage\n")
    with pytest.raises(TraceFormatError):
        read_traces(tmp_path / "x.kct")
    ts = white_traces([1, 1, 1, 1])
    write_traces(tmp_path / "t.kct", ts)
    raw = (tmp_path / "t.kct").read_bytes()
    (tmp_path / "t.kct").write_bytes(raw[:-8])
    with pytest.raises(TraceFormatError, match="expected"):
        read_traces(tmp_path / "t.kct")
    (tmp_path / "n.csv").write_text("1,-1\n0.1,0.2\n")
    with pytest.raises(TraceFormatError, match="sample_rate"):
        read_csv(tmp_path / "n.csv")
