"""Command-line entry point: ``kerrcomb {threshold,sweep,oracle,dsp} [config.toml]``.

Exit codes: 0 success, 1 configuration error, 2 domain condition (no
threshold, dark mode, missing calibration, dimension overflow), 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dsp
from .config import ConfigError, RunConfig, load_config
from .fluctuations import (DarkModeError, UnstableStateError, apply_detection_chain,
                           carlos_noise, intensity_covariance, intensity_diff_noise,
                           output_amplitudes, output_spectrum, variance_decomposition)
from .fock import (DimensionError, FockSpace, build_fwm_hamiltonian, build_weighted_number,
                   coherent_state, commutator_norm, decomposition_check, evolve,
                   hermiticity_error, moments)
from .steady import NoThresholdError, SolverError, sweep_pump, threshold

__all__ = ["main", "cmd_threshold", "cmd_sweep", "cmd_oracle", "cmd_dsp_synth",
           "cmd_dsp_calibrate", "cmd_dsp_process", "EXIT_OK", "EXIT_CONFIG", "EXIT_DOMAIN",
           "EXIT_NUMERICAL"]

log = logging.getLogger("kerrcomb")

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_NUMERICAL = 0, 1, 2, 3

ORACLE_LIMITS = {"commutator": 1e-12, "hermiticity": 1e-12, "conservation": 1e-10,
                 "leakage": 1e-6, "decomposition": 1e-12}

NOISE_COLUMNS = ["branch", "P_over_Pth", "Omega_Hz", "status", "stable",
                 "var_n1_dB", "var_n2_dB", "varC_dB", "varBP_dB", "covMP_snu",
                 "var_n1_det_dB", "var_n2_det_dB", "varC_det_dB", "varBP_det_dB",
                 "covMP_det_snu"]


class DomainError(RuntimeError):
    """A well-posed request whose answer is a domain condition (exit code 2)."""


# --------------------------------------------------------------------------
# reports


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report(path: Path | None, report: dict) -> str:
    text = "".join(f"{k}={_fmt(v)}\n" for k, v in report.items())
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# threshold / sweep


def cmd_threshold(cfg: RunConfig) -> dict:
    params = cfg.system_params()
    th = threshold(params)
    return {"config_hash": cfg.hash, "P_th_W": th.P_th, "k_star": th.k_star,
            "x_th_photons": th.x_th}


def _db(x: float) -> float:
    return float(10 * np.log10(x))


def _noise_row(params, state, omega_hz: float, M_meas: int) -> dict:
    """Raw and detected noise figures at one sweep point (blank on dark modes)."""
    row: dict = {}
    spec = output_spectrum(params, state, 2 * np.pi * omega_hz)
    det = apply_detection_chain(spec, params.eta, params.electronic_noise_rel)
    for tag, S in (("", spec), ("_det", det)):
        for k in (1, 2):
            key = f"var_n{k}{tag}_dB"
            if k > params.M:
                row[key] = ""
                continue
            try:
                row[key] = intensity_diff_noise(params, state, S, k).db
            except DarkModeError:
                row[key] = "dark"
        try:
            d = variance_decomposition(params, state, S, M_meas).normalized()
            row[f"varC{tag}_dB"] = _db(d.var_c)
            row[f"varBP{tag}_dB"] = _db(d.var_bp)
            row[f"covMP{tag}_snu"] = d.cov_mp
        except DarkModeError:
            row[f"varC{tag}_dB"] = row[f"varBP{tag}_dB"] = row[f"covMP{tag}_snu"] = "dark"
    return row


def _point_job(args):
    params, state, stable, omega_hz, M_meas = args
    if not stable:
        return {"status": "unstable"}
    try:
        return {"status": "ok", **_noise_row(params, state, omega_hz, M_meas)}
    except UnstableStateError:
        return {"status": "unstable"}


def cmd_sweep(cfg: RunConfig, workers: int = 1) -> dict:
    params = cfg.system_params()
    s = cfg["sweep"]
    th = threshold(params)
    grid = np.asarray(s["p_over_pth"], float)
    branches = sweep_pump(params, th.P_th * grid)
    out = _out_dir(cfg)
    jobs, keys = [], []
    for br in branches:
        for pt in br.points:
            jobs.append((params, pt.state, pt.stable, s["omega_hz"], s["M_meas"]))
            keys.append((br.label, pt.P / th.P_th, pt.stable))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_point_job, jobs))
    else:
        results = [_point_job(j) for j in jobs]

    rows = []
    for (label, rel, stable), res in zip(keys, results):
        rows.append({"branch": label, "P_over_Pth": rel, "Omega_Hz": s["omega_hz"],
                     "stable": stable, **res})
    for br in branches:
        done = np.array([p.P / th.P_th for p in br.points])
        for rel in grid:
            if not np.any(np.isclose(done, rel, rtol=1e-12)):
                rows.append({"branch": br.label, "P_over_Pth": float(rel),
                             "Omega_Hz": s["omega_hz"], "status": "solver_failed"})
    rows.sort(key=lambda r: (r["branch"], r["P_over_Pth"]))
    with open(out / "noise.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, NOISE_COLUMNS, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    with open(out / "branches.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        modes = [k for k in range(-params.M, params.M + 1)]
        w.writerow(["branch", "P_W", "P_over_Pth", "stable"]
                   + [f"absA_{k}" for k in modes] + [f"argA_{k}" for k in modes]
                   + [f"flux_out_{k}" for k in modes])
        for br in branches:
            for p in br.points:
                flux = np.abs(output_amplitudes(params, p.state)) ** 2
                w.writerow([br.label, repr(p.P), repr(p.P / th.P_th), _fmt(p.stable)]
                           + [repr(float(x)) for x in np.abs(p.state.A)]
                           + [repr(float(x)) for x in np.angle(p.state.A)]
                           + [repr(float(x)) for x in flux])
    n_ok = sum(r.get("status") == "ok" for r in rows)
    return {"config_hash": cfg.hash, "P_th_W": th.P_th, "k_star": th.k_star,
            "n_branches": len(branches), "n_points": len(rows), "n_ok": n_ok,
            "noise_csv": str(out / "noise.csv"), "branches_csv": str(out / "branches.csv")}


# --------------------------------------------------------------------------
# Fock oracle


def cmd_oracle(cfg: RunConfig) -> tuple[dict, bool]:
    """Run the invariant suite; returns (report, all_within_limits)."""
    o = cfg["oracle"]
    space = FockSpace(o["M"], o["cutoff"], o["max_dim"])
    H = build_fwm_hamiltonian(space, g=o["g"])
    C = build_weighted_number(space)
    psi0 = coherent_state(space, {0: o["alpha_pump"]})
    states = evolve(space, H, psi0, o["t_grid"])
    c_mean, c_var, h_mean = [], [], []
    for st in states:
        (mc, mh), cov = moments(space, st, [C, H])
        c_mean.append(mc)
        c_var.append(cov[0, 0])
        h_mean.append(mh)
    M_meas = o["M"]
    dec = max(decomposition_check(space, st, M_meas).residual for st in states)
    rep = {
        "config_hash": cfg.hash,
        "dimension": space.dim,
        "commutator": commutator_norm(C, H),
        "hermiticity": hermiticity_error(H),
        "C_mean_drift": float(np.ptp(c_mean)),
        "C_var_drift": float(np.ptp(c_var)),
        "H_mean_drift": float(np.ptp(h_mean)),
        "leakage": max(st.escape_population for st in states),
        "top_layer_population": max(st.top_layer_population for st in states),
        "norm_error": max(abs(st.norm - 1) for st in states),
        "decomposition": dec,
    }
    checks = {
        "commutator": rep["commutator"],
        "hermiticity": rep["hermiticity"],
        "conservation": max(rep["C_mean_drift"], rep["C_var_drift"]),
        "leakage": rep["leakage"],
        "decomposition": dec,
    }
    ok = True
    for name, value in checks.items():
        passed = value <= ORACLE_LIMITS[name]
        rep[f"{name}_pass"] = passed
        ok &= passed
    return rep, ok


# --------------------------------------------------------------------------
# DSP


def _acquisition(d: dict, n_segments: int | None = None) -> dsp.Acquisition:
    return dsp.Acquisition(float(d["sample_rate"]), int(d["segment_length"]),
                           int(n_segments or d["n_segments"]))


def _dc(d: dict) -> dict[int, float]:
    return {int(k): float(v) for k, v in d["dc_levels"].items()}


def _model_target(cfg: RunConfig) -> tuple[np.ndarray, dict[int, float], dict]:
    """Photocurrent covariance from the linearized comb at model_p_over_pth."""
    d = cfg["dsp"]
    params = cfg.system_params()
    if params.M < 2:
        raise DomainError("model source needs params.M >= 2")
    th = threshold(params)
    P = d["model_p_over_pth"] * th.P_th
    branch = sweep_pump(params, [P])[0]
    if not branch.points:
        raise SolverError("no steady state at the requested pump power")
    state = branch.points[0].state
    spec = apply_detection_chain(output_spectrum(params, state, 2 * np.pi * d["omega_hz"]),
                                 params.eta, params.electronic_noise_rel)
    labels = dsp.CHANNELS
    cov = intensity_covariance(params, state, spec, labels)
    flux_all = np.abs(output_amplitudes(params, state)) ** 2
    flux = np.array([flux_all[params.index(k)] for k in labels])
    if np.any(flux <= 0):
        raise DarkModeError("model comb has dark sidebands at this power")
    dc = {k: float(f / flux[0]) for k, f in zip(labels, flux)}
    snl = np.array([d["snl_per_dc"] * dc[k] for k in labels])
    K = dsp.covariance_from_noise(cov, flux, snl)
    expected = {
        "expected_D1_dB": intensity_diff_noise(params, state, spec, 1).db,
        "expected_D2_dB": intensity_diff_noise(params, state, spec, 2).db,
        "expected_C_dB": carlos_noise(params, state, spec, 2).db,
    }
    return K, dc, expected


def cmd_dsp_synth(cfg: RunConfig, fmt: str = "bin") -> dict:
    d = cfg["dsp"]
    out = _out_dir(cfg)
    if d["source"] == "model":
        K, dc, expected = _model_target(cfg)
    else:
        dc = _dc(d)
        snl = {k: d["snl_per_dc"] * v for k, v in dc.items()}
        r = [10 ** (x / 10) for x in d["pair_db"]]
        K = dsp.design_intensity_covariance(snl, dc, tuple(r), 10 ** (d["c_db"] / 10),
                                            d["excess"], tuple(d["weights"]))
        expected = {"expected_D1_dB": d["pair_db"][0], "expected_D2_dB": d["pair_db"][1],
                    "expected_C_dB": d["c_db"]}
    delays = {int(k): float(v) for k, v in d["delays"].items()}
    ts = dsp.synthesize_traces(K, dc, _acquisition(d), seed=int(d["seed"]), delays=delays)
    ext = ".csv" if fmt == "csv" else ".kct"
    writer = dsp.write_csv if fmt == "csv" else dsp.write_traces
    writer(out / f"traces{ext}", ts)
    cal_files = []
    for i, level in enumerate(d["calibration_levels"]):
        cdc = {k: level * v for k, v in dc.items()}
        target = np.diag([d["snl_per_dc"] * cdc[k] for k in dsp.CHANNELS])
        cal = dsp.synthesize_traces(target, cdc, _acquisition(d, d["calibration_segments"]),
                                    seed=int(d["seed"]) + 1 + i)
        path = out / f"calibration_{i}{ext}"
        writer(path, cal)
        cal_files.append(str(path))
    return {"config_hash": cfg.hash, "traces": str(out / f"traces{ext}"),
            "calibration_files": ",".join(cal_files), **expected}


def _read(path: str) -> dsp.TraceSet:
    return dsp.read_csv(path) if str(path).endswith(".csv") else dsp.read_traces(path)


def cmd_dsp_calibrate(cfg: RunConfig, files: list[str]) -> dict:
    d = cfg["dsp"]
    runs = [_read(f) for f in files]
    curves = dsp.shot_noise_calibration(runs, d["omega_hz"], d["halfwidth"])
    out = _out_dir(cfg)
    payload = {"omega_hz": d["omega_hz"], "halfwidth": d["halfwidth"], "detectors": {
        str(k): {"slope": c.slope, "dc_levels": c.dc_levels.tolist(),
                 "variances": c.variances.tolist(), "residual_rms": c.residual_rms}
        for k, c in curves.items()}}
    (out / "calibration.json").write_text(json.dumps(payload, indent=2))
    rep = {"config_hash": cfg.hash, "calibration": str(out / "calibration.json")}
    for k, c in curves.items():
        rep[f"slope_{k:+d}"] = c.slope
        rep[f"residual_rms_{k:+d}"] = c.residual_rms
    return rep


def load_calibration(path) -> dict[int, dsp.CalibrationCurve]:
    raw = json.loads(Path(path).read_text())
    return {int(k): dsp.CalibrationCurve(int(k), v["slope"], np.asarray(v["dc_levels"]),
                                         np.asarray(v["variances"]), v["residual_rms"])
            for k, v in raw["detectors"].items()}


def cmd_dsp_process(cfg: RunConfig, traces_path: str, calibration_path: str) -> dict:
    d = cfg["dsp"]
    ts = _read(traces_path)
    cal = load_calibration(calibration_path)
    res = dsp.process(ts, cal, f0=d["omega_hz"], halfwidth=d["halfwidth"],
                      lowpass_hz=d["lowpass_hz"] or None, phase_model=d["phase_model"],
                      free_modulus=d["free_modulus"], weights=tuple(d["weights"]))
    out = _out_dir(cfg)
    if res.spectrum_rows:
        with open(out / "variance_vs_frequency.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, list(res.spectrum_rows[0]))
            w.writeheader()
            for r in res.spectrum_rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})
    return {"config_hash": cfg.hash, "omega_hz": d["omega_hz"], **res.report()}


# --------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", nargs="?", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override dsp.seed")
    common.add_argument("--omega-hz", type=float, help="analysis frequency (Hz)")
    common.add_argument("--out-dir", help="override output.dir")
    common.add_argument("--halfwidth", type=int, help="analysis band half-width (bins)")
    common.add_argument("--segments", type=int, help="override dsp.n_segments")
    common.add_argument("--segment-length", type=int, help="override dsp.segment_length")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kerrcomb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("threshold", parents=[common], help="pump oscillation threshold")
    sw = sub.add_parser("sweep", parents=[common], help="noise versus pump power")
    sw.add_argument("--workers", type=int, default=1)
    sub.add_parser("oracle", parents=[common], help="exact Fock-space invariant suite")
    dp = sub.add_parser("dsp", help="photocurrent pipeline")
    dsub = dp.add_subparsers(dest="dsp_command", required=True)
    sy = dsub.add_parser("synth", parents=[common], help="synthesize signal + calibration traces")
    sy.add_argument("--format", choices=("bin", "csv"), default="bin")
    ca = dsub.add_parser("calibrate", parents=[common], help="shot-noise calibration")
    ca.add_argument("--runs", nargs="+", required=True, help="calibration trace files")
    pr = dsub.add_parser("process", parents=[common], help="balance and normalize a record")
    pr.add_argument("--traces", required=True)
    pr.add_argument("--calibration", required=True, help="calibration JSON")
    return p


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    over: dict = {}
    if args.seed is not None:
        over.setdefault("dsp", {})["seed"] = args.seed
    if args.omega_hz is not None:
        over.setdefault("dsp", {})["omega_hz"] = args.omega_hz
        over.setdefault("sweep", {})["omega_hz"] = args.omega_hz
    if args.halfwidth is not None:
        over.setdefault("dsp", {})["halfwidth"] = args.halfwidth
    if args.segments is not None:
        over.setdefault("dsp", {})["n_segments"] = args.segments
    if args.segment_length is not None:
        over.setdefault("dsp", {})["segment_length"] = args.segment_length
    if args.out_dir is not None:
        over["output"] = {"dir": args.out_dir}
    return cfg.with_(**over) if over else cfg


def _run(args) -> int:
    cfg = _resolve(args)
    out = Path(cfg["output"]["dir"])
    code = EXIT_OK
    if args.command == "threshold":
        rep, name = cmd_threshold(cfg), "threshold"
    elif args.command == "sweep":
        rep, name = cmd_sweep(cfg, args.workers), "sweep"
    elif args.command == "oracle":
        rep, ok = cmd_oracle(cfg)
        name = "oracle"
        code = EXIT_OK if ok else EXIT_NUMERICAL
    elif args.dsp_command == "synth":
        rep, name = cmd_dsp_synth(cfg, args.format), "dsp_synth"
    elif args.dsp_command == "calibrate":
        rep, name = cmd_dsp_calibrate(cfg, args.runs), "dsp_calibrate"
    else:
        rep, name = cmd_dsp_process(cfg, args.traces, args.calibration), "dsp_process"
    sys.stdout.write(write_report(out / f"{name}_report.txt", rep))
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoThresholdError, DarkModeError, DimensionError, dsp.CalibrationError,
            DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (SolverError, UnstableStateError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, dsp.TraceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
