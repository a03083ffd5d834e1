"""Run configuration: TOML file with params / sweep / oracle / dsp / output blocks."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .params import LINEWIDTH_HZ, PUMP_WAVELENGTH, ParameterError, SystemParams, \
    _default_g, default_params, dispersion_detuning

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "RunConfig", "load_config", "DEFAULTS"]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key that caused it."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# Every accepted key with its default. ``None`` means "derive it".
DEFAULTS: dict = {
    "params": {
        "M": 2,
        "linewidth_hz": LINEWIDTH_HZ,
        "kappa_ext_ratio": 0.6,
        "delta0_over_kappa": 0.0,
        "D2_over_kappa": 2.0,
        "detuning_over_kappa": None,     # explicit per-mode list overrides delta0/D2
        "g": None,                       # rad/s; derived from target_threshold_w if absent
        "target_threshold_w": 53e-3,
        "pump_power_w": 1.13 * 53e-3,
        "eta_F": 0.90,
        "eta_g": 0.94,
        "eta_opt": 0.97,
        "eta_pd": 0.88,
        "electronic_noise_rel": 0.0,
        "pump_wavelength_m": PUMP_WAVELENGTH,
    },
    "sweep": {
        "p_over_pth": [1.05, 1.10, 1.15, 1.20, 1.25, 1.30, 1.35],
        "omega_hz": 4e6,
        "M_meas": 2,
    },
    "oracle": {
        "M": 2,
        "cutoff": 3,
        "alpha_pump": 1.0,
        "g": 1.0,
        "t_grid": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
        "max_dim": 2_000_000,
    },
    "dsp": {
        "sample_rate": 5e9,
        "segment_length": 500_000,
        "n_segments": 50,
        "seed": 0,
        "omega_hz": 4e6,
        "halfwidth": 50,
        "lowpass_hz": 20e6,
        "phase_model": "delay",
        "free_modulus": False,
        "weights": [1.0, 2.0],
        "dc_levels": {"1": 1.0, "-1": 0.9, "2": 0.5, "-2": 0.45},
        "snl_per_dc": 2.0,
        "pair_db": [-2.5, -1.0],
        "c_db": -2.0,
        "excess": 1e4,
        "delays": {"-1": 10.0},
        "calibration_levels": [0.25, 0.5, 0.75, 1.0],
        "calibration_segments": None,   # default: same as n_segments
        "source": "design",             # or "model": use the linearized comb spectrum
        "model_p_over_pth": 1.05,
    },
    "output": {
        "dir": "out",
    },
}


def _merge(defaults: dict, given: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(here, "unknown key")
        if isinstance(defaults[key], dict) and key != "dc_levels" and key != "delays":
            if not isinstance(value, dict):
                raise ConfigError(here, "expected a table")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, given: dict | None = None) -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, given or {}))
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    @property
    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_(self, **blocks) -> "RunConfig":
        """Copy with some keys of some blocks replaced, e.g. ``with_(dsp={'seed': 3})``."""
        given = copy.deepcopy(self.data)
        for block, values in blocks.items():
            if block not in given:
                raise ConfigError(block, "unknown key")
            given[block] = {**given[block], **values}
        return RunConfig.from_dict(given)

    # ------------------------------------------------------------------
    def system_params(self) -> SystemParams:
        p = self.data["params"]
        try:
            M = p["M"]
            if not isinstance(M, int) or isinstance(M, bool):
                raise ParameterError("M", "must be an integer")
            kappa = 2 * np.pi * float(p["linewidth_hz"])
            n = 2 * M + 1 if M >= 0 else 1
            if p["detuning_over_kappa"] is not None:
                det = kappa * np.asarray(p["detuning_over_kappa"], float)
            else:
                det = dispersion_detuning(max(M, 0), kappa * p["delta0_over_kappa"],
                                          kappa * p["D2_over_kappa"])
            kw = dict(
                kappa_total=np.full(n, kappa),
                kappa_ext=np.full(n, p["kappa_ext_ratio"] * kappa),
                detuning=det,
                pump_power=float(p["pump_power_w"]),
                eta_F=p["eta_F"], eta_g=p["eta_g"], eta_opt=p["eta_opt"], eta_pd=p["eta_pd"],
                electronic_noise_rel=p["electronic_noise_rel"],
                pump_wavelength=p["pump_wavelength_m"],
            )
            if p["g"] is not None:
                kw["g"] = float(p["g"])
            elif not p["kappa_ext_ratio"] > 0 or not p["target_threshold_w"] > 0:
                bad = "kappa_ext_ratio" if not p["kappa_ext_ratio"] > 0 else "target_threshold_w"
                raise ConfigError(f"params.{bad}", "must be positive")
            else:
                kw["g"] = _default_g(kappa, p["kappa_ext_ratio"] * kappa,
                                     float(p["target_threshold_w"]), p["pump_wavelength_m"])
            return default_params(M, **kw)
        except ConfigError:
            raise
        except ParameterError as exc:
            raise ConfigError(f"params.{_param_key(exc.name)}", str(exc)) from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError("params", str(exc)) from exc

    def validate(self) -> None:
        self.system_params()
        s = self.data["sweep"]
        grid = np.asarray(s["p_over_pth"], float)
        if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ConfigError("sweep.p_over_pth", "need a strictly increasing list of positive values")
        if not s["omega_hz"] > 0:
            raise ConfigError("sweep.omega_hz", "must be > 0")
        if not 1 <= s["M_meas"] <= self.data["params"]["M"]:
            raise ConfigError("sweep.M_meas", "must lie in [1, params.M]")
        o = self.data["oracle"]
        if not isinstance(o["M"], int) or o["M"] < 1:
            raise ConfigError("oracle.M", "must be an integer >= 1")
        t = np.asarray(o["t_grid"], float)
        if t.ndim != 1 or t.size == 0 or np.any(t < 0):
            raise ConfigError("oracle.t_grid", "need a list of non-negative times")
        d = self.data["dsp"]
        if d["phase_model"] not in ("delay", "constant", "per_bin"):
            raise ConfigError("dsp.phase_model", "must be delay, constant or per_bin")
        if d["source"] not in ("design", "model"):
            raise ConfigError("dsp.source", "must be design or model")
        if not isinstance(d["halfwidth"], int) or d["halfwidth"] < 0:
            raise ConfigError("dsp.halfwidth", "must be a non-negative integer")
        if set(map(int, d["dc_levels"])) != {1, -1, 2, -2}:
            raise ConfigError("dsp.dc_levels", "need levels for channels 1, -1, 2, -2")
        if len(d["weights"]) != 2:
            raise ConfigError("dsp.weights", "need two weights")
        if len(d["calibration_levels"]) < 1:
            raise ConfigError("dsp.calibration_levels", "need at least one level")
        if not d["sample_rate"] > 2 * d["omega_hz"]:
            raise ConfigError("dsp.sample_rate", "must exceed twice the analysis frequency")


def _param_key(name: str) -> str:
    return {"kappa_ext": "kappa_ext_ratio", "kappa_total": "linewidth_hz",
            "detuning": "detuning_over_kappa", "pump_power": "pump_power_w",
            "pump_wavelength": "pump_wavelength_m"}.get(name, name)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    try:
        with open(path, "rb") as fh:
            given = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"malformed TOML: {exc}") from exc
    return RunConfig.from_dict(given)
