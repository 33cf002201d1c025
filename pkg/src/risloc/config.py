"""
Experiment configuration files (TOML).

Keys follow the usual symbols of the system model (``f_c``, ``N``,
``delta_f``, ``T``, ``M_side``, ``d_over_lambda``, ``delta``,
``N_prime_factor`` ...). Omitted keys take the reference-scenario defaults;
unknown sections or keys are rejected with the offending line number.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .estimator import EstimatorConfig
from .geometry import RisGeometry, build_geometry, rotation_from_euler
from .montecarlo import Campaign, CodebookSpec
from .signal import SystemConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and line when known."""


# section -> key -> default
DEFAULTS: dict[str, dict] = {
    "system": {
        "f_c": 28e9,
        "N": 3000,
        "delta_f": 120e3,
        "T": 100,
        "P_dBm": 23.0,
        "N_0_dBm_Hz": -174.0,
        "n_f_dB": 3.0,
        "c": 3e8,
    },
    "ris": {
        "p_r": [0.0, 0.0, 0.0],
        "euler_deg": [0.0, 0.0, 0.0],
        "R": None,
        "M_side": 100,
        "d_over_lambda": 0.25,
    },
    "codebook": {
        "kind": "random",
        "delta": 1.0,
        "aimed": False,
    },
    "estimator": {
        "N_prime_factor": 10,
        "grid_pitch": 0.7,
        "refine_pitch": 0.2,
        "refine_span": 4,
        "shells": 3,
        "epsilon": None,
        "max_iter": 200,
        "gtol": 1e-3,
        "gain_rule": "ls",
    },
    "campaign": {
        "distances": [2.0, 4.0, 6.0, 8.0, 10.0],
        "direction": [1.0, 1.0, 1.0],
        "p_u": [10 / np.sqrt(3)] * 3,
        "profiles": 20,
        "noise_realizations": 5,
        "master_seed": 0,
        "L": 2,
        "nlos_power_dB": 0.0,
        "tau_max": 1e-6,
        "noiseless": False,
        "workers": 1,
        "cdf_distance": 11.0,
    },
    "heatmap": {
        "x": [-20.0, 20.0, 21],
        "y": [0.0, 20.0, 11],
        "mode": "physical",
        "seeds": 5,
        "reference": [10 / np.sqrt(3)] * 3,
    },
    "sweep": {
        "sides": [10, 20, 50, 100],
        "kinds": ["random", "directional"],
    },
}

_NUMBER = (int, float)
_CHOICES = {
    ("codebook", "kind"): ("random", "directional"),
    ("estimator", "gain_rule"): ("ls", "per_t_mean"),
    ("heatmap", "mode"): ("physical", "fixed"),
}


def _locate(text: str, section: str, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (or of the header itself)."""
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", s)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return i
    return None


@dataclass
class ExperimentConfig:
    """Resolved configuration: every section fully populated."""

    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    source: str | None = None

    # -- construction ---------------------------------------------------

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
        cfg = cls(source=source)
        for section, body in doc.items():
            line = _locate(text, section, None)
            where = f"{source}:{line}" if line else source
            if section not in DEFAULTS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            if not isinstance(body, dict):
                raise ConfigError(f"{where}: [{section}] must be a table")
            for key, value in body.items():
                line = _locate(text, section, key)
                where = f"{source}:{line}" if line else source
                try:
                    cfg.set(section, key, value)
                except ConfigError as exc:
                    raise ConfigError(f"{where}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    def set(self, section: str, key: str, value):
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]")
        default = DEFAULTS[section][key]
        value = _coerce(section, key, value, default)
        self.values[section][key] = value

    def override(self, assignment: str):
        """Apply ``section.key=value``; the value is parsed as a TOML literal."""
        if "=" not in assignment or "." not in assignment.split("=", 1)[0]:
            raise ConfigError(f"override '{assignment}' is not of the form section.key=value")
        lhs, rhs = assignment.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        try:
            value = tomllib.loads(f"v = {rhs.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = rhs.strip()
        try:
            self.set(section, key, value)
        except ConfigError as exc:
            raise ConfigError(f"--set {assignment}: {exc}") from None

    # -- views ----------------------------------------------------------

    def __getitem__(self, section) -> dict:
        return self.values[section]

    def system(self) -> SystemConfig:
        s = self["system"]
        return SystemConfig(
            carrier_hz=float(s["f_c"]),
            subcarriers=int(s["N"]),
            subcarrier_spacing_hz=float(s["delta_f"]),
            transmissions=int(s["T"]),
            tx_power_dbm=float(s["P_dBm"]),
            noise_psd_dbm_hz=float(s["N_0_dBm_Hz"]),
            noise_figure_db=float(s["n_f_dB"]),
            speed_of_light=float(s["c"]),
        )

    def orientation(self) -> np.ndarray:
        r = self["ris"]
        if r["R"] is not None:
            return np.asarray(r["R"], dtype=float)
        return rotation_from_euler(r["euler_deg"])

    def geometry(self, side: int | None = None) -> RisGeometry:
        r = self["ris"]
        lam = self.system().wavelength
        return build_geometry(np.asarray(r["p_r"], float), self.orientation(),
                              int(side or r["M_side"]), float(r["d_over_lambda"]) * lam, lam)

    def estimator(self) -> EstimatorConfig:
        e = self["estimator"]
        return EstimatorConfig(
            ifft_oversampling=int(e["N_prime_factor"]),
            grid_pitch=float(e["grid_pitch"]),
            refine_pitch=float(e["refine_pitch"]),
            refine_span=int(e["refine_span"]),
            shells=int(e["shells"]),
            range_tolerance=None if e["epsilon"] is None else float(e["epsilon"]),
            max_iterations=int(e["max_iter"]),
            gradient_tolerance=float(e["gtol"]),
            gain_rule=e["gain_rule"],
        )

    def codebook(self) -> CodebookSpec:
        c = self["codebook"]
        return CodebookSpec(kind=c["kind"], delta=float(c["delta"]), aimed=bool(c["aimed"]))

    def campaign(self, cache_dir=None) -> Campaign:
        c = self["campaign"]
        return Campaign(
            system=self.system(),
            geometry=self.geometry(),
            estimator=self.estimator(),
            codebook=self.codebook(),
            distances=tuple(float(d) for d in c["distances"]),
            direction=tuple(float(v) for v in c["direction"]),
            profile_count=int(c["profiles"]),
            noise_count=int(c["noise_realizations"]),
            master_seed=int(c["master_seed"]),
            nlos_paths=int(c["L"]),
            nlos_power_db=float(c["nlos_power_dB"]),
            nlos_max_delay=float(c["tau_max"]),
            noiseless=bool(c["noiseless"]),
            workers=int(c["workers"]),
            cache_dir=None if cache_dir is None else str(cache_dir),
        )

    def as_dict(self) -> dict:
        """JSON-ready copy of the resolved values (None entries dropped)."""
        return {s: {k: _plain(v) for k, v in body.items() if v is not None}
                for s, body in self.values.items()}

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_toml(self) -> str:
        lines = []
        for section, body in self.as_dict().items():
            lines.append(f"[{section}]")
            for k, v in body.items():
                lines.append(f"{k} = {_toml_value(v)}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_dict(cls, data: dict, source="<manifest>") -> "ExperimentConfig":
        cfg = cls(source=source)
        for section, body in data.items():
            for k, v in body.items():
                try:
                    cfg.set(section, k, v)
                except ConfigError as exc:
                    raise ConfigError(f"{source}: {exc}") from None
        return cfg


def _coerce(section, key, value, default):
    choices = _CHOICES.get((section, key))
    if choices is not None:
        if value not in choices:
            raise ConfigError(f"{section}.{key} must be one of {', '.join(choices)}; got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{section}.{key} must be an integer; got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, _NUMBER):
            raise ConfigError(f"{section}.{key} must be a number; got {value!r}")
        return float(value)
    if isinstance(default, list) or default is None:
        if default is None and isinstance(value, _NUMBER) and not isinstance(value, bool):
            return float(value)
        if not isinstance(value, list):
            raise ConfigError(f"{section}.{key} must be an array; got {value!r}")
        return value
    return value


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def grid_axis(spec) -> np.ndarray:
    """``[start, stop, count]`` to a linspace."""
    if len(spec) != 3:
        raise ConfigError(f"grid axis must be [start, stop, count]; got {spec!r}")
    return np.linspace(float(spec[0]), float(spec[1]), int(spec[2]))


def check(cfg: ExperimentConfig) -> tuple[list[str], list[str]]:
    """
    Static consistency checks.

    Returns
    -------
    errors, warnings : list of str
    """
    errors, warnings = [], []
    s, r, c = cfg["system"], cfg["ris"], cfg["campaign"]
    if s["T"] % 2:
        errors.append(f"T must be even (got {s['T']})")
    if s["T"] < 2:
        errors.append("T must be at least 2")
    for key in ("f_c", "delta_f", "c"):
        if s[key] <= 0:
            errors.append(f"{key} must be positive")
    if s["N"] < 1:
        errors.append("N must be positive")
    if r["M_side"] < 1:
        errors.append("M_side must be positive")
    if r["d_over_lambda"] <= 0:
        errors.append("d_over_lambda must be positive")
    elif r["d_over_lambda"] > 0.25:
        warnings.append(f"element spacing {r['d_over_lambda']} lambda exceeds lambda/4: "
                        "round-trip grating lobes may cause spatial ambiguity")
    if cfg["codebook"]["delta"] < 0:
        errors.append("delta must be non-negative")
    if errors:
        return errors, warnings

    try:
        geo = cfg.geometry()
    except Exception as exc:
        return errors + [f"invalid RIS geometry: {exc}"], warnings
    sysc = cfg.system()
    tau_max = sysc.max_unambiguous_delay

    u = np.asarray(c["direction"], float)
    if np.linalg.norm(u) == 0:
        errors.append("campaign direction is the zero vector")
        u = geo.normal
    u = u / np.linalg.norm(u)
    points = [(f"campaign distance {d}", geo.center + d * u) for d in c["distances"]]
    points.append(("campaign p_u", np.asarray(c["p_u"], float)))
    points.append(("heatmap reference", np.asarray(cfg["heatmap"]["reference"], float)))
    for label, p in points:
        rel = p - geo.center
        if rel @ geo.normal <= 0:
            errors.append(f"{label} is not in front of the RIS")
        elif 2 * np.linalg.norm(rel) / sysc.speed_of_light >= tau_max:
            errors.append(f"{label}: round-trip delay exceeds the unambiguous range 1/delta_f")
    if c["tau_max"] < 0 or c["tau_max"] >= tau_max:
        errors.append(f"multipath tau_max {c['tau_max']} outside [0, 1/delta_f)")
    if not c["distances"]:
        errors.append("campaign distances are empty")
    elif min(c["distances"]) <= 0:
        errors.append("campaign distances must be positive")
    return errors, warnings
