"""
Run configuration: a YAML file with explicit units in the key names.

User files are merged over the shipped defaults (``data/default.yaml``).
Every error names the file and line of the offending key.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .cavity import CavityModel
from .dipolar import DipolarDistribution, DipolarLattice
from .hamiltonian import SpinSystem
from .spectro import BroadeningModel, CouplingDensity


class ConfigError(ValueError):
    pass


def default_text() -> str:
    return resources.files("clockspin").joinpath("data/default.yaml").read_text()


DEFAULTS: dict = yaml.safe_load(default_text())

# keys whose default is null, with the type they take when set
_NULLABLE = {
    ("cavity", "kappa_GHz"): float,
    ("fit", "delta_p"): float,
    ("fit", "m_I"): float,
    ("dipolar", "seed"): int,
    ("dipolar", "lattice"): dict,
}
_OPTIONAL_KEYS = {("dipolar", "lattice")}


def _key_lines(node, prefix=(), out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = prefix + (key.value,)
            out[path] = key.start_mark.line + 1
            _key_lines(value, path, out)
    return out


@dataclass
class RunConfig:
    """Fully resolved configuration plus the plain mapping it came from."""

    data: dict
    source: str = "<defaults>"

    # --- typed views -----------------------------------------------------
    @property
    def system(self) -> SpinSystem:
        s = self.data["system"]
        return SpinSystem(
            j_electronic=s["j_electronic"],
            i_nuclear=s["i_nuclear"],
            g_j=s["g_j"],
            B20=s["B20_cm1"],
            B40=s["B40_cm1"],
            B60=s["B60_cm1"],
            B44=s["B44_cm1"],
            A=s["A_cm1"],
        )

    @property
    def direction(self) -> tuple[float, float]:
        s = self.data["sweep"]
        return math.radians(s["theta_deg"]), math.radians(s["phi_deg"])

    @property
    def fields(self) -> np.ndarray:
        s = self.data["sweep"]
        return np.linspace(s["field_min_T"], s["field_max_T"], s["points"])

    @property
    def freqs(self) -> np.ndarray:
        f = self.data["frequency"]
        return np.linspace(f["freq_min_GHz"], f["freq_max_GHz"], f["points"])

    @property
    def temperature(self) -> float:
        return self.data["temperature_K"]

    @property
    def coupling(self) -> CouplingDensity:
        c = self.data["coupling"]
        return CouplingDensity(c["g0_sqrtGHz"], c["exponent"], c["omega_ref_GHz"])

    @property
    def dipolar(self) -> Optional[DipolarDistribution]:
        d = self.data["dipolar"]
        if not d["enabled"]:
            return None
        lattice = None
        if d.get("lattice") is not None:
            lat = d["lattice"]
            lattice = DipolarLattice(
                cell=tuple(tuple(float(v) for v in row) for row in lat["cell"]),
                sites=tuple(tuple(float(v) for v in row) for row in lat.get("sites", [[0, 0, 0]])),
                moment_muB=float(lat.get("moment_muB", 5.0)),
                cutoff_nm=float(lat.get("cutoff_nm", 5.0)),
            )
        return DipolarDistribution(d["mode"], d["sigma_T"], lattice, d["mc_samples"], d["seed"])

    @property
    def broadening(self) -> BroadeningModel:
        b = self.data["broadening"]
        return BroadeningModel(
            b["t1_s"], b["t2_clock_s"], b["omega_clock_GHz"], self.dipolar, b["average_samples"]
        )

    @property
    def cavity(self) -> CavityModel:
        c = self.data["cavity"]
        kappa = c["kappa_GHz"]
        if kappa is None:
            kappa = c["omega_r_GHz"] / c["quality_factor"]
        return CavityModel(c["omega_r_GHz"], kappa, c["g_n_full_GHz"], c["concentration"])

    @property
    def cavity_freqs(self) -> np.ndarray:
        c = self.data["cavity"]
        return np.linspace(c["freq_min_GHz"], c["freq_max_GHz"], c["freq_points"])

    @property
    def tilt(self) -> float:
        return math.radians(self.data["transitions"]["tilt_deg"])

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Parse, merge over defaults, coerce and validate.

    ``overrides`` maps (section, key) tuples to values applied after parsing
    (e.g. a --seed flag).
    """
    if path is None:
        text, source = default_text(), "<defaults>"
    else:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{source}: cannot read config: {exc.strerror}") from None
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: {exc.problem}") from None
    raw = {} if raw is None else raw
    lines = _key_lines(node) if node is not None else {}

    def fail(path_, msg):
        line = lines.get(path_)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {'.'.join(path_)}: {msg}")

    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    data = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if key not in DEFAULTS:
            fail((key,), "unknown key")
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(value, dict):
                fail((key,), "expected a mapping")
            for sub, v in value.items():
                if sub not in DEFAULTS[key] and (key, sub) not in _OPTIONAL_KEYS:
                    fail((key, sub), "unknown key")
                data[key][sub] = _coerce((key, sub), v, DEFAULTS[key].get(sub), fail)
        else:
            data[key] = _coerce((key,), value, DEFAULTS[key], fail)
    for path_, value in (overrides or {}).items():
        section, key = path_
        data[section][key] = value
    _validate(data, fail)
    return RunConfig(data, source)


def _coerce(path, value, default, fail):
    if value is None:
        if default is None:
            return None
        fail(path, "must not be null")
    kind = _NULLABLE.get(path, type(default) if default is not None else None)
    if kind is bool:
        if not isinstance(value, bool):
            fail(path, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            fail(path, f"expected an integer, got {value!r}")
        try:
            f = float(value)
        except ValueError:
            fail(path, f"expected an integer, got {value!r}")
        if not f.is_integer():
            fail(path, f"expected an integer, got {value!r}")
        return int(f)
    if kind is float:
        if isinstance(value, bool):
            fail(path, f"expected a number, got {value!r}")
        try:
            f = float(value)  # YAML reads 2e-5 (no dot) as a string
        except (TypeError, ValueError):
            fail(path, f"expected a number, got {value!r}")
        if not math.isfinite(f):
            fail(path, "must be finite")
        return f
    if kind is str:
        if not isinstance(value, str):
            fail(path, f"expected a string, got {value!r}")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            fail(path, "expected a mapping")
        return value
    return value


def _validate(d: dict, fail) -> None:
    def positive(section, key, strict=True):
        v = d[section][key] if key is not None else d[section]
        path = (section, key) if key is not None else (section,)
        if (v <= 0) if strict else (v < 0):
            fail(path, f"must be {'positive' if strict else 'non-negative'}, got {v}")

    s = d["system"]
    for key in ("j_electronic", "i_nuclear"):
        if s[key] < 0 or not float(2 * s[key]).is_integer():
            fail(("system", key), "must be a non-negative integer or half-integer")
    sw = d["sweep"]
    if sw["points"] < 1:
        fail(("sweep", "points"), "must be at least 1")
    positive("sweep", "field_min_T", strict=False)
    if sw["points"] > 1 and not sw["field_max_T"] > sw["field_min_T"]:
        fail(("sweep", "field_max_T"), "must exceed field_min_T")
    fr = d["frequency"]
    if fr["points"] < 1:
        fail(("frequency", "points"), "must be at least 1")
    positive("frequency", "freq_min_GHz")
    if fr["freq_max_GHz"] < fr["freq_min_GHz"]:
        fail(("frequency", "freq_max_GHz"), "must not be below freq_min_GHz")
    positive("temperature_K", None)
    positive("coupling", "g0_sqrtGHz", strict=False)
    positive("coupling", "omega_ref_GHz")
    for key in ("t1_s", "t2_clock_s", "omega_clock_GHz"):
        positive("broadening", key)
    if d["broadening"]["average_samples"] < 1:
        fail(("broadening", "average_samples"), "must be at least 1")
    dp = d["dipolar"]
    if dp["mode"] not in ("gaussian", "lattice_mc"):
        fail(("dipolar", "mode"), f"unknown mode {dp['mode']!r} (gaussian | lattice_mc)")
    positive("dipolar", "sigma_T", strict=False)
    if dp["mc_samples"] < 1000:
        fail(("dipolar", "mc_samples"), "must be at least 1000")
    if dp["enabled"] and dp["seed"] is None:
        fail(("dipolar", "seed"), "a seed is required when dipolar averaging is enabled")
    if dp["mode"] == "lattice_mc":
        lat = dp.get("lattice")
        if lat is None:
            fail(("dipolar", "mode"), "lattice_mc needs a dipolar.lattice section")
        for key in lat:
            if key not in ("cell", "sites", "moment_muB", "cutoff_nm"):
                fail(("dipolar", "lattice", key), "unknown key")
        cell = lat.get("cell")
        if not (isinstance(cell, list) and len(cell) == 3 and all(
            isinstance(r, list) and len(r) == 3 for r in cell
        )):
            fail(("dipolar", "lattice", "cell"), "expected three 3-vectors (nm)")
    positive("transitions", "floor", strict=False)
    nd = d["normalization"]
    positive("normalization", "delta_field_T")
    if sw["points"] > 1 and nd["delta_field_T"] > sw["field_max_T"] - sw["field_min_T"]:
        fail(("normalization", "delta_field_T"), "exceeds the field sweep span")
    cv = d["cavity"]
    for key in ("omega_r_GHz", "quality_factor"):
        positive("cavity", key)
    if cv["kappa_GHz"] is not None:
        positive("cavity", "kappa_GHz")
    if not 0 < cv["concentration"] <= 1:
        fail(("cavity", "concentration"), "must lie in (0, 1]")
    if cv["weighting"] not in ("population", "none"):
        fail(("cavity", "weighting"), "expected population | none")
    if not 0 < cv["contrast"] <= 1:
        fail(("cavity", "contrast"), "must lie in (0, 1]")
    if not cv["freq_min_GHz"] <= cv["omega_r_GHz"] <= cv["freq_max_GHz"]:
        fail(("cavity", "freq_min_GHz"), "cavity frequency grid must span omega_r_GHz")
    if cv["freq_points"] < 2:
        fail(("cavity", "freq_points"), "must be at least 2")
    if d["fit"]["delta_p"] is not None:
        positive("fit", "delta_p")
