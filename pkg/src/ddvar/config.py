"""Experiment configuration: TOML documents with dotted section keys.

Every key has a default in :data:`DEFAULTS`; unknown keys are rejected and
all values are checked by the owning module before any computation starts.
The fully resolved configuration (defaults included) is what gets echoed
into run manifests.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import swe
from .errors import ConfigurationError
from .orchestrator import DdRunConfig
from .solver import GnConfig
from .spacetime import SpaceTimeGrid

DEFAULTS = {
    "grid": {"n": 8, "nlat": 0, "M": 8, "dt": 3600.0, "max_lat_deg": 70.0},
    "model": {"a": 6.371e6, "g": 9.80616, "omega_rot": 7.292e-5, "alpha_tz": 0.5,
              "p_tz": 2, "q_tz": 2, "cfl_safety": 0.8, "literal_stencils": False},
    "decomposition": {"q": 1, "p1": 2, "p2": 2, "o_x": 1, "o_y": 1, "o_t": 0},
    "truth": {"u0": 20.0, "h0": 3000.0, "bump_amplitude": 100.0, "bump_width": 0.5},
    "assimilation": {"lam": 1.0, "mu": 1.0, "sigma_b": [1.0, 1.0, 10.0], "b_kind": "diagonal",
                     "length_scale": 1.5, "noise_length_scale": 1.5, "sigma_o": 0.0,
                     "sigma_r": [0.3, 0.3, 3.0], "obs_every": 1, "obs_coverage": 0.25,
                     "obs_boundary_rows": 0, "obs_variables": [0, 1, 2], "seed": 1},
    "solver": {"max_outer": 10, "outer_tol": 1e-8, "max_inner": 500, "inner_tol": 1e-12,
               "damping": 0.0, "eps": 1e-6, "max_rounds": 50,
               "exchange_every": "outer_round", "coherence": True},
    "validate": {"n": 6, "M": 3, "pairs": 20, "seed": 7, "adjoint_tol": 1e-12,
                 "taylor_order": 1.9, "oracle_tol": 1e-8},
    "perf": {"n_loc": 32, "qps": [2, 4, 8, 16, 32, 64], "coefficients": [0.0, 0.0, 1.0],
             "rho_G": 0.0, "rho_DD": 0.0, "sv_ratio": 0.01, "reference": True,
             "timings": ""},
    "output": {"directory": "out", "snapshots": True},
}


def _merge(base, doc, prefix=""):
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigurationError("unknown configuration key", key=name)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError("expected a section", key=name)
            _merge(base[key], value, name + ".")
        else:
            base[key] = value


def _set_dotted(doc, dotted, value):
    parts = dotted.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def parse_override(text):
    """``"section.key=value"`` with a TOML literal value into ``(key, value)``."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key, value


def load_config(path=None, text=None, overrides=()):
    """Resolve a configuration from a file or string plus ``key=value`` overrides."""
    doc = {}
    try:
        if path is not None:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        elif text is not None:
            doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse configuration: {exc}") from exc
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_dotted(doc, key, value)
    resolved = copy.deepcopy(DEFAULTS)
    _merge(resolved, doc)
    cfg = ExperimentConfig(resolved)
    cfg.validate()
    return cfg


def _num(section, key, value, kind=float, positive=False, nonneg=False):
    name = f"{section}.{key}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"expected a number, got {value!r}", key=name)
    if kind is int and int(value) != value:
        raise ConfigurationError(f"expected an integer, got {value!r}", key=name)
    if positive and not value > 0:
        raise ConfigurationError("must be > 0", key=name)
    if nonneg and not value >= 0:
        raise ConfigurationError("must be >= 0", key=name)
    return kind(value)


def _triple(section, key, value):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (3,)) if np.ndim(value) == 0 \
        else np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ConfigurationError("expected one value or three (u, v, h)",
                                 key=f"{section}.{key}")
    if not np.all(arr > 0):
        raise ConfigurationError("must be > 0", key=f"{section}.{key}")
    return tuple(float(x) for x in arr)


@dataclass
class ExperimentConfig:
    """Resolved configuration with builders for the objects it describes."""

    data: dict

    def __getitem__(self, section):
        return self.data[section]

    def grid(self):
        g = self.data["grid"]
        n = _num("grid", "n", g["n"], int, positive=True)
        nlat = _num("grid", "nlat", g["nlat"], int, nonneg=True) or n
        M = _num("grid", "M", g["M"], int, positive=True)
        dt = _num("grid", "dt", g["dt"], positive=True)
        max_lat = _num("grid", "max_lat_deg", g["max_lat_deg"], positive=True)
        if not max_lat < 90:
            raise ConfigurationError("must be < 90", key="grid.max_lat_deg")
        return SpaceTimeGrid.band(n, M, dt, nlat=nlat, max_lat_deg=max_lat)

    def params(self):
        m = self.data["model"]
        return swe.SweParams(
            a=_num("model", "a", m["a"]), g=_num("model", "g", m["g"]),
            omega_rot=_num("model", "omega_rot", m["omega_rot"]),
            alpha_tz=_num("model", "alpha_tz", m["alpha_tz"]),
            p_tz=_num("model", "p_tz", m["p_tz"], int), q_tz=_num("model", "q_tz", m["q_tz"], int),
            cfl_safety=_num("model", "cfl_safety", m["cfl_safety"]),
            literal_stencils=bool(m["literal_stencils"]))

    def gn(self):
        s = self.data["solver"]
        return GnConfig(max_outer=_num("solver", "max_outer", s["max_outer"], int),
                        outer_tol=_num("solver", "outer_tol", s["outer_tol"]),
                        max_inner=_num("solver", "max_inner", s["max_inner"], int),
                        inner_tol=_num("solver", "inner_tol", s["inner_tol"]),
                        damping=_num("solver", "damping", s["damping"]))

    def run_config(self):
        d, s = self.data["decomposition"], self.data["solver"]
        counts = {k: _num("decomposition", k, d[k], int) for k in d}
        return DdRunConfig(gn=self.gn(), eps=_num("solver", "eps", s["eps"]),
                           max_rounds=_num("solver", "max_rounds", s["max_rounds"], int),
                           exchange_every=s["exchange_every"], coherence=bool(s["coherence"]),
                           **counts)

    def assimilation(self):
        """Checked assimilation settings as a plain dictionary."""
        a = self.data["assimilation"]
        out = {
            "lam": _num("assimilation", "lam", a["lam"], positive=True),
            "mu": _num("assimilation", "mu", a["mu"], nonneg=True),
            "sigma_b": _triple("assimilation", "sigma_b", a["sigma_b"]),
            "sigma_r": _triple("assimilation", "sigma_r", a["sigma_r"]),
            "sigma_o": _num("assimilation", "sigma_o", a["sigma_o"], nonneg=True),
            "b_kind": a["b_kind"],
            "length_scale": _num("assimilation", "length_scale", a["length_scale"],
                                 positive=True),
            "noise_length_scale": _num("assimilation", "noise_length_scale",
                                       a["noise_length_scale"], positive=True),
            "obs_every": _num("assimilation", "obs_every", a["obs_every"], int, positive=True),
            "obs_coverage": _num("assimilation", "obs_coverage", a["obs_coverage"]),
            "obs_boundary_rows": _num("assimilation", "obs_boundary_rows",
                                      a["obs_boundary_rows"], int, nonneg=True),
            "obs_variables": tuple(int(v) for v in a["obs_variables"]),
            "seed": _num("assimilation", "seed", a["seed"], int, nonneg=True),
        }
        if out["b_kind"] not in ("diagonal", "gaussian"):
            raise ConfigurationError("must be 'diagonal' or 'gaussian'",
                                     key="assimilation.b_kind")
        if not 0 < out["obs_coverage"] <= 0.25:
            raise ConfigurationError("must lie in (0, 0.25] (at most K/4 observations)",
                                     key="assimilation.obs_coverage")
        if not out["obs_variables"] or any(v not in (0, 1, 2) for v in out["obs_variables"]):
            raise ConfigurationError("variables must be drawn from 0 (u), 1 (v), 2 (h)",
                                     key="assimilation.obs_variables")
        return out

    def truth(self):
        t = self.data["truth"]
        return {k: _num("truth", k, v) for k, v in t.items()}

    def validation(self):
        v = self.data["validate"]
        out = {k: _num("validate", k, v[k], int, positive=True) for k in ("n", "M", "pairs")}
        out["seed"] = _num("validate", "seed", v["seed"], int, nonneg=True)
        for k in ("adjoint_tol", "taylor_order", "oracle_tol"):
            out[k] = _num("validate", k, v[k], positive=True)
        return out

    def perf(self):
        p = self.data["perf"]
        out = {"n_loc": _num("perf", "n_loc", p["n_loc"], int, positive=True),
               "qps": tuple(_num("perf", "qps", q, int, positive=True) for q in p["qps"]),
               "coefficients": tuple(float(c) for c in p["coefficients"]),
               "rho_G": _num("perf", "rho_G", p["rho_G"], nonneg=True),
               "rho_DD": _num("perf", "rho_DD", p["rho_DD"], nonneg=True),
               "sv_ratio": _num("perf", "sv_ratio", p["sv_ratio"], nonneg=True),
               "reference": bool(p["reference"]), "timings": str(p["timings"])}
        if not out["coefficients"] or out["coefficients"][-1] == 0:
            raise ConfigurationError("leading coefficient must be nonzero",
                                     key="perf.coefficients")
        return out

    def validate(self):
        """Build every component once so that errors surface before any run."""
        grid = self.grid()
        self.params().validate(grid)
        self.run_config().decomposition(grid)
        self.assimilation()
        self.truth()
        self.validation()
        self.perf()
        if self.data["solver"]["exchange_every"] not in ("outer_round", "every_gn_iteration"):
            raise ConfigurationError("must be 'outer_round' or 'every_gn_iteration'",
                                     key="solver.exchange_every")
        if not isinstance(self.data["output"]["directory"], str):
            raise ConfigurationError("expected a path string", key="output.directory")
        return self

    def to_dict(self):
        return copy.deepcopy(self.data)
