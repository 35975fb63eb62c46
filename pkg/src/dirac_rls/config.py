"""Run configuration: a TOML file with one table per block.

Example::

    [mass]
    m = 1.0
    e_charge = 1.0

    [potential]
    nu = { kind = "gaussian", g = 0.05, a = 1.0 }

    [grid]
    n = 12
    h = 0.5

    [channel]
    k = [0.0, 0.0, 1.118]
    n = 3

Every key is checked against the schema below; unknown keys and wrong types
are errors that name the offending field.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import tomli

from .errors import ConfigError

# section -> key -> (type(s), default or REQUIRED)
REQUIRED = object()
_NUM = (int, float)

SCHEMA = {
    "mass": {"m": (_NUM, REQUIRED), "e_charge": (_NUM, 1.0)},
    "potential": {"nu": (dict, None), "A": (list, None), "table": (str, None),
                  "e_charge": (_NUM, None)},
    "grid": {"n": (int, REQUIRED), "h": (_NUM, REQUIRED), "origin": (list, None),
             "max_points": (int, 12 ** 3)},
    "quadrature": {"extent": (_NUM, 16.0), "points": (int, 32),
                   "singular": (str, "cell-average")},
    "channel": {"k": (list, REQUIRED), "n": (int, 3), "branch": (str, "+")},
    "solve": {"method": (str, "direct"), "tol": (_NUM, 1e-10), "max_iter": (int, 200)},
    "amplitude": {"directions": (str, "lebedev"), "degree": (int, 17), "count": (int, 20),
                  "n_theta": (int, 16), "n_phi": (int, 32), "projector": (bool, True),
                  "far_field_radii": (list, None)},
    "kernel": {"lambda": (_NUM, 1.5), "epsilon": (_NUM, 0.3), "n": (int, 48),
               "h": (_NUM, 0.5), "rmin": (_NUM, 1.0), "rmax": (_NUM, 6.0),
               "branch": (str, "+")},
    "scan": {"lambda_min": (_NUM, 1.1), "lambda_max": (_NUM, 2.5), "count": (int, 8),
             "branch": (str, "+"), "couplings": (list, None)},
    "dynamics": {"dt": (_NUM, 0.05), "T": (_NUM, 20.0), "order": (int, 2),
                 "n": (int, 64), "h": (_NUM, 1.0), "origin": (list, None),
                 "p0": (list, REQUIRED), "sigma_p": (_NUM, 0.2), "channel": (int, 3),
                 "r0": (list, None), "ladder": (list, None), "tol": (_NUM, 1e-3),
                 "comparison_grid_n": (int, 12), "comparison_grid_h": (_NUM, 0.5)},
    "output": {"dir": (str, "out"), "seed": (int, 0), "field_csv": (bool, False)},
}

PROFILE_KEYS = {"kind": str, "g": _NUM, "a": _NUM, "eps0": _NUM}

COMMAND_SECTIONS = {
    "kernel-check": ("mass",),
    "solve": ("mass", "potential", "grid", "channel"),
    "amplitude": ("mass", "potential", "grid", "channel"),
    "scan-exceptional": ("mass", "potential", "grid", "scan"),
    "dynamics": ("mass", "potential", "dynamics"),
    "compare": ("mass", "potential", "dynamics"),
}


@dataclass
class RunConfig:
    sections: dict
    path: str = None
    digest: str = ""
    raw: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.sections[name]

    def __contains__(self, name):
        return name in self.sections

    def get(self, name, default=None):
        return self.sections.get(name, default)

    def require(self, command: str):
        missing = [s for s in COMMAND_SECTIONS[command] if s not in self.sections]
        if missing:
            raise ConfigError(f"command {command!r} needs section(s): {', '.join(missing)}")

    def section(self, name: str) -> dict:
        """A section with defaults filled in, even when absent from the file."""
        if name in self.sections:
            return self.sections[name]
        return {k: d for k, (_, d) in SCHEMA[name].items() if d is not REQUIRED}

    @property
    def output_dir(self) -> str:
        out = self.sections.get("output", {}).get("dir", "out")
        if self.path and not os.path.isabs(out):
            out = os.path.join(os.path.dirname(os.path.abspath(self.path)), out)
        return out

    @property
    def seed(self) -> int:
        return self.sections.get("output", {}).get("seed", 0)


def _typecheck(where, value, types):
    if types is _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    elif types is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, types)
    if not ok:
        name = "number" if types is _NUM else getattr(types, "__name__", str(types))
        raise ConfigError(f"{where}: expected {name}, got {type(value).__name__}")


def _check_profile(where, prof):
    if not isinstance(prof, dict):
        raise ConfigError(f"{where}: expected a table like {{ kind = \"gaussian\", g = 0.1 }}")
    for k, v in prof.items():
        if k not in PROFILE_KEYS:
            raise ConfigError(f"{where}.{k}: unknown key")
        _typecheck(f"{where}.{k}", v, PROFILE_KEYS[k])
    if "kind" not in prof:
        raise ConfigError(f"{where}.kind: missing")


def validate(data: dict) -> dict:
    out = {}
    for sec, body in data.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        spec = SCHEMA[sec]
        for key, val in body.items():
            if key not in spec:
                raise ConfigError(f"{sec}.{key}: unknown key")
            _typecheck(f"{sec}.{key}", val, spec[key][0])
        vals = {}
        for key, (_, default) in spec.items():
            if key in body:
                vals[key] = body[key]
            elif default is REQUIRED:
                raise ConfigError(f"{sec}.{key}: missing required key")
            else:
                vals[key] = default
        out[sec] = vals
    if "mass" not in out:
        raise ConfigError("missing required section [mass] (key 'm', the rest mass)")
    pot = out.get("potential")
    if pot is not None:
        if pot["nu"] is not None:
            _check_profile("potential.nu", pot["nu"])
        if pot["A"] is not None:
            if len(pot["A"]) != 3:
                raise ConfigError("potential.A: expected three component tables")
            for i, p in enumerate(pot["A"]):
                _check_profile(f"potential.A[{i}]", p)
        if pot["table"] is not None and (pot["nu"] is not None or pot["A"] is not None):
            raise ConfigError("potential: give either a table or nu/A profiles, not both")
    for sec, key, length in (("channel", "k", 3), ("dynamics", "p0", 3), ("dynamics", "r0", 3),
                             ("grid", "origin", 3), ("dynamics", "origin", 3)):
        v = out.get(sec, {}).get(key)
        if v is not None and (len(v) != length or not all(
                isinstance(x, _NUM) and not isinstance(x, bool) for x in v)):
            raise ConfigError(f"{sec}.{key}: expected {length} numbers")
    return out


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file.  Syntax errors carry line and column."""
    try:
        with open(path, "rb") as fh:
            raw_bytes = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = tomli.loads(raw_bytes.decode("utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text") from exc
    return from_dict(data, path)


def from_dict(data: dict, path=None) -> RunConfig:
    sections = validate(data)
    canon = json.dumps(sections, sort_keys=True, separators=(",", ":"))
    return RunConfig(sections, path, hashlib.sha256(canon.encode()).hexdigest(), data)


# ---------------------------------------------------------------- builders

def build_mass(cfg: RunConfig):
    from .algebra import MassCharge

    sec = cfg["mass"]
    from .errors import ValidationError
    try:
        return MassCharge(float(sec["m"]), float(sec["e_charge"]))
    except ValidationError as exc:
        raise ConfigError(f"mass.m: {exc}") from exc


def build_potential(cfg: RunConfig):
    from .potential import PotentialSpec, Profile, TablePotential

    sec = cfg["potential"]
    e = sec["e_charge"] if sec["e_charge"] is not None else cfg["mass"]["e_charge"]
    if sec["table"] is not None:
        path = sec["table"]
        if cfg.path and not os.path.isabs(path):
            path = os.path.join(os.path.dirname(os.path.abspath(cfg.path)), path)
        return PotentialSpec(table=TablePotential.from_csv(path), e_charge=float(e))
    nu = Profile(**sec["nu"]) if sec["nu"] is not None else Profile()
    A = tuple(Profile(**p) for p in sec["A"]) if sec["A"] is not None else None
    return PotentialSpec(nu, A, float(e))


def build_grid(sec: dict):
    from .grid import GridSpec

    origin = tuple(sec["origin"]) if sec.get("origin") is not None else None
    return GridSpec(sec["n"], float(sec["h"]), origin)


def build_channel(cfg: RunConfig, mc):
    from .solver import ScatterChannel

    sec = cfg["channel"]
    return ScatterChannel(tuple(sec["k"]), sec["n"], mc, sec["branch"])
