"""JSON run configuration: parsing, validation and construction of model objects.

A configuration is a JSON object with the sections ``domain``, ``params``,
``forcing``, ``stepper``, ``interpolant``, ``solver``, ``twin``, ``theory``,
``output`` and a global ``seed``. Missing keys take the defaults below;
unknown keys are errors. Validation collects every problem, each prefixed
with its dotted path (``params.K_v``), before raising :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostic import METHODS, SolverSettings
from .field import DomainSpec, PhysParams
from .observe import KINDS, InterpolantSpec
from .stepper import SCHEMES, ForcingSpec, StepperSettings

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_config", "parse_config",
           "apply_override", "build_forcing"]


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists messages prefixed by field path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


DEFAULTS = {
    "domain": {"nx": 24, "ny": 24, "nz": 12, "lx": 1.0, "ly": 1.0, "H": 1.0},
    "params": {"A_h": 1.0, "A_v": 1.0, "K_h": 0.2, "K_v": 0.2, "alpha": 0.1,
               "f0": 1.0, "beta": 1.0, "mu": "heuristic"},
    "forcing": {
        "Q": {"profile": "constant", "amplitude": 0.005},
        "Tstar": {"profile": "cosine", "amplitude": 0.1, "kx": 1, "ky": 1, "offset": 0.0},
        "tau": {"profile": "gyre", "amplitude": 0.1},
    },
    "stepper": {"dt": 0.01, "scheme": "imex-euler", "advection": "centered-skew"},
    "interpolant": {"kind": "modal", "h": 0.25, "c0": "measured"},
    "solver": {"tol": 1e-10, "max_iter": 500, "method": "iterative-krylov"},
    "twin": {"spin_up_time": 5.0, "assimilation_time": 10.0, "eta0_mode": "zero",
             "eta0_seed": 1, "eta0_eps": 0.0, "t0_amplitude": 0.5, "t0_max_index": [2, 2, 2],
             "record_every": 1, "obs_stride": 1},
    "theory": {"C": 1.0, "r": 1.0, "gronwall_C": 10.0, "gronwall_tau": 1.0,
               "gronwall_gamma": 1.0, "c0_samples": 100, "rho_samples": 50},
    "output": {"snapshot_every": 0},
    "seed": 0,
}

PROFILE_KEYS = {
    "Q": {"constant": {"amplitude"}, "zero": set()},
    "Tstar": {"cosine": {"amplitude", "kx", "ky", "offset"}, "zero": set()},
    "tau": {"gyre": {"amplitude"}, "zero": set()},
}


# -- small validators -------------------------------------------------------------

def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _positive(v):
    return None if _is_num(v) and v > 0 else "must be a positive number"


def _nonneg(v):
    return None if _is_num(v) and v >= 0 else "must be a nonnegative number"


def _number(v):
    return None if _is_num(v) else "must be a finite number"


def _int_min(k):
    def check(v):
        return None if _is_int(v) and v >= k else f"must be an integer >= {k}"
    return check


def _choice(options):
    def check(v):
        return None if v in options else f"must be one of {list(options)}"
    return check


def _unit_interval(v):
    return None if _is_num(v) and 0 < v < 1 else "must lie in (0, 1)"


def _mu(v):
    return None if v == "heuristic" or (_is_num(v) and v >= 0) else \
        'must be a nonnegative number or "heuristic"'


def _c0(v):
    return None if v == "measured" or (_is_num(v) and v > 0) else \
        'must be a positive number or "measured"'


def _index3(v):
    ok = isinstance(v, list) and len(v) == 3 and all(_is_int(a) and a >= 0 for a in v)
    return None if ok else "must be a list of three nonnegative integers"


RULES = {
    "domain": {"nx": _int_min(4), "ny": _int_min(4), "nz": _int_min(4),
               "lx": _positive, "ly": _positive, "H": _positive},
    "params": {"A_h": _positive, "A_v": _positive, "K_h": _positive, "K_v": _positive,
               "alpha": _positive, "f0": _number, "beta": _number, "mu": _mu},
    "stepper": {"dt": _positive, "scheme": _choice(SCHEMES), "advection": _choice(("centered-skew",))},
    "interpolant": {"kind": _choice(KINDS), "h": _positive, "c0": _c0},
    "solver": {"tol": _unit_interval, "max_iter": _int_min(1), "method": _choice(METHODS)},
    "twin": {"spin_up_time": _nonneg, "assimilation_time": _positive,
             "eta0_mode": _choice(("zero", "random", "perturbed")), "eta0_seed": _int_min(0),
             "eta0_eps": _nonneg, "t0_amplitude": _nonneg, "t0_max_index": _index3,
             "record_every": _int_min(1), "obs_stride": _int_min(1)},
    "theory": {"C": _positive, "r": _positive, "gronwall_C": _positive, "gronwall_tau": _positive,
               "gronwall_gamma": _positive, "c0_samples": _int_min(1), "rho_samples": _int_min(1)},
    "output": {"snapshot_every": _int_min(0)},
}

PROFILE_RULES = {"amplitude": _number, "kx": _int_min(0), "ky": _int_min(0), "offset": _number}


def _merge(defaults, given, path, errors):
    out = copy.deepcopy(defaults)
    if not isinstance(given, dict):
        errors.append(f"{path}: must be an object")
        return out
    for key, value in given.items():
        if key not in defaults:
            errors.append(f"{path}.{key}: unknown key")
        else:
            out[key] = value
    return out


def _check_profile(name, given, errors):
    path = f"forcing.{name}"
    default = DEFAULTS["forcing"][name]
    if not isinstance(given, dict):
        errors.append(f"{path}: must be an object")
        return copy.deepcopy(default)
    profile = given.get("profile", default["profile"])
    if profile not in PROFILE_KEYS[name]:
        errors.append(f"{path}.profile: must be one of {sorted(PROFILE_KEYS[name])}")
        return copy.deepcopy(default)
    allowed = PROFILE_KEYS[name][profile]
    base = {k: v for k, v in default.items() if k in allowed} if profile == default["profile"] else {}
    out = {"profile": profile}
    for key in sorted(allowed):
        out[key] = base.get(key, 0 if key in ("kx", "ky") else 0.0)
    for key, value in given.items():
        if key == "profile":
            continue
        if key not in allowed:
            errors.append(f"{path}.{key}: unknown key for profile {profile!r}")
            continue
        msg = PROFILE_RULES[key](value)
        if msg:
            errors.append(f"{path}.{key}: {msg}")
        out[key] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` is the normalized JSON tree."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, RunConfig) and _canonical(self.data) == _canonical(other.data)

    def __hash__(self):
        return hash(_canonical(self.data))

    def to_dict(self):
        return copy.deepcopy(self.data)

    def section(self, name):
        return self.data[name]

    @property
    def seed(self):
        return self.data["seed"]

    def domain(self):
        return DomainSpec(**self.data["domain"])

    def params(self, mu=0.0):
        p = dict(self.data["params"])
        p["mu"] = float(mu)
        return PhysParams(**p)

    def stepper(self):
        return StepperSettings(**self.data["stepper"])

    def solver(self):
        return SolverSettings(**self.data["solver"])

    def interpolant(self, c0=1.0):
        s = self.data["interpolant"]
        return InterpolantSpec(kind=s["kind"], h=float(s["h"]), c0=float(c0))


def _canonical(data):
    return json.dumps(data, sort_keys=True)


def parse_config(raw):
    """Validate a configuration tree and return a :class:`RunConfig`."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: configuration must be a JSON object"])
    for key in raw:
        if key not in DEFAULTS:
            errors.append(f"{key}: unknown section")
    data = {}
    for section, rules in RULES.items():
        merged = _merge(DEFAULTS[section], raw.get(section, {}), section, errors)
        for key, check in rules.items():
            msg = check(merged[key])
            if msg:
                errors.append(f"{section}.{key}: {msg}")
        data[section] = merged
    forcing = raw.get("forcing", {})
    if not isinstance(forcing, dict):
        errors.append("forcing: must be an object")
        forcing = {}
    for key in forcing:
        if key not in DEFAULTS["forcing"]:
            errors.append(f"forcing.{key}: unknown key")
    data["forcing"] = {name: _check_profile(name, forcing.get(name, DEFAULTS["forcing"][name]), errors)
                       for name in ("Q", "Tstar", "tau")}
    seed = raw.get("seed", DEFAULTS["seed"])
    if not (_is_int(seed) and seed >= 0):
        errors.append("seed: must be a nonnegative integer")
    data["seed"] = seed
    if not errors:
        errors.extend(_cross_checks(data))
    if errors:
        raise ConfigError(errors)
    # normalize numeric types so that the echo round-trips exactly
    for section in ("domain", "params", "stepper", "interpolant", "solver", "twin", "theory"):
        for key, value in data[section].items():
            if _is_num(value) and not _is_int(value) or (
                    _is_int(value) and isinstance(DEFAULTS[section][key], float)):
                data[section][key] = float(value)
    for prof in data["forcing"].values():
        for key in ("amplitude", "offset"):
            if key in prof:
                prof[key] = float(prof[key])
    return RunConfig(data)


def _cross_checks(data):
    errs = []
    d = data["domain"]
    h = data["interpolant"]["h"]
    if h > min(d["lx"], d["ly"], d["H"]):
        errs.append("interpolant.h: must not exceed the smallest domain extent")
    mu = data["params"]["mu"]
    dt = data["stepper"]["dt"]
    if _is_num(mu) and mu * dt > 0.5:
        errs.append(f"params.mu: mu*dt = {mu * dt:.4g} exceeds 0.5")
    return errs


def load_config(path=None):
    """Read and validate a JSON file; ``None`` gives the defaults."""
    if path is None:
        return parse_config({})
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError([f"<file>: {path} does not exist"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"<file>: invalid JSON ({exc})"]) from None
    return parse_config(raw)


def _coerce(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config, key, value):
    """New :class:`RunConfig` with the dotted ``key`` set to ``value`` (JSON-decoded if a string)."""
    data = config.to_dict()
    if isinstance(value, str):
        value = _coerce(value)
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError([f"{key}: unknown key"])
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError([f"{key}: unknown key"])
    node[parts[-1]] = value
    return parse_config(data)


# -- model objects ------------------------------------------------------------------

def _profile_Q(spec, domain):
    if spec["profile"] == "zero":
        return domain.zeros()
    return np.full(domain.shape, spec["amplitude"])


def _profile_Tstar(spec, domain):
    if spec["profile"] == "zero":
        return domain.zeros2d()
    X, Y = np.meshgrid(domain.x, domain.y, indexing="ij")
    return spec["offset"] + spec["amplitude"] * (np.cos(spec["kx"] * np.pi * X / domain.lx)
                                                 * np.cos(spec["ky"] * np.pi * Y / domain.ly))


def _profile_tau(spec, domain):
    tau = np.zeros((2,) + domain.shape2d)
    if spec["profile"] == "gyre":
        X, Y = np.meshgrid(domain.x, domain.y, indexing="ij")
        tau[0] = -spec["amplitude"] * np.sin(np.pi * X / domain.lx) * np.sin(2 * np.pi * Y / domain.ly)
    return tau


def build_forcing(config, domain, params):
    f = config.data["forcing"]
    return ForcingSpec.build(domain, params, Q=_profile_Q(f["Q"], domain),
                             Tstar=_profile_Tstar(f["Tstar"], domain),
                             tau=_profile_tau(f["tau"], domain))
