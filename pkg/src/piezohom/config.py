"""Run configuration: YAML schema, defaults and environment overrides.

Example::

    mesh:
      layout: quarter
      fiber_radius: 1.0
      divisions: [32, 2, 2]
    material:            # lambda, mu in N/mm^2; d in m/V
      lambda: 80.3
      mu: 58.1
      d31: 2.0e-11
      d32: 3.0e-12
      d33: -3.5e-11
      perm_rel: [12, 12, 12]
    penalty:
      factor: 100        # or explicit rho_mech, rho_el
    solver:
      tol: 1.0e-10
      max_iter: 30
    homogenization:
      mode: periodic
      contact: true
      amplitude: -0.05
      field_amplitude: 1.0
      cases: all
      schedule: {max: 0.05, steps: 10}
    shell:
      thickness: 10.0
      n_gauss: 2
      mu_bar: 1.0
    output: out

Any key can be overridden from the environment as
``PIEZOHOM_<SECTION>__<KEY>=<yaml value>``, e.g. ``PIEZOHOM_SOLVER__TOL=1e-9``.
``PIEZOHOM_OUTPUT`` sets the output directory.
"""

from __future__ import annotations

import copy
import os

import yaml

ENV_PREFIX = "PIEZOHOM_"


class ConfigError(ValueError):
    pass


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _int_list(n):
    def check(v):
        return isinstance(v, list) and len(v) == n and all(isinstance(x, int) and x >= 1 for x in v)

    check.__doc__ = f"list of {n} positive integers"
    return check


def _perm(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return v > 0
    return isinstance(v, list) and len(v) == 3 and all(isinstance(x, (int, float)) and x > 0 for x in v)


_perm.__doc__ = "positive number or list of 3 positive numbers"
_positive.__doc__ = "positive number"
_nonneg.__doc__ = "non-negative number"

_NUM = (int, float)
_OPT_NUM = (int, float, type(None))

# section -> key -> (allowed types, extra check or None, default)
SCHEMA = {
    "mesh": {
        "layout": (str, lambda v: v in ("quarter", "full", "solid"), "quarter"),
        "fiber_radius": (_NUM, _positive, 1.0),
        "divisions": (list, _int_list(3), [32, 2, 2]),
        "grid": (list, _int_list(2), [1, 1]),
        "fiber_axis": (int, lambda v: v in (1, 2, 3), 3),
        "axial_length": (_OPT_NUM, lambda v: v is None or v > 0, None),
        "core_ratio": (_NUM, _positive, 0.5),
        "contact_window": ((int, type(None)), lambda v: v is None or v >= 1, None),
        "two_pass_contact": (bool, None, True),
    },
    "material": {
        "lambda": (_NUM, None, 80.3),
        "mu": (_NUM, _positive, 58.1),
        "d31": (_NUM, None, 20e-12),
        "d32": (_NUM, None, 3e-12),
        "d33": (_NUM, None, -35e-12),
        "perm_rel": ((int, float, list), _perm, [12.0, 12.0, 12.0]),
    },
    "penalty": {
        "factor": (_NUM, _positive, 100.0),
        "rho_mech": (_OPT_NUM, lambda v: v is None or v > 0, None),
        "rho_el": (_OPT_NUM, lambda v: v is None or v > 0, None),
    },
    "solver": {
        "tol": (_NUM, _positive, 1e-10),
        "max_iter": (int, _positive, 30),
        "increment_tol": (_NUM, _positive, 1e-12),
        "hysteresis": (_NUM, _nonneg, 1e-12),
        "line_search_cuts": (int, _nonneg, 10),
        "threads": (int, _positive, 1),
        "deterministic": (bool, None, True),
    },
    "homogenization": {
        "mode": (str, lambda v: v in ("periodic", "dirichlet"), "periodic"),
        "contact": (bool, None, True),
        "amplitude": (_NUM, lambda v: v != 0, -0.05),
        "field_amplitude": (_NUM, _positive, 1.0),
        "beta": (_NUM, lambda v: 0 < v <= 1, 2.0 / 3.0),
        "cases": ((str, list), None, "all"),
        "schedule": ((dict, list), None, {"max": 0.05, "steps": 10}),
    },
    "shell": {
        "thickness": (_NUM, _positive, 1.0),
        "n_gauss": (int, lambda v: v >= 2, 2),
        "mu_bar": (_NUM, _positive, 1.0),
    },
}
TOP_LEVEL = {"output": (str, None, "out")}


def defaults() -> dict:
    out = {sec: {k: copy.deepcopy(spec[2]) for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    out["output"] = TOP_LEVEL["output"][2]
    return out


def _check(path, value, types, extra):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"config key '{path}' must be {_type_name(types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"config key '{path}' must be {_type_name(types)}, got {type(value).__name__}")
    if extra is not None and not extra(value):
        hint = extra.__doc__ or "a valid value"
        raise ConfigError(f"config key '{path}' has invalid value {value!r} (expected {hint})")


def _coerce(value, types):
    # YAML 1.1 reads "1e-9" as a string
    types = types if isinstance(types, tuple) else (types,)
    if isinstance(value, str) and float in types and str not in types:
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _type_name(types):
    types = types if isinstance(types, tuple) else (types,)
    return " or ".join(t.__name__ for t in types)


def validate(raw: dict) -> dict:
    """Merge ``raw`` over the defaults, rejecting unknown keys and bad values."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    cfg = defaults()
    for sec, body in raw.items():
        if sec in TOP_LEVEL:
            _check(sec, body, *TOP_LEVEL[sec][:2])
            cfg[sec] = body
            continue
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config key '{sec}'")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"config key '{sec}' must be a mapping")
        for key, value in body.items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown config key '{sec}.{key}'")
            types, extra, _ = SCHEMA[sec][key]
            value = _coerce(value, types)
            _check(f"{sec}.{key}", value, types, extra)
            cfg[sec][key] = value
    _validate_cases(cfg["homogenization"]["cases"])
    _validate_schedule(cfg["homogenization"]["schedule"])
    if cfg["mesh"]["layout"] != "solid" and cfg["mesh"]["divisions"][0] % 8:
        raise ConfigError("config key 'mesh.divisions' must start with a multiple of 8 for fiber layouts")
    return cfg


def _validate_cases(cases):
    from .constraints import LOAD_TABLE

    if cases == "all":
        return
    if isinstance(cases, str):
        cases = [cases]
    for c in cases:
        if c not in LOAD_TABLE:
            raise ConfigError(f"config key 'homogenization.cases' has unknown case {c!r}")


def _validate_schedule(s):
    if isinstance(s, list):
        if not s or not all(isinstance(v, (int, float)) and v != 0 for v in s):
            raise ConfigError("config key 'homogenization.schedule' must list non-zero amplitudes")
        return
    unknown = set(s) - {"max", "steps"}
    if unknown:
        raise ConfigError(f"unknown config key 'homogenization.schedule.{sorted(unknown)[0]}'")
    if not isinstance(s.get("max", 0.05), (int, float)) or s.get("max", 0.05) <= 0:
        raise ConfigError("config key 'homogenization.schedule.max' must be a positive number")
    if not isinstance(s.get("steps", 10), int) or s.get("steps", 10) < 1:
        raise ConfigError("config key 'homogenization.schedule.steps' must be a positive integer")


def env_overrides(environ=None) -> dict:
    """Nested overrides from ``PIEZOHOM_SECTION__KEY`` variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, text in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX) :].lower().split("__")
        value = yaml.safe_load(text)
        if len(path) == 1:
            out[path[0]] = value
        elif len(path) == 2:
            out.setdefault(path[0], {})[path[1]] = value
        else:
            raise ConfigError(f"environment override {name} must name SECTION__KEY")
    return out


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, environ=None, overrides: dict | None = None) -> dict:
    """Read YAML, apply environment then explicit overrides, and validate."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
    raw = _merge(raw, env_overrides(environ))
    raw = _merge(raw, overrides or {})
    return validate(raw)


def schedule_from(cfg: dict):
    from .homogenize import default_schedule

    s = cfg["homogenization"]["schedule"]
    if isinstance(s, list):
        return [float(v) for v in s]
    return list(default_schedule(float(s.get("max", 0.05)), int(s.get("steps", 10))))


def case_names(cfg: dict):
    from .constraints import SUPPLEMENTARY_ROWS, TABLE_ROWS

    cases = cfg["homogenization"]["cases"]
    if cases == "all":
        return list(TABLE_ROWS + SUPPLEMENTARY_ROWS)
    return [cases] if isinstance(cases, str) else list(cases)
