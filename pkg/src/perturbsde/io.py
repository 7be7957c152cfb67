"""Serialization of specs, grids, and run artifacts.

JSON is the configuration and report format; CSV carries numerical tables.
Coefficients round-trip through their preset id and parameter dict, so a
config file is a complete, hashable description of a run.  Callback
coefficients carry closures and are deliberately not serializable.

Infinities appear in declared sup-norms and regime reports, but strict JSON
has no literal for them, so floats are encoded with the string sentinels
``"inf"`` and ``"-inf"`` and decoded back on read.  NaN is rejected: a NaN
in a config or report is always a bug upstream.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections.abc import Mapping
from importlib import metadata as _importlib_metadata
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, UnknownPreset
from .model import Coefficient, GridSpec, ProblemSpec, SupNormBounds

__all__ = [
    "TOOL_VERSION",
    "encode_floats",
    "decode_floats",
    "canonical_json",
    "config_hash",
    "coefficient_to_json",
    "coefficient_from_json",
    "problem_to_json",
    "problem_from_json",
    "grid_to_json",
    "grid_from_json",
    "read_json",
    "write_json",
    "write_csv",
]

try:
    TOOL_VERSION = _importlib_metadata.version("perturbsde")
except _importlib_metadata.PackageNotFoundError:  # running from a checkout
    TOOL_VERSION = "0.0.0+uninstalled"


# -- float sentinels ----------------------------------------------------------


def encode_floats(obj: Any) -> Any:
    """Recursively replace non-finite floats with string sentinels.

    numpy scalars and arrays become plain Python floats and lists so the
    result is directly serializable with ``json.dumps(allow_nan=False)``.
    """
    if isinstance(obj, Mapping):
        return {str(k): encode_floats(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [encode_floats(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [encode_floats(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            raise ConfigError("cannot serialize NaN")
        if v == math.inf:
            return "inf"
        if v == -math.inf:
            return "-inf"
        return v
    return obj


def decode_floats(obj: Any) -> Any:
    """Inverse of :func:`encode_floats` on parsed JSON."""
    if isinstance(obj, Mapping):
        return {k: decode_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [decode_floats(v) for v in obj]
    if obj == "inf":
        return math.inf
    if obj == "-inf":
        return -math.inf
    return obj


def canonical_json(obj: Any) -> str:
    """Key-sorted, whitespace-free serialization used for hashing."""
    return json.dumps(encode_floats(obj), sort_keys=True,
                      separators=(",", ":"), allow_nan=False)


def config_hash(obj: Any) -> str:
    """SHA-256 of the canonical serialization, as a hex digest."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


# -- coefficients -------------------------------------------------------------

# Required and optional parameter names per serializable preset.
_PRESET_PARAMS: dict[str, tuple[set[str], set[str]]] = {
    "const": ({"value"}, set()),
    "linear": ({"slope"}, {"intercept"}),
    "sine": (set(), {"amplitude", "offset", "frequency", "phase"}),
    "tanh": (set(), {"amplitude", "scale"}),
    "ornstein_uhlenbeck": (set(), {"rate", "mean"}),
    "custom-tabulated": ({"nodes", "values"}, {"d1_values"}),
}


def _bounds_to_json(bounds: SupNormBounds) -> dict[str, Any]:
    return {"sup_f": encode_floats(bounds.sup_f),
            "sup_d1": encode_floats(bounds.sup_d1),
            "sup_d2": encode_floats(bounds.sup_d2)}


def _bounds_from_json(obj: Any) -> SupNormBounds:
    if not isinstance(obj, Mapping):
        raise ConfigError("declared_bounds must be an object")
    extra = set(obj) - {"sup_f", "sup_d1", "sup_d2"}
    if extra:
        raise ConfigError(
            f"declared_bounds has unknown keys: {sorted(extra)}")

    def one(key: str) -> float | None:
        v = decode_floats(obj.get(key))
        if v is None:
            return None
        if not isinstance(v, (int, float)):
            raise ConfigError(f"declared_bounds.{key} must be a number, "
                              f"null, or \"inf\"")
        return float(v)

    return SupNormBounds(one("sup_f"), one("sup_d1"), one("sup_d2"))


def coefficient_to_json(coefficient: Coefficient) -> dict[str, Any]:
    """Serialize a coefficient to a plain dict.

    Raises :class:`ConfigError` for callback coefficients: closures cannot
    be written to a config file.  Tabulate them first.
    """
    if coefficient.preset_id == "custom-callback":
        raise ConfigError(
            "callback coefficients are not serializable; use "
            "Coefficient.tabulated to sample them onto a grid first")
    out: dict[str, Any] = {"preset": coefficient.preset_id,
                           "params": encode_floats(dict(coefficient.params))}
    if coefficient.declared_bounds is not None:
        out["declared_bounds"] = _bounds_to_json(coefficient.declared_bounds)
    return out


def coefficient_from_json(obj: Any) -> Coefficient:
    """Rebuild a coefficient from :func:`coefficient_to_json` output."""
    if not isinstance(obj, Mapping):
        raise ConfigError("coefficient must be an object")
    extra = set(obj) - {"preset", "params", "declared_bounds"}
    if extra:
        raise ConfigError(f"coefficient has unknown keys: {sorted(extra)}")
    preset = obj.get("preset")
    if preset == "custom-callback":
        raise ConfigError(
            "callback coefficients cannot be constructed from JSON")
    if preset not in _PRESET_PARAMS:
        raise UnknownPreset(
            f"unknown coefficient preset {preset!r}; "
            f"catalog: {', '.join(sorted(_PRESET_PARAMS))}")
    params = obj.get("params", {})
    if not isinstance(params, Mapping):
        raise ConfigError("coefficient params must be an object")
    required, optional = _PRESET_PARAMS[preset]
    missing = required - set(params)
    if missing:
        raise ConfigError(
            f"coefficient {preset!r} is missing params: {sorted(missing)}")
    unknown = set(params) - required - optional
    if unknown:
        raise ConfigError(
            f"coefficient {preset!r} has unknown params: {sorted(unknown)}")
    bounds = None
    if obj.get("declared_bounds") is not None:
        bounds = _bounds_from_json(obj["declared_bounds"])

    if preset == "custom-tabulated":
        nodes = np.asarray(params["nodes"], float)
        values = np.asarray(params["values"], float)
        d1 = params.get("d1_values")
        d1_values = None if d1 is None else np.asarray(d1, float)
        return Coefficient.tabulated(nodes, values, d1_values,
                                     declared_bounds=bounds)

    scalars = {}
    for key, value in params.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(
                f"coefficient param {key!r} must be a number")
        scalars[key] = float(value)
    builder = getattr(Coefficient, preset)
    return builder(declared_bounds=bounds, **scalars)


# -- problem and grid ---------------------------------------------------------


def problem_to_json(problem: ProblemSpec) -> dict[str, Any]:
    return {"x0": problem.x0,
            "alpha": problem.alpha,
            "drift": coefficient_to_json(problem.drift),
            "diffusion": coefficient_to_json(problem.diffusion),
            "horizon": problem.horizon}


def problem_from_json(obj: Any) -> ProblemSpec:
    if not isinstance(obj, Mapping):
        raise ConfigError("problem must be an object")
    required = {"x0", "alpha", "drift", "diffusion", "horizon"}
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"problem is missing fields: {sorted(missing)}")
    extra = set(obj) - required
    if extra:
        raise ConfigError(f"problem has unknown keys: {sorted(extra)}")
    for key in ("x0", "alpha", "horizon"):
        if not isinstance(obj[key], (int, float)) or isinstance(obj[key], bool):
            raise ConfigError(f"problem.{key} must be a number")
    return ProblemSpec(x0=float(obj["x0"]),
                       alpha=float(obj["alpha"]),
                       drift=coefficient_from_json(obj["drift"]),
                       diffusion=coefficient_from_json(obj["diffusion"]),
                       horizon=float(obj["horizon"]))


def grid_to_json(grid: GridSpec) -> dict[str, Any]:
    return {"n_steps": grid.n_steps, "horizon": grid.horizon}


def grid_from_json(obj: Any, default_horizon: float | None = None) -> GridSpec:
    """Build a :class:`GridSpec`; the horizon may be inherited.

    Configs usually state the horizon once, on the problem, and pass it
    here as ``default_horizon``.  A grid block that also states a horizon
    must agree with it.
    """
    if not isinstance(obj, Mapping):
        raise ConfigError("grid must be an object")
    extra = set(obj) - {"n_steps", "horizon"}
    if extra:
        raise ConfigError(f"grid has unknown keys: {sorted(extra)}")
    if "n_steps" not in obj:
        raise ConfigError("grid is missing field: n_steps")
    horizon = obj.get("horizon", default_horizon)
    if horizon is None:
        raise ConfigError("grid.horizon is required when no problem "
                          "horizon is available")
    if "horizon" in obj and default_horizon is not None \
            and not math.isclose(float(obj["horizon"]), default_horizon,
                                 rel_tol=0.0, abs_tol=0.0):
        raise ConfigError(
            f"grid.horizon ({obj['horizon']}) disagrees with "
            f"problem.horizon ({default_horizon})")
    return GridSpec(n_steps=obj["n_steps"], horizon=horizon)


# -- artifact writers ---------------------------------------------------------


def read_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_json(path: str | Path, payload: Mapping[str, Any], *,
               meta: Mapping[str, Any] | None = None) -> None:
    """Write a JSON report; ``meta`` becomes a leading ``meta`` block."""
    doc: dict[str, Any] = {}
    if meta is not None:
        doc["meta"] = dict(meta)
    doc.update(payload)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(encode_floats(doc), f, indent=2, allow_nan=False)
        f.write("\n")


def _format_cell(value: Any) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    # 17 significant digits round-trip any IEEE double exactly.
    return format(float(value), ".17g")


def write_csv(path: str | Path, columns: Mapping[str, np.ndarray], *,
              meta: Mapping[str, Any] | None = None) -> None:
    """Write named columns with ``# key = value`` metadata comment lines.

    All columns must share one length.  Integer-typed columns are written
    as integers, everything else with 17 significant digits.
    """
    names = list(columns)
    arrays = [np.asarray(columns[name]) for name in names]
    if not arrays:
        raise ConfigError("write_csv needs at least one column")
    n = arrays[0].shape[0]
    if any(a.ndim != 1 or a.shape[0] != n for a in arrays):
        raise ConfigError("write_csv columns must be 1-D with equal length")
    with open(path, "w", newline="", encoding="utf-8") as f:
        for key, value in (meta or {}).items():
            f.write(f"# {key} = {value}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(names)
        for i in range(n):
            writer.writerow([_format_cell(a[i]) for a in arrays])
