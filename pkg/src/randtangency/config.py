"""Strict TOML experiment configuration.

Every key is checked against the known schema; unknown keys and wrong
types raise :class:`ConfigError`.  The resolved configuration is a plain
dict whose canonical JSON form is hashed for provenance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model import Box, HigherOrder, ModelParams, RegionGeometry
from .noise import NoiseKernel


class ConfigError(ValueError):
    """The configuration could not be parsed or has unknown/ill-typed keys."""


_NUM = (int, float)

MODEL_KEYS = {"sigma": "real", "lambda1": "real", "lambda2": "real", "a": "real", "A": "pair", "B": "pair",
              "b": "pair", "C": "matrix", "q0": "pair", "t_star": "real"}
HIGHER_KEYS = {"h_z3": "real", "h_t2": "real", "h_xx": "real", "h_tz2": "real", "H_zz": "pair",
               "H_zx1": "pair", "H_tt": "pair"}
REGION_KEYS = {"L_box": "box", "Qprime_box": "box", "Q_box": "box", "R_box": "box", "U_box": "box",
               "zeta": "real"}
NOISE_KEYS = {"kind": "str", "t0": "real", "epsilon": "real", "seed": "int", "breakpoints": "reals",
              "coeffs": "rows", "density_bound": "real"}
RUN_KEYS = {
    "x0": "triple", "steps": "int", "n_sequences": "int", "horizon": "int", "burn_in": "int",
    "resolutions": "ints", "samples_per_cell": "int", "n_quadrature": "int", "write_operator": "bool",
    "cesaro_steps": "int", "basin_sequences": "int", "basin_horizon": "int", "basin_threshold": "real",
    "cone_c0": "real", "cone_b0": "real", "cone_samples": "int", "curve_resolution": "int",
    "disk_base": "triple", "disk_resolution": "int", "ball_sequences": "int", "grid_spacing": "real",
    "regular_points": "triples", "recurrent_points": "triples",
}
OUTPUT_KEYS = {"directory": "str", "formats": "strs"}


def _is_real(v) -> bool:
    return isinstance(v, _NUM) and not isinstance(v, bool)


def _check_type(path: str, v: Any, kind: str):
    ok = {
        "real": lambda: _is_real(v),
        "int": lambda: isinstance(v, int) and not isinstance(v, bool),
        "bool": lambda: isinstance(v, bool),
        "str": lambda: isinstance(v, str),
        "pair": lambda: isinstance(v, list) and len(v) == 2 and all(map(_is_real, v)),
        "triple": lambda: isinstance(v, list) and len(v) == 3 and all(map(_is_real, v)),
        "matrix": lambda: (isinstance(v, list) and len(v) == 2
                           and all(isinstance(r, list) and len(r) == 2 and all(map(_is_real, r)) for r in v)),
        "box": lambda: (isinstance(v, list) and len(v) == 2
                        and all(isinstance(r, list) and len(r) == 3 and all(map(_is_real, r)) for r in v)),
        "reals": lambda: isinstance(v, list) and all(map(_is_real, v)),
        "ints": lambda: isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v),
        "strs": lambda: isinstance(v, list) and all(isinstance(x, str) for x in v),
        "rows": lambda: isinstance(v, list) and all(isinstance(r, list) and all(map(_is_real, r)) for r in v),
        "triples": lambda: isinstance(v, list) and all(
            isinstance(r, list) and len(r) == 3 and all(map(_is_real, r)) for r in v),
    }[kind]()
    if not ok:
        raise ConfigError(f"{path}: expected {kind}, got {v!r}")


def _check_section(path: str, section: Any, schema: dict, subsections=()) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: expected a table")
    for key, val in section.items():
        if key in subsections:
            continue
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key")
        _check_type(f"{path}.{key}", val, schema[key])


def default_config_text() -> str:
    return resources.files("randtangency").joinpath("data/default.toml").read_text()


def default_config() -> dict:
    return tomllib.loads(default_config_text())


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def check(cfg: dict) -> None:
    top = {"model", "noise", "run", "output"}
    for k in cfg:
        if k not in top:
            raise ConfigError(f"{k}: unknown section")
    m = cfg.get("model", {})
    _check_section("model", m, MODEL_KEYS, ("higher_order", "regions"))
    _check_section("model.higher_order", m.get("higher_order", {}), HIGHER_KEYS)
    _check_section("model.regions", m.get("regions", {}), REGION_KEYS)
    _check_section("noise", cfg.get("noise", {}), NOISE_KEYS)
    _check_section("run", cfg.get("run", {}), RUN_KEYS)
    _check_section("output", cfg.get("output", {}), OUTPUT_KEYS)


def load(path: Optional[str] = None, text: Optional[str] = None) -> dict:
    """Parse a config file (or text) and fill unspecified keys from the defaults."""
    try:
        if text is None and path is not None:
            text = Path(path).read_text()
        user = tomllib.loads(text) if text is not None else {}
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    check(user)
    cfg = _merge(default_config(), user)
    check(cfg)
    return cfg


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def model_from(cfg: dict) -> ModelParams:
    m = cfg["model"]
    ho = HigherOrder(**{k: (tuple(v) if isinstance(v, list) else float(v)) for k, v in m["higher_order"].items()})
    r = m["regions"]
    regions = RegionGeometry(**{k: Box(*r[k]) for k in ("L_box", "Qprime_box", "Q_box", "R_box", "U_box")},
                             zeta=float(r["zeta"]))
    try:
        return ModelParams(sigma=float(m["sigma"]), lambda1=float(m["lambda1"]), lambda2=float(m["lambda2"]),
                           a=float(m["a"]), A=tuple(m["A"]), B=tuple(m["B"]), b=tuple(m["b"]),
                           C=tuple(map(tuple, m["C"])), q0=tuple(m["q0"]), higher_order=ho,
                           t_star=float(m["t_star"]), regions=regions)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def kernel_from(cfg: dict) -> NoiseKernel:
    n = cfg["noise"]
    try:
        if n["kind"] == "Uniform":
            return NoiseKernel.uniform(float(n["t0"]), float(n["epsilon"]))
        return NoiseKernel.from_shape(float(n["t0"]), float(n["epsilon"]), n.get("breakpoints"),
                                      n.get("coeffs"), n.get("density_bound"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"noise: {exc}") from exc


def model_to_dict(p: ModelParams) -> dict:
    """Inverse of :func:`model_from`, giving the ``[model]`` table."""
    ho = p.higher_order
    g = p.regions
    return {
        "sigma": p.sigma, "lambda1": p.lambda1, "lambda2": p.lambda2, "a": p.a, "A": list(p.A), "B": list(p.B),
        "b": list(p.b), "C": [list(r) for r in p.C], "q0": list(p.q0), "t_star": p.t_star,
        "higher_order": {"h_z3": ho.h_z3, "h_t2": ho.h_t2, "h_xx": ho.h_xx, "h_tz2": ho.h_tz2,
                         "H_zz": list(ho.H_zz), "H_zx1": list(ho.H_zx1), "H_tt": list(ho.H_tt)},
        "regions": {"L_box": g.L_box.as_list(), "Qprime_box": g.Qprime_box.as_list(), "Q_box": g.Q_box.as_list(),
                    "R_box": g.R_box.as_list(), "U_box": g.U_box.as_list(), "zeta": g.zeta},
    }
