"""Experiment configuration: JSON files with a versioned schema.

Every field has an explicit default, and the fully resolved configuration is
written to the run manifest, so a run is described completely by it.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re

from .errors import ConfigError

SCHEMA = "concentra-config/1"
SCENARIOS = ("constants", "green-check", "projection-check", "ladder", "reduce", "solve",
             "theorem-main3", "theorem-main4")

_SHIFTED = {"kind": "shifted-ball", "center": [2.0, 0.0, 0.0], "radius": 1.0}
_WEIGHT = {"kind": "monomial", "k": [1], "N": 4}
_GRADED = {"layout": "auto", "points_per_delta": 128, "ratio": 1.04, "h_max": 0.02}

DEFAULTS = {
    "constants": {"n": 3, "dimensions": [3, 4, 5]},
    "green-check": {"n": 3, "domain": {"kind": "unit-ball"}, "grid": {"nodes": 65},
                    "pole": [0.3, 0.0, 0.0], "points": 20, "samples": 10_000,
                    "collar": [0.01, 0.2]},
    "projection-check": {"n": 3, "domain": {"kind": "unit-ball"}, "grid": {"nodes": 65},
                         "center": [0.7, 0.0, 0.0], "deltas": [0.04, 0.02, 0.01]},
    "ladder": {"n": 3, "domain": _SHIFTED, "weight": _WEIGHT,
               "configuration": {"mode": "separated", "anchors": [[1.0, 0.0, 0.0]],
                                 "d": "auto", "t": "auto"},
               "ladder": [0.16, 0.08, 0.04, 0.02], "grid": _GRADED,
               "fit_design": {"d_factors": [0.7, 1.0, 1.4], "t_factors": [0.8, 1.0, 1.28]},
               "expansion_checks": True},
    "reduce": {"n": 3, "domain": _SHIFTED, "weight": _WEIGHT,
               "anchor": [1.0, 0.0, 0.0], "tower_size": 2, "starts": 12,
               "box": [[0.005, 0.5], [0.05, 2.0]]},
    "solve": {"n": 3, "domain": _SHIFTED, "weight": _WEIGHT, "eps": 1.0,
              "initial": {"center": "domain", "delta": 0.3},
              "grid": {"layout": "auto", "nodes": 65},
              "samples": 500_000, "invariance_points": 1000},
    "theorem-main3": {"n": 3, "domain": _SHIFTED, "weight": _WEIGHT,
                      "configuration": {"mode": "separated", "anchors": [[1.0, 0.0, 0.0]],
                                        "d": "auto", "t": "auto"},
                      "ladder": [0.16, 0.08, 0.04, 0.02], "grid": _GRADED},
    "theorem-main4": {"n": 3, "domain": _SHIFTED, "weight": _WEIGHT,
                      "configuration": {"mode": "tower", "anchors": [[1.0, 0.0, 0.0]],
                                        "d": "auto", "t": "auto"},
                      "ladder": [0.16, 0.08, 0.04, 0.02], "grid": _GRADED},
}
COMMON = {"schema": SCHEMA, "seed": 0, "eta": None}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class ExperimentConfig(dict):
    """Resolved configuration (a plain dict with attribute helpers)."""

    @property
    def scenario(self) -> str:
        return self["scenario"]

    def digest(self) -> str:
        blob = json.dumps(self, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _fail(msg, text, key, source):
    line = _line_of(text, key) if text and key else None
    where = f"{source}:{line}" if line else source
    raise ConfigError(f"{where}: {msg}")


def _check_number_list(cfg, key, text, source, positive=True, length=None):
    val = cfg.get(key)
    if not isinstance(val, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                              for v in val):
        _fail(f"'{key}' must be a list of numbers", text, key, source)
    if positive and any(v <= 0 for v in val):
        _fail(f"'{key}' entries must be positive", text, key, source)
    if length is not None and len(val) != length:
        _fail(f"'{key}' must have {length} entries", text, key, source)


def resolve(raw: dict, scenario: str | None = None, text: str = "", source: str = "<config>") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    scen = raw.get("scenario", scenario)
    if scenario is not None and scen != scenario:
        _fail(f"config is for scenario '{scen}', command line asks for '{scenario}'", text, "scenario", source)
    if scen not in SCENARIOS:
        _fail(f"unknown scenario {scen!r}; expected one of {', '.join(SCENARIOS)}", text, "scenario", source)
    schema = raw.get("schema", SCHEMA)
    if schema != SCHEMA:
        _fail(f"unsupported schema {schema!r} (this version reads {SCHEMA})", text, "schema", source)
    allowed = set(DEFAULTS[scen]) | set(COMMON) | {"scenario"}
    for key in raw:
        if key not in allowed:
            _fail(f"unknown field '{key}' for scenario '{scen}'", text, key, source)
    cfg = _merge(_merge(COMMON, DEFAULTS[scen]), raw)
    cfg["scenario"] = scen
    cfg["schema"] = SCHEMA
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        _fail("'seed' must be an integer", text, "seed", source)
    if cfg.get("eta") is not None and not (isinstance(cfg["eta"], (int, float)) and cfg["eta"] > 0):
        _fail("'eta' must be null or a positive number", text, "eta", source)
    if "n" in cfg and (not isinstance(cfg["n"], int) or cfg["n"] < 3):
        _fail("'n' must be an integer >= 3", text, "n", source)
    if "domain" in cfg:
        kind = cfg["domain"].get("kind")
        if kind not in ("unit-ball", "ball", "shifted-ball", "rounded-box", "half-space"):
            _fail(f"unknown domain kind {kind!r}", text, "kind", source)
    if "weight" in cfg:
        kind = cfg["weight"].get("kind")
        if kind not in ("monomial", "constant"):
            _fail(f"unknown weight kind {kind!r}", text, "kind", source)
    if "ladder" in cfg:
        _check_number_list(cfg, "ladder", text, source)
        if len(cfg["ladder"]) < 3:
            _fail("'ladder' needs at least three values for the rate fits", text, "ladder", source)
    if "deltas" in cfg:
        _check_number_list(cfg, "deltas", text, source)
    if "configuration" in cfg:
        conf = cfg["configuration"]
        if conf.get("mode") not in ("separated", "tower"):
            _fail("configuration 'mode' must be 'separated' or 'tower'", text, "mode", source)
        for key in ("d", "t"):
            v = conf.get(key)
            if v != "auto" and not (isinstance(v, list) and v and all(isinstance(x, (int, float)) and x > 0 for x in v)):
                _fail(f"configuration '{key}' must be \"auto\" or a list of positive numbers", text, key, source)
    if "grid" in cfg:
        grid = cfg["grid"]
        if grid.get("layout", "auto") not in ("auto", "axisymmetric", "cartesian"):
            _fail("grid 'layout' must be auto, axisymmetric or cartesian", text, "layout", source)
        if "nodes" in grid and (not isinstance(grid["nodes"], int) or grid["nodes"] < 5):
            _fail("grid 'nodes' must be an integer >= 5", text, "nodes", source)
        if "ratio" in grid and not 1.0 < grid["ratio"] < 1.5:
            _fail("grid 'ratio' must lie in (1, 1.5)", text, "ratio", source)
    return ExperimentConfig(cfg)


def load(path, scenario: str | None = None) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return resolve(raw, scenario, text, str(path))


def default(scenario: str) -> ExperimentConfig:
    return resolve({"scenario": scenario})
