import json

import pytest

from concentra import config as C
from concentra.errors import ConfigError


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj, indent=2))
    return p


@pytest.mark.parametrize("scenario", C.SCENARIOS)
def test_defaults_resolve(scenario):
    cfg = C.default(scenario)
    assert cfg.scenario == scenario
    assert cfg["schema"] == C.SCHEMA
    assert cfg["seed"] == 0


def test_override_merges_nested(tmp_path):
    cfg = C.load(write(tmp_path, {"scenario": "ladder", "grid": {"ratio": 1.1}}))
    assert cfg["grid"]["ratio"] == 1.1
    assert cfg["grid"]["points_per_delta"] == 128


def test_unknown_field_reports_line(tmp_path):
    p = write(tmp_path, {"scenario": "constants", "n": 3, "bogus": 1})
    with pytest.raises(ConfigError, match=r"cfg.json:4: unknown field 'bogus'"):
        C.load(p)


def test_schema_mismatch(tmp_path):
    with pytest.raises(ConfigError, match="unsupported schema"):
        C.load(write(tmp_path, {"scenario": "constants", "schema": "concentra-config/0"}))


def test_scenario_mismatch(tmp_path):
    with pytest.raises(ConfigError, match="command line asks"):
        C.load(write(tmp_path, {"scenario": "constants"}), "ladder")


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "scenario": "constants",\n}')
    with pytest.raises(ConfigError, match="bad.json:3"):
        C.load(p)


@pytest.mark.parametrize("over", [
    {"ladder": [0.1, 0.05]},
    {"ladder": [0.1, -0.05, 0.02]},
    {"n": 2},
    {"seed": 1.5},
    {"grid": {"ratio": 2.0}},
    {"domain": {"kind": "torus"}},
    {"configuration": {"mode": "chain"}},
    {"configuration": {"d": [0.1, -1]}},
])
def test_invalid_values(over):
    with pytest.raises(ConfigError):
        C.resolve({"scenario": "ladder", **over})


def test_digest_stable_and_sensitive():
    a = C.resolve({"scenario": "reduce", "starts": 12})
    b = C.default("reduce")
    assert a.digest() == b.digest()
    assert C.resolve({"scenario": "reduce", "starts": 13}).digest() != a.digest()
