import json

import numpy as np
import pytest

from concentra import cli, scenarios
from concentra.bubble import BubbleParams, bubble_value
from concentra.errors import ExtractionFailure, SolverFailure
from concentra.geometry import Ball
from concentra.grid import GridField, graded_grid
from concentra.scenarios import extract_peaks, line_extrema, loglog_slope


def test_constants_run_writes_manifest(tmp_path, capsys):
    code = cli.main(["constants", "--serial", "--out", str(tmp_path)])
    assert code == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["passed"] and man["serial"] and man["error"] is None
    assert man["config"]["scenario"] == "constants"
    assert set(man["versions"]) >= {"concentra", "numpy", "scipy"}
    for f in man["files"]:
        assert (tmp_path / f).is_file()
    assert {"gamma.csv", "coefficients.csv"} <= set(man["files"])
    assert "PASS" in capsys.readouterr().out


def test_serial_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["constants", "--serial", "--out", str(a)]) == 0
    assert cli.main(["constants", "--serial", "--out", str(b)]) == 0
    for name in ("gamma.csv", "coefficients.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{"scenario": "constants", "oops": 1}')
    assert cli.main(["constants", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "unknown field" in capsys.readouterr().err
    assert cli.main(["constants", "--config", str(tmp_path / "missing.json")]) == 2


def test_solver_failure_is_reported(tmp_path, monkeypatch):
    def boom(cfg, rec):
        raise SolverFailure("did not converge")

    monkeypatch.setattr(scenarios, "execute", boom)
    assert cli.main(["constants", "--out", str(tmp_path)]) == 1
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert not man["passed"]
    assert "SolverFailure" in man["error"]
    assert man["checks"][-1]["name"] == "scenario_completed"


def test_failed_check_gives_exit_one(tmp_path, monkeypatch):
    monkeypatch.setattr(scenarios, "execute", lambda cfg, rec: rec.check("x", False, 1.0, "< 0"))
    assert cli.main(["constants", "--out", str(tmp_path)]) == 1


def test_loglog_slope():
    x = np.array([0.1, 0.2, 0.4])
    assert loglog_slope(x, 3 * x ** 1.5) == pytest.approx(1.5)


@pytest.fixture(scope="module")
def axisym_grid():
    dom = Ball()
    return graded_grid(dom, None, [[0.1, 0, 0], [-0.3, 0, 0]], [0.02 / 16] * 2, 1.1, 0.05)


def test_extract_peaks_recovers_scale(axisym_grid):
    b = BubbleParams(0.02, (0.1, 0, 0), 3)
    u = GridField(bubble_value(b, axisym_grid.points), axisym_grid)
    (pk,) = extract_peaks(u, 1)
    assert pk.delta_hat == pytest.approx(0.02, rel=1e-3)
    assert pk.location[0] == pytest.approx(0.1, abs=0.02 / 16)
    assert np.linalg.norm(pk.location[1:]) < 1e-12


def test_extract_peaks_two_signed(axisym_grid):
    b1 = BubbleParams(0.02, (0.1, 0, 0), 3)
    b2 = BubbleParams(0.02, (-0.3, 0, 0), 3)
    x = axisym_grid.points
    u = GridField(bubble_value(b1, x) - bubble_value(b2, x), axisym_grid)
    pks = extract_peaks(u, 2)
    assert sorted(np.sign(p.value) for p in pks) == [-1, 1]
    ext = line_extrema(u, [0, 0, 0], [1, 0, 0])
    assert len(ext) == 2
    assert sorted(s for s, _ in ext) == pytest.approx([-0.3, 0.1], abs=0.02 / 16)


def test_extract_peaks_failure(axisym_grid):
    b = BubbleParams(0.02, (0.1, 0, 0), 3)
    u = GridField(bubble_value(b, axisym_grid.points), axisym_grid)
    with pytest.raises(ExtractionFailure):
        extract_peaks(u, 2)
    with pytest.raises(ExtractionFailure):
        extract_peaks(GridField(np.ones(axisym_grid.N), axisym_grid), 1)


def test_numpy_values_serialise(tmp_path, monkeypatch):
    def checks(cfg, rec):
        rec.check("flags", True, [np.True_, np.bool_(True)], "all true")
        rec.check("pair", True, np.array([[np.float64(0.5), 1.0]]), "any")
        rec.check("nan", True, float("nan"), "any")

    monkeypatch.setattr(scenarios, "execute", checks)
    assert cli.main(["constants", "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert [c["value"] for c in man["checks"]] == [[True, True], [[0.5, 1.0]], "nan"]
