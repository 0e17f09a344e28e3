"""Acceptance gate: each primary criterion is run at its stated tolerance
through the same code path as the command line tool."""
import json

import pytest

from concentra import cli, config

from conftest import ACCEPTANCE_LINES

SCENARIO_OF = {1: "constants", 2: "green-check", 3: "projection-check", 4: "ladder", 5: "ladder",
               6: "ladder", 7: "reduce", 8: "theorem-main3", 9: "theorem-main4", 10: "solve"}

_runs: dict = {}


def run_scenario(name, tmp_path_factory):
    if name not in _runs:
        out = tmp_path_factory.mktemp(name)
        man = cli.run(config.default(name), out, serial=True)
        # the manifest on disk must round-trip
        assert json.loads((out / "manifest.json").read_text())["checks"] == man.checks
        _runs[name] = man
    return _runs[name]


@pytest.mark.parametrize("criterion", sorted(SCENARIO_OF))
def test_criterion(criterion, tmp_path_factory):
    name = SCENARIO_OF[criterion]
    man = run_scenario(name, tmp_path_factory)
    error, wall = man.error, man.wall_times["total"]
    checks = [c for c in man.checks if c["criterion"] == criterion]
    failed = [c["name"] for c in checks if not c["passed"]]
    runtime_ok = all(c["passed"] for c in man.checks if c["name"] == "runtime")
    ok = error is None and checks and not failed and runtime_ok
    detail = error or (f"{len(checks)} checks" + (f", failed: {', '.join(failed)}" if failed else ""))
    ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} "
                            f"[{name}, {wall:.1f} s] {detail}")
    assert error is None, error
    assert checks, f"no checks recorded for criterion {criterion}"
    assert not failed, failed
    assert runtime_ok
