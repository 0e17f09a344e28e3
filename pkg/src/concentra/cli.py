"""Command line entry point: ``concentra <scenario> --config <path> [--serial] [--out <dir>]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .config import SCENARIOS, ExperimentConfig, default, load
from .errors import ConcentraError, ConfigError

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


@dataclass
class RunManifest:
    scenario: str
    schema: str
    config_hash: str
    config: dict
    versions: dict
    serial: bool
    wall_times: dict
    files: list
    checks: list
    passed: bool
    info: dict = field(default_factory=dict)
    error: str | None = None

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    out = {"concentra": __version__, "python": platform.python_version(),
           "numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        import pyamg
        out["pyamg"] = pyamg.__version__
    except ImportError:
        out["pyamg"] = None
    return out


def run(config: ExperimentConfig, out=None, serial: bool = True) -> RunManifest:
    """Execute one scenario; artifacts and ``manifest.json`` go to ``out``."""
    from . import scenarios
    from .scenarios import Recorder, _jsonable

    rec = Recorder(out)
    rec.workers = scenarios.default_workers(serial)
    t0 = time.perf_counter()
    error = None
    try:
        scenarios.execute(config, rec)
    except ConcentraError as exc:
        error = f"{config.scenario}: {type(exc).__name__}: {exc}"
        rec.check("scenario_completed", False, error, "no solver or extraction failure")
    rec.timings["total"] = time.perf_counter() - t0
    manifest = RunManifest(
        scenario=config.scenario, schema=config["schema"], config_hash=config.digest(),
        config=dict(config), versions=_versions(), serial=serial,
        wall_times=rec.timings, files=list(rec.files) + (["manifest.json"] if out is not None else []),
        checks=[c.as_dict() for c in rec.checks], passed=rec.passed and error is None,
        info=_jsonable(rec.info), error=error)
    if out is not None:
        manifest.write(Path(out) / "manifest.json")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="concentra", description="Run a concentration experiment scenario.")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", help="JSON configuration file (defaults are used without one)")
    p.add_argument("--serial", action="store_true", help="single process, single BLAS thread (bit-reproducible)")
    p.add_argument("--out", default=None, help="output directory (default: runs/<scenario>)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.serial:
        for var in _THREAD_VARS:
            os.environ[var] = "1"
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config, args.scenario) if args.config else default(args.scenario)
    except (ConfigError, OSError) as exc:
        print(f"concentra: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path("runs") / args.scenario
    manifest = run(cfg, out, serial=args.serial)
    for c in manifest.checks:
        mark = "PASS" if c["passed"] else "FAIL"
        crit = f" [criterion {c['criterion']}]" if c["criterion"] else ""
        print(f"{mark} {c['name']}{crit}: {c['value']}  ({c['threshold']})")
    print(f"{'OK' if manifest.passed else 'FAILED'}: {args.scenario}, manifest at {out / 'manifest.json'}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
