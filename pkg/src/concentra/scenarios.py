"""Scenario implementations behind the command line runner.

Each scenario takes a resolved configuration and a ``Recorder`` that collects
checks, tables and field snapshots.  Scenarios are pure functions of the
configuration (including its seed).
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ansatz as A
from . import elliptic as E
from . import reduced as RD
from .bubble import BubbleParams, alpha_n, bubble_value
from .errors import ConcentraError, ConfigError, ExtractionFailure
from .geometry import (Ball, HalfSpace, RoundedBox, SymmetrySpec, boundary_critical_point,
                       constant_weight, integrate_lifted, lift_to_invariant, monomial_weight,
                       profile_point, sphere_area)
from .green import GreenKernel, check_collar_bounds, regular_part_numeric
from .grid import Discretization, GridField, graded_grid, uniform_grid

log = logging.getLogger(__name__)

# wall-time budgets in seconds, per scenario
BUDGET = {"constants": 1.0, "green-check": 120.0, "projection-check": 300.0, "ladder": 1800.0,
          "reduce": 10.0, "solve": 120.0, "theorem-main3": 2700.0, "theorem-main4": 3600.0}


# ---------------------------------------------------------------- recording

@dataclass
class Check:
    name: str
    passed: bool
    value: object
    threshold: str
    criterion: int | None = None

    def as_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": _jsonable(self.value),
                "threshold": self.threshold, "criterion": self.criterion}


def _jsonable(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(_jsonable(v))


class Recorder:
    """Collects checks and writes artifacts into ``out`` (nothing is written
    when ``out`` is None)."""

    def __init__(self, out=None):
        self.out = Path(out) if out is not None else None
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
        self.checks: list[Check] = []
        self.files: list[str] = []
        self.info: dict = {}
        self.timings: dict = {}

    def check(self, name, passed, value, threshold, criterion=None) -> bool:
        c = Check(name, bool(passed), value, threshold, criterion)
        self.checks.append(c)
        log.info("%s %s: %s (%s)", "PASS" if c.passed else "FAIL", name, _fmt(value), threshold)
        return c.passed

    def table(self, name, columns, rows):
        if self.out is None:
            return None
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self.files.append(name)
        return path

    def snapshot(self, name, u: GridField, extra=None):
        if self.out is None:
            return None
        E.save_field(self.out / name, u, extra)
        self.files.append(name)
        return self.out / name

    @contextmanager
    def timed(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - t0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# ---------------------------------------------------------------- building blocks

def build_domain(spec: dict, n: int, eta=None, symmetric: bool = False):
    kind = spec["kind"]
    if kind in ("unit-ball", "ball", "shifted-ball"):
        center = spec.get("center", [0.0] * n) if kind != "unit-ball" else [0.0] * n
        radius = spec.get("radius", 1.0) if kind != "unit-ball" else 1.0
        if len(center) != n:
            raise ConfigError(f"domain center has {len(center)} coordinates, n = {n}")
        dom = Ball(center=center, radius=radius, n=n, eta=eta)
        if symmetric:
            dom = Ball(center=center, radius=radius, n=n, eta=eta, reflections=dom.axis_reflections())
        return dom
    if kind == "rounded-box":
        return RoundedBox(spec["lo"], spec["hi"], spec["rounding"], eta)
    if kind == "half-space":
        return HalfSpace(n)
    raise ConfigError(f"unknown domain kind {kind!r}")


def build_weight(spec: dict | None, domain, n: int):
    """Weight field and (for monomial weights) the symmetry data it comes from."""
    if spec is None or spec["kind"] == "constant":
        return constant_weight(n, float((spec or {}).get("value", 1.0))), None
    sym = SymmetrySpec(tuple(spec["k"]), int(spec["N"]))
    if sym.n != n:
        raise ConfigError(f"weight N - k = {sym.n} does not match n = {n}")
    return monomial_weight(sym, domain), sym


def choose_layout(grid_cfg: dict, domain, weight) -> str:
    layout = grid_cfg.get("layout", "auto")
    if layout != "auto":
        return layout
    return "axisymmetric" if domain.is_axisymmetric and weight.axisymmetric else "cartesian"


def grid_factory(domain, weight, grid_cfg: dict, eps: float, layout: str):
    """Configuration -> grid graded around the current bubble centres with
    ``h_min = delta_i / points_per_delta``."""
    fac = float(grid_cfg["points_per_delta"])
    ratio = float(grid_cfg["ratio"])
    h_max = float(grid_cfg["h_max"])

    def make(conf):
        bs = A.bubble_parameters(domain, conf, eps)
        return graded_grid(domain, weight, [b.center for b in bs], [b.delta / fac for b in bs],
                           ratio, h_max, layout=layout)

    return make


def bound_model(n, domain, weight, anchors):
    model = RD.assemble_coefficients(RD.gamma_constants(n))
    return model.bind(RD.anchor_weight_data(domain, weight, anchors))


def concentration_config(conf: dict, model, domain, rec: Recorder | None = None):
    mode = conf["mode"]
    anchors = [domain.project(np.asarray(s, float))[0] for s in conf["anchors"]]
    d, t = conf["d"], conf["t"]
    if d == "auto" or t == "auto":
        if mode == "separated":
            opt = [RD.single_peak_optimum(model, a, g) for a, g in model.weight_data[:len(anchors)]]
            dd, tt = [o[0] for o in opt], [o[1] for o in opt]
        else:
            size = len(d) if isinstance(d, list) else len(t) if isinstance(t, list) else 2
            res = RD.minimize_model(model, "tower", ((0.005, 0.5), (0.05, 2.0)), size=size)
            dd, tt = list(res.d), list(res.t)
        d = dd if d == "auto" else d
        t = tt if t == "auto" else t
    cfg = A.ConcentrationConfig(mode, anchors, d, t)
    if rec is not None:
        rec.info["initial_configuration"] = {"mode": mode, "anchors": [list(a) for a in cfg.anchors],
                                             "d": list(cfg.d), "t": list(cfg.t)}
    return cfg


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float))), 1)[0])


# ---------------------------------------------------------------- peak extraction

@dataclass
class Peak:
    location: np.ndarray      # ambient point
    value: float              # refined signed peak value
    delta_hat: float
    node: int


def _neighbours(disc: Discretization, axis: int, step: int) -> np.ndarray:
    nb = disc.multi.copy()
    nb[:, axis] += step
    ok = (nb[:, axis] >= 0) & (nb[:, axis] < disc.shape[axis])
    j = np.full(disc.N, -1)
    j[ok] = disc.index[tuple(nb[ok].T)]
    return j


def _vertex(hm, hp, um, u0, up):
    """Offset and value of the parabola through (-hm, um), (0, u0), (hp, up)."""
    a = ((up - u0) / hp + (um - u0) / hm) / (hp + hm)
    b = ((up - u0) * hm / hp - (um - u0) * hp / hm) / (hp + hm)
    if a == 0:
        return 0.0, u0
    s = -b / (2 * a)
    s = min(max(s, -hm), hp)
    return s, u0 + b * s + a * s * s


def extract_peaks(u: GridField, count: int | None = None, threshold: float = 10.0) -> list[Peak]:
    """Local extrema of ``|u|`` above ``threshold`` times the RMS value,
    refined per axis by a parabola on the (non-uniform) stencil.

    Nodes next to the boundary see the boundary value 0 as a neighbour; on the
    symmetry axis of the meridian layout the mirror node is used.  With
    ``count`` given, fewer peaks than requested (peaks merged into one) raise
    ``ExtractionFailure``; the ``count`` largest are returned."""
    disc = u.disc
    v = np.asarray(u.values, float)
    n = disc.n
    rms = math.sqrt(max(disc.integrate(v * v), 0.0) / disc.total_volume)
    cand = np.abs(v) > threshold * rms
    sgn = np.sign(v)
    nbrs = []
    for k in range(disc.grid_dim):
        jm, jp = _neighbours(disc, k, -1), _neighbours(disc, k, +1)
        if disc.radial_axis is not None and k == disc.radial_axis:
            on_axis = disc.multi[:, k] == 0
            jm = np.where(on_axis, jp, jm)
        nbrs.append((jm, jp))
        for j in (jm, jp):
            other = np.where(j >= 0, sgn * v[np.maximum(j, 0)], 0.0)
            cand &= sgn * v >= other
    peaks = []
    for i in np.flatnonzero(cand):
        g = disc.coords[i].copy()
        value = v[i]
        for k, (jm, jp) in enumerate(nbrs):
            ax = disc.axes[k]
            m = disc.multi[i, k]
            hp = ax[m + 1] - ax[m] if m + 1 < ax.size else ax[m] - ax[m - 1]
            hm = ax[m] - ax[m - 1] if m > 0 else hp
            um = v[jm[i]] if jm[i] >= 0 else 0.0
            up = v[jp[i]] if jp[i] >= 0 else 0.0
            s, top = _vertex(hm, hp, um, v[i], up)
            g[k] += s
            value += top - v[i]
        x = disc.to_ambient(g[None])[0]
        dh = (alpha_n(n) / abs(value)) ** (2.0 / (n - 2))
        peaks.append(Peak(x, float(value), float(dh), int(i)))
    peaks.sort(key=lambda p: -abs(p.value))
    if count is not None:
        if len(peaks) < count:
            raise ExtractionFailure(f"found {len(peaks)} peaks above {threshold:g} x RMS, expected {count}")
        peaks = peaks[:count]
    return peaks


def line_extrema(u: GridField, point, direction, rel: float = 1e-3):
    """Strict interior extrema of ``u`` along the grid nodes on the line
    ``point + s direction``; returns rows ``(s, value)`` refined by parabolas.
    Values below ``rel * max|u|`` on the line are ignored."""
    disc = u.disc
    point = np.asarray(point, float)
    direction = np.asarray(direction, float) / np.linalg.norm(direction)
    x = disc.points
    s = (x - point) @ direction
    perp = np.linalg.norm(x - point - s[:, None] * direction, axis=1)
    on = perp <= 1e-9 * (1.0 + np.abs(x).max())
    if on.sum() < 3:
        raise ExtractionFailure("no grid line along the requested direction")
    order = np.argsort(s[on])
    ss = s[on][order]
    uu = np.asarray(u.values, float)[on][order]
    # boundary values close the profile on both sides
    top = np.abs(uu).max()
    out = []
    for i in range(len(uu)):
        um = uu[i - 1] if i > 0 else 0.0
        up = uu[i + 1] if i + 1 < len(uu) else 0.0
        if abs(uu[i]) < rel * top:
            continue
        if (uu[i] > um and uu[i] > up) or (uu[i] < um and uu[i] < up):
            hm = ss[i] - ss[i - 1] if i > 0 else ss[1] - ss[0]
            hp = ss[i + 1] - ss[i] if i + 1 < len(ss) else hm
            off, val = _vertex(hm, hp, um, uu[i], up)
            out.append((ss[i] + off, val))
    return out


# ---------------------------------------------------------------- scenarios

def scenario_constants(cfg, rec: Recorder):
    rows = []
    for n in cfg["dimensions"]:
        g = RD.gamma_constants(n)
        rows.append((n, g.gamma1, g.gamma2, g.gamma3))
        rec.check(f"gamma3_negative_n{n}", g.gamma3 < 0, g.gamma3, "< 0", 1)
        if n == 3:
            ref1 = 3 ** 1.5 * math.pi ** 2 / 4
            ref2 = 4 * math.sqrt(3) * math.pi
            e1 = abs(g.gamma1 - ref1) / ref1
            e2 = abs(g.gamma2 - ref2) / ref2
            rec.check("gamma1_closed_form_n3", e1 < 1e-8, e1, "relative error < 1e-8", 1)
            rec.check("gamma2_closed_form_n3", e2 < 1e-8, e2, "relative error < 1e-8", 1)
    rec.table("gamma.csv", ["n", "gamma1", "gamma2", "gamma3"], rows)
    model = RD.assemble_coefficients(RD.gamma_constants(cfg["n"]))
    rec.table("coefficients.csv", ["name", "value", "formula"],
              [(f"c{i}", model.coefficient(i), model.provenance[f"c{i}"]) for i in range(1, 7)])


def scenario_green_check(cfg, rec: Recorder):
    n = cfg["n"]
    dom = build_domain(cfg["domain"], n, cfg["eta"])
    disc = uniform_grid(dom, cfg["grid"]["nodes"])
    g = GreenKernel(dom)
    pole = np.asarray(cfg["pole"], float)
    rng = np.random.default_rng(cfg["seed"])
    Hn = regular_part_numeric(g, pole, disc)
    pts = dom.sample_interior(cfg["points"], rng)
    got = disc.interpolate(Hn.values, pts, outside="renormalize")
    want = g.regular(pts, np.broadcast_to(pole, pts.shape))
    err = np.abs(got - want) / np.abs(want)
    rec.table("green_points.csv", ["x" + str(i + 1) for i in range(n)] + ["H_numeric", "H_exact", "rel_error"],
              [tuple(p) + (a, b, e) for p, a, b, e in zip(pts, got, want, err)])
    rec.check("H_numeric_vs_closed_form", err.max() < 0.01, float(err.max()), "max relative error < 1%", 2)
    lo, hi = cfg["collar"]
    rep = check_collar_bounds(g, samples=cfg["samples"], seed=cfg["seed"], dmin=lo, dmax=hi)
    if rec.out is not None:
        rep.write_csv(rec.out / "collar.csv")
        rec.files.append("collar.csv")
    rec.table("collar_bins.csv", ["bin", "ratio2", "ratio31", "ratio15"],
              [(b, rep.binned["ratio2"][b], rep.binned["ratio31"][b], rep.binned["ratio15"][b])
               for b in range(len(rep.binned["ratio2"]))])
    for name in ("ratio2", "ratio31", "ratio15"):
        ok = math.isfinite(rep.sup[name]) and rep.monotone[name]
        rec.check(f"collar_{name}", ok, rep.sup[name], "finite, non-increasing as d_x -> 0", 2)


def scenario_projection_check(cfg, rec: Recorder):
    n = cfg["n"]
    dom = build_domain(cfg["domain"], n, cfg["eta"])
    disc = uniform_grid(dom, cfg["grid"]["nodes"])
    g = GreenKernel(dom)
    xi = np.asarray(cfg["center"], float)
    h = disc.h_max
    Hn = regular_part_numeric(g, xi, disc).values
    He = g.regular(disc.points, np.broadcast_to(xi, disc.points.shape)) if g.exact else Hn
    an = alpha_n(n)
    rows, rem = [], []
    for dl in cfg["deltas"]:
        b = BubbleParams(dl, xi, n)
        PU = E.project_bubble(disc, b).values
        U = bubble_value(b, disc.points)
        D = U - PU
        upper = an * dl ** ((n - 2) / 2) * He
        R = PU - U + an * dl ** ((n - 2) / 2) * Hn
        lo_v, hi_v = float(D.min()), float((D - upper).max())
        rows.append((dl, lo_v, hi_v, float(np.abs(R).max())))
        rem.append(float(np.abs(R).max()))
        rec.check(f"sandwich_delta{dl:g}", lo_v >= -2 * h * h and hi_v <= 2 * h * h,
                  [lo_v, hi_v], "0 <= U - PU <= alpha delta^{(n-2)/2} H within 2h^2", 3)
    rec.table("projection.csv", ["delta", "min_U_minus_PU", "max_excess_over_H_bound", "remainder_sup"], rows)
    slope = loglog_slope(cfg["deltas"], rem)
    need = (n + 2) / 2 - 0.2
    rec.check("remainder_slope", slope >= need, slope, f">= {need:g}", 3)


def _ladder_point(args):
    cfg, eps, conf = args
    n = cfg["n"]
    dom = build_domain(cfg["domain"], n, cfg["eta"])
    weight, _ = build_weight(cfg.get("weight"), dom, n)
    make = grid_factory(dom, weight, cfg["grid"], eps, choose_layout(cfg["grid"], dom, weight))
    model = bound_model(n, dom, weight, conf.anchors)
    t0 = time.perf_counter()
    disc = make(conf)
    st = A.build_ansatz(disc, conf, eps)
    cr = A.solve_correction(st, tol=1e-12)
    out = {"eps": eps, "nodes": disc.N, "h_min": disc.h_min,
           "residual": A.residual_norm(st), "phi_norm": cr.norm,
           "coercivity": A.coercivity_estimate(st),
           "coercivity_free": A.coercivity_estimate(st, project=False),
           "J_reduced": A.reduced_energy_numeric(st, cr.phi),
           "expansion": RD.expansion_separated(model, conf, eps)}
    out["time"] = time.perf_counter() - t0
    return out


def _fit_point(args):
    cfg, eps, conf = args
    n = cfg["n"]
    dom = build_domain(cfg["domain"], n, cfg["eta"])
    weight, _ = build_weight(cfg.get("weight"), dom, n)
    make = grid_factory(dom, weight, cfg["grid"], eps, choose_layout(cfg["grid"], dom, weight))
    st = A.build_ansatz(make(conf), conf, eps)
    cr = A.solve_correction(st, tol=1e-12)
    return A.reduced_energy_numeric(st, cr.phi)


def _map(func, items, workers):
    if workers <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, items))


def scenario_ladder(cfg, rec: Recorder):
    n = cfg["n"]
    dom = build_domain(cfg["domain"], n, cfg["eta"])
    weight, _ = build_weight(cfg.get("weight"), dom, n)
    conf0 = cfg["configuration"]
    anchors = [dom.project(np.asarray(s, float))[0] for s in conf0["anchors"]]
    model = bound_model(n, dom, weight, anchors)
    conf = concentration_config(conf0, model, dom, rec)
    if conf.mode != "separated":
        raise ConfigError("the ladder scenario expects a separated configuration")
    ladder = sorted(cfg["ladder"], reverse=True)
    workers = getattr(rec, "workers", 1)
    recs = _map(_ladder_point, [(cfg, e, conf) for e in ladder], workers)
    for r in recs:
        r["J_minus_expansion_over_eps"] = (r["J_reduced"] - r["expansion"]) / r["eps"]
        r["projection_drop"] = r["coercivity"] / r["coercivity_free"]
    rl = A.ladder_rows(recs)
    cols = ("eps", "residual", "phi_norm", "coercivity", "J_reduced")
    rec.table("ladder.csv", list(cols), [[r[c] for c in cols] for r in rl])
    extra = ("eps", "nodes", "h_min", "residual", "phi_norm", "coercivity", "coercivity_free",
             "projection_drop", "J_reduced", "expansion", "J_minus_expansion_over_eps", "time")
    rec.table("ladder_detail.csv", list(extra), [[r[c] for c in extra] for r in recs])
    eps = [r["eps"] for r in recs]

    # residual and correction rates
    sR = loglog_slope(eps, [r["residual"] for r in recs])
    sP = loglog_slope(eps, [r["phi_norm"] for r in recs])
    rec.check("residual_rate", sR > 0.5, sR, "slope of log|R| vs log eps > 0.5", 4)
    rec.check("correction_rate", sP > 0.5, sP, "slope of log|phi| vs log eps > 0.5", 4)
    rec.info["rates_last_three"] = {"residual": loglog_slope(eps[-3:], [r["residual"] for r in recs[-3:]]),
                                    "phi": loglog_slope(eps[-3:], [r["phi_norm"] for r in recs[-3:]])}
    rec.check("correction_bounded_by_residual",
              all(r["phi_norm"] <= r["residual"] / r["coercivity"] for r in recs),
              [r["phi_norm"] * r["coercivity"] / r["residual"] for r in recs], "|phi| <= |R| / c_L")

    # coercivity
    co = [r["coercivity"] for r in recs]
    spread = max(co) / min(co)
    rec.check("coercivity_uniform", spread <= 1.5, spread, "max/min over the ladder <= 1.5", 5)
    drops = [r["projection_drop"] for r in recs]
    rec.check("coercivity_projection_drop", min(drops[-3:]) >= 10.0, drops,
              ">= 10x over the last three ladder points", 5)

    # energy expansion
    dev = [r["J_minus_expansion_over_eps"] for r in recs]
    last = [abs(x) for x in dev[-3:]]
    rec.check("expansion_remainder_o_eps", last[0] > last[1] > last[2], dev,
              "|J - expansion| / eps decreasing over the last three points", 6)
    fit = fit_coefficients(cfg, conf, ladder[-1], model, rec, workers)
    c5 = model.coefficient(5)
    rel = abs(fit["c5"] - c5) / c5
    rec.check("fitted_c5", rel <= 0.10, {"fitted": fit["c5"], "assembled": c5}, "within 10%", 6)
    rec.check("fitted_c456_positive", all(fit[k] > 0 for k in ("c4", "c5", "c6")),
              [fit["c4"], fit["c5"], fit["c6"]], "all > 0", 6)

    # ball-integral checks, for information
    if cfg["expansion_checks"]:
        layout = choose_layout(cfg["grid"], dom, weight)
        try:
            rows = RD.expansion_checks(lambda e: grid_factory(dom, weight, cfg["grid"], e, layout)(conf),
                                   model, conf, ladder, dom)
            keys = sorted({k for r in rows for k in r})
            rec.table("expansion_checks.csv", keys, [[r.get(k, float("nan")) for k in keys] for r in rows])
        except ConcentraError as exc:
            rec.info["expansion_checks"] = f"skipped: {exc}"


def fit_coefficients(cfg, conf, eps, model, rec: Recorder, workers=1) -> dict:
    """Least-squares fit of ``J = c0 + c4 eps g t + c5 eps a (d/2t)^{n-2} - c6 eps a log d``
    over a (d, t) design around the configuration, at a single eps."""
    n = model.n
    a, g = model.weight_data[0]
    design = cfg["fit_design"]
    d0, t0 = conf.d[0], conf.t[0]
    pts = [(d0 * fd, t0 * ft) for fd in design["d_factors"] for ft in design["t_factors"]]
    jobs = [(cfg, eps, conf.with_parameters([d], [t])) for d, t in pts]
    J = np.array(_map(_fit_point, jobs, workers))
    d = np.array([p[0] for p in pts])
    t = np.array([p[1] for p in pts])
    X = np.column_stack([np.ones_like(d), eps * g * t, eps * a * (d / (2 * t)) ** (n - 2), -eps * a * np.log(d)])
    coef, *_ = np.linalg.lstsq(X, J, rcond=None)
    rec.table("energy_fit.csv", ["d", "t", "J_reduced", "J_fit"], [(a_, b_, c_, f_) for a_, b_, c_, f_ in zip(d, t, J, X @ coef)])
    out = {"eps": eps, "c0": coef[0], "c4": coef[1], "c5": coef[2], "c6": coef[3]}
    rec.info["energy_fit"] = {k: float(v) for k, v in out.items()}
    rec.table("coefficient_fit.csv", ["name", "fitted", "assembled"],
              [(f"c{i}", out[f"c{i}"], model.coefficient(i)) for i in (4, 5, 6)])
    return out


def scenario_reduce(cfg, rec: Recorder):
    n = cfg["n"]
    dom = build_domain(cfg["domain"], n, cfg["eta"])
    weight, _ = build_weight(cfg.get("weight"), dom, n)
    s = dom.project(np.asarray(cfg["anchor"], float))[0]
    model = bound_model(n, dom, weight, [s])
    a, g = model.weight_data[0]
    box = tuple(tuple(b) for b in cfg["box"])
    d_star, t_star = RD.single_peak_optimum(model, a, g)
    opt = RD.minimize_model(model, "separated", box, starts=cfg["starts"], seed=cfg["seed"], size=1)
    ed = abs(opt.d[0] - d_star) / d_star
    et = abs(opt.t[0] - t_star) / t_star
    rec.check("single_peak_optimum", max(ed, et) <= 1e-6, max(ed, et), "relative error <= 1e-6", 7)
    tw = RD.minimize_model(model, "tower", box, starts=cfg["starts"], seed=cfg["seed"], size=cfg["tower_size"])
    ordered = tw.t[0] > 0 and bool(np.all(np.diff(tw.t) > 0))
    rec.check("tower_ordering", ordered, list(tw.t), "0 < t_1 < t_2", 7)
    rec.check("tower_hessian_positive", bool(np.all(tw.hessian_eigenvalues > 0)),
              list(tw.hessian_eigenvalues), "all eigenvalues > 0", 7)
    rec.table("minimizers.csv", ["mode", "index", "d", "t", "value", "gradient_norm"],
              [("separated", 0, opt.d[0], opt.t[0], opt.value, opt.gradient_norm)]
              + [("tower", i, tw.d[i], tw.t[i], tw.value, tw.gradient_norm) for i in range(len(tw.d))])
    rec.table("coefficients.csv", ["name", "value", "formula"],
              [(f"c{i}", model.coefficient(i), model.provenance[f"c{i}"]) for i in range(1, 7)])
    if len(tw.d) == 2:
        dv = tw.d[0] * np.exp(np.linspace(-1, 1, 21))
        tv = np.linspace(0.2 * tw.t[0], 0.95 * tw.t[1], 21)
        rows = RD.psi_landscape(model, dv, tv, fixed=(tw.d[1], tw.t[1]))
        rec.table("psi_landscape.csv", ["d1", "t1", "d2", "t2", "psi"], rows.tolist())


def _random_rotation(rng, size):
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    return q * np.sign(np.diag(r))


def nehari_iteration(disc: Discretization, u0: np.ndarray, eps: float, max_iter: int = 2000,
                     tol: float = 1e-10) -> tuple[np.ndarray, int]:
    """Normalised fixed-point iteration ``u <- m(u)^{r/(r-1)} i*(a f(u))`` with
    the Nehari quotient ``m``; ``r`` is the degree of ``f``.  It is globally
    attracted to the least-energy solution."""
    A_ = disc.stiffness("a")
    S = disc.solver("a")
    Mw = disc.volumes * disc.node_weight
    r = E.exponent(disc.n, eps) + 1.0
    u = np.asarray(u0, float)
    for it in range(1, max_iter + 1):
        F = Mw * E.nonlinearity(u, disc.n, eps)
        m = (u @ (A_ @ u)) / (u @ F)
        un = m ** (r / (r - 1.0)) * S.solve(F)
        change = np.abs(un - u).max() / np.abs(un).max()
        u = un
        if change < tol:
            break
    return u, it


def scenario_solve(cfg, rec: Recorder):
    n = cfg["n"]
    dom = build_domain(cfg["domain"], n, cfg["eta"])
    weight, sym = build_weight(cfg.get("weight"), dom, n)
    eps = float(cfg["eps"])
    layout = choose_layout(cfg["grid"], dom, weight)
    lo, hi = dom.bounding_box
    nodes = cfg["grid"]["nodes"]
    if layout == "axisymmetric":
        h = float(np.max(hi - lo)) * 1.04 / (nodes - 1)
        disc = graded_grid(dom, weight, [0.5 * (lo + hi)], h, 1.04, h, layout="axisymmetric")
    else:
        disc = uniform_grid(dom, nodes, weight, margin=0.02)
    init = cfg["initial"]
    center = 0.5 * (lo + hi) if init["center"] == "domain" else np.asarray(init["center"], float)
    u0 = E.project_bubble(disc, BubbleParams(init["delta"], center, n)).values
    with rec.timed("nehari"):
        u1, it = nehari_iteration(disc, u0, eps)
    with rec.timed("newton"):
        nr = E.newton_solve(disc, eps, GridField(u1, disc))
    u = nr.u
    rec.info["solve"] = {"nodes": disc.N, "nehari_iterations": it, "newton_iterations": nr.iterations,
                         "residual": nr.residual_history[-1], "u_max": float(u.values.max())}
    rec.check("newton_converged", nr.converged and not nr.trivial, nr.residual_history[-1],
              "dual residual < 1e-9, nontrivial")
    rec.snapshot("u.field", u, {"eps": eps, "scenario": "solve"})
    rec.table("newton.csv", ["iteration", "residual"], list(enumerate(nr.residual_history)))
    if sym is None:
        return
    rng = np.random.default_rng(cfg["seed"])

    def ufun(x):
        return disc.interpolate(u.values, x)

    # invariance of the lift under block rotations
    x = dom.sample_interior(cfg["invariance_points"], rng)
    blocks = []
    for i, k in enumerate(sym.k_list):
        d = rng.standard_normal((len(x), k + 1))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        blocks.append(x[:, i:i + 1] * d)
    y = np.concatenate(blocks + [x[:, sym.m:]], axis=1)
    yr = y.copy()
    start = 0
    for k in sym.k_list:
        Q = _random_rotation(rng, k + 1)
        yr[:, start:start + k + 1] = y[:, start:start + k + 1] @ Q.T
        start += k + 1
    v = lift_to_invariant(ufun, y, sym)
    vr = lift_to_invariant(ufun, yr, sym)
    dev = float(np.abs(v - vr).max() / max(np.abs(v).max(), 1e-300))
    rec.check("lift_invariant", dev <= 1e-12, dev, "max |v(y) - v(Ry)| / max|v| <= 1e-12", 10)
    prof = float(np.abs(profile_point(y, sym) - x).max())
    rec.info["profile_roundtrip"] = prof
    # measure identity
    area = float(np.prod([sphere_area(k) for k in sym.k_list]))
    exact = area * disc.integrate(u.values, weighted=True)
    mc, se = integrate_lifted(ufun, sym, dom, cfg["samples"], rng)
    rel = abs(mc - exact) / abs(exact)
    rec.table("measure_identity.csv", ["samples", "monte_carlo", "std_error", "grid_integral", "rel_diff"],
              [(cfg["samples"], mc, se, exact, rel)])
    rec.check("measure_identity", rel < 0.01, rel, "relative difference < 1%", 10)


# ---------------------------------------------------------------- continuation

@dataclass
class LadderPoint:
    eps: float
    config: A.ConcentrationConfig
    disc: Discretization
    u: GridField
    reduced_iterations: int
    newton_iterations: int
    newton_residual: float
    multipliers: np.ndarray
    time: float
    extras: dict = field(default_factory=dict)


def continuation(cfg, rec: Recorder, symmetric: bool = False) -> list[LadderPoint]:
    """Reduced solve plus Newton at every ladder point, warm-started from the
    previous (d, t).  At each eps the grid follows the bubbles."""
    n = cfg["n"]
    dom = build_domain(cfg["domain"], n, cfg["eta"], symmetric=symmetric)
    weight, _ = build_weight(cfg.get("weight"), dom, n)
    conf0 = cfg["configuration"]
    anchors = [dom.project(np.asarray(s, float))[0] for s in conf0["anchors"]]
    model = bound_model(n, dom, weight, anchors)
    conf = concentration_config(conf0, model, dom, rec)
    layout = choose_layout(cfg["grid"], dom, weight)
    if symmetric:
        ok = dom.check_reflection_symmetry(weight, seed=cfg["seed"])
        rec.check("domain_weight_reflection_symmetric", ok, ok, "every declared reflection preserves domain and weight", 9)
    out = []
    for eps in sorted(cfg["ladder"], reverse=True):
        t0 = time.perf_counter()
        make = grid_factory(dom, weight, cfg["grid"], eps, layout)
        try:
            res = A.solve_reduced(make, conf, eps)
            disc = res.state.disc
            u0 = GridField(res.state.V.values + res.correction.phi.values, disc)
            nr = E.newton_solve(disc, eps, u0, symmetrize=dom.reflections if symmetric else None)
        except ConcentraError as exc:
            rec.check(f"newton_eps{eps:g}", False, str(exc), "converges from the ansatz", 9 if symmetric else 8)
            log.warning("eps=%g failed: %s", eps, exc)
            continue
        conf = res.config
        pt = LadderPoint(eps, conf, disc, nr.u, res.iterations, nr.iterations, nr.residual_history[-1],
                         res.equations, time.perf_counter() - t0)
        out.append(pt)
        rec.check(f"newton_eps{eps:g}", nr.converged and not nr.trivial, nr.residual_history[-1],
                  "converges from the ansatz, nontrivial", 9 if symmetric else 8)
        rec.snapshot(f"u_eps{eps:g}.field", nr.u, {"eps": eps, "d": list(conf.d), "t": list(conf.t)})
        log.info("eps=%g nodes=%d d=%s t=%s newton=%d %.1fs", eps, disc.N, conf.d, conf.t, nr.iterations, pt.time)
    rec.info["model"] = {"c": list(model.c), "weight_data": [list(w) for w in model.weight_data]}
    rec.info["layout"] = layout
    rec._domain, rec._weight, rec._model = dom, weight, model
    return out


def scenario_theorem_main3(cfg, rec: Recorder):
    pts = continuation(cfg, rec)
    if len(pts) < len(cfg["ladder"]):
        return
    dom, weight, model = rec._domain, rec._weight, rec._model
    n = cfg["n"]
    rows = []
    s_crit = [boundary_critical_point(dom, weight, s) for s in pts[0].config.anchors]
    dist, dh, offs = [], [], []
    for p in pts:
        peaks = extract_peaks(p.u, count=p.config.size)
        peaks.sort(key=lambda q: min(np.linalg.norm(q.location - np.asarray(s)) for s in p.config.anchors))
        pk = peaks[0]
        s = dom.project(pk.location)[0]
        nu = dom.inward_normal(s)
        off = float((pk.location - s) @ nu)
        dcrit = float(min(np.linalg.norm(s - c) for c in s_crit))
        dist.append(dcrit)
        dh.append(pk.delta_hat)
        offs.append(off / p.eps)
        rows.append((p.eps, p.disc.N, p.config.d[0], p.config.t[0], pk.value, pk.delta_hat,
                     pk.delta_hat / p.eps ** A.scale_exponent(n), off, off / p.eps, dcrit,
                     p.reduced_iterations, p.newton_iterations, p.newton_residual, p.time))
    rec.table("continuation.csv", ["eps", "nodes", "d", "t", "u_max", "delta_hat", "delta_hat_scaled",
                                   "offset", "offset_over_eps", "anchor_distance", "reduced_iterations",
                                   "newton_iterations", "newton_residual", "time"], rows)
    eps = [p.eps for p in pts]
    slope = loglog_slope(eps, dh)
    expo = A.scale_exponent(n)
    rec.check("delta_hat_slope", abs(slope - expo) <= 0.15, slope, f"{expo:g} +/- 0.15", 8)
    scaled = [d / e ** expo for d, e in zip(dh, eps)]
    drift = abs(scaled[-1] - scaled[-2]) / scaled[-1]
    rec.check("delta_hat_scaled_drift", drift < 0.20, drift, "relative change over the last two points < 20%")
    rec.check("anchor_distance_nonincreasing", all(b <= a + 1e-12 for a, b in zip(dist, dist[1:])), dist,
              "distance to the boundary critical point of a does not grow along the ladder", 8)
    a, g = model.weight_data[0]
    t_star = RD.single_peak_optimum(model, a, g)[1]
    rel = abs(offs[-1] - t_star) / t_star
    rec.check("offset_over_eps_vs_t_star", rel <= 0.25, {"offset_over_eps": offs[-1], "t_star": t_star},
              "within 25% at the finest eps", 8)
    rec.info["offset_over_eps"] = offs


def scenario_theorem_main4(cfg, rec: Recorder):
    pts = continuation(cfg, rec, symmetric=True)
    if len(pts) < len(cfg["ladder"]):
        return
    dom = rec._domain
    rows, offsets, ordered = [], [], []
    for p in pts:
        s = np.asarray(p.config.anchors[0])
        nu = dom.inward_normal(s)
        ext = line_extrema(p.u, s, nu)
        signs = [np.sign(v) for _, v in ext]
        ok = len(ext) == 2 and signs[0] * signs[1] < 0
        rec.check(f"two_opposite_extrema_eps{p.eps:g}", ok, [list(e) for e in ext],
                  "exactly two interior extrema of opposite sign on the symmetry line", 9)
        if not ok:
            continue
        off = [e[0] / p.eps for e in ext]
        offsets.append(off)
        ordered.append(p.config.t[0] < p.config.t[1] and off[0] < off[1])
        rows.append((p.eps, p.disc.N, *p.config.d, *p.config.t, ext[0][0], ext[0][1], ext[1][0], ext[1][1],
                     off[0], off[1], p.reduced_iterations, p.newton_iterations, p.newton_residual, p.time))
    size = pts[0].config.size
    rec.table("continuation.csv", ["eps", "nodes"] + [f"d{i + 1}" for i in range(size)]
              + [f"t{i + 1}" for i in range(size)]
              + ["offset1", "value1", "offset2", "value2", "offset1_over_eps", "offset2_over_eps",
                 "reduced_iterations", "newton_iterations", "newton_residual", "time"], rows)
    if len(offsets) != len(pts):
        return
    off = np.array(offsets)
    spread = (off.max(axis=0) / off.min(axis=0)).tolist()
    rec.check("offsets_scale_like_eps", max(spread) <= 1.25, spread, "max/min of offset/eps per extremum <= 1.25", 9)
    rec.check("tower_ordering_preserved", all(ordered), ordered, "t_1 < t_2 at every ladder point", 9)


SCENARIOS = {
    "constants": scenario_constants,
    "green-check": scenario_green_check,
    "projection-check": scenario_projection_check,
    "ladder": scenario_ladder,
    "reduce": scenario_reduce,
    "solve": scenario_solve,
    "theorem-main3": scenario_theorem_main3,
    "theorem-main4": scenario_theorem_main4,
}


def execute(cfg, rec: Recorder):
    """Run one scenario and add the wall-time check."""
    t0 = time.perf_counter()
    SCENARIOS[cfg.scenario](cfg, rec)
    wall = time.perf_counter() - t0
    rec.timings["scenario"] = wall
    budget = BUDGET[cfg.scenario]
    rec.check("runtime", wall < budget, wall, f"< {budget:g} s")
    return wall


def default_workers(serial: bool) -> int:
    return 1 if serial else max(1, min(4, os.cpu_count() or 1))
