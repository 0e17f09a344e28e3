"""Finite-dimensional model of the reduced energy.

The reduced energy of a configuration is expanded as

    Jt = (c1 + c2 eps log eps) sum a(s_i)
         + eps sum [c3 a(s_i) + c4 g_i t_i + c5 a(s_i) (d_i / 2 t_i)^{n-2} - c6 a(s_i) log d_i]

with ``g_i = <grad a(s_i), nu(s_i)>``.  The constants are assembled from three
radial integrals of the standard bubble; the bookkeeping is spelled out next
to each coefficient in ``ReducedModel.provenance``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize

from .bubble import BubbleParams, alpha_n, bubble_power, critical_power
from .errors import (AssemblyInconsistency, InvalidConfiguration, NoCriticalPoint,
                     QuadratureFailure, ResolutionError, SingularConfiguration)
from .geometry import sphere_area


@dataclass(frozen=True)
class GammaConstants:
    n: int
    gamma1: float
    gamma2: float
    gamma3: float


def _radial(f, n):
    """``area(S^{n-1}) * int_0^inf r^{n-1} f(r) dr`` with an error check."""
    total, err = 0.0, 0.0
    # split keeps quad's error estimate honest on the slowly decaying tail
    for lo, hi in ((0.0, 1.0), (1.0, np.inf)):
        val, e = integrate.quad(lambda r: r ** (n - 1) * f(r), lo, hi,
                                epsabs=0.0, epsrel=1e-13, limit=400)
        total += val
        err += e
    if not err <= 1e-10 * abs(total):
        raise QuadratureFailure(f"radial quadrature error {err:.2e} too large")
    return sphere_area(n - 1) * total


def gamma_constants(n: int) -> GammaConstants:
    p = critical_power(n)
    scale = alpha_n(n) ** p
    g1 = scale * _radial(lambda r: (1 + r * r) ** (-n), n)
    g2 = scale * _radial(lambda r: (1 + r * r) ** (-(n + 2) / 2), n)
    g3 = scale * _radial(lambda r: (1 + r * r) ** (-n) * (-(n - 2) / 2) * math.log1p(r * r), n)
    return GammaConstants(n, g1, g2, g3)


@dataclass(frozen=True)
class ReducedModel:
    gammas: GammaConstants
    c: tuple                       # (c1, ..., c6)
    provenance: dict = field(default_factory=dict, compare=False)
    weight_data: tuple = ()        # ((a(s_i), g_i), ...) per anchor

    @property
    def n(self) -> int:
        return self.gammas.n

    def coefficient(self, i: int) -> float:
        return self.c[i - 1]

    def bind(self, weight_data) -> "ReducedModel":
        data = tuple((float(a), float(g)) for a, g in weight_data)
        return replace(self, weight_data=data)


def assemble_coefficients(gammas: GammaConstants, n: int | None = None) -> ReducedModel:
    """Collect the coefficients of the single- and multi-peak expansions.

    Gradient energy and potential of the projected bubbles give
    ``J_0 = (1/2 - 1/p)(g1 a + g1 g t eps) + (1/2) g2 a (d/2t)^{n-2} eps``; the
    exponent shift contributes ``-eps [g1/p^2 - (1/p) int a U^p log U]`` with
    ``log delta = (n-1)/(n-2) log eps + log d``.
    """
    n = gammas.n if n is None else n
    if n != gammas.n:
        raise InvalidConfiguration("gamma constants were computed for another dimension")
    p = critical_power(n)
    g1, g2, g3 = gammas.gamma1, gammas.gamma2, gammas.gamma3
    la = math.log(alpha_n(n))
    c1 = (p - 2) / (2 * p) * g1
    c2 = -(n - 1) / (2 * p) * g1
    c3 = -g1 / p ** 2 + g1 * la / p + g3 / p
    c4 = (p - 2) / (2 * p) * g1
    c5 = 0.5 * g2
    c6 = (n - 2) / (2 * p) * g1
    prov = {
        "c1": "(p-2)/(2p) * gamma1",
        "c2": "-(n-1)/(2p) * gamma1",
        "c3": "-gamma1/p^2 + gamma1*log(alpha_n)/p + gamma3/p",
        "c4": "(p-2)/(2p) * gamma1",
        "c5": "gamma2/2",
        "c6": "(n-2)/(2p) * gamma1",
    }
    for name, val in (("c4", c4), ("c5", c5), ("c6", c6)):
        if not val > 0:
            raise AssemblyInconsistency(f"{name} = {val} is not positive")
    return ReducedModel(gammas, (c1, c2, c3, c4, c5, c6), prov)


def anchor_weight_data(domain, weight, anchors) -> tuple:
    out = []
    for s in anchors:
        s = np.asarray(s, dtype=float)
        nu = domain.inward_normal(s)
        out.append((float(weight(s[None])[0]), float(weight.gradient(s[None])[0] @ nu)))
    return tuple(out)


def _need_weights(model, k):
    if len(model.weight_data) < k:
        raise InvalidConfiguration("model has no weight data for every anchor; call bind()")


# ---------------------------------------------------------------- separated peaks

def bracket_separated(model: ReducedModel, d, t) -> float:
    """eps-coefficient without the (d, t)-independent c3 term, summed over peaks."""
    n = model.n
    _, _, _, c4, c5, c6 = model.c
    total = 0.0
    for (a, g), di, ti in zip(model.weight_data, d, t):
        total += c4 * g * ti + c5 * a * (di / (2 * ti)) ** (n - 2) - c6 * a * math.log(di)
    return total


def expansion_separated(model: ReducedModel, config, eps: float) -> float:
    d, t = config.d, config.t
    _need_weights(model, len(d))
    c1, c2, c3 = model.c[:3]
    asum = sum(a for a, _ in model.weight_data[:len(d)])
    return (c1 + c2 * eps * math.log(eps)) * asum + eps * (c3 * asum + bracket_separated(model, d, t))


def gradient_separated(model: ReducedModel, config, eps: float) -> np.ndarray:
    """Derivatives of the expansion in ``(d_1..d_k, t_1..t_k)``."""
    n = model.n
    _, _, _, c4, c5, c6 = model.c
    d, t = config.d, config.t
    _need_weights(model, len(d))
    gd, gt = [], []
    for (a, g), di, ti in zip(model.weight_data, d, t):
        r = (di / (2 * ti)) ** (n - 2)
        gd.append(eps * (c5 * a * (n - 2) * r / di - c6 * a / di))
        gt.append(eps * (c4 * g - c5 * a * (n - 2) * r / ti))
    return np.array(gd + gt)


def single_peak_optimum(model: ReducedModel, a: float, g: float) -> tuple[float, float]:
    """Stationary point of ``c4 g t + c5 a (d/2t)^{n-2} - c6 a log d``."""
    n = model.n
    _, _, _, c4, c5, c6 = model.c
    if not g > 0:
        raise NoCriticalPoint("the normal derivative of the weight must be positive")
    t = c6 * a / (c4 * g)
    d = 2 * t * (c6 / ((n - 2) * c5)) ** (1.0 / (n - 2))
    return d, t


# ---------------------------------------------------------------- towers

def psi_tower(model: ReducedModel, d, t) -> float:
    n = model.n
    _, _, _, c4, c5, c6 = model.c
    _need_weights(model, 1)
    a, g = model.weight_data[0]
    d = np.asarray(d, dtype=float)
    t = np.asarray(t, dtype=float)
    ell = d.size
    inter = 0.0
    for i in range(ell):
        for j in range(ell):
            if i == j:
                continue
            gap = abs(t[i] - t[j])
            if gap == 0:
                raise SingularConfiguration("two tower offsets coincide")
            sign = (-1.0) ** (i + j + 3)  # (-1)^{i+j+1} with 1-based indices
            inter += sign * (d[i] * d[j]) ** ((n - 2) / 2) * (gap ** (2 - n) - (t[i] + t[j]) ** (2 - n))
    self_term = float(np.sum((d / (2 * t)) ** (n - 2)))
    return float(c4 * g * t.sum() + c5 * a * (self_term + inter) - c6 * a * np.log(d).sum())


def psi_tower_gradient(model: ReducedModel, d, t) -> np.ndarray:
    n = model.n
    _, _, _, c4, c5, c6 = model.c
    a, g = model.weight_data[0]
    d = np.asarray(d, dtype=float)
    t = np.asarray(t, dtype=float)
    ell = d.size
    m = n - 2
    gd = c5 * a * m * (d / (2 * t)) ** m / d - c6 * a / d
    gt = c4 * g - c5 * a * m * (d / (2 * t)) ** m / t
    for i in range(ell):
        for j in range(ell):
            if i == j:
                continue
            sign = (-1.0) ** (i + j + 3)
            prod = c5 * a * (d[i] * d[j]) ** (m / 2)
            diff, summ = t[i] - t[j], t[i] + t[j]
            br = abs(diff) ** (-m) - summ ** (-m)
            # the ordered pair (i, j) contributes to the derivatives in i and j
            gd[i] += sign * (m / 2) * prod / d[i] * br
            gd[j] += sign * (m / 2) * prod / d[j] * br
            dbr_i = -m * abs(diff) ** (-m - 1) * np.sign(diff) + m * summ ** (-m - 1)
            dbr_j = m * abs(diff) ** (-m - 1) * np.sign(diff) + m * summ ** (-m - 1)
            gt[i] += sign * prod * dbr_i
            gt[j] += sign * prod * dbr_j
    return np.concatenate([gd, gt])


def expansion_tower(model: ReducedModel, d, t, eps: float) -> float:
    """Leading terms carry one copy of ``a(xi_0)`` per layer."""
    c1, c2, c3 = model.c[:3]
    a = model.weight_data[0][0]
    ell = len(d)
    return ell * a * (c1 + c2 * eps * math.log(eps) + c3 * eps) + eps * psi_tower(model, d, t)


# ---------------------------------------------------------------- minimisation

@dataclass
class MinimizerResult:
    d: np.ndarray
    t: np.ndarray
    value: float
    gradient_norm: float
    hessian_eigenvalues: np.ndarray
    starts: int


def _hessian(grad, x, h=1e-6):
    k = x.size
    H = np.zeros((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = h * max(1.0, abs(x[i]))
        H[:, i] = (grad(x + e) - grad(x - e)) / (2 * e[i])
    return 0.5 * (H + H.T)


def _objective(model, mode):
    if mode == "tower":
        def val(d, t):
            return psi_tower(model, d, t)

        def grad(d, t):
            return psi_tower_gradient(model, d, t)
    elif mode == "separated":
        from types import SimpleNamespace

        def val(d, t):
            return bracket_separated(model, d, t)

        def grad(d, t):
            return gradient_separated(model, SimpleNamespace(d=d, t=t), 1.0)
    else:
        raise InvalidConfiguration(f"unknown mode {mode!r}")
    return val, grad


def minimize_model(model: ReducedModel, mode: str, box, starts: int = 12, seed: int = 0,
                   size: int = 1) -> MinimizerResult:
    """Interior local minimiser of the (d, t)-dependent part of the expansion.

    ``box = ((d_lo, d_hi), (t_lo, t_hi))`` bounds the random starting points.
    Newton with a trust region runs in ``(log d, log t)``; for towers the
    starting offsets are sorted so that ``t_1 < t_2 < ...``.
    """
    if mode == "separated":
        _need_weights(model, size)
        for a, g in model.weight_data[:size]:
            if not g > 0:
                raise NoCriticalPoint("the normal derivative of the weight must be positive")
    else:
        _need_weights(model, 1)
        if not model.weight_data[0][1] > 0:
            raise NoCriticalPoint("the normal derivative of the weight must be positive")
    val, grad = _objective(model, mode)
    k = size
    (dlo, dhi), (tlo, thi) = box
    rng = np.random.default_rng(seed)

    def f(z):
        d, t = np.exp(z[:k]), np.exp(z[k:])
        if mode == "tower" and np.any(np.diff(t) <= 0):
            return np.inf
        return val(d, t)

    def df(z):
        d, t = np.exp(z[:k]), np.exp(z[k:])
        return grad(d, t) * np.concatenate([d, t])

    best = None
    for _ in range(starts):
        d0 = np.exp(rng.uniform(np.log(dlo), np.log(dhi), k))
        t0 = np.sort(np.exp(rng.uniform(np.log(tlo), np.log(thi), k)))
        z0 = np.log(np.concatenate([d0, t0]))
        try:
            res = optimize.minimize(f, z0, jac=df, hess=lambda z: _hessian(df, z),
                                    method="trust-exact", options={"gtol": 1e-13, "maxiter": 500})
        except (ValueError, np.linalg.LinAlgError, SingularConfiguration):
            continue
        if not np.isfinite(res.fun):
            continue
        # polish with plain Newton steps in the original variables
        x = np.exp(res.x)
        for _ in range(20):
            gx = grad(x[:k], x[k:])
            if np.linalg.norm(gx) < 1e-13:
                break
            Hx = _hessian(lambda y: grad(y[:k], y[k:]), x, h=1e-7)
            try:
                step = np.linalg.solve(Hx, gx)
            except np.linalg.LinAlgError:
                break
            if np.any(x - step <= 0):
                break
            x = x - step
        gnorm = float(np.linalg.norm(grad(x[:k], x[k:])))
        H = _hessian(lambda y: grad(y[:k], y[k:]), x, h=1e-7)
        eig = np.linalg.eigvalsh(H)
        if gnorm > 1e-8 or not np.all(eig > 0):
            continue
        if mode == "tower" and np.any(np.diff(x[k:]) <= 0):
            continue
        cand = MinimizerResult(x[:k], x[k:], float(val(x[:k], x[k:])), gnorm, eig, starts)
        if best is None or cand.value < best.value - 1e-12:
            best = cand
    if best is None:
        raise NoCriticalPoint("no interior minimiser found from the starting box")
    return best


def psi_landscape(model: ReducedModel, d_values, t_values, fixed=None) -> np.ndarray:
    """Rows ``(d_1, t_1, Psi)``; for towers ``fixed = (d_2, t_2)`` closes the pair."""
    rows = []
    for d in d_values:
        for t in t_values:
            if fixed is None:
                v = psi_tower(model, [d], [t])
                rows.append((d, t, v))
            else:
                try:
                    v = psi_tower(model, [d, fixed[0]], [t, fixed[1]])
                except SingularConfiguration:
                    v = np.inf
                rows.append((d, t, fixed[0], fixed[1], v))
    return np.array(rows)


# ---------------------------------------------------------------- term-by-term expansion checks

def collar_radius(domain, centers) -> float:
    """Radius of the balls in which the bubble integrals are evaluated."""
    centers = [np.asarray(c, float) for c in centers]
    r = [float(domain.distance(c[None])[0]) for c in centers]
    for i in range(len(centers)):
        for j in range(i):
            r.append(0.5 * float(np.linalg.norm(centers[i] - centers[j])))
    return min(r)


def energy_term_integrals(disc, bubbles, signs=None) -> dict:
    """Ball integrals around the first bubble on one grid.

    Returns the values of ``int a U1^p``, ``int a U1^{p-1}(PU1 - U1)`` and, if a
    second bubble is present, ``int a U1^{p-1} PU2`` (with its sign)."""
    from .elliptic import project_bubble

    n = disc.n
    p = critical_power(n)
    b1 = bubbles[0]
    eta = collar_radius(disc.domain, [b.center for b in bubbles])
    if b1.delta < 4 * _local_spacing(disc, b1.center):
        raise ResolutionError("bubble is not resolved by the grid (delta < 4h)")
    x = disc.points
    inside = np.linalg.norm(x - b1.center, axis=1) < eta
    w = disc.volumes * disc.node_weight * inside
    U1 = bubble_power(b1, x, 1.0)
    U1pm1 = bubble_power(b1, x, p - 1)
    out = {
        "eta": eta,
        "int_U1p": float(w @ bubble_power(b1, x, p)),
        "int_U1p1_PU1mU1": float(w @ (U1pm1 * (project_bubble(disc, b1).values - U1))),
    }
    if len(bubbles) > 1:
        s = 1.0 if signs is None else float(signs[1])
        out["int_U1p1_PU2"] = s * float(w @ (U1pm1 * project_bubble(disc, bubbles[1]).values))
    return out


def _local_spacing(disc, x):
    i = disc.locate(x)
    hs = np.concatenate([disc.Hm[i], disc.Hp[i]])
    return float(hs[hs > 0].max())


def energy_term_expectations(model: ReducedModel, config, eps: float) -> dict:
    n = model.n
    g1, g2 = model.gammas.gamma1, model.gammas.gamma2
    a1, gr1 = model.weight_data[0]
    d, t = config.d, config.t
    out = {
        "int_U1p": g1 * a1 + gr1 * g1 * t[0] * eps,
        "int_U1p1_PU1mU1": -g2 * a1 * eps * (d[0] / (2 * t[0])) ** (n - 2),
    }
    if len(d) > 1:
        if config.mode == "tower":
            br = abs(t[0] - t[1]) ** (2 - n) - (t[0] + t[1]) ** (2 - n)
            out["int_U1p1_PU2"] = g2 * a1 * eps * (d[0] * d[1]) ** ((n - 2) / 2) * br
        else:
            out["int_U1p1_PU2"] = 0.0
    return out


def expansion_checks(discs, model: ReducedModel, config, eps_ladder, domain=None) -> list[dict]:
    """Compare the ball integrals with their expansions along an eps ladder.

    ``discs`` is a Discretization or a callable ``eps -> Discretization``.
    Runs whose smallest bubble is under-resolved are flagged and skipped."""
    from .ansatz import bubble_parameters

    rows = []
    for eps in eps_ladder:
        disc = discs(eps) if callable(discs) else discs
        bubbles = bubble_parameters(disc.domain, config, eps)
        row = {"eps": eps, "resolution_limited": False}
        try:
            got = energy_term_integrals(disc, bubbles, config.sign_factors)
        except ResolutionError:
            row["resolution_limited"] = True
            rows.append(row)
            continue
        want = energy_term_expectations(model, config, eps)
        row["eta"] = got["eta"]
        row["I_100"] = got["int_U1p"]
        row["E_100"] = want["int_U1p"]
        row["dev_100_over_eps"] = (got["int_U1p"] - want["int_U1p"]) / eps
        row["I_10"] = got["int_U1p1_PU1mU1"]
        row["E_10"] = want["int_U1p1_PU1mU1"]
        row["ratio_10"] = got["int_U1p1_PU1mU1"] / want["int_U1p1_PU1mU1"]
        if "int_U1p1_PU2" in got:
            row["I_11"] = got["int_U1p1_PU2"]
            row["E_11"] = want["int_U1p1_PU2"]
            row["I_11_over_eps"] = got["int_U1p1_PU2"] / eps
        rows.append(row)
    return rows
