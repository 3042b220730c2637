"""Complex-plane optimisation of Runge-Kutta amplification polynomials.

Schemes of order q with p stages have free coefficients c_{q+1}..c_p. They
are chosen to minimise the mean squared error of r (metric "e") or of the
numerical frequency (metric "E") over a rectangle or sector of the complex
w dt plane, subject to stability as w dt -> 0 and on a real interval.
"""

from __future__ import annotations

import ast
import math
import operator
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .mapio import atomic_write
from .schemes import RKScheme, defect, format_scheme, maximal_order
from .spectral import _log1p, closed_form_growth, small_dt_coefficient, stability_limit

__all__ = [
    "DegenerateRegion", "Infeasible", "ConfigError", "RegionSpec", "OptimizationSpec",
    "OptimizationResult", "metric_rectangle", "metric_sector", "metric_1d",
    "region_metric", "optimize", "load_config", "parse_config", "append_result",
]


class DegenerateRegion(ValueError):
    pass


class Infeasible(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RegionSpec:
    shape: str
    eta: float
    alpha1: float = 0.0
    alpha2: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0

    def __post_init__(self):
        if self.shape not in ("rectangle", "sector"):
            raise ValueError(f"unknown region shape {self.shape!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.shape == "rectangle" and not (self.alpha1 >= 0 >= self.alpha2):
            raise ValueError("rectangle needs alpha1 >= 0 >= alpha2")
        if self.shape == "sector" and not (-math.pi / 2 < self.beta2 <= self.beta1 < math.pi / 2):
            raise ValueError("sector needs -pi/2 < beta2 <= beta1 < pi/2")


@dataclass(frozen=True)
class OptimizationSpec:
    stages: int
    order: int
    region: RegionSpec
    metric: str = "e"
    stability_floor: float = 0.0
    n_quad: tuple[int, int] = (64, 64)
    restarts: int = 10
    rng_seed: int = 0
    name: str = "Opt"

    def __post_init__(self):
        if not self.stages > self.order >= 1:
            raise ValueError("need stages > order >= 1")
        if self.metric not in ("e", "E"):
            raise ValueError("metric must be 'e' or 'E'")
        if self.stability_floor < 0:
            raise ValueError("stability floor must be nonnegative")


@dataclass
class OptimizationResult:
    scheme: RKScheme
    metric_value: float
    constraint_report: dict = field(default_factory=dict)
    iterations: int = 0
    converged: bool = False


# --- metrics ----------------------------------------------------------------

def _f2(scheme, z, kind):
    """|f|^2 with f = r - r_e (kind e) or w_bar dt - w dt (kind E).

    For composites r and r_e cover the double step, and f is taken per double step.
    """
    d = defect(scheme, z)
    if kind == "e":
        return np.abs(np.exp(-1j * scheme.substeps * z) * d) ** 2
    if kind == "E":
        return np.abs(_log1p(d)) ** 2   # w_bar dt - w dt = i log(r / r_e)
    raise ValueError(f"unknown metric {kind!r}")


def _gauss(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _rectangle_nodes(region, n_quad):
    L = math.pi * region.eta
    if region.alpha1 == region.alpha2 == 0:
        raise DegenerateRegion("rectangle has zero height")
    p, wp = _gauss(0.0, L, n_quad[0])
    q, wq = _gauss(region.alpha2 * L, region.alpha1 * L, n_quad[1])
    z = p[:, None] + 1j * q[None, :]
    w = wp[:, None] * wq[None, :] / ((abs(region.alpha1) + abs(region.alpha2)) * L)
    return z.ravel(), w.ravel()


def _sector_nodes(region, n_quad):
    L = math.pi * region.eta
    if region.beta1 == region.beta2:
        raise DegenerateRegion("sector has zero opening angle")
    rho, wr = _gauss(0.0, L, n_quad[0])
    th, wt = _gauss(region.beta2, region.beta1, n_quad[1])
    z = rho[:, None] * np.exp(1j * th[None, :])
    w = (wr * rho)[:, None] * wt[None, :] / ((abs(region.beta1) + abs(region.beta2)) * L)
    return z.ravel(), w.ravel()


def _line_nodes(region, n):
    x, w = _gauss(0.0, math.pi * region.eta, n)
    return x.astype(complex), w


def _nodes(region, n_quad):
    if region.shape == "rectangle":
        return _rectangle_nodes(region, n_quad)
    return _sector_nodes(region, n_quad)


def metric_rectangle(scheme, region: RegionSpec, kind: str = "e", n_quad=(64, 64)) -> float:
    """Normalised integral of |f|^2 over [0, pi eta] x [alpha2 pi eta, alpha1 pi eta]."""
    if region.shape != "rectangle":
        raise ValueError("region is not a rectangle")
    z, w = _rectangle_nodes(region, n_quad)
    return float(np.dot(w, _f2(scheme, z, kind)))


def metric_sector(scheme, region: RegionSpec, kind: str = "e", n_quad=(64, 64)) -> float:
    """Normalised, rho-weighted integral of |f|^2 over the sector."""
    if region.shape != "sector":
        raise ValueError("region is not a sector")
    z, w = _sector_nodes(region, n_quad)
    return float(np.dot(w, _f2(scheme, z, kind)))


def metric_1d(scheme, eta: float, kind: str = "e", n: int = 64, weighted: bool = False) -> float:
    """Real-axis metric: integral of |f|^2 over [0, pi eta].

    ``weighted`` gives the narrow-sector limit, (1 / (pi eta)) * integral of |f|^2 x dx.
    """
    x, w = _gauss(0.0, math.pi * eta, n)
    f2 = _f2(scheme, x.astype(complex), kind)
    if weighted:
        return float(np.dot(w * x, f2) / (math.pi * eta))
    return float(np.dot(w, f2))


def region_metric(scheme, region: RegionSpec, kind: str = "e", n_quad=(64, 64)) -> float:
    """Metric over the region, falling back to the real-axis metric if degenerate."""
    try:
        if region.shape == "rectangle":
            return metric_rectangle(scheme, region, kind, n_quad)
        return metric_sector(scheme, region, kind, n_quad)
    except DegenerateRegion:
        return metric_1d(scheme, region.eta, kind, n_quad[0])


# --- optimiser ---------------------------------------------------------------

_PENALTY_POWERS = range(2, 9)
_GROWTH_MARGIN = 1e-12
_MOD_MARGIN = 1e-13
_N_STAB = 2000


def _coeffs_from_u(u, p, q):
    fixed = [1.0 / math.factorial(j) for j in range(1, q + 1)]
    free = [(1.0 + ui) / math.factorial(j) for j, ui in zip(range(q + 1, p + 1), u)]
    return fixed + free


def _scheme_from_u(u, spec, name=None):
    return RKScheme(name or spec.name, spec.stages, spec.order,
                    tuple(_coeffs_from_u(u, spec.stages, spec.order)))


class _Problem:
    """Quadrature data and constraint grids shared by every evaluation."""

    def __init__(self, spec: OptimizationSpec):
        self.spec = spec
        p, q = spec.stages, spec.order
        try:
            z, w = _nodes(spec.region, spec.n_quad)
            self.degenerate = False
        except DegenerateRegion:
            z, w = _line_nodes(spec.region, spec.n_quad[0])
            self.degenerate = True
        self.z, self.w = z, w
        wz = -1j * z
        # r - r_e = base + sum_j c_j w^j over the free j, written in the u variables
        powers = np.stack([wz**j / math.factorial(j) for j in range(q + 1, p + 1)], axis=1)
        self.base = np.exp(-1j * z) * defect(maximal_order(q), z) + powers.sum(axis=1)
        self.powers = powers
        x = np.linspace(0.0, math.pi * spec.stability_floor, _N_STAB + 1)[1:]
        self.stab_x = x
        self.stab_pow = np.stack([(-1j * x) ** j for j in range(1, p + 1)], axis=1)

    def metric(self, u):
        if self.spec.metric == "e":
            f = self.base + self.powers @ np.asarray(u, float)
            return float(np.dot(self.w, np.abs(f) ** 2))
        s = _scheme_from_u(u, self.spec)
        return float(np.dot(self.w, _f2(s, self.z, "E")))

    def violations(self, u):
        c = np.array(_coeffs_from_u(u, self.spec.stages, self.spec.order))
        s = RKScheme("probe", self.spec.stages, self.spec.order, tuple(c))
        lead = closed_form_growth(s)
        g1 = (lead[1] if lead else 0.0) * math.factorial(self.spec.order + 2) + _GROWTH_MARGIN
        if self.stab_x.size:
            r = 1.0 + self.stab_pow @ c
            # |r| - 1 is O(1e-6) where it matters; rescale to match g1
            g2 = 1e6 * (float(np.max(np.abs(r) - 1.0)) + _MOD_MARGIN)
        else:
            g2 = -1.0
        return g1, g2

    def report(self, u):
        s = _scheme_from_u(u, self.spec)
        lead = closed_form_growth(s) or small_dt_coefficient(s)
        return {"eq13_sign": float(lead[1]) if lead else 0.0,
                "eta_s_achieved": stability_limit(s)}

    def feasible(self, u):
        rep = self.report(u)
        return rep["eq13_sign"] < 0 and rep["eta_s_achieved"] >= self.spec.stability_floor


def optimize(spec: OptimizationSpec, seed: RKScheme | None = None) -> OptimizationResult:
    """Penalised Nelder-Mead search with seeded restarts.

    The penalty weight grows as 10^k, k = 2..8, within each restart; every
    candidate is checked exactly and the best feasible one returned.
    Raises Infeasible when no restart ends feasible.
    """
    prob = _Problem(spec)
    p, q = spec.stages, spec.order
    if seed is None:
        seed = maximal_order(p)
    if seed.stages != p:
        raise ValueError("seed has the wrong number of stages")
    u0 = np.array([seed.coeffs[j - 1] * math.factorial(j) - 1.0 for j in range(q + 1, p + 1)])
    scale = prob.metric(u0) or 1.0
    rng = np.random.default_rng(spec.rng_seed)

    def objective(u, weight):
        g = prob.violations(u)
        pen = sum(max(0.0, gi) ** 2 for gi in g)
        return prob.metric(u) / scale + weight * pen

    best_u, best_val, total_iter = None, math.inf, 0
    if prob.feasible(u0):
        # the seed itself is a candidate; near the origin it is already optimal
        best_u, best_val = u0, prob.metric(u0)
    start = u0
    for attempt in range(spec.restarts):
        u = start.copy()
        for k in _PENALTY_POWERS:
            weight = 10.0**k
            simplex = [u] + [u + 0.25 * np.maximum(np.abs(u + 1.0), 1e-6) * e
                             for e in np.eye(len(u))]
            res = minimize(objective, u, args=(weight,), method="Nelder-Mead",
                           options={"initial_simplex": np.array(simplex), "xatol": 1e-12,
                                    "fatol": 1e-15, "maxiter": 4000 * len(u),
                                    "maxfev": 8000 * len(u), "adaptive": True})
            u = res.x
            total_iter += res.nit
        val = prob.metric(u)
        if val < best_val and prob.feasible(u):
            best_u, best_val = u, val
        base = best_u if best_u is not None else u0
        start = base + rng.normal(0.0, 0.25, size=len(u0)) * (0.5 ** (attempt // 3))
    if best_u is None:
        raise Infeasible("no feasible scheme found; the stability floor may be too high")
    scheme = _scheme_from_u(best_u, spec)
    metric = region_metric(scheme, spec.region, spec.metric, spec.n_quad)
    return OptimizationResult(scheme, metric, prob.report(best_u), total_iter, True)


# --- config and output ---------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _number(text: str) -> float:
    """Evaluate a small arithmetic expression such as -pi/6 or 1e-3."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported expression {text!r}")
    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except SyntaxError as exc:
        raise ConfigError(f"bad number {text!r}") from exc


def parse_kv(text: str) -> dict:
    """key = value lines; '#' starts a comment; quotes around strings optional."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val.strip("\"'")
    return out


_SPEC_KEYS = {"name", "stages", "order", "shape", "eta", "alpha1", "alpha2", "beta1", "beta2",
              "metric", "stability_floor", "n_p", "n_q", "restarts", "rng_seed", "seed_scheme"}


def parse_config(text: str) -> tuple[OptimizationSpec, str | None]:
    """OptimizationSpec (and optional seed scheme name) from config text."""
    kv = parse_kv(text)
    unknown = set(kv) - _SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    for req in ("stages", "order", "shape", "eta"):
        if req not in kv:
            raise ConfigError(f"missing key {req!r}")

    def num(k, default=0.0):
        return _number(kv[k]) if k in kv else default

    def integer(k, default):
        v = num(k, default)
        if v != int(v):
            raise ConfigError(f"{k} must be an integer")
        return int(v)

    try:
        region = RegionSpec(kv["shape"], num("eta"), num("alpha1"), num("alpha2"),
                            num("beta1"), num("beta2"))
        spec = OptimizationSpec(
            stages=integer("stages", 0), order=integer("order", 0), region=region,
            metric=kv.get("metric", "e"), stability_floor=num("stability_floor"),
            n_quad=(integer("n_p", 64), integer("n_q", 64)),
            restarts=integer("restarts", 10), rng_seed=integer("rng_seed", 0),
            name=kv.get("name", f"Opt{integer('stages', 0)}"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return spec, kv.get("seed_scheme")


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def result_block(result: OptimizationResult, spec: OptimizationSpec) -> str:
    """Scheme-file text for a result, preceded by a comment block echoing the spec."""
    reg = spec.region
    lines = [
        f"# optimised: shape={reg.shape} eta={reg.eta!r} alpha1={reg.alpha1!r} "
        f"alpha2={reg.alpha2!r} beta1={reg.beta1!r} beta2={reg.beta2!r}",
        f"# metric={spec.metric} stability_floor={spec.stability_floor!r} "
        f"n_quad={spec.n_quad[0]}x{spec.n_quad[1]} restarts={spec.restarts} rng_seed={spec.rng_seed}",
        f"# metric_value={result.metric_value!r} "
        f"eq13_sign={result.constraint_report['eq13_sign']!r} "
        f"eta_s={result.constraint_report['eta_s_achieved']!r}",
        format_scheme(result.scheme),
    ]
    return "\n".join(lines) + "\n"


def append_result(path, result: OptimizationResult, spec: OptimizationSpec) -> None:
    """Append the result to a scheme file, creating it if needed."""
    block = result_block(result, spec)
    existing = ""
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            existing = fh.read()
        if existing and not existing.endswith("\n"):
            existing += "\n"
        if existing:
            existing += "\n"
    atomic_write(path, existing + block)
