"""Periodic 1D damped wave benchmark.

Solves

    p_t + v_x = -k(x) p,    v_t + p_x = -k(x) v

on [0, L) with central finite differences, an optional explicit filter after
every timestep, and any Runge-Kutta amplification polynomial in time. With
p = v initially, f = p + v is advected to the right and g = p - v stays zero,
which gives a closed-form reference solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

import numpy as np
from scipy.linalg import expm

from .schemes import (CompositeScheme, ExactScheme, ParseError, RKScheme, ValidationError,
                      ZeroCoefficient, coeffs_to_betas)

__all__ = [
    "SizeError", "Diverged", "UnsupportedProblem", "Stencil", "FilterSpec", "Damping",
    "Packet", "WaveProblem", "BenchResult", "maximal_stencil", "fab_filter", "F6",
    "F16_4", "load_stencils", "stencil_library", "get_stencil", "spatial_derivative",
    "apply_filter", "rhs", "step", "integrate", "analytic_solution", "run_benchmark",
    "sweep", "snap_dt", "effective_filter", "effort", "error_norm", "DIVERGED_ERROR",
    "FILTER_PERIOD",
]

DIVERGED_ERROR = 10.0


class SizeError(ValueError):
    pass


class Diverged(ArithmeticError):
    pass


class UnsupportedProblem(ValueError):
    pass


def _solve_exact(A, b):
    """Gauss-Jordan elimination over the rationals."""
    n = len(A)
    M = [[Fraction(x) for x in row] + [Fraction(bi)] for row, bi in zip(A, b)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        pv = M[col][col]
        M[col] = [x / pv for x in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * c for a, c in zip(M[r], M[col])]
    return [M[r][n] for r in range(n)]


# --- stencils and filters ---------------------------------------------------

@dataclass(frozen=True)
class Stencil:
    """Antisymmetric first-derivative stencil, d_1..d_w (d_{-j} = -d_j)."""

    name: str
    halfwidth: int
    order: int
    coeffs: tuple[float, ...]
    family: str = "maximal"

    def __post_init__(self):
        if len(self.coeffs) != self.halfwidth:
            raise ValidationError(f"{self.name}: need {self.halfwidth} coefficients")
        if abs(2 * sum(j * d for j, d in enumerate(self.coeffs, 1)) - 1) > 1e-9:
            raise ValidationError(f"{self.name}: not consistent with d/dx")

    def modified_wavenumber(self, kdx):
        """kbar dx = 2 sum_j d_j sin(j k dx)."""
        kdx = np.asarray(kdx, dtype=float)
        return 2 * sum(d * np.sin(j * kdx) for j, d in enumerate(self.coeffs, 1))


def maximal_stencil(w: int) -> Stencil:
    """(2w+1)-point central stencil of order 2w, exact on polynomials of degree 2w."""
    # sum_j 2 d_j j^(2m-1) = [m == 1] for m = 1..w
    A = [[2 * j ** (2 * m - 1) for j in range(1, w + 1)] for m in range(1, w + 1)]
    b = [1] + [0] * (w - 1)
    d = _solve_exact(A, b)
    return Stencil(f"MO{2 * w + 1}", w, 2 * w, tuple(float(x) for x in d), "maximal")


@dataclass(frozen=True)
class FilterSpec:
    """Symmetric filter, f_0..f_w; the update is u - sigma * sum_j f_j u_{i+j}.

    Its transfer function D(k dx) = f_0 + 2 sum_j f_j cos(j k dx) is the
    fraction of each Fourier mode removed at full strength.
    """

    name: str
    halfwidth: int
    coeffs: tuple[float, ...]
    order: int = 0
    sigma: float = 1.0

    def __post_init__(self):
        if len(self.coeffs) != self.halfwidth + 1:
            raise ValidationError(f"{self.name}: need {self.halfwidth + 1} coefficients")
        if not 0 < self.sigma <= 1:
            raise ValidationError(f"{self.name}: strength must lie in (0, 1]")
        if abs(self.coeffs[0] + 2 * sum(self.coeffs[1:])) > 1e-12:
            raise ValidationError(f"{self.name}: filter must leave constants unchanged")

    def transfer(self, kdx):
        kdx = np.asarray(kdx, dtype=float)
        return self.coeffs[0] + 2 * sum(f * np.cos(j * kdx) for j, f in enumerate(self.coeffs[1:], 1))

    def with_strength(self, sigma: float) -> FilterSpec:
        return FilterSpec(self.name, self.halfwidth, self.coeffs, self.order, sigma)


def fab_filter(a: int, b: int, name: str | None = None) -> FilterSpec:
    """Filter with D = O(k^a) as k dx -> 0, D(pi) = 1 and 1 - D = O((pi - k dx)^b).

    a and b are even; the stencil has a/2 + b/2 unknowns f_0..f_w.
    """
    if a % 2 or b % 2 or a < 2 or b < 2:
        raise ValueError("a and b must be even and at least 2")
    w = a // 2 + b // 2 - 1
    js = range(0, w + 1)
    wt = [1] + [2] * w          # f_0 counted once, f_j twice
    A, rhs_ = [], []
    A.append(wt)
    rhs_.append(0)
    for m in range(1, a // 2):
        A.append([wt[j] * j ** (2 * m) for j in js])
        rhs_.append(0)
    A.append([wt[j] * (-1) ** j for j in js])
    rhs_.append(1)
    for m in range(1, b // 2):
        A.append([wt[j] * (-1) ** j * j ** (2 * m) for j in js])
        rhs_.append(0)
    f = _solve_exact(A, rhs_)
    return FilterSpec(name or f"F{a},{b}", w, tuple(float(x) for x in f), a)


F6 = fab_filter(6, 2, "F6")
F16_4 = fab_filter(16, 4, "F16,4")


def load_stencils(text: str) -> list:
    """Parse stencil/filter blocks (``d``/``f`` coefficient lines, ``end``)."""
    out, cur = [], None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if cur is None:
            if head not in ("stencil", "filter") or not rest:
                raise ParseError(f"line {lineno}: expected 'stencil' or 'filter' block")
            kv = {}
            for tok in rest[1:]:
                k, sep, v = tok.partition("=")
                if not sep:
                    raise ParseError(f"line {lineno}: expected key=value, got {tok!r}")
                kv[k] = v
            try:
                w = int(kv["halfwidth"])
                order = int(kv.get("order", 0))
                sigma = float(kv.get("sigma", 1.0))
            except (KeyError, ValueError):
                raise ParseError(f"line {lineno}: bad or missing halfwidth/order") from None
            cur = (head, rest[0], w, order, sigma, {}, lineno)
            continue
        kind, name, w, order, sigma, vals, start = cur
        if head == "end":
            if name in seen:
                raise ValidationError(f"line {lineno}: duplicate name {name!r}")
            seen.add(name)
            if kind == "stencil":
                if sorted(vals) != list(range(1, w + 1)):
                    raise ValidationError(f"{name}: need d 1..{w}")
                out.append(Stencil(name, w, order, tuple(vals[j] for j in range(1, w + 1)),
                                   "maximal" if order == 2 * w else "DRP"))
            else:
                if sorted(vals) != list(range(0, w + 1)):
                    raise ValidationError(f"{name}: need f 0..{w}")
                out.append(FilterSpec(name, w, tuple(vals[j] for j in range(w + 1)), order, sigma))
            cur = None
            continue
        expected = "d" if kind == "stencil" else "f"
        if head != expected or len(rest) != 2:
            raise ParseError(f"line {lineno}: expected '{expected} <j> <value>'")
        try:
            vals[int(rest[0])] = float(rest[1])
        except ValueError:
            raise ParseError(f"line {lineno}: bad coefficient line") from None
    if cur is not None:
        raise ParseError(f"line {cur[6]}: block {cur[1]!r} has no 'end'")
    return out


def stencil_library(extra_text: str | None = None) -> dict:
    """Name -> Stencil/FilterSpec: MO3..MO19, DRP, F6, F16,4 and any extras."""
    lib = {f"MO{2 * w + 1}": maximal_stencil(w) for w in range(1, 10)}
    lib["F6"], lib["F16,4"] = F6, F16_4
    text = resources.files("rkcomplex").joinpath("data/stencils.txt").read_text(encoding="utf-8")
    for item in load_stencils(text) + (load_stencils(extra_text) if extra_text else []):
        if item.name in lib:
            raise ValidationError(f"duplicate stencil or filter {item.name!r}")
        lib[item.name] = item
    return lib


def get_stencil(name: str, extra_text: str | None = None):
    lib = stencil_library(extra_text)
    if name in ("none", "None", ""):
        return None
    try:
        return lib[name]
    except KeyError:
        raise KeyError(f"unknown stencil or filter {name!r}") from None


# --- problem ------------------------------------------------------------------

def _logcosh(y):
    return np.logaddexp(y, -y) - math.log(2.0)


@dataclass(frozen=True)
class Damping:
    """Damping region [start, start + width] with integral ``total`` per period.

    ``shape="tanh"`` (default) is the smooth plateau
    a [tanh((x - start) / edge) - tanh((x - start - width) / edge)], a = total / (2 width),
    whose tails fall off like exp(-2 d / edge). ``shape="sin2"`` is the compactly
    supported (2 total / width) sin^2(pi (x - start) / width), which is only C^1
    at its ends. Both have closed-form antiderivatives.
    """

    total: float = 6.0
    start: float = 12.0
    width: float = 2.0
    shape: str = "tanh"
    edge: float = 0.25

    def __post_init__(self):
        if self.shape not in ("tanh", "sin2"):
            raise ValueError(f"unknown damping shape {self.shape!r}")

    def __call__(self, x, L):
        x = np.asarray(x, dtype=float)
        if self.shape == "sin2":
            s = np.mod(x - self.start, L)
            amp = 2.0 * self.total / self.width
            return np.where(s <= self.width, amp * np.sin(np.pi * s / self.width) ** 2, 0.0)
        a = self.total / (2.0 * self.width)
        out = np.zeros_like(x)
        for m in (-1, 0, 1):
            y = x - m * L
            out += a * (np.tanh((y - self.start) / self.edge)
                        - np.tanh((y - self.start - self.width) / self.edge))
        return out

    def cumulative(self, x, L):
        """Antiderivative of the periodic extension (increases by ``total`` per period)."""
        x = np.asarray(x, dtype=float)
        if self.shape == "sin2":
            n = np.floor((x - self.start) / L)
            s = np.minimum(x - self.start - n * L, self.width)
            local = self.total * (s / self.width - np.sin(2 * np.pi * s / self.width) / (2 * np.pi))
            return n * self.total + local
        mid = self.start + 0.5 * self.width
        n = np.floor((x - mid + 0.5 * L) / L)
        y = x - n * L
        a = self.total / (2.0 * self.width)
        e = self.edge
        local = a * e * (_logcosh((y - self.start) / e)
                         - _logcosh((y - self.start - self.width) / e)) + a * self.width
        return n * self.total + local


@dataclass(frozen=True)
class Packet:
    """Periodic sum of exp(-ln2 (d / halfwidth)^2) cos(2 pi d / wavelength), d = x - centre - m L.

    Summing images (rather than wrapping d) keeps the data smooth across the
    periodic boundary; L must be a multiple of the wavelength.
    """

    centre: float = 6.0
    halfwidth: float = 2.0
    wavelength: float = 1.0

    def __call__(self, x, L):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for m in (-2, -1, 0, 1, 2):
            d = x - self.centre - m * L
            out += np.exp(-math.log(2) * (d / self.halfwidth) ** 2) * np.cos(2 * np.pi * d / self.wavelength)
        return out


@dataclass(frozen=True)
class WaveProblem:
    ppw: int
    L: float = 24.0
    T: float = 24.0
    damping: Damping = field(default_factory=Damping)
    packet: Packet = field(default_factory=Packet)

    @property
    def n(self) -> int:
        n = self.L * self.ppw
        if abs(n - round(n)) > 1e-9:
            raise SizeError("L * PPW must be an integer")
        return int(round(n))

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def x(self):
        return np.arange(self.n) * self.dx

    def k(self):
        return self.damping(self.x, self.L)

    def initial(self):
        p0 = self.packet(self.x, self.L)
        return np.stack([p0, p0.copy()])


@dataclass
class BenchResult:
    scheme: str
    dt: float
    cfl: float
    error: float
    effort: float
    stable: bool


# --- semi-discrete operator ------------------------------------------------------

def _offsets(n, w):
    i = np.arange(n)[:, None]
    j = np.arange(1, w + 1)[None, :]
    return (i + j) % n, (i - j) % n


def spatial_derivative(u, stencil: Stencil, dx: float):
    """Periodic central difference sum_j d_j (u_{i+j} - u_{i-j}) / dx (last axis)."""
    u = np.asarray(u)
    n, w = u.shape[-1], stencil.halfwidth
    if n < 2 * w + 1:
        raise SizeError(f"{n} points is too few for a {2 * w + 1}-point stencil")
    plus, minus = _offsets(n, w)
    d = np.asarray(stencil.coeffs)
    return ((u[..., plus] - u[..., minus]) @ d) / dx


def apply_filter(u, filt: FilterSpec | None):
    """u - sigma * (f_0 u_i + sum_j f_j (u_{i+j} + u_{i-j})) along the last axis."""
    if filt is None:
        return np.array(u, copy=True)
    u = np.asarray(u)
    n, w = u.shape[-1], filt.halfwidth
    if n < 2 * w + 1:
        raise SizeError(f"{n} points is too few for a {2 * w + 1}-point filter")
    plus, minus = _offsets(n, w)
    f = np.asarray(filt.coeffs)
    conv = f[0] * u + (u[..., plus] + u[..., minus]) @ f[1:]
    return u - filt.sigma * conv


def rhs(state, stencil: Stencil, k, dx: float):
    """(dp/dt, dv/dt) = (-v_x - k p, -p_x - k v) for state = stack([p, v])."""
    state = np.asarray(state)
    p, v = state
    return np.stack([-spatial_derivative(v, stencil, dx) - k * p,
                     -spatial_derivative(p, stencil, dx) - k * v])


def _low_storage_betas(scheme: RKScheme):
    try:
        return coeffs_to_betas(scheme).betas
    except ZeroCoefficient:
        return None


def _rk_advance(state, scheme: RKScheme, h, F):
    betas = _low_storage_betas(scheme)
    if betas is not None:
        # K_1 = h F(U), K_{j+1} = h F(U + beta_j K_j), U <- U + beta_p K_p
        K = h * F(state)
        for beta in betas[:-1]:
            K = h * F(state + beta * K)
        return state + betas[-1] * K
    # Horner form of r(hA) U, valid because the operator is linear
    c = scheme.coeffs
    V = c[-1] * state
    for cj in reversed(c[:-1]):
        V = cj * state + h * F(V)
    return state + h * F(V)


def _propagator(problem, stencil, h):
    n = problem.n
    eye = np.eye(n)
    Dm = spatial_derivative(eye, stencil, problem.dx).T   # Dm @ u == derivative of u
    K = np.diag(problem.k())
    A = np.block([[-K, -Dm], [-Dm, -K]])
    return expm(h * A)


def step(state, scheme, dt: float, stencil: Stencil, filt: FilterSpec | None, k, dx: float,
         index: int = 0, propagator=None):
    """One timestep of size dt followed by one filter application.

    Composite schemes use ``first`` on even ``index`` and ``second`` on odd.
    The exact sentinel needs ``propagator`` = exp(dt A) of the semi-discrete
    operator.
    """
    def F(u):
        return rhs(u, stencil, k, dx)

    if isinstance(scheme, CompositeScheme):
        member = scheme.members()[index % 2]
        new = _rk_advance(state, member, dt, F)
    elif isinstance(scheme, ExactScheme):
        if propagator is None:
            raise ValueError("exact time integration needs a propagator")
        new = (propagator @ np.asarray(state).reshape(-1)).reshape(np.shape(state))
    else:
        new = _rk_advance(state, scheme, dt, F)
    return apply_filter(new, filt)


FILTER_PERIOD = 1.0


def effective_filter(filt: FilterSpec | None, dt: float, period: float | None = FILTER_PERIOD):
    """Filter used after each step of size dt.

    With ``period`` set, the strength is scaled to sigma * min(1, dt / period):
    the filter then removes the same fraction per unit time whatever dt is,
    instead of one full-strength application per step. ``period=None`` keeps
    sigma per step.
    """
    if filt is None or period is None:
        return filt
    return filt.with_strength(filt.sigma * min(1.0, dt / period))


def integrate(problem: WaveProblem, scheme, dt: float, nsteps: int, stencil, filt, state=None):
    """Advance ``nsteps`` steps from the initial condition (or ``state``).

    ``filt`` is applied as given after every step; see :func:`effective_filter`.
    """
    u = problem.initial() if state is None else np.asarray(state, dtype=float)
    k, dx = problem.k(), problem.dx
    prop = _propagator(problem, stencil, dt) if isinstance(scheme, ExactScheme) else None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(nsteps):
            u = step(u, scheme, dt, stencil, filt, k, dx, i, prop)
            if i % 16 == 15 and not np.all(np.isfinite(u)):
                break
    return u


# --- reference solution and benchmark ------------------------------------------------

def analytic_solution(problem: WaveProblem, t: float):
    """Exact (p, v) at time t: f = p + v advected at speed 1 and damped, g = 0."""
    x = problem.x
    src = x - t
    f0 = 2.0 * problem.packet(src, problem.L)
    decay = problem.damping.cumulative(x, problem.L) - problem.damping.cumulative(src, problem.L)
    f = f0 * np.exp(-decay)
    return np.stack([0.5 * f, 0.5 * f])


def snap_dt(T: float, dt: float) -> tuple[float, int]:
    """Nearest dt = T / n with integer n >= 1."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = max(1, int(round(T / dt)))
    return T / n, n


def _stages_per_step(scheme) -> Fraction:
    if isinstance(scheme, CompositeScheme):
        return Fraction(scheme.stages, 2)
    return Fraction(scheme.stages)


def effort(scheme, stencil: Stencil, problem: WaveProblem, nsteps: int) -> Fraction:
    """p w (T / dt) (L / dx), exact; composites count (p1 + p2) / 2 stages per step."""
    return _stages_per_step(scheme) * stencil.halfwidth * nsteps * problem.n


def error_norm(u, ua) -> float:
    """Sup-norm error of both fields relative to the sup-norm of the reference."""
    with np.errstate(invalid="ignore", over="ignore"):
        err = np.max(np.abs(u - ua))
    return float(err / np.max(np.abs(ua)))


def run_benchmark(problem: WaveProblem, scheme, dt: float, stencil: Stencil,
                  filt: FilterSpec | None, filter_period: float | None = FILTER_PERIOD) -> BenchResult:
    """Error at t = T (dt snapped to T / n) and the effort spent getting there."""
    dt, n = snap_dt(problem.T, dt)
    u = integrate(problem, scheme, dt, n, stencil, effective_filter(filt, dt, filter_period))
    err = error_norm(u, analytic_solution(problem, problem.T))
    if not math.isfinite(err):
        err = math.inf
    stable = err < DIVERGED_ERROR
    return BenchResult(scheme.name, dt, problem.ppw * dt, err,
                       float(effort(scheme, stencil, problem, n)), stable)


def sweep(problem: WaveProblem, schemes, dts, stencil: Stencil, filt,
          filter_period: float | None = FILTER_PERIOD) -> list[BenchResult]:
    """run_benchmark over schemes x dts, scheme-major with dt descending."""
    out = []
    for s in schemes:
        for dt in sorted(set(snap_dt(problem.T, d)[0] for d in dts), reverse=True):
            out.append(run_benchmark(problem, s, dt, stencil, filt, filter_period))
    return out
