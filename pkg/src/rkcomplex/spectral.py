"""Phase and amplification errors, stability and accuracy limits.

Every error measure is built from the defect d(z) = r(z) exp(iz) - 1 (see
:func:`rkcomplex.schemes.defect`), which stays accurate in double precision
even when the error is far below machine epsilon relative to r itself.

Composite schemes advance 2 dt per application. Their phase error uses the
mean numerical frequency of the two substeps, their amplification error
compares r1 r2 with exp(-2iz), and when rescaled they are treated as one
(p1 + p2)-stage scheme with step 2 dt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .schemes import CompositeScheme, ExactScheme, amplification, defect, order_of_accuracy

__all__ = [
    "UndefinedAtZero", "DegenerateAmplification", "GridError", "EffectiveFrequency",
    "ErrorMap", "WinnerMap", "LimitReport", "GridSpec", "effective_frequency",
    "phase_error", "phase_error_array", "amp_error", "amp_error_array",
    "global_error_estimate", "rescaled_amplification", "stability_limit",
    "small_dt_stability_sign", "small_dt_coefficient", "closed_form_growth",
    "fit_small_dt_growth", "accuracy_limit", "accuracy_limits", "limit_report",
    "error_map", "ETA_CAP", "ACCURACY_CLASSES",
]

ETA_CAP = 4.0
STABILITY_TOL = 1e-12
SCAN_STEP = 1e-3      # in units of eta
N_RAYS = 720
ACCURACY_CLASSES = ("better_than_1e-3", "better_than_1e-2", "worse")


class UndefinedAtZero(ValueError):
    pass


class DegenerateAmplification(ValueError):
    pass


class GridError(ValueError):
    pass


def _log1p(d):
    """Principal log(1 + d) for complex d, accurate when |d| is tiny."""
    d = np.asarray(d, dtype=complex)
    dr, di = d.real, d.imag
    with np.errstate(divide="ignore", invalid="ignore"):
        re = 0.5 * np.log1p(2.0 * dr + dr * dr + di * di)
    return re + 1j * np.arctan2(di, 1.0 + dr)


def _log_ratio(scheme, z):
    """Sum over substeps of principal log(r_k(z) exp(iz)).

    For one step this is log(r / r_e). Taking the principal branch is the same
    as choosing the log branch of r that minimises |w_bar dt - w dt|, because
    w_bar dt - w dt = i log(r exp(iz)) and |Im log| <= pi.
    """
    total = 0
    for member in scheme.members():
        total = total + _log1p(defect(member, z))
    return total


def _as_array(z):
    return np.asarray(z, dtype=complex)


def _cost_per_step(scheme) -> float:
    return scheme.cost / scheme.substeps


def _rescaled_argument(scheme, z):
    # equal cost to 4 stages per unit z: a P-stage (composite: per 2 dt) step
    # of argument y covers z = 4 m y / P
    return _as_array(z) * scheme.cost / (4.0 * scheme.substeps)


@dataclass(frozen=True)
class EffectiveFrequency:
    omega_bar_dt: complex


def effective_frequency(scheme, z) -> EffectiveFrequency:
    """w_bar dt = i log r on the branch nearest w dt (mean over substeps)."""
    z = complex(z)
    L = complex(_log_ratio(scheme, z))
    return EffectiveFrequency(z + 1j * L / scheme.substeps)


def phase_error_array(scheme, z, rescaled: bool = False):
    """Vectorised eps_p; 0 at z = 0 (the limit) and inf where r = 0."""
    z = _as_array(z)
    if rescaled:
        z = _rescaled_argument(scheme, z)
    L = _log_ratio(scheme, z)
    absz = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(L) / (scheme.substeps * absz)
    out = np.where(absz == 0, 0.0, out)
    out = np.where(np.isnan(out), np.inf, out)
    return out


def phase_error(scheme, z, rescaled: bool = False) -> float:
    """Relative phase error |w_bar / w - 1|; inf flags r(z) = 0."""
    if complex(z) == 0:
        raise UndefinedAtZero("phase error is undefined at z = 0")
    return float(phase_error_array(scheme, complex(z), rescaled))


def _rescaled_defect(scheme, z):
    """w exp(iz) - 1 for the (4/P)-th root w minimising it."""
    if scheme.cost == 4 and scheme.substeps == 1:
        return defect(scheme, z)
    y = _rescaled_argument(scheme, z)
    L = _log_ratio(scheme, y)
    alpha = 4.0 / scheme.cost
    best = None
    best_abs = None
    for k in range(scheme.cost):
        cand = np.expm1(alpha * (L + 2j * np.pi * k))
        a = np.abs(cand)
        if best is None:
            best, best_abs = cand, a
        else:
            take = a < best_abs
            best = np.where(take, cand, best)
            best_abs = np.where(take, a, best_abs)
    return best


def amp_error_array(scheme, z, rescaled: bool = False):
    """Vectorised eps_r = |r exp(i m z) - 1| (m = 2 for composites)."""
    z = _as_array(z)
    if rescaled:
        d = _rescaled_defect(scheme, z)
        return np.where(np.isnan(d.real), np.inf, np.abs(d))
    return np.abs(defect(scheme, z))


def amp_error(scheme, z, rescaled: bool = False) -> float:
    return float(amp_error_array(scheme, complex(z), rescaled))


def global_error_estimate(eps_r: float, T: float, dt: float) -> float:
    """(T / dt) eps_r: accumulated error after T/dt steps."""
    return T / dt * eps_r


def rescaled_amplification(scheme, z):
    """Cost-normalised factor (r_p(z p / 4))^(4/p) on the root minimising eps_r.

    For composites the product r1 r2 is raised to 4/(p1 + p2) at the argument
    where one double step costs the same as p1 + p2 stages of a 4-stage scheme.
    """
    z = complex(z)
    if z == 0:
        return 1.0 + 0j
    y = complex(_rescaled_argument(scheme, z))
    if amplification(scheme, y) == 0:
        raise DegenerateAmplification(f"r = 0 at z = {y}")
    if scheme.cost == 4 and scheme.substeps == 1:
        return complex(amplification(scheme, z))
    d = complex(_rescaled_defect(scheme, z))
    return complex(np.exp(-1j * z) * (1.0 + d))


# --- small-dt stability -----------------------------------------------------

def _log_series(scheme, nterms: int):
    """Exact Taylor coefficients a_k of log r(w) - w, r(w) = 1 + sum c_j w^j.

    c_j for j up to the order are taken as exact 1/j!, since their stored
    doubles carry rounding that would otherwise masquerade as a defect.
    """
    q = order_of_accuracy(scheme)
    c = [Fraction(1)] + [Fraction(1, math.factorial(j)) if j <= q else Fraction(x)
                         for j, x in enumerate(scheme.coeffs, start=1)]
    c += [Fraction(0)] * (nterms + 1 - len(c))
    L = [Fraction(0)] * (nterms + 1)
    for k in range(1, nterms + 1):
        acc = k * c[k]
        for j in range(1, k):
            acc -= j * L[j] * c[k - j]
        L[k] = acc / k
    L[1] -= 1
    return L


def small_dt_coefficient(scheme, nterms: int = 60):
    """(k, a) with Re log(r / r_e)(x) = a x^k + O(x^(k+2)) for small real x.

    Derived from the exact power series of log r, so it also covers the case
    where the leading bracket of the order-q formula vanishes. For composites
    the two substep series are summed (x measured per dt).
    """
    if isinstance(scheme, ExactScheme):
        return None
    total = [Fraction(0)] * (nterms + 1)
    for m in scheme.members():
        for k, a in enumerate(_log_series(m, nterms)):
            total[k] += a
    for k in range(2, nterms + 1, 2):
        if total[k] != 0:
            # w = -ix: w^k = (-1)^(k/2) x^k for even k
            a = total[k] * (-1) ** (k // 2)
            return k, float(a)
    return None


def closed_form_growth(scheme) -> tuple[int, float] | None:
    """Leading small-x coefficient of Re log(r / r_e) from the order-q formula.

    q = 2n:   (-1)^(n+1) [(c_{2n+2} - 1/(2n+2)!) - (c_{2n+1} - 1/(2n+1)!)] x^(2n+2)
    q = 2n-1: (-1)^n (c_{2n} - 1/(2n)!) x^(2n)
    Coefficients beyond p count as zero. Returns None when the bracket is zero.
    """
    if isinstance(scheme, CompositeScheme):
        eq = scheme.equivalent()
        res = closed_form_growth(eq)
        if res is None:
            return None
        k, a = res
        return k, a * 2.0**k   # back to x per dt
    q = order_of_accuracy(scheme)

    def dev(j):
        c = scheme.coeffs[j - 1] if j <= scheme.stages else 0.0
        return c - 1.0 / math.factorial(j)

    if q % 2 == 0:
        n = q // 2
        a = (-1) ** (n + 1) * (dev(2 * n + 2) - dev(2 * n + 1))
        k = 2 * n + 2
    else:
        n = (q + 1) // 2
        a = (-1) ** n * dev(2 * n)
        k = 2 * n
    return (k, a) if a != 0 else None


def small_dt_stability_sign(scheme) -> str:
    """'stable', 'unstable' or 'marginal' as real w dt -> 0."""
    if isinstance(scheme, ExactScheme):
        return "marginal"
    res = closed_form_growth(scheme)
    if res is None:
        res = small_dt_coefficient(scheme)
    if res is None:
        return "marginal"
    return "stable" if res[1] < 0 else "unstable"


def fit_small_dt_growth(scheme, power: int | None = None, x_range=(1e-3, 1e-2), n: int = 64):
    """Least-squares a in Re log(r / r_e)(x) ~ a x^power over log-spaced x."""
    if power is None:
        power = small_dt_coefficient(scheme)[0]
    x = np.geomspace(*x_range, n)
    y = _log_ratio(scheme, x).real
    basis = x**power
    return float(np.dot(basis, y) / np.dot(basis, basis))


# --- limits -----------------------------------------------------------------

def _scan_rays(values_fn, radii, directions, threshold, strict: bool):
    """Grid values along each ray, extended until every ray crosses threshold.

    Returns (values, n) with values of shape (n_rays, n) for radii[:n].
    Scanning in chunks keeps the far (irrelevant) part of the disc unevaluated.
    """
    chunk = 250
    blocks = []
    for start in range(0, len(radii), chunk):
        rr = radii[start:start + chunk]
        vals = values_fn(directions[:, None] * rr[None, :])
        blocks.append(vals)
        bad = _violates(np.concatenate(blocks, axis=1), threshold, strict)
        if bad.any(axis=1).all():
            break
    vals = np.concatenate(blocks, axis=1)
    return vals, vals.shape[1]


def _violates(vals, threshold, strict):
    bad = vals > threshold if strict else vals >= threshold
    return bad | ~np.isfinite(vals)


def _crossings(values_fn, vals, radii, directions, threshold, strict, tol=1e-10):
    """Per ray, the radius where values first reach threshold (bisected).

    Rays that never cross within the scanned radii get radii[-1].
    """
    bad = _violates(vals, threshold, strict)
    hit = bad.any(axis=1)
    first = np.argmax(bad, axis=1)
    hi = radii[first]
    lo = np.where(first > 0, radii[np.maximum(first - 1, 0)], 0.0)
    out = np.full(len(directions), radii[-1])
    if not hit.any():
        return out
    d, lo, hi = directions[hit], lo[hit], hi[hit]
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        b = _violates(values_fn(d * mid), threshold, strict)
        hi = np.where(b, mid, hi)
        lo = np.where(b, lo, mid)
    out[hit] = lo
    return out


def _radii(cap=ETA_CAP, step=SCAN_STEP):
    n = int(round(cap / step))
    return np.pi * step * np.arange(1, n + 1)


def stability_limit(scheme, rescaled: bool = False) -> float:
    """eta_s (or lambda_s): |r(x)| <= 1 + 1e-12 for real x in (0, pi eta_s].

    Schemes the small-dt test flags as unstable get 0, since their growth near
    the origin is far below any usable tolerance on |r| - 1.
    """
    if small_dt_stability_sign(scheme) == "unstable":
        return 0.0

    def modulus(z):
        if rescaled:
            z = _rescaled_argument(scheme, z)
        return np.abs(amplification(scheme, z))

    radii = _radii()
    direction = np.array([1.0 + 0j])
    thr = 1.0 + STABILITY_TOL
    vals, n = _scan_rays(modulus, radii, direction, thr, True)
    x = _crossings(modulus, vals, radii[:n], direction, thr, True)
    return float(min(x[0] / np.pi, ETA_CAP))


def accuracy_limits(scheme, deltas, complex_disc: bool = False, rescaled: bool = False,
                    n_rays: int = N_RAYS) -> dict:
    """eta_delta (real segment) or eta_hat_delta (full disc) for each delta.

    The disc is sampled on ``n_rays`` rays; ray 0 is the positive real axis,
    so the disc limit can never exceed the real one.
    """
    if any(d <= 0 for d in deltas):
        raise ValueError("delta must be positive")
    if complex_disc:
        directions = np.exp(2j * np.pi * np.arange(n_rays) / n_rays)
    else:
        directions = np.array([1.0 + 0j])

    def err(z):
        return amp_error_array(scheme, z, rescaled)

    out = {}
    radii = _radii()
    # the largest delta is crossed last, so one scan serves every delta
    vals, n = _scan_rays(err, radii, directions, max(deltas), False)
    for delta in deltas:
        x = _crossings(err, vals, radii[:n], directions, delta, False)
        eta = float(min(x.min() / np.pi, ETA_CAP))
        if eta <= 0:
            raise AssertionError("accuracy violated arbitrarily close to the origin")
        out[delta] = eta
    return out


def accuracy_limit(scheme, delta: float, complex_disc: bool = False,
                   rescaled: bool = False) -> float:
    return accuracy_limits(scheme, [delta], complex_disc, rescaled)[delta]


@dataclass
class LimitReport:
    scheme: str
    eta_s: float
    eta_delta: dict = field(default_factory=dict)
    eta_hat_delta: dict = field(default_factory=dict)
    rescaled: bool = False


def limit_report(scheme, deltas=(1e-3, 1e-4, 1e-5), rescaled: bool = False) -> LimitReport:
    return LimitReport(
        scheme=scheme.name,
        eta_s=stability_limit(scheme, rescaled),
        eta_delta=accuracy_limits(scheme, deltas, False, rescaled),
        eta_hat_delta=accuracy_limits(scheme, deltas, True, rescaled),
        rescaled=rescaled,
    )


# --- maps ---------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    re_range: tuple[float, float]
    im_range: tuple[float, float]
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise GridError("grid needs at least 2 points per axis")
        if not (self.re_range[0] < self.re_range[1] and self.im_range[0] < self.im_range[1]):
            raise GridError("empty or inverted range")

    def points(self):
        """Complex grid of shape (nx, ny), index [i, j] -> (re_i, im_j)."""
        re = np.linspace(*self.re_range, self.nx)
        im = np.linspace(*self.im_range, self.ny)
        return re[:, None] + 1j * im[None, :]


@dataclass
class ErrorMap:
    grid: GridSpec
    values: np.ndarray
    kind: str
    scheme: str = ""

    @property
    def re_range(self):
        return self.grid.re_range

    @property
    def im_range(self):
        return self.grid.im_range


@dataclass
class WinnerMap:
    grid: GridSpec
    winner: np.ndarray
    accuracy_class: np.ndarray   # 0, 1, 2 -> ACCURACY_CLASSES
    values: np.ndarray           # the winning error
    contestants: tuple[str, ...] = ()
    kind: str = "phase"


def _kind_fn(kind):
    if kind == "phase":
        return phase_error_array
    if kind == "amplification":
        return amp_error_array
    raise ValueError(f"unknown map kind {kind!r}")


def error_map(schemes, grid: GridSpec, kind: str = "phase", rescaled: bool | None = None):
    """ErrorMap for one scheme, WinnerMap when several compete.

    ``rescaled=None`` rescales only when the contestants differ in cost per
    timestep. Ties go to the lowest contestant index.
    """
    if not isinstance(schemes, (list, tuple)):
        schemes = [schemes]
    if not schemes:
        raise ValueError("no schemes")
    fn = _kind_fn(kind)
    if rescaled is None:
        rescaled = len({_cost_per_step(s) for s in schemes}) > 1
    z = grid.points()
    stack = np.stack([fn(s, z, rescaled) for s in schemes])
    if len(schemes) == 1:
        return ErrorMap(grid, stack[0], kind, schemes[0].name)
    winner = np.argmin(stack, axis=0)   # first minimum wins ties
    best = np.take_along_axis(stack, winner[None], axis=0)[0]
    cls = np.where(best < 1e-3, 0, np.where(best < 1e-2, 1, 2))
    return WinnerMap(grid, winner, cls, best, tuple(s.name for s in schemes), kind)
