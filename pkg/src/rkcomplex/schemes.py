"""Runge-Kutta schemes as amplification polynomials.

For a linear, time-invariant problem dU/dt = -i w U every explicit p-stage
Runge-Kutta scheme reduces to

    U(t + dt) = r(w dt) U(t),   r(z) = 1 + sum_{j=1}^p c_j (-i z)^j,

so a scheme is fully described by its coefficients c_j. Maximal order schemes
have c_j = 1/j! for every j; optimized schemes only fix the first q of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "SchemeError", "ParseError", "ValidationError", "ZeroCoefficient",
    "UnknownScheme", "RKScheme", "CompositeScheme", "ExactScheme",
    "LowStorageCoeffs", "EXACT", "maximal_order", "amplification",
    "composite_amplification", "betas_to_coeffs", "coeffs_to_betas",
    "order_of_accuracy", "registry_load", "registry_loads", "registry",
    "get_scheme", "defect",
]

# |c_j j! - 1| tolerance for j above this index, where 1/j! is tiny
_RELATIVE_FROM = 12


class SchemeError(ValueError):
    pass


class ParseError(SchemeError):
    pass


class ValidationError(SchemeError):
    pass


class ZeroCoefficient(SchemeError):
    pass


class UnknownScheme(SchemeError, KeyError):
    pass


def _inv_factorial(j: int) -> float:
    return 1.0 / math.factorial(j)


def _matches_taylor(j: int, c: float, tol: float) -> bool:
    if j > _RELATIVE_FROM:
        return abs(c * math.factorial(j) - 1.0) <= 1e-6
    return abs(c - _inv_factorial(j)) <= tol


@dataclass(frozen=True)
class RKScheme:
    """Single-step scheme: ``stages`` p, declared ``order`` q, coefficients c_1..c_p."""

    name: str
    stages: int
    order: int
    coeffs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.stages < 1:
            raise ValidationError(f"{self.name}: stages must be positive")
        if len(self.coeffs) != self.stages:
            raise ValidationError(
                f"{self.name}: {len(self.coeffs)} coefficients for {self.stages} stages")
        if not 1 <= self.order <= self.stages:
            raise ValidationError(f"{self.name}: order {self.order} outside 1..{self.stages}")
        for j in range(1, self.order + 1):
            if not _matches_taylor(j, self.coeffs[j - 1], 1e-12):
                raise ValidationError(
                    f"{self.name}: c_{j} = {self.coeffs[j - 1]!r} violates order {self.order}")

    @property
    def cost(self) -> int:
        """Stage evaluations per timestep."""
        return self.stages

    @property
    def substeps(self) -> int:
        return 1

    def members(self) -> tuple[RKScheme, ...]:
        return (self,)

    def amplification(self, z):
        return amplification(self, z)

    def defect(self, z):
        return defect(self, z)


@dataclass(frozen=True)
class CompositeScheme:
    """Two-step alternating scheme: ``first`` on odd steps, ``second`` on even ones."""

    name: str
    first: RKScheme
    second: RKScheme

    @property
    def stages(self) -> int:
        return self.first.stages + self.second.stages

    @property
    def cost(self) -> int:
        """Stage evaluations per double step of 2 dt."""
        return self.stages

    @property
    def substeps(self) -> int:
        return 2

    def members(self) -> tuple[RKScheme, ...]:
        return (self.first, self.second)

    def amplification(self, z):
        return composite_amplification(self, z)

    def equivalent(self) -> RKScheme:
        """The product r1 r2 as a single (p1 + p2)-stage scheme stepping 2 dt."""
        prod = np.convolve((1.0,) + self.first.coeffs, (1.0,) + self.second.coeffs)
        coeffs = tuple(prod[j] / 2.0**j for j in range(1, len(prod)))
        return RKScheme(f"{self.name}(2dt)", len(coeffs), _taylor_order(coeffs), coeffs)


@dataclass(frozen=True)
class ExactScheme:
    """Sentinel with r(z) = exp(-i z); every error measure vanishes."""

    name: str = "exact"
    stages: int = 4

    @property
    def cost(self) -> int:
        return self.stages

    @property
    def substeps(self) -> int:
        return 1

    def members(self) -> tuple[ExactScheme, ...]:
        return (self,)

    def amplification(self, z):
        return np.exp(-1j * np.asarray(z, dtype=complex))

    def defect(self, z):
        return np.zeros_like(np.asarray(z, dtype=complex))


EXACT = ExactScheme()


@dataclass(frozen=True)
class LowStorageCoeffs:
    """betas beta_1..beta_p of the low-storage form; beta_0 = 0 is implicit."""

    betas: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))


def maximal_order(p: int) -> RKScheme:
    """p-stage scheme of order p, c_j = 1/j!."""
    return RKScheme(f"RK{p}", p, p, tuple(_inv_factorial(j) for j in range(1, p + 1)))


def amplification(scheme, z):
    """r(z) by Horner's rule in w = -i z. Works elementwise on arrays."""
    if isinstance(scheme, CompositeScheme):
        return composite_amplification(scheme, z)
    if isinstance(scheme, ExactScheme):
        return scheme.amplification(z)
    w = -1j * np.asarray(z, dtype=complex)
    acc = np.zeros_like(w)
    for c in reversed(scheme.coeffs):
        acc = (acc + c) * w
    out = 1.0 + acc
    return out if out.ndim else complex(out)


def composite_amplification(cs: CompositeScheme, z):
    """r1(z) r2(z): the factor applied over one double step of 2 dt."""
    out = np.asarray(amplification(cs.first, z)) * np.asarray(amplification(cs.second, z))
    return out if out.ndim else complex(out)


_TAIL_SERIES_RADIUS = 2.0
_TAIL_TERMS = 40


def _exp_tail(w, p: int):
    """sum_{j > p} w^j / j!, accurate also where it is tiny."""
    w = np.asarray(w, dtype=complex)
    term = w ** (p + 1) / math.factorial(p + 1)
    series = term.copy()
    for j in range(p + 2, p + 2 + _TAIL_TERMS):
        term = term * w / j
        series = series + term
    big = np.abs(w) > _TAIL_SERIES_RADIUS
    if np.any(big):
        wb = np.where(big, w, 0)
        partial = np.zeros_like(wb)
        for j in range(p, -1, -1):
            partial = partial * wb + _inv_factorial(j)
        series = np.where(big, np.exp(wb) - partial, series)
    return series


def defect(scheme: RKScheme, z):
    """r(z) exp(i z) - 1 without the cancellation of forming r first.

    r - exp(-iz) = sum_j (c_j - 1/j!) w^j - tail(w) with w = -iz, where the
    order conditions make the leading differences exactly zero.
    """
    if isinstance(scheme, ExactScheme):
        return scheme.defect(z)
    if isinstance(scheme, CompositeScheme):
        d1, d2 = defect(scheme.first, z), defect(scheme.second, z)
        return d1 + d2 + d1 * d2
    z = np.asarray(z, dtype=complex)
    w = -1j * z
    acc = np.zeros_like(w)
    for j in range(scheme.stages, 0, -1):
        acc = (acc + (scheme.coeffs[j - 1] - _inv_factorial(j))) * w
    out = np.exp(1j * z) * (acc - _exp_tail(w, scheme.stages))
    return out if out.ndim else complex(out)


def betas_to_coeffs(betas: LowStorageCoeffs | list | tuple) -> tuple[float, ...]:
    """c_1 = beta_p and c_{j+1} = beta_{p-j} c_j."""
    b = betas.betas if isinstance(betas, LowStorageCoeffs) else tuple(betas)
    p = len(b)
    if p < 1:
        raise SchemeError("need at least one beta")
    c = [b[p - 1]]
    for j in range(1, p):
        c.append(b[p - j - 1] * c[-1])
    return tuple(c)


def coeffs_to_betas(scheme: RKScheme | list | tuple) -> LowStorageCoeffs:
    """Inverse of :func:`betas_to_coeffs`; every c_j must be nonzero."""
    c = scheme.coeffs if isinstance(scheme, RKScheme) else tuple(scheme)
    p = len(c)
    if any(cj == 0 for cj in c):
        raise ZeroCoefficient("zero coefficient: scheme has no low-storage form")
    b = [0.0] * p
    b[p - 1] = c[0]
    for j in range(1, p):
        b[p - j - 1] = c[j] / c[j - 1]
    return LowStorageCoeffs(tuple(b))


def order_of_accuracy(scheme) -> int:
    """Largest q with c_j = 1/j! for all j <= q (tolerance 1e-10)."""
    if isinstance(scheme, CompositeScheme):
        return scheme.equivalent().order
    return _taylor_order(scheme.coeffs)


def _taylor_order(coeffs) -> int:
    q = 0
    for j, c in enumerate(coeffs, start=1):
        if not _matches_taylor(j, c, 1e-10):
            break
        q = j
    return q


# --- scheme files ---------------------------------------------------------

def _parse_kv(tokens, lineno):
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or not key or not val:
            raise ParseError(f"line {lineno}: expected key=value, got {tok!r}")
        out[key] = val
    return out


def _parse_int(val, what, lineno):
    try:
        return int(val)
    except ValueError:
        raise ParseError(f"line {lineno}: {what} must be an integer, got {val!r}") from None


def registry_loads(text: str, known: dict | None = None) -> list:
    """Parse scheme-file text. ``known`` resolves composite members not in the text."""
    known = dict(known or {})
    loaded: dict[str, object] = {}
    out = []
    current = None  # (name, p, q, {j: c}, lineno)

    def add(obj, lineno):
        if obj.name in loaded:
            raise ValidationError(f"line {lineno}: duplicate scheme name {obj.name!r}")
        loaded[obj.name] = obj
        out.append(obj)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if current is not None:
            if head == "c":
                if len(rest) != 2:
                    raise ParseError(f"line {lineno}: expected 'c <j> <value>'")
                j = _parse_int(rest[0], "coefficient index", lineno)
                try:
                    val = float(rest[1])
                except ValueError:
                    raise ParseError(f"line {lineno}: bad number {rest[1]!r}") from None
                name, p, q, cs, _ = current
                if not 1 <= j <= p:
                    raise ValidationError(f"line {lineno}: c_{j} outside 1..{p} for {name}")
                if j in cs:
                    raise ParseError(f"line {lineno}: c_{j} given twice for {name}")
                cs[j] = val
                continue
            if head == "end" and not rest:
                name, p, q, cs, start = current
                coeffs = []
                for j in range(1, p + 1):
                    if j <= q:
                        if j in cs and not _matches_taylor(j, cs[j], 1e-12):
                            raise ValidationError(
                                f"{name}: c_{j} = {cs[j]!r} violates declared order {q}")
                        coeffs.append(_inv_factorial(j))
                    elif j in cs:
                        coeffs.append(cs[j])
                    else:
                        raise ValidationError(f"{name}: missing coefficient c_{j}")
                add(RKScheme(name, p, q, tuple(coeffs)), start)
                current = None
                continue
            raise ParseError(f"line {lineno}: unexpected {head!r} inside scheme block")
        if head == "scheme":
            if not rest:
                raise ParseError(f"line {lineno}: scheme needs a name")
            kv = _parse_kv(rest[1:], lineno)
            if set(kv) != {"stages", "order"}:
                raise ParseError(f"line {lineno}: scheme needs stages= and order=")
            p = _parse_int(kv["stages"], "stages", lineno)
            q = _parse_int(kv["order"], "order", lineno)
            if p < 1 or not 1 <= q <= p:
                raise ValidationError(f"line {lineno}: invalid stages/order {p}/{q}")
            current = (rest[0], p, q, {}, lineno)
        elif head == "composite":
            if not rest:
                raise ParseError(f"line {lineno}: composite needs a name")
            kv = _parse_kv(rest[1:], lineno)
            if set(kv) != {"first", "second"}:
                raise ParseError(f"line {lineno}: composite needs first= and second=")
            parts = []
            for key in ("first", "second"):
                ref = loaded.get(kv[key]) or known.get(kv[key])
                if not isinstance(ref, RKScheme):
                    raise ValidationError(f"line {lineno}: unknown single-step scheme {kv[key]!r}")
                parts.append(ref)
            add(CompositeScheme(rest[0], *parts), lineno)
        else:
            raise ParseError(f"line {lineno}: unknown directive {head!r}")
    if current is not None:
        raise ParseError(f"scheme {current[0]!r} not terminated by 'end'")
    return out


def registry_load(path, known: dict | None = None) -> list:
    """Load a scheme file; see :func:`registry_loads` for the grammar."""
    return registry_loads(Path(path).read_text(encoding="utf-8"), known)


def format_scheme(scheme: RKScheme) -> str:
    """Scheme-file block for ``scheme`` (free coefficients only)."""
    lines = [f"scheme {scheme.name} stages={scheme.stages} order={scheme.order}"]
    for j in range(scheme.order + 1, scheme.stages + 1):
        lines.append(f"c {j} {scheme.coeffs[j - 1]!r}")
    lines.append("end")
    return "\n".join(lines) + "\n"


_BUILTIN: dict | None = None


def registry(extra_path=None) -> dict:
    """Name -> scheme for RK1..RK16, the bundled optimized schemes and ``exact``.

    ``extra_path`` adds schemes from another file; name clashes are errors.
    """
    global _BUILTIN
    if _BUILTIN is None:
        reg: dict = {f"RK{p}": maximal_order(p) for p in range(1, 17)}
        text = resources.files("rkcomplex").joinpath("data/schemes.txt").read_text(encoding="utf-8")
        for s in registry_loads(text, reg):
            reg[s.name] = s
        reg[EXACT.name] = EXACT
        _BUILTIN = reg
    reg = dict(_BUILTIN)
    if extra_path is not None:
        for s in registry_load(extra_path, reg):
            if s.name in reg:
                raise ValidationError(f"duplicate scheme name {s.name!r}")
            reg[s.name] = s
    return reg


def get_scheme(name: str, extra_path=None):
    reg = registry(extra_path)
    try:
        return reg[name]
    except KeyError:
        raise UnknownScheme(f"unknown scheme {name!r}") from None
