"""Precision contexts, pole-aware root bracketing/refinement and Gauss-Legendre nodes.

All arbitrary-precision work goes through a :class:`PrecisionContext`, which
hands out an isolated mpmath context per mantissa width. Nothing here touches
the global ``mpmath.mp`` state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Any, Callable, NamedTuple, Sequence

import gmpy2
import numpy as np
from mpmath.ctx_mp import MPContext

from .errors import RabiError, RootRefinementError

log = logging.getLogger(__name__)

# Fixed rungs of the escalation ladder; past the last one bits double and root_tol squares.
LADDER: tuple[tuple[int, float], ...] = ((53, 1e-10), (200, 1e-30), (400, 1e-60))


@lru_cache(maxsize=None)
def mp_context(bits: int) -> MPContext:
    """Return a private mpmath context with ``bits`` of mantissa (cached, never mutated)."""
    ctx = MPContext()
    ctx.prec = bits
    return ctx


@dataclass(frozen=True)
class PrecisionContext:
    """Working precision and the two accuracy targets threaded through every call."""

    mantissa_bits: int = 200
    root_tol: float = 1e-30
    series_tol: float = 1e-15

    def __post_init__(self) -> None:
        if int(self.mantissa_bits) != self.mantissa_bits or self.mantissa_bits < 53:
            raise ValueError(f"mantissa_bits must be an integer >= 53, got {self.mantissa_bits}")
        if not self.root_tol > 0:
            raise ValueError(f"root_tol must be positive, got {self.root_tol}")
        if not self.series_tol > 0:
            raise ValueError(f"series_tol must be positive, got {self.series_tol}")

    @property
    def mp(self) -> MPContext:
        return mp_context(self.mantissa_bits)

    @property
    def eps(self) -> float:
        """Unit roundoff of the working precision."""
        return math.ldexp(1.0, 1 - self.mantissa_bits)

    def escalated(self) -> PrecisionContext:
        """Next rung of the ladder: more bits and a tighter root tolerance."""
        for bits, tol in LADDER:
            if bits > self.mantissa_bits:
                return replace(self, mantissa_bits=bits, root_tol=min(tol, self.root_tol**2))
        return replace(self, mantissa_bits=2 * self.mantissa_bits, root_tol=self.root_tol**2)


DEFAULT_CONTEXT = PrecisionContext()


def to_mpfr(value) -> gmpy2.mpfr:
    """Exact conversion of an mpmath number (or float/int) to the active gmpy2 context."""
    raw = getattr(value, "_mpf_", None)
    if raw is None:
        return gmpy2.mpfr(value)
    sign, man, exp, _ = raw
    if not man and exp:
        return gmpy2.mpfr(float(value))
    out = gmpy2.mul_2exp(gmpy2.mpfr(int(man)), int(exp))
    return -out if sign else out


def from_mpfr(value: gmpy2.mpfr, mp: MPContext):
    """Exact conversion of a finite gmpy2 value into an mpmath number."""
    if not gmpy2.is_finite(value):
        return mp.mpf(float(value))
    man, exp = value.as_mantissa_exp()
    return mp.mpf((int(man), int(exp)))


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float
    f_lo_sign: int
    f_hi_sign: int

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"empty bracket [{self.lo}, {self.hi}]")
        if self.f_lo_sign == self.f_hi_sign:
            raise ValueError("bracket ends carry the same sign")


class RefinedRoot(NamedTuple):
    root: Any
    residual: Any
    width: Any


def _sign_at(f: Callable[[float], Any], x: float, warnings: list[str] | None) -> int | None:
    try:
        v = f(x)
    except (RabiError, ArithmeticError, ValueError) as exc:
        msg = f"evaluator failed at x={x!r}: {exc}"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return None
    if not math.isfinite(float(v)):
        msg = f"evaluator returned non-finite value at x={x!r}"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return None
    return (v > 0) - (v < 0)


def _scan(f, xs: Sequence[float], warnings) -> tuple[list[Bracket], int | None, int | None]:
    """Brackets between consecutive nonzero-sign samples; also the end signs."""
    found: list[Bracket] = []
    prev_x, prev_s = None, None
    first_s = None
    for x in xs:
        s = _sign_at(f, x, warnings)
        if not s:
            continue
        if first_s is None:
            first_s = s
        if prev_s is not None and s != prev_s:
            found.append(Bracket(prev_x, x, prev_s, s))
        prev_x, prev_s = x, s
    return found, first_s, prev_s


def bracket_roots(
    f: Callable[[float], Any],
    interval: tuple[float, float],
    poles: Sequence[float] = (),
    grid_per_unit: int = 64,
    *,
    flank: float = 1e-13,
    densify: bool = True,
    warnings: list[str] | None = None,
) -> list[Bracket]:
    """Locate sign changes of ``f`` on ``interval`` without straddling any pole.

    The interval is split at every pole; each piece is sampled on a uniform grid
    whose pole ends are pulled in by ``flank``. A piece bounded by two poles whose
    flank signs agree and that shows no sign change is rescanned once at 4x density,
    since an even number of roots may hide between the samples.
    """
    a, b = float(interval[0]), float(interval[1])
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    if grid_per_unit < 2:
        raise ValueError("grid_per_unit must be >= 2")
    inner = [float(p) for p in poles if a < p < b]
    if inner != sorted(inner):
        raise ValueError("poles must be sorted")
    pole_set = {float(p) for p in poles}
    edges = [a, *inner, b]

    out: list[Bracket] = []
    for left, right in zip(edges[:-1], edges[1:]):
        left_pole, right_pole = left in pole_set, right in pole_set
        lo = left + flank if left_pole else left
        hi = right - flank if right_pole else right
        if not lo < hi:
            continue
        count = max(2, math.ceil((right - left) * grid_per_unit))
        for attempt in range(2 if densify else 1):
            n = count * 4**attempt
            xs = [lo] + [left + (right - left) * i / n for i in range(1, n)] + [hi]
            found, s_first, s_last = _scan(f, xs, warnings)
            if found or not (left_pole and right_pole) or s_first != s_last:
                break
        out.extend(found)
    return out


def refine_root(f: Callable[[Any], Any], bracket: Bracket, ctx: PrecisionContext = DEFAULT_CONTEXT) -> RefinedRoot:
    """Shrink ``bracket`` to width <= root_tol (or a few ulps, whichever is larger).

    Illinois-modified regula falsi; any step that leaves the bracket, or two steps in
    a row that fail to halve it, are replaced by bisection.
    """
    mp = ctx.mp
    lo, hi = mp.mpf(bracket.lo), mp.mpf(bracket.hi)
    flo, fhi = f(lo), f(hi)
    for v, at in ((flo, lo), (fhi, hi)):
        if not mp.isfinite(v):
            raise RootRefinementError(f"non-finite value {v} at bracket end {at}")
    if flo == 0:
        return RefinedRoot(lo, mp.mpf(0), mp.mpf(0))
    if fhi == 0:
        return RefinedRoot(hi, mp.mpf(0), mp.mpf(0))
    if (flo > 0) == (fhi > 0):
        raise RootRefinementError(f"no sign change on [{lo}, {hi}]")

    scale = max(abs(lo), abs(hi), mp.mpf(1))
    tol = max(mp.mpf(ctx.root_tol), 8 * mp.eps * scale)
    side = 0
    stalls = 0
    for _ in range(8 * ctx.mantissa_bits + 200):
        width = hi - lo
        if width <= tol:
            break
        if stalls >= 2:
            x = (lo + hi) / 2
            stalls = 0
        else:
            x = (lo * fhi - hi * flo) / (fhi - flo)
            if not lo < x < hi:
                x = (lo + hi) / 2
        fx = f(x)
        if not mp.isfinite(fx):
            raise RootRefinementError(f"non-finite value {fx} at x={x}")
        if fx == 0:
            lo = hi = x
            break
        if (fx > 0) == (flo > 0):
            lo, flo = x, fx
            if side == -1:
                fhi /= 2
            side = -1
        else:
            hi, fhi = x, fx
            if side == 1:
                flo /= 2
            side = 1
        stalls = stalls + 1 if hi - lo > width / 2 else 0
    root = (lo + hi) / 2
    return RefinedRoot(root, abs(f(root)), hi - lo)


@lru_cache(maxsize=64)
def _gauss_legendre(n: int, bits: int) -> tuple[tuple[Any, Any], ...]:
    mp = mp_context(bits)
    seeds, _ = np.polynomial.legendre.leggauss(n)
    tol = 4 * mp.eps
    out = []
    for seed in seeds:
        x = mp.mpf(float(seed))
        for _ in range(20):
            p0, p1 = mp.mpf(1), x
            for k in range(2, n + 1):
                p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
            dp = n * (x * p1 - p0) / (x * x - 1)
            step = p1 / dp
            x -= step
            if abs(step) <= tol:
                break
        p0, p1 = mp.mpf(1), x
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = n * (x * p1 - p0) / (x * x - 1)
        w = 2 / ((1 - x * x) * dp * dp)
        out.append(((x + 1) / 2, w / 2))
    return tuple(out)


def quad_nodes_radial(n: int, ctx: PrecisionContext = DEFAULT_CONTEXT) -> list[tuple[Any, Any]]:
    """Gauss-Legendre nodes and weights on [0, 1] at the working precision of ``ctx``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return list(_gauss_legendre(int(n), ctx.mantissa_bits))
