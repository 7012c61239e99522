"""K_n recurrence, the G-function and the regular spectrum of each parity sector.

Units are normalized to omega = 1 and the spectral parameter is x = E + g**2.
Poles of the formalism sit at the non-negative integers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import lru_cache
from typing import Any

import gmpy2
import numpy as np
from scipy.optimize import brentq

from .errors import NonConvergence, PoleProximity, RabiError
from .numerics import (
    DEFAULT_CONTEXT,
    Bracket,
    PrecisionContext,
    bracket_roots,
    from_mpfr,
    refine_root,
    to_mpfr,
)

log = logging.getLogger(__name__)

POLE_GUARD = 1e-40
JUDDIAN_DISTANCE = 1e-6
JUDDIAN_K_TOL = 1e-8  # relative cancellation of n*K_n(n) that flags the Juddian condition
COLLISION_DISTANCE = 1e-12
MAX_G_TERMS = 100_000
SMALL_RUN = 20  # consecutive negligible terms that end a G-function sum
SCAN_FLANK = 1e-13


class Parity(IntEnum):
    PLUS = 1
    MINUS = -1

    @classmethod
    def parse(cls, text: str | int) -> Parity:
        key = str(text).strip().lower()
        if key in ("+", "+1", "1", "plus", "p"):
            return cls.PLUS
        if key in ("-", "-1", "minus", "m"):
            return cls.MINUS
        raise ValueError(f"unknown parity {text!r}")

    @property
    def symbol(self) -> str:
        return "+" if self > 0 else "-"


@dataclass(frozen=True)
class ModelParams:
    """Physical couplings; ``g`` and ``delta`` are divided by ``omega`` internally.

    A negative ``delta`` is accepted: it swaps the roles of the two parity sectors.
    """

    g: float
    delta: float
    omega: float = 1.0

    def __post_init__(self) -> None:
        for name in ("g", "delta", "omega"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")

    @property
    def g_norm(self) -> float:
        return self.g / self.omega

    @property
    def delta_norm(self) -> float:
        return self.delta / self.omega

    @property
    def decoupled(self) -> bool:
        return self.delta == 0

    def normalized(self) -> ModelParams:
        return ModelParams(self.g_norm, self.delta_norm, 1.0)

    def mp_couplings(self, ctx: PrecisionContext) -> tuple[Any, Any]:
        """(g, delta) in units of omega as mp numbers, read from their decimal form."""
        mp = ctx.mp
        g = mp.mpf(repr(self.g))
        d = mp.mpf(repr(self.delta))
        if self.omega != 1.0:
            w = mp.mpf(repr(self.omega))
            g, d = g / w, d / w
        return g, d


@dataclass(frozen=True)
class KSequence:
    x: Any
    coeffs: tuple
    kink_index: int | None = None
    growth_flag: bool = False

    @property
    def N(self) -> int:
        return len(self.coeffs) - 1

    def recurrence_residuals(self, params: ModelParams, ctx: PrecisionContext = DEFAULT_CONTEXT) -> list:
        """n*K_n - f_{n-1}K_{n-1} + K_{n-2} for every stored n >= 2."""
        K = self.coeffs
        return [
            n * K[n] - f_coeff(n - 1, self.x, params, ctx) * K[n - 1] + K[n - 2]
            for n in range(2, len(K))
        ]


@dataclass(frozen=True)
class SpectralPoint:
    parity: Parity
    index: int
    x: Any
    energy: Any
    residual: float
    delta_achieved: float
    juddian_flag: bool = False
    pole_collision: bool = False
    ctx: PrecisionContext = field(default=DEFAULT_CONTEXT, compare=False)


@dataclass(frozen=True)
class SpectrumScan:
    points: tuple[SpectralPoint, ...]
    warnings: tuple[str, ...] = ()


def _check_pole(n: int, x, delta, ctx: PrecisionContext) -> None:
    if delta != 0 and abs(x - n) < POLE_GUARD:
        raise PoleProximity(n, x, POLE_GUARD)


def f_coeff(n: int, x, params: ModelParams, ctx: PrecisionContext = DEFAULT_CONTEXT):
    """2g + (n - x + delta**2/(x - n))/(2g); even in delta, so shared by both sectors."""
    mp = ctx.mp
    g, d = params.mp_couplings(ctx)
    x = mp.mpf(x)
    _check_pole(n, x, d, ctx)
    pole_term = d * d / (x - n) if d != 0 else 0
    return 2 * g + (n - x + pole_term) / (2 * g)


def kink_start(magnitudes, begin: int, run: int = 3) -> int | None:
    """First index >= ``begin`` after which ``magnitudes`` increases ``run`` times in a row."""
    ups = 0
    for n in range(max(begin, 1), len(magnitudes)):
        if magnitudes[n] > magnitudes[n - 1]:
            ups += 1
            if ups == run:
                return n - run
        else:
            ups = 0
    return None


def bulk_index(x, g) -> int:
    """Index past which the summands of a regular eigenstate must decay."""
    return math.ceil((math.sqrt(max(float(x), 0.0)) + 2 * float(g)) ** 2) + 2


def _k_values(x, n_max: int, g, d, mp) -> list:
    inv2g = 1 / (2 * g)
    d2 = d * d
    K = [mp.mpf(1)]
    prev2 = mp.mpf(0)
    for n in range(1, n_max + 1):
        m = n - 1
        pole_term = d2 / (x - m) if d != 0 else 0
        f = 2 * g + (m - x + pole_term) * inv2g
        K.append((f * K[-1] - prev2) / n)
        prev2 = K[-2]
    return K


def k_sequence(x, N: int, params: ModelParams, ctx: PrecisionContext = DEFAULT_CONTEXT) -> KSequence:
    """K_0..K_N at ``x``; ``kink_index`` marks where sqrt(n!)|K_n| starts growing past the bulk."""
    if N < 1:
        raise ValueError("N must be >= 1")
    mp = ctx.mp
    g, d = params.mp_couplings(ctx)
    x = mp.mpf(x)
    for n in range(0, N):
        _check_pole(n, x, d, ctx)
    K = _k_values(x, N, g, d, mp)
    mags = [abs(k) * mp.sqrt(mp.factorial(n)) for n, k in enumerate(K)]
    kink = kink_start(mags, bulk_index(x, g))
    return KSequence(x=x, coeffs=tuple(K), kink_index=kink, growth_flag=kink is not None)


def g_function(
    x,
    params: ModelParams,
    parity: Parity = Parity.PLUS,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
    *,
    tol: float | None = None,
):
    """Sum_n K_n(x) (1 - p*delta/(x - n)) g**n, truncated once ``SMALL_RUN`` terms in a row
    fall below ``tol`` (default: a few ulps) relative to the running sum of |terms|."""
    mp = ctx.mp
    g, d = params.mp_couplings(ctx)
    x = mp.mpf(x)
    nearest = int(mp.nint(x))
    if nearest >= 0:
        _check_pole(nearest, x, d, ctx)
    rel = tol if tol is not None else 16 * ctx.eps
    with gmpy2.context(precision=ctx.mantissa_bits):
        xr, g, d = to_mpfr(x), to_mpfr(g), to_mpfr(d)
        dp = d if parity > 0 else -d
        rel = gmpy2.mpfr(rel)
        inv2g = 1 / (2 * g)
        d2 = d * d
        coupled = d != 0
        k_prev, k_cur = gmpy2.mpfr(0), gmpy2.mpfr(1)
        gpow = gmpy2.mpfr(1)
        total = gmpy2.mpfr(0)
        scale = gmpy2.mpfr(0)
        small = 0
        floor_n = float(x) + 2
        for n in range(MAX_G_TERMS):
            gap = xr - n
            term = k_cur * gpow * (1 - dp / gap) if coupled else k_cur * gpow
            total += term
            scale += abs(term)
            if abs(term) <= rel * scale:
                small += 1
                if small >= SMALL_RUN and n > floor_n:
                    return from_mpfr(total, mp)
            else:
                small = 0
            f = 2 * g + (n - xr + d2 / gap) * inv2g if coupled else 2 * g + (n - xr) * inv2g
            k_prev, k_cur = k_cur, (f * k_cur - k_prev) / (n + 1)
            gpow *= g
    raise NonConvergence(f"G-function did not converge within {MAX_G_TERMS} terms at x={x}")


def _scan_tol(ctx: PrecisionContext) -> float:
    return max(1e-20, 16 * ctx.eps)


def g_function_float(xs, g: float, dp: float, *, max_terms: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    """Double-precision G on an array of points; returns (value, sum of |terms|).

    ``dp`` is the parity-signed delta. The ratio value/scale tells how much of the
    result survived cancellation.
    """
    x = np.atleast_1d(np.asarray(xs, dtype=float))
    d2 = dp * dp
    inv2g = 1.0 / (2.0 * g)
    k_prev = np.zeros_like(x)
    k_cur = np.ones_like(x)
    gpow = 1.0
    total = np.zeros_like(x)
    scale = np.zeros_like(x)
    small = 0
    floor_n = float(np.max(x)) + 2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for n in range(max_terms):
            gap = x - n
            weight = 1.0 - dp / gap if dp != 0 else 1.0
            term = k_cur * gpow * weight
            total += term
            scale += np.abs(term)
            if np.all(np.abs(term) <= 1e-18 * scale):
                small += 1
                if small >= SMALL_RUN and n > floor_n:
                    break
            else:
                small = 0
            pole_term = d2 / gap if dp != 0 else 0.0
            f = 2.0 * g + (n - x + pole_term) * inv2g
            k_prev, k_cur = k_cur, (f * k_cur - k_prev) / (n + 1)
            gpow *= g
    return total, scale


FLOAT_SCAN_LIMIT = 40.0  # double-precision G is trustworthy below this x
FLOAT_RELIABLE = 1e-10  # |G|/sum|terms| below this is re-evaluated in mp


class _HybridSign:
    """Sign evaluator: cached double-precision grid values with mp fallback."""

    def __init__(self, params, parity, ctx, tol):
        self.params, self.parity, self.ctx, self.tol = params, parity, ctx, tol
        self.g = params.g_norm
        self.dp = params.delta_norm if parity > 0 else -params.delta_norm
        self.cache: dict[float, float] = {}

    def preload(self, xs) -> None:
        xs = [x for x in xs if x < FLOAT_SCAN_LIMIT]
        if not xs:
            return
        val, scale = g_function_float(xs, self.g, self.dp)
        for x, v, sc in zip(xs, val, scale):
            if np.isfinite(v) and np.isfinite(sc) and abs(v) > FLOAT_RELIABLE * sc:
                self.cache[x] = float(v)

    def __call__(self, x: float):
        if x in self.cache:
            return self.cache[x]
        return g_function(x, self.params, self.parity, self.ctx, tol=self.tol)


def _scan_grid(lo: float, hi: float, poles, grid_per_unit: int, flank: float) -> list[float]:
    edges = [lo, *[p for p in poles if lo < p < hi], hi]
    pts: list[float] = []
    for left, right in zip(edges[:-1], edges[1:]):
        for mult in (1, 4):
            n = max(2, math.ceil((right - left) * grid_per_unit)) * mult
            pts.extend(left + (right - left) * i / n for i in range(1, n))
        pts.extend((left + flank, right - flank, left, right))
    return pts


def _tight_bracket(br: Bracket, fine, ctx: PrecisionContext, params, parity) -> Bracket:
    """Shrink a grid bracket around a double-precision root estimate, verified in mp."""
    if br.hi > FLOAT_SCAN_LIMIT:
        return br
    dp = params.delta_norm if parity > 0 else -params.delta_norm

    def f64(v: float) -> float:
        return float(g_function_float([v], params.g_norm, dp)[0][0])

    try:
        guess = brentq(f64, br.lo, br.hi, xtol=1e-15, rtol=1e-15)
    except (ValueError, RuntimeError):
        return br
    mp = ctx.mp
    h = 1e-10 * max(1.0, abs(guess))
    while h < (br.hi - br.lo):
        lo, hi = max(guess - h, br.lo), min(guess + h, br.hi)
        s_lo, s_hi = mp.sign(fine(lo)), mp.sign(fine(hi))
        if s_lo == br.f_lo_sign and s_hi == br.f_hi_sign:
            return Bracket(lo, hi, br.f_lo_sign, br.f_hi_sign)
        h *= 100
    return br


def juddian_measure(n: int, params: ModelParams, ctx: PrecisionContext = DEFAULT_CONTEXT) -> float:
    """|n K_n(n)| relative to the magnitudes of the terms it is built from; 0 on the Juddian condition."""
    if n <= 0:
        return 1.0
    mp = ctx.mp
    g, d = params.mp_couplings(ctx)
    x = mp.mpf(n)
    K = _k_values(x, n, g, d, mp)
    m = n - 1
    f_abs = 2 * g + (abs(m - x) + (d * d / abs(x - m) if d != 0 else 0)) / (2 * g)
    prev2 = K[n - 2] if n >= 2 else mp.mpf(0)
    scale = f_abs * abs(K[m]) + abs(prev2)
    return float(abs(n * K[n]) / scale) if scale else 0.0


def _juddian(x, params: ModelParams, ctx: PrecisionContext) -> tuple[bool, bool]:
    n = int(round(float(x)))
    if n < 0 or abs(float(x) - n) >= JUDDIAN_DISTANCE:
        return False, False
    collision = abs(float(x) - n) < COLLISION_DISTANCE
    return juddian_measure(n, params, ctx) < JUDDIAN_K_TOL, collision


def _make_point(parity, index, root, params, ctx) -> SpectralPoint:
    g, _ = params.mp_couplings(ctx)
    flag, collision = _juddian(root.root, params, ctx)
    return SpectralPoint(
        parity=Parity(parity),
        index=index,
        x=root.root,
        energy=root.root - g * g,
        residual=float(root.residual),
        delta_achieved=float(root.width),
        juddian_flag=flag or collision,
        pole_collision=collision,
        ctx=ctx,
    )


@lru_cache(maxsize=256)
def _scan_cached(params: ModelParams, parity: Parity, x_max: float, ctx: PrecisionContext,
                 grid_per_unit: int) -> SpectrumScan:
    mp = ctx.mp
    g, d = params.mp_couplings(ctx)
    if d == 0:
        pts = tuple(
            SpectralPoint(Parity(parity), n, mp.mpf(n), mp.mpf(n) - g * g, 0.0, 0.0, ctx=ctx)
            for n in range(math.ceil(x_max))
            if n < x_max
        )
        return SpectrumScan(pts)

    scan_tol = _scan_tol(ctx)
    warnings: list[str] = []
    coarse = _HybridSign(params, parity, ctx, scan_tol)

    def fine(x):
        return g_function(x, params, parity, ctx)

    x_start = -2 * abs(params.delta_norm) - 1
    poles = [float(n) for n in range(0, math.ceil(x_max) + 1)]
    coarse.preload(_scan_grid(x_start, float(x_max), poles, grid_per_unit, SCAN_FLANK))
    brackets = bracket_roots(coarse, (x_start, float(x_max)), poles, grid_per_unit,
                             flank=SCAN_FLANK, warnings=warnings)
    points: list[SpectralPoint] = []
    for br in brackets:
        try:
            root = refine_root(fine, _tight_bracket(br, fine, ctx, params, parity), ctx)
        except RabiError as exc:
            msg = f"refinement failed on [{br.lo}, {br.hi}]: {exc}"
            log.warning(msg)
            warnings.append(msg)
            continue
        if root.root < x_max:
            points.append(_make_point(parity, len(points), root, params, ctx))
    points.extend(_exceptional_points(points, params, parity, x_max, ctx))
    points.sort(key=lambda p: p.x)
    points = [replace(p, index=i) for i, p in enumerate(points)]
    return SpectrumScan(tuple(points), tuple(warnings))


def _exceptional_points(found, params: ModelParams, parity: Parity, x_max: float,
                        ctx: PrecisionContext) -> list[SpectralPoint]:
    """Levels sitting exactly on a pole x = n (K_n(n) = 0): G stays finite there, so the
    scan cannot see them. They are reported flagged, without an eigenstate."""
    mp = ctx.mp
    g, _ = params.mp_couplings(ctx)
    out = []
    for n in range(1, math.ceil(x_max)):
        if n >= x_max:
            continue
        measure = juddian_measure(n, params, ctx)
        if measure >= JUDDIAN_K_TOL:
            continue
        if any(abs(float(p.x) - n) < JUDDIAN_DISTANCE for p in found):
            continue
        x = mp.mpf(n)
        out.append(SpectralPoint(Parity(parity), 0, x, x - g * g, measure, 0.0,
                                 juddian_flag=True, pole_collision=True, ctx=ctx))
    return out


def scan_spectrum(
    params: ModelParams,
    parity: Parity,
    x_max: float,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
    grid_per_unit: int = 64,
) -> SpectrumScan:
    """Like :func:`find_spectrum` but also returns the warnings recorded during the scan."""
    if not x_max > 0:
        raise ValueError("x_max must be positive")
    return _scan_cached(params, Parity(parity), float(x_max), ctx, int(grid_per_unit))


def find_spectrum(
    params: ModelParams,
    parity: Parity,
    x_max: float,
    ctx: PrecisionContext = DEFAULT_CONTEXT,
    grid_per_unit: int = 64,
) -> list[SpectralPoint]:
    """All regular roots x < x_max of G_parity, ordered by x and refined to ``ctx.root_tol``."""
    return list(scan_spectrum(params, parity, x_max, ctx, grid_per_unit).points)


def refine_point(point: SpectralPoint, params: ModelParams, ctx: PrecisionContext) -> SpectralPoint:
    """Re-refine ``point`` under a (usually tighter) precision context."""
    mp = ctx.mp
    x = mp.mpf(point.x)
    if params.delta == 0:
        g, _ = params.mp_couplings(ctx)
        return SpectralPoint(point.parity, point.index, x, x - g * g, 0.0, 0.0, ctx=ctx)

    def fine(v):
        return g_function(v, params, point.parity, ctx)

    n_lo = math.floor(float(x))
    lo_limit = mp.mpf(n_lo) + 1e-13 if n_lo >= 0 else mp.mpf(-math.inf)
    hi_limit = mp.mpf(n_lo + 1) - 1e-13 if n_lo + 1 >= 0 else mp.mpf(math.inf)
    r = mp.mpf(max(point.delta_achieved, point.ctx.root_tol, 1e-300)) * 4
    while r < 1e-2:
        lo, hi = max(x - r, lo_limit), min(x + r, hi_limit)
        s_lo, s_hi = mp.sign(fine(lo)), mp.sign(fine(hi))
        if s_lo * s_hi < 0:
            root = refine_root(fine, Bracket(lo, hi, int(s_lo), int(s_hi)), ctx)
            return _make_point(point.parity, point.index, root, params, ctx)
        r *= 16
    raise NonConvergence(f"could not re-bracket root near x={mp.nstr(x, 20)}")


def decoupled_energy(n: int, params: ModelParams) -> float:
    """Closed-form decoupled level n - g**2 (normalized units)."""
    return n - params.g_norm**2
