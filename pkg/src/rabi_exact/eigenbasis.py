"""Eigenstates in the two displaced-oscillator bases, with controlled truncation.

An eigenstate at spectral parameter x has two equivalent expansions:

* over |n; -g>:  alpha_n = e^{g^2/2} sqrt(n!) K_n (-1)^n
* over |n; +g>:  beta_n  = e^{g^2/2} sqrt(n!) K_n d_p / (x - n)

where d_p is the parity-signed delta. Every norm, overlap or matrix element is a
single sum over these coefficients, truncated by the relative-error rule and
guarded against the kink where a finite-accuracy root makes the coefficients grow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Literal, Sequence

import numpy as np

from .errors import EscalationExhausted, PoleProximity
from .numerics import PrecisionContext
from .spectrum import (
    ModelParams,
    Parity,
    SpectralPoint,
    bulk_index,
    kink_start,
    refine_point,
)

Rep = Literal["minus", "plus"]

NEGLIGIBLE = 1e-45  # coefficient magnitude (relative to the peak) below which storage stops
MAX_TERMS = 20_000


@dataclass(frozen=True)
class ShiftedBasisLabel:
    """Displacement of the oscillator basis |n; shift>; shift is -g or +g."""

    shift: float

    @classmethod
    def minus(cls, params: ModelParams) -> ShiftedBasisLabel:
        return cls(-params.g_norm)

    @classmethod
    def plus(cls, params: ModelParams) -> ShiftedBasisLabel:
        return cls(params.g_norm)

    @property
    def rep(self) -> Rep:
        return "minus" if self.shift < 0 else "plus"


@dataclass(frozen=True)
class TruncationReport:
    n_used: int
    eps_rel_achieved: float
    kink_hit: bool
    escalations: int = 0

    def with_escalations(self, count: int) -> TruncationReport:
        return TruncationReport(self.n_used, self.eps_rel_achieved, self.kink_hit, count)


@dataclass(frozen=True)
class CoherentExpansion:
    alpha: float
    basis: ShiftedBasisLabel
    coeffs: tuple


@dataclass(frozen=True)
class EigenstateRep:
    point: SpectralPoint
    params: ModelParams
    kseq_coeffs: tuple
    kink_index: int | None
    coeff_minus: tuple
    coeff_plus: tuple
    norm_sq: Any
    trunc: TruncationReport
    norm_sq_plus: Any
    trunc_plus: TruncationReport
    n_bulk: int
    ctx: PrecisionContext = field(compare=False)

    @property
    def parity(self) -> Parity:
        return self.point.parity

    @property
    def energy(self):
        return self.point.energy

    @property
    def limit(self) -> int:
        """Number of coefficients usable in sums (stops before the kink)."""
        return self.kink_index if self.kink_index is not None else len(self.coeff_minus)

    def coeffs(self, rep: Rep) -> tuple:
        return self.coeff_minus if rep == "minus" else self.coeff_plus

    def escalated(self) -> EigenstateRep:
        """The same eigenstate rebuilt one rung up the precision ladder (built once, then reused)."""
        return self._escalated

    @cached_property
    def _escalated(self) -> EigenstateRep:
        ctx = self.ctx.escalated()
        return _build(refine_point(self.point, self.params, ctx), self.params, ctx)


def controlled_sum(terms: Sequence, tol: float, start: int, limit: int, mp) -> tuple[Any, TruncationReport]:
    """Partial sum stopped at the first N >= start with eps_rel(N) and eps_rel(N-1) <= tol.

    eps_rel(N) = |t_N| / sum_{n<N} |t_n|. If ``limit`` is reached first, the best
    partial sum seen is returned and ``kink_hit`` is set when the limit came from a kink
    (``limit < len(terms)``).
    """
    available = len(terms)
    limit = min(limit, available)
    # the stop index only needs magnitudes, so it is located in double precision
    mags = np.array([float(abs(t)) for t in terms[:limit]])
    if not np.all(np.isfinite(mags)):
        raise OverflowError("series terms exceed double range")
    before = np.concatenate(([0.0], np.cumsum(mags)[:-1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        eps = np.where(before > 0, mags / before, np.inf)
    pair = np.maximum(eps, np.concatenate(([np.inf], eps[:-1])))
    ok = np.flatnonzero((pair <= tol) & (np.arange(limit) >= start))
    if ok.size:
        n = int(ok[0])
        return mp.fsum(terms[: n + 1]), TruncationReport(n, float(pair[n]), False)
    kinked = limit < available
    if not kinked and (limit == 0 or mags.sum() == 0):
        return mp.fsum(terms[:limit]), TruncationReport(max(limit - 1, 0), 0.0, False)
    n_best = int(np.argmin(pair[1:])) + 1 if limit > 1 else 0
    eps_best = float(pair[n_best]) if limit > 1 else math.inf
    if not kinked and mags[limit - 1] == 0.0:
        return mp.fsum(terms[:limit]), TruncationReport(limit - 1, eps_best, False)
    return mp.fsum(terms[: n_best + 1]) if limit > 1 else mp.mpf(0), TruncationReport(n_best, eps_best, kinked)


def _k_stream(x, g, d, mp, n_bulk: int):
    """K_n and sqrt(n!)|K_n| until decayed below NEGLIGIBLE or a kink is confirmed."""
    inv2g = 1 / (2 * g)
    d2 = d * d
    K = [mp.mpf(1)]
    mags = [mp.mpf(1)]
    sqrt_fact = mp.mpf(1)
    peak = mp.mpf(1)
    prev2 = mp.mpf(0)
    for n in range(1, MAX_TERMS):
        m = n - 1
        pole_term = d2 / (x - m) if d != 0 else 0
        f = 2 * g + (m - x + pole_term) * inv2g
        K.append((f * K[-1] - prev2) / n)
        prev2 = K[-2]
        sqrt_fact *= mp.sqrt(n)
        mags.append(abs(K[-1]) * sqrt_fact)
        peak = max(peak, mags[-1])
        if n > n_bulk:
            kink = kink_start(mags, n_bulk)
            if kink is not None and n >= kink + 4:
                return K, kink
            if mags[-1] < NEGLIGIBLE * peak and mags[-2] < NEGLIGIBLE * peak:
                return K, None
    return K, kink_start(mags, n_bulk)


def _build(point: SpectralPoint, params: ModelParams, ctx: PrecisionContext) -> EigenstateRep:
    if point.pole_collision:
        raise PoleProximity(int(round(float(point.x))), point.x, 1e-12)
    mp = ctx.mp
    g, d = params.mp_couplings(ctx)
    dp = d if point.parity > 0 else -d
    x = mp.mpf(point.x)
    n_bulk = bulk_index(x, g)
    K, kink = _k_stream(x, g, d, mp, n_bulk)
    pref = mp.exp(g * g / 2)
    minus, plus = [], []
    sqrt_fact = mp.mpf(1)
    for n, k in enumerate(K):
        if n:
            sqrt_fact *= mp.sqrt(n)
        base = pref * sqrt_fact * k
        minus.append(-base if n % 2 else base)
        plus.append(base * dp / (x - n) if d != 0 else mp.mpf(0))
    if d == 0:
        m = int(mp.nint(x))
        plus[m] = mp.exp(2 * g * g) * pref * mp.sqrt(mp.factorial(m)) / (2 * g) ** m
    limit = kink if kink is not None else len(K)
    sq_minus = [c * c for c in minus]
    sq_plus = [c * c for c in plus]
    nm, rep_m = controlled_sum(sq_minus, ctx.series_tol, n_bulk, limit, mp)
    if d == 0:
        npl, rep_p = plus[m] ** 2, TruncationReport(m, 0.0, False)
    else:
        npl, rep_p = controlled_sum(sq_plus, ctx.series_tol, n_bulk, limit, mp)
    return EigenstateRep(
        point=point,
        params=params,
        kseq_coeffs=tuple(K),
        kink_index=kink,
        coeff_minus=tuple(minus),
        coeff_plus=tuple(plus),
        norm_sq=nm,
        trunc=rep_m,
        norm_sq_plus=npl,
        trunc_plus=rep_p,
        n_bulk=n_bulk,
        ctx=ctx,
    )


def build_eigenstate(point: SpectralPoint, params: ModelParams, max_escalations: int = 3) -> EigenstateRep:
    """Eigenstate data for a refined spectral point, escalating precision on a kink.

    If the kink persists after ``max_escalations`` raises the state is returned with
    ``trunc.kink_hit`` set; callers decide whether that is fatal.
    """
    state = _build(point, params, point.ctx)
    raises = 0
    while (state.trunc.kink_hit or state.trunc_plus.kink_hit) and raises < max_escalations:
        state = state.escalated()
        raises += 1
    return _with_escalations(state, raises)


def _with_escalations(state: EigenstateRep, raises: int) -> EigenstateRep:
    if not raises:
        return state
    return replace(
        state,
        trunc=state.trunc.with_escalations(raises),
        trunc_plus=state.trunc_plus.with_escalations(raises),
    )


def norm_squared(
    state: EigenstateRep,
    rep: Rep = "minus",
    ctx: PrecisionContext | None = None,
    *,
    max_escalations: int = 3,
) -> tuple[Any, TruncationReport]:
    """Squared norm from one representation, escalating precision while a kink blocks it.

    ``ctx`` only overrides ``series_tol`` for the stop rule.
    """
    tol = (ctx or state.ctx).series_tol
    raises = 0
    while True:
        mp = state.ctx.mp
        if state.params.delta == 0 and rep == "plus":
            m = int(mp.nint(state.point.x))
            return state.coeff_plus[m] ** 2, TruncationReport(m, 0.0, False, raises)
        terms = [c * c for c in state.coeffs(rep)]
        value, report = controlled_sum(terms, tol, state.n_bulk, state.limit, mp)
        if not report.kink_hit or raises >= max_escalations:
            return value, report.with_escalations(raises)
        state = state.escalated()
        raises += 1


def coherent_in_shifted_basis(alpha: float, basis: ShiftedBasisLabel, N: int,
                              ctx: PrecisionContext | None = None) -> CoherentExpansion:
    """c_n = e^{-(alpha+s)^2/2} (alpha+s)^n / sqrt(n!) for n = 0..N-1 (s = basis shift)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if isinstance(alpha, complex):
        raise TypeError("complex coherent amplitudes are not supported")
    ctx = ctx or PrecisionContext()
    mp = ctx.mp
    a = mp.mpf(repr(float(alpha))) + mp.mpf(repr(float(basis.shift)))
    c = mp.exp(-a * a / 2)
    out = [c]
    for n in range(1, N):
        c = c * a / mp.sqrt(n)
        out.append(c)
    return CoherentExpansion(float(alpha), basis, tuple(out))


def _coherent_bulk(alpha: float, shift: float) -> int:
    return math.ceil((abs(alpha + shift) + 1) ** 2) + 2


def overlap_with_initial(
    state: EigenstateRep,
    expansion: CoherentExpansion,
    ctx: PrecisionContext | None = None,
    *,
    max_escalations: int = 3,
) -> tuple[Any, TruncationReport]:
    """<psi|alpha> using the representation that matches the expansion's basis."""
    rep = expansion.basis.rep
    tol = (ctx or state.ctx).series_tol
    raises = 0
    while True:
        mp = state.ctx.mp
        coeffs = state.coeffs(rep)
        shift = state.params.g_norm if rep == "plus" else -state.params.g_norm
        c = coherent_in_shifted_basis(expansion.alpha, ShiftedBasisLabel(shift), len(coeffs), state.ctx).coeffs
        if state.params.delta == 0 and rep == "plus":
            m = int(mp.nint(state.point.x))
            return coeffs[m] * c[m], TruncationReport(m, 0.0, False, raises)
        terms = [a * b for a, b in zip(coeffs, c)]
        start = max(state.n_bulk, _coherent_bulk(expansion.alpha, shift))
        value, report = controlled_sum(terms, tol, start, state.limit, mp)
        if not report.kink_hit or raises >= max_escalations:
            return value, report.with_escalations(raises)
        state = state.escalated()
        raises += 1


def best_rep(alpha: float) -> Rep:
    """Basis whose centre is nearer to the coherent amplitude (smaller |alpha + shift|)."""
    return "minus" if alpha >= 0 else "plus"


def coherent_overlap(state: EigenstateRep, alpha: float, rep: Rep | None = None) -> tuple[Any, TruncationReport]:
    """Overlap with |alpha>, in ``rep`` or in the better-conditioned representation."""
    rep = rep or best_rep(alpha)
    if state.params.delta == 0:
        rep = "plus"
    basis = ShiftedBasisLabel(state.params.g_norm if rep == "plus" else -state.params.g_norm)
    return overlap_with_initial(state, CoherentExpansion(alpha, basis, ()))


def _pair_sum(a: EigenstateRep, b: EigenstateRep, weights_a: Sequence, weights_b: Sequence,
              sign_alternates: bool) -> tuple[Any, TruncationReport]:
    ctx = a.ctx if a.ctx.mantissa_bits >= b.ctx.mantissa_bits else b.ctx
    mp = ctx.mp
    n = min(len(weights_a), len(weights_b))
    limit = min(a.limit, b.limit)
    # one extra term lets controlled_sum tell a kink limit from running out of coefficients
    count = min(n, limit + 1)
    terms = [weights_a[k] * weights_b[k] * (-1 if sign_alternates and k % 2 else 1) for k in range(count)]
    if count < n:
        terms.append(mp.mpf(0))
    return controlled_sum(terms, min(a.ctx.series_tol, b.ctx.series_tol), max(a.n_bulk, b.n_bulk), limit, mp)


def _with_escalation(fn, a: EigenstateRep, b: EigenstateRep, max_escalations: int):
    for _ in range(max_escalations + 1):
        value, report = fn(a, b)
        if not report.kink_hit:
            return value
        if a.kink_index is not None:
            a = a.escalated()
        if b.kink_index is not None:
            b = b.escalated()
    raise EscalationExhausted(
        f"matrix element between x={float(a.point.x):.6g} and x={float(b.point.x):.6g} "
        f"still truncated by a kink (eps_rel {report.eps_rel_achieved:.3g})"
    )


def _plus_coeffs(state: EigenstateRep) -> tuple:
    return state.coeff_plus


def reflection_matrix_element(a: EigenstateRep, b: EigenstateRep, ctx: PrecisionContext | None = None,
                              *, max_escalations: int = 3):
    """<psi_a|T|psi_b> = sum_k beta^a_k alpha^b_k (-1)^k (same parity sector)."""
    if a.parity != b.parity:
        raise ValueError("reflection matrix elements need both states in the same sector")

    def run(sa, sb):
        return _pair_sum(sa, sb, sa.coeff_plus, sb.coeff_minus, True)

    return _with_escalation(run, a, b, max_escalations)


def cross_parity_overlap(a: EigenstateRep, b: EigenstateRep, ctx: PrecisionContext | None = None,
                         rep: Rep = "minus", *, max_escalations: int = 3):
    """<psi_a^+|psi_b^-> summed in either representation."""
    if a.parity == b.parity:
        raise ValueError("cross-parity overlaps need states from different sectors")
    if a.params.delta == 0 and rep == "plus":
        m = int(round(float(a.point.x)))
        same = m == int(round(float(b.point.x)))
        return a.coeff_plus[m] * b.coeff_plus[m] if same else a.ctx.mp.mpf(0)

    def run(sa, sb):
        return _pair_sum(sa, sb, sa.coeffs(rep), sb.coeffs(rep), False)

    return _with_escalation(run, a, b, max_escalations)
