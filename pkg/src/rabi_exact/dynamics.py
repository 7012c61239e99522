"""Spin dynamics from parity-sector spectral decompositions.

Each initial state splits into one component per parity sector, written as a real
combination of coherent states. Its expansion over that sector's eigenstates gives
real amplitudes c_m; time enters only through the phases e^{-i E_m t}, so every sample
is evaluated independently in closed form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Any, Sequence

import numpy as np

from .eigenbasis import EigenstateRep, build_eigenstate, coherent_overlap, cross_parity_overlap, \
    reflection_matrix_element
from .errors import EscalationExhausted, InsufficientWeight
from .numerics import DEFAULT_CONTEXT, PrecisionContext
from .oracle import CoherentCombination
from .spectrum import ModelParams, Parity, SpectralPoint, find_spectrum

log = logging.getLogger(__name__)

T0 = 2 * math.pi
WEIGHT_FLOOR = 1e-14
WEIGHT_TARGET = 1 - 1e-8
IMAG_TOL = 1e-12


class InitialKind(str, Enum):
    SIGMA_Z_PRODUCT = "sz"
    SIGMA_X_PRODUCT = "sx"
    CAT = "cat"


@dataclass(frozen=True)
class InitialState:
    """Coherent field amplitude ``alpha`` times a spin state selected by ``kind``."""

    kind: InitialKind
    alpha: float

    def __post_init__(self) -> None:
        if isinstance(self.alpha, complex):
            raise TypeError("complex coherent amplitudes are not supported")
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        object.__setattr__(self, "kind", InitialKind(self.kind))

    @classmethod
    def cat(cls, params: ModelParams) -> InitialState:
        return cls(InitialKind.CAT, params.g_norm)

    def check(self, params: ModelParams) -> None:
        if self.kind is InitialKind.CAT and not math.isclose(self.alpha, params.g_norm, rel_tol=1e-12):
            raise ValueError(f"cat combination requires alpha = g/omega = {params.g_norm}, got {self.alpha}")

    @property
    def observable(self) -> str:
        return "sz" if self.kind is InitialKind.SIGMA_Z_PRODUCT else "sx"

    def components(self) -> dict[Parity, CoherentCombination | None]:
        """Sector components; ``None`` marks an identically zero component."""
        a = float(self.alpha)
        if self.kind is InitialKind.SIGMA_Z_PRODUCT:
            odd = CoherentCombination.odd(a) if a != 0 else None
            return {Parity.PLUS: CoherentCombination.even(a), Parity.MINUS: odd}
        comp = CoherentCombination.coherent(a)
        return {Parity.PLUS: comp, Parity.MINUS: comp}


def combination_norm_sq(comb: CoherentCombination) -> float:
    """<phi|phi> for a real combination of coherent states."""
    return sum(
        wa * wb * math.exp(-((a - b) ** 2) / 2) for wa, a in comb.terms for wb, b in comb.terms
    )


@dataclass(frozen=True)
class SectorEntry:
    state: EigenstateRep
    energy: float
    coeff: Any
    norm_sq: Any
    weight: float


@dataclass(frozen=True)
class SectorDecomposition:
    parity: Parity
    entries: tuple[SectorEntry, ...]
    captured_weight: float
    component_norm_sq: float

    @property
    def energies(self) -> np.ndarray:
        return np.array([e.energy for e in self.entries])

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([float(e.coeff) for e in self.entries])


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    values: np.ndarray
    observable: str
    captured_weight_plus: float
    captured_weight_minus: float
    value_at_zero: float

    @property
    def t_over_T0(self) -> np.ndarray:
        return self.times / T0

    @property
    def min_captured_weight(self) -> float:
        return min(self.captured_weight_plus, self.captured_weight_minus)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@lru_cache(maxsize=64)
def sector_eigenstates(params: ModelParams, parity: Parity, x_max: float,
                       ctx: PrecisionContext = DEFAULT_CONTEXT) -> tuple[EigenstateRep, ...]:
    """Eigenstates of one sector below x_max; points sitting on a pole are skipped."""
    out = []
    for point in find_spectrum(params, parity, x_max, ctx):
        if point.pole_collision:
            log.warning("skipping exceptional point x=%s in sector %s", point.x, parity.symbol)
            continue
        state = build_eigenstate(point, params)
        if state.trunc.kink_hit:
            raise EscalationExhausted(
                f"eigenstate x={float(point.x):.6g} still kinked after escalation "
                f"(eps_rel {state.trunc.eps_rel_achieved:.3g})"
            )
        out.append(state)
    return tuple(out)


def _overlap(state: EigenstateRep, comb: CoherentCombination):
    return sum(weight * coherent_overlap(state, a)[0] for weight, a in comb.terms)


def decompose_sector(comb: CoherentCombination | None, params: ModelParams, parity: Parity, x_max: float,
                     ctx: PrecisionContext = DEFAULT_CONTEXT, *, require: bool = True) -> SectorDecomposition:
    if comb is None:
        return SectorDecomposition(Parity(parity), (), 1.0, 0.0)
    norm_sq = combination_norm_sq(comb)
    entries = []
    for state in sector_eigenstates(params, Parity(parity), float(x_max), ctx):
        ov = _overlap(state, comb)
        weight = float(ov * ov / state.norm_sq) / norm_sq
        entries.append(SectorEntry(state, float(state.energy), ov / state.norm_sq, state.norm_sq, weight))
    kept = tuple(e for e in entries if e.weight > WEIGHT_FLOOR)
    captured = math.fsum(e.weight for e in kept)
    if require and captured < WEIGHT_TARGET:
        raise InsufficientWeight(captured, int(parity), float(x_max))
    return SectorDecomposition(Parity(parity), kept, captured, norm_sq)


def default_x_max(alpha: float, params: ModelParams) -> float:
    """Enumeration bound for weight 1 - 1e-8: alpha^2 + g^2 + 20, widened when the
    coherent state sits far from the displaced-oscillator centres."""
    reach = abs(alpha) + params.g_norm
    return max(alpha * alpha + params.g_norm**2 + 20, reach * reach + 7 * reach + 12)


def decompose(state: InitialState, params: ModelParams, x_max: float | None = None,
              ctx: PrecisionContext = DEFAULT_CONTEXT, *, require: bool = True
              ) -> tuple[SectorDecomposition, SectorDecomposition]:
    """Expand both sector components over the enumerated eigenstates."""
    state.check(params)
    x_max = default_x_max(state.alpha, params) if x_max is None else x_max
    comps = state.components()
    return (
        decompose_sector(comps[Parity.PLUS], params, Parity.PLUS, x_max, ctx, require=require),
        decompose_sector(comps[Parity.MINUS], params, Parity.MINUS, x_max, ctx, require=require),
    )


def reflection_block(decomp: SectorDecomposition) -> np.ndarray:
    """Symmetric matrix of <psi_m|T|psi_n> over the retained entries."""
    states = [e.state for e in decomp.entries]
    n = len(states)
    block = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            block[i, j] = block[j, i] = float(reflection_matrix_element(states[i], states[j]))
    return block


def cross_block(plus: SectorDecomposition, minus: SectorDecomposition) -> np.ndarray:
    """<psi_m^+|psi_n^-> over the retained entries of both sectors."""
    block = np.zeros((len(plus.entries), len(minus.entries)))
    for i, a in enumerate(plus.entries):
        for j, b in enumerate(minus.entries):
            block[i, j] = float(cross_parity_overlap(a.state, b.state))
    return block


def _amplitudes(decomp: SectorDecomposition, times: np.ndarray) -> np.ndarray:
    return decomp.coeffs[:, None] * np.exp(-1j * np.outer(decomp.energies, times))


def _real(values: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(values.real), initial=0.0)))
    residue = float(np.max(np.abs(values.imag), initial=0.0))
    if residue > IMAG_TOL * scale:
        raise ArithmeticError(f"imaginary residue {residue:.3g} in a real observable")
    return values.real


def _sector_expectation(decomp: SectorDecomposition, block: np.ndarray, times: np.ndarray) -> np.ndarray:
    if not decomp.entries:
        return np.zeros(times.size)
    amp = _amplitudes(decomp, times)
    return _real(np.einsum("mt,mn,nt->t", amp.conj(), block, amp))


def sigma_z_t(state: InitialState, decomps: tuple[SectorDecomposition, SectorDecomposition],
              blocks: tuple[np.ndarray, np.ndarray], times: Sequence[float],
              ctx: PrecisionContext = DEFAULT_CONTEXT) -> TimeSeries:
    """<sigma_z(t)> = Q_+(t) - Q_-(t), each Q a reflection expectation within one sector."""
    if state.kind is not InitialKind.SIGMA_Z_PRODUCT:
        raise ValueError("sigma_z dynamics needs a sigma_z product state")
    t = np.asarray(times, dtype=float)
    plus, minus = decomps

    def at(tt):
        return _sector_expectation(plus, blocks[0], tt) - _sector_expectation(minus, blocks[1], tt)

    return TimeSeries(t, at(t), "sz", plus.captured_weight, minus.captured_weight, float(at(np.zeros(1))[0]))


def sigma_x_t(state: InitialState, decomps: tuple[SectorDecomposition, SectorDecomposition],
              cross: np.ndarray, times: Sequence[float], ctx: PrecisionContext = DEFAULT_CONTEXT) -> TimeSeries:
    """<sigma_x(t)> = Re sum c_m^+ c_n^- e^{i(E_m^+ - E_n^-)t} <psi_m^+|psi_n^->."""
    if state.kind is InitialKind.SIGMA_Z_PRODUCT:
        raise ValueError("sigma_x dynamics needs a sigma_x product or cat state")
    t = np.asarray(times, dtype=float)
    plus, minus = decomps

    def at(tt):
        if not plus.entries or not minus.entries:
            return np.zeros(tt.size)
        return np.einsum("mt,mn,nt->t", _amplitudes(plus, tt).conj(), cross, _amplitudes(minus, tt)).real

    return TimeSeries(t, at(t), "sx", plus.captured_weight, minus.captured_weight, float(at(np.zeros(1))[0]))


def evolve(params: ModelParams, state: InitialState, times: Sequence[float], x_max: float | None = None,
           ctx: PrecisionContext = DEFAULT_CONTEXT) -> TimeSeries:
    """Decompose, build the needed matrix elements and sample the matching observable."""
    decomps = decompose(state, params, x_max, ctx)
    if state.kind is InitialKind.SIGMA_Z_PRODUCT:
        blocks = (reflection_block(decomps[0]), reflection_block(decomps[1]))
        return sigma_z_t(state, decomps, blocks, times, ctx)
    return sigma_x_t(state, decomps, cross_block(*decomps), times, ctx)


def gap_report(spectra: tuple[Sequence[SpectralPoint], Sequence[SpectralPoint]], n_max: int
               ) -> list[tuple[int, float, float, float]]:
    """(n, E_n^+ - E_n^-, x_n^+ - n, x_n^- - n) for n up to n_max where both levels exist."""
    plus, minus = spectra
    out = []
    for n in range(min(n_max + 1, len(plus), len(minus))):
        xp, xm = plus[n].x, minus[n].x
        out.append((n, float(plus[n].energy - minus[n].energy), float(xp - n), float(xm - n)))
    return out


def slow_period(decomps: tuple[SectorDecomposition, SectorDecomposition], cross: np.ndarray,
                rel_weight: float = 1e-3) -> float:
    """2 pi / min |E_m^+ - E_n^-| over pairs carrying at least ``rel_weight`` of the largest term."""
    plus, minus = decomps
    if not plus.entries or not minus.entries:
        return math.inf
    amp = np.abs(np.outer(plus.coeffs, minus.coeffs) * cross)
    gaps = np.abs(plus.energies[:, None] - minus.energies[None, :])
    mask = amp >= rel_weight * amp.max()
    smallest = float(gaps[mask].min())
    return math.inf if smallest == 0 else 2 * math.pi / smallest
