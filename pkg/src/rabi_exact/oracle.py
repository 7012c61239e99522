"""Reference computations that do not rely on the asymptotic series.

Two independent checks live here:

* continuation of the eigenfunction into the left half-plane through the map
  w = (z/g + 1)/(z/g - 3), followed by a polar quadrature over the image disk
  |w - 1/3| <= 2/3; this converges absolutely for any real x.
* dense diagonalization of each parity sector in a truncated Fock basis.

For the quadrature the power series in w is evaluated in its regularized form
phi_j = e^{-g z(w)} chi_j(w); the chi coefficients grow only polynomially, so the
sums stay accurate in double precision all the way out to |z| ~ 10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import NonConverged, PoleProximity, TailBoundExceeded
from .numerics import DEFAULT_CONTEXT, PrecisionContext, quad_nodes_radial
from .spectrum import ModelParams, Parity

QUAD_TOL = 1e-10
SERIES_CAP = 20_000
TAIL_RTOL = 1e-17
CUTOFF_EXPONENT = 50.0  # integrand nodes below e^{-50} of the peak are dropped
X_GUARD = 1e-30


@dataclass(frozen=True)
class MobiusMap:
    """w(z) = (z/g + 1)/(z/g - 3); sends Re z <= 0 onto the disk |w - 1/3| <= 2/3."""

    g: float

    def w(self, z):
        u = z / self.g
        return (u + 1) / (u - 3)

    def z(self, w):
        return self.g * (3 * w + 1) / (w - 1)

    def jacobian(self, w):
        """|dz/dw|^2 = 16 g^2 / |w - 1|^4."""
        return 16 * self.g**2 / np.abs(w - 1) ** 4


@dataclass(frozen=True)
class WSeriesPair:
    """Coefficients of phi_1, phi_2 as power series in w around w = 0."""

    x: Any
    a1: tuple
    a2: tuple

    @property
    def N(self) -> int:
        return len(self.a1) - 1


@dataclass(frozen=True)
class RegularizedSeries:
    """Coefficients of chi_1 (b) and chi_2 (c) with phi_j = e^{-g z(w)} chi_j(w)."""

    x: Any
    g: float
    b: np.ndarray
    c: np.ndarray

    @property
    def N(self) -> int:
        return len(self.b) - 1


@dataclass(frozen=True)
class DiskGrid:
    """Gauss-Legendre in rho (weight rho) times a uniform trapezoid in theta."""

    n_r: int = 128
    n_theta: int = 256

    def __post_init__(self) -> None:
        if self.n_r < 1 or self.n_theta < 1:
            raise ValueError("grid sizes must be positive")

    def doubled(self) -> DiskGrid:
        return DiskGrid(2 * self.n_r, 2 * self.n_theta)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened w nodes and area weights, normalized so sum(weights) = area/pi."""
        return _disk_nodes(self.n_r, self.n_theta)


@lru_cache(maxsize=16)
def _disk_nodes(n_r: int, n_theta: int) -> tuple[np.ndarray, np.ndarray]:
    ctx = PrecisionContext(64, 1e-15, 1e-15)
    pairs = quad_nodes_radial(n_r, ctx)
    rho = np.array([float(r) for r, _ in pairs])
    w_rho = np.array([float(w) for _, w in pairs])
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(rho, theta, indexing="ij")
    w = 1 / 3 + (2 / 3) * R * np.exp(1j * TH)
    area = (2 / 3) ** 2 * R * w_rho[:, None] * (2 * np.pi / n_theta) / np.pi
    return w.ravel(), area.ravel()


def _admissible(x, mp) -> None:
    if abs(x) < X_GUARD:
        raise PoleProximity(0, x, X_GUARD)
    n = int(mp.nint(x))
    if n > 0 and abs(x - n) < 1e-40:
        raise PoleProximity(n, x, 1e-40)


def w_series(x, params: ModelParams, N: int, ctx: PrecisionContext = DEFAULT_CONTEXT,
             parity: Parity = Parity.PLUS) -> WSeriesPair:
    """Four-term matrix recurrence for a_n^(1), a_n^(2) up to order N."""
    mp = ctx.mp
    g, d = params.mp_couplings(ctx)
    d = d if parity > 0 else -d
    x = mp.mpf(x)
    _admissible(x, mp)
    e = mp.exp(g * g)
    g2 = g * g
    xt = 4 * g2 - x
    a2 = [e, 2 * (x - 2 * g2 - d * d / x) * e]
    a1 = [d / x * e]
    zero = mp.mpf(0)
    for n in range(1, N + 1):
        nx = n - x
        A00 = ((4 * g2 - 2 * xt + n) * nx + 2 * d * d) / ((n + 1) * nx)
        A01 = 2 * d / (n + 1) * (1 - (xt + 2 * n - 2) / nx)
        A10 = -d / nx
        A11 = (xt + 2 * n - 2) / nx
        B00 = ((2 * xt - 12 * g2 + n - 1) * nx - 2 * d * d) / ((n + 1) * nx)
        B01 = 2 * d * (n - 2) / ((n + 1) * nx)
        B10 = d / nx
        B11 = (2 - n) / nx
        Cm = mp.mpf(2 - n) / (n + 1)
        a1_prev2 = a1[n - 2] if n >= 2 else zero
        a2_prev2 = a2[n - 2] if n >= 2 else zero
        a2.append(A00 * a2[n] + A01 * a1[n - 1] + B00 * a2[n - 1] + B01 * a1_prev2 + Cm * a2_prev2)
        a1.append(A10 * a2[n] + A11 * a1[n - 1] + B10 * a2[n - 1] + B11 * a1_prev2)
    return WSeriesPair(x=x, a1=tuple(a1[: N + 1]), a2=tuple(a2[: N + 1]))


def eval_continued(series: WSeriesPair, w: complex, *, quad_tol: float = QUAD_TOL,
                   ctx: PrecisionContext = DEFAULT_CONTEXT) -> tuple[Any, Any]:
    """(phi_1, phi_2) at w from the truncated power series, with a tail-bound check."""
    mp = ctx.mp
    w = mp.mpc(w)
    aw = abs(w)
    if aw >= 1:
        raise TailBoundExceeded(f"|w|={float(aw):.3g} outside the unit disk")
    phi1 = mp.polyval(list(reversed(series.a1)), w)
    phi2 = mp.polyval(list(reversed(series.a2)), w)
    N = series.N
    tail = max(abs(series.a1[-1]), abs(series.a2[-1])) * aw**N / (1 - aw)
    if tail > quad_tol * max(abs(phi1), abs(phi2), 1):
        raise TailBoundExceeded(f"tail bound {float(tail):.3g} at N={N}", needed=2 * N)
    return phi1, phi2


def _chi_coefficients(x, g, d, mp, n_terms: int, b=None, c=None) -> tuple[list, list]:
    """b_n, c_n from the three-term recurrence of the regularized series (extends b, c)."""
    g2 = g * g
    b = b if b is not None else [d / x]
    c = c if c is not None else [mp.mpf(1)]
    zero = mp.mpf(0)
    for n in range(len(c) - 1, n_terms - 1):
        c1 = c[n - 1] if n >= 1 else zero
        c2 = c[n - 2] if n >= 2 else zero
        b1 = b[n - 1] if n >= 1 else zero
        nxt = (n * c[n] + (n - 1) * c1 - (n - 2) * c2 - 2 * (4 * g2 + x) * (c1 - c[n])
               - 16 * g2 * c[n] + 2 * d * (b1 - b[n])) / (n + 1)
        c.append(nxt)
        b.append((d * nxt - n * b[n]) / (x - (n + 1)))
    return b, c


def regularized_series(x, params: ModelParams, w_max: float, ctx: PrecisionContext = DEFAULT_CONTEXT,
                       parity: Parity = Parity.PLUS, *, cap: int = SERIES_CAP) -> RegularizedSeries:
    """chi_1, chi_2 coefficients, long enough that the tail at |w| <= w_max is negligible."""
    mp = ctx.mp
    g, d = params.mp_couplings(ctx)
    d = d if parity > 0 else -d
    x = mp.mpf(x)
    _admissible(x, mp)
    b, c = _chi_coefficients(x, g, d, mp, 64)
    step = 128
    while True:
        n_terms = len(c)
        B = np.array([float(v) for v in b])
        C = np.array([float(v) for v in c])
        scaled = np.maximum(np.abs(B), np.abs(C)) * w_max ** np.arange(n_terms)
        if np.all(scaled[-16:] <= TAIL_RTOL * scaled.max() * (1 - w_max)):
            return RegularizedSeries(x=x, g=float(g), b=B, c=C)
        if n_terms >= cap:
            raise TailBoundExceeded(f"{cap} terms insufficient at |w|<={w_max:.6f}", needed=2 * cap)
        b, c = _chi_coefficients(x, g, d, mp, min(n_terms + step, cap), b, c)


def _horner(coeffs: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Evaluate the rows of ``coeffs`` (lowest order first) at every point of ``w``."""
    coeffs = np.atleast_2d(coeffs)
    out = np.zeros((coeffs.shape[0], w.size), dtype=complex)
    for column in coeffs[:, ::-1].T:
        out *= w
        out += column[:, None]
    return out


def _terms_needed(mags: np.ndarray, radius: float) -> int:
    """Shortest prefix whose tail at |w| = radius stays below the relative tail tolerance."""
    if radius <= 0:
        return 1
    scaled = mags * radius ** np.arange(mags.size)
    tail_max = np.maximum.accumulate(scaled[::-1])[::-1]
    ok = np.nonzero(tail_max <= TAIL_RTOL * scaled.max() * max(1 - radius, 1e-300))[0]
    return int(ok[0]) + 1 if ok.size else mags.size


def _chi_values(series: RegularizedSeries, w: np.ndarray, buckets: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """chi_1, chi_2 at w; nodes are grouped by |w| so inner ones use shorter prefixes."""
    coeffs = np.vstack([series.b, series.c])
    mags = np.abs(coeffs).max(axis=0)
    r = np.abs(w)
    order = np.argsort(r)
    out = np.empty((2, w.size), dtype=complex)
    for chunk in np.array_split(order, min(buckets, max(w.size, 1))):
        if chunk.size == 0:
            continue
        n = _terms_needed(mags, float(r[chunk].max()))
        out[:, chunk] = _horner(coeffs[:, :n], w[chunk])
    return out[0], out[1]


def eval_regularized(series: RegularizedSeries, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(phi_1, phi_2) at the points w (double precision)."""
    z = MobiusMap(series.g).z(w)
    damp = np.exp(-series.g * z)
    chi1, chi2 = _chi_values(series, w)
    return damp * chi1, damp * chi2


def cutoff_radius(x: float, g: float, alpha: float = 0.0) -> float:
    """|z| beyond which the Gaussian-weighted integrand is below e^{-CUTOFF_EXPONENT}."""
    lin = 2 * g + 2 * abs(alpha)
    k = 2 * max(float(x), 1.0)
    r = max(lin, 2.0)
    while r * r - lin * r - k * math.log(r) < CUTOFF_EXPONENT:
        r += 0.25
    return r


def _retained(grid: DiskGrid, g: float, radius: float):
    w, area = grid.nodes()
    z = MobiusMap(g).z(w)
    keep = np.abs(z) < radius
    return w[keep], z[keep], area[keep]


def _series_for(x, params, parity, grids: Sequence[DiskGrid], radius: float, ctx) -> RegularizedSeries:
    w_max = max(float(np.abs(_retained(grid, params.g_norm, radius)[0]).max()) for grid in grids)
    return regularized_series(x, params, w_max, ctx, parity)


def _quad_norm(series: RegularizedSeries, grid: DiskGrid, radius: float) -> float:
    g = series.g
    w, z, area = _retained(grid, g, radius)
    chi1, chi2 = _chi_values(series, w)
    dens = MobiusMap(g).jacobian(w) * np.exp(-np.abs(z) ** 2 - 2 * g * z.real)
    return float(np.sum(area * dens * (np.abs(chi1) ** 2 + np.abs(chi2) ** 2)))


def norm_squared_quadrature(x, params: ModelParams, grid: DiskGrid = DiskGrid(),
                            ctx: PrecisionContext = DEFAULT_CONTEXT, parity: Parity = Parity.PLUS,
                            *, quad_tol: float | None = QUAD_TOL) -> float:
    """Disk-quadrature squared norm of the continued eigenfunction at any real x.

    With ``quad_tol`` set, the grid is also doubled in both directions and a relative
    change above ``quad_tol`` raises :class:`NonConverged`.
    """
    radius = cutoff_radius(float(x), params.g_norm)
    grids = [grid] if quad_tol is None else [grid, grid.doubled()]
    series = _series_for(x, params, parity, grids, radius, ctx)
    value = _quad_norm(series, grid, radius)
    if quad_tol is not None:
        fine = _quad_norm(series, grids[1], radius)
        if abs(fine - value) > quad_tol * abs(fine):
            raise NonConverged(value, fine, quad_tol)
    return value


@dataclass(frozen=True)
class CoherentCombination:
    """phi_0(z) = sum_k weight_k * e^{-alpha_k^2/2 + alpha_k z} with real data."""

    terms: tuple[tuple[float, float], ...]

    @classmethod
    def coherent(cls, alpha: float) -> CoherentCombination:
        return cls(((1.0, float(alpha)),))

    @classmethod
    def even(cls, alpha: float) -> CoherentCombination:
        return cls(((0.5, float(alpha)), (0.5, -float(alpha))))

    @classmethod
    def odd(cls, alpha: float) -> CoherentCombination:
        return cls(((0.5, float(alpha)), (-0.5, -float(alpha))))

    @property
    def reach(self) -> float:
        return max(abs(a) for _, a in self.terms)

    def log_values(self, z: np.ndarray, extra: np.ndarray) -> np.ndarray:
        """sum_k weight_k * exp(-alpha_k^2/2 + alpha_k z + extra), combined stably."""
        out = np.zeros(np.shape(z), dtype=complex)
        for weight, a in self.terms:
            out += weight * np.exp(-a * a / 2 + a * z + extra)
        return out


def _quad_overlap(series: RegularizedSeries, initial: CoherentCombination, grid: DiskGrid,
                  radius: float) -> float:
    g = series.g
    w, z, area = _retained(grid, g, radius)
    chi1, chi2 = _chi_values(series, w)
    # exp(-|z|^2) * conj(exp(-g z)) folded into the coherent exponent
    base = -np.abs(z) ** 2 - g * np.conj(z)
    left = np.conj(chi1) * initial.log_values(z, base)
    right = np.conj(chi2) * initial.log_values(-z, base)
    return float(np.sum(area * MobiusMap(g).jacobian(w) * (left + right)).real)


def overlap_quadrature(x, initial: CoherentCombination, params: ModelParams, grid: DiskGrid = DiskGrid(),
                       ctx: PrecisionContext = DEFAULT_CONTEXT, parity: Parity = Parity.PLUS,
                       *, quad_tol: float | None = QUAD_TOL) -> float:
    """<psi_x|phi_0> by splitting the plane at Re z = 0 and folding the right half over."""
    radius = cutoff_radius(float(x), params.g_norm, initial.reach)
    grids = [grid] if quad_tol is None else [grid, grid.doubled()]
    series = _series_for(x, params, parity, grids, radius, ctx)
    value = _quad_overlap(series, initial, grid, radius)
    if quad_tol is not None:
        fine = _quad_overlap(series, initial, grids[1], radius)
        if abs(fine - value) > quad_tol * max(abs(fine), 1e-300):
            raise NonConverged(value, fine, quad_tol)
    return value


def jump_statistic(x, params: ModelParams, parity: Parity = Parity.PLUS, *, y_max: float = 4.0,
                   samples: int = 201, ctx: PrecisionContext = DEFAULT_CONTEXT) -> float:
    """Scaled mismatch of phi_1(iy) and phi_2(-iy) along the imaginary axis.

    Both continuations agree there only when x is an eigenvalue.
    """
    g = params.g_norm
    y = np.linspace(-y_max, y_max, samples)
    w = MobiusMap(g).w(1j * y)
    series = regularized_series(x, params, float(np.abs(w).max()), ctx, parity)
    phi1, phi2 = eval_regularized(series, w)
    phi2_reflected = np.conj(phi2)  # phi_2 at w(-iy) = conj(w(iy)), real coefficients
    scale = np.abs(phi2).max()
    return float(np.abs(phi1 - phi2_reflected).max() / scale)


@dataclass(frozen=True)
class FockReference:
    """Eigen-decomposition of each parity block in a truncated Fock basis."""

    params: ModelParams
    n_max: int
    energies: dict
    vectors: dict

    def x_values(self, parity: Parity) -> np.ndarray:
        return self.energies[Parity(parity)] + self.params.g_norm**2

    def _evolve(self, parity: Parity, amp: np.ndarray, t: float) -> np.ndarray:
        V = self.vectors[Parity(parity)]
        E = self.energies[Parity(parity)]
        return V @ (np.exp(-1j * E * t) * (V.T @ amp))

    def coherent(self, alpha: float) -> np.ndarray:
        n = np.arange(self.n_max)
        logs = -alpha * alpha / 2 + n * math.log(abs(alpha)) - 0.5 * np.array(
            [math.lgamma(k + 1) for k in n]) if alpha else None
        if alpha == 0:
            out = np.zeros(self.n_max)
            out[0] = 1.0
            return out
        return np.exp(logs) * np.sign(alpha) ** n

    def sigma_z(self, alpha: float, times: Sequence[float]) -> np.ndarray:
        """<sigma_z(t)> for the product of |alpha> with the upper spin state."""
        amp = self.coherent(alpha)
        n = np.arange(self.n_max)
        refl = (-1.0) ** n
        even = np.where(n % 2 == 0, amp, 0.0)
        odd = np.where(n % 2 == 1, amp, 0.0)
        out = []
        for t in times:
            c = self._evolve(Parity.PLUS, even, t)
            s = self._evolve(Parity.MINUS, odd, t)
            out.append(np.vdot(c, refl * c).real - np.vdot(s, refl * s).real)
        return np.array(out)

    def sigma_x(self, alpha: float, times: Sequence[float]) -> np.ndarray:
        """<sigma_x(t)> for the product of |alpha> with the sigma_x = +1 spin state."""
        amp = self.coherent(alpha)
        out = []
        for t in times:
            plus = self._evolve(Parity.PLUS, amp, t)
            minus = self._evolve(Parity.MINUS, amp, t)
            out.append(np.vdot(plus, minus).real)
        return np.array(out)


def truncated_fock_reference(params: ModelParams, n_max: int) -> FockReference:
    """Diagonalize H_p = a^dag a + g (a + a^dag) + p*delta*(-1)^n on n < n_max."""
    if n_max < 16:
        raise ValueError("n_max must be >= 16")
    g, d = params.g_norm, params.delta_norm
    n = np.arange(n_max)
    off = g * np.sqrt(np.arange(1, n_max))
    energies, vectors = {}, {}
    for parity in Parity:
        diag = n + parity * d * (-1.0) ** n
        E, V = eigh_tridiagonal(diag, off)
        energies[parity], vectors[parity] = E, V
    return FockReference(params, n_max, energies, vectors)
