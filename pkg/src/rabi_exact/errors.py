"""Exception hierarchy shared by all solver layers."""

from __future__ import annotations


class RabiError(Exception):
    """Base class for solver failures."""


class PoleProximity(RabiError):
    """Evaluation point lies inside the guard band of a pole x = n."""

    def __init__(self, n: int, x: object, guard: float) -> None:
        super().__init__(f"x={x} within {guard:g} of pole n={n}")
        self.n = n
        self.x = x
        self.guard = guard


class NonConvergence(RabiError):
    """A series or iteration ran out of terms before meeting its tolerance."""


class RootRefinementError(RabiError):
    """Root refinement hit a non-finite value inside its bracket."""


class EscalationExhausted(RabiError):
    """Precision escalation reached its limit while a kink persisted."""


class TailBoundExceeded(RabiError):
    """Truncated power series cannot meet the requested tail bound."""

    def __init__(self, message: str, needed: int | None = None) -> None:
        super().__init__(message)
        self.needed = needed


class NonConverged(RabiError):
    """Grid doubling changed a quadrature result by more than its tolerance."""

    def __init__(self, coarse: float, fine: float, tol: float) -> None:
        super().__init__(f"quadrature not converged: {coarse!r} vs {fine!r} (tol {tol:g})")
        self.coarse = coarse
        self.fine = fine
        self.tol = tol


class InsufficientWeight(RabiError):
    """The enumerated spectrum does not capture enough of the initial state."""

    def __init__(self, weight: float, parity: int, x_max: float) -> None:
        sector = "+" if parity > 0 else "-"
        super().__init__(
            f"captured weight {weight:.12g} in sector {sector} below 1-1e-8; "
            f"raise x_max above {x_max:g}"
        )
        self.weight = weight
        self.parity = parity
        self.x_max = x_max
