"""Exact spectrum, eigenstates and spin dynamics of the quantum Rabi model.

No Hilbert-space truncation: eigenvalues are zeros of the G-function, eigenstates
are closed-form displaced-oscillator expansions, and every truncated series is
checked by an absolutely convergent disk quadrature.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .dynamics import InitialKind, InitialState, TimeSeries, decompose, evolve, gap_report
from .eigenbasis import (
    EigenstateRep,
    build_eigenstate,
    coherent_overlap,
    cross_parity_overlap,
    norm_squared,
    reflection_matrix_element,
)
from .errors import (
    EscalationExhausted,
    InsufficientWeight,
    NonConvergence,
    NonConverged,
    PoleProximity,
    RabiError,
)
from .numerics import PrecisionContext
from .oracle import norm_squared_quadrature, overlap_quadrature, truncated_fock_reference
from .spectrum import ModelParams, Parity, SpectralPoint, find_spectrum, g_function

__all__ = [
    "EigenstateRep",
    "EscalationExhausted",
    "InitialKind",
    "InitialState",
    "InsufficientWeight",
    "ModelParams",
    "NonConvergence",
    "NonConverged",
    "Parity",
    "PoleProximity",
    "PrecisionContext",
    "RabiError",
    "SpectralPoint",
    "TimeSeries",
    "build_eigenstate",
    "coherent_overlap",
    "cross_parity_overlap",
    "decompose",
    "evolve",
    "find_spectrum",
    "g_function",
    "gap_report",
    "norm_squared",
    "norm_squared_quadrature",
    "overlap_quadrature",
    "reflection_matrix_element",
    "truncated_fock_reference",
    "__version__",
]
