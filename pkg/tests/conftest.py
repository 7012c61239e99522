from __future__ import annotations

import pytest

from rabi_exact.eigenbasis import build_eigenstate
from rabi_exact.numerics import PrecisionContext
from rabi_exact.spectrum import ModelParams, Parity, find_spectrum

REFERENCE = ModelParams(0.7, 0.25)


@pytest.fixture(scope="session")
def ctx() -> PrecisionContext:
    return PrecisionContext()


@pytest.fixture(scope="session")
def reference_params() -> ModelParams:
    return REFERENCE


@pytest.fixture(scope="session")
def reference_spectra(ctx):
    return {p: find_spectrum(REFERENCE, p, 12.0, ctx) for p in Parity}


@pytest.fixture(scope="session")
def reference_states(reference_spectra):
    return {p: [build_eigenstate(pt, REFERENCE) for pt in pts[:11]] for p, pts in reference_spectra.items()}


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Recorder for acceptance lines: ``acceptance(label, ok, detail)``."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(label: str, ok: bool, detail: str) -> bool:
        lines.append((label, bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(lines, key=lambda item: _label_key(item[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label:<14} {detail}")


def _label_key(label: str):
    head, _, tail = label.partition(" ")
    digits = "".join(ch for ch in head if ch.isdigit())
    return (int(digits) if digits else 0, head, tail)
