from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabi_exact.eigenbasis import (
    CoherentExpansion,
    ShiftedBasisLabel,
    build_eigenstate,
    coherent_in_shifted_basis,
    coherent_overlap,
    controlled_sum,
    cross_parity_overlap,
    norm_squared,
    overlap_with_initial,
    reflection_matrix_element,
)
from rabi_exact.errors import PoleProximity
from rabi_exact.numerics import PrecisionContext
from rabi_exact.oracle import truncated_fock_reference
from rabi_exact.spectrum import ModelParams, Parity, SpectralPoint, find_spectrum


def rel(a, b) -> float:
    a, b = float(a), float(b)
    return abs(a - b) / max(abs(a), abs(b))


@pytest.fixture(scope="module")
def fock():
    return truncated_fock_reference(ModelParams(0.7, 0.25), 120)


class TestCoherentExpansion:
    def test_vacuum_in_minus_basis(self, ctx):
        g = 0.7
        exp = coherent_in_shifted_basis(0.0, ShiftedBasisLabel(-g), 12, ctx)
        for n, c in enumerate(exp.coeffs):
            assert rel(c, math.exp(-g * g / 2) * (-g) ** n / math.sqrt(math.factorial(n))) < 1e-14

    def test_centred_state_is_vacuum(self, ctx):
        exp = coherent_in_shifted_basis(0.7, ShiftedBasisLabel(-0.7), 8, ctx)
        assert exp.coeffs[0] == 1 and all(c == 0 for c in exp.coeffs[1:])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-4, 4), st.floats(-3, 3))
    def test_normalized(self, alpha, shift):
        ctx = PrecisionContext(120)
        exp = coherent_in_shifted_basis(alpha, ShiftedBasisLabel(shift), 200, ctx)
        assert abs(sum(c * c for c in exp.coeffs) - 1) < 1e-25

    def test_rejects_complex(self):
        with pytest.raises(TypeError):
            coherent_in_shifted_basis(1j, ShiftedBasisLabel(-1.0), 4)

    def test_basis_labels(self):
        p = ModelParams(0.7, 0.25)
        assert ShiftedBasisLabel.minus(p).rep == "minus" and ShiftedBasisLabel.plus(p).rep == "plus"


class TestControlledSum:
    def test_geometric(self, ctx):
        mp = ctx.mp
        terms = [mp.mpf(2) ** -n for n in range(200)]
        value, rep = controlled_sum(terms, 1e-15, 0, len(terms), mp)
        assert abs(value - 2) < 1e-14 and rep.eps_rel_achieved <= 1e-15 and not rep.kink_hit

    def test_kink_limit_reports(self, ctx):
        mp = ctx.mp
        terms = [mp.mpf(2) ** -n for n in range(200)]
        _, rep = controlled_sum(terms, 1e-15, 0, 20, mp)
        assert rep.kink_hit and rep.eps_rel_achieved > 1e-15


class TestNorms:
    @pytest.mark.parametrize("g", [0.5, 1.0, 1.5])
    def test_decoupled_ground_state(self, g, ctx):
        params = ModelParams(g, 0.0)
        point = find_spectrum(params, Parity.PLUS, 1)[0]
        state = build_eigenstate(point, params)
        expected = ctx.mp.exp(5 * ctx.mp.mpf(repr(g)) ** 2)
        assert rel(state.norm_sq, expected) < 1e-15
        assert rel(state.norm_sq_plus, expected) < 1e-15

    def test_decoupled_excited_plus_rep(self, ctx):
        params = ModelParams(1.0, 0.0)
        mp = ctx.mp
        for point in find_spectrum(params, Parity.PLUS, 4):
            state = build_eigenstate(point, params)
            m = point.index
            closed = mp.exp(5) * mp.factorial(m) / mp.mpf(2) ** (2 * m)
            assert rel(state.norm_sq_plus, closed) < 1e-15
            assert rel(state.norm_sq, closed) < 1e-15

    def test_dual_representation(self, reference_states):
        for states in reference_states.values():
            for s in states:
                assert s.norm_sq > 0
                assert rel(norm_squared(s, "minus")[0], norm_squared(s, "plus")[0]) < 1e-12

    def test_ground_state_value(self, reference_states):
        # 200-bit run, cross-checked against the disk quadrature in the oracle tests
        assert rel(reference_states[Parity.PLUS][0].norm_sq, 28.69173092279982) < 1e-13

    def test_low_precision_kink_then_escalation(self, reference_params):
        low = PrecisionContext(53, 1e-10)
        point = find_spectrum(reference_params, Parity.PLUS, 21, low)[20]
        _, rep = norm_squared(build_eigenstate(point, reference_params, 0), "minus", max_escalations=0)
        assert rep.kink_hit and rep.eps_rel_achieved > 1e-15
        state = build_eigenstate(point, reference_params)
        value, rep = norm_squared(state, "minus")
        assert not rep.kink_hit and rep.eps_rel_achieved <= 1e-15
        assert state.trunc.escalations >= 1 and state.ctx.mantissa_bits >= 200

    def test_escalation_never_worse(self, reference_params):
        low = PrecisionContext(53, 1e-10)
        point = find_spectrum(reference_params, Parity.PLUS, 21, low)[20]
        state = build_eigenstate(point, reference_params, 0)
        eps = [norm_squared(state, "minus", max_escalations=0)[1].eps_rel_achieved]
        for _ in range(2):
            state = state.escalated()
            eps.append(norm_squared(state, "minus", max_escalations=0)[1].eps_rel_achieved)
        assert eps[1] <= eps[0] and eps[2] <= max(eps[1], 1e-15)

    def test_pole_collision_refused(self, reference_params, ctx):
        point = SpectralPoint(Parity.PLUS, 0, ctx.mp.mpf(1), ctx.mp.mpf(1), 0.0, 0.0,
                              juddian_flag=True, pole_collision=True, ctx=ctx)
        with pytest.raises(PoleProximity):
            build_eigenstate(point, reference_params)


class TestOverlaps:
    @pytest.mark.parametrize("alpha", [0.0, 2.0, -1.3])
    def test_dual_representation(self, alpha, reference_states):
        for states in reference_states.values():
            for s in states:
                a = coherent_overlap(s, alpha, "minus")[0]
                b = coherent_overlap(s, alpha, "plus")[0]
                assert abs(a - b) <= 1e-12 * max(abs(a), abs(b), 1e-6 * math.sqrt(s.norm_sq))

    def test_weights_match_fock(self, reference_states, fock):
        for parity, states in reference_states.items():
            V = fock.vectors[parity]
            for m, s in enumerate(states[:8]):
                ours = float(coherent_overlap(s, 0.0)[0] ** 2 / s.norm_sq)
                assert ours == pytest.approx(V[0, m] ** 2, abs=1e-12)

    def test_parseval_vacuum(self, reference_params):
        x_max = reference_params.g_norm**2 + 20
        for parity in Parity:
            total = math.fsum(
                float(coherent_overlap(s, 0.0)[0] ** 2 / s.norm_sq)
                for s in (build_eigenstate(p, reference_params) for p in find_spectrum(reference_params, parity, x_max))
            )
            assert abs(total - 1) < 1e-10

    def test_decoupled_full_weight(self, ctx):
        g = 1.2
        params = ModelParams(g, 0.0)
        state = build_eigenstate(find_spectrum(params, Parity.PLUS, 1)[0], params)
        # ground state is e^{2g^2} e^{-gz}, i.e. proportional to the coherent state |-g>
        ov = coherent_overlap(state, -g)[0]
        assert rel(ov * ov / state.norm_sq, 1) < 1e-14

    def test_expansion_routes_by_basis(self, reference_states, reference_params):
        s = reference_states[Parity.MINUS][3]
        exp = CoherentExpansion(1.0, ShiftedBasisLabel.plus(reference_params), ())
        assert rel(overlap_with_initial(s, exp)[0], coherent_overlap(s, 1.0, "plus")[0]) < 1e-30


class TestMatrixElements:
    def test_reflection_symmetry(self, reference_states):
        for states in reference_states.values():
            for a in states[:6]:
                for b in states[:6]:
                    ab, ba = reflection_matrix_element(a, b), reflection_matrix_element(b, a)
                    assert abs(ab - ba) <= 1e-12 * max(abs(ab), 1e-3 * math.sqrt(a.norm_sq * b.norm_sq))
                    assert abs(ab) <= math.sqrt(a.norm_sq * b.norm_sq) * (1 + 1e-12)

    def test_reflection_matches_fock(self, reference_states, fock):
        for parity, states in reference_states.items():
            V = fock.vectors[parity]
            T = (-1.0) ** np.arange(fock.n_max)
            for i, a in enumerate(states[:5]):
                for j, b in enumerate(states[:5]):
                    ours = float(reflection_matrix_element(a, b) / (a.norm_sq * b.norm_sq) ** 0.5)
                    assert abs(ours) == pytest.approx(abs(V[:, i] @ (T * V[:, j])), abs=1e-8)

    def test_reflection_decoupled_ground(self, ctx):
        g = 0.9
        params = ModelParams(g, 0.0)
        s = build_eigenstate(find_spectrum(params, Parity.PLUS, 1)[0], params)
        assert rel(reflection_matrix_element(s, s) / s.norm_sq, math.exp(-2 * g * g)) < 1e-14

    def test_cross_matches_fock(self, reference_states, fock):
        Vp, Vm = fock.vectors[Parity.PLUS], fock.vectors[Parity.MINUS]
        for i, a in enumerate(reference_states[Parity.PLUS][:6]):
            for j, b in enumerate(reference_states[Parity.MINUS][:6]):
                ours = float(cross_parity_overlap(a, b) / (a.norm_sq * b.norm_sq) ** 0.5)
                assert abs(ours) == pytest.approx(abs(Vp[:, i] @ Vm[:, j]), abs=1e-8)
                assert abs(ours) <= 1 + 1e-12

    def test_cross_dual_representation(self, reference_states):
        for a in reference_states[Parity.PLUS][:5]:
            for b in reference_states[Parity.MINUS][:5]:
                m, p = cross_parity_overlap(a, b, rep="minus"), cross_parity_overlap(a, b, rep="plus")
                assert abs(m - p) <= 1e-12 * math.sqrt(a.norm_sq * b.norm_sq)

    def test_cross_decoupled(self):
        params = ModelParams(1.0, 0.0)
        plus = [build_eigenstate(p, params) for p in find_spectrum(params, Parity.PLUS, 4)]
        minus = [build_eigenstate(p, params) for p in find_spectrum(params, Parity.MINUS, 4)]
        for i, a in enumerate(plus):
            for j, b in enumerate(minus):
                val = cross_parity_overlap(a, b)
                if i == j:
                    assert rel(val, a.norm_sq) < 1e-14
                else:
                    assert abs(val) < 1e-14 * a.norm_sq

    def test_sector_checks(self, reference_states):
        a, b = reference_states[Parity.PLUS][0], reference_states[Parity.MINUS][0]
        with pytest.raises(ValueError):
            reflection_matrix_element(a, b)
        with pytest.raises(ValueError):
            cross_parity_overlap(a, a)
