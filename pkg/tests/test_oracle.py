from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabi_exact.eigenbasis import coherent_overlap
from rabi_exact.errors import NonConverged, TailBoundExceeded
from rabi_exact.numerics import PrecisionContext
from rabi_exact.oracle import (
    CoherentCombination,
    DiskGrid,
    MobiusMap,
    cutoff_radius,
    eval_continued,
    eval_regularized,
    jump_statistic,
    norm_squared_quadrature,
    overlap_quadrature,
    regularized_series,
    truncated_fock_reference,
    w_series,
)
from rabi_exact.spectrum import ModelParams, Parity, find_spectrum

P = ModelParams(0.7, 0.25)


def direct_phi(x, z, g, d, digits=50, terms=300):
    """phi_1, phi_2 from their expansions around z = -g (valid for |z + g| < 2g)."""
    with mpmath.workdps(digits):
        x, g, d, z = mpmath.mpf(x), mpmath.mpf(repr(g)), mpmath.mpf(repr(d)), mpmath.mpf(z)
        k_prev, k = mpmath.mpf(0), mpmath.mpf(1)
        s1 = s2 = mpmath.mpf(0)
        for n in range(terms):
            s1 += k * d / (x - n) * (z + g) ** n
            s2 += k * (z + g) ** n
            f = 2 * g + (n - x + d * d / (x - n)) / (2 * g)
            k_prev, k = k, (f * k - k_prev) / (n + 1)
        e = mpmath.exp(-g * z)
        return e * s1, e * s2


class TestMobius:
    def test_centre(self):
        assert MobiusMap(0.7).w(-0.7) == 0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-50, 0), st.floats(-50, 50), st.floats(0.1, 3))
    def test_left_half_plane_maps_into_disk(self, re, im, g):
        m = MobiusMap(g)
        z = complex(re, im)
        w = m.w(z)
        assert abs(w - 1 / 3) <= 2 / 3 + 1e-12
        assert abs(m.z(w) - z) <= 1e-9 * max(1, abs(z))

    def test_jacobian(self):
        m = MobiusMap(0.7)
        w = np.array([0.2 + 0.1j])
        h = 1e-6
        dz = (m.z(w + h) - m.z(w - h)) / (2 * h)
        assert m.jacobian(w)[0] == pytest.approx(abs(dz[0]) ** 2, rel=1e-8)


class TestWSeries:
    def test_initial_values(self, ctx):
        mp = ctx.mp
        x = mp.mpf("0.3")
        s = w_series(x, P, 5, ctx)
        g, d = mp.mpf("0.7"), mp.mpf("0.25")
        e = mp.exp(g * g)
        assert s.a2[0] == e and abs(s.a1[0] - d / x * e) < 1e-55
        assert abs(s.a2[1] - 2 * (x - 2 * g * g - d * d / x) * e) < 1e-55

    def test_ground_state_a0(self, reference_spectra, ctx):
        x0 = reference_spectra[Parity.PLUS][0].x
        s = w_series(x0, P, 2, ctx)
        assert float(s.a1[0]) == pytest.approx(0.25 / 0.06038398312686194 * math.exp(0.49), rel=1e-14)
        assert float(s.a1[0]) == pytest.approx(6.758, abs=1e-3)

    def test_ratio_tends_to_one(self, reference_spectra):
        ctx = PrecisionContext(120)
        s = w_series(reference_spectra[Parity.PLUS][0].x, P, 400, ctx)
        for a in (s.a1, s.a2):
            ratios = [float(abs(a[n + 1] / a[n])) for n in range(201, 400) if a[n] != 0]
            assert 0.8 <= min(ratios) and max(ratios) <= 1.2

    def test_origin(self, reference_spectra, ctx):
        s = w_series(reference_spectra[Parity.PLUS][0].x, P, 30, ctx)
        phi1, phi2 = eval_continued(s, 0)
        assert phi1 == s.a1[0] and phi2 == s.a2[0]

    @pytest.mark.parametrize("z", [-0.5, -1.1, 0.2])
    def test_matches_direct_expansion(self, z, reference_spectra, ctx):
        x0 = reference_spectra[Parity.PLUS][0].x
        s = w_series(x0, P, 400, ctx)
        w = complex(MobiusMap(0.7).w(z))
        phi1, phi2 = eval_continued(s, w, quad_tol=1e-20, ctx=ctx)
        d1, d2 = direct_phi(x0, z, 0.7, 0.25)
        assert abs(phi1 - d1) < 1e-15 * abs(d1) and abs(phi2 - d2) < 1e-15 * abs(d2)

    def test_tail_bound_enforced(self, reference_spectra, ctx):
        s = w_series(reference_spectra[Parity.PLUS][0].x, P, 10, ctx)
        with pytest.raises(TailBoundExceeded):
            eval_continued(s, 0.9)

    def test_regularized_agrees(self, reference_spectra, ctx):
        x0 = reference_spectra[Parity.PLUS][1].x
        s = w_series(x0, P, 600, ctx)
        reg = regularized_series(x0, P, 0.6, ctx)
        w = np.array([0.1 + 0.2j, -0.3 + 0.05j, 0.5j])
        p1, p2 = eval_regularized(reg, w)
        for k, wk in enumerate(w):
            d1, d2 = eval_continued(s, complex(wk), quad_tol=1e-12, ctx=ctx)
            assert abs(complex(d1) - p1[k]) <= 1e-11 * abs(complex(d1))
            assert abs(complex(d2) - p2[k]) <= 1e-11 * abs(complex(d2))


class TestQuadrature:
    @pytest.mark.parametrize("parity", list(Parity))
    def test_norm_matches_series(self, parity, reference_states):
        s = reference_states[parity][1]
        q = norm_squared_quadrature(s.point.x, P, parity=parity)
        assert q == pytest.approx(float(s.norm_sq), rel=1e-8)

    def test_coarse_grid_fails_doubling(self, reference_spectra):
        x0 = reference_spectra[Parity.PLUS][4].x
        with pytest.raises(NonConverged):
            norm_squared_quadrature(x0, P, DiskGrid(6, 8))

    def test_smooth_in_x(self, reference_spectra):
        x0 = float(reference_spectra[Parity.PLUS][0].x)

        def curvature(h):
            v = [norm_squared_quadrature(x0 + k * h, P) for k in (-1, 0, 1)]
            return (v[2] - 2 * v[1] + v[0]) / h**2

        # finite-difference curvature converges as the step shrinks
        assert curvature(1e-3) == pytest.approx(curvature(5e-4), rel=1e-2)

    def test_vacuum_overlap(self, reference_states):
        s = reference_states[Parity.PLUS][0]
        q = overlap_quadrature(s.point.x, CoherentCombination.coherent(0.0), P)
        assert q == pytest.approx(float(coherent_overlap(s, 0.0)[0]), rel=1e-8)

    @pytest.mark.parametrize("index", [0, 2])
    def test_coherent_overlap_sign(self, index, reference_states):
        s = reference_states[Parity.MINUS][index]
        q = overlap_quadrature(s.point.x, CoherentCombination.coherent(2.0), P, parity=Parity.MINUS)
        assert q == pytest.approx(float(coherent_overlap(s, 2.0, "minus")[0]), rel=1e-8)

    def test_cutoff_radius_grows(self):
        assert cutoff_radius(1.0, 0.7) < cutoff_radius(20.0, 0.7) < cutoff_radius(20.0, 0.7, 3.0)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            DiskGrid(0, 4)
        assert DiskGrid(4, 8).doubled() == DiskGrid(8, 16)


class TestJump:
    def test_jump_discriminates_eigenvalues(self, reference_spectra):
        x0 = float(reference_spectra[Parity.PLUS][0].x)
        at = jump_statistic(x0, P)
        off = min(jump_statistic(x0 - 0.01, P), jump_statistic(x0 + 0.01, P))
        assert at < 1e-10 and off > 1e-3


class TestFock:
    def test_decoupled(self):
        ref = truncated_fock_reference(ModelParams(1.3, 0.0), 120)
        for parity in Parity:
            np.testing.assert_allclose(ref.energies[parity][:41], np.arange(41) - 1.69, atol=1e-10)

    def test_weak_coupling_matches_solver(self):
        params = ModelParams(0.3, 0.25)
        ref = truncated_fock_reference(params, 160)
        for parity in Parity:
            xs = [float(p.x) for p in find_spectrum(params, parity, 10.5)][:10]
            np.testing.assert_allclose(xs, ref.x_values(parity)[:10], atol=1e-10)

    def test_small_basis_fails_at_strong_coupling(self):
        params = ModelParams(2.0, 0.25)
        xs = [float(p.x) for p in find_spectrum(params, Parity.PLUS, 12)]
        small = truncated_fock_reference(params, 20).x_values(Parity.PLUS)
        assert np.max(np.abs(np.array(xs[:10]) - small[:10])) > 1e-3

    def test_initial_values(self):
        ref = truncated_fock_reference(P, 80)
        assert ref.sigma_z(1.0, [0.0])[0] == pytest.approx(1, abs=1e-12)
        assert ref.sigma_x(1.0, [0.0])[0] == pytest.approx(1, abs=1e-12)

    def test_rejects_tiny_basis(self):
        with pytest.raises(ValueError):
            truncated_fock_reference(P, 8)
