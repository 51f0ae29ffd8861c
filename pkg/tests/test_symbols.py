import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from src.dg_core import FluxChoice
from src.integrators import ETD_SCHEMES, IMEX_SCHEMES, Family, SchemeSpec
from src.symbols import (SymbolPair, closed_form_Q, closed_form_Q_slope_at_zero, growth_fully_discrete,
                         growth_semidiscrete, modal_eig, rho_curve, rho_extended, semidiscrete_etd1_Q,
                         similarity, slow_indices, symbol, unit_stencils)

ALL_SCHEMES = ETD_SCHEMES + IMEX_SCHEMES
ETD1 = SchemeSpec(Family.ETD, 1)
IMEX1 = SchemeSpec(Family.IMEX, 1)

UPWIND = FluxChoice.parse("upwind")
XI = np.linspace(0.01, math.pi, 60)


def p0_q(scheme, tau, h, xi, flux=FluxChoice()):
    sym = SymbolPair.of(unit_stencils(0, flux), h, xi)
    return np.abs(growth_fully_discrete(scheme, tau, sym).matrix[..., 0, 0]) ** 2


class TestSymbols:
    def test_p0_central_symbols(self):
        h = 0.25
        sym = SymbolPair.of(unit_stencils(0), h, XI)
        assert_allclose(sym.A_hat[:, 0, 0], 1j * np.sin(XI) / h, atol=1e-12)
        assert_allclose(sym.D_hat[:, 0, 0], -4.0 * np.sin(XI / 2) ** 2 / h ** 2, atol=1e-10)
        assert SymbolPair.of(unit_stencils(0), h, math.pi).D_hat[0, 0].real == pytest.approx(-4.0 / h ** 2)

    def test_p0_upwind_symbol(self):
        sym = SymbolPair.of(unit_stencils(0, UPWIND), 1.0, XI)
        assert_allclose(sym.A_hat[:, 0, 0], 1.0 - np.exp(-1j * XI), atol=1e-13)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_conjugate_symmetry(self, degree):
        stencils = unit_stencils(degree)
        sym = SymbolPair.of(stencils, 0.3, XI)
        mirrored = SymbolPair.of(stencils, 0.3, -XI)
        assert_allclose(mirrored.A_hat, sym.conjugate().A_hat, atol=1e-12)
        assert_allclose(mirrored.D_hat, sym.conjugate().D_hat, atol=1e-10)

    @pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
    def test_rho_even_in_phase(self, scheme):
        stencils = unit_stencils(1)
        assert_allclose(rho_curve(scheme, 1.5, -XI, 0.2, stencils),
                        rho_curve(scheme, 1.5, XI, 0.2, stencils), rtol=1e-10)

    def test_semidiscrete_symbols(self):
        sym = SymbolPair.semidiscrete(np.array([0.0, 2.0]))
        assert_allclose(sym.A_hat[:, 0, 0], [0.0, 2.0j])
        assert_allclose(sym.D_hat[:, 0, 0], [0.0, -4.0])


class TestClosedForm:
    @pytest.mark.parametrize("h", [0.1, 1.0, 5.0])
    @pytest.mark.parametrize("tau", [0.5, 2.0, 4.0])
    def test_etd_central_matches_growth(self, tau, h):
        expected = closed_form_Q("etd-central", tau, h, np.sin(XI / 2) ** 2)
        assert_allclose(p0_q(ETD1, tau, h, XI), expected, rtol=1e-10)

    @pytest.mark.parametrize("h", [0.1, 1.0, 5.0])
    def test_etd_upwind_matches_growth(self, h):
        expected = closed_form_Q("etd-upwind", 1.3, h, np.sin(XI / 2) ** 2)
        assert_allclose(p0_q(ETD1, 1.3, h, XI, UPWIND), expected, rtol=1e-10)

    @pytest.mark.parametrize("variant,flux", [("imex-central", FluxChoice()), ("imex-upwind", UPWIND)])
    def test_imex_matches_growth(self, variant, flux):
        for h in (0.1, 1.0, 5.0):
            expected = closed_form_Q(variant, 2.5, h, np.sin(XI / 2) ** 2)
            assert_allclose(p0_q(IMEX1, 2.5, h, XI, flux), expected, rtol=1e-10)

    @pytest.mark.parametrize("variant", ["etd-central", "imex-central"])
    @pytest.mark.parametrize("h", [0.1, 1.0, 10.0])
    def test_central_bound_at_two(self, variant, h):
        eta = np.linspace(0.0, 1.0, 10001)
        assert closed_form_Q(variant, 2.0, h, eta).max() <= 1.0 + 1e-12

    @pytest.mark.parametrize("h", [0.1, 1.0, 10.0])
    def test_etd_upwind_bound(self, h):
        eta = np.linspace(0.0, 1.0, 10001)
        assert closed_form_Q("etd-upwind", max(2.0, h), h, eta).max() <= 1.0 + 1e-12

    @pytest.mark.parametrize("h", [0.1, 1.0, 10.0])
    def test_imex_upwind_bound_is_sharp(self, h):
        eta = np.linspace(0.0, 1.0, 10001)
        assert closed_form_Q("imex-upwind", 2.0 + h, h, eta).max() <= 1.0 + 1e-12
        assert closed_form_Q("imex-upwind", 1.05 * (2.0 + h), h, eta).max() > 1.0

    @pytest.mark.parametrize("variant", ["etd-central", "etd-upwind", "imex-central", "imex-upwind"])
    def test_unit_at_zero_phase(self, variant):
        assert closed_form_Q(variant, 3.0, 0.5, 0.0) == 1.0

    @pytest.mark.parametrize("variant", ["etd-central", "etd-upwind", "imex-central", "imex-upwind"])
    def test_slope_at_zero(self, variant):
        tau, h, eta = 1.5, 1.0, 1e-7
        numeric = (closed_form_Q(variant, tau, h, eta) - 1.0) / eta
        assert numeric == pytest.approx(closed_form_Q_slope_at_zero(variant, tau, h), abs=1e-4)

    def test_semidiscrete_slope(self):
        tau, eta = 2.5, 1e-7
        numeric = (semidiscrete_etd1_Q(tau, eta) - 1.0) / eta
        assert numeric == pytest.approx(closed_form_Q_slope_at_zero("semidiscrete-etd", tau), abs=1e-4)
        assert closed_form_Q_slope_at_zero("semidiscrete-etd", 2.0) == 0.0

    @given(st.floats(min_value=0.05, max_value=6.0), st.floats(min_value=1e-4, max_value=400.0))
    def test_semidiscrete_etd1_matches_growth(self, tau, eta):
        G = growth_semidiscrete(ETD1, tau, np.array([math.sqrt(eta)]))
        assert abs(G[0]) ** 2 == pytest.approx(semidiscrete_etd1_Q(tau, eta), rel=1e-10)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            closed_form_Q("rk-central", 1.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            closed_form_Q("etd-central", 0.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            closed_form_Q("etd-central", 1.0, 1.0, 1.5)


class TestGrowthFactor:
    @pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
    def test_constant_mode(self, scheme):
        sym = SymbolPair.of(unit_stencils(1), 0.1, 0.0)
        assert float(growth_fully_discrete(scheme, 1.0, sym).rho) == pytest.approx(1.0, abs=1e-12)
        assert abs(growth_semidiscrete(scheme, 3.0, 0.0)) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
    def test_basis_independence(self, rng, scheme):
        sym = SymbolPair.of(unit_stencils(2), 1.0, XI[::6])
        P = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
        base = growth_fully_discrete(scheme, 0.5, sym).rho
        moved = growth_fully_discrete(scheme, 0.5, similarity(sym, P)).rho
        assert_allclose(moved, base, rtol=1e-9)

    def test_rho_is_spectral_radius(self):
        factor = growth_fully_discrete(SchemeSpec(Family.ETD, 3), 2.0, SymbolPair.of(unit_stencils(1), 0.5, XI))
        assert len(factor) == XI.size
        assert_allclose(factor.rho, np.abs(np.linalg.eigvals(factor.matrix)).max(axis=-1))

    def test_extended_matches_double(self):
        scheme = SchemeSpec(Family.ETD, 2)
        stencils = unit_stencils(1)
        double = rho_curve(scheme, 3.0, np.array([0.7]), 0.1, stencils)[0]
        extended = rho_extended(scheme, 3.0, 0.7, 0.1, stencils)
        assert float(extended) == pytest.approx(double, rel=1e-8)

    def test_semidiscrete_extended_matches_double(self):
        scheme = SchemeSpec(Family.IMEX, 3)
        double = rho_curve(scheme, 2.0, np.array([1.3]))[0]
        assert float(rho_extended(scheme, 2.0, 1.3)) == pytest.approx(double, rel=1e-12)

    @pytest.mark.parametrize("degree", [0, 1])
    @pytest.mark.parametrize("scheme", [ETD1, SchemeSpec(Family.ETD, 4), SchemeSpec(Family.IMEX, 2)], ids=str)
    def test_fine_mesh_approaches_semidiscrete(self, scheme, degree):
        omega = 1.0
        exact = abs(growth_semidiscrete(scheme, 1.0, omega))
        errors = [abs(rho_curve(scheme, 1.0, np.array([omega * h]), h, unit_stencils(degree))[0] - exact)
                  for h in (math.pi / 10 ** 3, math.pi / 10 ** 4, math.pi / 10 ** 5)]
        assert errors[0] < 1e-3 * exact
        for coarse, fine in zip(errors, errors[1:]):
            assert fine < coarse or fine < 1e-13

    @pytest.mark.parametrize("degree, flux, expected", [
        (2, FluxChoice(), (0,)),
        (3, FluxChoice.parse("upwind", "sipg"), (0,)),
        (2, FluxChoice.parse("central", "ldg-central"), (0,)),
        (3, FluxChoice.parse("central", "ldg-central"), (0, 3)),
    ])
    def test_slow_coefficients(self, degree, flux, expected):
        assert slow_indices(unit_stencils(degree, flux)["diffusion"]) == expected

    def test_block_sum_zeros_are_exact(self):
        stencil = unit_stencils(3, FluxChoice.parse("central", "ldg-central"))["diffusion"]
        base = symbol(stencil, 0.0, snap_zeros=True)
        assert np.all(base[:, [0, 3]] == 0.0)
        assert np.all(base[0, :] == 0.0)

    @pytest.mark.parametrize("flux", [FluxChoice(), FluxChoice.parse("central", "ldg-central")])
    def test_neutral_at_zero_phase_on_fine_mesh(self, flux):
        sym = SymbolPair.of(unit_stencils(3, flux), math.pi / 10 ** 6, np.array([0.0]))
        for scheme in ALL_SCHEMES:
            assert abs(growth_fully_discrete(scheme, 0.5, sym).rho[0] - 1.0) <= 1e-12

    def test_mean_mode_eigenvalue_keeps_relative_accuracy(self):
        h = math.pi / 10 ** 5
        sym = SymbolPair.of(unit_stencils(2), h, np.array([0.0, 1e-4, 0.5]))
        D = sym.D_hat
        lam, V, W, ok = modal_eig(D, sym.slow)
        assert ok.all()
        slow = lam[np.arange(3), np.abs(lam).argmin(axis=-1)]
        assert slow[0] == 0.0
        assert slow[1].real == pytest.approx(-(1e-4 / h) ** 2, rel=1e-6)
        assert abs(slow[1].imag) <= 1e-10 * abs(slow[1])
        residual = D @ V - V * lam[:, None, :]
        assert np.abs(residual).max() <= 1e-12 * np.abs(D).max()
        assert_allclose(V @ W, np.broadcast_to(np.eye(3), (3, 3, 3)), atol=1e-10)
