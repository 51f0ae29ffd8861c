import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from numpy.testing import assert_allclose

from src.dg_core import (DGSpace, FluxChoice, LinearConvection, assemble_advection,
                         assemble_diffusion, build_mesh, project_initial)
from src.errors import LinearSolveError
from src.integrators import (ETD_SCHEMES, IMEX2_DELTA, IMEX2_GAMMA, IMEX_SCHEMES, DGSystem, Family,
                             IntegrationRun, SchemeSpec, advance, default_cfl, integrate,
                             step_etd, step_imex)
from src.matfunc import phi_matrices
from src.symbols import ModalSystem

ALL_SCHEMES = ETD_SCHEMES + IMEX_SCHEMES


class TestSchemeSpec:
    @pytest.mark.parametrize("text,family,order", [
        ("ETD-RK4", Family.ETD, 4),
        ("etd1", Family.ETD, 1),
        ("imex_rk2", Family.IMEX, 2),
        (" IMEX-3 ", Family.IMEX, 3),
    ])
    def test_parse(self, text, family, order):
        assert SchemeSpec.parse(text) == SchemeSpec(family, order)

    @pytest.mark.parametrize("text", ["rk4", "etd-rk5", "imex-rk4", "etd-rk"])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            SchemeSpec.parse(text)

    def test_name_and_coefficients(self):
        assert SchemeSpec(Family.IMEX, 2).name == "IMEX-RK2"
        assert SchemeSpec(Family.IMEX, 2).coefficients == {"gamma": IMEX2_GAMMA, "delta": IMEX2_DELTA}
        assert IMEX2_GAMMA == pytest.approx(1 - math.sqrt(2) / 2)
        assert SchemeSpec(Family.ETD, 3).coefficients == {}

    def test_default_cfl(self):
        assert [default_cfl(k) for k in range(3)] == pytest.approx([1.0, 1 / 3, 1 / 5])


def scalar_growth(scheme, tau, d_hat, a_hat):
    system = ModalSystem(np.array([[[a_hat]]]), np.array([[[d_hat]]]), tau)
    return advance(scheme, system, system.identity())[0, 0, 0]


class TestStageAlgebra:
    @pytest.mark.parametrize("scheme", ETD_SCHEMES, ids=str)
    def test_etd_without_stiff_part_is_classical_rk(self, scheme):
        z = -0.3 * 0.5
        taylor = sum(z ** j / math.factorial(j) for j in range(scheme.order + 1))
        assert scalar_growth(scheme, 0.5, 0.0, 0.3) == pytest.approx(taylor, rel=1e-13)

    @pytest.mark.parametrize("scheme", ETD_SCHEMES, ids=str)
    def test_etd_pure_diffusion_is_exact(self, scheme):
        assert scalar_growth(scheme, 0.7, -3.0, 0.0) == pytest.approx(math.exp(-2.1), rel=1e-13)

    def test_imex1_implicit_part(self):
        assert scalar_growth(SchemeSpec(Family.IMEX, 1), 0.3, -2.0, 0.0) == pytest.approx(1 / 1.6)

    def test_imex1_closed_form(self):
        tau, d_hat, a_hat = 0.4, -1.5, 0.8j
        expected = (1 - tau * a_hat) / (1 - tau * d_hat)
        assert scalar_growth(SchemeSpec(Family.IMEX, 1), tau, d_hat, a_hat) == pytest.approx(expected)

    @pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
    def test_local_order(self, scheme):
        d_hat, a_hat = -1.0, 0.5j
        lam = d_hat - a_hat
        errors = [abs(scalar_growth(scheme, tau, d_hat, a_hat) - np.exp(tau * lam)) for tau in (0.1, 0.05)]
        observed = math.log2(errors[0] / errors[1])
        assert observed == pytest.approx(scheme.order + 1, abs=0.3)

    @pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
    def test_constant_mode_is_steady(self, scheme):
        assert scalar_growth(scheme, 3.0, 0.0, 0.0) == pytest.approx(1.0, abs=1e-14)


def linear_system(N=10, degree=1, d=1.0, a=1.0, tau=0.1, grading="uniform"):
    mesh = build_mesh((0.0, 2 * math.pi), N, grading)
    space = DGSpace.uniform(N, degree)
    D = assemble_diffusion(mesh, space, FluxChoice(), d)
    A = assemble_advection(mesh, space, FluxChoice(), a)
    return mesh, space, D, A, DGSystem(D, LinearConvection(A), tau)


class TestFullSystem:
    def test_no_convection_is_exponential(self, rng):
        _, _, D, _, _ = linear_system(N=8)
        u = rng.standard_normal(D.n)
        expected = la.expm(0.1 * D.matrix.toarray()) @ u
        for scheme in ETD_SCHEMES:
            assert_allclose(step_etd(scheme, u, 0.1, D), expected, atol=1e-11)

    def test_etd2_matches_dense_phi_matrices(self):
        N = 10
        mesh, space, D, A, _ = linear_system(N=N)
        tau = math.pi / 10
        u = project_initial(np.sin, mesh, space)
        phis = phi_matrices(tau * D.matrix.toarray())
        Am = A.matrix.toarray()
        Fu = -Am @ u
        a = phis[0] @ u + tau * phis[1] @ Fu
        Fa = -Am @ a
        expected = phis[0] @ u + tau * (phis[1] @ Fu + phis[2] @ (Fa - Fu))
        result = step_etd(SchemeSpec(Family.ETD, 2), u, tau, D, LinearConvection(A))
        assert_allclose(result, expected, atol=1e-11)

    def test_krylov_and_fourier_steps_agree(self, rng):
        _, _, D, A, _ = linear_system(N=16)
        u = rng.standard_normal(D.n)
        scheme = SchemeSpec(Family.ETD, 4)
        fourier = step_etd(scheme, u, 0.05, D, LinearConvection(A), method="fourier")
        krylov = step_etd(scheme, u, 0.05, D, LinearConvection(A), method="krylov")
        assert_allclose(krylov, fourier, atol=1e-9)

    @pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
    def test_conserves_total_integral(self, rng, scheme):
        _, _, D, A, system = linear_system(N=12, degree=2, grading=(1, 3))
        u = rng.standard_normal(D.n)
        v = advance(scheme, system, u)
        assert D.weights @ v == pytest.approx(D.weights @ u, rel=1e-11, abs=1e-11)

    @pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
    def test_fourier_mode_matches_symbol(self, scheme):
        # P0 central: a single Fourier mode is an eigenvector of both operators
        N, tau, k = 16, 0.2, 3
        mesh, space, D, A, system = linear_system(N=N, degree=0, tau=tau)
        h = mesh.h
        x = np.arange(N) * h
        v = np.exp(1j * k * x)
        xi = k * h
        d_hat = -4.0 / h ** 2 * math.sin(xi / 2) ** 2
        a_hat = 1j * math.sin(xi) / h
        G = scalar_growth(scheme, tau, d_hat, a_hat)
        out = advance(scheme, system, v.real) + 1j * advance(scheme, system, v.imag)
        assert_allclose(out, G * v, atol=1e-11)

    def test_family_mismatch(self):
        _, _, D, _, _ = linear_system()
        with pytest.raises(ValueError):
            step_etd(SchemeSpec(Family.IMEX, 1), np.zeros(D.n), 0.1, D)
        with pytest.raises(ValueError):
            step_imex(SchemeSpec(Family.ETD, 1), np.zeros(D.n), 0.1, D)

    def test_imex_solves_are_checked(self):
        D = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        system = DGSystem(D, None, 1.0)
        with pytest.raises(LinearSolveError):
            system.solve(1.0, np.ones(2))

    def test_shared_solves_across_threads(self, rng):
        _, _, D, _, system = linear_system(N=16, degree=2)
        rhs = rng.standard_normal(D.n)
        coefs = [0.25 * (1 + i % 6) for i in range(48)]
        serial = [DGSystem(D, None, 0.1).solve(c, rhs) for c in coefs]
        with ThreadPoolExecutor(max_workers=8) as pool:
            pooled = list(pool.map(lambda c: system.solve(c, rhs), coefs))
        assert len(system._factors) == 6
        for a, b in zip(pooled, serial):
            assert_allclose(a, b, rtol=0, atol=1e-14 * np.abs(b).max())

    def test_nonpositive_step(self):
        _, _, D, _, _ = linear_system()
        with pytest.raises(ValueError):
            DGSystem(D, None, 0.0)


class TestIntegrate:
    def test_lands_on_final_time(self):
        mesh, space, D, A, system = linear_system(tau=0.3)
        run = IntegrationRun.start(project_initial(np.sin, mesh, space), system)
        integrate(run, SchemeSpec(Family.ETD, 4), 1.0)
        assert run.t == 1.0
        assert run.steps == 4
        assert len(run.norm_history) == 5
        assert run.status == "completed"
        assert run.norm_history[-1][0] == 1.0

    def test_accuracy_against_exact_solution(self):
        mesh, space, D, A, system = linear_system(N=40, degree=3, tau=0.05)
        run = IntegrationRun.start(project_initial(np.sin, mesh, space), system)
        integrate(run, SchemeSpec(Family.ETD, 4), 1.0)
        exact = project_initial(lambda x: np.exp(-1.0) * np.sin(x - 1.0), mesh, space)
        assert np.abs(run.state - exact).max() < 1e-4

    def test_zero_data_stays_zero(self):
        _, _, D, _, system = linear_system()
        run = IntegrationRun.start(np.zeros(D.n), system)
        integrate(run, SchemeSpec(Family.IMEX, 3), 0.5)
        assert not np.any(run.state)
        assert run.status == "completed"

    def test_blow_up_is_recorded(self):
        mesh = build_mesh((0.0, 1.0), 4)
        D = assemble_diffusion(mesh, DGSpace.uniform(4, 0), FluxChoice(), 0.0)
        run = IntegrationRun.start(np.ones(4), DGSystem(D, lambda u: 50.0 * u, 1.0))
        integrate(run, SchemeSpec(Family.ETD, 1), 100.0)
        assert run.blown_up
        assert run.steps < 100
        assert run.norm_history[-1][1] > 1e6

    def test_norms_use_mass_matrix(self):
        mesh, space, D, _, system = linear_system(N=20, degree=2)
        run = IntegrationRun.start(project_initial(lambda x: np.ones_like(x), mesh, space), system)
        t, max_norm, l2 = run.norm_history[0]
        assert t == 0.0
        assert max_norm == pytest.approx(1.0)
        assert l2 == pytest.approx(math.sqrt(2 * math.pi))

    def test_final_time_must_advance(self):
        _, _, D, _, system = linear_system()
        run = IntegrationRun.start(np.zeros(D.n), system, t0=1.0)
        with pytest.raises(ValueError):
            integrate(run, SchemeSpec(Family.ETD, 1), 1.0)
