import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.dg_core import (DGSpace, FluxChoice, NumFlux, assemble_2d, assemble_advection,
                         assemble_diffusion, build_mesh, cell_averages, eval_convection,
                         extract_stencil, gauss, l2_error, nodal_coordinates, project_initial,
                         reassemble, reference_element)
from src.errors import FluxError, MeshError, StencilError


def unit_mesh(degree, N=8, length=8.0):
    mesh = build_mesh((0.0, length), N)
    return mesh, DGSpace.uniform(N, degree)


def direct_sipg_2d(N, degree, d, sigma, length):
    """SIPG on an N x N periodic square, summed cell by cell and face by face with quadrature"""
    ref = reference_element(degree)
    n, h = degree + 1, length / N
    r, w = gauss(degree + 2)
    wq = w * (h / 2.0)
    B, dB = ref.basis(r), ref.basis_deriv(r) * (2.0 / h)
    ends = ref.basis(np.array([-1.0, 1.0]))
    dends = ref.basis_deriv(np.array([-1.0, 1.0])) * (2.0 / h)

    def dofs(ix, iy):
        a = np.arange(n)
        return ((((iy % N) * n + a[:, None]) * N + (ix % N)) * n + a[None, :]).ravel()

    # local dof (a, b) is l_a(y) l_b(x)
    value = np.einsum("ya,xb->yxab", B, B).reshape(-1, n * n)
    grad_x = np.einsum("ya,xb->yxab", B, dB).reshape(-1, n * n)
    grad_y = np.einsum("ya,xb->yxab", dB, B).reshape(-1, n * n)
    W = np.outer(wq, wq).ravel()[:, None]
    cell_mass = value.T @ (W * value)
    cell_stiff = grad_x.T @ (W * grad_x) + grad_y.T @ (W * grad_y)

    # (trace, normal derivative) of the cells on either side of an x-face and a y-face
    x_left = (np.einsum("ya,b->yab", B, ends[1]).reshape(-1, n * n),
              np.einsum("ya,b->yab", B, dends[1]).reshape(-1, n * n))
    x_right = (np.einsum("ya,b->yab", B, ends[0]).reshape(-1, n * n),
               np.einsum("ya,b->yab", B, dends[0]).reshape(-1, n * n))
    y_below = (np.einsum("a,xb->xab", ends[1], B).reshape(-1, n * n),
               np.einsum("a,xb->xab", dends[1], B).reshape(-1, n * n))
    y_above = (np.einsum("a,xb->xab", ends[0], B).reshape(-1, n * n),
               np.einsum("a,xb->xab", dends[0], B).reshape(-1, n * n))

    size = (N * n) ** 2
    M, S = np.zeros((size, size)), np.zeros((size, size))

    def face(first, second, cells):
        jump = (first[0], -second[0])
        avg = (0.5 * first[1], 0.5 * second[1])
        for s in range(2):
            for t in range(2):
                block = (d * jump[s].T @ (wq[:, None] * avg[t])
                         + d * avg[s].T @ (wq[:, None] * jump[t])
                         - (sigma / h) * jump[s].T @ (wq[:, None] * jump[t]))
                S[np.ix_(cells[s], cells[t])] += block

    for iy in range(N):
        for ix in range(N):
            here = dofs(ix, iy)
            M[np.ix_(here, here)] += cell_mass
            S[np.ix_(here, here)] -= d * cell_stiff
            face(x_left, x_right, (here, dofs(ix + 1, iy)))
            face(y_below, y_above, (here, dofs(ix, iy + 1)))
    return np.linalg.solve(M, S)


class TestMesh:
    def test_uniform_edges(self):
        mesh = build_mesh((0.0, 2 * math.pi), 4)
        assert_allclose(mesh.cell_edges, [0, math.pi / 2, math.pi, 3 * math.pi / 2, 2 * math.pi])
        assert mesh.uniform()

    def test_thirds(self):
        mesh = build_mesh((0.0, 1.0), 3)
        assert mesh.uniform()
        assert_allclose(mesh.widths(), 1.0 / 3.0, rtol=0, atol=1e-15)

    def test_ratio_grading(self):
        mesh = build_mesh((0.0, 2 * math.pi), 2000, (1, 9))
        widths = np.diff(mesh.cell_edges)
        assert_allclose(widths[0], 2 * math.pi / 1000 / 10)
        assert_allclose(widths[1], 2 * math.pi / 1000 * 9 / 10)
        assert not mesh.uniform()
        assert mesh.cell_edges[-1] == 2 * math.pi

    def test_grading_string(self):
        mesh = build_mesh((-1.0, 1.0), 4, "1:3")
        assert_allclose(np.diff(mesh.cell_edges), [0.25, 0.75, 0.25, 0.75])

    @pytest.mark.parametrize("domain,N,grading", [
        ((0.0, 1.0), 1, "uniform"),
        ((1.0, 1.0), 4, "uniform"),
        ((0.0, 1.0), 5, (1, 9)),
        ((0.0, 1.0), 4, (0, 1)),
        ((0.0, 1.0), 4, "geometric"),
    ])
    def test_invalid(self, domain, N, grading):
        with pytest.raises(MeshError):
            build_mesh(domain, N, grading)


class TestFluxChoice:
    def test_parse_ipdg_variants(self):
        assert FluxChoice.parse("central", "sipg").epsilon == 1
        assert FluxChoice.parse("upwind", "nipg").epsilon == -1
        assert FluxChoice.parse("central", "iipg").label == "central+iipg"

    def test_unknown_tags(self):
        with pytest.raises(FluxError):
            FluxChoice.parse("downwind")
        with pytest.raises(FluxError):
            FluxChoice.parse("central", "bassi-rebay")

    def test_sipg_needs_positive_penalty(self):
        with pytest.raises(FluxError):
            FluxChoice.parse("central", "sipg", sigma=0.0)

    def test_default_penalty(self):
        assert FluxChoice.parse("central", "sipg").penalty(0.5, 2) == pytest.approx(4.5)


class TestProjection:
    def test_constant_reproduced(self):
        mesh, space = unit_mesh(3, N=6, length=2.0)
        u = project_initial(lambda x: np.full_like(x, 2.5), mesh, space)
        assert_allclose(u, 2.5, rtol=0, atol=1e-14)

    def test_linear_is_nodal(self):
        mesh, space = unit_mesh(1, N=2, length=2.0)
        u = project_initial(lambda x: x, mesh, space)
        assert_allclose(u, nodal_coordinates(mesh, space), atol=1e-14)
        assert_allclose(u[:2], [0.0, 1.0], atol=1e-14)

    def test_sine_against_fine_quadrature(self):
        mesh = build_mesh((0.0, 2 * math.pi), 10)
        space = DGSpace.uniform(10, 1)
        u = project_initial(np.sin, mesh, space)
        ref = reference_element(1)
        r, w = gauss(64)
        B = ref.basis(r)
        for j, (xc, hj) in enumerate(zip(mesh.centers(), mesh.widths())):
            rhs = (np.sin(xc + 0.5 * hj * r) * w) @ B
            assert_allclose(u[2 * j:2 * j + 2], rhs @ ref.mass_inv, atol=1e-12)

    def test_projection_error_vanishes_for_polynomials(self):
        mesh, space = unit_mesh(2, N=5, length=1.0)
        f = lambda x: 3 * x ** 2 - x + 1
        assert l2_error(project_initial(f, mesh, space), f, mesh, space) < 1e-12

    def test_cell_averages(self):
        mesh, space = unit_mesh(2, N=4, length=4.0)
        u = project_initial(lambda x: x, mesh, space)
        assert_allclose(cell_averages(u, mesh, space), mesh.centers(), atol=1e-14)


class TestGoldenStencils:
    def test_p0_central_advection(self):
        mesh, space = unit_mesh(0, length=4.0)
        h = mesh.h
        st = extract_stencil(assemble_advection(mesh, space, "central", 1.0))
        assert st.offsets == [-1, 1]
        assert_allclose(st.block(-1), [[-1 / (2 * h)]])
        assert_allclose(st.block(1), [[1 / (2 * h)]])
        assert_allclose(st.block(0), [[0.0]])

    def test_p0_upwind_advection(self):
        mesh, space = unit_mesh(0, length=4.0)
        h = mesh.h
        st = extract_stencil(assemble_advection(mesh, space, "upwind", 1.0))
        assert st.offsets == [-1, 0]
        assert_allclose(st.block(-1), [[-1 / h]])
        assert_allclose(st.block(0), [[1 / h]])

    @pytest.mark.parametrize("flux", ["ldg-alternating", "sipg"])
    def test_p0_second_difference(self, flux):
        mesh, space = unit_mesh(0, length=4.0)
        h = mesh.h
        choice = FluxChoice.parse("central", flux, sigma=1.0 if flux == "sipg" else None)
        st = extract_stencil(assemble_diffusion(mesh, space, choice, 1.0))
        for m, value in ((-1, 1.0), (0, -2.0), (1, 1.0)):
            assert_allclose(st.block(m), [[value / h ** 2]], atol=1e-12)

    @pytest.mark.parametrize("length", [8.0, 2.0])
    def test_p1_central_advection(self, length):
        mesh, space = unit_mesh(1, length=length)
        h = mesh.h
        st = extract_stencil(assemble_advection(mesh, space, "central", 1.0))
        assert_allclose(st.block(-1) * h, [[0, -2], [0, 1]], atol=1e-12)
        assert_allclose(st.block(0) * h, [[1, 2], [-2, -1]], atol=1e-12)
        assert_allclose(st.block(1) * h, [[-1, 0], [2, 0]], atol=1e-12)

    @pytest.mark.parametrize("length", [8.0, 2.0])
    def test_p1_ldg_alternating(self, length):
        mesh, space = unit_mesh(1, length=length)
        h = mesh.h
        st = extract_stencil(assemble_diffusion(mesh, space, "ldg-alternating", 1.0))
        assert_allclose(st.block(-1) * h ** 2, [[0, 10], [0, -2]], atol=1e-11)
        assert_allclose(st.block(0) * h ** 2, [[-12, 10], [6, -20]], atol=1e-11)
        assert_allclose(st.block(1) * h ** 2, [[-6, -2], [12, 4]], atol=1e-11)

    @pytest.mark.parametrize("tag,eps", [("sipg", -1), ("nipg", 1), ("iipg", 0)])
    @pytest.mark.parametrize("sigma", [1.0, 3.5])
    def test_p1_ipdg_left_block(self, tag, eps, sigma):
        # eps follows the printed convention, where SIPG carries epsilon = -1
        mesh, space = unit_mesh(1)
        st = extract_stencil(assemble_diffusion(mesh, space, FluxChoice.parse("central", tag, sigma), 1.0))
        expected = [[2, -2 + 3 * eps + 4 * sigma], [-1, 1 - 3 * eps - 2 * sigma]]
        assert_allclose(st.block(-1), expected, atol=1e-11)

    @pytest.mark.parametrize("degree", [0, 1, 2, 3])
    @pytest.mark.parametrize("flux", [("central", "ldg-alternating"), ("upwind", "ldg-central"),
                                      ("central", "sipg")])
    def test_reassembly_is_exact(self, degree, flux):
        mesh, space = unit_mesh(degree, N=10, length=2 * math.pi)
        choice = FluxChoice.parse(*flux)
        for op in (assemble_advection(mesh, space, choice, 1.3), assemble_diffusion(mesh, space, choice, 0.7)):
            diff = reassemble(extract_stencil(op), mesh.N) - op.matrix
            assert abs(diff).max() <= 1e-12 * abs(op.matrix).max()

    def test_graded_mesh_has_no_stencil(self):
        mesh = build_mesh((0.0, 1.0), 8, (1, 9))
        op = assemble_diffusion(mesh, DGSpace.uniform(8, 1), "ldg-alternating", 1.0)
        with pytest.raises(StencilError):
            extract_stencil(op)

    def test_mixed_degrees_have_no_stencil(self):
        mesh = build_mesh((0.0, 1.0), 8)
        op = assemble_advection(mesh, DGSpace.alternating(8, (1, 2)), "central", 1.0)
        with pytest.raises(StencilError):
            extract_stencil(op)


OPERATOR_CASES = [
    ("uniform", 1, "central", "ldg-alternating"),
    ("uniform", 3, "upwind", "ldg-central"),
    ("uniform", 2, "central", "sipg"),
    ((1, 9), 1, "upwind", "ldg-alternating"),
    ((1, 9), 2, "central", "sipg"),
]


@pytest.mark.parametrize("grading,degree,adv,diff", OPERATOR_CASES)
class TestOperatorProperties:
    def operators(self, grading, degree, adv, diff):
        mesh = build_mesh((0.0, 2 * math.pi), 12, grading)
        space = DGSpace.uniform(12, degree)
        choice = FluxChoice.parse(adv, diff)
        return assemble_advection(mesh, space, choice, 1.0), assemble_diffusion(mesh, space, choice, 1.0)

    def test_mass_conservation(self, rng, grading, degree, adv, diff):
        for op in self.operators(grading, degree, adv, diff):
            u = rng.standard_normal(op.n)
            scale = np.abs(op.weights).sum() * np.abs(op.matrix @ u).max()
            assert abs(op.weights @ (op.matrix @ u)) <= 1e-12 * scale

    def test_advection_energy(self, rng, grading, degree, adv, diff):
        A, _ = self.operators(grading, degree, adv, diff)
        u = rng.standard_normal(A.n)
        energy = -u @ (A.mass @ (A.matrix @ u))
        scale = abs(u @ (A.mass @ u)) * abs(A.matrix).max()
        if adv == "central":
            assert abs(energy) <= 1e-12 * scale
        else:
            assert energy <= 1e-12 * scale

    def test_diffusion_semi_negative(self, rng, grading, degree, adv, diff):
        _, D = self.operators(grading, degree, adv, diff)
        for _ in range(5):
            u = rng.standard_normal(D.n)
            assert u @ (D.mass @ (D.matrix @ u)) <= 1e-12 * (u @ u) * abs(D.matrix).max()

    def test_zero_maps_to_zero(self, grading, degree, adv, diff):
        for op in self.operators(grading, degree, adv, diff):
            assert not np.any(op.matrix @ np.zeros(op.n))


def test_ldg_alternating_is_self_adjoint_on_graded_mesh():
    mesh = build_mesh((0.0, 1.0), 10, (1, 9))
    assert assemble_diffusion(mesh, DGSpace.alternating(10, (1, 3)), "ldg-alternating", 1.0).mass_symmetric()


class TestConvection:
    def test_linear_flux_matches_advection(self, rng):
        mesh, space = unit_mesh(2, N=9, length=2 * math.pi)
        u = rng.standard_normal(space.n_dofs)
        A = assemble_advection(mesh, space, "central", 1.7)
        F = eval_convection(u, mesh, space, lambda v: 1.7 * v, NumFlux.CENTRAL)
        assert_allclose(F, -(A.matrix @ u), atol=1e-12 * np.abs(A.matrix @ u).max())

    def test_constant_state_is_steady(self):
        mesh, space = unit_mesh(3, N=6, length=2.0)
        F = eval_convection(np.full(space.n_dofs, 0.3), mesh, space, lambda v: 0.5 * v * v,
                            "lax-friedrichs", alpha=1.0)
        assert_allclose(F, 0.0, atol=1e-13)

    def test_burgers_against_fine_quadrature(self):
        N, k = 8, 1
        mesh = build_mesh((-1.0, 1.0), N)
        space = DGSpace.uniform(N, k)
        u = project_initial(lambda x: np.sin(np.pi * x), mesh, space)
        F = eval_convection(u, mesh, space, lambda v: 0.5 * v * v)

        ref = reference_element(k)
        r, w = gauss(32)
        h = mesh.h
        U = u.reshape(N, k + 1)
        right, left = U @ ref.right, U @ ref.left
        fhat = 0.25 * (right ** 2 + np.roll(left, -1) ** 2)
        expected = np.zeros_like(U)
        for j in range(N):
            volume = (0.5 * (U[j] @ ref.basis(r).T) ** 2 * w) @ ref.basis_deriv(r)
            rhs = volume - fhat[j] * ref.right + fhat[j - 1] * ref.left
            expected[j] = (rhs @ ref.mass_inv) * (2.0 / h)
        assert_allclose(F, expected.ravel(), rtol=1e-10, atol=1e-12)

    def test_lax_friedrichs_needs_alpha(self):
        mesh, space = unit_mesh(1)
        with pytest.raises(FluxError):
            eval_convection(np.ones(space.n_dofs), mesh, space, lambda v: v, "lax-friedrichs")


class Test2D:
    def setup_method(self):
        self.mesh = build_mesh((0.0, 2 * math.pi), 4)
        self.dg = assemble_2d(self.mesh, self.mesh, 1, FluxChoice.parse("central", "sipg"), 0.5)

    def test_constant_field_is_steady(self):
        assert_allclose(self.dg.diffusion @ np.ones(self.dg.n_dofs), 0.0, atol=1e-12)

    def test_separable_field(self):
        D1 = self.dg.diffusion.x_op
        g = project_initial(np.cos, self.mesh, DGSpace.uniform(4, 1))
        rows = self.dg.diffusion.shape[0]
        assert_allclose(self.dg.diffusion @ np.tile(g, rows), np.tile(D1 @ g, rows), atol=1e-12)

    @pytest.mark.parametrize("degree", [1, 2])
    def test_matches_direct_weak_form(self, degree):
        N, d, length = 3, 0.3, 1.0
        mesh = build_mesh((0.0, length), N)
        dg = assemble_2d(mesh, mesh, degree, FluxChoice.parse("central", "sipg"), d)
        expected = direct_sipg_2d(N, degree, d, d * (degree + 1) ** 2, length)
        got = dg.diffusion.matrix.toarray()
        assert_allclose(got, expected, rtol=0, atol=1e-13 * np.abs(expected).max())

    def test_projection_and_averages(self):
        u = self.dg.project(lambda x, y: 1.0 + 0.0 * x * y)
        assert_allclose(self.dg.cell_averages(u), 1.0, atol=1e-14)

    def test_linear_convection_in_x(self, rng):
        u = rng.standard_normal(self.dg.n_dofs)
        F = self.dg.convection(lambda v: v, lambda v: 0.0 * v)(u)
        space = DGSpace.uniform(4, 1)
        A = assemble_advection(self.mesh, space, "central", 1.0).matrix.toarray()
        expected = -(np.kron(np.eye(space.n_dofs), A) @ u)
        assert_allclose(F, expected, atol=1e-12 * np.abs(expected).max())

    def test_mixed_degrees_rejected(self):
        with pytest.raises(MeshError):
            assemble_2d(self.mesh, self.mesh, (1, 2), FluxChoice(), 1.0)

    def test_graded_mesh_rejected(self):
        graded = build_mesh((0.0, 1.0), 4, (1, 3))
        with pytest.raises(MeshError):
            assemble_2d(graded, graded, 1, FluxChoice(), 1.0)
