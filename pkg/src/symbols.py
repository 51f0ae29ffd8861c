"""
ETDG Symbols
Fourier symbols of DG stencils and one-step growth factors of the time integrators
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Dict, List, Optional, Tuple, Union

import mpmath
import numpy as np
from numpy.polynomial import legendre

from src.dg_core import (BlockStencil, FluxChoice, assemble_advection, assemble_diffusion,
                         build_mesh, extract_stencil, reference_element, DGSpace)
from src.integrators import SchemeSpec, advance
from src.matfunc import EXTENDED_DPS, MAX_ORDER, phi_array, phi_functions, phi_matrices_extended

# Unit-h stencils are read off a small periodic mesh
UNIT_CELLS = 8

Q_VARIANTS = ("etd-central", "etd-upwind", "imex-central", "imex-upwind")

# Block-sum entries below this fraction of the largest block entry are exact zeros
SNAP_RTOL = 1e-12
# Slow eigenpairs are refined when max |lambda_slow| <= SEPARATION * min |lambda_fast|
SEPARATION = 1e-2
REFINE_STEPS = 6
# Eigenbases worse than this fall back to the augmented exponential
COND_MAX = 1e8

Phase = Union[float, np.ndarray]


def to_modal(stencil: BlockStencil) -> BlockStencil:
    """Stencil in the Legendre basis of each cell; coefficient 0 is the cell mean"""
    ref = reference_element(stencil.size - 1)
    T = legendre.legvander(ref.nodes, stencil.size - 1)
    blocks = [ref.vinv @ B @ T for B in stencil.blocks]
    mass = None if stencil.mass is None else T.T @ stencil.mass @ T
    return BlockStencil(list(stencil.offsets), blocks, stencil.h, mass)


@lru_cache(maxsize=None)
def unit_stencils(degree: int, flux: FluxChoice = FluxChoice()) -> Dict[str, BlockStencil]:
    """Advection (a=1) and diffusion (d=1) modal stencils at h=1; the h-symbols are A1/h and D1/h^2"""
    mesh = build_mesh((0.0, float(UNIT_CELLS)), UNIT_CELLS)
    space = DGSpace.uniform(UNIT_CELLS, degree)
    return {
        "advection": to_modal(extract_stencil(assemble_advection(mesh, space, flux, 1.0))),
        "diffusion": to_modal(extract_stencil(assemble_diffusion(mesh, space, flux, 1.0))),
    }


def _snap_mask(stack: np.ndarray) -> np.ndarray:
    """Entries of the block sum that are zero up to roundoff"""
    return np.abs(stack.sum(axis=0)) <= SNAP_RTOL * np.abs(stack).max()


def slow_indices(blocks: BlockStencil) -> Tuple[int, ...]:
    """Modal coefficients whose column of the block sum vanishes: the kernel at xi = 0"""
    zero = np.all(_snap_mask(np.stack(blocks.blocks)), axis=0)
    return tuple(int(j) for j in np.flatnonzero(zero))


def symbol(blocks: BlockStencil, xi: Phase, precision: str = "double", snap_zeros: bool = False):
    """sum_m B_m e^{i m xi}; batched over an array of phases

    Evaluated as sum_m B_m + sum_m B_m (e^{i m xi} - 1) so entries that vanish at xi = 0
    keep their relative accuracy for small xi. snap_zeros=True sets block-sum entries at
    roundoff level to exact zeros, among them the mean row and column on a periodic mesh.
    """
    stack = np.stack(blocks.blocks)
    mask = _snap_mask(stack) if snap_zeros else np.zeros(stack.shape[1:], dtype=bool)
    if precision == "extended":
        with mpmath.workdps(EXTENDED_DPS):
            base = mpmath.zeros(blocks.size, blocks.size)
            out = mpmath.zeros(blocks.size, blocks.size)
            for m, B in zip(blocks.offsets, blocks.blocks):
                B = mpmath.matrix(B.tolist())
                base += B
                out += B * (mpmath.expj(m * mpmath.mpf(xi)) - 1)
            for i, j in zip(*np.nonzero(mask)):
                base[int(i), int(j)] = 0
            return base + out
    base = stack.sum(axis=0).astype(complex)
    base[mask] = 0.0
    theta = np.multiply.outer(np.asarray(xi, dtype=float), np.asarray(blocks.offsets, dtype=float))
    shift = -2.0 * np.sin(0.5 * theta) ** 2 + 1j * np.sin(theta)
    return base + np.einsum("...m,mij->...ij", shift, stack)


@dataclass(frozen=True, eq=False)
class SymbolPair:
    """Advection and diffusion symbols of the modal system v' = (D_hat - A_hat) v"""
    A_hat: np.ndarray
    D_hat: np.ndarray
    h: float
    xi: Phase
    mass: Optional[np.ndarray] = None
    slow: Tuple[int, ...] = ()

    @classmethod
    def of(cls, stencils: Dict[str, BlockStencil], h: float, xi: Phase,
           precision: str = "double") -> "SymbolPair":
        adv, diff = stencils["advection"], stencils["diffusion"]
        if precision == "extended":
            with mpmath.workdps(EXTENDED_DPS):
                hh = mpmath.mpf(h)
                return cls((1 / hh) * symbol(adv, xi, precision, True),
                           (1 / hh ** 2) * symbol(diff, xi, precision, True), h, xi, diff.mass,
                           slow_indices(diff))
        return cls(symbol(adv, xi, snap_zeros=True) / h, symbol(diff, xi, snap_zeros=True) / h ** 2,
                   h, xi, diff.mass, slow_indices(diff))

    @classmethod
    def semidiscrete(cls, xi_phys: Phase, precision: str = "double") -> "SymbolPair":
        """Continuous-in-space symbols: A_hat = i xi, D_hat = -xi^2"""
        if precision == "extended":
            with mpmath.workdps(EXTENDED_DPS):
                w = mpmath.mpf(xi_phys)
                return cls(mpmath.matrix([[1j * w]]), mpmath.matrix([[-w * w]]), 0.0, xi_phys)
        w = np.asarray(xi_phys, dtype=float)[..., None, None]
        return cls(1j * w, (-w * w).astype(complex), 0.0, xi_phys, np.eye(1))

    def conjugate(self) -> "SymbolPair":
        """Symbols at -xi"""
        return SymbolPair(np.conj(self.A_hat), np.conj(self.D_hat), self.h, -np.asarray(self.xi), self.mass,
                          self.slow)


class ModalSystem:
    """Batched (k+1)-sized modal system; states are (B, n, n) so stepping the identity yields G"""

    def __init__(self, A_hat: np.ndarray, D_hat: np.ndarray, tau: float,
                 weight: Optional[np.ndarray] = None):
        self.A = np.asarray(A_hat, dtype=complex)
        self.D = np.asarray(D_hat, dtype=complex)
        self.tau = float(tau)
        self.weight = weight
        self._phis: Dict[float, List[np.ndarray]] = {}

    def F(self, U):
        return -(self.A @ U)

    def phi_step(self, c, V0, terms):
        if c not in self._phis:
            self._phis[c] = phi_functions(c * self.tau * self.D, MAX_ORDER, self.weight)
        phis = self._phis[c]
        out = phis[0] @ V0
        for j, g in enumerate(terms, start=1):
            out = out + (c * self.tau) * (phis[j] @ g)
        return out

    def implicit_stage(self, c, R):
        n = self.D.shape[-1]
        X = np.linalg.solve(np.eye(n) - (c * self.tau) * self.D, R)
        return X, (1.0 / c) * (X - R)

    def identity(self) -> np.ndarray:
        n = self.D.shape[-1]
        return np.broadcast_to(np.eye(n, dtype=complex), self.D.shape).copy()


def _refine_slow_modes(D: np.ndarray, lam: np.ndarray, V: np.ndarray, slow: Tuple[int, ...]):
    """Invariant subspace of the slow coefficients, D [I; Y] = [I; Y] L, by fixed-point steps

    The columns of D at the slow coefficients carry no h^-2 block-sum part, so L is formed
    from small, relatively accurate entries and its eigenvalues replace those of eig(D).
    """
    n, r = D.shape[-1], len(slow)
    S = np.asarray(slow)
    F = np.setdiff1d(np.arange(n), S)
    mag = np.abs(lam)
    order = np.argsort(mag, axis=-1)
    fast = np.take_along_axis(mag, order[:, r:r + 1], axis=-1)[:, 0]
    picked = np.nonzero(np.take_along_axis(mag, order[:, r - 1:r], axis=-1)[:, 0] <= SEPARATION * fast)[0]
    if picked.size == 0:
        return lam, V
    sub = D[picked]
    D_SS, D_SF = sub[:, S[:, None], S], sub[:, S[:, None], F]
    D_FS, D_FF = sub[:, F[:, None], S], sub[:, F[:, None], F]
    try:
        with np.errstate(all="ignore"):
            Y = -np.linalg.solve(D_FF, D_FS)
            for _ in range(REFINE_STEPS):
                Y = np.linalg.solve(D_FF, Y @ (D_SS + D_SF @ Y) - D_FS)
            mu, P = np.linalg.eig(D_SS + D_SF @ Y)
    except np.linalg.LinAlgError:
        return lam, V

    good = np.isfinite(mu).all(axis=-1) & np.isfinite(Y).all(axis=(-2, -1)) & \
        np.isfinite(P).all(axis=(-2, -1)) & (np.abs(mu).max(axis=-1) <= SEPARATION * fast[picked])
    rows = picked[good]
    cols = order[rows, :r]
    vectors = np.zeros((rows.size, n, r), dtype=complex)
    vectors[:, S, :] = P[good]
    vectors[:, F, :] = Y[good] @ P[good]
    lam, V = lam.copy(), V.copy()
    lam[rows[:, None], cols] = mu[good]
    V[rows[:, None], :, cols] = np.swapaxes(vectors, 1, 2)
    return lam, V


def modal_eig(D: np.ndarray,
              slow: Tuple[int, ...] = ()) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """D = V diag(lam) W with W = V^{-1}, batched over the leading axis of (B, n, n)

    The eigenvalues belonging to the slow coefficients (the kernel of the block sum) tend to
    zero while the others grow like h^-2; they are refined from the block partition of D so
    that they keep relative accuracy. The last return value flags phases whose eigenbasis
    has condition number at most COND_MAX.
    """
    D = np.asarray(D, dtype=complex)
    lam, V = np.linalg.eig(D)
    if 0 < len(slow) < D.shape[-1]:
        lam, V = _refine_slow_modes(D, lam, V, slow)
    try:
        W = np.linalg.inv(V)
    except np.linalg.LinAlgError:
        W = np.linalg.pinv(V)
    cond = np.linalg.norm(V, axis=(-2, -1)) * np.linalg.norm(W, axis=(-2, -1))
    return lam, V, W, np.isfinite(cond) & (cond <= COND_MAX)


class EigenModalSystem:
    """Batched modal system in the eigenbasis of D_hat; phi-functions act on the eigenvalues"""

    def __init__(self, A_hat: np.ndarray, lam: np.ndarray, V: np.ndarray, W: np.ndarray, tau: float):
        self.A = W @ np.asarray(A_hat, dtype=complex) @ V
        self.lam = lam
        self.tau = float(tau)
        self._phis: Dict[float, List[np.ndarray]] = {}

    def F(self, U):
        return -(self.A @ U)

    def phi_step(self, c, V0, terms):
        if c not in self._phis:
            z = (c * self.tau) * self.lam
            self._phis[c] = [phi_array(j, z)[..., :, None] for j in range(MAX_ORDER + 1)]
        phis = self._phis[c]
        out = phis[0] * V0
        for j, g in enumerate(terms, start=1):
            out = out + (c * self.tau) * (phis[j] * g)
        return out

    def implicit_stage(self, c, R):
        X = R / (1.0 - (c * self.tau) * self.lam)[..., :, None]
        return X, (1.0 / c) * (X - R)

    def identity(self) -> np.ndarray:
        n = self.lam.shape[-1]
        return np.broadcast_to(np.eye(n, dtype=complex), self.A.shape).copy()


class ExtendedModalSystem:
    """Single-phase modal system in mpmath arithmetic"""

    def __init__(self, A_hat, D_hat, tau):
        self.A = A_hat
        self.D = D_hat
        self.tau = mpmath.mpf(tau)
        self._phis: Dict[float, list] = {}

    def F(self, U):
        return -(self.A * U)

    def phi_step(self, c, V0, terms):
        if c not in self._phis:
            self._phis[c] = phi_matrices_extended(mpmath.mpf(c) * self.tau * self.D, MAX_ORDER)
        phis = self._phis[c]
        out = phis[0] * V0
        for j, g in enumerate(terms, start=1):
            out = out + (mpmath.mpf(c) * self.tau) * (phis[j] * g)
        return out

    def implicit_stage(self, c, R):
        n = self.D.rows
        X = mpmath.inverse(mpmath.eye(n) - (mpmath.mpf(c) * self.tau) * self.D) * R
        return X, (1 / mpmath.mpf(c)) * (X - R)

    def identity(self):
        return mpmath.eye(self.D.rows)


@dataclass(frozen=True, eq=False)
class GrowthFactor:
    matrix: object
    tau: float
    xi: Phase = None
    spectral_radius: Optional[np.ndarray] = None

    @cached_property
    def rho(self):
        """Spectral radius; an array for batched factors, an mpf in extended precision"""
        if self.spectral_radius is not None:
            return self.spectral_radius
        if isinstance(self.matrix, mpmath.matrix):
            with mpmath.workdps(EXTENDED_DPS):
                if self.matrix.rows == 1:
                    return abs(self.matrix[0, 0])
                eigenvalues, _ = mpmath.eig(self.matrix)
                return max(abs(e) for e in eigenvalues)
        return np.abs(np.linalg.eigvals(self.matrix)).max(axis=-1)

    def __len__(self):
        return 1 if np.ndim(self.xi) == 0 else len(self.xi)


def _growth_double(scheme: SchemeSpec, tau: float, sym: SymbolPair) -> Tuple[np.ndarray, np.ndarray]:
    """(G, rho(G)); stepped in the eigenbasis of D_hat where it is well conditioned"""
    D = np.asarray(sym.D_hat, dtype=complex)
    A = np.broadcast_to(np.asarray(sym.A_hat, dtype=complex), D.shape)
    shape, n = D.shape[:-2], D.shape[-1]
    D, A = D.reshape(-1, n, n), A.reshape(-1, n, n)

    lam, V, W, ok = modal_eig(D, sym.slow)
    system = EigenModalSystem(A, lam, V, W, tau)
    G_eig = advance(scheme, system, system.identity())
    G = V @ G_eig @ W
    rho = np.abs(np.linalg.eigvals(G_eig)).max(axis=-1)
    if not np.all(ok):
        bad = ~ok
        fallback = ModalSystem(A[bad], D[bad], tau, sym.mass)
        G[bad] = advance(scheme, fallback, fallback.identity())
        rho[bad] = np.abs(np.linalg.eigvals(G[bad])).max(axis=-1)
    return G.reshape(shape + (n, n)), rho.reshape(shape)


def growth_matrices(scheme: SchemeSpec, tau: float, sym: SymbolPair, precision: str = "double"):
    """One step of scheme applied to the identity of the modal system"""
    if precision == "extended":
        with mpmath.workdps(EXTENDED_DPS):
            system = ExtendedModalSystem(sym.A_hat, sym.D_hat, tau)
            return advance(scheme, system, system.identity())
    return _growth_double(scheme, tau, sym)[0]


def growth_fully_discrete(scheme: SchemeSpec, tau: float, sym: SymbolPair,
                          precision: str = "double") -> GrowthFactor:
    if precision == "extended":
        return GrowthFactor(growth_matrices(scheme, tau, sym, precision), tau, sym.xi)
    G, rho = _growth_double(scheme, tau, sym)
    return GrowthFactor(G, tau, sym.xi, rho)


def growth_semidiscrete(scheme: SchemeSpec, tau: float, xi_phys: Phase, precision: str = "double"):
    """Scalar growth factor of the continuous-in-space modal equation; 1 at xi = 0"""
    G = growth_matrices(scheme, tau, SymbolPair.semidiscrete(xi_phys, precision), precision)
    if precision == "extended":
        return G[0, 0]
    return G[..., 0, 0]


def _check_q_inputs(variant: str, tau: float, h: float):
    if variant not in Q_VARIANTS:
        raise ValueError(f"Unknown variant {variant}; expected one of {', '.join(Q_VARIANTS)}")
    if tau <= 0 or h <= 0:
        raise ValueError(f"tau and h must be positive, got tau={tau}, h={h}")


def closed_form_Q(variant: str, tau: float, h: float, eta: Phase) -> Phase:
    """|G|^2 of the lowest-order (P0) schemes with eta = sin^2(xi/2); 1 at eta = 0"""
    _check_q_inputs(variant, tau, h)
    eta = np.asarray(eta, dtype=float)
    if np.any((eta < 0) | (eta > 1)):
        raise ValueError("eta must lie in [0, 1]")
    zero = eta == 0.0
    safe = np.where(zero, 1.0, eta)
    r = 4.0 * tau * safe / h ** 2
    if variant.startswith("etd"):
        E, Em1 = np.exp(-r), np.expm1(-r)
        cot2 = h ** 2 * (1.0 - safe) / (4.0 * safe)
        real = E if variant == "etd-central" else E + 0.5 * h * Em1
        Q = real ** 2 + cot2 * Em1 ** 2
    else:
        sin2 = 4.0 * safe * (1.0 - safe)
        denom = (1.0 + r) ** 2
        if variant == "imex-central":
            Q = (1.0 + tau ** 2 * sin2 / h ** 2) / denom
        else:
            Q = ((1.0 - 2.0 * tau * safe / h) ** 2 + tau ** 2 * sin2 / h ** 2) / denom
    Q = np.where(zero, 1.0, Q)
    return float(Q) if Q.ndim == 0 else Q


def closed_form_Q_slope_at_zero(variant: str, tau: float, h: float = 1.0) -> float:
    """dQ/d(eta) at eta = 0; 'semidiscrete-etd' gives tau(tau-2) with eta = xi^2"""
    if variant == "semidiscrete-etd":
        return tau * (tau - 2.0)
    _check_q_inputs(variant, tau, h)
    if variant.endswith("central"):
        return 4.0 * tau * (tau - 2.0) / h ** 2
    return 4.0 * tau * (tau - 2.0 - h) / h ** 2


def semidiscrete_etd1_Q(tau: float, eta: Phase) -> Phase:
    """|G|^2 = e^{-2 tau eta} + (e^{-tau eta} - 1)^2 / eta for ETD-RK1, eta = xi^2"""
    eta = np.asarray(eta, dtype=float)
    zero = eta == 0.0
    safe = np.where(zero, 1.0, eta)
    Q = np.where(zero, 1.0, np.exp(-2.0 * tau * safe) + np.expm1(-tau * safe) ** 2 / safe)
    return float(Q) if Q.ndim == 0 else Q


def similarity(sym: SymbolPair, P: np.ndarray) -> SymbolPair:
    """Symbols in the local basis transformed by P"""
    Pinv = np.linalg.inv(P)
    return SymbolPair(Pinv @ sym.A_hat @ P, Pinv @ sym.D_hat @ P, sym.h, sym.xi, None)


def rho_curve(scheme: SchemeSpec, tau: float, xi: np.ndarray, h: Optional[float] = None,
              stencils: Optional[Dict[str, BlockStencil]] = None) -> np.ndarray:
    """rho(G) over a phase grid; semidiscrete when h is None"""
    if h is None:
        return np.abs(growth_semidiscrete(scheme, tau, xi))
    return growth_fully_discrete(scheme, tau, SymbolPair.of(stencils, h, xi)).rho


def rho_extended(scheme: SchemeSpec, tau: float, xi: float, h: Optional[float] = None,
                 stencils: Optional[Dict[str, BlockStencil]] = None):
    """rho(G) at one phase in mpmath arithmetic"""
    if h is None:
        with mpmath.workdps(EXTENDED_DPS):
            return abs(growth_semidiscrete(scheme, tau, xi, "extended"))
    return growth_fully_discrete(scheme, tau, SymbolPair.of(stencils, h, xi, "extended"), "extended").rho
