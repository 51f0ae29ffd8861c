"""
ETDG Discretization Core
Periodic meshes, nodal DG spaces and assembly of advection, diffusion and convection operators
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre

from src.errors import FluxError, MeshError, StencilError

# Relative width tolerance (against the domain length) for the uniform() predicate
UNIFORM_RTOL = 1e-14
# Reassembly tolerance for extract_stencil
STENCIL_RTOL = 1e-12

Grading = Union[str, Tuple[float, float]]
ScalarField = Callable[[np.ndarray], np.ndarray]


class AdvectionFlux(Enum):
    CENTRAL = "central"
    UPWIND = "upwind"


class DiffusionFlux(Enum):
    LDG_ALTERNATING = "ldg-alternating"
    LDG_CENTRAL = "ldg-central"
    IPDG = "ipdg"


class NumFlux(Enum):
    CENTRAL = "central"
    LAX_FRIEDRICHS = "lax-friedrichs"


# Interior penalty variants by the sign of the symmetrizing term
IPDG_ALIASES = {"sipg": 1, "nipg": -1, "iipg": 0}


@dataclass(frozen=True)
class FluxChoice:
    advection: AdvectionFlux = AdvectionFlux.CENTRAL
    diffusion: DiffusionFlux = DiffusionFlux.LDG_ALTERNATING
    epsilon: int = 1
    sigma: Optional[float] = None

    def __post_init__(self):
        if self.epsilon not in (1, -1, 0):
            raise FluxError(f"IPDG epsilon must be one of +1, -1, 0, got {self.epsilon}")
        if self.diffusion is DiffusionFlux.IPDG and self.sigma is not None:
            if self.epsilon in (1, 0) and self.sigma <= 0:
                raise FluxError(f"SIPG/IIPG need a positive penalty, got sigma={self.sigma}")
            if self.sigma < 0:
                raise FluxError(f"Penalty must be non-negative, got sigma={self.sigma}")

    @classmethod
    def parse(cls, advection: str = "central", diffusion: str = "ldg-alternating",
              sigma: Optional[float] = None) -> "FluxChoice":
        """Build a flux choice from CLI/config tags"""
        try:
            adv = AdvectionFlux(advection)
        except ValueError:
            raise FluxError(f"Unsupported advection flux: {advection}")
        tag = diffusion.lower()
        if tag in IPDG_ALIASES:
            return cls(adv, DiffusionFlux.IPDG, IPDG_ALIASES[tag], sigma)
        try:
            return cls(adv, DiffusionFlux(tag), 1, sigma)
        except ValueError:
            raise FluxError(f"Unsupported diffusion flux: {diffusion}")

    def penalty(self, d: float, degree: int) -> float:
        """Interior penalty, defaulting to d*(k+1)^2"""
        if self.sigma is not None:
            return float(self.sigma)
        return d * (degree + 1) ** 2

    @property
    def label(self) -> str:
        if self.diffusion is DiffusionFlux.IPDG:
            name = {1: "sipg", -1: "nipg", 0: "iipg"}[self.epsilon]
        else:
            name = self.diffusion.value
        return f"{self.advection.value}+{name}"


@dataclass(frozen=True, eq=False)
class Mesh1D:
    domain: Tuple[float, float]
    cell_edges: np.ndarray
    periodic: bool = True

    def __post_init__(self):
        edges = np.asarray(self.cell_edges, dtype=float)
        object.__setattr__(self, "cell_edges", edges)
        lo, hi = self.domain
        if not hi > lo:
            raise MeshError(f"Degenerate interval [{lo}, {hi}]")
        if edges.ndim != 1 or edges.size < 2:
            raise MeshError("A mesh needs at least one cell")
        if np.any(np.diff(edges) <= 0):
            raise MeshError("Cell edges must be strictly increasing")
        if edges[0] != lo or edges[-1] != hi:
            raise MeshError(f"Edges must span [{lo}, {hi}], got [{edges[0]}, {edges[-1]}]")

    @property
    def N(self) -> int:
        return self.cell_edges.size - 1

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    def uniform(self) -> bool:
        widths = np.diff(self.cell_edges)
        return bool(np.all(np.abs(widths - self.length / self.N) <= UNIFORM_RTOL * self.length))

    def widths(self) -> np.ndarray:
        """Cell lengths; exactly equal on uniform meshes"""
        if self.uniform():
            return np.full(self.N, self.length / self.N)
        return np.diff(self.cell_edges)

    def centers(self) -> np.ndarray:
        return 0.5 * (self.cell_edges[:-1] + self.cell_edges[1:])

    @property
    def h(self) -> float:
        """Largest cell length"""
        return float(self.widths().max())


def _parse_grading(grading: Grading) -> Optional[Tuple[float, float]]:
    if isinstance(grading, str):
        if grading == "uniform":
            return None
        if ":" in grading:
            left, right = grading.split(":", 1)
            return float(left), float(right)
        raise MeshError(f"Unknown grading: {grading}")
    r1, r2 = grading
    return float(r1), float(r2)


def build_mesh(domain: Tuple[float, float], N: int, grading: Grading = "uniform") -> Mesh1D:
    """Periodic partition of domain into N cells, uniform or alternating in ratio r1:r2"""
    lo, hi = float(domain[0]), float(domain[1])
    if N < 2:
        raise MeshError(f"Need at least 2 cells, got N={N}")
    if not hi > lo:
        raise MeshError(f"Degenerate interval [{lo}, {hi}]")

    ratio = _parse_grading(grading)
    if ratio is None:
        edges = lo + (hi - lo) * np.arange(N + 1) / N
    else:
        r1, r2 = ratio
        if N % 2:
            raise MeshError(f"Ratio grading needs an even number of cells, got N={N}")
        if r1 <= 0 or r2 <= 0:
            raise MeshError(f"Grading ratios must be positive, got {r1}:{r2}")
        pair = 2.0 * (hi - lo) / N
        widths = np.tile([pair * r1 / (r1 + r2), pair * r2 / (r1 + r2)], N // 2)
        edges = lo + np.concatenate([[0.0], np.cumsum(widths)])
    edges[0], edges[-1] = lo, hi
    return Mesh1D((lo, hi), edges)


@dataclass(frozen=True, eq=False)
class DGSpace:
    degrees: np.ndarray
    basis: str = "lagrange-gll"
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        degrees = np.asarray(self.degrees, dtype=int)
        if degrees.ndim != 1 or degrees.size == 0:
            raise MeshError("A DG space needs one degree per cell")
        if np.any(degrees < 0):
            raise MeshError("Polynomial degrees must be non-negative")
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum(degrees + 1)]))

    @classmethod
    def uniform(cls, N: int, degree: int) -> "DGSpace":
        return cls(np.full(N, degree))

    @classmethod
    def alternating(cls, N: int, pattern: Sequence[int]) -> "DGSpace":
        """Degrees repeating pattern cell by cell, e.g. (r, k) for r:k variation"""
        return cls(np.resize(np.asarray(pattern, dtype=int), N))

    @property
    def n_cells(self) -> int:
        return self.degrees.size

    @property
    def n_dofs(self) -> int:
        return int(self.offsets[-1])

    def uniform_degree(self) -> Optional[int]:
        k = self.degrees[0]
        return int(k) if np.all(self.degrees == k) else None

    def groups(self) -> Dict[int, np.ndarray]:
        """Cell indices grouped by degree"""
        return {int(k): np.flatnonzero(self.degrees == k) for k in np.unique(self.degrees)}

    def cell_dofs(self, cells: np.ndarray, degree: int) -> np.ndarray:
        return self.offsets[cells][:, None] + np.arange(degree + 1)


@lru_cache(maxsize=None)
def gauss(npts: int) -> Tuple[np.ndarray, np.ndarray]:
    return legendre.leggauss(npts)


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Nodal Lagrange basis on [-1, 1] at Gauss-Lobatto points"""
    degree: int
    nodes: np.ndarray
    vinv: np.ndarray
    mass: np.ndarray
    mass_inv: np.ndarray
    convection: np.ndarray   # K[i, m] = int l_i' l_m
    stiffness: np.ndarray    # S[i, m] = int l_i' l_m'
    left: np.ndarray
    right: np.ndarray
    dleft: np.ndarray
    dright: np.ndarray
    weights: np.ndarray      # int l_i over [-1, 1]

    def basis(self, r: np.ndarray) -> np.ndarray:
        return legendre.legvander(np.atleast_1d(r), self.degree) @ self.vinv

    def basis_deriv(self, r: np.ndarray) -> np.ndarray:
        r = np.atleast_1d(r)
        cols = [legendre.legval(r, legendre.legder(np.eye(self.degree + 1)[j]))
                if j else np.zeros_like(r) for j in range(self.degree + 1)]
        return np.column_stack(cols) @ self.vinv


def gll_nodes(degree: int) -> np.ndarray:
    if degree == 0:
        return np.zeros(1)
    inner = legendre.Legendre.basis(degree).deriv().roots()
    return np.concatenate([[-1.0], np.sort(np.real(inner)), [1.0]])


@lru_cache(maxsize=None)
def reference_element(degree: int) -> ReferenceElement:
    nodes = gll_nodes(degree)
    vinv = np.linalg.inv(legendre.legvander(nodes, degree))
    partial = ReferenceElement(degree, nodes, vinv, *([None] * 9))

    r, w = gauss(degree + 1)
    B, dB = partial.basis(r), partial.basis_deriv(r)
    mass = (B * w[:, None]).T @ B
    ends = np.array([-1.0, 1.0])
    traces, dtraces = partial.basis(ends), partial.basis_deriv(ends)
    return ReferenceElement(
        degree=degree,
        nodes=nodes,
        vinv=vinv,
        mass=mass,
        mass_inv=np.linalg.inv(mass),
        convection=(dB * w[:, None]).T @ B,
        stiffness=(dB * w[:, None]).T @ dB,
        left=traces[0],
        right=traces[1],
        dleft=dtraces[0],
        dright=dtraces[1],
        weights=w @ B,
    )


class _BlockAssembler:
    def __init__(self, n: int):
        self.n = n
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []

    def add(self, r0: int, c0: int, block: np.ndarray):
        block = np.atleast_2d(block)
        rr, cc = np.meshgrid(np.arange(r0, r0 + block.shape[0]),
                             np.arange(c0, c0 + block.shape[1]), indexing="ij")
        self.rows.append(rr.ravel())
        self.cols.append(cc.ravel())
        self.vals.append(block.ravel())

    def tocsr(self) -> sp.csr_matrix:
        if not self.vals:
            return sp.csr_matrix((self.n, self.n))
        coo = sp.coo_matrix((np.concatenate(self.vals),
                             (np.concatenate(self.rows), np.concatenate(self.cols))),
                            shape=(self.n, self.n))
        return coo.tocsr()


def _check_periodic(mesh: Mesh1D, space: DGSpace):
    if not mesh.periodic:
        raise MeshError("Only periodic meshes are supported")
    if space.n_cells != mesh.N:
        raise MeshError(f"Space has {space.n_cells} cells, mesh has {mesh.N}")


def mass_matrix(mesh: Mesh1D, space: DGSpace, inverse: bool = False) -> sp.csr_matrix:
    widths = mesh.widths()
    blocks = []
    for j, k in enumerate(space.degrees):
        ref = reference_element(int(k))
        blocks.append(ref.mass_inv * (2.0 / widths[j]) if inverse else ref.mass * (widths[j] / 2.0))
    return sp.block_diag(blocks, format="csr")


def _interfaces(mesh: Mesh1D, space: DGSpace):
    """Yield (left cell, right cell, left ref, right ref) for every periodic interface"""
    N = mesh.N
    for j in range(N):
        right = (j + 1) % N
        yield (j, right, reference_element(int(space.degrees[j])),
               reference_element(int(space.degrees[right])))


def _weak_gradient(mesh: Mesh1D, space: DGSpace, alpha_minus: float, alpha_plus: float) -> sp.csr_matrix:
    """Matrix of -int u v' + u_hat v|_R - u_hat v|_L with u_hat = a- u^- + a+ u^+"""
    asm = _BlockAssembler(space.n_dofs)
    off = space.offsets
    for j, k in enumerate(space.degrees):
        asm.add(off[j], off[j], -reference_element(int(k)).convection)
    for L, R, refL, refR in _interfaces(mesh, space):
        flux_L = alpha_minus * refL.right
        flux_R = alpha_plus * refR.left
        asm.add(off[L], off[L], np.outer(refL.right, flux_L))
        asm.add(off[L], off[R], np.outer(refL.right, flux_R))
        asm.add(off[R], off[L], -np.outer(refR.left, flux_L))
        asm.add(off[R], off[R], -np.outer(refR.left, flux_R))
    return asm.tocsr()


@dataclass(frozen=True, eq=False)
class DGOperator:
    matrix: sp.csr_matrix
    kind: str
    coefficient: float
    mesh: Mesh1D
    space: DGSpace
    mass: sp.csr_matrix
    flux: FluxChoice

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Quadrature vector w with w . u = integral of u_h"""
        return np.asarray(self.mass.sum(axis=0)).ravel()

    def stiffness(self) -> sp.csr_matrix:
        return (self.mass @ self.matrix).tocsr()

    def mass_symmetric(self, rtol: float = 1e-12) -> bool:
        """True when M @ matrix is symmetric, i.e. the operator is self-adjoint in the L2 product"""
        S = self.stiffness()
        scale = abs(S).max() if S.nnz else 0.0
        return scale == 0.0 or abs(S - S.T).max() <= rtol * scale

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v


def assemble_advection(mesh: Mesh1D, space: DGSpace, flux: Union[FluxChoice, AdvectionFlux, str],
                       a: float) -> DGOperator:
    """Operator A of u_t + A u = 0 for u_t + a u_x = 0"""
    _check_periodic(mesh, space)
    if isinstance(flux, FluxChoice):
        choice = flux
    else:
        try:
            choice = FluxChoice(advection=AdvectionFlux(flux))
        except ValueError:
            raise FluxError(f"Unsupported advection flux: {flux}")
    if choice.advection is AdvectionFlux.CENTRAL:
        alphas = (0.5, 0.5)
    else:
        alphas = (1.0, 0.0) if a >= 0 else (0.0, 1.0)
    minv = mass_matrix(mesh, space, inverse=True)
    matrix = (a * (minv @ _weak_gradient(mesh, space, *alphas))).tocsr()
    return DGOperator(matrix, "advection", float(a), mesh, space, mass_matrix(mesh, space), choice)


def _ipdg_stiffness(mesh: Mesh1D, space: DGSpace, choice: FluxChoice, d: float) -> sp.csr_matrix:
    widths = mesh.widths()
    off = space.offsets
    asm = _BlockAssembler(space.n_dofs)
    for j, k in enumerate(space.degrees):
        asm.add(off[j], off[j], -d * (2.0 / widths[j]) * reference_element(int(k)).stiffness)

    eps = choice.epsilon
    for L, R, refL, refR in _interfaces(mesh, space):
        sigma = choice.penalty(d, max(refL.degree, refR.degree))
        if eps in (1, 0) and sigma <= 0:
            raise FluxError(f"SIPG/IIPG need a positive penalty, got sigma={sigma}")
        h_face = 0.5 * (widths[L] + widths[R])
        # [w] = w^- - w^+ ; {w_x} averaged over both sides
        jump = (refL.right, -refR.left)
        avg = (refL.dright / widths[L], refR.dleft / widths[R])
        cells = (L, R)
        for a_i, row in enumerate(cells):
            for b_i, col in enumerate(cells):
                block = (d * np.outer(jump[a_i], avg[b_i])
                         + eps * d * np.outer(avg[a_i], jump[b_i])
                         - (sigma / h_face) * np.outer(jump[a_i], jump[b_i]))
                asm.add(off[row], off[col], block)
    return asm.tocsr()


def assemble_diffusion(mesh: Mesh1D, space: DGSpace, flux: Union[FluxChoice, str], d: float) -> DGOperator:
    """Operator D of u_t = D u for u_t = d u_xx"""
    _check_periodic(mesh, space)
    choice = flux if isinstance(flux, FluxChoice) else FluxChoice.parse(diffusion=flux)
    if d < 0:
        raise ValueError(f"Diffusivity must be non-negative, got d={d}")
    minv = mass_matrix(mesh, space, inverse=True)

    if choice.diffusion is DiffusionFlux.IPDG:
        matrix = minv @ _ipdg_stiffness(mesh, space, choice, d)
    else:
        if choice.diffusion is DiffusionFlux.LDG_ALTERNATING:
            alpha_u, alpha_p = (1.0, 0.0), (0.0, 1.0)
        elif choice.diffusion is DiffusionFlux.LDG_CENTRAL:
            alpha_u = alpha_p = (0.5, 0.5)
        else:
            raise FluxError(f"Unsupported diffusion flux: {choice.diffusion}")
        # Auxiliary variable eliminated locally: p = C u, u_t = d B p
        C = minv @ _weak_gradient(mesh, space, *alpha_u)
        B = minv @ _weak_gradient(mesh, space, *alpha_p)
        matrix = d * (B @ C)
    return DGOperator(sp.csr_matrix(matrix), "diffusion", float(d), mesh, space,
                      mass_matrix(mesh, space), choice)


@dataclass(frozen=True, eq=False)
class BlockStencil:
    offsets: List[int]
    blocks: List[np.ndarray]
    h: float
    mass: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.blocks[0].shape[0]

    def block(self, offset: int) -> np.ndarray:
        if offset in self.offsets:
            return self.blocks[self.offsets.index(offset)]
        return np.zeros((self.size, self.size))


def reassemble(stencil: BlockStencil, N: int) -> sp.csr_matrix:
    """Block-circulant matrix with row block j = sum_m blocks[m] at column block j+m"""
    n = stencil.size
    total = sp.csr_matrix((N * n, N * n))
    idx = np.arange(N)
    for m, block in zip(stencil.offsets, stencil.blocks):
        shift = sp.csr_matrix((np.ones(N), (idx, (idx + m) % N)), shape=(N, N))
        total = total + sp.kron(shift, block, format="csr")
    return total.tocsr()


def extract_stencil(op: DGOperator, space: Optional[DGSpace] = None) -> BlockStencil:
    space = space or op.space
    k = space.uniform_degree()
    if k is None or not op.mesh.uniform():
        raise StencilError("Stencil extraction needs a uniform mesh and a uniform degree")
    n, N = k + 1, space.n_cells
    j0 = N // 2
    rows = op.matrix[j0 * n:(j0 + 1) * n, :].toarray().reshape(n, N, n)

    found: Dict[int, np.ndarray] = {}
    for c in range(N):
        block = rows[:, c, :]
        if np.any(block != 0.0):
            m = (c - j0 + N // 2) % N - N // 2
            found[m] = block.copy()
    offsets = sorted(found)
    mass_rows = op.mass[j0 * n:(j0 + 1) * n, j0 * n:(j0 + 1) * n].toarray()
    stencil = BlockStencil(offsets, [found[m] for m in offsets], float(op.mesh.h), mass_rows)

    diff = reassemble(stencil, N) - op.matrix
    scale = max(abs(op.matrix).max(), 1.0) if op.matrix.nnz else 1.0
    if diff.nnz and abs(diff).max() > STENCIL_RTOL * scale:
        raise StencilError("Operator is not translation invariant")
    return stencil


def project_initial(f: ScalarField, mesh: Mesh1D, space: DGSpace) -> np.ndarray:
    """Cell-wise L2 projection with k+2 Gauss points"""
    u = np.zeros(space.n_dofs)
    widths, centers = mesh.widths(), mesh.centers()
    for k, cells in space.groups().items():
        ref = reference_element(k)
        r, w = gauss(k + 2)
        x = centers[cells][:, None] + 0.5 * widths[cells][:, None] * r
        fx = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
        u[space.cell_dofs(cells, k)] = (fx * w) @ ref.basis(r) @ ref.mass_inv
    return u


def l2_error(state: np.ndarray, exact: ScalarField, mesh: Mesh1D, space: DGSpace) -> float:
    total = 0.0
    widths, centers = mesh.widths(), mesh.centers()
    for k, cells in space.groups().items():
        ref = reference_element(k)
        r, w = gauss(k + 3)
        x = centers[cells][:, None] + 0.5 * widths[cells][:, None] * r
        uh = state[space.cell_dofs(cells, k)] @ ref.basis(r).T
        err = uh - np.broadcast_to(np.asarray(exact(x), dtype=float), x.shape)
        total += float(np.sum(0.5 * widths[cells] * ((err ** 2) @ w)))
    return float(np.sqrt(total))


def nodal_coordinates(mesh: Mesh1D, space: DGSpace) -> np.ndarray:
    x = np.zeros(space.n_dofs)
    widths, centers = mesh.widths(), mesh.centers()
    for k, cells in space.groups().items():
        nodes = reference_element(k).nodes
        x[space.cell_dofs(cells, k)] = centers[cells][:, None] + 0.5 * widths[cells][:, None] * nodes
    return x


def cell_averages(state: np.ndarray, mesh: Mesh1D, space: DGSpace) -> np.ndarray:
    avg = np.zeros(space.n_cells)
    for k, cells in space.groups().items():
        avg[cells] = 0.5 * state[space.cell_dofs(cells, k)] @ reference_element(k).weights
    return avg


def _interface_flux(flux_fn: ScalarField, um: np.ndarray, up: np.ndarray,
                    numflux: NumFlux, alpha: Optional[float]) -> np.ndarray:
    fhat = 0.5 * (flux_fn(um) + flux_fn(up))
    if numflux is NumFlux.LAX_FRIEDRICHS:
        if alpha is None:
            raise FluxError("Lax-Friedrichs flux needs a dissipation speed alpha")
        fhat = fhat - 0.5 * alpha * (up - um)
    return fhat


def eval_convection(state: np.ndarray, mesh: Mesh1D, space: DGSpace, flux_fn: ScalarField,
                    numflux: Union[NumFlux, str] = NumFlux.CENTRAL,
                    alpha: Optional[float] = None) -> np.ndarray:
    """F(u) = -(DG divergence of f(u_h)), volume terms with k+2 Gauss points"""
    numflux = NumFlux(numflux)
    widths = mesh.widths()
    N = space.n_cells
    u_minus = np.zeros(N)   # right trace of each cell
    u_plus = np.zeros(N)    # left trace of each cell
    volume = {}
    groups = space.groups()
    for k, cells in groups.items():
        ref = reference_element(k)
        r, w = gauss(k + 2)
        U = state[space.cell_dofs(cells, k)]
        fq = flux_fn(U @ ref.basis(r).T)
        volume[k] = fq @ (w[:, None] * ref.basis_deriv(r))
        u_minus[cells] = U @ ref.right
        u_plus[cells] = U @ ref.left

    # fhat[j] lives on the interface between cells j and j+1
    fhat = _interface_flux(flux_fn, u_minus, np.roll(u_plus, -1), numflux, alpha)
    fhat_left = np.roll(fhat, 1)

    out = np.zeros_like(state, dtype=float)
    for k, cells in groups.items():
        ref = reference_element(k)
        rhs = (volume[k] - fhat[cells][:, None] * ref.right
               + fhat_left[cells][:, None] * ref.left)
        out[space.cell_dofs(cells, k)] = (rhs @ ref.mass_inv) * (2.0 / widths[cells])[:, None]
    return out


@dataclass(frozen=True, eq=False)
class Convection1D:
    """Callable F(u) for a fixed flux function"""
    mesh: Mesh1D
    space: DGSpace
    flux_fn: ScalarField
    numflux: NumFlux = NumFlux.CENTRAL
    alpha: Optional[float] = None

    def __call__(self, state: np.ndarray) -> np.ndarray:
        return eval_convection(state, self.mesh, self.space, self.flux_fn, self.numflux, self.alpha)


@dataclass(frozen=True, eq=False)
class LinearConvection:
    """F(u) = -A u for an assembled advection operator"""
    advection: DGOperator

    def __call__(self, state: np.ndarray) -> np.ndarray:
        return -(self.advection.matrix @ state)


@dataclass(frozen=True, eq=False)
class TensorDiffusion:
    """Kronecker sum Dy (x) I + I (x) Dx on the row-major layout U[Y, X]"""
    x_op: DGOperator
    y_op: DGOperator
    matrix: sp.csr_matrix
    kind: str = "diffusion"

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.y_op.n, self.x_op.n

    @property
    def coefficient(self) -> float:
        return self.x_op.coefficient

    @property
    def weights(self) -> np.ndarray:
        return np.kron(self.y_op.weights, self.x_op.weights)

    @property
    def mass(self) -> sp.csr_matrix:
        return sp.kron(self.y_op.mass, self.x_op.mass, format="csr")

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v


def kronecker_sum(x_op: DGOperator, y_op: DGOperator) -> TensorDiffusion:
    Ix = sp.identity(x_op.n, format="csr")
    Iy = sp.identity(y_op.n, format="csr")
    matrix = sp.kron(y_op.matrix, Ix, format="csr") + sp.kron(Iy, x_op.matrix, format="csr")
    return TensorDiffusion(x_op, y_op, matrix.tocsr())


@dataclass(frozen=True, eq=False)
class Convection2D:
    """F(u) = -(f1(u)_x + f2(u)_y) with tensor Gauss quadrature of k+2 points per direction"""
    mesh_x: Mesh1D
    mesh_y: Mesh1D
    degree: int
    f1: ScalarField
    f2: ScalarField
    numflux: NumFlux = NumFlux.CENTRAL
    alpha: Optional[float] = None

    def __call__(self, state: np.ndarray) -> np.ndarray:
        k = self.degree
        ref = reference_element(k)
        hx, hy = self.mesh_x.h, self.mesh_y.h
        C = to_cells_2d(state, self.mesh_x.N, self.mesh_y.N, k)
        r, w = gauss(k + 2)
        B, dB = ref.basis(r), ref.basis_deriv(r)
        Bw, dBw = w[:, None] * B, w[:, None] * dB

        Uq = np.einsum("qa,yxab,pb->yxqp", B, C, B, optimize=True)
        rhs = (0.5 * hy) * np.einsum("yxqp,qa,pb->yxab", self.f1(Uq), Bw, dBw, optimize=True)
        rhs += (0.5 * hx) * np.einsum("yxqp,qa,pb->yxab", self.f2(Uq), dBw, Bw, optimize=True)

        # x faces: traces sampled at the y quadrature points
        right_x = np.einsum("qa,yxab,b->yxq", B, C, ref.right, optimize=True)
        left_x = np.einsum("qa,yxab,b->yxq", B, C, ref.left, optimize=True)
        fx = _interface_flux(self.f1, right_x, np.roll(left_x, -1, axis=1), self.numflux, self.alpha)
        rhs -= (0.5 * hy) * np.einsum("yxq,qa,b->yxab", fx, Bw, ref.right, optimize=True)
        rhs += (0.5 * hy) * np.einsum("yxq,qa,b->yxab", np.roll(fx, 1, axis=1), Bw, ref.left,
                                      optimize=True)

        # y faces
        top = np.einsum("a,yxab,pb->yxp", ref.right, C, B, optimize=True)
        bottom = np.einsum("a,yxab,pb->yxp", ref.left, C, B, optimize=True)
        fy = _interface_flux(self.f2, top, np.roll(bottom, -1, axis=0), self.numflux, self.alpha)
        rhs -= (0.5 * hx) * np.einsum("yxp,a,pb->yxab", fy, ref.right, Bw, optimize=True)
        rhs += (0.5 * hx) * np.einsum("yxp,a,pb->yxab", np.roll(fy, 1, axis=0), ref.left, Bw,
                                      optimize=True)

        out = (4.0 / (hx * hy)) * np.einsum("ac,yxcd,db->yxab", ref.mass_inv, rhs, ref.mass_inv,
                                            optimize=True)
        return from_cells_2d(out)


def to_cells_2d(state: np.ndarray, Nx: int, Ny: int, degree: int) -> np.ndarray:
    """Global row-major vector -> (Ny, Nx, k+1, k+1) cell coefficients"""
    n = degree + 1
    return state.reshape(Ny, n, Nx, n).transpose(0, 2, 1, 3)


def from_cells_2d(cells: np.ndarray) -> np.ndarray:
    Ny, Nx, n, _ = cells.shape
    return cells.transpose(0, 2, 1, 3).reshape(Ny * n * Nx * n)


@dataclass(frozen=True, eq=False)
class DG2D:
    mesh_x: Mesh1D
    mesh_y: Mesh1D
    degree: int
    flux: FluxChoice
    diffusion: TensorDiffusion

    @property
    def n_dofs(self) -> int:
        return self.diffusion.n

    def convection(self, f1: ScalarField, f2: ScalarField,
                   numflux: Union[NumFlux, str] = NumFlux.CENTRAL,
                   alpha: Optional[float] = None) -> Convection2D:
        return Convection2D(self.mesh_x, self.mesh_y, self.degree, f1, f2, NumFlux(numflux), alpha)

    def project(self, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        return project_initial_2d(f, self.mesh_x, self.mesh_y, self.degree)

    def cell_averages(self, state: np.ndarray) -> np.ndarray:
        wts = reference_element(self.degree).weights
        C = to_cells_2d(state, self.mesh_x.N, self.mesh_y.N, self.degree)
        return 0.25 * np.einsum("a,yxab,b->yx", wts, C, wts)


def assemble_2d(mesh_x: Mesh1D, mesh_y: Mesh1D, degree: Union[int, Sequence[int]],
                flux: FluxChoice, d: float) -> DG2D:
    """Q^k tensor discretization: Kronecker-sum diffusion plus a per-direction convection evaluator"""
    degrees = np.unique(np.atleast_1d(degree))
    if degrees.size != 1:
        raise MeshError("Mixed polynomial degrees are not supported in 2D")
    k = int(degrees[0])
    if not (mesh_x.uniform() and mesh_y.uniform()):
        raise MeshError("2D assembly needs uniform rectangular meshes")
    x_op = assemble_diffusion(mesh_x, DGSpace.uniform(mesh_x.N, k), flux, d)
    y_op = assemble_diffusion(mesh_y, DGSpace.uniform(mesh_y.N, k), flux, d)
    return DG2D(mesh_x, mesh_y, k, flux, kronecker_sum(x_op, y_op))


def project_initial_2d(f: Callable[[np.ndarray, np.ndarray], np.ndarray], mesh_x: Mesh1D,
                       mesh_y: Mesh1D, degree: int) -> np.ndarray:
    ref = reference_element(degree)
    r, w = gauss(degree + 2)
    X = mesh_x.centers()[:, None] + 0.5 * mesh_x.widths()[:, None] * r
    Y = mesh_y.centers()[:, None] + 0.5 * mesh_y.widths()[:, None] * r
    fq = np.broadcast_to(np.asarray(f(X[None, :, None, :], Y[:, None, :, None]), dtype=float),
                         (mesh_y.N, mesh_x.N, r.size, r.size))
    Bw = w[:, None] * ref.basis(r)
    G = np.einsum("yxqp,qc,pd->yxcd", fq, Bw, Bw, optimize=True)
    C = np.einsum("ac,yxcd,db->yxab", ref.mass_inv, G, ref.mass_inv, optimize=True)
    return from_cells_2d(C)
