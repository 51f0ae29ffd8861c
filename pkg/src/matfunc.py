"""
ETDG Matrix Functions
phi-functions of scalars and small matrices, and their actions on DG state vectors
"""

import math
import threading
import weakref
from typing import Dict, List, Optional, Sequence, Union

import mpmath
import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from src.dg_core import DGOperator, TensorDiffusion, extract_stencil
from src.errors import KrylovConvergenceError

MAX_ORDER = 3
# Taylor series below |z| < THETA, closed recurrence above
THETA = 0.5
# Series radius per order; the recurrence cancels once per order above phi_1
TAYLOR_RADIUS = {1: THETA, 2: 1.0, 3: 2.0}
TAYLOR_TERMS = 25
EXTENDED_DPS = 34
PHI_MATRIX_MAX_DIM = 64

KRYLOV_TOL = 1e-10
KRYLOV_MAX_DIM = 128
KRYLOV_CHECK_EVERY = 4
KRYLOV_MAX_HALVINGS = 50
# Largest operator decomposed densely by the spectral path
EIGEN_MAX_DOFS = 16000
SELF_ADJOINT_RTOL = 1e-10
PHI_CACHE_SIZE = 16

ExtendedScalar = Union[mpmath.mpf, mpmath.mpc]

# Higham (2005) order-13 Pade coefficients and scaling threshold
PADE13 = (
    64764752532480000,
    32382376266240000,
    7771770303897600,
    1187353796428800,
    129060195264000,
    10559470521600,
    670442572800,
    33522128640,
    1323241920,
    40840800,
    960960,
    16380,
    182,
    1,
)
THETA13 = 5.371920351148152


def _check_order(order: int):
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"phi order must be in 0..{MAX_ORDER}, got {order}")


def _taylor(order: int, z, terms: int = TAYLOR_TERMS):
    # phi_m(z) = sum_j z^j / (j+m)!
    s = 1.0 / math.factorial(order + terms - 1)
    for j in range(terms - 2, -1, -1):
        s = s * z + 1.0 / math.factorial(j + order)
    return s


def _recurrence(order: int, z):
    if order == 0:
        return np.exp(z)
    value = np.expm1(z) / z
    for m in range(1, order):
        value = (value - 1.0 / math.factorial(m)) / z
    return value


def to_extended(x) -> ExtendedScalar:
    with mpmath.workdps(EXTENDED_DPS):
        return mpmath.mpmathify(x)


def extended_str(x: ExtendedScalar, digits: int = 30) -> str:
    with mpmath.workdps(EXTENDED_DPS):
        return mpmath.nstr(x, digits)


def _phi_extended(order: int, z) -> ExtendedScalar:
    with mpmath.workdps(EXTENDED_DPS):
        z = mpmath.mpmathify(z)
        if abs(z) < THETA:
            return mpmath.fsum(z ** j / mpmath.factorial(j + order) for j in range(2 * TAYLOR_TERMS))
        value = mpmath.exp(z)
        for m in range(order):
            value = (value - 1 / mpmath.factorial(m)) / z
        return value


def phi(order: int, z: complex, precision: str = "double"):
    """Scalar phi_order(z); precision 'extended' returns an mpmath number"""
    _check_order(order)
    if precision == "extended":
        return _phi_extended(order, z)
    if precision != "double":
        raise ValueError(f"Unknown precision: {precision}")
    if order == 0:
        return np.exp(z)
    if abs(z) < TAYLOR_RADIUS[order]:
        return _taylor(order, z)
    return _recurrence(order, z)


def phi_array(order: int, z: np.ndarray) -> np.ndarray:
    """Elementwise phi_order over an array"""
    _check_order(order)
    z = np.asarray(z)
    if order == 0:
        return np.exp(z)
    out = np.empty(z.shape, dtype=np.result_type(z, float))
    small = np.abs(z) < TAYLOR_RADIUS[order]
    out[small] = _taylor(order, z[small])
    out[~small] = _recurrence(order, z[~small])
    return out


def _pade13(a: np.ndarray, ident: np.ndarray):
    b = PADE13
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
    return u, v


def expm_pade13(A: np.ndarray) -> np.ndarray:
    """Scaling and squaring with the order-13 Pade approximant, batched over leading axes"""
    A = np.asarray(A)
    n = A.shape[-1]
    flat = A.reshape(-1, n, n).astype(np.result_type(A, float))
    norms = np.abs(flat).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        scales = np.ceil(np.log2(np.maximum(norms, 1e-300) / THETA13))
    scales = np.maximum(scales, 0).astype(int)
    ident = np.eye(n)
    out = np.empty_like(flat)
    for s in np.unique(scales):
        idx = scales == s
        u, v = _pade13(flat[idx] * 2.0 ** -int(s), ident)
        r = np.linalg.solve(v - u, u + v)
        for _ in range(int(s)):
            r = r @ r
        out[idx] = r
    return out.reshape(A.shape)


def _companion(M: np.ndarray, max_order: int) -> np.ndarray:
    n = M.shape[-1]
    size = n * (max_order + 1)
    big = np.zeros(M.shape[:-2] + (size, size), dtype=np.result_type(M, float))
    big[..., :n, :n] = M
    for j in range(max_order):
        big[..., j * n:(j + 1) * n, (j + 1) * n:(j + 2) * n] = np.eye(n)
    return big


def phi_matrices(M: np.ndarray, max_order: int = MAX_ORDER) -> List[np.ndarray]:
    """[phi_0(M), ..., phi_p(M)] from the top block row of one augmented exponential"""
    _check_order(max_order)
    M = np.asarray(M)
    n = M.shape[-1]
    E = expm_pade13(_companion(M, max_order))
    return [E[..., :n, j * n:(j + 1) * n] for j in range(max_order + 1)]


def _self_adjoint(Z: np.ndarray, weight: np.ndarray) -> bool:
    S = weight @ Z
    scale = np.abs(S).max()
    return scale == 0 or np.abs(S - np.conj(np.swapaxes(S, -1, -2))).max() <= SELF_ADJOINT_RTOL * scale


def phi_functions(Z: np.ndarray, max_order: int = MAX_ORDER,
                  weight: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """phi_0..phi_p of a batch of small matrices

    When weight @ Z is Hermitian for an SPD weight, the pencil is diagonalized
    and phi is applied to the eigenvalues; otherwise the augmented exponential is used.
    """
    Z = np.asarray(Z)
    if weight is None or not _self_adjoint(Z, weight):
        return phi_matrices(Z, max_order)
    L = np.linalg.cholesky(weight)
    Linv = np.linalg.inv(L)
    H = Linv @ (weight @ Z) @ Linv.conj().T
    H = 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))
    lam, U = np.linalg.eigh(H)
    left = Linv.conj().T @ U
    right = np.conj(np.swapaxes(U, -1, -2)) @ L.conj().T
    return [(left * phi_array(j, lam)[..., None, :]) @ right for j in range(max_order + 1)]


def phi_matrix(order: int, M: np.ndarray, precision: str = "double"):
    """phi_order(M) for a symbol-sized square matrix"""
    _check_order(order)
    if precision == "extended":
        return phi_matrices_extended(M, order)[order]
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"phi_matrix needs a square matrix, got shape {M.shape}")
    if M.shape[0] > PHI_MATRIX_MAX_DIM:
        raise ValueError(f"Matrix dimension {M.shape[0]} exceeds {PHI_MATRIX_MAX_DIM}; use phi_action")
    return phi_matrices(M, order)[order]


def phi_matrices_extended(M, max_order: int = MAX_ORDER) -> List[mpmath.matrix]:
    """Extended-precision phi_0..phi_p via mpmath's exponential of the augmented matrix"""
    _check_order(max_order)
    with mpmath.workdps(EXTENDED_DPS):
        M = M if isinstance(M, mpmath.matrix) else mpmath.matrix(np.asarray(M).tolist())
        n = M.rows
        if n > PHI_MATRIX_MAX_DIM:
            raise ValueError(f"Matrix dimension {n} exceeds {PHI_MATRIX_MAX_DIM}")
        size = n * (max_order + 1)
        big = mpmath.zeros(size, size)
        for i in range(n):
            for j in range(n):
                big[i, j] = M[i, j]
        for b in range(max_order):
            for i in range(n):
                big[b * n + i, (b + 1) * n + i] = 1
        E = mpmath.expm(big)
        return [E[0:n, j * n:(j + 1) * n] for j in range(max_order + 1)]


class PhiPropagator:
    """Evaluates e^{tD} v0 + t * sum_j phi_j(tD) g_j for a fixed linear operator D"""
    method = "base"

    def __init__(self, n: int):
        self.n = n

    def step(self, t: float, v0: Optional[np.ndarray], terms: Sequence[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def phi_action(self, order: int, t: float, v: np.ndarray) -> np.ndarray:
        _check_order(order)
        if order == 0:
            return self.step(t, v, [])
        terms = [np.zeros_like(v)] * (order - 1) + [v / t]
        return self.step(t, None, terms)

    def phi_sum(self, t: float, terms: Sequence[np.ndarray]) -> np.ndarray:
        return self.step(t, None, terms)


class _DiagonalPropagator(PhiPropagator):
    """Shared caching of phi_j(t * lambda) for diagonalized operators"""

    def __init__(self, n: int):
        super().__init__(n)
        self._cache: Dict[float, List[np.ndarray]] = {}
        self._lock = threading.Lock()

    def _phis(self, t: float) -> List[np.ndarray]:
        with self._lock:
            if t not in self._cache:
                if len(self._cache) >= PHI_CACHE_SIZE:
                    self._cache.clear()
                self._cache[t] = self._compute(t)
            return self._cache[t]

    def _compute(self, t: float) -> List[np.ndarray]:
        raise NotImplementedError


class FourierPropagator(_DiagonalPropagator):
    """Exact path for uniform periodic meshes: DFT block-diagonalization into (k+1)-sized symbols"""
    method = "fourier"

    def __init__(self, op: DGOperator):
        super().__init__(op.n)
        self.stencil = extract_stencil(op)
        self.cells = op.space.n_cells
        self.block = self.stencil.size
        xi = 2.0 * np.pi * np.arange(self.cells) / self.cells
        self.symbols = sum(B[None] * np.exp(1j * m * xi)[:, None, None]
                           for m, B in zip(self.stencil.offsets, self.stencil.blocks))

    def _compute(self, t: float) -> List[np.ndarray]:
        return phi_functions(t * self.symbols, MAX_ORDER, self.stencil.mass)

    def _hat(self, v: np.ndarray) -> np.ndarray:
        return np.fft.fft(v.reshape(self.cells, self.block), axis=0)

    def step(self, t, v0, terms):
        phis = self._phis(t)
        acc = np.zeros((self.cells, self.block), dtype=complex)
        if v0 is not None:
            acc += np.einsum("wij,wj->wi", phis[0], self._hat(v0))
        for j, g in enumerate(terms, start=1):
            acc += t * np.einsum("wij,wj->wi", phis[j], self._hat(g))
        return np.fft.ifft(acc, axis=0).real.ravel()


class SpectralPropagator(_DiagonalPropagator):
    """Generalized symmetric eigendecomposition S V = M V diag(lambda) of an L2-self-adjoint operator"""
    method = "spectral"

    def __init__(self, op: DGOperator):
        super().__init__(op.n)
        S = op.stiffness().toarray()
        M = op.mass.toarray()
        self.lam, self.V = la.eigh(0.5 * (S + S.T), M)
        self.Vinv = self.V.T @ M

    def _compute(self, t):
        return [phi_array(j, t * self.lam) for j in range(MAX_ORDER + 1)]

    def step(self, t, v0, terms):
        phis = self._phis(t)
        acc = np.zeros(self.n)
        if v0 is not None:
            acc += phis[0] * (self.Vinv @ v0)
        for j, g in enumerate(terms, start=1):
            acc += t * phis[j] * (self.Vinv @ g)
        return self.V @ acc


class KroneckerPropagator(_DiagonalPropagator):
    """Tensor-product path: eigenbases of the 1D factors of a Kronecker-sum operator"""
    method = "kronecker"

    def __init__(self, op: TensorDiffusion):
        super().__init__(op.n)
        self.x = SpectralPropagator(op.x_op)
        self.y = SpectralPropagator(op.y_op)
        self.shape = op.shape
        self.lam = self.y.lam[:, None] + self.x.lam[None, :]

    def _compute(self, t):
        return [phi_array(j, t * self.lam) for j in range(MAX_ORDER + 1)]

    def _forward(self, v):
        return self.y.Vinv @ v.reshape(self.shape) @ self.x.Vinv.T

    def step(self, t, v0, terms):
        phis = self._phis(t)
        acc = np.zeros(self.shape)
        if v0 is not None:
            acc += phis[0] * self._forward(v0)
        for j, g in enumerate(terms, start=1):
            acc += t * phis[j] * self._forward(g)
        return (self.y.V @ acc @ self.x.V.T).ravel()


class KrylovPropagator(PhiPropagator):
    """Arnoldi projection of the augmented matrix [[D, W], [0, J]] with time substepping"""
    method = "krylov"

    def __init__(self, matrix, tol: float = KRYLOV_TOL, max_dim: int = KRYLOV_MAX_DIM):
        matrix = matrix.matrix if hasattr(matrix, "matrix") else matrix
        super().__init__(matrix.shape[0])
        self.matrix = sp.csr_matrix(matrix)
        self.tol = tol
        self.max_dim = max_dim

    def step(self, t, v0, terms):
        n, p = self.n, len(terms)
        # W = [w_p, ..., w_1] with w_j = g_j / t^(j-1)
        W = np.column_stack([terms[j] / t ** j for j in range(p - 1, -1, -1)]) if p else None

        def matvec(x):
            out = np.empty_like(x)
            out[:n] = self.matrix @ x[:n]
            if p:
                out[:n] += W @ x[n:]
                out[n:-1] = x[n + 1:]
                out[-1] = 0.0
            return out

        x = np.zeros(n + p)
        if v0 is not None:
            x[:n] = v0
        if p:
            x[-1] = 1.0
        remaining = float(t)
        while remaining > 0.0:
            x, taken = self._advance(matvec, x, remaining, t)
            remaining -= taken
            if remaining <= 1e-15 * t:
                break
        return x[:n]

    def _advance(self, matvec, x, dt, t_total):
        beta = np.linalg.norm(x)
        if beta == 0.0:
            return x, dt
        size = x.size
        m_max = min(self.max_dim, size)
        V = np.zeros((m_max + 1, size))
        H = np.zeros((m_max + 1, m_max))
        V[0] = x / beta
        for j in range(m_max):
            w = matvec(V[j])
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            h_next = np.linalg.norm(w)
            H[j + 1, j] = h_next
            m = j + 1
            breakdown = h_next <= 1e-14 * beta or m == size
            if not breakdown:
                V[j + 1] = w / h_next
            if breakdown or m % KRYLOV_CHECK_EVERY == 0 or m == m_max:
                local_dt = dt
                for _ in range(KRYLOV_MAX_HALVINGS if m == m_max else 1):
                    y, err = self._projected(H[:m, :m], h_next, local_dt, beta, breakdown)
                    if err <= self.tol * beta:
                        return V[:m].T @ y, local_dt
                    local_dt *= 0.5
        raise KrylovConvergenceError(
            f"Krylov projection did not reach tol={self.tol} within {m_max} vectors "
            f"and {KRYLOV_MAX_HALVINGS} step halvings (t={t_total})")

    @staticmethod
    def _projected(Hm, h_next, dt, beta, breakdown):
        m = Hm.shape[0]
        aug = np.zeros((m + 1, m + 1))
        aug[:m, :m] = dt * Hm
        aug[0, m] = 1.0
        E = expm_pade13(aug)
        y = beta * E[:m, 0]
        err = 0.0 if breakdown else beta * h_next * dt * abs(E[m - 1, m])
        return y, err


_PROPAGATORS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()
_PROPAGATORS_LOCK = threading.Lock()


def make_propagator(op, method: str = "auto", tol: float = KRYLOV_TOL,
                    max_dim: int = KRYLOV_MAX_DIM) -> PhiPropagator:
    """Pick the cheapest exact path available for op, falling back to Krylov"""
    if method == "krylov" or not isinstance(op, (DGOperator, TensorDiffusion)):
        return KrylovPropagator(op, tol, max_dim)
    if isinstance(op, TensorDiffusion):
        if method in ("auto", "kronecker") and op.x_op.mass_symmetric() and op.y_op.mass_symmetric():
            return KroneckerPropagator(op)
        return KrylovPropagator(op, tol, max_dim)
    fourier_ok = op.mesh.uniform() and op.space.uniform_degree() is not None
    if method == "fourier" or (method == "auto" and fourier_ok):
        return FourierPropagator(op)
    if method == "spectral" or (method == "auto" and op.n <= EIGEN_MAX_DOFS and op.mass_symmetric()):
        return SpectralPropagator(op)
    return KrylovPropagator(op, tol, max_dim)


def propagator_for(op, method: str = "auto", tol: float = KRYLOV_TOL) -> PhiPropagator:
    """Cached make_propagator for assembled operators"""
    with _PROPAGATORS_LOCK:
        try:
            cached = _PROPAGATORS.get(op)
        except TypeError:
            return make_propagator(op, method, tol)
        if cached is None or (method != "auto" and cached.method != method) or \
                (cached.method == "krylov" and cached.tol != tol):
            cached = make_propagator(op, method, tol)
            _PROPAGATORS[op] = cached
        return cached


def phi_action(order: int, tau: float, D, v: np.ndarray, tol: float = KRYLOV_TOL,
               method: str = "auto") -> np.ndarray:
    """phi_order(tau D) v"""
    _check_order(order)
    if tau <= 0:
        raise ValueError(f"Time step must be positive, got tau={tau}")
    return propagator_for(D, method, tol).phi_action(order, tau, np.asarray(v, dtype=float))
