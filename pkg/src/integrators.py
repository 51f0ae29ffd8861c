"""
ETDG Time Integrators
ETD-RK1..4 and IMEX ARS(1,1,1), ARS(2,2,2), ARS(4,4,3) on u_t = D u + F(u)
"""

import math
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from tqdm import tqdm

from src.errors import LinearSolveError
from src.matfunc import KRYLOV_TOL, PhiPropagator, propagator_for

IMEX2_GAMMA = 1.0 - math.sqrt(2.0) / 2.0
IMEX2_DELTA = -math.sqrt(2.0) / 2.0
IMEX3_DIAGONAL = 0.5

BLOWUP_THRESHOLD = 1e6
SOLVE_RTOL = 1e-12


class Family(Enum):
    ETD = "ETD"
    IMEX = "IMEX"


MAX_ORDER = {Family.ETD: 4, Family.IMEX: 3}


@dataclass(frozen=True)
class SchemeSpec:
    family: Family
    order: int

    def __post_init__(self):
        if not 1 <= self.order <= MAX_ORDER[self.family]:
            raise ValueError(f"{self.family.value}-RK order must be 1..{MAX_ORDER[self.family]}, "
                             f"got {self.order}")

    @classmethod
    def parse(cls, name: str) -> "SchemeSpec":
        """Accepts ETD-RK4, etd4, imex-rk2, ..."""
        match = re.fullmatch(r"(etd|imex)[-_]?(?:rk)?[-_]?(\d)", name.strip().lower())
        if not match:
            raise ValueError(f"Unknown scheme: {name}")
        return cls(Family(match.group(1).upper()), int(match.group(2)))

    @property
    def name(self) -> str:
        return f"{self.family.value}-RK{self.order}"

    @property
    def coefficients(self) -> Dict[str, float]:
        if self.family is Family.IMEX and self.order == 2:
            return {"gamma": IMEX2_GAMMA, "delta": IMEX2_DELTA}
        if self.family is Family.IMEX and self.order == 3:
            return {"diagonal": IMEX3_DIAGONAL}
        return {}

    def __str__(self) -> str:
        return self.name


ETD_SCHEMES = [SchemeSpec(Family.ETD, r) for r in range(1, 5)]
IMEX_SCHEMES = [SchemeSpec(Family.IMEX, r) for r in range(1, 4)]


def default_cfl(degree: int) -> float:
    """CFL constant of explicit RKDG for pure advection, 1/(2k+1)"""
    return 1.0 / (2 * degree + 1)


class StageSystem(Protocol):
    """What the stage algebra needs from a semidiscrete system u_t = D u + F(u)"""
    tau: float

    def F(self, u): ...

    def phi_step(self, c: float, v0, terms: Sequence): ...

    def implicit_stage(self, c: float, rhs) -> Tuple[Any, Any]: ...


# ETD-RK stages: phi_step(c, v, g) = e^{c tau D} v + c tau sum_j phi_j(c tau D) g_j

def _etd1(s: StageSystem, u):
    return s.phi_step(1.0, u, [s.F(u)])


def _etd2(s: StageSystem, u):
    Fu = s.F(u)
    a = s.phi_step(1.0, u, [Fu])
    Fa = s.F(a)
    return s.phi_step(1.0, u, [Fu, Fa - Fu])


def _etd3(s: StageSystem, u):
    Fu = s.F(u)
    a = s.phi_step(0.5, u, [Fu])
    Fa = s.F(a)
    b = s.phi_step(1.0, u, [2.0 * Fa - Fu])
    Fb = s.F(b)
    return s.phi_step(1.0, u, [Fu,
                               4.0 * Fa - 3.0 * Fu - Fb,
                               4.0 * Fu - 8.0 * Fa + 4.0 * Fb])


def _etd4(s: StageSystem, u):
    Fu = s.F(u)
    a = s.phi_step(0.5, u, [Fu])
    Fa = s.F(a)
    b = s.phi_step(0.5, u, [Fa])
    Fb = s.F(b)
    c = s.phi_step(0.5, a, [2.0 * Fb - Fu])
    Fc = s.F(c)
    return s.phi_step(1.0, u, [Fu,
                               2.0 * Fa + 2.0 * Fb - 3.0 * Fu - Fc,
                               4.0 * Fu - 4.0 * Fa - 4.0 * Fb + 4.0 * Fc])


# IMEX stages: implicit_stage(c, r) = (x, tau D x) with (I - c tau D) x = r

def _imex1(s: StageSystem, u):
    x, _ = s.implicit_stage(1.0, u + s.tau * s.F(u))
    return x


def _imex2(s: StageSystem, u):
    g, dl, t = IMEX2_GAMMA, IMEX2_DELTA, s.tau
    Fu = s.F(u)
    a, tDa = s.implicit_stage(g, u + (t * g) * Fu)
    Fa = s.F(a)
    x, _ = s.implicit_stage(g, u + (t * dl) * Fu + (t * (1.0 - dl)) * Fa + (1.0 - g) * tDa)
    return x


def _imex3(s: StageSystem, u):
    c, t = IMEX3_DIAGONAL, s.tau
    Fu = s.F(u)
    a, tDa = s.implicit_stage(c, u + (t / 2.0) * Fu)
    Fa = s.F(a)
    b, tDb = s.implicit_stage(c, u + t * ((11.0 / 18.0) * Fu + (1.0 / 18.0) * Fa) + (1.0 / 6.0) * tDa)
    Fb = s.F(b)
    cc, tDc = s.implicit_stage(c, u + t * ((5.0 / 6.0) * Fu - (5.0 / 6.0) * Fa + 0.5 * Fb)
                               - 0.5 * tDa + 0.5 * tDb)
    Fc = s.F(cc)
    x, _ = s.implicit_stage(c, u + t * (0.25 * Fu + 1.75 * Fa + 0.75 * Fb - 1.75 * Fc)
                            + 1.5 * tDa - 1.5 * tDb + 0.5 * tDc)
    return x


STAGES: Dict[Tuple[Family, int], Callable] = {
    (Family.ETD, 1): _etd1,
    (Family.ETD, 2): _etd2,
    (Family.ETD, 3): _etd3,
    (Family.ETD, 4): _etd4,
    (Family.IMEX, 1): _imex1,
    (Family.IMEX, 2): _imex2,
    (Family.IMEX, 3): _imex3,
}


def advance(scheme: SchemeSpec, system: StageSystem, u):
    """One step of scheme on any StageSystem (full DG vectors or batched modal matrices)"""
    return STAGES[(scheme.family, scheme.order)](system, u)


class DGSystem:
    """Full semidiscrete DG system with linear diffusion D and convection F"""

    def __init__(self, D, F: Optional[Callable[[np.ndarray], np.ndarray]], tau: float,
                 method: str = "auto", tol: float = KRYLOV_TOL):
        if tau <= 0:
            raise ValueError(f"Time step must be positive, got tau={tau}")
        self.D = D
        self.convection = F
        self.tau = float(tau)
        self.method = method
        self.tol = tol
        self._propagator: Optional[PhiPropagator] = None
        self._factors: Dict[float, Any] = {}
        self._lock = threading.Lock()

    @property
    def propagator(self) -> PhiPropagator:
        if self._propagator is None:
            self._propagator = propagator_for(self.D, self.method, self.tol)
        return self._propagator

    @property
    def matrix(self) -> sp.csr_matrix:
        return self.D.matrix if hasattr(self.D, "matrix") else sp.csr_matrix(self.D)

    def with_tau(self, tau: float) -> "DGSystem":
        other = DGSystem(self.D, self.convection, tau, self.method, self.tol)
        other._propagator = self._propagator
        return other

    def F(self, u: np.ndarray) -> np.ndarray:
        if self.convection is None:
            return np.zeros_like(u)
        return self.convection(u)

    def phi_step(self, c, v0, terms):
        return self.propagator.step(c * self.tau, v0, terms)

    def solve(self, c: float, rhs: np.ndarray) -> np.ndarray:
        """(I - c tau D)^{-1} rhs by sparse LU, factorizations cached per c"""
        coef = c * self.tau
        A = self.matrix
        with self._lock:
            if coef not in self._factors:
                system = (sp.identity(A.shape[0], format="csc") - coef * A).tocsc()
                try:
                    self._factors[coef] = splu(system)
                except RuntimeError as e:
                    raise LinearSolveError(f"Factorization of I - {coef:.3e} D failed: {e}")
            lu = self._factors[coef]
        x = lu.solve(rhs)
        residual = rhs - (x - coef * (A @ x))
        scale = np.linalg.norm(rhs) + coef * abs(A).sum(axis=1).max() * np.linalg.norm(x)
        if not np.all(np.isfinite(x)) or np.linalg.norm(residual) > SOLVE_RTOL * max(scale, 1e-300):
            raise LinearSolveError(f"Implicit solve residual {np.linalg.norm(residual):.3e} "
                                   f"exceeds tolerance (c*tau={coef:.3e})")
        return x

    def implicit_stage(self, c, rhs):
        x = self.solve(c, rhs)
        return x, (1.0 / c) * (x - rhs)


def _check_family(scheme: SchemeSpec, family: Family):
    if scheme.family is not family:
        raise ValueError(f"{scheme.name} is not an {family.value} scheme")


def step_etd(scheme: SchemeSpec, state: np.ndarray, tau: float, D,
             F: Optional[Callable] = None, method: str = "auto") -> np.ndarray:
    _check_family(scheme, Family.ETD)
    return advance(scheme, DGSystem(D, F, tau, method), state)


def step_imex(scheme: SchemeSpec, state: np.ndarray, tau: float, D,
              F: Optional[Callable] = None) -> np.ndarray:
    _check_family(scheme, Family.IMEX)
    return advance(scheme, DGSystem(D, F, tau), state)


@dataclass
class IntegrationRun:
    state: np.ndarray
    t: float
    tau: float
    system: DGSystem
    norm_history: List[Tuple[float, float, float]] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    status: str = "running"
    steps: int = 0

    @classmethod
    def start(cls, state: np.ndarray, system: DGSystem, t0: float = 0.0,
              config: Optional[Dict[str, Any]] = None) -> "IntegrationRun":
        run = cls(np.asarray(state, dtype=float).copy(), float(t0), system.tau, system,
                  config=dict(config or {}))
        run.record()
        return run

    def norms(self) -> Tuple[float, float]:
        """(max-norm, L2 norm sqrt(u^T M u))"""
        mass = getattr(self.system.D, "mass", None)
        l2 = float(np.sqrt(abs(self.state @ (mass @ self.state)))) if mass is not None \
            else float(np.linalg.norm(self.state))
        return float(np.max(np.abs(self.state))), l2

    def record(self):
        self.norm_history.append((self.t, *self.norms()))

    @property
    def blown_up(self) -> bool:
        return self.status == "blown-up"


def integrate(run: IntegrationRun, scheme: SchemeSpec, T: float, progress: bool = False,
              blowup: float = BLOWUP_THRESHOLD) -> IntegrationRun:
    """Fixed-step time loop; the last step is shortened to land on T"""
    if T <= run.t:
        raise ValueError(f"Final time {T} must exceed current time {run.t}")
    n_steps = int(math.ceil((T - run.t) / run.tau - 1e-9))
    last = None
    bar = tqdm(range(n_steps), desc=scheme.name, disable=not progress, leave=False)
    for i in bar:
        dt = min(run.tau, T - run.t)
        if i == n_steps - 1 and dt != run.tau:
            last = last or run.system.with_tau(dt)
            system = last
        else:
            system = run.system
        run.state = advance(scheme, system, run.state)
        run.t = T if i == n_steps - 1 else run.t + dt
        run.steps += 1
        run.record()
        max_norm = run.norm_history[-1][1]
        if not np.isfinite(max_norm) or max_norm > blowup:
            run.status = "blown-up"
            bar.close()
            return run
    run.status = "completed"
    return run
