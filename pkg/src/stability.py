"""
ETDG Stability
Critical time-step search and spectral-radius scans over phases and mesh sizes
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.dg_core import FluxChoice
from src.errors import BracketError, ConfigError, MultipleCrossingError
from src.integrators import Family, SchemeSpec, default_cfl
from src.symbols import rho_curve, rho_extended, unit_stencils

VERDICT_TOL = 1e-12
# Maxima this close to 1 are recomputed in extended precision
EXTENDED_BAND = 1e-9

XI_SAMPLES = 4001
OMEGA_MAX = 50.0
SMALL_OMEGA = np.logspace(-6, -1, 401)
GOLDEN_TOL = 1e-10
REFINE_PEAKS = 8
SEARCH_DECIMALS = 3
REPORT_DECIMALS = 2
BELOW_CHECKS = 6

DEFAULT_H_GRID = tuple(math.pi / 10 ** p for p in range(1, 7))
DEFAULT_BRACKET = (0.5, 6.0)

KNOWN_TAU0: Dict[Family, Dict[int, float]] = {
    Family.ETD: {1: 2.0, 2: 3.93, 3: 4.55, 4: 4.81},
    Family.IMEX: {1: 2.0, 2: 1.38, 3: 3.89},
}

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def known_tau0(scheme: SchemeSpec) -> float:
    """Tabulated dimensionless critical step of a scheme"""
    return KNOWN_TAU0[scheme.family][scheme.order]


@dataclass(frozen=True)
class Spatial:
    """Uniform-degree DG discretization entering the fully discrete analysis"""
    degree: int
    flux: FluxChoice = FluxChoice()

    def __post_init__(self):
        if self.degree < 0:
            raise ConfigError(f"Polynomial degree must be non-negative, got {self.degree}")

    @property
    def stencils(self):
        return unit_stencils(self.degree, self.flux)

    @property
    def label(self) -> str:
        return f"P{self.degree} {self.flux.label}"


@dataclass
class ScanConfig:
    scheme: SchemeSpec
    spatial: Optional[Spatial] = None
    h_grid: Sequence[float] = DEFAULT_H_GRID
    xi_samples: int = XI_SAMPLES
    tau_bracket: Tuple[float, float] = DEFAULT_BRACKET
    decimals: int = SEARCH_DECIMALS
    precision: str = "double"
    threads: int = 1

    def __post_init__(self):
        if self.xi_samples < 1001:
            raise ConfigError(f"xi_samples must be at least 1001, got {self.xi_samples}")
        lo, hi = self.tau_bracket
        if not 0 < lo < hi:
            raise ConfigError(f"tau_bracket must satisfy 0 < lo < hi, got {self.tau_bracket}")
        if self.precision not in ("double", "extended"):
            raise ConfigError(f"Unknown precision: {self.precision}")
        if self.spatial is not None and not self.h_grid:
            raise ConfigError("Fully discrete scans need at least one mesh size")

    @property
    def semidiscrete(self) -> bool:
        return self.spatial is None

    def meshes(self) -> List[Optional[float]]:
        return [None] if self.semidiscrete else [float(h) for h in self.h_grid]

    def xi_grid(self, h: Optional[float]) -> np.ndarray:
        """Folded phase grid on [0, pi]; semidiscrete grids live on [0, OMEGA_MAX]"""
        omega = np.union1d(np.linspace(0.0, OMEGA_MAX, self.xi_samples), SMALL_OMEGA)
        if h is None:
            return omega
        return np.union1d(np.linspace(0.0, math.pi, self.xi_samples), np.clip(h * omega, 0.0, math.pi))

    def rho(self, tau: float, xi: np.ndarray, h: Optional[float]) -> np.ndarray:
        stencils = None if self.semidiscrete else self.spatial.stencils
        return rho_curve(self.scheme, tau, xi, h, stencils)

    def rho_extended(self, tau: float, xi: float, h: Optional[float]) -> float:
        stencils = None if self.semidiscrete else self.spatial.stencils
        return float(rho_extended(self.scheme, tau, xi, h, stencils))


@dataclass
class StabilityReport:
    scheme: SchemeSpec
    tau0: float
    sup_curve: np.ndarray
    verdicts: List[Tuple[float, float, float, bool]] = field(default_factory=list)
    argmax: Tuple[float, Optional[float]] = (0.0, None)
    transition: Tuple[float, float] = (0.0, 0.0)

    def verdict(self, tau: float) -> Optional[bool]:
        """Stable/unstable over the whole h grid, None when tau was never evaluated"""
        rows = [stable for t, _, _, stable in self.verdicts if abs(t - tau) < 1e-12]
        return all(rows) if rows else None

    @property
    def tau0_str(self) -> str:
        return f"{self.tau0:.{REPORT_DECIMALS}f}"


def is_stable(rho: float) -> bool:
    return rho <= 1.0 + VERDICT_TOL


def _local_maxima(rho: np.ndarray) -> np.ndarray:
    padded = np.concatenate(([-np.inf], rho, [-np.inf]))
    peaks = np.nonzero((padded[1:-1] >= padded[:-2]) & (padded[1:-1] >= padded[2:]))[0]
    return peaks[np.argsort(rho[peaks])[::-1][:REFINE_PEAKS]]


def _golden_refine(fn: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray):
    """Batched golden-section maximization on independent brackets"""
    a, b = lo.copy(), hi.copy()
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    while np.max(b - a) > GOLDEN_TOL:
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + INV_PHI * (b - a))
        c_new = np.where(left, b - INV_PHI * (b - a), d)
        fd_old, fc_old = fd, fc
        c, d = c_new, d_new
        # one fresh evaluation per bracket: the other point is reused
        fresh = fn(np.where(left, c, d))
        fc = np.where(left, fresh, fd_old)
        fd = np.where(left, fc_old, fresh)
    x = 0.5 * (a + b)
    return x, fn(x)


def _sup_at(cfg: ScanConfig, tau: float, h: Optional[float]) -> Tuple[float, float]:
    """(sup rho, maximizing phase) for one mesh size"""
    xi = cfg.xi_grid(h)
    rho = cfg.rho(tau, xi, h)
    peaks = _local_maxima(rho)
    lo = xi[np.maximum(peaks - 1, 0)]
    hi = xi[np.minimum(peaks + 1, xi.size - 1)]
    x, fx = _golden_refine(lambda p: cfg.rho(tau, p, h), lo, hi)

    cand_xi = np.concatenate((xi[peaks], x))
    cand_rho = np.concatenate((rho[peaks], fx))
    for i in range(cand_rho.size):
        near = abs(cand_rho[i] - 1.0) < EXTENDED_BAND
        if cfg.precision == "extended" or (near and not is_stable(cand_rho[i])):
            cand_rho[i] = cfg.rho_extended(tau, float(cand_xi[i]), h)
    best = int(np.argmax(cand_rho))
    return float(cand_rho[best]), float(cand_xi[best])


def _sup_per_mesh(cfg: ScanConfig, tau: float) -> List[Tuple[Optional[float], float, float]]:
    meshes = cfg.meshes()
    if cfg.threads > 1 and len(meshes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda h: _sup_at(cfg, tau, h), meshes))
    else:
        results = [_sup_at(cfg, tau, h) for h in meshes]
    return [(h, r, x) for h, (r, x) in zip(meshes, results)]


def sup_growth(cfg: ScanConfig, tau: float) -> Tuple[float, Tuple[float, Optional[float]]]:
    """sup over the (xi, h) grid of rho(G(tau, h, xi)) and its (xi*, h*)"""
    per_mesh = _sup_per_mesh(cfg, tau)
    h, rho, xi = max(per_mesh, key=lambda row: row[1])
    return rho, (xi, h)


class _Predicate:
    """Memoized stability verdicts of one search"""

    def __init__(self, cfg: ScanConfig):
        self.cfg = cfg
        self.rows: List[Tuple[float, float, float, bool]] = []
        self.cache: Dict[float, Tuple[bool, float, Tuple[float, Optional[float]]]] = {}

    def __call__(self, tau: float) -> bool:
        tau = round(tau, 12)
        if tau not in self.cache:
            per_mesh = _sup_per_mesh(self.cfg, tau)
            for h, rho, _ in per_mesh:
                self.rows.append((tau, math.nan if h is None else h, rho, is_stable(rho)))
            h, rho, xi = max(per_mesh, key=lambda row: row[1])
            self.cache[tau] = (is_stable(rho), rho, (xi, h))
        return self.cache[tau][0]


def _floor_decimals(x: float, decimals: int) -> float:
    scale = 10 ** decimals
    return math.floor(x * scale + 1e-9) / scale


def find_tau0(cfg: ScanConfig, progress: bool = False) -> StabilityReport:
    """Bisection on tau with sup_growth as the predicate; reported at two decimals"""
    stable = _Predicate(cfg)
    lo, hi = cfg.tau_bracket
    if not stable(lo):
        raise BracketError(f"{cfg.scheme.name}: lower bracket tau={lo} is already unstable")
    if stable(hi):
        raise BracketError(f"{cfg.scheme.name}: upper bracket tau={hi} is still stable")

    resolution = 10.0 ** -cfg.decimals
    steps = max(0, math.ceil(math.log2((hi - lo) / resolution)))
    for _ in tqdm(range(steps), desc=f"τ0 {cfg.scheme.name}", disable=not progress, leave=False):
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid

    unit = 10.0 ** -REPORT_DECIMALS
    tau0 = _floor_decimals(hi, REPORT_DECIMALS)
    if tau0 > lo and not stable(tau0):
        tau0 = tau0 - unit
    tau0 = round(tau0, REPORT_DECIMALS)
    if not stable(tau0) or stable(round(tau0 + unit, REPORT_DECIMALS)):
        raise MultipleCrossingError(f"{cfg.scheme.name}: verdict at tau0={tau0} and tau0+{unit} "
                                    f"does not bracket the transition")
    for tau in np.linspace(cfg.tau_bracket[0], tau0, BELOW_CHECKS + 2)[1:-1]:
        if not stable(float(tau)):
            raise MultipleCrossingError(f"{cfg.scheme.name}: unstable at tau={tau:.4f} below tau0={tau0}")

    _, _, argmax = stable.cache[round(tau0, 12)]
    curve = scan_profile(cfg, tau0, argmax[1])
    return StabilityReport(cfg.scheme, tau0, curve, stable.rows, argmax, (lo, hi))


def scan_profile(cfg: ScanConfig, tau: float, h: Optional[float] = None) -> np.ndarray:
    """Columns (xi, rho^2) at one (tau, h); h defaults to the first mesh of the grid"""
    if tau <= 0:
        raise ValueError(f"Time step must be positive, got tau={tau}")
    if h is None and not cfg.semidiscrete:
        h = cfg.meshes()[0]
    xi = cfg.xi_grid(h)
    return np.column_stack((xi, cfg.rho(tau, xi, h) ** 2))


@dataclass
class RemarkReport:
    scheme: SchemeSpec
    spatial: Spatial
    rows: List[Tuple[float, float, float, bool]] = field(default_factory=list)

    @property
    def any_unstable(self) -> bool:
        return any(not stable for _, _, _, stable in self.rows)

    def __len__(self) -> int:
        return len(self.rows)


def check_imex_cfl_remark(scheme: SchemeSpec, spatial: Spatial, h_range: Sequence[float],
                          c0: Optional[float] = None,
                          tau_of_h: Optional[Callable[[float], float]] = None,
                          xi_samples: int = XI_SAMPLES) -> RemarkReport:
    """Stability of tau = c0 h (or a custom tau(h)) across large mesh sizes"""
    c0 = default_cfl(spatial.degree) if c0 is None else c0
    rule = tau_of_h or (lambda h: c0 * h)
    report = RemarkReport(scheme, spatial)
    for h in h_range:
        tau = float(rule(h))
        cfg = ScanConfig(scheme, spatial, (h,), xi_samples)
        rho, _ = _sup_at(cfg, tau, float(h))
        report.rows.append((float(h), tau, rho, is_stable(rho)))
    return report


def imex_remark_h_range(scheme: SchemeSpec, degree: int, count: int = 8, h_max: float = 1e3,
                        c0: Optional[float] = None) -> np.ndarray:
    """Log-spaced h in [tau0/c0, h_max]"""
    c0 = default_cfl(degree) if c0 is None else c0
    return np.geomspace(known_tau0(scheme) / c0, h_max, count)
