"""
ETDG Harness
Experiment configurations and runners: accuracy, stability, h-p variation, nonlinear 1D and 2D
"""

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.dg_core import (Convection1D, DGSpace, FluxChoice, Grading, LinearConvection, NumFlux,
                         assemble_2d, assemble_advection, assemble_diffusion, build_mesh,
                         cell_averages, l2_error, nodal_coordinates, project_initial)
from src.errors import ConfigError
from src.integrators import (ETD_SCHEMES, DGSystem, Family, IntegrationRun, SchemeSpec,
                             integrate)
from src.output import write_csv
from src.problems import ProblemSpec, buckley_leverett_1d, buckley_leverett_2d, burgers, linear
from src.stability import known_tau0

TAU_RULES = ("explicit", "tau0", "factor", "h")
VERDICTS = ("stable", "unstable")

ACCURACY_CELLS = (20, 40, 80, 160)
ACCURACY_DEGREES = (0, 1, 2, 3)

STABILITY_N = 2000
STABILITY_T = 20.0
DESK_N = 500
FULL_N = 2000
DESK_N_2D = 100
FULL_N_2D = 600
HP_GRADING = (1.0, 9.0)

TV_GROWTH = 1.5
SELF_CONVERGENCE_L1 = 5e-3
REFINEMENT = 4
RANGE_2D = (-0.1, 1.1)


@dataclass(frozen=True)
class TauRule:
    """tau = value | h | factor * tau0 * d / a^2"""
    kind: str = "tau0"
    factor: float = 1.0
    value: Optional[float] = None
    tau0: Optional[float] = None

    def __post_init__(self):
        if self.kind not in TAU_RULES:
            raise ConfigError(f"Unknown tau rule: {self.kind}; expected one of {', '.join(TAU_RULES)}")
        if self.factor <= 0:
            raise ConfigError(f"tau factor must be positive, got {self.factor}")
        if self.kind == "explicit" and (self.value is None or self.value <= 0):
            raise ConfigError(f"Explicit tau must be positive, got {self.value}")

    @classmethod
    def parse(cls, spec: Union["TauRule", str, float, Dict[str, Any]]) -> "TauRule":
        """'tau0', '1.1*tau0', 'h', 0.05 or a dict of fields"""
        if isinstance(spec, TauRule):
            return spec
        if isinstance(spec, dict):
            return cls(**spec)
        if isinstance(spec, (int, float)):
            return cls("explicit", value=float(spec))
        text = str(spec).strip().lower()
        if text in ("tau0", "h"):
            return cls(text)
        match = re.fullmatch(r"([0-9.eE+-]+)\s*[*x]\s*tau0", text)
        if match:
            return cls("factor", factor=float(match.group(1)))
        try:
            return cls("explicit", value=float(text))
        except ValueError:
            raise ConfigError(f"Cannot parse tau rule: {spec}")

    def resolve(self, scheme: SchemeSpec, a: float, d: float, h: float) -> Tuple[float, Dict[str, Any]]:
        meta: Dict[str, Any] = {"tau_rule": self.kind, "a": a, "d": d, "h": h}
        if self.kind == "explicit":
            tau = float(self.value)
        elif self.kind == "h":
            tau = float(h)
        else:
            if a == 0:
                raise ConfigError("tau0-based step needs a nonzero wave speed a")
            tau0 = known_tau0(scheme) if self.tau0 is None else self.tau0
            tau = self.factor * tau0 * d / a ** 2
            meta.update(tau0=tau0, factor=self.factor)
        meta["tau"] = tau
        return tau, meta

    @property
    def expected(self) -> Optional[str]:
        if self.kind in ("tau0", "factor"):
            return "unstable" if self.factor > 1.0 else "stable"
        return None


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    scheme: SchemeSpec = SchemeSpec(Family.ETD, 4)
    degree: Union[int, Tuple[int, ...]] = 1
    flux: FluxChoice = FluxChoice()
    N: int = STABILITY_N
    grading: Grading = "uniform"
    tau_rule: TauRule = TauRule()
    T: Optional[float] = None
    h: Optional[float] = None
    numflux: NumFlux = NumFlux.CENTRAL
    method: str = "auto"
    output: Optional[Path] = None
    name: Optional[str] = None
    expect: Optional[str] = None
    self_check: bool = True
    verbose: bool = False

    def __post_init__(self):
        self.tau_rule = TauRule.parse(self.tau_rule)
        if self.N < 2:
            raise ConfigError(f"Need at least 2 cells, got N={self.N}")
        if self.T is not None and self.T <= 0:
            raise ConfigError(f"Final time must be positive, got T={self.T}")
        if self.h is not None and self.h <= 0:
            raise ConfigError(f"Mesh size must be positive, got h={self.h}")
        if self.expect not in (None,) + VERDICTS:
            raise ConfigError(f"expect must be one of {VERDICTS}, got {self.expect}")

    @property
    def cells(self) -> int:
        if self.h is None:
            return self.N
        lo, hi = self.problem.domain
        return max(2, int(round((hi - lo) / self.h)))

    @property
    def final_time(self) -> float:
        return self.problem.T if self.T is None else self.T

    @property
    def expected(self) -> Optional[str]:
        return self.expect or self.tau_rule.expected

    @property
    def degree_label(self) -> str:
        if isinstance(self.degree, int):
            return f"P{self.degree}"
        return "P" + ":".join(str(k) for k in self.degree)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        parts = [self.problem.name, self.scheme.name, self.degree_label, f"N{self.cells}"]
        if self.grading != "uniform":
            parts.append("graded")
        if self.tau_rule.kind in ("tau0", "factor"):
            parts.append(f"x{self.tau_rule.factor:g}")
        return "-".join(parts)

    def mesh(self):
        return build_mesh(self.problem.domain, self.cells, self.grading)

    def space(self) -> DGSpace:
        if isinstance(self.degree, int):
            return DGSpace.uniform(self.cells, self.degree)
        return DGSpace.alternating(self.cells, self.degree)

    def metadata(self) -> Dict[str, Any]:
        meta = dict(self.problem.describe())
        meta.update(scheme=self.scheme.name, degree=self.degree_label, flux=self.flux.label,
                    N=self.cells, grading=self.grading if isinstance(self.grading, str)
                    else ":".join(f"{r:g}" for r in self.grading),
                    T=self.final_time, numflux=self.numflux.value)
        return meta


@dataclass
class ExperimentResult:
    name: str
    verdict: str
    expected: Optional[str]
    metadata: Dict[str, Any]
    files: List[Path] = field(default_factory=list)
    run: Optional[IntegrationRun] = None
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def as_expected(self) -> bool:
        return self.expected is None or self.verdict == self.expected

    @property
    def unexpected_instability(self) -> bool:
        return self.expected == "stable" and self.verdict == "unstable"


def _say(verbose: bool, message: str):
    if verbose:
        print(message)


def _report(cfg: ExperimentConfig, result: ExperimentResult):
    if result.as_expected:
        marker = "✅"
    elif result.unexpected_instability:
        marker = "❌"
    else:
        marker = "⚠️ "
    _say(cfg.verbose, f"{marker} {result.name}: {result.verdict}"
                      + (f" (expected {result.expected})" if result.expected else ""))
    for path in result.files:
        _say(cfg.verbose, f"  📄 {path}")


def _write(cfg: ExperimentConfig, suffix: str, columns: Sequence[str], rows, meta) -> List[Path]:
    if cfg.output is None:
        return []
    return [write_csv(Path(cfg.output) / f"{cfg.label}{suffix}.csv", columns, rows, meta)]


def _system_1d(cfg: ExperimentConfig, mesh, space, tau: float) -> DGSystem:
    problem = cfg.problem
    D = assemble_diffusion(mesh, space, cfg.flux, problem.d)
    if problem.linear:
        F = LinearConvection(assemble_advection(mesh, space, cfg.flux, problem.speed))
    else:
        F = Convection1D(mesh, space, problem.flux, cfg.numflux, problem.a)
    return DGSystem(D, F, tau, cfg.method)


def _simulate_1d(cfg: ExperimentConfig):
    mesh, space = cfg.mesh(), cfg.space()
    tau, meta = cfg.tau_rule.resolve(cfg.scheme, cfg.problem.a, cfg.problem.d, mesh.h)
    meta = {**cfg.metadata(), **meta}
    _say(cfg.verbose, f"▶️  {cfg.label}: tau={tau:.6g}, {space.n_dofs} dofs, T={cfg.final_time:g}")
    system = _system_1d(cfg, mesh, space, tau)
    run = IntegrationRun.start(project_initial(cfg.problem.initial, mesh, space), system, config=meta)
    integrate(run, cfg.scheme, cfg.final_time, progress=cfg.verbose)
    return run, mesh, space


def total_variation(values: np.ndarray) -> float:
    """Periodic total variation"""
    return float(np.sum(np.abs(np.diff(values, append=values[:1]))))


def l1_difference(coarse: np.ndarray, fine: np.ndarray, cell_volume: float) -> float:
    """L1 distance of cell averages after averaging fine cells onto the coarse ones"""
    ratio = [f // c for f, c in zip(fine.shape, coarse.shape)]
    shape = []
    for c, r in zip(coarse.shape, ratio):
        shape.extend([c, r])
    agg = fine.reshape(shape).mean(axis=tuple(range(1, 2 * coarse.ndim, 2)))
    return float(np.sum(np.abs(agg - coarse)) * cell_volume)


# Accuracy

@dataclass
class AccuracyConfig:
    schemes: Sequence[SchemeSpec] = tuple(ETD_SCHEMES)
    degrees: Sequence[int] = ACCURACY_DEGREES
    cells: Sequence[int] = ACCURACY_CELLS
    a: float = 1.0
    d: float = 1.0
    T: float = 1.0
    flux: FluxChoice = FluxChoice()
    output: Optional[Path] = None
    threads: int = 1
    verbose: bool = False

    def __post_init__(self):
        if not self.cells or any(n < 2 for n in self.cells):
            raise ConfigError(f"Invalid refinement sequence: {self.cells}")


@dataclass
class AccuracyRow:
    scheme: str
    degree: int
    N: int
    h: float
    error: float
    order: float


@dataclass
class AccuracyTable:
    rows: List[AccuracyRow] = field(default_factory=list)

    def error(self, scheme: str, degree: int, N: int) -> float:
        return self._row(scheme, degree, N).error

    def order(self, scheme: str, degree: int, N: int) -> float:
        return self._row(scheme, degree, N).order

    def _row(self, scheme, degree, N) -> AccuracyRow:
        for row in self.rows:
            if row.scheme == scheme and row.degree == degree and row.N == N:
                return row
        raise KeyError(f"No accuracy entry for {scheme}, P{degree}, N={N}")


def accuracy_errors(scheme: SchemeSpec, degree: int, cfg: AccuracyConfig) -> List[AccuracyRow]:
    """L2 errors at T for tau = h over the refinement sequence, with observed orders"""
    problem = linear(cfg.a, cfg.d, T=cfg.T)
    rows: List[AccuracyRow] = []
    for N in cfg.cells:
        exp = ExperimentConfig(problem, scheme, degree, cfg.flux, N, tau_rule=TauRule("h"), T=cfg.T)
        run, mesh, space = _simulate_1d(exp)
        err = l2_error(run.state, lambda x: problem.exact(x, cfg.T), mesh, space)
        order = math.nan
        if rows:
            order = math.log(rows[-1].error / err) / math.log(rows[-1].h / mesh.h)
        rows.append(AccuracyRow(scheme.name, degree, N, mesh.h, err, order))
    return rows


def run_accuracy(cfg: AccuracyConfig) -> AccuracyTable:
    pairs = [(s, k) for s in cfg.schemes for k in cfg.degrees]
    _say(cfg.verbose, f"▶️  Accuracy: {len(pairs)} (scheme, degree) pairs, N in {list(cfg.cells)}")
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            chunks = list(pool.map(lambda p: accuracy_errors(p[0], p[1], cfg), pairs))
    else:
        chunks = [accuracy_errors(s, k, cfg)
                  for s, k in tqdm(pairs, desc="accuracy", disable=not cfg.verbose, leave=False)]
    table = AccuracyTable([row for chunk in chunks for row in chunk])
    if cfg.output is not None:
        path = write_csv(Path(cfg.output) / "accuracy.csv",
                         ["scheme_order", "degree", "N", "h", "l2_error", "order"],
                         [(int(r.scheme[-1]), r.degree, r.N, r.h, r.error, r.order) for r in table.rows],
                         {"a": cfg.a, "d": cfg.d, "T": cfg.T, "tau_rule": "h", "flux": cfg.flux.label,
                          "schemes": [s.name for s in cfg.schemes]})
        _say(cfg.verbose, f"📄 {path}")
    _say(cfg.verbose, f"✅ Accuracy table: {len(table.rows)} entries")
    return table


# Linear stability runs

def stability_config(scheme: SchemeSpec, factor: float = 1.0, degree: int = 1, N: int = STABILITY_N,
                     T: float = STABILITY_T, h: Optional[float] = None, **kwargs) -> ExperimentConfig:
    """Advection-dominated sin x problem, a = 1, d = 0.01"""
    rule = TauRule("tau0") if factor == 1.0 else TauRule("factor", factor=factor)
    return ExperimentConfig(linear(1.0, 0.01, T=T), scheme, degree, N=N, tau_rule=rule, T=T, h=h, **kwargs)


def hp_config(scheme: SchemeSpec, mode: str = "h", k: int = 1, factor: float = 1.0, N: int = DESK_N,
              T: float = STABILITY_T, **kwargs) -> ExperimentConfig:
    """mode 'h': 1:9 graded mesh with P^k; mode 'p': degrees alternating r:k"""
    if mode == "h":
        return stability_config(scheme, factor, k, N, T, grading=HP_GRADING, **kwargs)
    if mode == "p":
        return stability_config(scheme, factor, (scheme.order, k), N, T, **kwargs)
    raise ConfigError(f"Unknown h-p mode: {mode}")


def _norm_history_result(cfg: ExperimentConfig, run: IntegrationRun, kind: str) -> ExperimentResult:
    hist = np.asarray(run.norm_history)
    initial, final = hist[0, 1], hist[-1, 1]
    stable = not run.blown_up and final <= initial
    meta = {**run.config, "status": run.status, "steps": run.steps, "experiment": kind}
    details = {"initial_max": float(initial), "final_max": float(final), "t_end": run.t}
    if cfg.problem.linear:
        details["expected_decay"] = math.exp(-cfg.problem.d * run.t)
        details["observed_decay"] = float(final / initial) if initial else 0.0
    files = _write(cfg, "-norms", ["t", "max_norm", "l2_norm"], hist, meta)
    return ExperimentResult(cfg.label, VERDICTS[0] if stable else VERDICTS[1], cfg.expected,
                            meta, files, run, details)


def run_stability(cfg: ExperimentConfig) -> ExperimentResult:
    """Max-norm history to T; stable iff no blow-up and final max-norm <= initial"""
    run, _, _ = _simulate_1d(cfg)
    result = _norm_history_result(cfg, run, "stability")
    _report(cfg, result)
    return result


def run_hp_variation(cfg: ExperimentConfig) -> ExperimentResult:
    """run_stability on a graded mesh or an alternating-degree space"""
    run, mesh, space = _simulate_1d(cfg)
    result = _norm_history_result(cfg, run, "hp")
    widths = mesh.widths()
    result.details.update(h_min=float(widths.min()), h_max=float(widths.max()),
                          degrees=sorted(set(int(k) for k in space.degrees)))
    _report(cfg, result)
    return result


# Nonlinear 1D

def nonlinear_config(problem: Union[str, ProblemSpec] = "burgers", N: int = DESK_N,
                     degree: int = 3, scheme: SchemeSpec = SchemeSpec(Family.ETD, 4),
                     **kwargs) -> ExperimentConfig:
    if isinstance(problem, str):
        factories = {"burgers": burgers, "buckley-leverett-1d": buckley_leverett_1d,
                     "buckley-leverett": buckley_leverett_1d}
        if problem not in factories:
            raise ConfigError(f"Unknown nonlinear problem: {problem}")
        problem = factories[problem]()
    return ExperimentConfig(problem, scheme, degree, N=N, **kwargs)


def run_nonlinear(cfg: ExperimentConfig) -> ExperimentResult:
    """Final-time snapshot; stable iff no blow-up, TV(final) <= 1.5 TV(initial) and, when run, the
    fine-grid self-convergence check passes"""
    run, mesh, space = _simulate_1d(cfg)
    h = mesh.h
    avg0 = cell_averages(project_initial(cfg.problem.initial, mesh, space), mesh, space)
    avg = cell_averages(run.state, mesh, space)
    tv0, tv = total_variation(avg0), total_variation(avg)
    bounded = bool(np.isfinite(tv) and tv <= TV_GROWTH * tv0)
    stable = not run.blown_up and bounded
    meta = {**run.config, "status": run.status, "steps": run.steps, "tau_over_h": run.tau / h,
            "tv_initial": tv0, "tv_final": tv}
    details: Dict[str, Any] = {"tv_initial": tv0, "tv_final": tv, "tau_over_h": run.tau / h}

    if stable and cfg.self_check and mesh.uniform():
        fine_cfg = replace(cfg, N=cfg.cells * REFINEMENT, h=None, output=None, self_check=False,
                           tau_rule=TauRule("explicit", value=run.tau / REFINEMENT),
                           name=f"{cfg.label}-reference")
        fine_run, fine_mesh, fine_space = _simulate_1d(fine_cfg)
        diff = l1_difference(avg, cell_averages(fine_run.state, fine_mesh, fine_space), h)
        details.update(self_convergence_l1=diff, self_converged=bool(diff < SELF_CONVERGENCE_L1))
        meta["self_convergence_l1"] = diff
        stable = details["self_converged"]

    files = _write(cfg, "-snapshot", ["x", "u"],
                   np.column_stack((nodal_coordinates(mesh, space), run.state)), meta)
    result = ExperimentResult(cfg.label, VERDICTS[0] if stable else VERDICTS[1], cfg.expected,
                              meta, files, run, details)
    _report(cfg, result)
    if details.get("self_converged") is False:
        _say(cfg.verbose, f"⚠️  {cfg.label}: self-convergence L1 {details['self_convergence_l1']:.3e} "
                          f">= {SELF_CONVERGENCE_L1:g}")
    return result


# 2D

def bl2d_config(N: int = DESK_N_2D, degree: int = 3, scheme: SchemeSpec = SchemeSpec(Family.ETD, 4),
                **kwargs) -> ExperimentConfig:
    kwargs.setdefault("flux", FluxChoice.parse("central", "sipg"))
    return ExperimentConfig(buckley_leverett_2d(), scheme, degree, N=N, **kwargs)


def _simulate_2d(cfg: ExperimentConfig):
    problem = cfg.problem
    mesh = cfg.mesh()
    dg = assemble_2d(mesh, mesh, cfg.degree, cfg.flux, problem.d)
    tau, meta = cfg.tau_rule.resolve(cfg.scheme, problem.a, problem.d, mesh.h)
    meta = {**cfg.metadata(), **meta, "Ny": mesh.N}
    _say(cfg.verbose, f"▶️  {cfg.label}: tau={tau:.6g}, {dg.n_dofs} dofs, T={cfg.final_time:g}")
    F = dg.convection(problem.flux, problem.flux_y, cfg.numflux, problem.a)
    run = IntegrationRun.start(dg.project(problem.initial), DGSystem(dg.diffusion, F, tau, cfg.method),
                               config=meta)
    integrate(run, cfg.scheme, cfg.final_time, progress=cfg.verbose)
    return run, mesh, dg


def run_2d(cfg: ExperimentConfig) -> ExperimentResult:
    """Cell-average field at T; stable iff no blow-up and the nodal solution stays in [-0.1, 1.1]"""
    run, mesh, dg = _simulate_2d(cfg)
    avg = dg.cell_averages(run.state)
    lo, hi = float(np.min(run.state)), float(np.max(run.state))
    stable = not run.blown_up and RANGE_2D[0] <= lo and hi <= RANGE_2D[1]
    meta = {**run.config, "status": run.status, "steps": run.steps, "min": lo, "max": hi}
    xc = mesh.centers()
    X, Y = np.meshgrid(xc, xc)
    files = _write(cfg, "-field", ["x", "y", "u"], np.column_stack((X.ravel(), Y.ravel(), avg.ravel())), meta)
    result = ExperimentResult(cfg.label, VERDICTS[0] if stable else VERDICTS[1], cfg.expected, meta,
                              files, run, {"min": lo, "max": hi, "averages": avg})
    _report(cfg, result)
    return result


def self_convergence_2d(cfg: ExperimentConfig, levels: Sequence[int] = (25, 50, 100)) -> List[float]:
    """L1 differences of cell averages between successive grid levels at a common tau"""
    tau, _ = cfg.tau_rule.resolve(cfg.scheme, cfg.problem.a, cfg.problem.d, 1.0)
    averages = []
    for N in levels:
        level_cfg = replace(cfg, N=N, output=None, tau_rule=TauRule("explicit", value=tau))
        run, _, dg = _simulate_2d(level_cfg)
        averages.append(dg.cell_averages(run.state))
    length = cfg.problem.domain[1] - cfg.problem.domain[0]
    return [l1_difference(c, f, (length / c.shape[0]) ** 2) for c, f in zip(averages, averages[1:])]


# Sweeps

def run_sweep(configs: Sequence[ExperimentConfig], runner: Callable[[ExperimentConfig], ExperimentResult] = run_stability,
              threads: int = 1) -> List[ExperimentResult]:
    """Independent experiments, results in config order"""
    if threads > 1 and len(configs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(runner, configs))
    return [runner(cfg) for cfg in configs]
