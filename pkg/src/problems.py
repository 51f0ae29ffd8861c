"""
ETDG Problems
Advection-diffusion test problems: flux functions, initial data, exact solutions and step-size rules
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from src.dg_core import AdvectionFlux, ScalarField

TWO_PI = 2.0 * math.pi

# Maximum wave speeds used for the nonlinear runs
BURGERS_SPEED = 0.75
BUCKLEY_LEVERETT_SPEED = 2.333
BUCKLEY_LEVERETT_2D_SPEED = math.sqrt(13.37)


@dataclass(frozen=True)
class ProblemSpec:
    """u_t + f(u)_x (+ g(u)_y) = d Laplacian(u) on a periodic box"""
    name: str
    d: float
    a: float
    domain: Tuple[float, float]
    initial: Callable
    T: float
    flux: Optional[ScalarField] = None
    flux_y: Optional[ScalarField] = None
    speed: Optional[float] = None
    dimension: int = 1

    def __post_init__(self):
        if self.d < 0:
            raise ValueError(f"Diffusivity must be non-negative, got d={self.d}")
        if self.domain[1] <= self.domain[0]:
            raise ValueError(f"Empty domain {self.domain}")

    @property
    def linear(self) -> bool:
        return self.speed is not None

    def exact(self, x: np.ndarray, t: float) -> np.ndarray:
        if not self.linear:
            raise ValueError(f"No exact solution for {self.name}")
        return exact_linear_solution(x, t, self.speed, self.d)

    def describe(self) -> dict:
        return {"problem": self.name, "a": self.a, "d": self.d,
                "domain": list(self.domain), "dimension": self.dimension}


def exact_linear_solution(x: np.ndarray, t: float, a: float, d: float) -> np.ndarray:
    """e^{-d t} sin(x - a t), the solution from u(x, 0) = sin x"""
    return np.exp(-d * t) * np.sin(np.asarray(x) - a * t)


def linear(a: float = 1.0, d: float = 1.0, domain: Tuple[float, float] = (0.0, TWO_PI),
           T: float = 1.0) -> ProblemSpec:
    return ProblemSpec("linear", d, abs(a), domain, np.sin, T, speed=a)


def burgers_flux(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * u


def buckley_leverett_flux(u: np.ndarray) -> np.ndarray:
    u2 = u * u
    return 4.0 * u2 / (4.0 * u2 + (1.0 - u) ** 2)


def buckley_leverett_derivative(u: np.ndarray) -> np.ndarray:
    return 8.0 * u * (1.0 - u) / (5.0 * u * u - 2.0 * u + 1.0) ** 2


def burgers(d: float = 0.01, T: float = 2.0) -> ProblemSpec:
    return ProblemSpec("burgers", d, BURGERS_SPEED, (-1.0, 1.0),
                       lambda x: 0.25 + 0.5 * np.sin(np.pi * x), T, flux=burgers_flux)


def _bl_step(x: np.ndarray) -> np.ndarray:
    return np.where((x >= -0.5) & (x <= 0.0), 1.0, 0.0)


def buckley_leverett_1d(d: float = 0.01, T: float = 0.4) -> ProblemSpec:
    return ProblemSpec("buckley-leverett-1d", d, BUCKLEY_LEVERETT_SPEED, (-1.0, 1.0),
                       _bl_step, T, flux=buckley_leverett_flux)


def bl2d_flux_x(u: np.ndarray) -> np.ndarray:
    u2 = u * u
    return u2 / (u2 + (1.0 - u) ** 2)


def bl2d_flux_y(u: np.ndarray) -> np.ndarray:
    return bl2d_flux_x(u) * (1.0 - 5.0 * (1.0 - u) ** 2)


def _bl2d_disk(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.where(x * x + y * y < 0.5, 1.0, 0.0)


def buckley_leverett_2d(d: float = 0.01, T: float = 0.5) -> ProblemSpec:
    return ProblemSpec("buckley-leverett-2d", d, BUCKLEY_LEVERETT_2D_SPEED, (-1.5, 1.5),
                       _bl2d_disk, T, flux=bl2d_flux_x, flux_y=bl2d_flux_y, dimension=2)


PROBLEMS = {
    "linear": linear,
    "burgers": burgers,
    "buckley-leverett-1d": buckley_leverett_1d,
    "buckley-leverett-2d": buckley_leverett_2d,
}


def max_wave_speed(derivative: ScalarField, lo: float = 0.0, hi: float = 1.0,
                   samples: int = 200001) -> float:
    """max |f'(u)| over [lo, hi] on a uniform sample"""
    u = np.linspace(lo, hi, samples)
    return float(np.max(np.abs(derivative(u))))


def bl2d_wave_speed(samples: int = 200001) -> float:
    """sup sqrt(f1'^2 + f2'^2) over [0, 1] by finite differences"""
    u = np.linspace(0.0, 1.0, samples)
    g1 = np.gradient(bl2d_flux_x(u), u)
    g2 = np.gradient(bl2d_flux_y(u), u)
    return float(np.sqrt(np.max(g1 * g1 + g2 * g2)))


def _check_speed(a: float, d: float):
    if a == 0:
        raise ValueError("Wave speed a must be nonzero")
    if d <= 0:
        raise ValueError(f"Diffusivity must be positive, got d={d}")


def dimensionless_scaling(a: float, d: float) -> Tuple[float, float]:
    """(time scale, length scale) with t' = (a^2/d) t and x' = (a/d) x"""
    _check_speed(a, d)
    return a * a / d, abs(a) / d


def physical_step(tau0: float, a: float, d: float) -> float:
    """tau0 d / a^2"""
    _check_speed(a, d)
    return tau0 * d / a ** 2


def physical_cfl_step(c0: float, h: float, a: float) -> float:
    """c0 h / a"""
    if a == 0:
        raise ValueError("Wave speed a must be nonzero")
    return c0 * h / abs(a)


def admissible_step(tau0: float, c0: float, h: float, a: float, d: float,
                    advection_flux: AdvectionFlux = AdvectionFlux.CENTRAL) -> float:
    """Largest stable step: tau0 d/a^2 (central) or max{tau0 d/a^2, c0 h/a} (upwind)"""
    step = physical_step(tau0, a, d)
    if AdvectionFlux(advection_flux) is AdvectionFlux.UPWIND:
        return max(step, physical_cfl_step(c0, h, a))
    return step
