"""
ETDG Configuration
Project configuration file (etdg.json) with per-subcommand sections
"""

import copy
import json
from pathlib import Path
from typing import Any, Dict

from src.errors import ConfigError

CONFIG_FILE = "etdg.json"

DEFAULTS: Dict[str, Any] = {
    "output_dir": "results",
    "threads": 1,
    "precision": "double",
    "full_scale": False,
    "tau0": {
        "schemes": ["etd-rk1", "etd-rk2", "etd-rk3", "etd-rk4"],
        "mode": "semidiscrete",
        "degrees": [0, 1, 2, 3, 4],
        "advection_flux": "central",
        "diffusion_flux": "ldg-alternating",
        "sigma": None,
        "tau_bracket": [0.5, 6.0],
        "xi_samples": 4001,
    },
    "profile": {
        "scheme": "etd-rk2",
        "tau": 3.94,
        "mode": "semidiscrete",
        "degree": 4,
        "h": 3.141592653589793e-06,
        "advection_flux": "central",
        "diffusion_flux": "ldg-alternating",
        "xi_samples": 4001,
    },
    "accuracy": {
        "schemes": ["etd-rk1", "etd-rk2", "etd-rk3", "etd-rk4"],
        "degrees": [0, 1, 2, 3],
        "cells": [20, 40, 80, 160],
        "a": 1.0,
        "d": 1.0,
        "T": 1.0,
    },
    "stability": {
        "schemes": ["etd-rk1", "etd-rk2", "etd-rk3", "etd-rk4"],
        "degree": 1,
        "N": 2000,
        "h": None,
        "tau_factors": [1.0, 1.1],
        "T": 20.0,
        "advection_flux": "central",
        "diffusion_flux": "ldg-alternating",
    },
    "hp": {
        "schemes": ["etd-rk1", "etd-rk2", "etd-rk3", "etd-rk4"],
        "modes": ["h", "p"],
        "degree": 1,
        "k_values": [0, 1, 2, 3, 4, 5],
        "N": 500,
        "tau_factors": [1.0, 1.1],
        "T": 20.0,
    },
    "nonlinear1d": {
        "problems": ["burgers", "buckley-leverett-1d"],
        "scheme": "etd-rk4",
        "degree": 3,
        "N": 500,
        "tau_rule": "tau0",
        "self_check": True,
    },
    "bl2d": {
        "scheme": "etd-rk4",
        "degree": 3,
        "N": 100,
        "tau_rule": "tau0",
        "T": 0.5,
        "diffusion_flux": "sipg",
    },
    "imex-remark": {
        "schemes": ["imex-rk1", "imex-rk2", "imex-rk3"],
        "degrees": [0, 1, 2],
        "advection_flux": "upwind",
        "diffusion_flux": "ldg-alternating",
        "h_count": 8,
        "h_max": 1000.0,
        "c0": None,
    },
}

FULL_SCALE = {
    "hp": {"N": 2000},
    "nonlinear1d": {"N": 2000},
    "bl2d": {"N": 600},
}


class EtdgConfig:
    def __init__(self, config_file: str = CONFIG_FILE):
        self.config_file = config_file
        self.config = self.load_config()

    def load_config(self) -> Dict[str, Any]:
        """Load project configuration, falling back to the built-in defaults"""
        if Path(self.config_file).exists():
            try:
                with open(self.config_file, "r") as f:
                    loaded = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{self.config_file}: {e}")
            if not isinstance(loaded, dict):
                raise ConfigError(f"{self.config_file}: top level must be an object")
            return loaded
        return copy.deepcopy(DEFAULTS)

    def save_config(self):
        """Save configuration"""
        with open(self.config_file, "w") as f:
            json.dump(self.config, f, indent=2)

    def get(self, key: str, override: Any = None) -> Any:
        """Global setting; an explicit override (CLI flag) wins"""
        if override is not None:
            return override
        return self.config.get(key, DEFAULTS.get(key))

    def section(self, name: str, full_scale: bool = False) -> Dict[str, Any]:
        """Defaults merged with the file's values for one subcommand"""
        if name not in DEFAULTS or not isinstance(DEFAULTS[name], dict):
            raise ConfigError(f"Unknown configuration section: {name}")
        merged = copy.deepcopy(DEFAULTS[name])
        values = self.config.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"Section '{name}' must be an object")
        unknown = set(values) - set(merged)
        if unknown:
            raise ConfigError(f"Unknown keys in section '{name}': {', '.join(sorted(unknown))}")
        merged.update(values)
        if full_scale:
            merged.update(FULL_SCALE.get(name, {}))
        return merged
