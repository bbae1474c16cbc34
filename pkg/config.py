"""Configuration management for stereocal."""

import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

import dataset_io
import geometry
from montecarlo import MonteCarloConfig


class Config:
    """Settings loaded from environment variables (and a .env file, if present)."""

    def __init__(self):
        """Initialize configuration by loading environment variables."""
        load_dotenv()

    def _float(self, name: str, default: float) -> float:
        value = os.getenv(name)
        if value is None or value == '':
            return default
        try:
            return float(value)
        except ValueError:
            print(f"Error: Invalid {name} value: '{value}'. Must be a number; using {default}.")
            return default

    def _int(self, name: str, default: Optional[int]) -> Optional[int]:
        value = os.getenv(name)
        if value is None or value == '':
            return default
        try:
            return int(value)
        except ValueError:
            print(f"Error: Invalid {name} value: '{value}'. Must be an integer; using {default}.")
            return default

    @property
    def seed(self) -> Optional[int]:
        """Fallback master seed when --seed is not given."""
        return self._int('STEREOCAL_SEED', None)

    @property
    def ortho_tol(self) -> float:
        return self._float('STEREOCAL_ORTHO_TOL', 1e-12)

    @property
    def essential_tol(self) -> float:
        return self._float('STEREOCAL_ESSENTIAL_TOL', 1e-9)

    @property
    def consistency_tol(self) -> float:
        return self._float('STEREOCAL_CONSISTENCY_TOL', 1e-9)

    @property
    def mc_delta0(self) -> float:
        return self._float('STEREOCAL_MC_DELTA0', 0.001)

    @property
    def mc_decay(self) -> float:
        return self._float('STEREOCAL_MC_DECAY', 0.75)

    @property
    def mc_accept(self) -> float:
        return self._float('STEREOCAL_MC_ACCEPT', 0.2)

    @property
    def mc_delta_min(self) -> float:
        return self._float('STEREOCAL_MC_DELTA_MIN', 1e-6)

    @property
    def mc_passes(self) -> int:
        passes = self._int('STEREOCAL_MC_PASSES', 12)
        if passes < 1:
            print(f"Error: Invalid STEREOCAL_MC_PASSES value: '{passes}'. Must be positive; using 12.")
            return 12
        return passes

    @property
    def jobs(self) -> int:
        jobs = self._int('STEREOCAL_JOBS', 1)
        if jobs < 1:
            print(f"Error: Invalid STEREOCAL_JOBS value: '{jobs}'. Must be positive; using 1.")
            return 1
        return jobs

    @property
    def log_file(self) -> str:
        return os.getenv('STEREOCAL_LOG_FILE', 'stereocal.log')

    @property
    def log_level(self) -> str:
        return os.getenv('STEREOCAL_LOG_LEVEL', 'INFO').upper()

    def monte_carlo(self, seed: int = 0) -> MonteCarloConfig:
        """Monte Carlo schedule from the environment; raises ConfigError if inconsistent."""
        return MonteCarloConfig(
            delta0=self.mc_delta0,
            decay=self.mc_decay,
            acceptance_threshold=self.mc_accept,
            delta_min=self.mc_delta_min,
            max_passes=self.mc_passes,
            seed=seed,
        )

    def apply_tolerances(self) -> None:
        """Override the numeric tolerances of the library modules, process wide."""
        geometry.ORTHONORMAL_TOL = self.ortho_tol
        geometry.ESSENTIAL_TOL = self.essential_tol
        dataset_io.CONSISTENCY_TOL = self.consistency_tol

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary."""
        return {
            'seed': self.seed,
            'ortho_tol': self.ortho_tol,
            'essential_tol': self.essential_tol,
            'consistency_tol': self.consistency_tol,
            'mc_delta0': self.mc_delta0,
            'mc_decay': self.mc_decay,
            'mc_accept': self.mc_accept,
            'mc_delta_min': self.mc_delta_min,
            'mc_passes': self.mc_passes,
            'jobs': self.jobs,
            'log_file': self.log_file,
            'log_level': self.log_level,
        }
