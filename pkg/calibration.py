"""The three calibration methods applied to a dataset.

* essential: estimate and decompose E on the point-to-point set, scale by the
  measured baseline.
* min2d: Monte Carlo on the reprojection cost of the point-to-point set.
* min3d: Monte Carlo on the reconstruction cost of the target-pair set.

Both Monte Carlo methods start from the essential result unless an initial
calibration is supplied.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

from correspondences import Dataset
from errors import InsufficientCorrespondences
from geometry import (
    EssentialMatrix,
    ExtrinsicAngles,
    Extrinsics,
    TranslationConvention,
    angles_from_pose,
    essential_from_extrinsics,
)
from essential import decompose_essential, estimate_essential, normalize_essential
from montecarlo import MonteCarloConfig, derive_seed, minimize, reconstruction_cost, reprojection_cost


logger = logging.getLogger(__name__)

METHODS = ("essential", "min2d", "min3d")
MIN_CALIBRATION_IMAGES = 5


@dataclass(frozen=True)
class Calibration:
    """Calibrated secondary pose with its provenance."""

    method: str
    angles: ExtrinsicAngles
    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
    seed: int = 0
    config_hash: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"Unknown calibration method: {self.method!r}")

    @property
    def pose(self) -> Extrinsics:
        return Extrinsics.from_angles(self.angles, self.convention)

    @property
    def essential(self) -> EssentialMatrix:
        return normalize_essential(essential_from_extrinsics(self.pose))


def _check_images(dataset: Dataset, indices: Optional[Sequence[int]]) -> None:
    count = dataset.n_images if indices is None else len(indices)
    if count < MIN_CALIBRATION_IMAGES:
        raise InsufficientCorrespondences(
            f"Calibration needs {MIN_CALIBRATION_IMAGES} images, got {count}"
        )


def config_hash(method: str, config: MonteCarloConfig, convention: TranslationConvention,
                dataset: Dataset, indices: Optional[Sequence[int]]) -> str:
    """sha256 of everything, besides the seed, that determines a calibration."""
    payload = {
        "method": method,
        "convention": convention.value,
        "dataset": dataset.name,
        "images": None if indices is None else [int(i) for i in indices],
        "delta0": config.delta0,
        "decay": config.decay,
        "acceptance_threshold": config.acceptance_threshold,
        "delta_min": config.delta_min,
        "warmup": config.warmup,
        "max_passes": config.max_passes,
        "pass_rtol": config.pass_rtol,
        "frame": config.frame,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def calibrate_essential(dataset: Dataset, indices: Optional[Sequence[int]] = None, seed: int = 0,
                        config: Optional[MonteCarloConfig] = None,
                        convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                        ) -> Calibration:
    config = config or MonteCarloConfig()
    _check_images(dataset, indices)
    corr = dataset.correspondences_2d(indices)
    E = estimate_essential(corr, dataset.K1, dataset.K2, seed=seed, config=config, convention=convention)
    pose = decompose_essential(E, dataset.baseline, corr, dataset.K1, dataset.K2)
    angles = angles_from_pose(pose.R, pose.T, convention, strict=False)
    # Measured baseline, not the rounded |T| of the decomposition
    angles = ExtrinsicAngles(*angles.as_array(), dataset.baseline)
    return Calibration("essential", angles, convention, seed,
                       config_hash("essential", config, convention, dataset, indices))


def _monte_carlo(method: str, dataset: Dataset, initial: ExtrinsicAngles,
                 indices: Optional[Sequence[int]], seed: int, config: MonteCarloConfig,
                 convention: TranslationConvention) -> Calibration:
    _check_images(dataset, indices)
    if method == "min2d":
        cost = reprojection_cost(dataset.correspondences_2d(indices), dataset.K1, dataset.K2, convention)
    else:
        cost = reconstruction_cost(dataset.correspondences_3d(indices), dataset.K1, dataset.K2, convention)
    # The measured baseline always wins over the one stored with the initial angles
    start = ExtrinsicAngles(*initial.as_array(), dataset.baseline)
    result = minimize(start, cost, config.with_seed(seed))
    logger.info(f"{method}: cost {result.trace.accepted_costs[0]:.6e} -> {result.cost:.6e} "
                f"({result.trace.iterations} iterations, {result.trace.passes} passes)")
    return Calibration(method, result.angles, convention, seed,
                       config_hash(method, config, convention, dataset, indices))


def calibrate_min2d(dataset: Dataset, indices: Optional[Sequence[int]] = None, seed: int = 0,
                    config: Optional[MonteCarloConfig] = None,
                    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION,
                    init: Optional[Calibration] = None) -> Calibration:
    config = config or MonteCarloConfig()
    if init is None:
        init = calibrate_essential(dataset, indices, seed, config, convention)
    return _monte_carlo("min2d", dataset, _reparametrized(init, convention), indices, seed, config, convention)


def calibrate_min3d(dataset: Dataset, indices: Optional[Sequence[int]] = None, seed: int = 0,
                    config: Optional[MonteCarloConfig] = None,
                    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION,
                    init: Optional[Calibration] = None) -> Calibration:
    config = config or MonteCarloConfig()
    if init is None:
        init = calibrate_essential(dataset, indices, seed, config, convention)
    return _monte_carlo("min3d", dataset, _reparametrized(init, convention), indices, seed, config, convention)


def _reparametrized(calibration: Calibration, convention: TranslationConvention) -> ExtrinsicAngles:
    if calibration.convention is convention:
        return calibration.angles
    pose = calibration.pose
    return angles_from_pose(pose.R, pose.T, convention, strict=False)


def calibrate(dataset: Dataset, method: str, indices: Optional[Sequence[int]] = None, seed: int = 0,
              config: Optional[MonteCarloConfig] = None,
              convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION,
              init: Optional[Calibration] = None) -> Calibration:
    """Calibrate with one method.

    Args:
        dataset: detections, measured baseline and target distance
        method: one of METHODS
        indices: images to use (all when None)
        seed: seed of every stochastic step
        config: Monte Carlo schedule
        convention: translation parametrization
        init: starting calibration for min2d / min3d; skips the essential stage

    Raises:
        CalibrationError: if the method cannot produce parameters
    """
    if method == "essential":
        return calibrate_essential(dataset, indices, seed, config, convention)
    if method == "min2d":
        return calibrate_min2d(dataset, indices, seed, config, convention, init)
    if method == "min3d":
        return calibrate_min3d(dataset, indices, seed, config, convention, init)
    raise ValueError(f"Unknown calibration method: {method!r}")


def calibrate_all(dataset: Dataset, indices: Optional[Sequence[int]] = None, seed: int = 0,
                  config: Optional[MonteCarloConfig] = None,
                  convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                  ) -> Dict[str, Calibration]:
    """All three methods; the essential result seeds both minimizations."""
    config = config or MonteCarloConfig()
    seeds = {method: derive_seed(seed, i) for i, method in enumerate(METHODS)}
    essential = calibrate_essential(dataset, indices, seeds["essential"], config, convention)
    return {
        "essential": essential,
        "min2d": calibrate_min2d(dataset, indices, seeds["min2d"], config, convention, essential),
        "min3d": calibrate_min3d(dataset, indices, seeds["min3d"], config, convention, essential),
    }
