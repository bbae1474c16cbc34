"""Synthetic bar-target datasets with a known converging stereo rig."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from correspondences import Dataset, GroundTruth
from errors import ConfigError, PlacementExhausted
from geometry import (
    CameraIntrinsics,
    ExtrinsicAngles,
    Extrinsics,
    TranslationConvention,
    angles_from_pose,
    project_points,
    rotation_from_angles,
)


logger = logging.getLogger(__name__)

SENSOR_SIZE = (2048, 1088)
DEFAULT_INTRINSICS = CameraIntrinsics(omega=3500.0, u0=1024.0, v0=544.0)
RECOMMENDED_BASELINE = (3.449, 5.936)
RECOMMENDED_DISTANCE = (0.811, 1.027)
MAX_ATTEMPTS = 10_000


def converging_rig(baseline: float, target_depth: float = 6.0, pitch: float = 0.02, roll: float = -0.01,
                   convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                   ) -> ExtrinsicAngles:
    """Secondary camera ``baseline`` meters to the left of the primary, yawed to look at (0, 0, target_depth)."""
    yaw = -math.atan2(baseline, target_depth)
    R = rotation_from_angles(yaw, pitch, roll)
    centre = np.array([-baseline, 0.0, 0.0])
    return angles_from_pose(R, -R @ centre, convention)


@dataclass(frozen=True)
class SceneConfig:
    """Rig, targets, noise and placement volume of a synthetic dataset.

    ``truth`` defaults to converging_rig(baseline).
    """

    baseline: float = 4.0
    distance: float = 0.9
    n_images: int = 25
    noise_sigma: float = 0.3
    K1: CameraIntrinsics = DEFAULT_INTRINSICS
    K2: CameraIntrinsics = DEFAULT_INTRINSICS
    truth: Optional[ExtrinsicAngles] = None
    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
    volume_center: Tuple[float, float, float] = (0.0, 0.0, 6.0)
    volume_size: Tuple[float, float, float] = (2.0, 2.0, 2.0)
    sensor_size: Tuple[int, int] = SENSOR_SIZE
    seed: int = 0
    name: str = "synthetic"
    max_attempts: int = field(default=MAX_ATTEMPTS)

    def __post_init__(self):
        if not self.baseline > 0:
            raise ConfigError(f"Baseline must be positive, got {self.baseline}")
        if not self.distance > 0:
            raise ConfigError(f"Target distance must be positive, got {self.distance}")
        if self.n_images < 1:
            raise ConfigError(f"Need at least one image, got {self.n_images}")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"Noise sigma must be non-negative, got {self.noise_sigma}")
        if any(s <= 0 for s in self.volume_size):
            raise ConfigError(f"Placement volume must have positive size, got {self.volume_size}")
        if not RECOMMENDED_BASELINE[0] <= self.baseline <= RECOMMENDED_BASELINE[1]:
            logger.warning(f"Baseline {self.baseline} m outside the recommended range {RECOMMENDED_BASELINE}")
        if not RECOMMENDED_DISTANCE[0] <= self.distance <= RECOMMENDED_DISTANCE[1]:
            logger.warning(f"Target distance {self.distance} m outside the recommended range {RECOMMENDED_DISTANCE}")
        if self.truth is not None and abs(self.truth.baseline - self.baseline) > 1e-12 * self.baseline:
            raise ConfigError(f"Truth baseline {self.truth.baseline} differs from baseline {self.baseline}")

    @property
    def truth_angles(self) -> ExtrinsicAngles:
        if self.truth is not None:
            return self.truth
        return converging_rig(self.baseline, self.volume_center[2], convention=self.convention)


def _in_sensor(pixels: np.ndarray, sensor_size: Tuple[int, int]) -> bool:
    width, height = sensor_size
    return bool(np.all((pixels[:, 0] >= 0) & (pixels[:, 0] < width)
                       & (pixels[:, 1] >= 0) & (pixels[:, 1] < height)))


def generate(config: SceneConfig) -> Dataset:
    """Sample ``n_images`` bar placements seen by the truth rig.

    Each image places the bar midpoint uniformly in the placement volume with
    a uniform random orientation, targets A and B at ±distance/2 along it.
    Both targets are projected exactly into both cameras and then perturbed
    by isotropic Gaussian noise. An image is resampled whole if any target is
    behind a camera or any noisy point falls outside a sensor.

    Raises:
        PlacementExhausted: if an image needs more than ``max_attempts`` samples
    """
    rng = np.random.default_rng(config.seed)
    truth = config.truth_angles
    pose = Extrinsics.from_angles(truth, config.convention)
    center = np.asarray(config.volume_center, dtype=float)
    size = np.asarray(config.volume_size, dtype=float)
    half = 0.5 * config.distance

    points = np.empty((config.n_images, 2, 2, 2))
    targets = np.empty((config.n_images, 2, 3))
    rejected = 0
    for k in range(config.n_images):
        for _ in range(config.max_attempts):
            mid = center + rng.uniform(-0.5, 0.5, size=3) * size
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            bar = np.stack([mid + half * axis, mid - half * axis])

            pix1, depth1 = project_points(config.K1, np.eye(3), np.zeros(3), bar)
            pix2, depth2 = project_points(config.K2, pose.R, pose.T, bar)
            noise = rng.normal(0.0, config.noise_sigma, size=(2, 2, 2)) if config.noise_sigma > 0 else 0.0
            image = np.stack([pix1, pix2], axis=1) + noise

            if np.all(depth1 > 0) and np.all(depth2 > 0) \
                    and _in_sensor(image[:, 0], config.sensor_size) and _in_sensor(image[:, 1], config.sensor_size):
                points[k] = image
                targets[k] = bar
                break
            rejected += 1
        else:
            raise PlacementExhausted(
                f"No valid placement for image {k} after {config.max_attempts} attempts"
            )

    logger.info(f"Generated {config.n_images} images ({rejected} placements rejected), seed {config.seed}")
    return Dataset(points, config.baseline, config.distance, config.K1, config.K2, config.name,
                   GroundTruth(truth, targets, config.convention))
