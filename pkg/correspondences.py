"""Correspondence sets and the two-target dataset container."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from geometry import CameraIntrinsics, ExtrinsicAngles, Pixel2, TranslationConvention


TARGET_LABELS = ("A", "B")
CAMERA_LABELS = (1, 2)


def _points(arr) -> np.ndarray:
    out = np.array(arr, dtype=float).reshape(-1, 2)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CorrespondenceSet2D:
    """Point-to-point correspondences: row k of q1 and q2 image the same target."""

    q1: np.ndarray
    q2: np.ndarray

    def __post_init__(self):
        q1, q2 = _points(self.q1), _points(self.q2)
        if len(q1) != len(q2):
            raise ValueError(f"Mismatched correspondence arrays: {len(q1)} vs {len(q2)}")
        object.__setattr__(self, "q1", q1)
        object.__setattr__(self, "q2", q2)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[Sequence[float], Sequence[float]]]) -> "CorrespondenceSet2D":
        if not pairs:
            return cls(np.empty((0, 2)), np.empty((0, 2)))
        return cls(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))

    def __len__(self) -> int:
        return len(self.q1)

    @property
    def count(self) -> int:
        return len(self.q1)

    @property
    def pairs(self) -> List[Tuple[Pixel2, Pixel2]]:
        return [(Pixel2(*a), Pixel2(*b)) for a, b in zip(self.q1, self.q2)]

    def concat(self, other: "CorrespondenceSet2D") -> "CorrespondenceSet2D":
        return CorrespondenceSet2D(np.vstack([self.q1, other.q1]), np.vstack([self.q2, other.q2]))


@dataclass(frozen=True, eq=False)
class CorrespondenceSet3D:
    """Target-pair correspondences: measured distance D and the pixels of both targets."""

    D: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        D = np.array(self.D, dtype=float).reshape(-1)
        if np.any(~(D > 0)):
            raise ValueError("Every target distance D must be positive")
        D.setflags(write=False)
        object.__setattr__(self, "D", D)
        for name in ("a1", "a2", "b1", "b2"):
            arr = _points(getattr(self, name))
            if len(arr) != len(D):
                raise ValueError(f"{name} has {len(arr)} rows, expected {len(D)}")
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.D)

    @property
    def entries(self) -> List[Tuple[float, Tuple[Pixel2, Pixel2], Tuple[Pixel2, Pixel2]]]:
        return [
            (float(d), (Pixel2(*a1), Pixel2(*a2)), (Pixel2(*b1), Pixel2(*b2)))
            for d, a1, a2, b1, b2 in zip(self.D, self.a1, self.a2, self.b1, self.b2)
        ]

    def concat(self, other: "CorrespondenceSet3D") -> "CorrespondenceSet3D":
        return CorrespondenceSet3D(
            np.concatenate([self.D, other.D]),
            np.vstack([self.a1, other.a1]), np.vstack([self.a2, other.a2]),
            np.vstack([self.b1, other.b1]), np.vstack([self.b2, other.b2]),
        )


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Known pose and target positions of a synthetic dataset."""

    angles: ExtrinsicAngles
    targets: np.ndarray  # (n_images, 2, 3): image, target (A, B), XYZ in the primary frame
    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION


@dataclass(frozen=True, eq=False)
class Dataset:
    """Detections of targets A and B on both cameras over a series of images.

    ``points[k, t, c]`` is the pixel (u, v) of target t (0 = A, 1 = B) seen by
    camera c (0 = primary, 1 = secondary) in image k.
    """

    points: np.ndarray
    baseline: float
    distance: float
    K1: CameraIntrinsics
    K2: CameraIntrinsics
    name: str = "dataset"
    truth: Optional[GroundTruth] = field(default=None)

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 4 or points.shape[1:] != (2, 2, 2):
            raise ValueError(f"Dataset points must have shape (n, 2, 2, 2), got {points.shape}")
        if not self.baseline > 0 or not self.distance > 0:
            raise ValueError("Baseline and target distance must be positive")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def n_images(self) -> int:
        return len(self.points)

    def _indices(self, indices: Optional[Sequence[int]]) -> np.ndarray:
        if indices is None:
            return np.arange(self.n_images)
        return np.asarray(indices, dtype=int)

    def correspondences_2d(self, indices: Optional[Sequence[int]] = None) -> CorrespondenceSet2D:
        """Correct pairs of the selected images, A then B for each image."""
        sel = self.points[self._indices(indices)]
        return CorrespondenceSet2D(sel[:, :, 0].reshape(-1, 2), sel[:, :, 1].reshape(-1, 2))

    def correspondences_3d(self, indices: Optional[Sequence[int]] = None) -> CorrespondenceSet3D:
        sel = self.points[self._indices(indices)]
        return CorrespondenceSet3D(
            np.full(len(sel), self.distance),
            sel[:, 0, 0], sel[:, 0, 1], sel[:, 1, 0], sel[:, 1, 1],
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = self._indices(indices)
        truth = None
        if self.truth is not None:
            truth = GroundTruth(self.truth.angles, self.truth.targets[idx], self.truth.convention)
        return Dataset(self.points[idx], self.baseline, self.distance, self.K1, self.K2,
                       self.name, truth)
