"""A stereo rig calibrated twice: one parameter set for matching, one for reconstruction."""

import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from calibration import Calibration
from dataset_io import read_calibration, read_recommended
from geometry import ArrayLike, CameraIntrinsics
from montecarlo import DEGENERATE_PENALTY
from triangulation import Reconstruction, reconstruct_pair, reconstruct_points, reprojection_errors


logger = logging.getLogger(__name__)

RECOMMENDED_FILE = "recommended.txt"


class StereoRig:
    """Matches detections with the min2d calibration and triangulates them with the min3d one."""

    def __init__(self, matching: Calibration, reconstruction: Calibration,
                 K1: CameraIntrinsics, K2: CameraIntrinsics):
        """Initialize the rig.

        Args:
            matching: calibration used to score candidate correspondences
            reconstruction: calibration used to triangulate matched pairs
            K1, K2: intrinsics of the primary and secondary cameras
        """
        if matching.method != "min2d":
            logger.warning(f"Matching with a {matching.method} calibration instead of min2d")
        if reconstruction.method != "min3d":
            logger.warning(f"Reconstructing with a {reconstruction.method} calibration instead of min3d")
        self.matching = matching
        self.reconstruction = reconstruction
        self.K1 = K1
        self.K2 = K2
        self._matching_pose = matching.pose
        self._reconstruction_pose = reconstruction.pose

    @classmethod
    def from_bundle(cls, bundle_dir: Union[str, Path], K1: CameraIntrinsics, K2: CameraIntrinsics,
                    dataset: Optional[str] = None) -> "StereoRig":
        """Load the recommended pair written by ``calibrate --method all`` or ``evaluate``.

        Per-dataset entries (``matching.<dataset>``) win over the plain ones.
        """
        bundle_dir = Path(bundle_dir)
        entries = read_recommended(bundle_dir / RECOMMENDED_FILE)
        paths = {}
        for key in ("matching", "reconstruction"):
            paths[key] = entries.get(f"{key}.{dataset}", entries[key]) if dataset else entries[key]
        logger.info(f"Rig from {bundle_dir}: matching {paths['matching']}, reconstruction {paths['reconstruction']}")
        return cls(read_calibration(bundle_dir / paths["matching"]),
                   read_calibration(bundle_dir / paths["reconstruction"]), K1, K2)

    def score_matrix(self, points1: np.ndarray, points2: np.ndarray) -> np.ndarray:
        """Total reprojection error of every (primary i, secondary j) candidate pair."""
        points1 = np.asarray(points1, dtype=float).reshape(-1, 2)
        points2 = np.asarray(points2, dtype=float).reshape(-1, 2)
        q1 = np.repeat(points1, len(points2), axis=0)
        q2 = np.tile(points2, (len(points1), 1))
        e1, e2, valid = reprojection_errors(self.K1, self.K2, self._matching_pose, q1, q2)
        return np.where(valid, e1 + e2, DEGENERATE_PENALTY).reshape(len(points1), len(points2))

    def match(self, points1: np.ndarray, points2: np.ndarray,
              max_score: Optional[float] = None) -> List[Tuple[int, int, float]]:
        """Assign primary detections to secondary ones minimizing the total reprojection error.

        Args:
            points1: (N, 2) primary pixels
            points2: (M, 2) secondary pixels
            max_score: pairs scoring above this many pixels are dropped

        Returns:
            (i, j, score) triples sorted by i
        """
        if len(points1) == 0 or len(points2) == 0:
            return []
        scores = self.score_matrix(points1, points2)
        rows, cols = linear_sum_assignment(scores)
        pairs = [(int(i), int(j), float(scores[i, j])) for i, j in zip(rows, cols)]
        if max_score is not None:
            kept = [p for p in pairs if p[2] <= max_score]
            if len(kept) < len(pairs):
                logger.debug(f"Dropped {len(pairs) - len(kept)} pairs scoring above {max_score} px")
            pairs = kept
        return pairs

    def reconstruct(self, q1: ArrayLike, q2: ArrayLike) -> Reconstruction:
        """Triangulate one matched pair.

        Raises:
            ParallelRays: if the rays are parallel
        """
        return reconstruct_pair(self.K1, self.K2, self._reconstruction_pose, q1, q2)

    def reconstruct_many(self, q1: np.ndarray, q2: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized reconstruct: (points, gaps, in_front)."""
        points, gaps, in_front, _ = reconstruct_points(self.K1, self.K2, self._reconstruction_pose, q1, q2)
        return points, gaps, in_front
