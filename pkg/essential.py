"""Essential matrix method: estimate E from normalized correspondences, then decompose it.

Estimation runs in three stages:

1. Initialization. With at least 8 correspondences, a Hartley-normalized
   linear least-squares solve on the nine entries of E. With 5 to 7, a seeded
   coarse random search over the five angles.
2. Projection onto the essential manifold, singular values (σ, σ, 0).
3. Local refinement of the squared-residual sum over the five angles with
   the Monte Carlo minimizer.

The rig's essential matrix is ``essential_from_extrinsics(pose)``, so the
transpose of any estimate has the form [t]x R with (R, t) the secondary pose.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

import geometry
from correspondences import CorrespondenceSet2D
from errors import AmbiguousCheirality, CalibrationError, DegenerateConfiguration, InsufficientCorrespondences
from geometry import (
    CameraIntrinsics,
    EssentialMatrix,
    Extrinsics,
    TranslationConvention,
    angles_from_pose,
    essential_from_extrinsics,
    normalize_points,
)
from montecarlo import MonteCarloConfig, make_rng, minimize, residual_cost
from triangulation import reconstruct_points


logger = logging.getLogger(__name__)

MIN_CORRESPONDENCES = 5
LINEAR_CORRESPONDENCES = 8
CHEIRALITY_MAJORITY = 0.6
RANK_TOL = 1e-10
COARSE_SAMPLES = 4096

_W = np.array([
    [0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
])


def _homogeneous(points: np.ndarray) -> np.ndarray:
    return np.hstack([points, np.ones((len(points), 1))])


def _hartley_transform(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance √2."""
    centroid = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - centroid, axis=1))
    scale = math.sqrt(2.0) / spread if spread > 0 else 1.0
    return np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])


def _design_matrix(h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
    """Rows such that row_k · E.ravel() == h1_k.T E h2_k."""
    return np.einsum("ni,nj->nij", h1, h2).reshape(len(h1), 9)


def _check_rank(n1: np.ndarray, n2: np.ndarray) -> None:
    A = _design_matrix(_homogeneous(n1), _homogeneous(n2))
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > RANK_TOL * sv[0])) if sv[0] > 0 else 0
    required = min(len(n1), LINEAR_CORRESPONDENCES)
    if rank < required:
        raise DegenerateConfiguration(
            f"Epipolar constraint matrix has rank {rank}, need {required} "
            f"(coplanar, collinear or repeated correspondences)"
        )


def _linear_estimate(n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    T1 = _hartley_transform(n1)
    T2 = _hartley_transform(n2)
    A = _design_matrix(_homogeneous(n1) @ T1.T, _homogeneous(n2) @ T2.T)
    _, _, Vt = np.linalg.svd(A)
    E_scaled = Vt[-1].reshape(3, 3)
    return T1.T @ E_scaled @ T2


def _batch_essentials(samples: np.ndarray, convention: TranslationConvention) -> np.ndarray:
    """Rig essential matrices ([t]x R).T for a (k, 5) array of angle vectors."""
    R = Rotation.from_euler("YXZ", samples[:, :3]).as_matrix()
    delta, epsilon = samples[:, 3], samples[:, 4]
    if convention is TranslationConvention.DELTA_ELEVATION:
        t = np.stack([np.cos(delta) * np.cos(epsilon), np.cos(delta) * np.sin(epsilon), np.sin(delta)], axis=1)
    else:
        t = np.stack([np.cos(delta) * np.cos(epsilon), np.sin(delta) * np.cos(epsilon), np.sin(epsilon)], axis=1)
    # Row j of the result is t x (column j of R)
    return np.cross(t[:, None, :], np.swapaxes(R, 1, 2))


def _coarse_estimate(n1: np.ndarray, n2: np.ndarray, seed: int,
                     convention: TranslationConvention) -> np.ndarray:
    rng = make_rng(seed)
    low = np.array([-math.pi, -math.pi / 2, -math.pi, -math.pi / 2, -math.pi])
    high = np.array([math.pi, math.pi / 2, math.pi, math.pi / 2, math.pi])
    samples = rng.uniform(low, high, size=(COARSE_SAMPLES, 5))
    E = _batch_essentials(samples, convention)
    res = np.einsum("ni,kij,nj->kn", _homogeneous(n1), E, _homogeneous(n2))
    costs = np.sum(res ** 2, axis=1)
    best = int(np.argmin(costs))
    logger.debug(f"Coarse search: best residual cost {costs[best]:.3e} of {COARSE_SAMPLES} samples")
    return E[best]


def project_to_essential(E: np.ndarray) -> np.ndarray:
    """Closest matrix with singular values (σ, σ, 0), σ the mean of the top two."""
    U, S, Vt = np.linalg.svd(np.asarray(E, dtype=float))
    sigma = 0.5 * (S[0] + S[1])
    return U @ np.diag([sigma, sigma, 0.0]) @ Vt


def normalize_essential(E) -> EssentialMatrix:
    """Canonical representative: ‖E‖_F = √2 and the first nonzero entry positive."""
    E = E.E if isinstance(E, EssentialMatrix) else np.asarray(E, dtype=float)
    E = E * (math.sqrt(2.0) / np.linalg.norm(E))
    flat = E.ravel()
    nonzero = np.flatnonzero(np.abs(flat) > geometry.ESSENTIAL_TOL * np.max(np.abs(flat)))
    if flat[nonzero[0]] < 0:
        E = -E
    return EssentialMatrix(E)


def _pose_candidates(E: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """The four (R, t) factorizations of E.T = [t]x R with |t| = 1."""
    U, _, Vt = np.linalg.svd(E.T)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    t = U[:, 2] / np.linalg.norm(U[:, 2])
    candidates = []
    for R in (U @ _W @ Vt, U @ _W.T @ Vt):
        candidates.append((R, t))
        candidates.append((R, -t))
    return candidates


def decompose_essential(E, baseline: float, corr: CorrespondenceSet2D,
                        K1: CameraIntrinsics, K2: CameraIntrinsics) -> Extrinsics:
    """Recover the secondary pose from E, fixing the scale with the measured baseline.

    The four algebraic factorizations are disambiguated by cheirality: the
    chosen one must place at least CHEIRALITY_MAJORITY of the correspondences
    in front of both cameras.

    Args:
        E: essential matrix (any scale and sign)
        baseline: measured |T| in meters
        corr: correspondences used for the vote
        K1, K2: intrinsics of the primary and secondary cameras

    Returns:
        Extrinsics with |T| == baseline

    Raises:
        AmbiguousCheirality: if no candidate reaches the required majority
    """
    if not baseline > 0:
        raise ValueError(f"Baseline must be positive, got {baseline}")
    if len(corr) == 0:
        raise ValueError("Cheirality vote needs at least one correspondence")
    E = E.E if isinstance(E, EssentialMatrix) else np.asarray(E, dtype=float)

    votes = []
    for R, t in _pose_candidates(E):
        pose = Extrinsics(R, baseline * t)
        _, _, in_front, _ = reconstruct_points(K1, K2, pose, corr.q1, corr.q2)
        votes.append((int(np.sum(in_front)), pose))

    counts = [count for count, _ in votes]
    best = int(np.argmax(counts))
    logger.debug(f"Cheirality votes {counts} of {len(corr)} correspondences")
    if counts[best] < CHEIRALITY_MAJORITY * len(corr):
        raise AmbiguousCheirality(
            f"Best decomposition puts {counts[best]}/{len(corr)} points in front of both cameras"
        )
    return votes[best][1]


def estimate_essential(corr: CorrespondenceSet2D, K1: CameraIntrinsics, K2: CameraIntrinsics,
                       seed: int = 0, config: Optional[MonteCarloConfig] = None,
                       convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                       ) -> EssentialMatrix:
    """Essential matrix minimizing the sum of squared residuals of ``corr``.

    Args:
        corr: at least 5 point-to-point correspondences in pixels
        K1, K2: intrinsics of the primary and secondary cameras
        seed: seed of the coarse search and of the refinement
        config: Monte Carlo schedule of the refinement (its seed is replaced by ``seed``)
        convention: translation parametrization used by the refinement

    Returns:
        Normalized EssentialMatrix

    Raises:
        InsufficientCorrespondences: if fewer than 5 correspondences are given
        DegenerateConfiguration: if the epipolar constraints are rank deficient
    """
    if len(corr) < MIN_CORRESPONDENCES:
        raise InsufficientCorrespondences(
            f"Essential estimation needs {MIN_CORRESPONDENCES} correspondences, got {len(corr)}"
        )
    n1 = normalize_points(K1, corr.q1)
    n2 = normalize_points(K2, corr.q2)
    _check_rank(n1, n2)

    if len(corr) >= LINEAR_CORRESPONDENCES:
        initial = _linear_estimate(n1, n2)
    else:
        initial = _coarse_estimate(n1, n2, seed, convention)
    projected = project_to_essential(initial)

    try:
        pose = decompose_essential(projected, 1.0, corr, K1, K2)
    except CalibrationError as e:
        logger.warning(f"Skipping essential refinement: {e}")
        return normalize_essential(projected)

    start = angles_from_pose(pose.R, pose.T, convention, strict=False)
    config = (config or MonteCarloConfig()).with_seed(seed)
    result = minimize(start, residual_cost(corr, K1, K2, convention), config)
    logger.info(f"Essential refinement: residual cost {result.trace.accepted_costs[0]:.3e} -> {result.cost:.3e}")
    return normalize_essential(essential_from_extrinsics(Extrinsics.from_angles(result.angles, convention)))
