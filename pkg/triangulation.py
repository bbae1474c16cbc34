"""Midpoint triangulation and the reprojection / reconstruction errors built on it."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from errors import ParallelRays
from geometry import (
    ArrayLike,
    CameraIntrinsics,
    Extrinsics,
    Point3,
    normalize_points,
    project_points,
)


logger = logging.getLogger(__name__)

PARALLEL_TOL = 1e-12
UNIT_DIRECTION_TOL = 1e-12

Pair = Tuple[ArrayLike, ArrayLike]


@dataclass(frozen=True, eq=False)
class Ray3:
    """Optical ray: origin in the primary frame and a unit direction into the scene."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.array(self.origin, dtype=float).reshape(3)
        direction = np.array(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(direction) - 1.0) > UNIT_DIRECTION_TOL:
            raise ValueError(f"Ray direction must be unit length, got {np.linalg.norm(direction)!r}")
        origin.setflags(write=False)
        direction.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)


@dataclass(frozen=True)
class Reconstruction:
    """Triangulated point, the length of the common perpendicular, and cheirality.

    ``in_front`` is False when the closest point lies behind either camera;
    such results are returned rather than raised so cost functions can
    penalize them.
    """

    point: Point3
    gap: float
    in_front: bool = True


def _camera_directions(K: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    n = normalize_points(K, pixels)
    d = np.hstack([n, np.ones((len(n), 1))])
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def ray_from_pixel(K: CameraIntrinsics, pose: Optional[Extrinsics], q: ArrayLike) -> Ray3:
    """Optical ray through pixel ``q``.

    Args:
        K: camera intrinsics
        pose: secondary camera pose, or None for the primary camera
        q: pixel (u, v)

    Returns:
        Ray expressed in the primary (world) frame
    """
    d_cam = _camera_directions(K, np.asarray(q, dtype=float))[0]
    if pose is None:
        return Ray3(np.zeros(3), d_cam)
    direction = pose.R.T @ d_cam
    return Ray3(pose.center, direction / np.linalg.norm(direction))


def closest_approach(o1: np.ndarray, d1: np.ndarray, o2: np.ndarray, d2: np.ndarray
                     ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized closest approach of line pairs given as (N, 3) arrays of unit directions.

    Returns:
        (midpoints, gaps, s, u, parallel) where ``o1 + s d1`` and ``o2 + u d2``
        are the closest points and ``parallel`` flags pairs with
        |d1 x d2| <= PARALLEL_TOL (their other outputs are NaN).
    """
    o1, d1, o2, d2 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (o1, d1, o2, d2))
    w0 = o1 - o2
    b = np.einsum("ij,ij->i", d1, d2)
    d = np.einsum("ij,ij->i", d1, w0)
    e = np.einsum("ij,ij->i", d2, w0)
    cross = np.linalg.norm(np.cross(d1, d2), axis=1)
    parallel = cross <= PARALLEL_TOL
    denom = np.where(parallel, np.nan, cross * cross)
    s = (b * e - d) / denom
    u = (e - b * d) / denom
    p1 = o1 + s[:, None] * d1
    p2 = o2 + u[:, None] * d2
    mid = 0.5 * (p1 + p2)
    gaps = np.linalg.norm(p1 - p2, axis=1)
    return mid, gaps, s, u, parallel


def triangulate(r1: Ray3, r2: Ray3) -> Reconstruction:
    """Midpoint of the shortest segment joining two rays.

    Raises:
        ParallelRays: if the rays are parallel within PARALLEL_TOL
    """
    mid, gaps, s, u, parallel = closest_approach(r1.origin, r1.direction, r2.origin, r2.direction)
    if parallel[0]:
        raise ParallelRays("Optical rays are parallel")
    return Reconstruction(Point3(*map(float, mid[0])), float(gaps[0]),
                          bool(s[0] > 0 and u[0] > 0))


def reconstruct_points(K1: CameraIntrinsics, K2: CameraIntrinsics, pose: Extrinsics,
                       q1: np.ndarray, q2: np.ndarray
                       ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized reconstruct_pair on (N, 2) pixel arrays.

    Returns:
        (points (N, 3), gaps (N,), in_front (N,), parallel (N,))
    """
    q1 = np.asarray(q1, dtype=float).reshape(-1, 2)
    q2 = np.asarray(q2, dtype=float).reshape(-1, 2)
    d1 = _camera_directions(K1, q1)
    d2 = _camera_directions(K2, q2) @ pose.R
    d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
    o1 = np.zeros_like(d1)
    o2 = np.broadcast_to(pose.center, d2.shape)
    mid, gaps, s, u, parallel = closest_approach(o1, d1, o2, d2)
    in_front = ~parallel & (s > 0) & (u > 0)
    return mid, gaps, in_front, parallel


def reconstruct_pair(K1: CameraIntrinsics, K2: CameraIntrinsics, pose: Extrinsics,
                     q1: ArrayLike, q2: ArrayLike) -> Reconstruction:
    """Triangulate one correspondence from its two pixels."""
    return triangulate(ray_from_pixel(K1, None, q1), ray_from_pixel(K2, pose, q2))


def reprojection_residuals(K1: CameraIntrinsics, K2: CameraIntrinsics, pose: Extrinsics,
                           q1: np.ndarray, q2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized pixel offsets q - q^R in both cameras.

    Returns:
        (residuals (N, 4) as [du1, dv1, du2, dv2], valid) where ``valid`` is
        False for parallel rays or reconstructions behind either camera
    """
    q1 = np.asarray(q1, dtype=float).reshape(-1, 2)
    q2 = np.asarray(q2, dtype=float).reshape(-1, 2)
    points, _, in_front, _ = reconstruct_points(K1, K2, pose, q1, q2)
    pix1, _ = project_points(K1, np.eye(3), np.zeros(3), points)
    pix2, _ = project_points(K2, pose.R, pose.T, points)
    offsets = np.hstack([q1 - pix1, q2 - pix2])
    valid = in_front & np.all(np.isfinite(offsets), axis=1)
    return offsets, valid


def reprojection_errors(K1: CameraIntrinsics, K2: CameraIntrinsics, pose: Extrinsics,
                        q1: np.ndarray, q2: np.ndarray
                        ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized per-camera reprojection errors in pixels.

    Returns:
        (e1, e2, valid) where ``valid`` is False for parallel rays or
        reconstructions behind either camera
    """
    offsets, valid = reprojection_residuals(K1, K2, pose, q1, q2)
    e1 = np.linalg.norm(offsets[:, :2], axis=1)
    e2 = np.linalg.norm(offsets[:, 2:], axis=1)
    return e1, e2, valid


def reprojection_error(K1: CameraIntrinsics, K2: CameraIntrinsics, pose: Extrinsics,
                       q1: ArrayLike, q2: ArrayLike) -> Tuple[float, float]:
    """Pixel distances between each detection and the back-projection of the triangulated point.

    Raises:
        ParallelRays: if the pair cannot be triangulated
    """
    rec = reconstruct_pair(K1, K2, pose, q1, q2)
    point = np.array([rec.point], dtype=float)
    pix1, _ = project_points(K1, np.eye(3), np.zeros(3), point)
    pix2, _ = project_points(K2, pose.R, pose.T, point)
    e1 = float(np.linalg.norm(pix1[0] - np.asarray(q1, dtype=float)))
    e2 = float(np.linalg.norm(pix2[0] - np.asarray(q2, dtype=float)))
    logger.debug(f"Reprojection of {tuple(rec.point)}: e1={e1:.3e} e2={e2:.3e}")
    return e1, e2


def reconstructed_distances(K1: CameraIntrinsics, K2: CameraIntrinsics, pose: Extrinsics,
                            a1: np.ndarray, a2: np.ndarray, b1: np.ndarray, b2: np.ndarray
                            ) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized |Q_A - Q_B| for target pairs given as four (N, 2) pixel arrays.

    Returns:
        (distances, valid)
    """
    pa, _, front_a, _ = reconstruct_points(K1, K2, pose, a1, a2)
    pb, _, front_b, _ = reconstruct_points(K1, K2, pose, b1, b2)
    dist = np.linalg.norm(pa - pb, axis=1)
    return dist, front_a & front_b & np.isfinite(dist)


def distance_error(K1: CameraIntrinsics, K2: CameraIntrinsics, pose: Extrinsics,
                   pair_a: Pair, pair_b: Pair, D: float) -> Tuple[float, float]:
    """Absolute and relative error of the reconstructed inter-target distance.

    Args:
        pair_a: (q1, q2) pixels of target A
        pair_b: (q1, q2) pixels of target B
        D: measured distance in meters

    Returns:
        (|D - D_R| in meters, that error divided by D)

    Raises:
        ParallelRays: if either pair cannot be triangulated
    """
    if not D > 0:
        raise ValueError(f"Distance must be positive, got {D}")
    rec_a = reconstruct_pair(K1, K2, pose, *pair_a)
    rec_b = reconstruct_pair(K1, K2, pose, *pair_b)
    err = abs(D - float(np.linalg.norm(np.subtract(rec_a.point, rec_b.point))))
    return err, err / D
