"""Projective geometry primitives for a canonical two-camera system.

Conventions used throughout the package:

* Camera frames are right-handed, z along the optical axis, x to the right,
  y downward.
* ``Extrinsics(R, T)`` maps primary-camera coordinates into the secondary
  camera: ``x2 = R @ x1 + T``. The secondary projection matrix is
  ``P2 = K2 [R|T]`` and the secondary centre, in the primary (world) frame,
  is ``-R.T @ T``.
* Residuals are always primary-left: ``q1_hat.T @ E @ q2_hat``.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from errors import GimbalLock, PointAtInfinity


logger = logging.getLogger(__name__)

# Overridable through Config.apply_tolerances()
ORTHONORMAL_TOL = 1e-12
ESSENTIAL_TOL = 1e-9
UNIT_TOL = 1e-9
GIMBAL_TOL = 1e-9
PROJECTION_EPS = 1e-15


class Pixel2(NamedTuple):
    """Image point in pixels."""
    u: float
    v: float


class NormalizedPoint2(NamedTuple):
    """Dimensionless image point, K^-1 applied."""
    x: float
    y: float


class Point3(NamedTuple):
    """3D point in meters."""
    X: float
    Y: float
    Z: float


ArrayLike = Union[np.ndarray, Tuple[float, ...], list]


def to_homogeneous(point: ArrayLike) -> np.ndarray:
    """Append a unit component to a 2D or 3D point."""
    arr = np.asarray(point, dtype=float)
    return np.append(arr, 1.0)


def dehomogenize(h: ArrayLike) -> np.ndarray:
    """Divide projective components by the last one.

    Raises:
        ValueError: if every component is zero
        PointAtInfinity: if the last component is zero within PROJECTION_EPS
    """
    arr = np.asarray(h, dtype=float)
    if not np.any(arr):
        raise ValueError("Projective point with all components zero")
    w = arr[-1]
    if abs(w) < PROJECTION_EPS:
        raise PointAtInfinity(f"Last projective component {w!r} is zero")
    return arr[:-1] / w


@dataclass(frozen=True)
class CameraIntrinsics:
    """Internal parameters of one camera (focal length, skew, principal point)."""

    omega: float
    u0: float
    v0: float
    s: float = 0.0

    def __post_init__(self):
        values = (self.omega, self.u0, self.v0, self.s)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"Intrinsics must be finite: {values}")
        if self.omega <= 0:
            raise ValueError(f"Focal length must be positive, got {self.omega}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [self.omega, self.s, self.u0],
            [0.0, self.omega, self.v0],
            [0.0, 0.0, 1.0],
        ])

    @property
    def inverse(self) -> np.ndarray:
        """Closed-form K^-1 (upper triangular)."""
        w, s = self.omega, self.s
        return np.array([
            [1.0 / w, -s / (w * w), (s * self.v0 - w * self.u0) / (w * w)],
            [0.0, 1.0 / w, -self.v0 / w],
            [0.0, 0.0, 1.0],
        ])


class TranslationConvention(Enum):
    """Component order of the unit translation in terms of (delta, epsilon).

    DELTA_ELEVATION:   t = (cosδ cosε, cosδ sinε, sinδ)
    EPSILON_ELEVATION: t = (cosδ cosε, sinδ cosε, sinε)
    """

    DELTA_ELEVATION = "delta_elevation"
    EPSILON_ELEVATION = "epsilon_elevation"


@dataclass(frozen=True)
class ExtrinsicAngles:
    """Five-angle parametrization of the secondary pose plus the measured baseline."""

    alpha: float
    beta: float
    gamma: float
    delta: float
    epsilon: float
    baseline: float

    def __post_init__(self):
        if not all(math.isfinite(a) for a in self.as_array()):
            raise ValueError(f"Angles must be finite: {self}")
        if not (math.isfinite(self.baseline) and self.baseline > 0):
            raise ValueError(f"Baseline must be positive, got {self.baseline}")

    def as_array(self) -> np.ndarray:
        """The five angles (the baseline is not a free parameter)."""
        return np.array([self.alpha, self.beta, self.gamma, self.delta, self.epsilon])

    def with_angles(self, angles: ArrayLike) -> "ExtrinsicAngles":
        a = np.asarray(angles, dtype=float)
        return ExtrinsicAngles(float(a[0]), float(a[1]), float(a[2]),
                               float(a[3]), float(a[4]), self.baseline)


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


def is_rotation(R: np.ndarray, tol: float = None) -> bool:
    tol = ORTHONORMAL_TOL if tol is None else tol
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.max(np.abs(R.T @ R - np.eye(3))) <= tol
                and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Secondary pose [R|T] with x2 = R x1 + T, T in meters."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _readonly(self.R))
        object.__setattr__(self, "T", _readonly(np.reshape(self.T, 3)))
        if not is_rotation(self.R):
            raise ValueError("R is not a proper rotation within tolerance")
        if not np.all(np.isfinite(self.T)) or np.linalg.norm(self.T) <= 0:
            raise ValueError("T must be finite with positive norm")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.T))

    @property
    def unit_translation(self) -> np.ndarray:
        return self.T / self.baseline

    @property
    def center(self) -> np.ndarray:
        """Secondary optical centre in the primary frame."""
        return -self.R.T @ self.T

    @classmethod
    def from_angles(cls, angles: ExtrinsicAngles,
                    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                    ) -> "Extrinsics":
        R = rotation_from_angles(angles.alpha, angles.beta, angles.gamma)
        T = translation_from_angles(angles.delta, angles.epsilon, angles.baseline, convention)
        return cls(R, T)

    def scaled(self, factor: float) -> "Extrinsics":
        """Same orientation, baseline multiplied by ``factor``."""
        return Extrinsics(self.R, self.T * factor)


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """3x4 projection matrix P = K [R|T]."""

    P: np.ndarray

    def __post_init__(self):
        P = _readonly(self.P)
        if P.shape != (3, 4):
            raise ValueError(f"Projection matrix must be 3x4, got {P.shape}")
        if np.linalg.matrix_rank(P[:, :3]) < 3:
            raise ValueError("Left 3x3 block of P must have rank 3")
        object.__setattr__(self, "P", P)

    @classmethod
    def from_camera(cls, K: CameraIntrinsics, pose: Extrinsics = None) -> "ProjectionMatrix":
        """K[I|0] for the primary camera when ``pose`` is None, K[R|T] otherwise."""
        if pose is None:
            Rt = np.hstack([np.eye(3), np.zeros((3, 1))])
        else:
            Rt = np.hstack([pose.R, pose.T.reshape(3, 1)])
        return cls(K.matrix @ Rt)


@dataclass(frozen=True, eq=False)
class EssentialMatrix:
    """Rank-2 essential matrix with two equal nonzero singular values."""

    E: np.ndarray

    def __post_init__(self):
        E = _readonly(self.E)
        if E.shape != (3, 3) or not np.all(np.isfinite(E)):
            raise ValueError("Essential matrix must be a finite 3x3 matrix")
        check_essential(E)
        object.__setattr__(self, "E", E)

    def __mul__(self, factor: float) -> "EssentialMatrix":
        return EssentialMatrix(self.E * factor)

    __rmul__ = __mul__


def check_essential(E: np.ndarray, tol: float = None) -> None:
    """Raise ValueError unless E has singular values proportional to (1, 1, 0)."""
    tol = ESSENTIAL_TOL if tol is None else tol
    sv = np.linalg.svd(E, compute_uv=False)
    norm = np.linalg.norm(E)
    if norm == 0:
        raise ValueError("Essential matrix is zero")
    if abs(np.linalg.det(E)) > tol * norm ** 3:
        raise ValueError(f"det E = {np.linalg.det(E):.3e} is not zero")
    if abs(sv[0] - sv[1]) > tol * sv[0]:
        raise ValueError(f"Nonzero singular values differ: {sv[0]!r} vs {sv[1]!r}")
    if sv[2] > tol * norm:
        raise ValueError(f"Third singular value {sv[2]!r} is not zero")


def _matrix(E: Union[EssentialMatrix, np.ndarray]) -> np.ndarray:
    return E.E if isinstance(E, EssentialMatrix) else np.asarray(E, dtype=float)


def skew(t: ArrayLike) -> np.ndarray:
    """Cross-product matrix [t]x, so that skew(t) @ v == cross(t, v)."""
    tx, ty, tz = np.asarray(t, dtype=float)
    return np.array([
        [0.0, -tz, ty],
        [tz, 0.0, -tx],
        [-ty, tx, 0.0],
    ])


def project(P: Union[ProjectionMatrix, np.ndarray], Q: ArrayLike) -> Pixel2:
    """Project a 3D point through P and dehomogenize.

    Args:
        P: 3x4 projection matrix
        Q: point (X, Y, Z) in meters

    Returns:
        Pixel coordinates (u, v)

    Raises:
        PointAtInfinity: if the point lies on the camera's focal plane
    """
    P = P.P if isinstance(P, ProjectionMatrix) else np.asarray(P, dtype=float)
    x = P @ to_homogeneous(Q)
    if abs(x[2]) < PROJECTION_EPS:
        raise PointAtInfinity(f"Point {tuple(Q)} projects to infinity")
    return Pixel2(float(x[0] / x[2]), float(x[1] / x[2]))


def project_points(K: CameraIntrinsics, R: np.ndarray, T: np.ndarray,
                   points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points.

    Returns:
        (pixels (N, 2), depth (N,)) where depth is the camera-frame z.
        Pixels for points on the focal plane are NaN; callers check depth.
    """
    cam = points @ np.asarray(R).T + np.asarray(T)
    depth = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = cam[:, :2] / depth[:, None]
    xy[np.abs(depth) < PROJECTION_EPS] = np.nan
    pix = xy @ K.matrix[:2, :2].T + np.array([K.u0, K.v0])
    return pix, depth


def normalize(K: CameraIntrinsics, q: ArrayLike) -> NormalizedPoint2:
    """Apply K^-1 to a pixel and dehomogenize."""
    x = K.inverse @ to_homogeneous(q)
    return NormalizedPoint2(float(x[0] / x[2]), float(x[1] / x[2]))


def normalize_points(K: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Vectorized normalize for an (N, 2) array; returns (N, 2)."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    h = np.hstack([pixels, np.ones((len(pixels), 1))]) @ K.inverse.T
    return h[:, :2] / h[:, 2:3]


def rotation_from_angles(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """R = R_y(alpha) @ R_x(beta) @ R_z(gamma), right-handed axis rotations."""
    # Uppercase axes are intrinsic: the matrix product runs y, x, z left to right.
    return Rotation.from_euler("YXZ", [alpha, beta, gamma]).as_matrix()


def translation_from_angles(delta: float, epsilon: float, baseline: float,
                            convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
                            ) -> np.ndarray:
    """Translation vector of length ``baseline`` in the chosen angle convention."""
    if not baseline > 0:
        raise ValueError(f"Baseline must be positive, got {baseline}")
    cd, sd = math.cos(delta), math.sin(delta)
    ce, se = math.cos(epsilon), math.sin(epsilon)
    if convention is TranslationConvention.DELTA_ELEVATION:
        t = np.array([cd * ce, cd * se, sd])
    else:
        t = np.array([cd * ce, sd * ce, se])
    return baseline * t


def essential_from_pose(R: np.ndarray, t: ArrayLike) -> EssentialMatrix:
    """E = [t]x R.

    ``(R, t)`` is the motion bringing the secondary frame into the primary one
    (x1 = R x2 + t), which makes q1_hat.T E q2_hat vanish on correct pairs.
    Use essential_from_extrinsics for an ``Extrinsics`` pose.

    Raises:
        ValueError: if t is not unit length within UNIT_TOL
    """
    t = np.asarray(t, dtype=float).reshape(3)
    if abs(np.linalg.norm(t) - 1.0) > UNIT_TOL:
        raise ValueError(f"Translation must be a unit vector, |t| = {np.linalg.norm(t)!r}")
    return EssentialMatrix(skew(t) @ np.asarray(R, dtype=float))


def essential_from_extrinsics(pose: Extrinsics) -> EssentialMatrix:
    """Essential matrix of the rig for primary-left residuals."""
    R_inv = pose.R.T
    return essential_from_pose(R_inv, -R_inv @ pose.unit_translation)


def residual(E: Union[EssentialMatrix, np.ndarray], q1: ArrayLike, q2: ArrayLike) -> float:
    """Signed epipolar residual q1_hat.T E q2_hat on normalized points."""
    return float(to_homogeneous(q1) @ _matrix(E) @ to_homogeneous(q2))


def residuals(E: Union[EssentialMatrix, np.ndarray], n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Vectorized residual for (N, 2) arrays of normalized points."""
    n1 = np.asarray(n1, dtype=float).reshape(-1, 2)
    n2 = np.asarray(n2, dtype=float).reshape(-1, 2)
    h1 = np.hstack([n1, np.ones((len(n1), 1))])
    h2 = np.hstack([n2, np.ones((len(n2), 1))])
    return np.einsum("ni,ij,nj->n", h1, _matrix(E), h2)


def _translation_angles(t: np.ndarray, convention: TranslationConvention) -> Tuple[float, float]:
    if convention is TranslationConvention.DELTA_ELEVATION:
        delta = math.asin(float(np.clip(t[2], -1.0, 1.0)))
        epsilon = math.atan2(t[1], t[0])
    else:
        epsilon = math.asin(float(np.clip(t[2], -1.0, 1.0)))
        delta = math.atan2(t[1], t[0])
    return delta, epsilon


def angles_from_pose(R: np.ndarray, T: ArrayLike,
                     convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION,
                     strict: bool = True) -> ExtrinsicAngles:
    """Invert rotation_from_angles / translation_from_angles.

    Beta is returned in [-pi/2, pi/2].

    Args:
        R: proper rotation
        T: translation with |T| > 0
        convention: translation component order
        strict: raise GimbalLock at the pitch singularity instead of resolving it

    Raises:
        GimbalLock: if |cos beta| < GIMBAL_TOL and ``strict``; the exception's
            ``resolved`` attribute holds the angles with gamma = 0
    """
    R = np.asarray(R, dtype=float)
    T = np.asarray(T, dtype=float).reshape(3)
    if not is_rotation(R, tol=max(ORTHONORMAL_TOL, 1e-9)):
        raise ValueError("R is not a proper rotation")
    baseline = float(np.linalg.norm(T))
    if not baseline > 0:
        raise ValueError("T must have positive norm")
    delta, epsilon = _translation_angles(T / baseline, convention)

    # R = [[ca cg + sa sb sg, sa sb cg - ca sg, sa cb],
    #      [cb sg,            cb cg,            -sb  ],
    #      [ca sb sg - sa cg, sa sg + ca sb cg, ca cb]]
    beta = math.asin(float(np.clip(-R[1, 2], -1.0, 1.0)))
    cos_beta = math.hypot(R[1, 0], R[1, 1])
    if cos_beta < GIMBAL_TOL:
        alpha = math.atan2(-R[2, 0], R[0, 0])
        resolved = ExtrinsicAngles(alpha, math.copysign(math.pi / 2, beta), 0.0,
                                   delta, epsilon, baseline)
        if strict:
            raise GimbalLock(f"Pitch at {beta:+.6f} rad, yaw and roll not unique", resolved)
        logger.warning(f"Gimbal lock resolved with roll = 0 (yaw {alpha:.6f} rad)")
        return resolved
    alpha = math.atan2(R[0, 2], R[2, 2])
    gamma = math.atan2(R[1, 0], R[1, 1])
    return ExtrinsicAngles(alpha, beta, gamma, delta, epsilon, baseline)
