#!/usr/bin/env python3
"""Tests for ray construction, midpoint triangulation and the derived error measures."""

import sys

import numpy as np
import pytest
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

import triangulation
from errors import ParallelRays
from geometry import CameraIntrinsics, ExtrinsicAngles, Extrinsics, ProjectionMatrix, project, project_points
from triangulation import (
    Ray3,
    distance_error,
    ray_from_pixel,
    reconstruct_pair,
    reconstruct_points,
    reconstructed_distances,
    reprojection_error,
    reprojection_errors,
    triangulate,
)


K = CameraIntrinsics(omega=1000.0, u0=500.0, v0=400.0)
POSE = Extrinsics.from_angles(ExtrinsicAngles(0.08, 0.02, -0.01, 0.01, np.pi, 1.5))


def exact_pair(pose: Extrinsics, Q):
    return project(ProjectionMatrix.from_camera(K), Q), project(ProjectionMatrix.from_camera(K, pose), Q)


def point_line_distance_sq(x, ray: Ray3) -> float:
    w = np.asarray(x) - ray.origin
    return float(w @ w - (w @ ray.direction) ** 2)


def test_principal_ray_of_primary_camera():
    ray = ray_from_pixel(K, None, (500, 400))
    assert np.array_equal(ray.origin, [0, 0, 0])
    assert np.allclose(ray.direction, [0, 0, 1])


def test_off_axis_ray_direction():
    ray = ray_from_pixel(K, None, (1500, 400))
    assert np.allclose(ray.direction, np.array([1, 0, 1]) / np.sqrt(2))


def test_secondary_ray_starts_at_camera_center():
    ray = ray_from_pixel(K, Extrinsics(np.eye(3), (-1, 0, 0)), (500, 400))
    assert np.allclose(ray.origin, [1, 0, 0])
    assert np.allclose(ray.direction, [0, 0, 1])


def test_ray_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        Ray3((0, 0, 0), (0, 0, 2))


def test_parallel_rays_raise():
    with pytest.raises(ParallelRays):
        triangulate(Ray3((0, 0, 0), (0, 0, 1)), Ray3((1, 0, 0), (0, 0, 1)))


def test_intersecting_rays():
    rec = triangulate(Ray3((0, 0, 0), (0, 0, 1)), Ray3((1, 0, 0), np.array([-1, 0, 1]) / np.sqrt(2)))
    assert np.allclose(rec.point, [0, 0, 1], atol=1e-12)
    assert rec.gap == pytest.approx(0.0, abs=1e-12)
    assert rec.in_front


def test_skew_rays_midpoint_and_gap():
    r1, r2 = Ray3((0, 0, 0), (0, 0, 1)), Ray3((1, 0, -1), (0, 1, 0))
    rec = triangulate(r1, r2)
    assert np.allclose(rec.point, [0.5, 0, -1], atol=1e-12)
    assert rec.gap == pytest.approx(1.0, abs=1e-12)

    # Dense parameter grid over both lines finds the same closest approach
    s, u = np.meshgrid(np.linspace(-3, 3, 601), np.linspace(-3, 3, 601))
    gaps = np.sqrt(1.0 + (s + 1.0) ** 2 + u ** 2)
    assert gaps.min() == pytest.approx(rec.gap, abs=1e-9)


def test_triangulate_is_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d1, d2 = rng.normal(size=3), rng.normal(size=3)
        r1 = Ray3(rng.normal(size=3), d1 / np.linalg.norm(d1))
        r2 = Ray3(rng.normal(size=3), d2 / np.linalg.norm(d2))
        assert np.allclose(triangulate(r1, r2).point, triangulate(r2, r1).point, atol=1e-12)


def test_midpoint_minimizes_squared_distance_to_both_lines():
    rng = np.random.default_rng(2)
    r1 = Ray3((0, 0, 0), np.array([0.1, 0.2, 1]) / np.linalg.norm([0.1, 0.2, 1]))
    r2 = Ray3((1.5, 0.1, 0.2), np.array([-0.2, 0.1, 1]) / np.linalg.norm([-0.2, 0.1, 1]))
    rec = triangulate(r1, r2)
    best = point_line_distance_sq(rec.point, r1) + point_line_distance_sq(rec.point, r2)
    for step in rng.normal(scale=1e-3, size=(2000, 3)):
        x = np.asarray(rec.point) + step
        assert point_line_distance_sq(x, r1) + point_line_distance_sq(x, r2) >= best - 1e-15


def test_midpoint_matches_least_squares_on_random_skew_rays():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d1, d2 = rng.normal(size=3), rng.normal(size=3)
        r1 = Ray3(rng.normal(size=3), d1 / np.linalg.norm(d1))
        r2 = Ray3(rng.normal(size=3), d2 / np.linalg.norm(d2))

        def offsets(x):
            # Perpendicular offsets of x from both lines
            return np.concatenate([(np.eye(3) - np.outer(r.direction, r.direction)) @ (x - r.origin)
                                   for r in (r1, r2)])

        best = least_squares(offsets, np.zeros(3), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        rec = triangulate(r1, r2)
        assert np.allclose(rec.point, best.x, atol=1e-8)
        s, u = least_squares(lambda p: r1.origin + p[0] * r1.direction - r2.origin - p[1] * r2.direction,
                             np.zeros(2), xtol=1e-15, ftol=1e-15, gtol=1e-15).x
        gap = np.linalg.norm(r1.origin + s * r1.direction - r2.origin - u * r2.direction)
        assert rec.gap == pytest.approx(gap, abs=1e-8)


def test_behind_camera_is_flagged_not_raised():
    pose = Extrinsics(np.eye(3), (-1, 0, 0))
    rec = reconstruct_pair(K, K, pose, (-500, 400), (1500, 400))
    assert not rec.in_front


def test_reconstruct_exact_projections():
    Q = (0.2, -0.1, 7.0)
    q1, q2 = exact_pair(POSE, Q)
    rec = reconstruct_pair(K, K, POSE, q1, q2)
    assert np.allclose(rec.point, Q, atol=1e-9)
    assert rec.gap < 1e-9
    assert rec.in_front


def test_parallel_principal_rays():
    pose = Extrinsics(np.eye(3), (-0.5, 0, 0))
    with pytest.raises(ParallelRays):
        reconstruct_pair(K, K, pose, (500, 400), (500, 400))


def test_perturbed_pair_has_gap():
    q1, q2 = exact_pair(POSE, (0.2, -0.1, 7.0))
    rec = reconstruct_pair(K, K, POSE, (q1.u + 0.5, q1.v), q2)
    assert rec.gap > 0


def test_round_trip_many_random_poses():
    rng = np.random.default_rng(7)
    K2 = CameraIntrinsics(omega=1100.0, u0=520.0, v0=390.0)
    for _ in range(1000):
        pose = Extrinsics.from_angles(ExtrinsicAngles(
            *rng.uniform(-0.2, 0.2, 3), rng.uniform(-0.2, 0.2), rng.uniform(-np.pi, np.pi), rng.uniform(0.5, 3),
        ))
        Q = rng.uniform([-1, -1, 6], [1, 1, 10])
        if (pose.R @ Q + pose.T)[2] <= 1.0:
            continue
        q1, _ = project_points(K, np.eye(3), np.zeros(3), Q[None])
        q2, _ = project_points(K2, pose.R, pose.T, Q[None])
        points, gaps, in_front, _ = reconstruct_points(K, K2, pose, q1, q2)
        assert np.allclose(points[0], Q, atol=1e-9)
        assert gaps[0] < 1e-9
        assert in_front[0]


def test_noise_free_reprojection_error():
    q1, q2 = exact_pair(POSE, (0.3, 0.2, 6.0))
    e1, e2 = reprojection_error(K, K, POSE, q1, q2)
    assert e1 < 1e-7 and e2 < 1e-7


def test_noise_on_one_camera_moves_both_reprojections():
    q1, q2 = exact_pair(POSE, (0.3, 0.2, 6.0))
    e1, e2 = reprojection_error(K, K, POSE, (q1.u + 1.0, q1.v - 0.5), q2)
    assert e1 > 0 and e2 > 0


def test_reprojection_error_triangulates_once_and_matches_vectorized():
    q1, q2 = exact_pair(POSE, (0.3, 0.2, 6.0))
    noisy1, noisy2 = (q1.u + 0.8, q1.v - 0.4), (q2.u - 0.2, q2.v + 0.6)
    calls = []
    original = triangulation.reconstruct_pair

    def counting(*args):
        calls.append(args)
        return original(*args)

    triangulation.reconstruct_pair = counting
    try:
        e1, e2 = reprojection_error(K, K, POSE, noisy1, noisy2)
    finally:
        triangulation.reconstruct_pair = original
    assert len(calls) == 1
    v1, v2, valid = reprojection_errors(K, K, POSE, np.array([noisy1]), np.array([noisy2]))
    assert valid[0]
    assert e1 == pytest.approx(v1[0], abs=1e-9) and e2 == pytest.approx(v2[0], abs=1e-9)


def test_symmetric_setup_gives_equal_errors():
    b = 2.0
    pose = Extrinsics(np.eye(3), (-b, 0, 0))
    # A half-turn about the line x = b/2, y = 0 swaps the cameras and maps
    # pixel (u, v) to (2 u0 - u, 2 v0 - v)
    q1, q2 = exact_pair(pose, (b / 2, 0.0, 8.0))
    e1, e2 = reprojection_error(K, K, pose, (q1.u + 0.7, q1.v + 0.3), (q2.u - 0.7, q2.v - 0.3))
    # Opposite vertical offsets make the rays skew
    assert e1 > 0.1
    assert e1 == pytest.approx(e2, abs=1e-9)


def test_reprojection_errors_flag_invalid_pairs():
    pose = Extrinsics(np.eye(3), (-1, 0, 0))
    q1 = np.array([[-500, 400], [500, 400]])
    q2 = np.array([[1500, 400], [400, 400]])
    _, _, valid = reprojection_errors(K, K, pose, q1, q2)
    assert valid.tolist() == [False, True]


def test_distance_error_noise_free():
    A, B = (0.1, 0.2, 6.0), (0.5, -0.4, 6.3)
    D = float(np.linalg.norm(np.subtract(A, B)))
    err, pct = distance_error(K, K, POSE, exact_pair(POSE, A), exact_pair(POSE, B), D)
    assert err < 1e-9 and pct < 1e-9


def test_distance_error_scales_with_baseline():
    A, B = (0.1, 0.2, 6.0), (0.5, -0.4, 6.3)
    D = float(np.linalg.norm(np.subtract(A, B)))
    for factor in (0.9, 1.01, 1.5):
        err, pct = distance_error(K, K, POSE.scaled(factor), exact_pair(POSE, A), exact_pair(POSE, B), D)
        assert err == pytest.approx(abs(1 - factor) * D, abs=1e-9)
        assert pct == pytest.approx(abs(1 - factor), abs=1e-9)


def test_distance_error_arithmetic():
    # Targets 0.99 m apart, measured as 1.0 m
    pose = Extrinsics(np.eye(3), (-1, 0, 0))
    A, B = (0.0, 0.0, 5.0), (0.99, 0.0, 5.0)
    err, pct = distance_error(K, K, pose, exact_pair(pose, A), exact_pair(pose, B), 1.0)
    assert err == pytest.approx(0.01, abs=1e-9)
    assert pct == pytest.approx(0.01, abs=1e-9)


def test_distance_error_is_invariant_under_rigid_motion():
    rng = np.random.default_rng(5)
    A, B = np.array([0.1, 0.2, 6.0]), np.array([0.5, -0.4, 6.3])
    D = 0.98 * float(np.linalg.norm(A - B))
    noise = rng.normal(scale=0.3, size=(4, 2))
    calibrated = POSE.scaled(1.03)

    def observed(R1, T1, R2, T2, a, b):
        a1, _ = project_points(K, R1, T1, a[None])
        a2, _ = project_points(K, R2, T2, a[None])
        b1, _ = project_points(K, R1, T1, b[None])
        b2, _ = project_points(K, R2, T2, b[None])
        return (a1[0] + noise[0], a2[0] + noise[1]), (b1[0] + noise[2], b2[0] + noise[3])

    reference = distance_error(K, K, calibrated, *observed(np.eye(3), np.zeros(3), POSE.R, POSE.T, A, B), D)
    assert reference[0] > 0
    for _ in range(20):
        # Move targets and both cameras by X -> M X + c, re-expressing each camera's pose
        M = Rotation.random(random_state=rng).as_matrix()
        c = rng.normal(scale=5.0, size=3)
        R1, T1 = M.T, -M.T @ c
        R2, T2 = POSE.R @ M.T, POSE.T - POSE.R @ M.T @ c
        relative = Extrinsics(R2 @ R1.T, T2 - R2 @ R1.T @ T1)
        assert np.allclose(relative.R, POSE.R, atol=1e-12) and np.allclose(relative.T, POSE.T, atol=1e-9)
        moved = distance_error(K, K, calibrated, *observed(R1, T1, R2, T2, M @ A + c, M @ B + c), D)
        assert moved[0] == pytest.approx(reference[0], abs=1e-9)
        assert moved[1] == pytest.approx(reference[1], abs=1e-9)


def test_vectorized_distances_match_scalar():
    rng = np.random.default_rng(4)
    A = rng.uniform([-1, -1, 5], [1, 1, 8], size=(10, 3))
    B = A + rng.normal(scale=0.5, size=(10, 3))
    a1, _ = project_points(K, np.eye(3), np.zeros(3), A)
    a2, _ = project_points(K, POSE.R, POSE.T, A)
    b1, _ = project_points(K, np.eye(3), np.zeros(3), B)
    b2, _ = project_points(K, POSE.R, POSE.T, B)
    dist, valid = reconstructed_distances(K, K, POSE, a1, a2, b1, b2)
    assert valid.all()
    assert np.allclose(dist, np.linalg.norm(A - B, axis=1), atol=1e-9)


if __name__ == "__main__":
    tests = [f for name, f in sorted(globals().items()) if name.startswith("test_") and callable(f)]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"✓ {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"✗ {test.__name__}: {e!r}")
    print(f"\n{len(tests) - failed}/{len(tests)} passed")
    sys.exit(1 if failed else 0)
