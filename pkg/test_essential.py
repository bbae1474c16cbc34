#!/usr/bin/env python3
"""Tests for essential-matrix estimation, normalization and decomposition."""

import sys

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from correspondences import CorrespondenceSet2D
from errors import AmbiguousCheirality, DegenerateConfiguration, InsufficientCorrespondences
from essential import (
    decompose_essential,
    estimate_essential,
    normalize_essential,
    project_to_essential,
)
from geometry import (
    Extrinsics,
    essential_from_extrinsics,
    normalize_points,
    project_points,
    residuals,
)
from montecarlo import MonteCarloConfig
from synthetic_scene import DEFAULT_INTRINSICS, converging_rig


K = DEFAULT_INTRINSICS
TRUTH = Extrinsics.from_angles(converging_rig(4.0))
FAST = MonteCarloConfig(delta_min=1e-5)


def scene_points(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform([-1, -1, 5], [1, 1, 7], size=(n, 3))


def correspondences(points: np.ndarray, pose: Extrinsics = TRUTH, noise: float = 0.0,
                    seed: int = 0) -> CorrespondenceSet2D:
    q1, _ = project_points(K, np.eye(3), np.zeros(3), points)
    q2, _ = project_points(K, pose.R, pose.T, points)
    if noise > 0:
        rng = np.random.default_rng(seed)
        q1 = q1 + rng.normal(0, noise, q1.shape)
        q2 = q2 + rng.normal(0, noise, q2.shape)
    return CorrespondenceSet2D(q1, q2)


def rotation_error(R: np.ndarray, R_true: np.ndarray) -> float:
    return float(Rotation.from_matrix(R.T @ R_true).magnitude())


def residual_rms(E, corr: CorrespondenceSet2D) -> float:
    n1 = normalize_points(K, corr.q1)
    n2 = normalize_points(K, corr.q2)
    return float(np.sqrt(np.mean(residuals(normalize_essential(E), n1, n2) ** 2)))


def test_exact_correspondences_recover_truth():
    corr = correspondences(scene_points(20))
    E = estimate_essential(corr, K, K, seed=1, config=FAST)
    expected = normalize_essential(essential_from_extrinsics(TRUTH))
    assert np.max(np.abs(E.E - expected.E)) < 1e-6
    assert np.linalg.norm(E.E) == pytest.approx(np.sqrt(2), abs=1e-12)


def test_repeated_point_is_degenerate():
    corr = correspondences(np.repeat(scene_points(1), 20, axis=0))
    with pytest.raises(DegenerateConfiguration):
        estimate_essential(corr, K, K)


def test_too_few_correspondences():
    with pytest.raises(InsufficientCorrespondences):
        estimate_essential(correspondences(scene_points(4)), K, K)


def test_six_correspondences_use_coarse_search():
    corr = correspondences(scene_points(6, seed=3))
    a = estimate_essential(corr, K, K, seed=5, config=FAST)
    b = estimate_essential(corr, K, K, seed=5, config=FAST)
    assert np.array_equal(a.E, b.E)
    assert np.linalg.norm(a.E) == pytest.approx(np.sqrt(2), abs=1e-12)


def test_noisy_estimate_beats_perturbed_pose():
    held_out = correspondences(scene_points(50, seed=99))
    for seed in range(5):
        corr = correspondences(scene_points(20, seed=seed), noise=0.2, seed=seed)
        E = estimate_essential(corr, K, K, seed=seed, config=FAST)
        angles = converging_rig(4.0)
        rng = np.random.default_rng(seed)
        perturbed = Extrinsics.from_angles(angles.with_angles(angles.as_array() + rng.normal(0, 0.01, 5)))
        assert residual_rms(E, held_out) < residual_rms(essential_from_extrinsics(perturbed), held_out)


def test_estimate_is_equivariant_under_common_rotation():
    G = Rotation.from_euler("xyz", [0.03, -0.02, 0.04]).as_matrix()
    corr = correspondences(scene_points(20, seed=4))
    rotated = []
    for pixels in (corr.q1, corr.q2):
        n = normalize_points(K, pixels)
        h = np.hstack([n, np.ones((len(n), 1))]) @ G.T
        rotated.append(h[:, :2] / h[:, 2:3] * K.omega + [K.u0, K.v0])
    E = estimate_essential(corr, K, K, seed=2, config=FAST)
    E_rot = estimate_essential(CorrespondenceSet2D(*rotated), K, K, seed=2, config=FAST)
    expected = normalize_essential(G @ E.E @ G.T)
    assert np.max(np.abs(E_rot.E - expected.E)) < 1e-6


def test_project_to_essential_equalizes_singular_values():
    rng = np.random.default_rng(6)
    sv = np.linalg.svd(project_to_essential(rng.normal(size=(3, 3))), compute_uv=False)
    assert sv[0] == pytest.approx(sv[1], rel=1e-12)
    assert sv[2] == pytest.approx(0.0, abs=1e-12)


def test_normalize_essential_is_canonical():
    E = essential_from_extrinsics(TRUTH).E
    a = normalize_essential(E)
    b = normalize_essential(-3.7 * E)
    assert np.allclose(a.E, b.E, atol=1e-15)
    first = a.E.ravel()[np.flatnonzero(np.abs(a.E.ravel()) > 1e-9)[0]]
    assert first > 0


def test_decompose_recovers_pose():
    corr = correspondences(scene_points(20))
    pose = decompose_essential(essential_from_extrinsics(TRUTH), TRUTH.baseline, corr, K, K)
    assert rotation_error(pose.R, TRUTH.R) < 1e-6
    assert np.linalg.norm(pose.unit_translation - TRUTH.unit_translation) < 1e-6


def test_decompose_accepts_any_scale_and_sign():
    corr = correspondences(scene_points(20))
    pose = decompose_essential(-12.5 * essential_from_extrinsics(TRUTH).E, TRUTH.baseline, corr, K, K)
    assert rotation_error(pose.R, TRUTH.R) < 1e-6
    assert np.allclose(pose.T, TRUTH.T, atol=1e-6)


def test_decompose_round_trip():
    corr = correspondences(scene_points(20))
    E = normalize_essential(essential_from_extrinsics(TRUTH))
    pose = decompose_essential(E, 2.0, corr, K, K)
    assert np.allclose(normalize_essential(essential_from_extrinsics(pose)).E, E.E, atol=1e-6)


def test_measured_baseline_sets_scale():
    corr = correspondences(scene_points(20))
    pose = decompose_essential(essential_from_extrinsics(TRUTH), 3.449, corr, K, K)
    assert pose.baseline == pytest.approx(3.449, abs=1e-12)


def test_split_cheirality_vote_is_ambiguous():
    front = scene_points(10)
    behind = -scene_points(10, seed=1)
    corr = correspondences(np.vstack([front, behind]))
    with pytest.raises(AmbiguousCheirality):
        decompose_essential(essential_from_extrinsics(TRUTH), TRUTH.baseline, corr, K, K)


def test_points_behind_both_cameras_pick_reversed_translation():
    corr = correspondences(-scene_points(20))
    pose = decompose_essential(essential_from_extrinsics(TRUTH), TRUTH.baseline, corr, K, K)
    assert np.allclose(pose.T, -TRUTH.T, atol=1e-6)


def test_end_to_end_exact_pose():
    corr = correspondences(scene_points(25, seed=8))
    E = estimate_essential(corr, K, K, seed=3, config=FAST)
    pose = decompose_essential(E, TRUTH.baseline, corr, K, K)
    assert rotation_error(pose.R, TRUTH.R) < 1e-6
    cos_angle = np.clip(pose.unit_translation @ TRUTH.unit_translation, -1, 1)
    assert np.arccos(cos_angle) < 1e-6


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
