#!/usr/bin/env python3
"""Tests for the repeated split / calibrate / validate protocol."""

import sys

import numpy as np
import pytest

from correspondences import Dataset
from errors import ConfigError, FailureThresholdExceeded
from montecarlo import MonteCarloConfig
from protocol import RunConfig, draw_split, evaluate, parse_split, run_once, run_seed
from synthetic_scene import SceneConfig, generate


FAST = MonteCarloConfig(delta_min=1e-4)


def small_config(**kwargs) -> RunConfig:
    settings = dict(n_runs=2, n_calibration=8, n_validation=3, seed=21, mc=FAST)
    settings.update(kwargs)
    return RunConfig(**settings)


def test_parse_split():
    assert parse_split("20:5") == (20, 5)
    for text in ("20", "20:5:1", "a:b", ""):
        with pytest.raises(ConfigError):
            parse_split(text)


def test_split_is_disjoint_sorted_and_sized():
    for run in range(100):
        calibration, validation = draw_split(25, 20, 5, run_seed(0, 0, run))
        assert len(calibration) == 20 and len(validation) == 5
        assert not set(calibration) & set(validation)
        assert np.all(np.diff(calibration) > 0) and np.all(np.diff(validation) > 0)


def test_splits_vary_across_runs():
    splits = {tuple(draw_split(25, 20, 5, run_seed(0, 0, run))[1]) for run in range(100)}
    assert len(splits) > 90


def test_split_is_reproducible():
    seed = run_seed(7, 1, 3)
    a, b = draw_split(30, 20, 5, seed), draw_split(30, 20, 5, seed)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert run_seed(7, 1, 3) != run_seed(7, 0, 3)


def test_split_larger_than_dataset():
    with pytest.raises(ConfigError):
        draw_split(10, 8, 3, 0)
    with pytest.raises(ConfigError):
        small_config().check_dataset(generate(SceneConfig(n_images=10, seed=0)))


def test_run_config_validation():
    for kwargs in ({"n_runs": 0}, {"n_calibration": 0}, {"n_validation": 0}, {"jobs": 0}, {"seed": -1}):
        with pytest.raises(ConfigError):
            small_config(**kwargs)


def test_single_run_scores_every_method():
    dataset = generate(SceneConfig(n_images=12, seed=3))
    result = run_once(dataset, 0, 0, small_config())
    assert result.ok, result.error
    assert len(result.scores) == 3 * 2 * 2
    assert len(result.scores[("min2d", "reprojection", "correct")]) == 6
    assert len(result.scores[("min2d", "reprojection", "wrong")]) == 2 * 3 + 4 * 3 * 2
    assert set(result.pct) == {"essential", "min2d", "min3d"}
    assert all(len(values) == 3 for values in result.pct.values())


def test_evaluate_is_deterministic():
    dataset = generate(SceneConfig(n_images=12, seed=4))
    report_a, samples_a, _ = evaluate([dataset], small_config())
    report_b, samples_b, _ = evaluate([dataset], small_config())
    for method in samples_a.methods:
        assert np.array_equal(samples_a.pct_values(method), samples_b.pct_values(method))
    for key in report_a.methods:
        assert report_a.methods[key].fcp_reprojection == report_b.methods[key].fcp_reprojection
        assert report_a.methods[key].fcp_residual == report_b.methods[key].fcp_residual
    assert report_a.header == report_b.header


def test_worker_processes_give_the_same_report():
    dataset = generate(SceneConfig(n_images=12, seed=5))
    serial, serial_samples, _ = evaluate([dataset], small_config(n_runs=3))
    parallel, parallel_samples, results = evaluate([dataset], small_config(n_runs=3, jobs=2))
    assert [r.run for r in results] == [0, 1, 2]
    for method in serial.methods:
        assert serial.methods[method].fcp_residual == parallel.methods[method].fcp_residual
        assert np.array_equal(serial_samples.pct_values(method), parallel_samples.pct_values(method))


def test_noise_free_data_separates_correct_from_wrong():
    dataset = generate(SceneConfig(noise_sigma=0.0, n_images=12, seed=6))
    report, _, _ = evaluate([dataset], small_config())
    for method in report.methods.values():
        assert method.fcp_residual == 0.0
        assert method.fcp_reprojection == 0.0
        assert method.pct_median < 1e-6


def test_runs_are_pooled_across_datasets():
    datasets = [generate(SceneConfig(n_images=12, seed=7, name="left")),
                generate(SceneConfig(n_images=11, seed=8, name="right"))]
    seen = []
    report, samples, results = evaluate(datasets, small_config(), seen.append)
    assert len(seen) == 4
    assert [(r.dataset, r.run) for r in results] == [("left", 0), ("left", 1), ("right", 0), ("right", 1)]
    assert samples.datasets == ["left", "right"]
    assert set(report.fcp_by_dataset) == {"left", "right"}
    assert len(samples.pct_values("min3d")) == 4 * 3
    assert report.n_runs == 4 and report.failures == 0


def test_desk_scale_ordering_of_the_methods():
    dataset = generate(SceneConfig(noise_sigma=0.3, n_images=25, seed=31))
    config = RunConfig(n_runs=10, n_calibration=20, n_validation=5, seed=5,
                       mc=MonteCarloConfig(delta_min=1e-5))
    report, _, _ = evaluate([dataset], config)
    methods = report.methods
    assert report.failures == 0
    # Reprojection scores of min2d separate correct from wrong pairs best
    best_fcp = methods["min2d"].fcp_reprojection
    for method in methods.values():
        assert best_fcp <= method.fcp_reprojection
        assert best_fcp <= method.fcp_residual
    # min3d reconstructs the target distance best
    assert methods["min3d"].pct_median < methods["min2d"].pct_median
    assert methods["min3d"].pct_median < methods["essential"].pct_median
    assert methods["min3d"].pct_median < 0.01
    assert report.winner("reconstruction") == "min3d"


def test_too_many_failures_abort():
    source = generate(SceneConfig(n_images=1, seed=9))
    # Every image identical: the calibration set is rank deficient in every run
    points = np.repeat(source.points, 12, axis=0)
    dataset = Dataset(points, source.baseline, source.distance, source.K1, source.K2, "flat")
    with pytest.raises(FailureThresholdExceeded):
        evaluate([dataset], small_config())


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
