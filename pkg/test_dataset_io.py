#!/usr/bin/env python3
"""Tests for the dataset, calibration and recommended-pair file formats."""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

import dataset_io
from calibration import Calibration
from correspondences import Dataset
from dataset_io import (
    read_calibration,
    read_dataset,
    read_recommended,
    write_calibration,
    write_dataset,
    write_recommended,
)
from errors import ConsistencyError, FormatError, ParseError, SchemaError, VersionError
from geometry import ExtrinsicAngles, TranslationConvention, rotation_from_angles
from synthetic_scene import SceneConfig, generate


def one_image_file() -> str:
    return "\n".join([
        "STEREOCAL-DATASET,1",
        "# one bar placement",
        "name,bench",
        "baseline,4.0",
        "distance,0.9",
        "n_images,1",
        "intrinsics1,3500,1024,544,0",
        "intrinsics2,3500,1024,544,0",
        "data",
        "image,target,camera,u,v",
        "0,A,1,1000.5,500.25",
        "0,A,2,1100.5,501.25",
        "0,B,1,1200.5,700.25",
        "0,B,2,1300.5,701.25",
    ]) + "\n"


def write_text(directory: str, name: str, text: str) -> Path:
    path = Path(directory) / name
    path.write_text(text)
    return path


def test_minimal_one_image_file():
    with tempfile.TemporaryDirectory() as tmp:
        dataset = read_dataset(write_text(tmp, "bench.csv", one_image_file()))
    assert dataset.n_images == 1
    assert dataset.name == "bench"
    assert dataset.truth is None
    assert np.array_equal(dataset.points[0, 1, 1], [1300.5, 701.25])


def test_dataset_round_trip_is_lossless():
    dataset = generate(SceneConfig(n_images=6, seed=3))
    with tempfile.TemporaryDirectory() as tmp:
        first = Path(tmp) / "a.csv"
        second = Path(tmp) / "b.csv"
        write_dataset(dataset, first)
        loaded = read_dataset(first)
        write_dataset(loaded, second)
        assert first.read_text() == second.read_text()
    assert np.array_equal(loaded.points, dataset.points)
    assert np.array_equal(loaded.truth.targets, dataset.truth.targets)
    assert np.array_equal(loaded.truth.angles.as_array(), dataset.truth.angles.as_array())
    assert loaded.baseline == dataset.baseline and loaded.distance == dataset.distance
    assert loaded.K1 == dataset.K1 and loaded.K2 == dataset.K2


def test_missing_triple_is_named():
    dataset = generate(SceneConfig(n_images=5, seed=1))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.csv"
        write_dataset(dataset, path)
        lines = [line for line in path.read_text().splitlines() if not line.startswith("3,B,2,")]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError) as info:
            read_dataset(path)
    assert "image=3" in str(info.value) and "target=B" in str(info.value) and "camera=2" in str(info.value)


def test_duplicate_triple():
    text = one_image_file() + "0,B,2,1.0,2.0\n"
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(SchemaError):
            read_dataset(write_text(tmp, "d.csv", text))


def test_unsupported_version():
    text = one_image_file().replace("STEREOCAL-DATASET,1", "STEREOCAL-DATASET,2")
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(VersionError):
            read_dataset(write_text(tmp, "d.csv", text))


def test_parse_error_carries_line_number():
    text = one_image_file().replace("0,A,2,1100.5,501.25", "0,A,2,eleven,501.25")
    with tempfile.TemporaryDirectory() as tmp:
        with pytest.raises(ParseError) as info:
            read_dataset(write_text(tmp, "d.csv", text))
    assert info.value.line_number == 12


def test_every_required_dataset_line_is_checked():
    lines = one_image_file().splitlines()
    required = [i for i, line in enumerate(lines) if not line.startswith(("#", "name,"))]
    with tempfile.TemporaryDirectory() as tmp:
        for i in required:
            path = write_text(tmp, "fuzz.csv", "\n".join(lines[:i] + lines[i + 1:]) + "\n")
            with pytest.raises(FormatError):
                read_dataset(path)


def test_truth_rows_without_angles_rejected():
    dataset = generate(SceneConfig(n_images=2, seed=2))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.csv"
        write_dataset(dataset, path)
        lines = [line for line in path.read_text().splitlines() if not line.startswith("truth_angles")]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError):
            read_dataset(path)


def calibration(angles=(0.1, 0.2, 0.3, 0.05, 0.15), baseline=4.0, method="min3d") -> Calibration:
    return Calibration(method, ExtrinsicAngles(*angles, baseline), TranslationConvention.DELTA_ELEVATION,
                       seed=2 ** 63 + 5, config_hash="abc123")


def test_identity_calibration_round_trip():
    original = calibration((0, 0, 0, 0, 0), 1.0, "essential")
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "identity.cal"
        write_calibration(original, path)
        loaded = read_calibration(path)
    assert loaded == original


def test_stored_rotation_matches_angles():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.cal"
        write_calibration(calibration(), path)
        row = next(line for line in path.read_text().splitlines() if line.startswith("R,"))
        loaded = read_calibration(path)
    stored = np.array([float(x) for x in row.split(",")[1:]]).reshape(3, 3)
    assert np.max(np.abs(stored - rotation_from_angles(0.1, 0.2, 0.3))) < 1e-12
    assert loaded.angles.baseline == 4.0
    assert loaded.seed == 2 ** 63 + 5


def test_edited_rotation_is_inconsistent():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.cal"
        write_calibration(calibration(), path)
        lines = path.read_text().splitlines()
        lines = [("R,1.1" + line[line.index(",", 2):]) if line.startswith("R,") else line for line in lines]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConsistencyError):
            read_calibration(path)


def test_edited_translation_is_inconsistent():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.cal"
        write_calibration(calibration(), path)
        lines = path.read_text().splitlines()
        lines = [("T,9,9,9" if line.startswith("T,") else line) for line in lines]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConsistencyError):
            read_calibration(path)


def test_consistency_tolerance_is_a_module_setting():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.cal"
        write_calibration(calibration(), path)
        lines = path.read_text().splitlines()
        T = [float(x) for x in next(line for line in lines if line.startswith("T,")).split(",")[1:]]
        lines = [(f"T,{T[0] + 1e-7!r},{T[1]!r},{T[2]!r}" if line.startswith("T,") else line) for line in lines]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConsistencyError):
            read_calibration(path)
        previous = dataset_io.CONSISTENCY_TOL
        dataset_io.CONSISTENCY_TOL = 1e-6
        try:
            read_calibration(path)
        finally:
            dataset_io.CONSISTENCY_TOL = previous


def test_every_calibration_line_is_required():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.cal"
        write_calibration(calibration(), path)
        lines = path.read_text().splitlines()
        for i in range(len(lines)):
            fuzz = write_text(tmp, "fuzz.cal", "\n".join(lines[:i] + lines[i + 1:]) + "\n")
            with pytest.raises(FormatError):
                read_calibration(fuzz)


def test_unknown_method_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "c.cal"
        write_calibration(calibration(), path)
        path.write_text(path.read_text().replace("method,min3d", "method,min4d"))
        with pytest.raises(ParseError):
            read_calibration(path)


def test_recommended_round_trip():
    entries = {"matching": "calibrations/lab_min2d.cal", "reconstruction": "calibrations/lab_min3d.cal",
               "matching.lab": "calibrations/lab_min2d.cal"}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "recommended.txt"
        write_recommended(path, entries)
        assert read_recommended(path) == entries
        path.write_text("matching = a.cal\n")
        with pytest.raises(SchemaError):
            read_recommended(path)


def test_dataset_without_truth_round_trip():
    source = generate(SceneConfig(n_images=3, seed=4))
    dataset = Dataset(source.points, source.baseline, source.distance, source.K1, source.K2, "plain")
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "plain.csv"
        write_dataset(dataset, path)
        loaded = read_dataset(path)
    assert loaded.truth is None
    assert np.array_equal(loaded.points, dataset.points)


def test_dataset_name_with_separator_is_rejected():
    source = generate(SceneConfig(n_images=2, seed=5))
    with tempfile.TemporaryDirectory() as tmp:
        for name in ("bench,left", "bench\nbaseline,1.0"):
            dataset = Dataset(source.points, source.baseline, source.distance, source.K1, source.K2, name)
            path = Path(tmp) / "bad.csv"
            with pytest.raises(SchemaError):
                write_dataset(dataset, path)
            assert not path.exists()
        spaced = Dataset(source.points, source.baseline, source.distance, source.K1, source.K2, "bench left")
        write_dataset(spaced, Path(tmp) / "ok.csv")
        assert read_dataset(Path(tmp) / "ok.csv").name == "bench left"


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
