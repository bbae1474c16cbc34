"""Text formats for datasets, calibrations and the recommended calibration pair.

All formats are line oriented and comma separated, start with a versioned
magic line and write floats with 17 significant digits so a write / read
round trip is bit exact. The grammar is documented in docs/formats.md.
"""

import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from calibration import METHODS, Calibration
from correspondences import CAMERA_LABELS, TARGET_LABELS, Dataset, GroundTruth
from errors import ConsistencyError, ParseError, SchemaError, VersionError
from geometry import CameraIntrinsics, ExtrinsicAngles, TranslationConvention, is_rotation


logger = logging.getLogger(__name__)

DATASET_MAGIC = "STEREOCAL-DATASET"
CALIBRATION_MAGIC = "STEREOCAL-CALIBRATION"
FORMAT_VERSION = 1
DATA_COLUMNS = ("image", "target", "camera", "u", "v")

# Overridable through Config.apply_tolerances()
CONSISTENCY_TOL = 1e-9

PathLike = Union[str, Path]


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _join(*fields) -> str:
    return ",".join(format_float(f) if isinstance(f, (float, np.floating)) else str(f) for f in fields)


def _write_atomic(path: PathLike, lines: List[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _records(path: PathLike) -> Iterator[Tuple[int, List[str]]]:
    """(line number, fields) of every non-blank, non-comment line."""
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield number, [field.strip() for field in line.split(",")]


def _float(text: str, line: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{what}: {text!r} is not a number", line) from None


def _int(text: str, line: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{what}: {text!r} is not an integer", line) from None


def _floats(fields: List[str], count: int, line: int, what: str) -> List[float]:
    if len(fields) != count:
        raise ParseError(f"{what} needs {count} values, got {len(fields)}", line)
    return [_float(f, line, what) for f in fields]


def _check_magic(records: Iterator[Tuple[int, List[str]]], magic: str) -> None:
    try:
        line, fields = next(records)
    except StopIteration:
        raise ParseError(f"empty file, expected {magic} header", 1) from None
    if fields[0] != magic or len(fields) != 2:
        raise ParseError(f"expected '{magic},{FORMAT_VERSION}' header, got {','.join(fields)!r}", line)
    version = _int(fields[1], line, "format version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{magic} version {version} is not supported (expected {FORMAT_VERSION})")


# Dataset files

def _intrinsics_fields(K: CameraIntrinsics) -> Tuple[float, float, float, float]:
    return (float(K.omega), float(K.u0), float(K.v0), float(K.s))


def write_dataset(dataset: Dataset, path: PathLike) -> None:
    if any(c in dataset.name for c in ",\r\n"):
        raise SchemaError(f"dataset name {dataset.name!r} cannot contain commas or line breaks")
    lines = [
        _join(DATASET_MAGIC, FORMAT_VERSION),
        _join("name", dataset.name),
        _join("baseline", float(dataset.baseline)),
        _join("distance", float(dataset.distance)),
        _join("n_images", dataset.n_images),
        _join("intrinsics1", *_intrinsics_fields(dataset.K1)),
        _join("intrinsics2", *_intrinsics_fields(dataset.K2)),
    ]
    if dataset.truth is not None:
        lines.append(_join("truth_angles", *map(float, dataset.truth.angles.as_array())))
        lines.append(_join("truth_convention", dataset.truth.convention.value))
        for k in range(dataset.n_images):
            for t, label in enumerate(TARGET_LABELS):
                lines.append(_join("truth_target", k, label, *map(float, dataset.truth.targets[k, t])))
    lines.append("data")
    lines.append(",".join(DATA_COLUMNS))
    for k in range(dataset.n_images):
        for t, label in enumerate(TARGET_LABELS):
            for c, camera in enumerate(CAMERA_LABELS):
                u, v = dataset.points[k, t, c]
                lines.append(_join(k, label, camera, float(u), float(v)))
    _write_atomic(path, lines)
    logger.info(f"Wrote dataset {dataset.name!r} ({dataset.n_images} images) to {path}")


def _target_index(label: str, line: int) -> int:
    if label not in TARGET_LABELS:
        raise ParseError(f"target must be one of {TARGET_LABELS}, got {label!r}", line)
    return TARGET_LABELS.index(label)


def read_dataset(path: PathLike) -> Dataset:
    """Parse a dataset file.

    Raises:
        ParseError: malformed line (carries the line number)
        SchemaError: missing or duplicate header key or (image, target, camera) triple
        VersionError: unsupported format version
    """
    records = _records(path)
    _check_magic(records, DATASET_MAGIC)

    header: Dict[str, Tuple[int, List[str]]] = {}
    truth_rows: List[Tuple[int, List[str]]] = []
    for line, fields in records:
        key = fields[0]
        if key == "data":
            break
        if key == "truth_target":
            truth_rows.append((line, fields[1:]))
            continue
        if key not in ("name", "baseline", "distance", "n_images", "intrinsics1", "intrinsics2",
                       "truth_angles", "truth_convention"):
            raise ParseError(f"unknown header key {key!r}", line)
        if key in header:
            raise SchemaError(f"duplicate header key {key!r} (line {line})")
        header[key] = (line, fields[1:])
    else:
        raise SchemaError("missing 'data' section")

    for key in ("baseline", "distance", "n_images", "intrinsics1", "intrinsics2"):
        if key not in header:
            raise SchemaError(f"missing header key {key!r}")

    line, values = header["baseline"]
    baseline = _floats(values, 1, line, "baseline")[0]
    line, values = header["distance"]
    distance = _floats(values, 1, line, "distance")[0]
    if not (baseline > 0 and distance > 0):
        raise SchemaError(f"baseline and distance must be positive, got {baseline}, {distance}")
    line, values = header["n_images"]
    if len(values) != 1:
        raise ParseError("n_images needs 1 value", line)
    n_images = _int(values[0], line, "n_images")
    if n_images < 1:
        raise SchemaError(f"n_images must be positive, got {n_images}")
    intrinsics = []
    for key in ("intrinsics1", "intrinsics2"):
        line, values = header[key]
        try:
            intrinsics.append(CameraIntrinsics(*_floats(values, 4, line, key)))
        except ValueError as e:
            raise SchemaError(f"{key}: {e}") from None
    name = header["name"][1][0] if "name" in header else Path(path).stem

    try:
        line, fields = next(records)
    except StopIteration:
        raise SchemaError("missing data column header") from None
    if tuple(fields) != DATA_COLUMNS:
        raise ParseError(f"expected column header {','.join(DATA_COLUMNS)!r}", line)

    points = np.full((n_images, 2, 2, 2), np.nan)
    seen = np.zeros((n_images, 2, 2), dtype=bool)
    for line, fields in records:
        if len(fields) != len(DATA_COLUMNS):
            raise ParseError(f"data rows need {len(DATA_COLUMNS)} fields, got {len(fields)}", line)
        image = _int(fields[0], line, "image")
        target = _target_index(fields[1], line)
        camera = _int(fields[2], line, "camera")
        if camera not in CAMERA_LABELS:
            raise ParseError(f"camera must be one of {CAMERA_LABELS}, got {camera}", line)
        if not 0 <= image < n_images:
            raise SchemaError(f"image index {image} outside 0..{n_images - 1} (line {line})")
        c = CAMERA_LABELS.index(camera)
        if seen[image, target, c]:
            raise SchemaError(f"duplicate row for (image={image}, target={fields[1]}, camera={camera}) (line {line})")
        seen[image, target, c] = True
        points[image, target, c] = (_float(fields[3], line, "u"), _float(fields[4], line, "v"))

    missing = np.argwhere(~seen)
    if len(missing):
        k, t, c = missing[0]
        raise SchemaError(f"missing row for (image={k}, target={TARGET_LABELS[t]}, camera={CAMERA_LABELS[c]})")

    truth = _read_truth(header, truth_rows, n_images, baseline)
    return Dataset(points, baseline, distance, intrinsics[0], intrinsics[1], name, truth)


def _read_truth(header, truth_rows, n_images: int, baseline: float) -> Optional[GroundTruth]:
    if "truth_angles" not in header:
        if truth_rows or "truth_convention" in header:
            raise SchemaError("truth rows given without truth_angles")
        return None
    line, values = header["truth_angles"]
    angles = ExtrinsicAngles(*_floats(values, 5, line, "truth_angles"), baseline)
    convention = TranslationConvention.DELTA_ELEVATION
    if "truth_convention" in header:
        line, values = header["truth_convention"]
        convention = _convention(values[0] if values else "", line)

    targets = np.full((n_images, 2, 3), np.nan)
    seen = np.zeros((n_images, 2), dtype=bool)
    for line, fields in truth_rows:
        if len(fields) != 5:
            raise ParseError(f"truth_target needs 5 values, got {len(fields)}", line)
        image = _int(fields[0], line, "truth_target image")
        target = _target_index(fields[1], line)
        if not 0 <= image < n_images:
            raise SchemaError(f"truth_target image {image} outside 0..{n_images - 1} (line {line})")
        if seen[image, target]:
            raise SchemaError(f"duplicate truth_target for (image={image}, target={fields[1]}) (line {line})")
        seen[image, target] = True
        targets[image, target] = _floats(fields[2:], 3, line, "truth_target")
    missing = np.argwhere(~seen)
    if len(missing):
        k, t = missing[0]
        raise SchemaError(f"missing truth_target for (image={k}, target={TARGET_LABELS[t]})")
    return GroundTruth(angles, targets, convention)


def _convention(text: str, line: int) -> TranslationConvention:
    try:
        return TranslationConvention(text)
    except ValueError:
        choices = [c.value for c in TranslationConvention]
        raise ParseError(f"convention must be one of {choices}, got {text!r}", line) from None


# Calibration files

def write_calibration(calibration: Calibration, path: PathLike) -> None:
    pose = calibration.pose
    lines = [
        _join(CALIBRATION_MAGIC, FORMAT_VERSION),
        _join("method", calibration.method),
        _join("convention", calibration.convention.value),
        _join("angles", *map(float, calibration.angles.as_array())),
        _join("baseline", float(calibration.angles.baseline)),
        _join("R", *map(float, pose.R.ravel())),
        _join("T", *map(float, pose.T)),
        _join("E", *map(float, calibration.essential.E.ravel())),
        _join("seed", int(calibration.seed)),
        _join("config_hash", calibration.config_hash),
    ]
    _write_atomic(path, lines)
    logger.info(f"Wrote {calibration.method} calibration to {path}")


_CALIBRATION_KEYS = ("method", "convention", "angles", "baseline", "R", "T", "E", "seed", "config_hash")


def read_calibration(path: PathLike) -> Calibration:
    """Parse a calibration file and check its derived R, T and E against the angles.

    Raises:
        ParseError, SchemaError, VersionError: malformed file
        ConsistencyError: stored R, T or E disagree with the angles beyond CONSISTENCY_TOL
    """
    records = _records(path)
    _check_magic(records, CALIBRATION_MAGIC)
    fields_by_key: Dict[str, Tuple[int, List[str]]] = {}
    for line, fields in records:
        key = fields[0]
        if key not in _CALIBRATION_KEYS:
            raise ParseError(f"unknown calibration key {key!r}", line)
        if key in fields_by_key:
            raise SchemaError(f"duplicate calibration key {key!r} (line {line})")
        fields_by_key[key] = (line, fields[1:])
    for key in _CALIBRATION_KEYS:
        if key not in fields_by_key:
            raise SchemaError(f"missing calibration key {key!r}")

    line, values = fields_by_key["method"]
    if len(values) != 1 or values[0] not in METHODS:
        raise ParseError(f"method must be one of {METHODS}", line)
    method = values[0]
    line, values = fields_by_key["convention"]
    convention = _convention(values[0] if len(values) == 1 else "", line)
    line, values = fields_by_key["angles"]
    angle_values = _floats(values, 5, line, "angles")
    line, values = fields_by_key["baseline"]
    baseline = _floats(values, 1, line, "baseline")[0]
    try:
        angles = ExtrinsicAngles(*angle_values, baseline)
    except ValueError as e:
        raise SchemaError(str(e)) from None
    line, values = fields_by_key["seed"]
    if len(values) != 1:
        raise ParseError("seed needs 1 value", line)
    seed = _int(values[0], line, "seed")
    if not 0 <= seed < 2 ** 64:
        raise SchemaError(f"seed {seed} is not a 64-bit unsigned integer")
    line, values = fields_by_key["config_hash"]
    config_hash = values[0] if values else ""

    stored = {}
    for key, count in (("R", 9), ("T", 3), ("E", 9)):
        line, values = fields_by_key[key]
        stored[key] = np.array(_floats(values, count, line, key))

    calibration = Calibration(method, angles, convention, seed, config_hash)
    _check_consistency(calibration, stored)
    return calibration


def _check_consistency(calibration: Calibration, stored: Dict[str, np.ndarray]) -> None:
    R = stored["R"].reshape(3, 3)
    if not is_rotation(R, tol=CONSISTENCY_TOL):
        raise ConsistencyError("stored R is not a rotation")
    pose = calibration.pose
    expected = {"R": pose.R.ravel(), "T": pose.T, "E": calibration.essential.E.ravel()}
    for key, value in expected.items():
        diff = float(np.max(np.abs(stored[key] - value)))
        if not math.isfinite(diff) or diff > CONSISTENCY_TOL:
            raise ConsistencyError(f"stored {key} differs from the angles by {diff:.3e}")


# Recommended pair

def write_recommended(path: PathLike, entries: Dict[str, str]) -> None:
    """key = value lines, values are calibration paths relative to the file's directory."""
    lines = ["# matching: min2d calibration, reconstruction: min3d calibration"]
    lines += [f"{key} = {value}" for key, value in entries.items()]
    _write_atomic(path, lines)


def read_recommended(path: PathLike) -> Dict[str, str]:
    entries: Dict[str, str] = {}
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}", number)
            key, value = (part.strip() for part in line.split("=", 1))
            if key in entries:
                raise SchemaError(f"duplicate key {key!r} (line {number})")
            entries[key] = value
    for key in ("matching", "reconstruction"):
        if key not in entries:
            raise SchemaError(f"missing key {key!r}")
    return entries
