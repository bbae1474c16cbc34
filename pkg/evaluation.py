"""Scoring of correct and wrong correspondences, false correspondence probability, reconstruction errors."""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from calibration import METHODS
from correspondences import CorrespondenceSet2D, CorrespondenceSet3D, Dataset
from errors import MissingTarget
from geometry import CameraIntrinsics, EssentialMatrix, Extrinsics, normalize_points, residuals
from montecarlo import DEGENERATE_PENALTY
from triangulation import reconstructed_distances, reprojection_errors


logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-15
MAX_BINS = 10_000
PCT_THRESHOLD = 0.01

# (image, target) of the primary detection, (image, target) of the secondary detection
PairIndex = Tuple[Tuple[int, int], Tuple[int, int]]


class Metric(Enum):
    RESIDUAL = "residual"
    REPROJECTION = "reprojection"


def log_scores(values) -> np.ndarray:
    """log10 with zeros (and anything smaller) clamped to LOG_FLOOR."""
    return np.log10(np.maximum(np.abs(np.asarray(values, dtype=float)), LOG_FLOOR))


@dataclass(frozen=True, eq=False)
class LabeledScores:
    """log10 scores of the correct and the wrong correspondences."""

    correct: np.ndarray
    wrong: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "correct", np.asarray(self.correct, dtype=float).reshape(-1))
        object.__setattr__(self, "wrong", np.asarray(self.wrong, dtype=float).reshape(-1))

    @classmethod
    def from_raw(cls, correct, wrong) -> "LabeledScores":
        return cls(log_scores(correct), log_scores(wrong))


# Correct and wrong sets

def _check_detections(points: np.ndarray) -> None:
    missing = np.argwhere(~np.all(np.isfinite(points), axis=-1))
    if len(missing):
        image, target, camera = missing[0]
        raise MissingTarget(
            f"Image {image} has no detection of target {'AB'[target]} on camera {camera + 1}"
        )


def _points(validation) -> np.ndarray:
    points = validation.points if isinstance(validation, Dataset) else np.asarray(validation, dtype=float)
    if points.ndim != 4 or points.shape[1:] != (2, 2, 2):
        raise ValueError(f"Validation points must have shape (n, 2, 2, 2), got {points.shape}")
    _check_detections(points)
    return points


def correct_pair_indices(n_images: int) -> List[PairIndex]:
    return [((k, t), (k, t)) for k in range(n_images) for t in (0, 1)]


def wrong_pair_indices(n_images: int) -> List[PairIndex]:
    """Index pairs of the wrong set, 2n + 4n(n-1) in total.

    * the two targets of one image swapped between cameras;
    * target A of image j with target B of image k, and B with A, j != k;
    * the same target in two different images, j != k.
    """
    pairs: List[PairIndex] = []
    for k in range(n_images):
        pairs.append(((k, 0), (k, 1)))
        pairs.append(((k, 1), (k, 0)))
    for j in range(n_images):
        for k in range(n_images):
            if j == k:
                continue
            pairs.append(((j, 0), (k, 1)))
            pairs.append(((j, 1), (k, 0)))
            pairs.append(((j, 0), (k, 0)))
            pairs.append(((j, 1), (k, 1)))
    return pairs


def _gather(points: np.ndarray, pairs: Sequence[PairIndex]) -> CorrespondenceSet2D:
    if not pairs:
        return CorrespondenceSet2D(np.empty((0, 2)), np.empty((0, 2)))
    idx = np.asarray(pairs)
    q1 = points[idx[:, 0, 0], idx[:, 0, 1], 0]
    q2 = points[idx[:, 1, 0], idx[:, 1, 1], 1]
    return CorrespondenceSet2D(q1, q2)


def build_correct_set(validation) -> CorrespondenceSet2D:
    points = _points(validation)
    return _gather(points, correct_pair_indices(len(points)))


def build_wrong_set(validation) -> CorrespondenceSet2D:
    """Pairs of detections that do not image the same physical target.

    Args:
        validation: Dataset or (n, 2, 2, 2) detections array

    Raises:
        MissingTarget: if a detection is absent (NaN)
    """
    points = _points(validation)
    return _gather(points, wrong_pair_indices(len(points)))


# Scores

def score_correspondences(corr: CorrespondenceSet2D, E: EssentialMatrix, pose: Extrinsics,
                          K1: CameraIntrinsics, K2: CameraIntrinsics,
                          which: Metric = Metric.RESIDUAL) -> np.ndarray:
    """Per-pair |residual| or total reprojection error e1 + e2 (raw, no log)."""
    if which is Metric.RESIDUAL:
        n1 = normalize_points(K1, corr.q1)
        n2 = normalize_points(K2, corr.q2)
        return np.abs(residuals(E, n1, n2))
    e1, e2, valid = reprojection_errors(K1, K2, pose, corr.q1, corr.q2)
    return np.where(valid, e1 + e2, DEGENERATE_PENALTY)


def percentage_errors(corr3d: CorrespondenceSet3D, pose: Extrinsics,
                      K1: CameraIntrinsics, K2: CameraIntrinsics) -> np.ndarray:
    """|D - D_R| / D per target pair; DEGENERATE_PENALTY where triangulation fails."""
    if len(corr3d) == 0:
        raise ValueError("Percentage errors need at least one target pair")
    dist, valid = reconstructed_distances(K1, K2, pose, corr3d.a1, corr3d.a2, corr3d.b1, corr3d.b2)
    if not np.all(valid):
        logger.warning(f"{int(np.sum(~valid))} target pairs could not be triangulated in front of the cameras")
    return np.where(valid, np.abs(corr3d.D - dist) / corr3d.D, DEGENERATE_PENALTY)


# Distribution overlap

def shared_bin_edges(*samples: np.ndarray) -> np.ndarray:
    """Freedman-Diaconis edges on the pooled sample, at most MAX_BINS bins."""
    pooled = np.concatenate([np.asarray(s, dtype=float).reshape(-1) for s in samples])
    edges = np.histogram_bin_edges(pooled, bins="fd")
    if len(edges) - 1 > MAX_BINS:
        edges = np.linspace(pooled.min(), pooled.max(), MAX_BINS + 1)
    return edges


def fcp(scores: LabeledScores) -> float:
    """Overlap area of the correct and wrong score distributions, in [0, 1].

    Disjoint supports give exactly 0.
    """
    c, w = scores.correct, scores.wrong
    if len(c) == 0 or len(w) == 0:
        raise ValueError("FCP needs both correct and wrong scores")
    if c.max() < w.min() or w.max() < c.min():
        return 0.0
    edges = shared_bin_edges(c, w)
    fc = np.histogram(c, bins=edges)[0] / len(c)
    fw = np.histogram(w, bins=edges)[0] / len(w)
    return float(min(1.0, np.sum(np.minimum(fc, fw))))


def density_histogram(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    counts = np.histogram(values, bins=edges)[0]
    return counts / (len(values) * np.diff(edges))


# Reports

def _nan_last(value: float) -> float:
    return float("inf") if math.isnan(value) else value


@dataclass
class MethodReport:
    """Aggregated results of one calibration method."""

    method: str
    fcp_residual: float
    fcp_reprojection: float
    pct_errors: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def pct_median(self) -> float:
        return float(np.median(self.pct_errors)) if len(self.pct_errors) else float("nan")

    @property
    def pct_p90(self) -> float:
        return float(np.quantile(self.pct_errors, 0.9)) if len(self.pct_errors) else float("nan")

    @property
    def fraction_acceptable(self) -> float:
        """Share of percentage errors under PCT_THRESHOLD."""
        return float(np.mean(self.pct_errors < PCT_THRESHOLD)) if len(self.pct_errors) else float("nan")


@dataclass
class EvaluationReport:
    methods: Dict[str, MethodReport]
    n_runs: int = 0
    failures: int = 0
    datasets: List[str] = field(default_factory=list)
    # dataset -> method -> (fcp_residual, fcp_reprojection)
    fcp_by_dataset: Dict[str, Dict[str, Tuple[float, float]]] = field(default_factory=dict)
    header: Dict[str, str] = field(default_factory=dict)

    def winner(self, task: str) -> Optional[str]:
        """Best method for 'matching' (lowest reprojection FCP) or 'reconstruction' (lowest median pct error)."""
        if not self.methods:
            return None
        if task == "matching":
            return min(self.methods.values(), key=lambda m: _nan_last(m.fcp_reprojection)).method
        if task == "reconstruction":
            return min(self.methods.values(), key=lambda m: _nan_last(m.pct_median)).method
        raise ValueError(f"Unknown task: {task!r}")


# Pooled samples

LABELS = ("correct", "wrong")


class SampleBlock(NamedTuple):
    """Raw values of one run; ``images`` holds the validation image of each pct value."""

    dataset: str
    run: int
    values: np.ndarray
    images: Optional[np.ndarray] = None


@dataclass
class Samples:
    """Per-run raw scores and percentage errors, pooled across runs and datasets."""

    scores: Dict[Tuple[str, str, str], List[SampleBlock]] = field(default_factory=dict)
    pct: Dict[str, List[SampleBlock]] = field(default_factory=dict)

    def add_scores(self, method: str, metric: Metric, label: str, block: SampleBlock) -> None:
        self.scores.setdefault((method, metric.value, label), []).append(block)

    def add_pct(self, method: str, block: SampleBlock) -> None:
        self.pct.setdefault(method, []).append(block)

    @property
    def methods(self) -> List[str]:
        found = {key[0] for key in self.scores} | set(self.pct)
        return [m for m in METHODS if m in found]

    @property
    def datasets(self) -> List[str]:
        names = []
        for blocks in list(self.scores.values()) + list(self.pct.values()):
            for block in blocks:
                if block.dataset not in names:
                    names.append(block.dataset)
        return names

    @staticmethod
    def _pool(blocks: List[SampleBlock], dataset: Optional[str] = None) -> np.ndarray:
        chosen = [b.values for b in blocks if dataset is None or b.dataset == dataset]
        return np.concatenate(chosen) if chosen else np.empty(0)

    def score_values(self, method: str, metric: Metric, label: str, dataset: Optional[str] = None) -> np.ndarray:
        return self._pool(self.scores.get((method, metric.value, label), []), dataset)

    def pct_values(self, method: str, dataset: Optional[str] = None) -> np.ndarray:
        return self._pool(self.pct.get(method, []), dataset)

    def labeled(self, method: str, metric: Metric, dataset: Optional[str] = None) -> LabeledScores:
        return LabeledScores.from_raw(self.score_values(method, metric, "correct", dataset),
                                      self.score_values(method, metric, "wrong", dataset))


def _fcp_or_nan(scores: LabeledScores) -> float:
    if len(scores.correct) == 0 or len(scores.wrong) == 0:
        return float("nan")
    return fcp(scores)


def summarize(samples: Samples, n_runs: int = 0, failures: int = 0,
              header: Optional[Dict[str, str]] = None) -> EvaluationReport:
    """FCP table, per-dataset FCPs and pct-error distributions from pooled samples."""
    methods = {}
    for method in samples.methods:
        methods[method] = MethodReport(
            method,
            _fcp_or_nan(samples.labeled(method, Metric.RESIDUAL)),
            _fcp_or_nan(samples.labeled(method, Metric.REPROJECTION)),
            samples.pct_values(method),
        )
    by_dataset = {}
    for dataset in samples.datasets:
        by_dataset[dataset] = {
            method: (_fcp_or_nan(samples.labeled(method, Metric.RESIDUAL, dataset)),
                     _fcp_or_nan(samples.labeled(method, Metric.REPROJECTION, dataset)))
            for method in samples.methods
        }
    return EvaluationReport(methods, n_runs, failures, samples.datasets, by_dataset, dict(header or {}))
