"""Repeated calibration / validation runs over one or more datasets.

Every run draws a calibration / validation split from its own sub-seed,
calibrates the three methods on the calibration images, and scores the
validation images. Runs may execute in worker processes; results are sorted
by (dataset, run) before they are pooled, so the report only depends on the
master seed.
"""

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from calibration import Calibration, calibrate_all
from config import Config
from correspondences import Dataset
from errors import CalibrationError, ConfigError, FailureThresholdExceeded, GeometryError
from evaluation import (
    EvaluationReport,
    Metric,
    SampleBlock,
    Samples,
    build_correct_set,
    build_wrong_set,
    percentage_errors,
    score_correspondences,
    summarize,
)
from geometry import TranslationConvention
from montecarlo import MonteCarloConfig, derive_seed, make_rng


logger = logging.getLogger(__name__)

FAILURE_THRESHOLD = 0.10
POOLING_NOTE = "wrong sets are built per run; samples of all runs are pooled"


@dataclass(frozen=True)
class RunConfig:
    """Protocol settings: number of runs, split sizes and seeds."""

    n_runs: int = 100
    n_calibration: int = 20
    n_validation: int = 5
    seed: int = 0
    mc: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    convention: TranslationConvention = TranslationConvention.DELTA_ELEVATION
    jobs: int = 1

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError(f"Need at least one run, got {self.n_runs}")
        if self.n_calibration < 1 or self.n_validation < 1:
            raise ConfigError(f"Split sizes must be positive, got {self.n_calibration}:{self.n_validation}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be positive, got {self.jobs}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"Seed must be a 64-bit unsigned integer, got {self.seed}")

    def check_dataset(self, dataset: Dataset) -> None:
        if self.n_calibration + self.n_validation > dataset.n_images:
            raise ConfigError(
                f"Split {self.n_calibration}:{self.n_validation} needs "
                f"{self.n_calibration + self.n_validation} images, dataset {dataset.name!r} has {dataset.n_images}"
            )


def parse_split(text: str) -> Tuple[int, int]:
    """'20:5' -> (20, 5)."""
    try:
        calibration, validation = (int(part) for part in text.split(":"))
    except ValueError:
        raise ConfigError(f"Split must look like 20:5, got {text!r}") from None
    return calibration, validation


def run_seed(master: int, dataset_index: int, run_index: int) -> int:
    return derive_seed(master, dataset_index, run_index)


def draw_split(n_images: int, n_calibration: int, n_validation: int, seed: int
               ) -> Tuple[np.ndarray, np.ndarray]:
    """Disjoint sorted calibration and validation image indices."""
    if n_calibration + n_validation > n_images:
        raise ConfigError(f"Cannot split {n_images} images into {n_calibration}:{n_validation}")
    order = make_rng(seed).permutation(n_images)
    return np.sort(order[:n_calibration]), np.sort(order[n_calibration:n_calibration + n_validation])


@dataclass
class RunResult:
    dataset_index: int
    dataset: str
    run: int
    seed: int
    calibration_images: np.ndarray
    validation_images: np.ndarray
    # (method, metric, label) -> raw scores
    scores: Dict[Tuple[str, str, str], np.ndarray] = field(default_factory=dict)
    pct: Dict[str, np.ndarray] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def score_calibrations(dataset: Dataset, validation: Sequence[int],
                       calibrations: Dict[str, Calibration]
                       ) -> Tuple[Dict[Tuple[str, str, str], np.ndarray], Dict[str, np.ndarray]]:
    """Residual and reprojection scores of the correct and wrong validation sets, and pct errors."""
    subset = dataset.subset(validation)
    sets = {"correct": build_correct_set(subset), "wrong": build_wrong_set(subset)}
    corr3d = subset.correspondences_3d()
    scores, pct = {}, {}
    for method, calibration in calibrations.items():
        pose, E = calibration.pose, calibration.essential
        for metric in Metric:
            for label, corr in sets.items():
                scores[(method, metric.value, label)] = score_correspondences(
                    corr, E, pose, dataset.K1, dataset.K2, metric)
        pct[method] = percentage_errors(corr3d, pose, dataset.K1, dataset.K2)
    return scores, pct


def run_once(dataset: Dataset, dataset_index: int, run_index: int, config: RunConfig) -> RunResult:
    """One split, three calibrations, validation scores.

    Calibration and geometry failures are recorded in ``error`` instead of raised.
    """
    seed = run_seed(config.seed, dataset_index, run_index)
    calibration_images, validation_images = draw_split(
        dataset.n_images, config.n_calibration, config.n_validation, seed)
    result = RunResult(dataset_index, dataset.name, run_index, seed, calibration_images, validation_images)
    try:
        calibrations = calibrate_all(dataset, calibration_images, derive_seed(seed, 1), config.mc, config.convention)
        result.scores, result.pct = score_calibrations(dataset, validation_images, calibrations)
    except (CalibrationError, GeometryError) as e:
        result.error = f"{type(e).__name__}: {e}"
    return result


def collect_samples(results: Sequence[RunResult]) -> Samples:
    samples = Samples()
    for result in sorted(results, key=lambda r: (r.dataset_index, r.run)):
        if not result.ok:
            continue
        for (method, metric, label), values in result.scores.items():
            samples.add_scores(method, Metric(metric), label, SampleBlock(result.dataset, result.run, values))
        for method, values in result.pct.items():
            samples.add_pct(method, SampleBlock(result.dataset, result.run, values, result.validation_images))
    return samples


ProgressCallback = Callable[[RunResult], None]


def _init_worker() -> None:
    Config().apply_tolerances()


def evaluate(datasets: Sequence[Dataset], config: RunConfig,
             progress_callback: Optional[ProgressCallback] = None
             ) -> Tuple[EvaluationReport, Samples, List[RunResult]]:
    """Run the protocol on every dataset and pool the results.

    Args:
        datasets: datasets with at least n_calibration + n_validation images each
        config: protocol settings
        progress_callback: called with each RunResult as it completes

    Returns:
        (report, pooled samples, run results sorted by dataset and run)

    Raises:
        FailureThresholdExceeded: if FAILURE_THRESHOLD or more of the runs fail
    """
    for dataset in datasets:
        config.check_dataset(dataset)
    tasks = [(dataset, d, run) for d, dataset in enumerate(datasets) for run in range(config.n_runs)]
    logger.info(f"Evaluating {len(datasets)} dataset(s), {config.n_runs} runs each, {config.jobs} job(s)")

    results: List[RunResult] = []
    if config.jobs == 1:
        for dataset, d, run in tasks:
            result = run_once(dataset, d, run, config)
            results.append(result)
            if progress_callback:
                progress_callback(result)
    else:
        with ProcessPoolExecutor(max_workers=config.jobs, initializer=_init_worker) as executor:
            futures = [executor.submit(run_once, dataset, d, run, config) for dataset, d, run in tasks]
            for future in as_completed(futures):
                result = future.result()
                results.append(result)
                if progress_callback:
                    progress_callback(result)
    results.sort(key=lambda r: (r.dataset_index, r.run))

    failed = [r for r in results if not r.ok]
    for r in failed:
        logger.warning(f"Run {r.run} on {r.dataset!r} excluded: {r.error}")
    if failed and len(failed) >= FAILURE_THRESHOLD * len(results):
        raise FailureThresholdExceeded(
            f"{len(failed)} of {len(results)} runs failed (threshold {FAILURE_THRESHOLD:.0%}); "
            f"first failure: {failed[0].error}"
        )

    samples = collect_samples(results)
    header = {
        "master_seed": str(config.seed),
        "runs": str(config.n_runs),
        "split": f"{config.n_calibration}:{config.n_validation}",
        "convention": config.convention.value,
        "mc_delta0": repr(config.mc.delta0),
        "mc_decay": repr(config.mc.decay),
        "mc_accept": repr(config.mc.acceptance_threshold),
        "mc_delta_min": repr(config.mc.delta_min),
        "pooling": POOLING_NOTE,
    }
    report = summarize(samples, len(results) - len(failed), len(failed), header)
    logger.info(f"Evaluation done: {len(results) - len(failed)} runs used, {len(failed)} failed")
    return report, samples, results
