#!/usr/bin/env python3
"""
stereocal - extrinsic calibration of a two-camera rig from a bar with two targets.

Generates synthetic datasets, calibrates the rig with the essential matrix
method and with the two Monte Carlo minimizations (2D reprojection cost,
3D reconstruction cost), and evaluates the three parameter sets on
correspondence matching and on 3D reconstruction.
"""

import argparse
import logging
import math
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from calibration import METHODS, Calibration, calibrate, calibrate_all
from config import Config
from correspondences import TARGET_LABELS, Dataset
from dataset_io import read_calibration, read_dataset, write_calibration, write_dataset, write_recommended
from errors import ConfigError, FailureThresholdExceeded, StereoCalError
from geometry import ExtrinsicAngles, TranslationConvention
from montecarlo import MonteCarloConfig, make_rng
from protocol import RunConfig, RunResult, evaluate, parse_split, run_seed
from report_writer import ReportWriter
from stereo_rig import RECOMMENDED_FILE, StereoRig
from synthetic_scene import SceneConfig, generate


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FAILURES = 4

ANGLE_NAMES = ("alpha", "beta", "gamma", "delta", "epsilon")


# Configure logging
def setup_logging(log_file: str = 'stereocal.log', level: str = 'INFO') -> None:
    """Set up logging configuration."""
    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    # Configure root logger with file handler only
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=log_format,
        handlers=[
            logging.FileHandler(log_file)
        ],
        force=True,
    )

    # Add console handler only for errors
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(logging.ERROR)
    logging.getLogger().addHandler(console_handler)


def exit_code(error: StereoCalError) -> int:
    """Map an error to the process exit code; data and calibration errors give EXIT_DATA."""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, FailureThresholdExceeded):
        return EXIT_FAILURES
    return EXIT_DATA


def wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


def format_angles(angles: ExtrinsicAngles) -> str:
    return ", ".join(f"{name}={value:+.6f}" for name, value in zip(ANGLE_NAMES, angles.as_array()))


def resolve_seed(seed: Optional[int], config: Config) -> int:
    if seed is None:
        seed = config.seed if config.seed is not None else 0
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def monte_carlo_config(args: argparse.Namespace, config: Config) -> MonteCarloConfig:
    """Monte Carlo schedule: command-line flags override the environment."""
    return MonteCarloConfig(
        delta0=args.mc_delta0 if args.mc_delta0 is not None else config.mc_delta0,
        decay=args.mc_decay if args.mc_decay is not None else config.mc_decay,
        acceptance_threshold=args.mc_accept if args.mc_accept is not None else config.mc_accept,
        delta_min=args.mc_delta_min if args.mc_delta_min is not None else config.mc_delta_min,
        max_passes=args.mc_passes if args.mc_passes is not None else config.mc_passes,
    )


def parse_images(text: Optional[str], n_images: int) -> Optional[List[int]]:
    """'0,1,5' -> [0, 1, 5]; None selects every image."""
    if not text:
        return None
    try:
        indices = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--images must be comma-separated integers, got {text!r}") from None
    bad = [i for i in indices if not 0 <= i < n_images]
    if bad:
        raise ConfigError(f"Image indices {bad} outside 0..{n_images - 1}")
    if len(set(indices)) != len(indices):
        raise ConfigError("--images lists an image more than once")
    return indices


def calibration_name(dataset: Dataset, method: str) -> str:
    return f"{dataset.name}_{method}.cal"


def print_truth_errors(dataset: Dataset, calibration: Calibration) -> None:
    if dataset.truth is None or dataset.truth.convention is not calibration.convention:
        return
    diff = [abs(wrap_angle(a - b)) for a, b in zip(calibration.angles.as_array(),
                                                   dataset.truth.angles.as_array())]
    print(f"    max angle error vs truth: {max(diff):.3e} rad")


def recommended_entries(datasets: Sequence[Dataset], prefix: str = "") -> Dict[str, str]:
    entries = {
        "matching": f"{prefix}{calibration_name(datasets[0], 'min2d')}",
        "reconstruction": f"{prefix}{calibration_name(datasets[0], 'min3d')}",
    }
    for dataset in datasets:
        entries[f"matching.{dataset.name}"] = f"{prefix}{calibration_name(dataset, 'min2d')}"
        entries[f"reconstruction.{dataset.name}"] = f"{prefix}{calibration_name(dataset, 'min3d')}"
    return entries


# Subcommands

def cmd_generate(args: argparse.Namespace, config: Config) -> int:
    logger = logging.getLogger(__name__)
    seed = resolve_seed(args.seed, config)
    scene = SceneConfig(
        baseline=args.baseline,
        distance=args.distance,
        n_images=args.n_images,
        noise_sigma=args.noise,
        seed=seed,
        name=Path(args.out).stem,
    )
    print("✓ Generating dataset...", end="", flush=True)
    dataset = generate(scene)
    print(f" ({dataset.n_images} images, {dataset.n_images * 4} points)")

    write_dataset(dataset, args.out)
    print(f"✓ Written to {args.out}")
    print(f"  baseline {dataset.baseline} m, target distance {dataset.distance} m, noise {scene.noise_sigma} px")
    print(f"  truth: {format_angles(dataset.truth.angles)}")
    logger.info(f"Generated dataset {args.out} with seed {seed}")
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace, config: Config) -> int:
    logger = logging.getLogger(__name__)
    seed = resolve_seed(args.seed, config)
    mc = monte_carlo_config(args, config)
    convention = TranslationConvention(args.translation_convention)
    dataset = read_dataset(args.dataset)
    indices = parse_images(args.images, dataset.n_images)
    init = read_calibration(args.init) if args.init else None
    out_dir = Path(args.out_dir)

    print(f"✓ Loaded {dataset.name} ({dataset.n_images} images)")
    if args.method == "all":
        print("✓ Calibrating essential, min2d, min3d...", end="", flush=True)
        if init is None:
            calibrations = calibrate_all(dataset, indices, seed, mc, convention)
        else:
            calibrations = {method: calibrate(dataset, method, indices, seed, mc, convention, init)
                            for method in METHODS}
        print(" Done!")
    else:
        print(f"✓ Calibrating {args.method}...", end="", flush=True)
        calibrations = {args.method: calibrate(dataset, args.method, indices, seed, mc, convention, init)}
        print(" Done!")

    for method, calibration in calibrations.items():
        path = out_dir / calibration_name(dataset, method)
        write_calibration(calibration, path)
        print(f"  → {method}: {format_angles(calibration.angles)}")
        print_truth_errors(dataset, calibration)
        print(f"    written to {path}")

    if args.method == "all":
        write_recommended(out_dir / RECOMMENDED_FILE, recommended_entries([dataset]))
        print(f"✓ Recommended pair written to {out_dir / RECOMMENDED_FILE}")
    logger.info(f"Calibrated {dataset.name} with {', '.join(calibrations)}")
    return EXIT_OK


def _unique_names(datasets: List[Dataset]) -> List[Dataset]:
    seen: Dict[str, int] = {}
    renamed = []
    for dataset in datasets:
        count = seen.get(dataset.name, 0)
        seen[dataset.name] = count + 1
        if count:
            dataset = Dataset(dataset.points, dataset.baseline, dataset.distance, dataset.K1, dataset.K2,
                              f"{dataset.name}_{count + 1}", dataset.truth)
        renamed.append(dataset)
    return renamed


def print_report_table(report) -> None:
    print(f"\n{'method':<10} {'fcp_res':>9} {'fcp_rep':>9} {'pct_med':>11} {'pct_p90':>11}")
    for m in report.methods.values():
        print(f"{m.method:<10} {m.fcp_residual:>9.4f} {m.fcp_reprojection:>9.4f} "
              f"{m.pct_median:>11.3e} {m.pct_p90:>11.3e}")
    print(f"\nBest for matching: {report.winner('matching')}; "
          f"best for reconstruction: {report.winner('reconstruction')}")


def cmd_evaluate(args: argparse.Namespace, config: Config) -> int:
    logger = logging.getLogger(__name__)
    seed = resolve_seed(args.seed, config)
    n_calibration, n_validation = parse_split(args.split)
    run_config = RunConfig(
        n_runs=args.runs,
        n_calibration=n_calibration,
        n_validation=n_validation,
        seed=seed,
        mc=monte_carlo_config(args, config),
        convention=TranslationConvention(args.translation_convention),
        jobs=args.jobs if args.jobs is not None else config.jobs,
    )
    datasets = _unique_names([read_dataset(path) for path in args.dataset])
    for dataset in datasets:
        run_config.check_dataset(dataset)
    print(f"✓ Loaded {len(datasets)} dataset(s): {', '.join(d.name for d in datasets)}")
    print(f"\nRunning {run_config.n_runs} runs per dataset ({args.split} split, {run_config.jobs} job(s)):")

    def progress_callback(result: RunResult):
        if result.ok:
            print(f"  → {result.dataset} run {result.run} ✓")
        else:
            print(f"  → {result.dataset} run {result.run} ✗ ({result.error})")

    report, samples, results = evaluate(datasets, run_config, progress_callback)
    print(f"✓ Runs complete ({report.n_runs} used, {report.failures} failed)")

    out_dir = Path(args.out_dir)
    print("✓ Calibrating on all images...", end="", flush=True)
    for d, dataset in enumerate(datasets):
        final = calibrate_all(dataset, None, run_seed(seed, d, run_config.n_runs), run_config.mc,
                              run_config.convention)
        for method, calibration in final.items():
            write_calibration(calibration, out_dir / "calibrations" / calibration_name(dataset, method))
    print(" Done!")

    recommended = recommended_entries(datasets, prefix="calibrations/")
    write_recommended(out_dir / RECOMMENDED_FILE, recommended)
    writer = ReportWriter(out_dir)
    writer.write_all(report, samples, [r for r in results if not r.ok],
                     {k: recommended[k] for k in ("matching", "reconstruction")})
    print(f"✓ Report written to {out_dir}")
    print_report_table(report)
    logger.info(f"Evaluation written to {out_dir}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: Config) -> int:
    writer = ReportWriter(args.out_dir)
    print("✓ Rebuilding report...", end="", flush=True)
    report = writer.regenerate()
    print(" Done!")
    print_report_table(report)
    return EXIT_OK


def cmd_reconstruct(args: argparse.Namespace, config: Config) -> int:
    logger = logging.getLogger(__name__)
    seed = resolve_seed(args.seed, config)
    dataset = read_dataset(args.dataset)
    rig = StereoRig.from_bundle(args.bundle, dataset.K1, dataset.K2, dataset.name)
    rng = make_rng(seed)
    print(f"✓ Loaded {dataset.name} ({dataset.n_images} images) and rig from {args.bundle}")

    rows = []
    correct = total = 0
    distance_errors = []
    for k in range(dataset.n_images):
        points1 = dataset.points[k, :, 0]
        order = rng.permutation(len(TARGET_LABELS))
        points2 = dataset.points[k, order, 1]
        matches = rig.match(points1, points2, args.max_score)
        reconstructed = {}
        for i, j, _ in matches:
            points, gaps, in_front = rig.reconstruct_many(points1[i], points2[j])
            matched_correctly = bool(order[j] == i)
            correct += matched_correctly
            total += 1
            reconstructed[i] = points[0]
            rows.append([k, TARGET_LABELS[i], *map(float, points[0]), float(gaps[0]), matched_correctly])
        distance = float("nan")
        if len(reconstructed) == 2:
            distance = float(np.linalg.norm(reconstructed[0] - reconstructed[1]))
            distance_errors.append(abs(distance - dataset.distance))
        for row in rows[len(rows) - len(matches):]:
            row.append(distance)

    out = Path(args.out)
    ReportWriter(out.parent).write_reconstruction(rows, out.name)
    print(f"✓ Matched {total} pairs, {correct} correctly")
    if distance_errors:
        print(f"  mean |D_R - D| = {np.mean(distance_errors):.6e} m over {len(distance_errors)} images")
    print(f"✓ Written to {out}")
    logger.info(f"Reconstruction of {dataset.name}: {correct}/{total} correct matches")
    return EXIT_OK


# Argument parsing

def _add_mc_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--mc-delta0', type=float, help='Initial Monte Carlo step in rad (default 0.001)')
    parser.add_argument('--mc-decay', type=float, help='Step decay factor (default 0.75)')
    parser.add_argument('--mc-accept', type=float, help='Acceptance ratio threshold (default 0.2)')
    parser.add_argument('--mc-delta-min', type=float, help='Final step in rad (default 1e-6)')
    parser.add_argument('--mc-passes', type=int, help='Maximum passes through the step schedule (default 12)')
    parser.add_argument('--translation-convention', choices=[c.value for c in TranslationConvention],
                        default=TranslationConvention.DELTA_ELEVATION.value,
                        help='Angle order of the translation direction')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Calibrate a stereo rig for correspondence matching and 3D reconstruction'
    )
    parser.add_argument('--log-file', help='Log file (default: STEREOCAL_LOG_FILE or stereocal.log)')
    parser.add_argument('--verbose', action='store_true', help='Log debug messages')
    parser.add_argument('--show-config', action='store_true', help='Print the effective configuration and exit')
    subparsers = parser.add_subparsers(dest='command')

    gen = subparsers.add_parser('generate', help='Write a synthetic dataset')
    gen.add_argument('--out', required=True, help='Dataset file to write')
    gen.add_argument('--n-images', type=int, default=25)
    gen.add_argument('--baseline', type=float, default=4.0, help='Baseline in meters')
    gen.add_argument('--distance', type=float, default=0.9, help='Target distance in meters')
    gen.add_argument('--noise', type=float, default=0.3, help='Pixel noise sigma')
    gen.add_argument('--seed', type=int)

    cal = subparsers.add_parser('calibrate', help='Calibrate a dataset')
    cal.add_argument('--dataset', required=True)
    cal.add_argument('--method', choices=list(METHODS) + ['all'], default='all')
    cal.add_argument('--init', help='Calibration file seeding min2d / min3d (skips the essential stage)')
    cal.add_argument('--seed', type=int)
    cal.add_argument('--out-dir', default='.')
    cal.add_argument('--images', help='Comma-separated image indices (default: all)')
    _add_mc_flags(cal)

    ev = subparsers.add_parser('evaluate', help='Run the split / calibrate / validate protocol')
    ev.add_argument('--dataset', required=True, action='append', help='Dataset file (repeatable)')
    ev.add_argument('--runs', type=int, default=100)
    ev.add_argument('--split', default='20:5', help='Calibration:validation images per run')
    ev.add_argument('--seed', type=int)
    ev.add_argument('--jobs', type=int, help='Worker processes (default: STEREOCAL_JOBS or 1)')
    ev.add_argument('--out-dir', default='stereocal_report')
    _add_mc_flags(ev)

    rep = subparsers.add_parser('report', help='Rebuild the report of an evaluate output directory')
    rep.add_argument('--out-dir', required=True)

    rec = subparsers.add_parser('reconstruct', help='Match and triangulate a dataset with a recommended pair')
    rec.add_argument('--dataset', required=True)
    rec.add_argument('--bundle', required=True, help='Directory holding recommended.txt')
    rec.add_argument('--out', default='reconstruction.csv')
    rec.add_argument('--seed', type=int, help='Seed of the detection shuffling')
    rec.add_argument('--max-score', type=float, help='Reject matches above this reprojection error (px)')
    return parser


COMMANDS = {
    'generate': cmd_generate,
    'calibrate': cmd_calibrate,
    'evaluate': cmd_evaluate,
    'report': cmd_report,
    'reconstruct': cmd_reconstruct,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and return the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    config = Config()
    if args.show_config:
        for key, value in config.to_dict().items():
            print(f"{key} = {value}")
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    # Set up logging
    setup_logging(args.log_file or config.log_file, 'DEBUG' if args.verbose else config.log_level)
    logger = logging.getLogger(__name__)
    config.apply_tolerances()

    print(f"stereocal {args.command}")
    print("━" * 24)
    logger.info(f"=== stereocal {args.command} started ===")
    logger.info(f"Run time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")

    try:
        code = COMMANDS[args.command](args, config)
        logger.info(f"=== stereocal {args.command} completed ===")
        return code
    except StereoCalError as e:
        print(f"\n✗ Error: {e}")
        logger.error(f"{type(e).__name__}: {e}")
        return exit_code(e)
    except OSError as e:
        print(f"\n✗ Error: {e}")
        logger.error(f"Error: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
