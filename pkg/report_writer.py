"""Evaluation report output: summary.txt, CSV tables, histogram data."""

import csv
import logging
import math
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from calibration import METHODS
from dataset_io import format_float
from errors import SchemaError
from evaluation import (
    LABELS,
    PCT_THRESHOLD,
    EvaluationReport,
    Metric,
    SampleBlock,
    Samples,
    density_histogram,
    log_scores,
    shared_bin_edges,
    summarize,
)


logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.txt"
FCP_TABLE_FILE = "fcp_table.csv"
FCP_BY_DATASET_FILE = "fcp_by_dataset.csv"
HISTOGRAMS_FILE = "histograms.csv"
FAILURES_FILE = "failures.csv"
RECONSTRUCTION_FILE = "reconstruction.csv"


def scores_file(method: str, metric: Metric, label: str) -> str:
    return f"scores_{method}_{metric.value}_{label}.csv"


def pct_file(method: str) -> str:
    return f"pct_errors_{method}.csv"


def format_number(value: float) -> str:
    """Short human-readable number for summary lines; NaN as 'n/a'."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.6g}"


class ReportWriter:
    """Writes and re-reads the files of an evaluation output directory."""

    def __init__(self, out_dir: Union[str, Path]):
        """Initialize the writer.

        Args:
            out_dir: output directory, created on first write
        """
        self.out_dir = Path(out_dir)

    def _path(self, name: str) -> Path:
        return self.out_dir / name

    def _write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self._path(name), "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
        logger.debug(f"Wrote {self._path(name)}")

    # Summary

    def format_summary(self, report: EvaluationReport,
                       recommended: Optional[Dict[str, str]] = None) -> str:
        """Render the report as key = value lines."""
        lines = ["# stereocal evaluation report"]
        for key, value in report.header.items():
            lines.append(f"{key} = {value}")
        lines.append(f"runs_used = {report.n_runs}")
        lines.append(f"runs_failed = {report.failures}")
        lines.append(f"datasets = {';'.join(report.datasets)}")

        lines.append("")
        lines.append("# false correspondence probability (overlap of log10 score distributions)")
        for method in report.methods.values():
            lines.append(f"fcp.{method.method}.residual = {format_number(method.fcp_residual)}")
            lines.append(f"fcp.{method.method}.reprojection = {format_number(method.fcp_reprojection)}")

        lines.append("")
        lines.append("# percentage reconstruction error |D - D_R| / D")
        for method in report.methods.values():
            lines.append(f"pct.{method.method}.median = {format_number(method.pct_median)}")
            lines.append(f"pct.{method.method}.p90 = {format_number(method.pct_p90)}")
            lines.append(f"pct.{method.method}.under_{PCT_THRESHOLD:g} = {format_number(method.fraction_acceptable)}")

        lines.append("")
        lines.append(f"winner.matching = {report.winner('matching')}")
        lines.append(f"winner.reconstruction = {report.winner('reconstruction')}")
        for key, value in (recommended or {}).items():
            lines.append(f"recommended.{key} = {value}")
        return "\n".join(lines) + "\n"

    def write_summary(self, report: EvaluationReport, recommended: Optional[Dict[str, str]] = None) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self._path(SUMMARY_FILE)
        path.write_text(self.format_summary(report, recommended))
        return path

    def read_summary(self) -> Dict[str, str]:
        """key = value pairs of an existing summary.txt (empty if there is none)."""
        path = self._path(SUMMARY_FILE)
        entries: Dict[str, str] = OrderedDict()
        if not path.exists():
            return entries
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            entries[key] = value
        return entries

    # Tables

    def write_fcp_tables(self, report: EvaluationReport) -> None:
        self._write_csv(FCP_TABLE_FILE, ("method", "fcp_residual", "fcp_reprojection"), (
            (m.method, float(m.fcp_residual), float(m.fcp_reprojection)) for m in report.methods.values()
        ))
        self._write_csv(FCP_BY_DATASET_FILE, ("dataset", "method", "fcp_residual", "fcp_reprojection"), (
            (dataset, method, float(res), float(rep))
            for dataset, by_method in report.fcp_by_dataset.items()
            for method, (res, rep) in by_method.items()
        ))

    def write_samples(self, samples: Samples) -> None:
        """Raw per-sample CSVs, one file per (method, metric, label) and per method for pct errors."""
        for method in samples.methods:
            for metric in Metric:
                for label in LABELS:
                    blocks = samples.scores.get((method, metric.value, label), [])
                    self._write_csv(scores_file(method, metric, label), ("dataset", "run", "score"), (
                        (b.dataset, b.run, float(v)) for b in blocks for v in b.values
                    ))
            self._write_csv(pct_file(method), ("dataset", "run", "image", "pct_error"), (
                (b.dataset, b.run, int(image), float(v))
                for b in samples.pct.get(method, [])
                for image, v in zip(b.images if b.images is not None else range(len(b.values)), b.values)
            ))

    def write_histograms(self, samples: Samples) -> None:
        """Densities on log10 values; correct and wrong share Freedman-Diaconis bins."""
        rows: List[Sequence] = []
        for method in samples.methods:
            for metric in Metric:
                labeled = samples.labeled(method, metric)
                if len(labeled.correct) == 0 or len(labeled.wrong) == 0:
                    continue
                edges = shared_bin_edges(labeled.correct, labeled.wrong)
                for label, values in (("correct", labeled.correct), ("wrong", labeled.wrong)):
                    density = density_histogram(values, edges)
                    rows.extend((method, metric.value, label, float(lo), float(hi), float(d))
                                for lo, hi, d in zip(edges[:-1], edges[1:], density))
            pct = samples.pct_values(method)
            if len(pct):
                values = log_scores(pct)
                edges = shared_bin_edges(values)
                density = density_histogram(values, edges)
                rows.extend((method, "pct_error", "all", float(lo), float(hi), float(d))
                            for lo, hi, d in zip(edges[:-1], edges[1:], density))
        self._write_csv(HISTOGRAMS_FILE, ("method", "metric", "label", "bin_left", "bin_right", "density"), rows)

    def write_failures(self, failures: Iterable) -> None:
        self._write_csv(FAILURES_FILE, ("dataset", "run", "error"),
                        ((r.dataset, r.run, r.error) for r in failures))

    def write_all(self, report: EvaluationReport, samples: Samples, failures: Iterable = (),
                  recommended: Optional[Dict[str, str]] = None) -> None:
        self.write_samples(samples)
        self.write_fcp_tables(report)
        self.write_histograms(samples)
        self.write_failures(failures)
        self.write_summary(report, recommended)
        logger.info(f"Report written to {self.out_dir}")

    # Regeneration

    def _read_blocks(self, name: str, value_column: str, with_images: bool) -> List[SampleBlock]:
        path = self._path(name)
        if not path.exists():
            return []
        blocks: List[SampleBlock] = []
        current_key, values, images = None, [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            for row in reader:
                try:
                    key = (row["dataset"], int(row["run"]))
                    value = float(row[value_column])
                    image = int(row["image"]) if with_images else None
                except (KeyError, TypeError, ValueError):
                    raise SchemaError(f"{path}: malformed row {reader.line_num}") from None
                if key != current_key and current_key is not None:
                    blocks.append(SampleBlock(*current_key, np.array(values),
                                              np.array(images) if with_images else None))
                    values, images = [], []
                current_key = key
                values.append(value)
                images.append(image)
        if current_key is not None:
            blocks.append(SampleBlock(*current_key, np.array(values), np.array(images) if with_images else None))
        return blocks

    def read_samples(self) -> Samples:
        """Pooled samples from the per-sample CSVs of an existing output directory."""
        samples = Samples()
        for method in METHODS:
            for metric in Metric:
                for label in LABELS:
                    for block in self._read_blocks(scores_file(method, metric, label), "score", False):
                        samples.add_scores(method, metric, label, block)
            for block in self._read_blocks(pct_file(method), "pct_error", True):
                samples.add_pct(method, block)
        if not samples.scores and not samples.pct:
            raise SchemaError(f"No score or pct-error CSVs found in {self.out_dir}")
        return samples

    def regenerate(self) -> EvaluationReport:
        """Rebuild summary.txt, the FCP tables and histograms.csv from the sample CSVs."""
        previous = self.read_summary()
        samples = self.read_samples()
        header_keys = [k for k in previous if "." not in k and k not in ("runs_used", "runs_failed", "datasets")]
        header = {k: previous[k] for k in header_keys}
        n_runs = int(previous.get("runs_used", 0) or 0)
        failures = int(previous.get("runs_failed", 0) or 0)
        recommended = {k[len("recommended."):]: v for k, v in previous.items() if k.startswith("recommended.")}
        report = summarize(samples, n_runs, failures, header)
        self.write_fcp_tables(report)
        self.write_histograms(samples)
        self.write_summary(report, recommended)
        logger.info(f"Report regenerated in {self.out_dir}")
        return report

    # Reconstruction output

    def write_reconstruction(self, rows: Iterable[Sequence], name: str = RECONSTRUCTION_FILE) -> Path:
        self._write_csv(name, ("image", "label", "X", "Y", "Z", "gap", "matched_correctly", "distance"), rows)
        return self._path(name)
