"""
Result files for a sweep.

A run writes two files that share a stem: a CSV with one row per
(detector, sweep point) and a JSON manifest. The manifest carries the resolved
experiment, seed and tool version, so it alone reproduces the CSV:

    {
        "tool": "sparse-mud",
        "version": "0.1.0",
        "started_at": "2026-01-12T10:30:45.123456+00:00",
        "finished_at": "2026-01-12T10:31:02.004512+00:00",
        "seed": 7,
        "spec": {...},
        "rows": [...],
        "complexity": [...],
        "crossover": [...],
        "degradation": [...]
    }

``degradation`` is filled when detectors saw an imperfect channel: for each
(detector, point) it holds the NSER of the perfect-CSI run over the same
trials and the difference.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from .complexity import estimate, reconcile
from .detectors import DetectorId
from .harness import ExperimentSpec, PointResult, SweepResult, crossover_rows, degradation_rows
from .validation import DomainError

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "detector",
    "axis_name",
    "axis_value",
    "snr_db",
    "trials",
    "active_symbols",
    "symbol_errors",
    "nser",
    "mf_activations_mean",
    "mult_count_mean",
    "skipped_trials",
)


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def format_float(value: float) -> str:
    """Locale-free, platform-stable float text."""
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".12g")


def csv_row(point: PointResult) -> list[str]:
    return [
        point.detector.value,
        point.axis_name,
        format_float(point.axis_value),
        format_float(point.snr_db),
        str(point.trials),
        str(point.active_symbols),
        str(point.symbol_errors),
        format_float(point.nser),
        format_float(point.mf_activations_mean),
        format_float(point.mult_count_mean),
        str(point.skipped_trials),
    ]


def write_csv(result: SweepResult, path: Path) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for point in result.points:
            writer.writerow(csv_row(point))
    return path


def complexity_rows(result: SweepResult) -> list[dict[str, Any]]:
    """Measured mean counts against their closed forms, for detectors that have one."""
    spec = result.spec
    rows = []
    for point in result.points:
        if point.detector in (DetectorId.ORACLE_MMSE, DetectorId.SMAP) or point.trials == 0:
            continue
        expected = estimate(
            point.detector, spec.n_devices, spec.spreading, K=spec.kbest_k,
            alphabet_size=spec.constellation.size,
        )
        report = reconcile(point.mult_count_mean, expected)
        if report.flagged:
            logger.debug("%s at %s=%s: measured/formula ratio %.3g",
                         point.detector.value, point.axis_name, point.axis_value, report.ratio)
        row = report.as_dict()
        row.update({"axis_value": point.axis_value, "snr_db": point.snr_db})
        rows.append(row)
    return rows


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit one run."""

    spec: ExperimentSpec
    version: str
    started_at: str = field(default_factory=utc_now)
    finished_at: Optional[str] = None
    rows: list[dict[str, Any]] = field(default_factory=list)
    complexity: list[dict[str, Any]] = field(default_factory=list)
    crossover: list[dict[str, Any]] = field(default_factory=list)
    degradation: list[dict[str, Any]] = field(default_factory=list)

    def record(self, result: SweepResult, reference: Optional[SweepResult] = None) -> None:
        """
        Fill rows, reconciliation and (activity sweeps) crossover from a finished sweep.

        ``reference`` is the perfect-CSI run of the same trials; when given the
        degradation table is filled too.
        """
        self.finished_at = utc_now()
        self.rows = [
            {
                "detector": p.detector.value,
                "axis_name": p.axis_name,
                "axis_value": p.axis_value,
                "snr_db": p.snr_db,
                "csi_error_var": p.csi_error_var,
                "trials": p.trials,
                "active_symbols": p.active_symbols,
                "symbol_errors": p.symbol_errors,
                "nser": _json_float(p.nser),
                "mf_activations_mean": _json_float(p.mf_activations_mean),
                "mult_count_mean": _json_float(p.mult_count_mean),
                "skipped_trials": p.skipped_trials,
                "failures": p.failures,
                "wall_time_s": round(p.wall_time, 6),
            }
            for p in result.points
        ]
        self.complexity = complexity_rows(result)
        if self.spec.axis == "activity":
            self.crossover = [
                {k: _json_float(v) if isinstance(v, float) else v for k, v in row.items()}
                for row in crossover_rows(result)
            ]
        if reference is not None:
            self.degradation = [
                {k: _json_float(v) if isinstance(v, float) else v for k, v in row.items()}
                for row in degradation_rows(result, reference)
            ]

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool": "sparse-mud",
            "version": self.version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "seed": self.spec.seed,
            "spec": self.spec.to_dict(),
            "rows": self.rows,
            "complexity": self.complexity,
            "crossover": self.crossover,
            "degradation": self.degradation,
        }

    def write_json(self, path: Path) -> Path:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path


def _json_float(value: float) -> Optional[float]:
    return None if math.isnan(value) else value


def spec_from_manifest(data: dict[str, Any]) -> ExperimentSpec:
    """
    Rebuild the experiment recorded in a manifest.

    Raises:
        DomainError: If ``data`` is not a sparse-mud manifest
    """
    if data.get("tool") != "sparse-mud" or "spec" not in data:
        raise DomainError("not a sparse-mud run manifest")
    return ExperimentSpec.from_mapping(data["spec"])
