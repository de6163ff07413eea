#!/usr/bin/env python3
"""
Validation utilities for sparse-mud.

Provides the exception hierarchy shared by every module, argument checks for the
numerical code, and run-name/path validation for files written by the CLI.
"""

import math
import re
from pathlib import Path
from typing import Iterable

import numpy as np


class SimulationError(Exception):
    """Root of every error raised by sparse-mud."""
    pass


class DimensionError(SimulationError, ValueError):
    """Raised when array shapes are inconsistent."""
    pass


class SingularityError(SimulationError):
    """Raised when a matrix is numerically singular or not positive-definite."""
    pass


class RankError(SimulationError):
    """Raised when a matrix handed to the sorted QR is rank deficient."""
    pass


class DomainError(SimulationError, ValueError):
    """Raised when a value lies outside its mathematical domain."""
    pass


class CapacityError(SimulationError):
    """Raised when an exhaustive search would exceed its candidate budget."""
    pass


class OutputPathError(SimulationError):
    """Raised when a run name or output path is unsafe."""
    pass


def require_nonnegative(name: str, value: float) -> float:
    """
    Validate that a power/variance is finite and not negative.

    Returns:
        The value as a float

    Raises:
        DomainError: If value is negative or NaN
    """
    value = float(value)
    if math.isnan(value) or value < 0:
        raise DomainError(f"{name} must be >= 0, got {value}")
    return value


def require_probabilities(p: Iterable[float]) -> np.ndarray:
    """
    Validate activity probabilities lie strictly inside (0, 1).

    Raises:
        DomainError: If any entry is outside the open interval
    """
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("activity probabilities must be a non-empty 1-D sequence")
    bad = ~((arr > 0.0) & (arr < 1.0))
    if np.any(bad):
        first = int(np.flatnonzero(bad)[0])
        raise DomainError(
            f"activity probability p[{first}] = {arr[first]} is outside (0, 1)"
        )
    return arr


def require_square(name: str, a: np.ndarray) -> None:
    """Raise DimensionError unless `a` is a square 2-D array."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")


class OutputPathValidator:
    """Validates run names and output paths to prevent path traversal."""

    # Reserved names on Windows
    RESERVED_NAMES = {
        'aux', 'con', 'nul', 'prn',
        'com1', 'com2', 'com3', 'com4', 'com5', 'com6', 'com7', 'com8', 'com9',
        'lpt1', 'lpt2', 'lpt3', 'lpt4', 'lpt5', 'lpt6', 'lpt7', 'lpt8', 'lpt9'
    }

    @staticmethod
    def validate_run_name(name: str) -> str:
        """
        Validate a run name used as the stem of the CSV and JSON result files.

        Args:
            name: Run name to validate

        Returns:
            The validated name

        Raises:
            OutputPathError: If the name is empty, too long or unsafe
        """
        if not name:
            raise OutputPathError("Run name cannot be empty")

        if len(name) > 200:
            raise OutputPathError("Run name too long (max 200 characters)")

        if "\x00" in name:
            raise OutputPathError("Run name cannot contain null bytes")

        if ".." in name:
            raise OutputPathError("Run name cannot contain '..'")

        if "/" in name or "\\" in name:
            raise OutputPathError("Run name cannot contain path separators")

        if not re.match(r'^[a-zA-Z0-9._-]+$', name):
            raise OutputPathError(
                "Run name can only contain letters, numbers, hyphens, underscores, and dots"
            )

        if name.lower() in OutputPathValidator.RESERVED_NAMES:
            raise OutputPathError(f"'{name}' is a reserved system name")

        return name

    @staticmethod
    def ensure_within_directory(path: Path, base_dir: Path) -> Path:
        """
        Ensure a path resolves to within a base directory.

        Returns:
            The resolved path

        Raises:
            OutputPathError: If path is outside base_dir
        """
        try:
            resolved_path = path.resolve()
            resolved_base = base_dir.resolve()
            resolved_path.relative_to(resolved_base)
            return resolved_path
        except ValueError:
            raise OutputPathError(
                f"Path {path} is outside allowed directory {base_dir}"
            )


def result_paths(output_dir: Path, run_name: str) -> tuple[Path, Path]:
    """
    Build the (csv, json) result paths for a run, creating the directory.

    Raises:
        OutputPathError: If the name is unsafe or the paths escape output_dir
    """
    safe_name = OutputPathValidator.validate_run_name(run_name)
    output_dir.mkdir(parents=True, exist_ok=True)
    csv_path = OutputPathValidator.ensure_within_directory(output_dir / f"{safe_name}.csv", output_dir)
    json_path = OutputPathValidator.ensure_within_directory(output_dir / f"{safe_name}.json", output_dir)
    return csv_path, json_path
