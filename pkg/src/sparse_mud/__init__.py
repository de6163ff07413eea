#!/usr/bin/env python3
"""
sparse-mud - activity-aware multiuser detection for grant-free uplinks.

Detectors for low-activity CDMA uplinks where each device transmits only
occasionally: linear MMSE baselines, sparsity-aware SIC variants, K-Best,
an exhaustive sparse-MAP oracle and activity-aware multiple-feedback SIC,
together with a seeded Monte Carlo harness and complexity accounting.
"""

__version__ = "0.1.0"

from .cli import app, main  # noqa: E402

__all__ = ["__version__", "app", "main"]
