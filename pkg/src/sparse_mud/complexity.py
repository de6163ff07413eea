"""
Closed-form complex-multiplication counts per detection and their
reconciliation against the counters charged at run time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

from .detectors import DetectionResult, DetectorId
from .validation import DomainError

# Reconciliation is order-of-magnitude only: counting conventions differ.
RATIO_LOW = 0.2
RATIO_HIGH = 5.0

Count = Union[float, tuple[float, float]]


def _sa_sic(n: int) -> float:
    return (3 * n ** 3 + 11 * n ** 2 + 21 * n - 2) / 6


def table1_count(
    detector_id: DetectorId,
    N: int,
    M: int,
    K: int = 1,
    L: int = 1,
    alphabet_size: int = 5,
) -> Count:
    """
    Required complex multiplications for one detection.

    AA-MF-SIC returns ``(low, high)``: the high-SNR count (equal to SA-SIC)
    and the low-SNR count, which adds 10 N^2 for multiple-feedback rollouts.
    ``alphabet_size`` is |A0| (zero included). log^2 is read as (log2)^2.

    Raises:
        DomainError: For a non-positive parameter or a detector without a formula
    """
    for name, value in (("N", N), ("M", M), ("K", K), ("L", L), ("alphabet_size", alphabet_size)):
        if value < 1:
            raise DomainError(f"{name} must be >= 1, got {value}")

    detector_id = DetectorId(detector_id)
    if detector_id is DetectorId.MMSE:
        return float(3 * N ** 2 + N + 1)
    if detector_id is DetectorId.IR:
        return float(L * (3 * N ** 2 + N + 1))
    if detector_id in (DetectorId.SA_SIC, DetectorId.ORDERED_SA_SIC):
        return _sa_sic(N)
    if detector_id is DetectorId.KBEST:
        width = K * alphabet_size
        return width * (N ** 3 / 3 + 2 * N ** 2 + 5 * N / 3 + math.log2(width) ** 2)
    if detector_id is DetectorId.SA_SIC_ASQRD:
        return float(2 * N ** 3 + (2 * M + 2) * N ** 2 + (M - 1) * N)
    if detector_id is DetectorId.AA_MF_SIC:
        high_snr = _sa_sic(N)
        return (high_snr, high_snr + 10 * N ** 2)
    raise DomainError(f"no complexity formula for '{detector_id.value}'")


@dataclass(frozen=True)
class ComplexityEstimate:
    detector_id: DetectorId
    formula_count: Count
    N: int
    M: int
    K: int
    L: int
    alphabet_size: int

    @property
    def reference(self) -> float:
        """Single figure to compare against; the low-SNR bound for ranged formulas."""
        if isinstance(self.formula_count, tuple):
            return float(max(self.formula_count))
        return float(self.formula_count)


def estimate(
    detector_id: DetectorId,
    N: int,
    M: int,
    K: int = 1,
    L: int = 1,
    alphabet_size: int = 5,
) -> ComplexityEstimate:
    count = table1_count(detector_id, N, M, K, L, alphabet_size)
    return ComplexityEstimate(DetectorId(detector_id), count, N, M, K, L, alphabet_size)


@dataclass(frozen=True)
class ReconciliationReport:
    detector_id: DetectorId
    measured: float
    formula: float
    ratio: float
    flagged: bool

    def as_dict(self) -> dict:
        return {
            "detector": self.detector_id.value,
            "measured": self.measured,
            "formula": self.formula,
            "ratio": self.ratio,
            "flagged": self.flagged,
        }


def reconcile(
    result: Union[DetectionResult, float],
    estimate: ComplexityEstimate,
    detector_id: Optional[DetectorId] = None,
) -> ReconciliationReport:
    """
    Compare a measured multiplication count with its closed form.

    ``result`` is a DetectionResult or an already averaged count (then
    ``detector_id`` defaults to the estimate's). Ratios outside [0.2, 5], a
    zero measurement and mismatched ids are flagged; nothing is raised.
    """
    if isinstance(result, DetectionResult):
        measured = float(result.complex_mult_count)
        detector_id = result.detector_id
    else:
        measured = float(result)
        detector_id = detector_id or estimate.detector_id

    formula = estimate.reference
    ratio = measured / formula if formula > 0 else math.inf
    flagged = measured == 0 or not RATIO_LOW <= ratio <= RATIO_HIGH
    if DetectorId(detector_id) is not estimate.detector_id:
        flagged = True
    return ReconciliationReport(DetectorId(detector_id), measured, formula, ratio, flagged)
