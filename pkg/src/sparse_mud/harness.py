"""
Seeded Monte Carlo engine: paired trials, NSER aggregation and sweeps over
SNR, activity probability and channel-estimation error.

Every trial owns a random stream derived from (master seed, point index,
trial index), and every detector sees the same realization within a trial.
Aggregates are integer sums, so a sweep gives the same numbers whether its
trials run serially or in a process pool.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Iterable, Mapping, Optional

import numpy as np

from .detectors import RUNNABLE_DETECTORS, SAC_MODES, SMAP_MAX_CANDIDATES, DetectorId, DetectorOptions, detect
from .model import (
    ActivityProfile,
    SystemConfig,
    constellation_by_name,
    describe,
    draw_activity_profile,
    draw_realization,
    fixed_activity_profile,
    perturb_csi,
)
from .numerics import ComplexVector, RandomStream
from .validation import DimensionError, DomainError, SimulationError

logger = logging.getLogger(__name__)

NSER_MODES = ("active_only", "errors_over_active")
P_REDRAW_MODES = ("per_experiment", "per_trial")
AXES = {"snr": "snr_db", "activity": "p", "csi": "csi_error_var"}

# Length-1 spawn key; trial keys always have length 2.
PROFILE_KEY = 0x5EED

DEFAULT_DETECTORS = tuple(d for d in RUNNABLE_DETECTORS if d is not DetectorId.SMAP)


def trial_seed(master: int, axis_index: int, trial_index: int) -> np.random.SeedSequence:
    """Child seed of one trial; a pure function of its three arguments."""
    return np.random.SeedSequence(entropy=master, spawn_key=(axis_index, trial_index))


def profile_seed(master: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=(PROFILE_KEY,))


def count_symbol_errors(x_true: ComplexVector, x_hat: ComplexVector, mode: str = "active_only") -> tuple[int, int]:
    """
    Symbol errors and number of truly active devices in one trial.

    ``active_only`` counts errors on active devices only; ``errors_over_active``
    also counts false alarms on inactive devices.

    Raises:
        DimensionError: If the vectors differ in length
        DomainError: For an unknown mode
    """
    x_true = np.asarray(x_true)
    x_hat = np.asarray(x_hat)
    if x_true.shape != x_hat.shape:
        raise DimensionError(f"x_true has shape {x_true.shape}, x_hat has shape {x_hat.shape}")
    active = x_true != 0
    wrong = x_hat != x_true
    if mode == "active_only":
        errors = int(np.count_nonzero(wrong & active))
    elif mode == "errors_over_active":
        errors = int(np.count_nonzero(wrong))
    else:
        raise DomainError(f"unknown NSER mode '{mode}', expected one of {', '.join(NSER_MODES)}")
    return errors, int(np.count_nonzero(active))


def compute_nser(x_true: ComplexVector, x_hat: ComplexVector, mode: str = "active_only") -> float:
    """Errors over active devices; NaN when no device is active."""
    errors, active = count_symbol_errors(x_true, x_hat, mode)
    return errors / active if active else math.nan


@dataclass(frozen=True)
class ExperimentSpec:
    """
    Fully resolved experiment.

    ``axis`` picks what varies: ``snr`` sweeps ``axis_values`` as SNR in dB;
    ``activity`` sweeps a common activity probability and ``csi`` the channel
    estimation error variance, both at every SNR in ``snr_db``.
    ``csi_error_var`` applies to the snr and activity axes.
    """

    n_devices: int = 128
    spreading: int = 64
    modulation: str = "qpsk"
    detectors: tuple[DetectorId, ...] = DEFAULT_DETECTORS
    axis: str = "snr"
    axis_values: tuple[float, ...] = tuple(float(s) for s in range(0, 21, 2))
    snr_db: tuple[float, ...] = (16.0,)
    p_range: tuple[float, float] = (0.1, 0.3)
    csi_error_var: float = 0.0
    trials: int = 1000
    seed: int = 0
    nser_mode: str = "active_only"
    p_redraw: str = "per_experiment"
    kbest_k: int = 8
    mf_candidates: Optional[int] = None
    sac_mode: str = "distance"
    epsilon: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        detectors = tuple(d if isinstance(d, DetectorId) else DetectorId.parse(d) for d in self.detectors)
        object.__setattr__(self, "detectors", detectors)
        object.__setattr__(self, "axis_values", tuple(float(v) for v in self.axis_values))
        object.__setattr__(self, "snr_db", tuple(float(v) for v in self.snr_db))
        object.__setattr__(self, "p_range", tuple(float(v) for v in self.p_range))
        self._validate()

    def _validate(self) -> None:
        if self.n_devices < 1 or self.spreading < 1:
            raise DomainError(f"need N >= 1 and M >= 1, got N={self.n_devices}, M={self.spreading}")
        if not self.detectors:
            raise DomainError("at least one detector is required")
        if DetectorId.IR in self.detectors:
            raise DomainError("'ir' has a complexity formula but no detector")
        if self.axis not in AXES:
            raise DomainError(f"unknown axis '{self.axis}', expected one of {', '.join(AXES)}")
        if not self.axis_values:
            raise DomainError("the sweep axis needs at least one value")
        if self.axis != "snr" and not self.snr_db:
            raise DomainError(f"the {self.axis} axis needs at least one SNR value")
        if self.axis == "activity" and not all(0.0 < p < 1.0 for p in self.axis_values):
            raise DomainError("activity probabilities must lie inside (0, 1)")
        if self.axis == "csi" and any(v < 0 for v in self.axis_values):
            raise DomainError("CSI error variances must be >= 0")
        if len(self.p_range) != 2 or not 0.0 < self.p_range[0] <= self.p_range[1] < 1.0:
            raise DomainError(f"p range {self.p_range} must satisfy 0 < low <= high < 1")
        if self.csi_error_var < 0:
            raise DomainError(f"csi_error_var must be >= 0, got {self.csi_error_var}")
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.nser_mode not in NSER_MODES:
            raise DomainError(f"unknown NSER mode '{self.nser_mode}'")
        if self.p_redraw not in P_REDRAW_MODES:
            raise DomainError(f"unknown p_redraw '{self.p_redraw}'")
        if self.sac_mode not in SAC_MODES:
            raise DomainError(f"unknown reliability mode '{self.sac_mode}'")
        if self.kbest_k < 1:
            raise DomainError(f"K must be >= 1, got {self.kbest_k}")
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if self.workers < 1:
            raise DomainError(f"workers must be >= 1, got {self.workers}")

        size = self.constellation.size
        if self.mf_candidates is not None and not 2 <= self.mf_candidates <= size:
            raise DomainError(f"F must lie in [2, {size}], got {self.mf_candidates}")
        if DetectorId.SMAP in self.detectors and size ** self.n_devices > SMAP_MAX_CANDIDATES:
            raise DomainError(
                f"smap needs {size}^{self.n_devices} candidates, more than {SMAP_MAX_CANDIDATES}"
            )

    @property
    def constellation(self):
        return constellation_by_name(self.modulation)

    @property
    def axis_name(self) -> str:
        return AXES[self.axis]

    @property
    def imperfect_csi(self) -> bool:
        """True when some point hands detectors a perturbed channel."""
        if self.axis == "csi":
            return any(v > 0 for v in self.axis_values)
        return self.csi_error_var > 0

    @property
    def options(self) -> DetectorOptions:
        return DetectorOptions(
            kbest_k=self.kbest_k,
            mf_candidates=self.mf_candidates,
            sac_mode=self.sac_mode,
            epsilon=self.epsilon,
        )

    def points(self) -> tuple[SweepPoint, ...]:
        """Grid of the sweep; the position in this tuple is the point's seed index."""
        if self.axis == "snr":
            grid = [(v, v, self.csi_error_var, None) for v in self.axis_values]
        elif self.axis == "activity":
            grid = [(p, s, self.csi_error_var, p) for s in self.snr_db for p in self.axis_values]
        else:
            grid = [(v, s, v, None) for s in self.snr_db for v in self.axis_values]
        return tuple(SweepPoint(i, *values) for i, values in enumerate(grid))

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["detectors"] = [d.value for d in self.detectors]
        for key in ("axis_values", "snr_db", "p_range"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any], base: Optional[ExperimentSpec] = None) -> ExperimentSpec:
        """
        Overlay ``mapping`` on ``base`` (or the defaults).

        Raises:
            DomainError: For keys that are not ExperimentSpec fields
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise DomainError(f"unknown experiment keys: {', '.join(unknown)}")
        values = (base or cls()).to_dict()
        values.update(mapping)
        for key in ("detectors", "axis_values", "snr_db", "p_range"):
            value = values[key]
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            elif not isinstance(value, (list, tuple)):
                value = [value]
            values[key] = tuple(value)
        return cls(**values)


@dataclass(frozen=True)
class SweepPoint:
    index: int
    axis_value: float
    snr_db: float
    csi_error_var: float
    fixed_p: Optional[float] = None


@dataclass
class PointResult:
    """Aggregate of one detector at one sweep point."""

    detector: DetectorId
    axis_name: str
    axis_value: float
    snr_db: float
    csi_error_var: float
    trials: int = 0
    active_symbols: int = 0
    symbol_errors: int = 0
    mf_activations: int = 0
    mult_count: int = 0
    skipped_trials: int = 0
    failures: int = 0
    wall_time: float = 0.0

    @property
    def nser(self) -> float:
        return self.symbol_errors / self.active_symbols if self.active_symbols else math.nan

    @property
    def mf_activations_mean(self) -> float:
        return self.mf_activations / self.trials if self.trials else math.nan

    @property
    def mult_count_mean(self) -> float:
        return self.mult_count / self.trials if self.trials else math.nan


@dataclass
class SweepResult:
    spec: ExperimentSpec
    points: list[PointResult] = field(default_factory=list)

    def for_detector(self, detector: DetectorId) -> list[PointResult]:
        return [p for p in self.points if p.detector is detector]

    def lookup(self, detector: DetectorId, axis_value: float, snr_db: Optional[float] = None) -> PointResult:
        for p in self.points:
            if p.detector is detector and p.axis_value == axis_value and (snr_db is None or p.snr_db == snr_db):
                return p
        raise KeyError(f"no result for {detector.value} at {axis_value}")

    @property
    def empty_points(self) -> list[PointResult]:
        """Detector/point pairs that aggregated no trial."""
        return [p for p in self.points if p.trials == 0]


@dataclass
class _Tally:
    trials: int = 0
    active_symbols: int = 0
    symbol_errors: int = 0
    mf_activations: int = 0
    mult_count: int = 0
    failures: int = 0
    wall_time: float = 0.0

    def merge(self, other: _Tally) -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))


def _experiment_profile(spec: ExperimentSpec) -> ActivityProfile:
    stream = RandomStream(profile_seed(spec.seed))
    low, high = spec.p_range
    return draw_activity_profile(stream, spec.n_devices, low, high, spec.constellation.alphabet_size)


def _run_chunk(
    spec: ExperimentSpec,
    point: SweepPoint,
    start: int,
    stop: int,
    base_profile: ActivityProfile,
) -> tuple[dict[DetectorId, _Tally], int]:
    """Run trials [start, stop) of one point; returns per-detector tallies and skipped trials."""
    constellation = spec.constellation
    options = spec.options
    tallies = {d: _Tally() for d in spec.detectors}
    skipped = 0
    redraw = spec.p_redraw == "per_trial" and point.fixed_p is None

    for trial in range(start, stop):
        stream = RandomStream(trial_seed(spec.seed, point.index, trial))
        profile = base_profile
        if redraw:
            low, high = spec.p_range
            profile = draw_activity_profile(stream, spec.n_devices, low, high, constellation.alphabet_size)
        config = SystemConfig(spec.n_devices, spec.spreading, point.snr_db, constellation, profile)

        channel, tx = draw_realization(config, stream)
        if point.csi_error_var > 0:
            channel = perturb_csi(channel.H, point.csi_error_var, stream)
        if not tx.active_set:
            skipped += 1
            continue

        for detector in spec.detectors:
            tally = tallies[detector]
            started = time.perf_counter()
            try:
                result = detect(detector, tx.y, channel.H_hat, config, profile, tx.active_set, options)
            except SimulationError as e:
                logger.warning("%s failed on point %d trial %d: %s", detector.value, point.index, trial, e)
                tally.failures += 1
                continue
            finally:
                tally.wall_time += time.perf_counter() - started
            errors, active = count_symbol_errors(tx.x, result.x_hat, spec.nser_mode)
            tally.trials += 1
            tally.symbol_errors += errors
            tally.active_symbols += active
            tally.mf_activations += result.mf_activations
            tally.mult_count += result.complex_mult_count
    return tallies, skipped


def _chunks(trials: int, size: int) -> Iterable[tuple[int, int]]:
    for start in range(0, trials, size):
        yield start, min(start + size, trials)


def run_sweep(
    spec: ExperimentSpec,
    progress: Optional[Callable[[int], None]] = None,
    perfect_csi: bool = False,
) -> SweepResult:
    """
    Run every detector on every trial of every sweep point.

    Args:
        spec: Resolved experiment
        progress: Called with the number of trials finished after each chunk
        perfect_csi: Give detectors the true channel at every point; trial
            seeds are unchanged, so the run pairs with the imperfect one

    Returns:
        One PointResult per (detector, point), detectors in spec order
    """
    base_profile = _experiment_profile(spec)
    points = spec.points()
    chunk = max(1, math.ceil(spec.trials / (4 * spec.workers))) if spec.workers > 1 else max(1, min(spec.trials, 64))
    logger.info(
        "sweep over %s: %d points x %d trials, detectors %s",
        spec.axis_name, len(points), spec.trials, ", ".join(d.value for d in spec.detectors),
    )

    results = SweepResult(spec=spec)
    executor = ProcessPoolExecutor(max_workers=spec.workers) if spec.workers > 1 else None
    try:
        for point in points:
            if perfect_csi:
                point = replace(point, csi_error_var=0.0)
            if point.fixed_p is not None:
                profile = fixed_activity_profile(point.fixed_p, spec.n_devices, spec.constellation.alphabet_size)
            else:
                profile = base_profile
            logger.debug(
                "point %d: %s",
                point.index,
                describe(SystemConfig(spec.n_devices, spec.spreading, point.snr_db, spec.constellation, profile)),
            )

            totals = {d: _Tally() for d in spec.detectors}
            skipped = 0
            spans = list(_chunks(spec.trials, chunk))
            if executor is None:
                outcomes = (_run_chunk(spec, point, a, b, profile) for a, b in spans)
            else:
                futures = [executor.submit(_run_chunk, spec, point, a, b, profile) for a, b in spans]
                outcomes = (f.result() for f in futures)

            for (a, b), (tallies, chunk_skipped) in zip(spans, outcomes):
                for detector, tally in tallies.items():
                    totals[detector].merge(tally)
                skipped += chunk_skipped
                if progress is not None:
                    progress(b - a)

            if skipped:
                logger.info("point %d: skipped %d trials with no active device", point.index, skipped)
            for detector in spec.detectors:
                t = totals[detector]
                results.points.append(PointResult(
                    detector=detector,
                    axis_name=spec.axis_name,
                    axis_value=point.axis_value,
                    snr_db=point.snr_db,
                    csi_error_var=point.csi_error_var,
                    trials=t.trials,
                    active_symbols=t.active_symbols,
                    symbol_errors=t.symbol_errors,
                    mf_activations=t.mf_activations,
                    mult_count=t.mult_count,
                    skipped_trials=skipped,
                    failures=t.failures,
                    wall_time=t.wall_time,
                ))
    finally:
        if executor is not None:
            executor.shutdown()
    return results


def run_csi_sweep(
    spec: ExperimentSpec,
    progress: Optional[Callable[[int], None]] = None,
) -> SweepResult:
    """
    Sweep the channel-estimation error variance.

    Observations are generated with the true channel while detectors receive
    H + E. A zero variance draws no error samples, so that point matches the
    plain SNR sweep at the same seed.
    """
    if spec.axis != "csi":
        raise DomainError(f"run_csi_sweep needs the csi axis, got '{spec.axis}'")
    return run_sweep(spec, progress)


def degradation_rows(result: SweepResult, reference: SweepResult) -> list[dict[str, Any]]:
    """
    Per (detector, point) NSER loss against the perfect-CSI run of the same trials.

    ``reference`` must come from ``run_sweep(result.spec, perfect_csi=True)``.

    Raises:
        DimensionError: If the two runs do not cover the same points
    """
    if len(result.points) != len(reference.points):
        raise DimensionError(
            f"runs differ in size: {len(result.points)} and {len(reference.points)} points"
        )
    rows = []
    for noisy, perfect in zip(result.points, reference.points):
        if (noisy.detector, noisy.axis_value, noisy.snr_db) != (perfect.detector, perfect.axis_value, perfect.snr_db):
            raise DimensionError(f"point mismatch: {noisy.detector.value} at {noisy.axis_value}")
        rows.append({
            "detector": noisy.detector.value,
            "axis_value": noisy.axis_value,
            "snr_db": noisy.snr_db,
            "csi_error_var": noisy.csi_error_var,
            "nser": noisy.nser,
            "perfect_csi_nser": perfect.nser,
            "degradation": noisy.nser - perfect.nser,
        })
    return rows


def crossover_rows(
    result: SweepResult,
    first: DetectorId = DetectorId.AA_MF_SIC,
    second: DetectorId = DetectorId.ORACLE_MMSE,
) -> list[dict[str, Any]]:
    """Per (snr, p) NSER of two detectors and which one is lower."""
    rows = []
    a_points = result.for_detector(first)
    b_points = result.for_detector(second)
    for a, b in zip(a_points, b_points):
        if math.isnan(a.nser) or math.isnan(b.nser):
            better = None
        elif a.nser < b.nser:
            better = first.value
        elif b.nser < a.nser:
            better = second.value
        else:
            better = "tie"
        rows.append({
            "snr_db": a.snr_db,
            "p": a.axis_value,
            f"{first.value}_nser": a.nser,
            f"{second.value}_nser": b.nser,
            "better": better,
        })
    return rows
