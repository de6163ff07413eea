"""
Multiuser detectors for sparse (grant-free) uplinks.

Every detector returns a :class:`DetectionResult` whose symbols are exact
members of the augmented alphabet. The successive-cancellation family works on
the zero-augmented system ``(y0, H')`` built by :func:`sparse_mud.model.zero_augment`.

Detectors:
    mmse            linear MMSE + quantization over A0
    oracle-mmse     MMSE on the genie-known active columns, quantized over A
    sa-sic          sparsity-aware SIC, natural order
    ordered-sa-sic  sparsity-aware SIC, descending column norm of H'
    sa-sic-asqrd    SIC by back-substitution on the activity-aware sorted QR of H'
    kbest           breadth-first K-best search on the same QR
    smap            exhaustive sparse-MAP oracle (small instances only)
    aa-mf-sic       activity-aware multiple-feedback SIC
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Literal, Optional

import numpy as np

from .model import ActivityProfile, AugmentedConstellation, SystemConfig, zero_augment
from .numerics import ComplexMatrix, ComplexVector, MultCounter, hermitian_solve, sorted_gram_schmidt_qr
from .validation import CapacityError, DimensionError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-8
SMAP_MAX_CANDIDATES = 10 ** 6
SMAP_BATCH = 4096

SacMode = Literal["distance", "componentwise", "always", "never"]
SAC_MODES: tuple[str, ...] = ("distance", "componentwise", "always", "never")


class DetectorId(str, Enum):
    """Detector identifiers used on the command line and in result files."""

    MMSE = "mmse"
    ORACLE_MMSE = "oracle-mmse"
    SA_SIC = "sa-sic"
    ORDERED_SA_SIC = "ordered-sa-sic"
    SA_SIC_ASQRD = "sa-sic-asqrd"
    KBEST = "kbest"
    SMAP = "smap"
    AA_MF_SIC = "aa-mf-sic"
    # Complexity formula only; there is no IR detector.
    IR = "ir"

    @classmethod
    def parse(cls, value: str) -> DetectorId:
        try:
            return cls(value.strip().lower())
        except ValueError:
            valid = ", ".join(d.value for d in cls if d is not cls.IR)
            raise DomainError(f"unknown detector '{value}', expected one of: {valid}") from None


RUNNABLE_DETECTORS: tuple[DetectorId, ...] = tuple(d for d in DetectorId if d is not DetectorId.IR)


@dataclass(frozen=True, eq=False)
class MfCandidateMatrix:
    """
    Candidate matrix built when a soft estimate fails the reliability test.

    Column f of ``B`` holds the previously detected symbols, candidate c_f at
    row ``stage`` and the rolled-out decisions below it. ``residuals[f]`` is
    ||y0 - H' b_f||^2 and ``selected`` the committed column.
    """

    device: int
    stage: int
    B: ComplexMatrix
    residuals: np.ndarray
    selected: int

    @property
    def F(self) -> int:
        return self.B.shape[1]

    @property
    def candidates(self) -> ComplexVector:
        return self.B[self.stage]


@dataclass(frozen=True, eq=False)
class DetectionResult:
    x_hat: ComplexVector
    detector_id: DetectorId
    mf_activations: int = 0
    complex_mult_count: int = 0
    mf_trace: tuple[MfCandidateMatrix, ...] = ()


@dataclass(frozen=True)
class SacDecision:
    """Shadow-area reliability test of one soft estimate."""

    symbol: complex
    d_k: float
    d_th: float
    nearest_is_zero: bool
    reliable: bool


@dataclass(frozen=True)
class DetectorOptions:
    """Tunables shared by the dispatcher; defaults match the large-system presets."""

    kbest_k: int = 8
    mf_candidates: Optional[int] = None
    sac_mode: str = "distance"
    epsilon: float = DEFAULT_EPSILON
    smap_metric: str = "l0"


# --------------------------------------------------------------------------
# Quantization and shadow-area constraints
# --------------------------------------------------------------------------

def quantize(z: complex, constellation: AugmentedConstellation) -> tuple[complex, float]:
    """
    Nearest constellation point and its distance.

    Ties go to the earlier point in canonical order (zero first).
    """
    distances = np.abs(z - constellation.points)
    idx = int(np.argmin(distances))
    return complex(constellation.points[idx]), float(distances[idx])


def _quantize_many(z: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    distances = np.abs(z[:, None] - points[None, :])
    idx = np.argmin(distances, axis=1)
    return points[idx], distances[np.arange(z.size), idx]


def sac_threshold(lambda_n: float, nearest_is_zero: bool) -> float:
    """
    Radius of reliability for one device.

    1/lambda_n around the zero symbol, 1 - 1/lambda_n around nonzero symbols,
    clamped to [0, 1]. lambda_n <= 0 makes the zero branch always reliable and
    the nonzero branch always unreliable.
    """
    if lambda_n <= 0:
        return 1.0 if nearest_is_zero else 0.0
    d_th = 1.0 / lambda_n if nearest_is_zero else 1.0 - 1.0 / lambda_n
    return float(min(max(d_th, 0.0), 1.0))


def assess_reliability(
    z: complex,
    constellation: AugmentedConstellation,
    lambda_n: float,
    mode: SacMode = "distance",
) -> SacDecision:
    """
    Quantize ``z`` and decide whether the decision is reliable.

    Modes:
        distance       reliable iff d_k <= d_th
        componentwise  unreliable iff |Re z| > d_th and |Im z| > d_th
        always         every decision is reliable
        never          every decision is unreliable
    """
    symbol, d_k = quantize(z, constellation)
    nearest_is_zero = symbol == 0
    d_th = sac_threshold(lambda_n, nearest_is_zero)
    if mode == "distance":
        reliable = d_k <= d_th
    elif mode == "componentwise":
        reliable = not (abs(z.real) > d_th and abs(z.imag) > d_th)
    elif mode == "always":
        reliable = True
    elif mode == "never":
        reliable = False
    else:
        raise DomainError(f"unknown reliability mode '{mode}', expected one of {', '.join(SAC_MODES)}")
    return SacDecision(symbol, d_k, d_th, nearest_is_zero, reliable)


def mf_candidate_set(z: complex, constellation: AugmentedConstellation, F: int) -> ComplexVector:
    """
    The F augmented-alphabet points nearest to ``z``, zero always included.

    When zero is not among the F nearest it replaces the farthest of them.
    """
    if not constellation.includes_zero:
        raise DomainError("multiple-feedback candidates need the augmented alphabet")
    if not 2 <= F <= constellation.size:
        raise DomainError(f"F must lie in [2, {constellation.size}], got {F}")
    ranked = np.argsort(np.abs(z - constellation.points), kind="stable")[:F]
    candidates = constellation.points[ranked].copy()
    if not np.any(candidates == 0):
        candidates[-1] = 0j
    return candidates


# --------------------------------------------------------------------------
# Filters
# --------------------------------------------------------------------------

def build_reweighting(w_prev: ComplexVector, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """
    Diagonal of the l1 reweighting matrix, 1 / (|w_prev,i| + epsilon).

    Raises:
        DomainError: If epsilon is not positive
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    return 1.0 / (np.abs(np.asarray(w_prev)) + epsilon)


def scaled_reweighting(
    w_prev: ComplexVector,
    noise_var: float,
    observed: int,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """
    Reweighting diagonal on the scale of the noise loading.

    Only the first ``observed`` taps (the ones applied to y) are reweighted;
    the zero-augmented rows get no l1 load. There the raw 1/(|w_prev,i| + epsilon)
    diagonal is divided by its mean over the nonzero taps of ``w_prev`` and
    multiplied by ``noise_var``, so :func:`regularized_filter` loads tap i
    with (sigma_n^2/sigma_x^2)(1 + 2 lambda_n Lambda_bar_i). Without noise the
    result is all zero.

    Raises:
        DimensionError: If ``observed`` exceeds the filter length
    """
    w_prev = np.asarray(w_prev)
    if not 0 <= observed <= w_prev.size:
        raise DimensionError(f"{observed} observed taps do not fit a filter of length {w_prev.size}")
    scaled = np.zeros(w_prev.size)
    taps = w_prev[:observed]
    support = np.abs(taps) > 0
    if noise_var == 0 or not np.any(support):
        return scaled
    raw = build_reweighting(taps, epsilon)
    scaled[:observed] = noise_var * raw / np.mean(raw[support])
    return scaled


def regularized_filter(
    h_active: ComplexMatrix,
    n: int,
    lambda_n: float,
    noise_var: float,
    signal_power: float = 1.0,
    reweight: Optional[np.ndarray] = None,
    counter: Optional[MultCounter] = None,
) -> ComplexVector:
    """
    l1-regularized MMSE filter for column ``n`` of ``h_active``.

    w = (H H^H + (noise_var/signal_power) I + (2 lambda_n/signal_power) diag(reweight))^-1 H delta_n

    ``reweight`` is the diagonal of the reweighting matrix (None means zero);
    negative lambda_n is treated as zero. With a positive diagonal loading the
    system is solved in the push-through form D^-1 H (I + H^H D^-1 H)^-1,
    which only factors a cols x cols matrix; without loading it reduces to
    H (H^H H)^-1 delta_n.

    Raises:
        DimensionError: If ``n`` or ``reweight`` do not match ``h_active``
        SingularityError: If the system matrix is singular
    """
    h = np.asarray(h_active, dtype=complex)
    if h.ndim != 2:
        raise DimensionError(f"H must be 2-D, got shape {h.shape}")
    rows, cols = h.shape
    if not 0 <= n < cols:
        raise DimensionError(f"column index {n} out of range for {cols} columns")

    loading = np.full(rows, noise_var / signal_power)
    if reweight is not None:
        reweight = np.asarray(reweight, dtype=float)
        if reweight.shape != (rows,):
            raise DimensionError(f"reweighting diagonal has shape {reweight.shape}, expected ({rows},)")
        if np.any(reweight < 0):
            raise DomainError("reweighting entries must be nonnegative")
        weight = 2.0 * max(lambda_n, 0.0) / signal_power
        if weight > 0:
            loading = loading + weight * reweight

    delta = np.zeros(cols, dtype=complex)
    delta[n] = 1.0

    if np.all(loading > 0):
        scaled = h / loading[:, None]
        gram = h.conj().T @ scaled + np.eye(cols)
        u = hermitian_solve(gram, delta, counter)
        if counter is not None:
            counter.matvec(rows, cols)
            counter.matmul(cols, rows, cols)
            counter.matvec(rows, cols)
        return scaled @ u

    if np.all(loading == 0):
        gram = h.conj().T @ h
        u = hermitian_solve(gram, delta, counter)
        if counter is not None:
            counter.matmul(cols, rows, cols)
            counter.matvec(rows, cols)
        return h @ u

    system = h @ h.conj().T + np.diag(loading)
    if counter is not None:
        counter.matmul(rows, cols, rows)
    return hermitian_solve(system, h[:, n], counter)


def mmse_filter_bank(
    h: ComplexMatrix,
    noise_ratio: float,
    counter: Optional[MultCounter] = None,
) -> ComplexMatrix:
    """Columns w_j = (H H^H + noise_ratio I)^-1 h_j for every column of H."""
    rows, cols = h.shape
    gram = h.conj().T @ h + noise_ratio * np.eye(cols)
    inverse = hermitian_solve(gram, np.eye(cols, dtype=complex), counter)
    if counter is not None:
        counter.matmul(cols, rows, cols)
        counter.matmul(rows, cols, cols)
    return h @ inverse


# --------------------------------------------------------------------------
# Linear detectors
# --------------------------------------------------------------------------

def _mmse_soft(y: ComplexVector, h: ComplexMatrix, ratio: float, counter: MultCounter) -> ComplexVector:
    rows, cols = h.shape
    if cols <= rows:
        gram = h.conj().T @ h + ratio * np.eye(cols)
        counter.matmul(cols, rows, cols)
        counter.matvec(cols, rows)
        return hermitian_solve(gram, h.conj().T @ y, counter)
    gram = h @ h.conj().T + ratio * np.eye(rows)
    counter.matmul(rows, cols, rows)
    counter.matvec(cols, rows)
    return h.conj().T @ hermitian_solve(gram, y, counter)


def _check_dimensions(y: ComplexVector, h: ComplexMatrix, config: SystemConfig) -> tuple[ComplexVector, ComplexMatrix]:
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    if h.shape != (config.spreading, config.n_devices) or y.shape != (config.spreading,):
        raise DimensionError(
            f"expected y ({config.spreading},) and H ({config.spreading}, {config.n_devices}), "
            f"got {y.shape} and {h.shape}"
        )
    return y, h


def detect_mmse(y: ComplexVector, H_hat: ComplexMatrix, config: SystemConfig) -> DetectionResult:
    """Linear MMSE estimate quantized per device over the augmented alphabet."""
    y, h = _check_dimensions(y, H_hat, config)
    counter = MultCounter()
    soft = _mmse_soft(y, h, config.noise_var / config.signal_power, counter)
    x_hat, _ = _quantize_many(soft, config.constellation.points)
    counter.add(soft.size * config.constellation.size)
    return DetectionResult(x_hat=x_hat, detector_id=DetectorId.MMSE, complex_mult_count=counter.count)


def detect_oracle_mmse(
    y: ComplexVector,
    H_hat: ComplexMatrix,
    active_set: Iterable[int],
    config: SystemConfig,
) -> DetectionResult:
    """MMSE restricted to the genie-known active devices; the rest are set to zero."""
    y, h = _check_dimensions(y, H_hat, config)
    active = sorted(set(int(i) for i in active_set))
    if any(i < 0 or i >= config.n_devices for i in active):
        raise DimensionError(f"active set {active} out of range for {config.n_devices} devices")

    counter = MultCounter()
    x_hat = np.zeros(config.n_devices, dtype=complex)
    if active:
        soft = _mmse_soft(y, h[:, active], config.noise_var / config.signal_power, counter)
        alphabet = config.constellation.without_zero().points
        x_hat[active], _ = _quantize_many(soft, alphabet)
        counter.add(soft.size * alphabet.size)
    return DetectionResult(x_hat=x_hat, detector_id=DetectorId.ORACLE_MMSE, complex_mult_count=counter.count)


# --------------------------------------------------------------------------
# Successive interference cancellation
# --------------------------------------------------------------------------

def _detection_order(h_prime: ComplexMatrix, ordering: str) -> np.ndarray:
    if ordering == "none":
        return np.arange(h_prime.shape[1])
    if ordering == "channel_norm":
        return np.argsort(-np.linalg.norm(h_prime, axis=0), kind="stable")
    raise DomainError(f"unknown ordering '{ordering}', expected 'none' or 'channel_norm'")


class _CancellationChain:
    """
    Filter/estimate/cancel state shared by SA-SIC and AA-MF-SIC.

    Columns of ``h`` are already in detection order; stage j filters against
    the not-yet-cancelled columns j..N-1. The regularized chain refits each
    filter with the noise-scaled reweighting built from the previous one; the
    first stage has no previous filter and is plain MMSE.
    """

    def __init__(
        self,
        y0: ComplexVector,
        h: ComplexMatrix,
        lambdas: np.ndarray,
        config: SystemConfig,
        regularized: bool,
        epsilon: float,
        counter: MultCounter,
    ):
        self.y = np.array(y0, dtype=complex, copy=True)
        self.h = h
        self.lambdas = lambdas
        self.noise_var = config.noise_var
        self.signal_power = config.signal_power
        self.observed = config.spreading
        self.regularized = regularized
        self.epsilon = epsilon
        self.counter = counter
        self.reweight: Optional[np.ndarray] = None

    @property
    def rows(self) -> int:
        return self.h.shape[0]

    def soft_estimate(self, j: int) -> tuple[complex, ComplexVector]:
        lambda_j = float(self.lambdas[j]) if self.regularized else 0.0
        w = regularized_filter(
            self.h[:, j:], 0, lambda_j, self.noise_var, self.signal_power,
            self.reweight if self.regularized else None, self.counter,
        )
        z = complex(np.vdot(w, self.y))
        self.counter.add(self.rows)
        return z, w

    def cancel(self, j: int, symbol: complex, w: ComplexVector) -> None:
        if symbol != 0:
            self.y = self.y - self.h[:, j] * symbol
            self.counter.add(self.rows)
        if self.regularized:
            self.reweight = scaled_reweighting(w, self.noise_var, self.observed, self.epsilon)


def detect_sa_sic(
    y: ComplexVector,
    H_hat: ComplexMatrix,
    profile: ActivityProfile,
    config: SystemConfig,
    ordering: str = "none",
    filter_kind: str = "mmse",
    epsilon: float = DEFAULT_EPSILON,
) -> DetectionResult:
    """
    Sparsity-aware SIC on the zero-augmented system.

    ``ordering='channel_norm'`` detects in descending column norm of H'.
    ``filter_kind='regularized'`` runs the l1-reweighted filter chain that
    AA-MF-SIC uses for its main path.
    """
    if filter_kind not in ("mmse", "regularized"):
        raise DomainError(f"unknown filter kind '{filter_kind}', expected 'mmse' or 'regularized'")
    y, h = _check_dimensions(y, H_hat, config)
    counter = MultCounter()
    aug = zero_augment(y, h, profile, config.noise_var, config.signal_power)
    order = _detection_order(aug.H_prime, ordering)
    hs = aug.H_prime[:, order]
    chain = _CancellationChain(
        aug.y0, hs, profile.lambda_[order], config, filter_kind == "regularized", epsilon, counter
    )

    detected = np.zeros(config.n_devices, dtype=complex)
    for j in range(config.n_devices):
        z, w = chain.soft_estimate(j)
        detected[j], _ = quantize(z, config.constellation)
        counter.add(config.constellation.size)
        chain.cancel(j, detected[j], w)

    x_hat = np.empty_like(detected)
    x_hat[order] = detected
    detector_id = DetectorId.SA_SIC if ordering == "none" else DetectorId.ORDERED_SA_SIC
    return DetectionResult(x_hat=x_hat, detector_id=detector_id, complex_mult_count=counter.count)


def _layer_soft_estimates(yt: ComplexVector, r: ComplexMatrix, k: int, paths: np.ndarray) -> np.ndarray:
    """Back-substitution estimate of layer k for every partial path."""
    return (yt[k] - paths[:, k + 1:] @ r[k, k + 1:]) / r[k, k]


def _sorted_qr_system(y, H_hat, profile, config, counter):
    y, h = _check_dimensions(y, H_hat, config)
    aug = zero_augment(y, h, profile, config.noise_var, config.signal_power)
    q, r, perm = sorted_gram_schmidt_qr(aug.H_prime, counter)
    yt = q.conj().T @ aug.y0
    counter.matvec(config.n_devices, aug.rows)
    return yt, r, perm


def detect_sa_sic_asqrd(
    y: ComplexVector,
    H_hat: ComplexMatrix,
    profile: ActivityProfile,
    config: SystemConfig,
) -> DetectionResult:
    """
    SIC on the activity-aware sorted QR of H'.

    H' already carries sigma_n and sqrt(lambda), so sorting its columns makes
    the order activity-aware. Layers are detected from the last to the first.
    """
    counter = MultCounter()
    yt, r, perm = _sorted_qr_system(y, H_hat, profile, config, counter)
    n = config.n_devices
    path = np.zeros((1, n), dtype=complex)
    for k in reversed(range(n)):
        z = _layer_soft_estimates(yt, r, k, path)[0]
        counter.add(n - k)
        path[0, k], _ = quantize(z, config.constellation)
        counter.add(config.constellation.size)

    x_hat = np.empty(n, dtype=complex)
    x_hat[perm] = path[0]
    return DetectionResult(x_hat=x_hat, detector_id=DetectorId.SA_SIC_ASQRD, complex_mult_count=counter.count)


def detect_kbest(
    y: ComplexVector,
    H_hat: ComplexMatrix,
    profile: ActivityProfile,
    config: SystemConfig,
    K: int = 8,
) -> DetectionResult:
    """
    Breadth-first K-best search over the sorted-QR layers.

    Every survivor is extended by all |A0| symbols and the K partial paths
    with the smallest accumulated metric ||y~ - R s||^2 on decided layers are
    kept. Ties keep the earlier path and the earlier symbol.
    """
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    counter = MultCounter()
    yt, r, perm = _sorted_qr_system(y, H_hat, profile, config, counter)
    n = config.n_devices
    points = config.constellation.points
    size = points.size

    paths = np.zeros((1, n), dtype=complex)
    metrics = np.zeros(1)
    for k in reversed(range(n)):
        z = _layer_soft_estimates(yt, r, k, paths)
        increments = (r[k, k].real * np.abs(z[:, None] - points[None, :])) ** 2
        counter.add(paths.shape[0] * (n - k + size))
        expanded = (metrics[:, None] + increments).ravel()
        keep = np.argsort(expanded, kind="stable")[:K]
        paths = paths[keep // size].copy()
        paths[:, k] = points[keep % size]
        metrics = expanded[keep]

    x_hat = np.empty(n, dtype=complex)
    x_hat[perm] = paths[0]
    return DetectionResult(x_hat=x_hat, detector_id=DetectorId.KBEST, complex_mult_count=counter.count)


def detect_smap_oracle(
    y: ComplexVector,
    H_hat: ComplexMatrix,
    profile: ActivityProfile,
    config: SystemConfig,
    metric: str = "l0",
    noise_scaled: bool = True,
) -> DetectionResult:
    """
    Exhaustive sparse-MAP search over A0^N.

    ``metric='l0'`` minimizes ||y - H x||^2 + s * sum(lambda_n |x_n|_0) with
    s = sigma_n^2 (or 1 when ``noise_scaled`` is false); ``metric='l2'``
    minimizes the zero-augmented surrogate ||y0 - H' x||^2. Ties keep the
    candidate enumerated first (zero-first lexicographic order).

    Raises:
        CapacityError: If |A0|^N exceeds one million candidates
    """
    y, h = _check_dimensions(y, H_hat, config)
    points = config.constellation.points
    n = config.n_devices
    total = points.size ** n
    if total > SMAP_MAX_CANDIDATES:
        raise CapacityError(f"exhaustive search over {points.size}^{n} = {total} candidates exceeds {SMAP_MAX_CANDIDATES}")

    if metric == "l0":
        target, channel = y, h
        weights = profile.lambda_ * (config.noise_var if noise_scaled else 1.0)
    elif metric == "l2":
        aug = zero_augment(y, h, profile, config.noise_var, config.signal_power)
        target, channel = aug.y0, aug.H_prime
        weights = np.zeros(n)
    else:
        raise DomainError(f"unknown S-MAP metric '{metric}', expected 'l0' or 'l2'")

    counter = MultCounter()
    best_cost = np.inf
    best = np.zeros(n, dtype=complex)
    enumeration = itertools.product(range(points.size), repeat=n)
    while True:
        batch = np.array(list(itertools.islice(enumeration, SMAP_BATCH)), dtype=int)
        if batch.size == 0:
            break
        candidates = points[batch.reshape(-1, n)]
        residual = target[None, :] - candidates @ channel.T
        cost = np.sum(np.abs(residual) ** 2, axis=1) + (candidates != 0) @ weights
        counter.add(candidates.shape[0] * channel.size + residual.size)
        i = int(np.argmin(cost))
        if cost[i] < best_cost:
            best_cost = cost[i]
            best = candidates[i].copy()

    return DetectionResult(x_hat=best, detector_id=DetectorId.SMAP, complex_mult_count=counter.count)


def _roll_out(
    y_current: ComplexVector,
    hs: ComplexMatrix,
    bank: ComplexMatrix,
    stage: int,
    candidates: ComplexVector,
    detected: ComplexVector,
    points: np.ndarray,
    counter: MultCounter,
) -> ComplexMatrix:
    """Candidate matrix: each candidate followed by plain SIC with the shared filter bank."""
    n = hs.shape[1]
    F = candidates.size
    b = np.empty((n, F), dtype=complex)
    b[:stage, :] = detected[:stage, None]
    b[stage, :] = candidates

    y_mf = y_current[:, None] - hs[:, [stage]] * candidates[None, :]
    counter.add(F * hs.shape[0])
    for i in range(stage + 1, n):
        z = bank[:, i].conj() @ y_mf
        b[i, :], _ = _quantize_many(z, points)
        y_mf -= hs[:, [i]] * b[i, None, :]
        counter.add(F * (2 * hs.shape[0] + points.size))
    return b


def detect_aa_mf_sic(
    y: ComplexVector,
    H_hat: ComplexMatrix,
    profile: ActivityProfile,
    config: SystemConfig,
    F: Optional[int] = None,
    sac_mode: SacMode = "distance",
    epsilon: float = DEFAULT_EPSILON,
    record_trace: bool = False,
) -> DetectionResult:
    """
    Activity-aware multiple-feedback SIC.

    Devices are visited in descending column norm of H'. Each soft estimate
    is checked against its shadow-area radius; reliable decisions are
    cancelled directly, unreliable ones are replaced by the best of F
    candidates, each rolled out through the remaining devices with the shared
    MMSE filter bank and scored by ||y0 - H' b_f||^2. The main path refits
    the l1-regularized filter after every cancellation.
    """
    constellation = config.constellation
    if not constellation.includes_zero:
        raise DomainError("AA-MF-SIC needs the augmented alphabet")
    F = constellation.size if F is None else F
    if not 2 <= F <= constellation.size:
        raise DomainError(f"F must lie in [2, {constellation.size}], got {F}")

    y, h = _check_dimensions(y, H_hat, config)
    counter = MultCounter()
    aug = zero_augment(y, h, profile, config.noise_var, config.signal_power)
    order = _detection_order(aug.H_prime, "channel_norm")
    hs = aug.H_prime[:, order]
    lambdas = profile.lambda_[order]
    bank = mmse_filter_bank(hs, config.noise_var / config.signal_power, counter)
    chain = _CancellationChain(aug.y0, hs, lambdas, config, True, epsilon, counter)

    n = config.n_devices
    detected = np.zeros(n, dtype=complex)
    activations = 0
    trace: list[MfCandidateMatrix] = []
    for j in range(n):
        z, w = chain.soft_estimate(j)
        decision = assess_reliability(z, constellation, float(lambdas[j]), sac_mode)
        counter.add(constellation.size)
        symbol = decision.symbol
        if not decision.reliable:
            activations += 1
            candidates = mf_candidate_set(z, constellation, F)
            b = _roll_out(chain.y, hs, bank, j, candidates, detected, constellation.points, counter)
            residuals = np.sum(np.abs(aug.y0[:, None] - hs @ b) ** 2, axis=0)
            counter.add(F * (hs.size + hs.shape[0]))
            selected = int(np.argmin(residuals))
            symbol = complex(b[j, selected])
            if record_trace:
                trace.append(MfCandidateMatrix(int(order[j]), j, b, residuals, selected))
            logger.debug("stage %d device %d unreliable (d_k=%.3f > d_th=%.3f), picked %s",
                         j, order[j], decision.d_k, decision.d_th, symbol)
        detected[j] = symbol
        chain.cancel(j, symbol, w)

    x_hat = np.empty(n, dtype=complex)
    x_hat[order] = detected
    return DetectionResult(
        x_hat=x_hat,
        detector_id=DetectorId.AA_MF_SIC,
        mf_activations=activations,
        complex_mult_count=counter.count,
        mf_trace=tuple(trace),
    )


def detect(
    detector_id: DetectorId,
    y: ComplexVector,
    H_hat: ComplexMatrix,
    config: SystemConfig,
    profile: Optional[ActivityProfile] = None,
    active_set: Iterable[int] = (),
    options: DetectorOptions = DetectorOptions(),
) -> DetectionResult:
    """Run one detector by id; ``profile`` defaults to ``config.activity``."""
    profile = config.activity if profile is None else profile
    if detector_id is DetectorId.MMSE:
        return detect_mmse(y, H_hat, config)
    if detector_id is DetectorId.ORACLE_MMSE:
        return detect_oracle_mmse(y, H_hat, active_set, config)
    if detector_id is DetectorId.SA_SIC:
        return detect_sa_sic(y, H_hat, profile, config, ordering="none")
    if detector_id is DetectorId.ORDERED_SA_SIC:
        return detect_sa_sic(y, H_hat, profile, config, ordering="channel_norm")
    if detector_id is DetectorId.SA_SIC_ASQRD:
        return detect_sa_sic_asqrd(y, H_hat, profile, config)
    if detector_id is DetectorId.KBEST:
        return detect_kbest(y, H_hat, profile, config, K=options.kbest_k)
    if detector_id is DetectorId.SMAP:
        return detect_smap_oracle(y, H_hat, profile, config, metric=options.smap_metric)
    if detector_id is DetectorId.AA_MF_SIC:
        return detect_aa_mf_sic(
            y, H_hat, profile, config,
            F=options.mf_candidates, sac_mode=options.sac_mode, epsilon=options.epsilon,
        )
    raise DomainError(f"'{detector_id.value}' has no detector implementation")
