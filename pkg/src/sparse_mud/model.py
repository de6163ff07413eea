"""
LA-CDMA uplink model: constellations, device activity, channel draws,
zero-augmentation and imperfect channel knowledge.

N devices spread over M chips share one receiver. The channel matrix H (M x N)
folds spreading and flat fading into i.i.d. unit-variance complex Gaussian
entries, and the received vector is ``y = H x + n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .numerics import ComplexMatrix, ComplexVector, RandomStream, sample_complex_gaussian
from .validation import DimensionError, DomainError, require_nonnegative, require_probabilities


@dataclass(frozen=True)
class AugmentedConstellation:
    """
    A finite alphabet A, optionally augmented with the zero symbol.

    ``points`` lists zero first (when present) followed by A in its given
    order; that order is the tie-break order of the quantizer.
    """

    nonzero_points: tuple[complex, ...]
    includes_zero: bool = True
    name: str = "custom"
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple(complex(p) for p in self.nonzero_points)
        if not pts:
            raise DomainError("a constellation needs at least one nonzero point")
        if any(p == 0 for p in pts):
            raise DomainError("the zero symbol is added through includes_zero, not listed")
        if len(set(pts)) != len(pts):
            raise DomainError("constellation points must be distinct")
        object.__setattr__(self, "nonzero_points", pts)
        listed = ((0j,) if self.includes_zero else ()) + pts
        arr = np.array(listed, dtype=complex)
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def alphabet_size(self) -> int:
        """|A|, the number of nonzero symbols."""
        return len(self.nonzero_points)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def average_power(self) -> float:
        return float(np.mean(np.abs(np.array(self.nonzero_points)) ** 2))

    def without_zero(self) -> AugmentedConstellation:
        return AugmentedConstellation(self.nonzero_points, includes_zero=False, name=self.name)

    def with_zero(self) -> AugmentedConstellation:
        return AugmentedConstellation(self.nonzero_points, includes_zero=True, name=self.name)


def qpsk(includes_zero: bool = True) -> AugmentedConstellation:
    """Unit-power QPSK listed as (1+j), (-1+j), (1-j), (-1-j), each over sqrt(2)."""
    s = 1 / math.sqrt(2)
    pts = (complex(s, s), complex(-s, s), complex(s, -s), complex(-s, -s))
    return AugmentedConstellation(pts, includes_zero=includes_zero, name="qpsk")


def bpsk(includes_zero: bool = True) -> AugmentedConstellation:
    return AugmentedConstellation((1 + 0j, -1 + 0j), includes_zero=includes_zero, name="bpsk")


def psk(order: int, includes_zero: bool = True) -> AugmentedConstellation:
    """Unit-modulus PSK of the given order; order 4 returns :func:`qpsk`."""
    if order == 2:
        return bpsk(includes_zero)
    if order == 4:
        return qpsk(includes_zero)
    if order < 2:
        raise DomainError(f"PSK order must be >= 2, got {order}")
    phases = 2 * np.pi * np.arange(order) / order + np.pi / order
    pts = tuple(complex(np.cos(t), np.sin(t)) for t in phases)
    return AugmentedConstellation(pts, includes_zero=includes_zero, name=f"{order}psk")


MODULATIONS = {"bpsk": 2, "qpsk": 4, "8psk": 8}


def constellation_by_name(name: str) -> AugmentedConstellation:
    try:
        return psk(MODULATIONS[name.lower()])
    except KeyError:
        raise DomainError(
            f"unknown modulation '{name}', expected one of {', '.join(MODULATIONS)}"
        ) from None


@dataclass(frozen=True, eq=False)
class ActivityProfile:
    """Per-device activity probabilities and their sparsity weights."""

    p: np.ndarray
    lambda_: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        lam = np.asarray(self.lambda_, dtype=float)
        if p.ndim != 1 or p.shape != lam.shape:
            raise DimensionError(f"p and lambda must be equal-length vectors, got {p.shape} and {lam.shape}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "lambda_", lam)

    @property
    def n_devices(self) -> int:
        return self.p.size


def make_activity_profile(p: Iterable[float], alphabet_size: int) -> ActivityProfile:
    """
    Build the profile with lambda_n = ln((1 - p_n) |A| / p_n).

    Raises:
        DomainError: If any p_n is outside (0, 1) or alphabet_size < 1
    """
    if alphabet_size < 1:
        raise DomainError(f"alphabet size must be >= 1, got {alphabet_size}")
    arr = require_probabilities(p)
    lam = np.log((1.0 - arr) * alphabet_size / arr)
    return ActivityProfile(p=arr, lambda_=lam)


def draw_activity_profile(
    stream: RandomStream,
    n_devices: int,
    p_low: float,
    p_high: float,
    alphabet_size: int,
) -> ActivityProfile:
    """Draw p_n uniformly in [p_low, p_high] for every device."""
    if not 0.0 < p_low <= p_high < 1.0:
        raise DomainError(f"activity range [{p_low}, {p_high}] must lie inside (0, 1)")
    p = stream.uniform(p_low, p_high, n_devices)
    return make_activity_profile(p, alphabet_size)


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions, SNR and priors of one simulated system."""

    n_devices: int
    spreading: int
    snr_db: float
    constellation: AugmentedConstellation
    activity: ActivityProfile
    signal_power: float = 1.0

    def __post_init__(self):
        if self.n_devices < 1 or self.spreading < 1:
            raise DomainError(f"need N >= 1 and M >= 1, got N={self.n_devices}, M={self.spreading}")
        if self.activity.n_devices != self.n_devices:
            raise DimensionError(
                f"activity profile covers {self.activity.n_devices} devices, config has {self.n_devices}"
            )
        if not self.signal_power > 0:
            raise DomainError(f"signal power must be positive, got {self.signal_power}")
        if math.isnan(self.snr_db):
            raise DomainError("snr_db cannot be NaN")

    @property
    def noise_var(self) -> float:
        """sigma_n^2 = sigma_x^2 / 10^(snr_db / 10); +inf dB gives a noiseless system."""
        if math.isinf(self.snr_db):
            return 0.0 if self.snr_db > 0 else math.inf
        return self.signal_power / 10 ** (self.snr_db / 10)

    def with_snr(self, snr_db: float) -> SystemConfig:
        return SystemConfig(
            self.n_devices, self.spreading, snr_db, self.constellation, self.activity, self.signal_power
        )

    def with_activity(self, activity: ActivityProfile) -> SystemConfig:
        return SystemConfig(
            self.n_devices, self.spreading, self.snr_db, self.constellation, activity, self.signal_power
        )


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """True channel, the receiver's estimate and the estimate's error variance."""

    H: ComplexMatrix
    H_hat: ComplexMatrix
    csi_error_var: float = 0.0


@dataclass(frozen=True, eq=False)
class TransmitRealization:
    x: ComplexVector
    active_set: frozenset[int]
    y: ComplexVector


@dataclass(frozen=True, eq=False)
class AugmentedSystem:
    """Zero-augmented observation y0 = [y; 0] and channel H' = [H; sigma_n diag(sqrt(lambda))]."""

    y0: ComplexVector
    H_prime: ComplexMatrix

    @property
    def rows(self) -> int:
        return self.H_prime.shape[0]

    @property
    def n_devices(self) -> int:
        return self.H_prime.shape[1]


def draw_realization(
    config: SystemConfig,
    stream: RandomStream,
) -> tuple[ChannelRealization, TransmitRealization]:
    """
    Draw activity, symbols, channel and noise for one slot.

    Draw order is fixed (activity, symbols, channel, noise) so the same
    stream state always yields the same realization.
    """
    n, m = config.n_devices, config.spreading
    constellation = config.constellation
    alphabet = np.array(constellation.nonzero_points, dtype=complex)

    active = stream.random(n) < config.activity.p
    symbols = alphabet[stream.integers(constellation.alphabet_size, n)]
    x = np.where(active, symbols, 0j)

    h = sample_complex_gaussian(stream, m, n, 1.0)
    noise = sample_complex_gaussian(stream, m, 1, config.noise_var)[:, 0]
    y = h @ x + noise

    active_set = frozenset(int(i) for i in np.flatnonzero(active))
    return (
        ChannelRealization(H=h, H_hat=h, csi_error_var=0.0),
        TransmitRealization(x=x, active_set=active_set, y=y),
    )


def perturb_csi(H: ComplexMatrix, csi_error_var: float, stream: RandomStream) -> ChannelRealization:
    """
    Model an imperfect estimate H_hat = H + E with E ~ CN(0, csi_error_var).

    No samples are drawn when csi_error_var is zero.

    Raises:
        DomainError: If csi_error_var is negative
    """
    csi_error_var = require_nonnegative("csi_error_var", csi_error_var)
    if csi_error_var == 0.0:
        return ChannelRealization(H=H, H_hat=H, csi_error_var=0.0)
    error = sample_complex_gaussian(stream, H.shape[0], H.shape[1], csi_error_var)
    return ChannelRealization(H=H, H_hat=H + error, csi_error_var=csi_error_var)


def zero_augment(
    y: ComplexVector,
    H_used: ComplexMatrix,
    profile: ActivityProfile,
    noise_var: float,
    signal_power: float = 1.0,
) -> AugmentedSystem:
    """
    Stack the observation with N zeros and the channel with sigma_n diag(sqrt(lambda)).

    Devices with lambda_n <= 0 (p_n at or above |A|/(|A|+1)) carry no sparsity
    prior; their row gets the Gaussian symbol load sigma_n / sigma_x instead,
    so H' keeps full column rank whenever sigma_n > 0.

    Raises:
        DimensionError: If shapes disagree
        DomainError: If noise_var is negative
    """
    noise_var = require_nonnegative("noise_var", noise_var)
    y = np.asarray(y, dtype=complex)
    H_used = np.asarray(H_used, dtype=complex)
    if H_used.ndim != 2 or y.shape != (H_used.shape[0],):
        raise DimensionError(f"y has shape {y.shape}, channel has shape {H_used.shape}")
    n = H_used.shape[1]
    if profile.n_devices != n:
        raise DimensionError(f"profile covers {profile.n_devices} devices, channel has {n} columns")

    if not signal_power > 0:
        raise DomainError(f"signal power must be positive, got {signal_power}")
    prior = np.where(profile.lambda_ > 0, profile.lambda_, 1.0 / signal_power)
    weights = np.sqrt(noise_var * prior)
    y0 = np.concatenate([y, np.zeros(n, dtype=complex)])
    h_prime = np.vstack([H_used, np.diag(weights).astype(complex)])
    return AugmentedSystem(y0=y0, H_prime=h_prime)


def fixed_activity_profile(p: float, n_devices: int, alphabet_size: int) -> ActivityProfile:
    """All devices share the same activity probability."""
    return make_activity_profile(np.full(n_devices, float(p)), alphabet_size)


def describe(config: SystemConfig) -> dict:
    """Summary of a config suitable for logs and manifests."""
    return {
        "n_devices": config.n_devices,
        "spreading": config.spreading,
        "snr_db": config.snr_db,
        "noise_var": config.noise_var,
        "modulation": config.constellation.name,
        "signal_power": config.signal_power,
        "p_mean": float(np.mean(config.activity.p)),
    }
