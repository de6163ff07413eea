"""
Complex dense linear algebra and random sampling shared by the other modules.

Matrices and vectors are plain ``numpy`` ``complex128`` arrays; the aliases below
only document intent. Random numbers come from :class:`RandomStream`, a thin
single-owner wrapper around ``numpy.random.Generator`` driven by the PCG64 bit
generator, so a seed reproduces the same samples on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg

from .validation import DimensionError, RankError, SingularityError, require_nonnegative, require_square

ComplexMatrix = np.ndarray
ComplexVector = np.ndarray

HERMITIAN_TOL = 1e-9
SINGULAR_PIVOT_REL = 1e-12
RANK_TOL = 1e-12


@dataclass
class MultCounter:
    """Accumulates complex multiplications charged by the detectors."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def matvec(self, rows: int, cols: int) -> None:
        self.add(rows * cols)

    def matmul(self, rows: int, inner: int, cols: int) -> None:
        self.add(rows * inner * cols)

    def cholesky(self, n: int) -> None:
        # n^3/6 + O(n^2) multiply-adds
        self.add(n * (n + 1) * (n + 2) // 6)

    def triangular_solve(self, n: int, rhs: int = 1) -> None:
        self.add(rhs * n * (n + 1) // 2)


class RandomStream:
    """
    Seedable complex-sample source.

    The bit generator is PCG64; identical seeds yield identical sample
    sequences. A stream is owned by one caller at a time.
    """

    def __init__(self, seed: Union[int, np.random.SeedSequence]):
        if isinstance(seed, np.random.SeedSequence):
            self._seed_sequence = seed
            self.seed = int(seed.entropy) if isinstance(seed.entropy, int) else 0
        else:
            if seed < 0 or seed >= 2 ** 64:
                raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
            self._seed_sequence = np.random.SeedSequence(int(seed))
            self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seed_sequence))

    def uniform(self, low: float, high: float, size: Optional[int] = None):
        return self.generator.uniform(low, high, size)

    def random(self, size: int) -> np.ndarray:
        return self.generator.random(size)

    def integers(self, high: int, size: int) -> np.ndarray:
        return self.generator.integers(0, high, size)

    def standard_normal(self, shape: tuple[int, ...]) -> np.ndarray:
        return self.generator.standard_normal(shape)


def sample_complex_gaussian(stream: RandomStream, rows: int, cols: int, variance: float) -> ComplexMatrix:
    """
    Draw a rows x cols matrix of i.i.d. circularly-symmetric complex Gaussians.

    Each entry has total variance ``variance``; the real and imaginary parts
    each carry ``variance / 2``.

    Raises:
        DomainError: If variance is negative
    """
    variance = require_nonnegative("variance", variance)
    scale = np.sqrt(variance / 2.0)
    real = stream.standard_normal((rows, cols))
    imag = stream.standard_normal((rows, cols))
    return scale * (real + 1j * imag)


def hermitian_solve(
    a: ComplexMatrix,
    b: ComplexMatrix,
    counter: Optional[MultCounter] = None,
) -> ComplexMatrix:
    """
    Solve A X = B for Hermitian positive-definite A through a Cholesky factor.

    Args:
        a: Square Hermitian positive-definite matrix
        b: Right-hand side, matrix or vector
        counter: Optional multiplication counter to charge

    Returns:
        X with the same trailing shape as ``b``

    Raises:
        DimensionError: If A is not square or B does not conform
        SingularityError: If A is not Hermitian positive-definite, or a pivot
            falls below 1e-12 * trace(A) / rows
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    require_square("A", a)
    n = a.shape[0]
    if b.shape[0] != n:
        raise DimensionError(f"B has {b.shape[0]} rows, A is {n}x{n}")

    if np.max(np.abs(a - a.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise SingularityError("A is not Hermitian")

    scale = np.real(np.trace(a)) / n
    if not np.isfinite(scale) or scale <= 0:
        raise SingularityError("A has a non-positive trace")

    try:
        lower = linalg.cholesky(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularityError(f"A is not positive-definite: {e}") from e

    pivots = np.real(np.diag(lower)) ** 2
    if np.min(pivots) < SINGULAR_PIVOT_REL * scale:
        raise SingularityError(
            f"A is numerically singular (pivot {np.min(pivots):.3e}, trace/rows {scale:.3e})"
        )

    rhs = 1 if b.ndim == 1 else b.shape[1]
    if counter is not None:
        counter.cholesky(n)
        counter.triangular_solve(n, rhs)
        counter.triangular_solve(n, rhs)

    tmp = linalg.solve_triangular(lower, b, lower=True, check_finite=False)
    return linalg.solve_triangular(lower.conj().T, tmp, lower=False, check_finite=False)


def sorted_gram_schmidt_qr(
    a: ComplexMatrix,
    counter: Optional[MultCounter] = None,
) -> tuple[ComplexMatrix, ComplexMatrix, np.ndarray]:
    """
    Sorted QR decomposition by modified Gram-Schmidt.

    At step k the remaining column with the smallest residual norm is moved to
    position k before it is orthogonalised, so weak columns end up first and
    are detected last by back-substitution.

    Returns:
        (Q, R, perm) with ``a[:, perm] == Q @ R``; Q has orthonormal columns and
        R is upper triangular with a real positive diagonal.

    Raises:
        DimensionError: If A has fewer rows than columns
        RankError: If a residual column norm drops below 1e-12
    """
    q = np.array(a, dtype=complex, copy=True)
    if q.ndim != 2:
        raise DimensionError(f"A must be 2-D, got shape {q.shape}")
    rows, cols = q.shape
    if rows < cols:
        raise DimensionError(f"A must have at least as many rows as columns, got {q.shape}")

    r = np.zeros((cols, cols), dtype=complex)
    perm = np.arange(cols)
    norms = np.sum(np.abs(q) ** 2, axis=0)
    if counter is not None:
        counter.matvec(rows, cols)

    for k in range(cols):
        pick = k + int(np.argmin(norms[k:]))
        if pick != k:
            q[:, [k, pick]] = q[:, [pick, k]]
            r[:, [k, pick]] = r[:, [pick, k]]
            norms[[k, pick]] = norms[[pick, k]]
            perm[[k, pick]] = perm[[pick, k]]

        rkk = np.linalg.norm(q[:, k])
        if rkk < RANK_TOL:
            raise RankError(f"column {perm[k]} is linearly dependent (residual norm {rkk:.3e})")
        r[k, k] = rkk
        q[:, k] /= rkk

        if k + 1 < cols:
            proj = q[:, k].conj() @ q[:, k + 1:]
            r[k, k + 1:] = proj
            q[:, k + 1:] -= np.outer(q[:, k], proj)
            norms[k + 1:] -= np.abs(proj) ** 2
            if counter is not None:
                counter.add(2 * rows * (cols - k - 1) + (cols - k - 1))
        if counter is not None:
            counter.add(rows)

    return q, r, perm
