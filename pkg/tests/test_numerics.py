"""
Tests for dense linear algebra, random streams and multiplication counting.
"""

import numpy as np
import pytest

from sparse_mud.numerics import (
    MultCounter,
    RandomStream,
    hermitian_solve,
    sample_complex_gaussian,
    sorted_gram_schmidt_qr,
)
from sparse_mud.validation import DimensionError, DomainError, RankError, SingularityError


def random_complex(rows, cols, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))


class TestMultCounter:
    """Test counting conventions."""

    def test_conventions(self):
        counter = MultCounter()
        counter.matvec(3, 4)
        assert counter.count == 12
        counter.matmul(2, 3, 4)
        assert counter.count == 36
        counter.cholesky(3)
        assert counter.count == 46
        counter.triangular_solve(3, rhs=2)
        assert counter.count == 58

    def test_add_casts_to_int(self):
        counter = MultCounter()
        counter.add(np.int64(5))
        assert counter.count == 5
        assert isinstance(counter.count, int)


class TestRandomStream:
    """Test seeded sampling."""

    def test_same_seed_same_samples(self):
        a = sample_complex_gaussian(RandomStream(42), 3, 4, 1.0)
        b = sample_complex_gaussian(RandomStream(42), 3, 4, 1.0)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a = sample_complex_gaussian(RandomStream(1), 3, 4, 1.0)
        b = sample_complex_gaussian(RandomStream(2), 3, 4, 1.0)
        assert not np.array_equal(a, b)

    def test_seed_sequence_accepted(self):
        seq = np.random.SeedSequence(entropy=7, spawn_key=(1, 2))
        a = RandomStream(seq).random(5)
        b = RandomStream(np.random.SeedSequence(entropy=7, spawn_key=(1, 2))).random(5)
        np.testing.assert_array_equal(a, b)

    def test_invalid_seed_rejected(self):
        with pytest.raises(ValueError):
            RandomStream(-1)
        with pytest.raises(ValueError):
            RandomStream(2 ** 64)

    def test_complex_gaussian_variance(self):
        samples = sample_complex_gaussian(RandomStream(5), 400, 400, 0.5)
        assert np.mean(np.abs(samples) ** 2) == pytest.approx(0.5, rel=0.02)
        assert abs(np.mean(samples)) < 0.01

    def test_zero_variance_gives_zeros(self):
        samples = sample_complex_gaussian(RandomStream(5), 2, 2, 0.0)
        assert not np.any(samples)

    def test_negative_variance_rejected(self):
        with pytest.raises(DomainError):
            sample_complex_gaussian(RandomStream(5), 2, 2, -0.1)


class TestHermitianSolve:
    """Test the Cholesky-based solver."""

    def test_identity(self):
        b = np.array([1 + 2j, 3 - 1j, 0.5])
        np.testing.assert_allclose(hermitian_solve(np.eye(3), b), b)

    def test_matches_dense_solve(self):
        h = random_complex(6, 4, seed=3)
        a = h.conj().T @ h + 0.1 * np.eye(4)
        b = random_complex(4, 2, seed=4)
        np.testing.assert_allclose(hermitian_solve(a, b), np.linalg.solve(a, b), atol=1e-10)

    def test_residual_bound(self):
        g = random_complex(8, 8, seed=5)
        a = g @ g.conj().T + np.eye(8)
        b = random_complex(8, 3, seed=6)
        x = hermitian_solve(a, b)
        residual = np.linalg.norm(a @ x - b, np.inf)
        assert residual <= 1e-8 * (1 + np.linalg.norm(b, np.inf))

    def test_counts_factor_and_two_sweeps(self):
        counter = MultCounter()
        hermitian_solve(np.eye(4, dtype=complex), np.ones(4), counter)
        assert counter.count == 4 * 5 * 6 // 6 + 2 * 10

    def test_non_hermitian_rejected(self):
        a = np.array([[2.0, 1.0], [0.0, 2.0]])
        with pytest.raises(SingularityError, match="Hermitian"):
            hermitian_solve(a, np.ones(2))

    def test_singular_rejected(self):
        a = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(SingularityError):
            hermitian_solve(a, np.ones(2))

    def test_tiny_pivot_rejected(self):
        a = np.diag([1.0, 1e-15])
        with pytest.raises(SingularityError, match="singular"):
            hermitian_solve(a, np.ones(2))

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            hermitian_solve(np.ones((2, 3)), np.ones(2))

    def test_rhs_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            hermitian_solve(np.eye(3), np.ones(2))


class TestSortedQR:
    """Test sorted modified Gram-Schmidt."""

    def test_factorization(self):
        a = random_complex(7, 4, seed=11)
        q, r, perm = sorted_gram_schmidt_qr(a)
        np.testing.assert_allclose(q @ r, a[:, perm], atol=1e-10)
        np.testing.assert_allclose(q.conj().T @ q, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(np.tril(r, -1), 0, atol=1e-12)
        assert np.all(np.real(np.diag(r)) > 0)
        assert sorted(perm) == list(range(4))

    def test_weakest_column_first(self):
        a = random_complex(6, 3, seed=2)
        a[:, 2] *= 0.01
        _, _, perm = sorted_gram_schmidt_qr(a)
        assert perm[0] == 2

    def test_identity_keeps_order(self):
        q, r, perm = sorted_gram_schmidt_qr(np.eye(3, dtype=complex))
        assert list(perm) == [0, 1, 2]
        np.testing.assert_allclose(r, np.eye(3))

    def test_rank_deficient_rejected(self):
        a = random_complex(5, 2, seed=1)
        a[:, 1] = a[:, 0]
        with pytest.raises(RankError):
            sorted_gram_schmidt_qr(a)

    def test_wide_matrix_rejected(self):
        with pytest.raises(DimensionError):
            sorted_gram_schmidt_qr(np.ones((2, 3)))

    def test_counter_charged(self):
        counter = MultCounter()
        sorted_gram_schmidt_qr(random_complex(5, 3, seed=9), counter)
        assert counter.count > 0

    @pytest.mark.parametrize("seed", range(100))
    def test_random_shapes(self, seed):
        rng = np.random.default_rng(seed)
        cols = int(rng.integers(1, 17))
        rows = int(rng.integers(cols, 33))
        a = random_complex(rows, cols, seed=1000 + seed)
        q, r, perm = sorted_gram_schmidt_qr(a)
        np.testing.assert_allclose(q.conj().T @ q, np.eye(cols), atol=1e-8)
        np.testing.assert_allclose(q @ r, a[:, perm], atol=1e-8)
        np.testing.assert_allclose(np.tril(r, -1), 0, atol=1e-12)
        assert np.all(np.abs(np.imag(np.diag(r))) < 1e-12)
        assert np.all(np.real(np.diag(r)) > 0)
