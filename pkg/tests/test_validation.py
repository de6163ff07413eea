"""
Tests for validation utilities.

Tests the exception hierarchy, numeric argument checks and run-name/path validation.
"""

import numpy as np
import pytest

from sparse_mud.validation import (
    CapacityError,
    DimensionError,
    DomainError,
    OutputPathError,
    OutputPathValidator,
    RankError,
    SimulationError,
    SingularityError,
    require_nonnegative,
    require_probabilities,
    require_square,
    result_paths,
)


class TestErrorHierarchy:
    """Test that every error shares one root."""

    @pytest.mark.parametrize(
        "error", [DimensionError, SingularityError, RankError, DomainError, CapacityError, OutputPathError]
    )
    def test_root(self, error):
        assert issubclass(error, SimulationError)

    def test_value_error_family(self):
        assert issubclass(DomainError, ValueError)
        assert issubclass(DimensionError, ValueError)


class TestNumericChecks:
    """Test argument validators."""

    def test_nonnegative(self):
        assert require_nonnegative("var", 0) == 0.0
        assert require_nonnegative("var", 2) == 2.0
        with pytest.raises(DomainError, match="var must be >= 0"):
            require_nonnegative("var", -1e-9)
        with pytest.raises(DomainError):
            require_nonnegative("var", float("nan"))

    def test_probabilities(self):
        np.testing.assert_array_equal(require_probabilities([0.1, 0.9]), [0.1, 0.9])
        with pytest.raises(DomainError, match=r"p\[1\]"):
            require_probabilities([0.1, 1.0])
        with pytest.raises(DomainError):
            require_probabilities([])
        with pytest.raises(DomainError):
            require_probabilities([[0.1]])

    def test_square(self):
        require_square("A", np.eye(2))
        with pytest.raises(DimensionError):
            require_square("A", np.ones((2, 3)))
        with pytest.raises(DimensionError):
            require_square("A", np.ones(3))


class TestOutputPathValidator:
    """Test run-name validation."""

    def test_valid_names(self):
        valid_names = [
            "fig4",
            "sweep-snr-seed7",
            "run_2026.v2",
            "a",
            "A" * 200,
        ]
        for name in valid_names:
            assert OutputPathValidator.validate_run_name(name) == name

    def test_path_traversal(self):
        for name in ["../etc/passwd", "foo/../bar", "..hidden"]:
            with pytest.raises(OutputPathError, match="cannot contain"):
                OutputPathValidator.validate_run_name(name)

    def test_separators(self):
        for name in ["runs/fig4", "C:\\runs"]:
            with pytest.raises(OutputPathError, match="path separators"):
                OutputPathValidator.validate_run_name(name)

    def test_null_bytes(self):
        with pytest.raises(OutputPathError, match="null bytes"):
            OutputPathValidator.validate_run_name("run\x00name")

    def test_invalid_characters(self):
        for name in ["my run", "run;rm -rf", "run$(cmd)", "run|pipe", "run&bg"]:
            with pytest.raises(OutputPathError, match="can only contain"):
                OutputPathValidator.validate_run_name(name)

    def test_reserved(self):
        for name in ["aux", "CON", "nul", "com1", "lpt1"]:
            with pytest.raises(OutputPathError, match="reserved"):
                OutputPathValidator.validate_run_name(name)

    def test_empty_and_too_long(self):
        with pytest.raises(OutputPathError, match="empty"):
            OutputPathValidator.validate_run_name("")
        with pytest.raises(OutputPathError, match="too long"):
            OutputPathValidator.validate_run_name("a" * 201)

    def test_ensure_within_directory(self, tmp_path):
        inside = tmp_path / "runs" / "fig4.csv"
        assert OutputPathValidator.ensure_within_directory(inside, tmp_path) == inside.resolve()
        with pytest.raises(OutputPathError, match="outside"):
            OutputPathValidator.ensure_within_directory(tmp_path.parent / "elsewhere.csv", tmp_path)


class TestResultPaths:
    """Test result file naming."""

    def test_creates_directory(self, tmp_path):
        out = tmp_path / "nested" / "runs"
        csv_path, json_path = result_paths(out, "fig4")
        assert out.is_dir()
        assert csv_path.name == "fig4.csv"
        assert json_path.name == "fig4.json"
        assert csv_path.parent == out.resolve()

    def test_rejects_unsafe_name(self, tmp_path):
        with pytest.raises(OutputPathError):
            result_paths(tmp_path, "../escape")
        assert not (tmp_path.parent / "escape.csv").exists()
