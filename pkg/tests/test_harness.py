"""
Tests for NSER counting, experiment specs and seeded sweeps.
"""

import logging
import math

import numpy as np
import pytest

from sparse_mud.detectors import DetectorId
from sparse_mud.harness import (
    ExperimentSpec,
    compute_nser,
    count_symbol_errors,
    crossover_rows,
    degradation_rows,
    run_csi_sweep,
    run_sweep,
    trial_seed,
)
from sparse_mud.validation import DimensionError, DomainError, SingularityError

A = complex(1, 1) / math.sqrt(2)
B = complex(-1, 1) / math.sqrt(2)


def small_spec(**overrides):
    values = dict(
        n_devices=6,
        spreading=6,
        detectors=(DetectorId.MMSE, DetectorId.ORDERED_SA_SIC, DetectorId.AA_MF_SIC),
        axis="snr",
        axis_values=(0.0, 20.0),
        trials=20,
        seed=7,
    )
    values.update(overrides)
    return ExperimentSpec(**values)


def counts(result):
    return [
        (p.detector, p.axis_value, p.snr_db, p.trials, p.active_symbols, p.symbol_errors,
         p.mf_activations, p.mult_count, p.skipped_trials, p.failures)
        for p in result.points
    ]


class TestNser:
    """Test per-trial error counting."""

    def test_identical(self):
        x = np.array([A, 0, B])
        assert compute_nser(x, x.copy()) == 0

    def test_active_only(self):
        assert compute_nser(np.array([A, 0, B]), np.array([A, 0, -B])) == 0.5

    def test_false_alarm_modes(self):
        x_true = np.array([A, 0])
        x_hat = np.array([A, B])
        assert compute_nser(x_true, x_hat, "active_only") == 0
        assert compute_nser(x_true, x_hat, "errors_over_active") == 1
        assert count_symbol_errors(x_true, x_hat, "errors_over_active") == (1, 1)

    def test_no_active_device(self):
        assert math.isnan(compute_nser(np.zeros(3), np.array([0, A, 0])))
        assert count_symbol_errors(np.zeros(3), np.zeros(3)) == (0, 0)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            compute_nser(np.zeros(3), np.zeros(2))

    def test_unknown_mode(self):
        with pytest.raises(DomainError):
            compute_nser(np.zeros(2), np.zeros(2), "ratio")


class TestTrialSeed:
    """Test child-seed derivation."""

    def test_pure_function(self):
        a = np.random.Generator(np.random.PCG64(trial_seed(7, 1, 2))).random(4)
        b = np.random.Generator(np.random.PCG64(trial_seed(7, 1, 2))).random(4)
        np.testing.assert_array_equal(a, b)

    def test_distinct_children(self):
        draws = {
            tuple(np.random.Generator(np.random.PCG64(trial_seed(7, i, j))).random(2))
            for i in range(3) for j in range(3)
        }
        assert len(draws) == 9


class TestExperimentSpec:
    """Test spec validation and serialization."""

    def test_defaults_follow_large_system(self):
        spec = ExperimentSpec()
        assert (spec.n_devices, spec.spreading) == (128, 64)
        assert spec.p_range == (0.1, 0.3)
        assert DetectorId.SMAP not in spec.detectors
        assert spec.axis_values[0] == 0 and spec.axis_values[-1] == 20

    def test_detector_strings_parsed(self):
        spec = small_spec(detectors=("mmse", "kbest"))
        assert spec.detectors == (DetectorId.MMSE, DetectorId.KBEST)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"trials": 0},
            {"detectors": ()},
            {"axis_values": ()},
            {"axis": "time"},
            {"axis": "activity", "axis_values": (0.5, 1.0)},
            {"axis": "csi", "axis_values": (-0.1,)},
            {"nser_mode": "ratio"},
            {"p_redraw": "sometimes"},
            {"detectors": ("ir",)},
            {"n_devices": 128, "detectors": ("smap",)},
            {"mf_candidates": 9},
            {"workers": 0},
            {"p_range": (0.4, 0.2)},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(DomainError):
            small_spec(**overrides)

    def test_mapping_round_trip(self):
        spec = small_spec(axis="activity", axis_values=(0.2, 0.4), snr_db=(10.0,))
        assert ExperimentSpec.from_mapping(spec.to_dict()) == spec

    def test_mapping_accepts_strings(self):
        spec = ExperimentSpec.from_mapping({"detectors": "mmse,sa-sic", "axis_values": "0,10", "snr_db": 12})
        assert spec.detectors == (DetectorId.MMSE, DetectorId.SA_SIC)
        assert spec.axis_values == (0.0, 10.0)
        assert spec.snr_db == (12.0,)

    def test_mapping_unknown_key(self):
        with pytest.raises(DomainError, match="unknown experiment keys"):
            ExperimentSpec.from_mapping({"devices": 4})

    def test_points(self):
        spec = small_spec(axis="activity", axis_values=(0.1, 0.9), snr_db=(10.0, 16.0))
        points = spec.points()
        assert [(p.index, p.snr_db, p.axis_value, p.fixed_p) for p in points] == [
            (0, 10.0, 0.1, 0.1), (1, 10.0, 0.9, 0.9), (2, 16.0, 0.1, 0.1), (3, 16.0, 0.9, 0.9),
        ]


class TestRunSweep:
    """Test seeded sweeps."""

    def test_one_row_per_detector_and_point(self):
        result = run_sweep(small_spec())
        assert len(result.points) == 6
        for p in result.points:
            assert p.trials + p.skipped_trials == 20
            assert 0 <= p.symbol_errors <= p.active_symbols
            assert 0 <= p.nser <= 1
            assert p.mult_count_mean > 0

    def test_deterministic(self):
        assert counts(run_sweep(small_spec())) == counts(run_sweep(small_spec()))

    def test_different_seed_differs(self):
        assert counts(run_sweep(small_spec())) != counts(run_sweep(small_spec(seed=8)))

    def test_parallel_matches_serial(self):
        serial = run_sweep(small_spec(trials=12))
        parallel = run_sweep(small_spec(trials=12, workers=2))
        assert counts(parallel) == counts(serial)

    def test_progress_reports_every_trial(self):
        seen = []
        run_sweep(small_spec(trials=10), progress=seen.append)
        assert sum(seen) == 20

    def test_per_trial_redraw(self):
        fixed = run_sweep(small_spec())
        redrawn = run_sweep(small_spec(p_redraw="per_trial"))
        assert counts(fixed) != counts(redrawn)
        assert counts(redrawn) == counts(run_sweep(small_spec(p_redraw="per_trial")))

    def test_noiseless_sic_is_exact(self):
        spec = small_spec(
            n_devices=4, spreading=8, axis_values=(math.inf,), trials=30,
            detectors=(
                DetectorId.SA_SIC, DetectorId.ORDERED_SA_SIC, DetectorId.SA_SIC_ASQRD,
                DetectorId.KBEST, DetectorId.AA_MF_SIC,
            ),
        )
        for p in run_sweep(spec).points:
            assert p.symbol_errors == 0
            assert p.failures == 0

    def test_zero_active_trials_skipped(self):
        spec = small_spec(n_devices=2, spreading=2, p_range=(0.01, 0.02), trials=30, detectors=("mmse",))
        point = run_sweep(spec).points[0]
        assert point.skipped_trials > 0
        assert point.trials + point.skipped_trials == 30

    def test_detector_failure_recorded(self, mocker, caplog):
        mocker.patch("sparse_mud.harness.detect", side_effect=SingularityError("pivot"))
        spec = small_spec(trials=3, axis_values=(10.0,), detectors=("mmse",))
        with caplog.at_level(logging.WARNING, logger="sparse_mud.harness"):
            result = run_sweep(spec)
        point = result.points[0]
        assert point.trials == 0
        assert point.failures + point.skipped_trials == 3
        assert math.isnan(point.nser)
        assert result.empty_points == [point]
        assert "pivot" in caplog.text

    def test_lookup(self):
        result = run_sweep(small_spec(trials=2))
        point = result.lookup(DetectorId.MMSE, 20.0)
        assert point.snr_db == 20.0
        with pytest.raises(KeyError):
            result.lookup(DetectorId.KBEST, 20.0)


class TestCsiSweep:
    """Test imperfect channel knowledge."""

    def test_zero_variance_matches_snr_sweep(self):
        plain = run_sweep(small_spec(axis_values=(10.0,)))
        csi = run_csi_sweep(small_spec(axis="csi", axis_values=(0.0,), snr_db=(10.0,)))
        assert [(p.symbol_errors, p.active_symbols, p.mult_count) for p in plain.points] == [
            (p.symbol_errors, p.active_symbols, p.mult_count) for p in csi.points
        ]

    def test_requires_csi_axis(self):
        with pytest.raises(DomainError):
            run_csi_sweep(small_spec())

    def test_perfect_reference_reuses_trials(self):
        spec = small_spec(axis="csi", axis_values=(0.0, 0.1), snr_db=(16.0,), trials=10)
        twin = small_spec(axis="csi", axis_values=(0.0, 0.0), snr_db=(16.0,), trials=10)
        reference = run_sweep(spec, perfect_csi=True)
        assert all(p.csi_error_var == 0.0 for p in reference.points)
        assert [(p.symbol_errors, p.active_symbols, p.mult_count) for p in reference.points] == [
            (p.symbol_errors, p.active_symbols, p.mult_count) for p in run_csi_sweep(twin).points
        ]

    def test_degradation_is_nonnegative(self):
        spec = small_spec(
            n_devices=12, spreading=12, axis="csi", axis_values=(0.0, 0.1), snr_db=(16.0,), trials=60,
        )
        rows = degradation_rows(run_csi_sweep(spec), run_sweep(spec, perfect_csi=True))
        assert len(rows) == 2 * len(spec.detectors)
        for row in rows:
            assert row["degradation"] >= 0
            if row["csi_error_var"] == 0.0:
                assert row["degradation"] == 0
            assert row["degradation"] == pytest.approx(row["nser"] - row["perfect_csi_nser"])

    def test_degradation_on_snr_axis(self):
        spec = small_spec(axis_values=(10.0, 20.0), csi_error_var=0.1, trials=10)
        assert spec.imperfect_csi
        assert not small_spec().imperfect_csi
        rows = degradation_rows(run_sweep(spec), run_sweep(spec, perfect_csi=True))
        assert [row["snr_db"] for row in rows] == [10.0] * 3 + [20.0] * 3
        assert all(row["csi_error_var"] == 0.1 for row in rows)

    def test_degradation_needs_matching_runs(self):
        spec = small_spec(axis="csi", axis_values=(0.0, 0.1), snr_db=(16.0,), trials=2)
        result = run_csi_sweep(spec)
        with pytest.raises(DimensionError):
            degradation_rows(result, run_sweep(small_spec(axis_values=(16.0,), trials=2)))
        with pytest.raises(DimensionError):
            degradation_rows(result, run_sweep(small_spec(axis_values=(16.0, 20.0), trials=2)))

    @pytest.mark.slow
    def test_estimation_error_degrades(self):
        spec = small_spec(
            n_devices=8, spreading=8, axis="csi", axis_values=(0.0, 0.1), snr_db=(16.0,), trials=300,
            detectors=(DetectorId.MMSE, DetectorId.ORDERED_SA_SIC, DetectorId.AA_MF_SIC),
        )
        result = run_csi_sweep(spec)
        for detector in spec.detectors:
            perfect = result.lookup(detector, 0.0)
            noisy = result.lookup(detector, 0.1)
            assert noisy.symbol_errors >= perfect.symbol_errors


class TestStatisticalBehaviour:
    """Paired Monte Carlo checks at desk scale."""

    @pytest.mark.slow
    def test_map_oracle_beats_linear_mmse(self):
        spec = small_spec(
            n_devices=4, spreading=8, axis_values=(4.0,), trials=400,
            detectors=(DetectorId.SMAP, DetectorId.MMSE),
        )
        result = run_sweep(spec)
        smap = result.lookup(DetectorId.SMAP, 4.0)
        mmse = result.lookup(DetectorId.MMSE, 4.0)
        assert smap.symbol_errors <= mmse.symbol_errors

    @pytest.mark.slow
    def test_map_oracle_leads_small_system(self):
        detectors = (
            DetectorId.SMAP, DetectorId.MMSE, DetectorId.SA_SIC, DetectorId.ORDERED_SA_SIC,
            DetectorId.SA_SIC_ASQRD, DetectorId.AA_MF_SIC,
        )
        spec = small_spec(n_devices=4, spreading=8, axis_values=(20.0,), trials=2000, detectors=detectors)
        result = run_sweep(spec)
        smap = result.lookup(DetectorId.SMAP, 20.0)
        # counts near zero get two symbols of slack
        for detector in detectors[1:]:
            other = result.lookup(detector, 20.0)
            assert smap.symbol_errors <= 1.05 * other.symbol_errors + 2
        aa = result.lookup(DetectorId.AA_MF_SIC, 20.0)
        assert aa.symbol_errors <= 2 * smap.symbol_errors + 2

    @pytest.mark.slow
    def test_detector_ranking_large_system(self):
        detectors = (
            DetectorId.MMSE, DetectorId.SA_SIC, DetectorId.ORDERED_SA_SIC,
            DetectorId.SA_SIC_ASQRD, DetectorId.AA_MF_SIC,
        )
        spec = ExperimentSpec(
            n_devices=128, spreading=64, detectors=detectors, axis_values=(16.0,), trials=500, seed=3,
        )
        result = run_sweep(spec)
        nser = {d: result.lookup(d, 16.0).nser for d in detectors}
        assert nser[DetectorId.AA_MF_SIC] < nser[DetectorId.SA_SIC_ASQRD]
        assert nser[DetectorId.AA_MF_SIC] < nser[DetectorId.ORDERED_SA_SIC]
        assert nser[DetectorId.AA_MF_SIC] <= 0.8 * nser[DetectorId.SA_SIC]
        assert nser[DetectorId.ORDERED_SA_SIC] <= nser[DetectorId.SA_SIC]
        assert nser[DetectorId.SA_SIC_ASQRD] < nser[DetectorId.SA_SIC]
        assert nser[DetectorId.SA_SIC] < nser[DetectorId.MMSE]
        # A-SQRD within 10% of norm-ordered SIC
        assert nser[DetectorId.SA_SIC_ASQRD] <= 1.1 * nser[DetectorId.ORDERED_SA_SIC]

    @pytest.mark.slow
    def test_sic_improves_with_snr(self):
        spec = small_spec(
            n_devices=8, spreading=8, axis_values=(0.0, 20.0), trials=150,
            detectors=(DetectorId.SA_SIC, DetectorId.ORDERED_SA_SIC, DetectorId.SA_SIC_ASQRD),
        )
        result = run_sweep(spec)
        for detector in spec.detectors:
            assert result.lookup(detector, 20.0).nser <= result.lookup(detector, 0.0).nser

    @pytest.mark.slow
    def test_feedback_fires_more_at_low_snr(self):
        spec = small_spec(
            n_devices=16, spreading=8, axis_values=(0.0, 20.0), trials=100,
            detectors=(DetectorId.AA_MF_SIC,),
        )
        result = run_sweep(spec)
        low = result.lookup(DetectorId.AA_MF_SIC, 0.0)
        high = result.lookup(DetectorId.AA_MF_SIC, 20.0)
        assert high.mf_activations_mean < low.mf_activations_mean
        assert high.mult_count_mean < low.mult_count_mean

    def test_crossover_rows(self):
        spec = small_spec(
            axis="activity", axis_values=(0.2, 0.8), snr_db=(16.0,), trials=5,
            detectors=(DetectorId.ORACLE_MMSE, DetectorId.AA_MF_SIC),
        )
        rows = crossover_rows(run_sweep(spec))
        assert [row["p"] for row in rows] == [0.2, 0.8]
        for row in rows:
            assert row["better"] in ("aa-mf-sic", "oracle-mmse", "tie", None)
