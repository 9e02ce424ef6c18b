import json

import numpy as np
import pytest

from conftest import make_volume, write_corpus
from oracles import best_balanced_accuracy_midpoints
from relict.engine import RankingRecord
from relict.errors import (
    DegenerateLabelsError,
    IncompleteRatingsError,
    InputError,
    IoError,
)
from relict.evaluation import (
    RatingRecord,
    ReferenceLabel,
    agreement_stats,
    aggregate_ratings,
    emit_report,
    pair_id_for,
    preselect_pairs,
    read_ratings_jsonl,
    read_reference_labels_json,
    append_rating_jsonl,
    sweep_thresholds,
    write_reference_labels_json,
)
from relict.volio import load_corpus


def rating(pair, rater, score, round_no=1):
    return RatingRecord(pair_id=pair, rater_id=rater, score=score, round=round_no)


def label(pair, kind, provenance="consensus_round_1"):
    return ReferenceLabel(pair_id=pair, label=kind, provenance=provenance)


class TestPreselect:
    def test_exact_copy_wins(self, tmp_path, rng):
        t_vols = {
            f"t{i}": make_volume(rng.random((4, 4, 4)), vol_id=f"t{i}") for i in range(3)
        }
        s_vols = {"s": make_volume(t_vols["t1"].voxels, vol_id="s")}
        training = load_corpus(write_corpus(tmp_path / "t", "training", t_vols))
        synthetic = load_corpus(write_corpus(tmp_path / "s", "synthetic", s_vols))
        assert preselect_pairs(training, synthetic) == [("s", "t1")]

    def test_hand_computed_argmin(self, tmp_path):
        t_vols = {
            "t1": make_volume(np.full((3, 1, 1), 2.0), vol_id="t1"),
            "t2": make_volume(np.full((3, 1, 1), 0.5), vol_id="t2"),
            "t3": make_volume(np.full((3, 1, 1), 5.0), vol_id="t3"),
        }
        s_vols = {"s": make_volume(np.zeros((3, 1, 1)), vol_id="s")}
        training = load_corpus(write_corpus(tmp_path / "t", "training", t_vols))
        synthetic = load_corpus(write_corpus(tmp_path / "s", "synthetic", s_vols))
        assert preselect_pairs(training, synthetic) == [("s", "t2")]

    def test_tie_breaks_to_smaller_id(self, tmp_path):
        t_vols = {
            "tb": make_volume(np.full((3, 1, 1), 1.0), vol_id="tb"),
            "ta": make_volume(np.full((3, 1, 1), -1.0), vol_id="ta"),
        }
        s_vols = {"s": make_volume(np.zeros((3, 1, 1)), vol_id="s")}
        training = load_corpus(write_corpus(tmp_path / "t", "training", t_vols))
        synthetic = load_corpus(write_corpus(tmp_path / "s", "synthetic", s_vols))
        assert preselect_pairs(training, synthetic) == [("s", "ta")]


class TestAggregateRatings:
    def test_round1_agreement(self):
        labels = aggregate_ratings([rating("p", "r1", 4), rating("p", "r2", 4)])
        assert labels == [label("p", "replica")]

    def test_round1_not_replica(self):
        labels = aggregate_ratings([rating("p", "r1", 1), rating("p", "r2", 2)])
        assert labels == [label("p", "not_replica")]

    def test_round2_resolution(self):
        labels = aggregate_ratings(
            [
                rating("p", "r1", 3),
                rating("p", "r2", 2),
                rating("p", "r1", 3, round_no=2),
                rating("p", "r2", 3, round_no=2),
            ]
        )
        assert labels == [label("p", "replica", "consensus_round_2")]

    def test_persistent_disagreement_unresolved(self):
        labels = aggregate_ratings(
            [
                rating("p", "r1", 3),
                rating("p", "r2", 2),
                rating("p", "r1", 3, round_no=2),
                rating("p", "r2", 2, round_no=2),
            ]
        )
        assert labels == [label("p", "unresolved", "unresolved")]

    def test_missing_round1_coverage(self):
        with pytest.raises(IncompleteRatingsError):
            aggregate_ratings(
                [rating("p", "r1", 4), rating("p", "r2", 4), rating("q", "r1", 1)]
            )

    def test_missing_round2_after_disagreement(self):
        with pytest.raises(IncompleteRatingsError):
            aggregate_ratings([rating("p", "r1", 3), rating("p", "r2", 2)])

    def test_wrong_rater_count(self):
        with pytest.raises(IncompleteRatingsError):
            aggregate_ratings([rating("p", "r1", 4)])
        with pytest.raises(IncompleteRatingsError):
            aggregate_ratings(
                [rating("p", "r1", 4), rating("p", "r2", 4), rating("p", "r3", 4)]
            )

    def test_duplicate_rating_rejected(self):
        with pytest.raises(InputError, match="duplicate"):
            aggregate_ratings([rating("p", "r1", 4), rating("p", "r1", 3)])

    def test_rater_order_invariance(self):
        records = [
            rating("p", "r1", 3),
            rating("p", "r2", 2),
            rating("p", "r1", 4, round_no=2),
            rating("p", "r2", 4, round_no=2),
            rating("q", "r1", 1),
            rating("q", "r2", 1),
        ]
        swapped = [
            RatingRecord(r.pair_id, {"r1": "r2", "r2": "r1"}[r.rater_id], r.score, r.round)
            for r in records
        ]
        assert aggregate_ratings(records) == aggregate_ratings(swapped)

    def test_score_range_validated(self):
        with pytest.raises(InputError):
            rating("p", "r1", 5)
        with pytest.raises(InputError):
            rating("p", "r1", 0)


class TestAgreementStats:
    def test_identical_scores(self):
        ratings = [rating("p1", "r1", 4), rating("p1", "r2", 4)]
        stats = agreement_stats(ratings)
        assert stats["percent_agreement"] == 1.0

    def test_forty_six_of_fifty(self):
        ratings = []
        for i in range(50):
            pair = f"p{i:02d}"
            ratings.append(rating(pair, "r1", 4))
            # 4 disagreements: rater 2 says "not replica" on the first 4 pairs
            ratings.append(rating(pair, "r2", 1 if i < 4 else 3))
        stats = agreement_stats(ratings)
        assert stats["percent_agreement"] == pytest.approx(0.92)
        assert stats["pairs"] == 50

    def test_rater_medians(self):
        ratings = [
            rating("p1", "r1", 1),
            rating("p2", "r1", 1),
            rating("p3", "r1", 3),
            rating("p1", "r2", 4),
            rating("p2", "r2", 4),
            rating("p3", "r2", 4),
        ]
        stats = agreement_stats(ratings)
        assert stats["rater_medians"]["r1"] == 1.0
        assert stats["rater_medians"]["r2"] == 4.0


class TestSweepThresholds:
    def test_separable_case(self):
        values = {"p1": 0.10, "p2": 0.20, "p3": 0.80, "p4": 0.90}
        labels = [
            label("p1", "replica"),
            label("p2", "replica"),
            label("p3", "not_replica"),
            label("p4", "not_replica"),
        ]
        result = sweep_thresholds(values, labels, measure="rmse")
        assert result.optimal_balanced_accuracy == 1.0
        assert result.optimal_threshold == 0.21
        assert result.thresholds[0] == 0.10
        assert result.thresholds[-1] == 0.91
        for sens, spec, ba in zip(
            result.sensitivity, result.specificity, result.balanced_accuracy
        ):
            assert ba == (sens + spec) / 2

    def test_identical_values_flat_curve(self):
        values = {"p1": 0.5, "p2": 0.5, "p3": 0.5}
        labels = [
            label("p1", "replica"),
            label("p2", "not_replica"),
            label("p3", "not_replica"),
        ]
        result = sweep_thresholds(values, labels)
        assert all(ba == 0.5 for ba in result.balanced_accuracy)

    def test_inverted_separation(self):
        values = {"p1": 0.8, "p2": 0.9, "p3": 0.1, "p4": 0.2}
        labels = [
            label("p1", "replica"),
            label("p2", "replica"),
            label("p3", "not_replica"),
            label("p4", "not_replica"),
        ]
        result = sweep_thresholds(values, labels)
        assert result.optimal_balanced_accuracy == 0.5

    def test_unresolved_excluded_and_counted(self):
        values = {"p1": 0.1, "p2": 0.9, "p3": 0.5}
        labels = [
            label("p1", "replica"),
            label("p2", "not_replica"),
            label("p3", "unresolved", "unresolved"),
        ]
        result = sweep_thresholds(values, labels)
        assert result.excluded_unresolved == 1
        assert result.optimal_balanced_accuracy == 1.0

    def test_single_class_rejected(self):
        values = {"p1": 0.1, "p2": 0.2}
        labels = [label("p1", "replica"), label("p2", "replica")]
        with pytest.raises(DegenerateLabelsError):
            sweep_thresholds(values, labels)

    def test_missing_value_rejected(self):
        labels = [label("p1", "replica"), label("p2", "not_replica")]
        with pytest.raises(InputError):
            sweep_thresholds({"p1": 0.1}, labels)

    def test_grid_matches_midpoint_oracle_for_on_grid_values(self, rng):
        for _ in range(20):
            size = int(rng.integers(4, 30))
            vals = rng.integers(0, 200, size=size) / 100.0
            truth = rng.random(size) < 0.5
            if truth.all() or not truth.any():
                continue
            values = {f"p{i}": float(v) for i, v in enumerate(vals)}
            labels = [
                label(f"p{i}", "replica" if truth[i] else "not_replica")
                for i in range(size)
            ]
            result = sweep_thresholds(values, labels)
            oracle = best_balanced_accuracy_midpoints(vals, truth)
            assert result.optimal_balanced_accuracy == pytest.approx(oracle, abs=1e-12)

    def test_offset_invariance(self, rng):
        # values off the grid by 0.003 so strict comparisons are stable
        vals = rng.integers(0, 100, size=12) / 100.0 + 0.003
        truth = np.array([True] * 6 + [False] * 6)
        values_a = {f"p{i}": float(v) for i, v in enumerate(vals)}
        values_b = {f"p{i}": float(v + 1.0) for i, v in enumerate(vals)}
        labels = [
            label(f"p{i}", "replica" if truth[i] else "not_replica")
            for i in range(12)
        ]
        a = sweep_thresholds(values_a, labels)
        b = sweep_thresholds(values_b, labels)
        assert a.optimal_balanced_accuracy == b.optimal_balanced_accuracy


class TestEmitReport:
    def _record(self, synthetic_id, measure, value):
        return RankingRecord(
            synthetic_id=synthetic_id,
            measure=measure,
            closest_training_id="t",
            closest_distance=value,
            mean_of_n_closest=1.0,
            distance_ratio=value,
            absolute_value=None,
            decision="undecided",
        )

    def test_empty_sweeps(self, tmp_path):
        written = emit_report([], [], None, tmp_path / "report")
        names = {p.name for p in written}
        assert names == {"summary.json"}
        summary = json.loads((tmp_path / "report" / "summary.json").read_text())
        assert summary["measures"] == {}

    def test_curve_file_matches_sweep(self, tmp_path):
        values = {"p1": 0.1, "p2": 0.9}
        labels = [label("p1", "replica"), label("p2", "not_replica")]
        sweep = sweep_thresholds(values, labels, measure="rmse")
        records = [self._record("p1", "rmse", 0.1), self._record("p2", "rmse", 0.9)]
        emit_report(records, [sweep], None, tmp_path, labels=labels)
        lines = (tmp_path / "sweep_rmse.csv").read_text().splitlines()
        assert lines[0] == "threshold,sensitivity,specificity,balanced_accuracy"
        assert len(lines) == 1 + len(sweep.thresholds)
        assert (tmp_path / "scatter.svg").exists()

    def test_runtime_formatting(self, tmp_path):
        values = {"p1": 0.1, "p2": 0.9}
        labels = [label("p1", "replica"), label("p2", "not_replica")]
        sweep = sweep_thresholds(values, labels, measure="mae")
        emit_report([], [sweep], None, tmp_path, runtimes={"mae": 960.0})
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["measures"]["mae"]["runtime"] == "16 mins"

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file.txt"
        blocker.write_text("x")
        with pytest.raises(IoError):
            emit_report([], [], None, blocker / "sub")


class TestRatingsIo:
    def test_jsonl_round_trip(self, tmp_path):
        path = tmp_path / "ratings.jsonl"
        records = [rating("p1", "r1", 4), rating("p1", "r2", 2, round_no=1)]
        for r in records:
            append_rating_jsonl(path, r)
        assert read_ratings_jsonl(path) == records

    def test_reference_labels_round_trip(self, tmp_path):
        path = tmp_path / "labels.json"
        labels = [label("p1", "replica"), label("p2", "unresolved", "unresolved")]
        write_reference_labels_json(labels, path)
        loaded = read_reference_labels_json(path)
        assert sorted(loaded, key=lambda l: l.pair_id) == labels

    def test_pair_id_format(self):
        assert pair_id_for("s1", "t9") == "s1::t9"

    def test_torn_tail_line_ignored(self, tmp_path):
        path = tmp_path / "ratings.jsonl"
        append_rating_jsonl(path, rating("p1", "r1", 4))
        with open(path, "a") as fh:
            fh.write('{"pair_id": "p2", "rater')  # append in flight
        records = read_ratings_jsonl(path)
        assert len(records) == 1

    def test_malformed_middle_line_raises(self, tmp_path):
        path = tmp_path / "ratings.jsonl"
        path.write_text('not json\n{"pair_id": "p", "rater_id": "r", "score": 1, "round": 1}\n')
        with pytest.raises(Exception):
            read_ratings_jsonl(path)
