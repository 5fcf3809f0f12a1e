import math

import numpy as np
import pytest

from first_shot_asd.metrics import (EvalReport, MetricsError, ScoredClip, auc, clip_id, combine, evaluate,
                                    harmonic_mean, objective, pauc, read_labels, read_scores, roc_points,
                                    write_labels, write_scores)


def scored(anomalies, normals):
    clips = [ScoredClip(f"a{i:03d}", float(s), "anomaly") for i, s in enumerate(anomalies)]
    clips += [ScoredClip(f"n{i:03d}", float(s), "normal") for i, s in enumerate(normals)]
    return clips


def brute_force_auc(anomalies, normals):
    total = 0.0
    for a in anomalies:
        for n in normals:
            total += 1.0 if a > n else 0.5 if a == n else 0.0
    return total / (len(anomalies) * len(normals))


EXAMPLE = scored([0.9, 0.8], [0.1, 0.85])


class TestAuc:
    def test_example(self):
        assert auc(EXAMPLE) == 0.75

    def test_perfect_separation(self):
        assert auc(scored([5, 6, 7], [1, 2, 3])) == 1.0

    def test_all_equal(self):
        assert auc(scored([1, 1], [1, 1, 1])) == 0.5

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            n_pos, n_neg = int(rng.integers(1, 100)), int(rng.integers(1, 100))
            if rng.random() < 0.5:
                pos, neg = rng.integers(0, 10, n_pos), rng.integers(0, 10, n_neg)
            else:
                pos, neg = rng.normal(0.5, 1, n_pos), rng.normal(0, 1, n_neg)
            clips = scored(pos, neg)
            assert auc(clips) == brute_force_auc(pos, neg)
            assert pauc(clips, 1.0) == auc(clips)

    def test_needs_both_classes(self):
        with pytest.raises(MetricsError, match="both classes"):
            auc(scored([1.0], []))

    def test_non_finite_score(self):
        with pytest.raises(MetricsError):
            ScoredClip("x", float("nan"), "normal")

    def test_unknown_label(self):
        with pytest.raises(MetricsError):
            ScoredClip("x", 1.0, "broken")


class TestPauc:
    def test_example(self):
        assert pauc(EXAMPLE, 0.5) == 0.5

    def test_p_one_equals_auc(self):
        assert pauc(EXAMPLE, 1.0) == auc(EXAMPLE)

    def test_perfect_separation(self):
        clips = scored([5, 6, 7], np.arange(20))
        for p in (0.05, 0.1, 0.5, 1.0):
            assert pauc(clips, p) == 1.0

    def test_ties_broken_by_clip_id(self):
        clips = [ScoredClip("a", 1.0, "anomaly"), ScoredClip("n1", 1.0, "normal"), ScoredClip("n2", 1.0, "normal")]
        assert pauc(clips, 0.5) == 0.5

    def test_invalid_p(self):
        with pytest.raises(MetricsError):
            pauc(EXAMPLE, 0.0)
        with pytest.raises(MetricsError):
            pauc(EXAMPLE, 1.5)

    def test_p_too_small_for_normals(self):
        with pytest.raises(MetricsError, match="keeps no normals"):
            pauc(EXAMPLE, 0.1)


class TestScoreTransforms:
    def test_increasing_transform_keeps_both_metrics(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            pos, neg = rng.normal(0.5, 1, 30), rng.normal(0, 1, 40)
            clips = scored(pos, neg)
            moved = scored(np.exp(pos) * 3 + 1, np.exp(neg) * 3 + 1)
            assert auc(moved) == auc(clips)
            assert pauc(moved, 0.1) == pauc(clips, 0.1)

    def test_negated_scores_flip_auc(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            pos, neg = rng.integers(0, 6, 25), rng.integers(0, 6, 35)
            assert math.isclose(auc(scored(-pos, -neg)), 1.0 - auc(scored(pos, neg)), abs_tol=1e-12)


class TestObjective:
    def test_modes(self):
        assert combine(0.75, 0.5, "auc") == 0.75
        assert combine(0.75, 0.5, "pauc") == 0.5
        assert math.isclose(combine(0.75, 0.5, "arithmetic"), 0.625)
        assert math.isclose(combine(0.75, 0.5, "harmonic"), 0.6)

    def test_equal_values(self):
        for mode in ("auc", "pauc", "arithmetic", "harmonic"):
            assert math.isclose(combine(0.7, 0.7, mode), 0.7)

    def test_harmonic_of_zeros(self):
        assert combine(0.0, 0.0, "harmonic") == 0.0

    def test_unknown_mode(self):
        with pytest.raises(MetricsError):
            objective(EXAMPLE, mode="geometric")

    def test_objective_uses_p(self):
        assert math.isclose(objective(EXAMPLE, "harmonic", p=0.5), 0.6)

    def test_evaluate(self):
        report = evaluate(EXAMPLE, p=0.5, machine_type="fan")
        assert report == EvalReport(auc=0.75, pauc=0.5, p=0.5, n_pos=2, n_neg=2, objective=report.objective,
                                    mode="harmonic", machine_type="fan")
        assert math.isclose(report.objective, 0.6)


class TestAggregation:
    def test_harmonic_mean(self):
        assert math.isclose(harmonic_mean([0.5, 1.0]), 2 / 3)

    def test_zero_dominates(self):
        assert harmonic_mean([0.0, 0.9]) == 0.0

    def test_empty(self):
        with pytest.raises(MetricsError):
            harmonic_mean([])


class TestRocPoints:
    def test_endpoints_and_monotone(self):
        points = roc_points(EXAMPLE)
        assert points[0][:2] == (0.0, 0.0)
        assert points[-1][:2] == (1.0, 1.0)
        fprs = [p[0] for p in points]
        tprs = [p[1] for p in points]
        assert fprs == sorted(fprs) and tprs == sorted(tprs)

    def test_trapezoid_area_matches_auc(self, rng):
        clips = scored(rng.normal(1, 1, 30), rng.normal(0, 1, 40))
        points = roc_points(clips)
        area = sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0, _), (x1, y1, _) in zip(points, points[1:]))
        assert math.isclose(area, auc(clips), abs_tol=1e-12)


class TestFiles:
    def test_scores_keep_full_precision(self, tmp_path):
        rows = [("b.wav", 0.1 + 0.2), ("a.wav", -1e-300)]
        path = write_scores(tmp_path / "scores.csv", rows)
        assert path.read_text().splitlines()[0] == "clip_id,score"
        assert read_scores(path) == [("b.wav", 0.1 + 0.2, None), ("a.wav", -1e-300, None)]

    def test_scores_with_labels(self, tmp_path):
        path = write_scores(tmp_path / "s.csv", [("a", 1.0)], labels={"a": "anomaly"})
        assert read_scores(path) == [("a", 1.0, "anomaly")]

    def test_bad_score_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("clip_id,score\na,notanumber\n")
        with pytest.raises(MetricsError, match="line 2"):
            read_scores(path)

    def test_labels(self, tmp_path):
        path = write_labels(tmp_path / "labels.csv", [(clip_id("fan", "x.wav"), "fan", "normal"),
                                                      (clip_id("fan", "y.wav"), "fan", "anomaly")])
        assert read_labels(path) == {"fan/x.wav": ("normal", "fan"), "fan/y.wav": ("anomaly", "fan")}

    def test_labels_without_machine_column(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("clip_id,label\nx.wav,normal\n")
        assert read_labels(path) == {"x.wav": ("normal", None)}

    def test_duplicate_label(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("clip_id,label\nx.wav,normal\nx.wav,anomaly\n")
        with pytest.raises(MetricsError, match="Duplicate"):
            read_labels(path)

    def test_unknown_label_value(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("clip_id,label\nx.wav,broken\n")
        with pytest.raises(MetricsError, match="Unknown label"):
            read_labels(path)
