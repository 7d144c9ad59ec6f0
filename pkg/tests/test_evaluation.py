"""ROC/pAUC oracles, accuracy tables, and embedding figures."""

import csv

import numpy as np
import pytest

from gandetect.acgan import GANConfig, train_acgan
from gandetect.classifier import TrainConfig, train_classifier
from gandetect.data import LabeledImage, make_splits
from gandetect.errors import ValidationError
from gandetect.evaluation import (
    ROCCurve,
    accuracy_report,
    auc,
    group_centroid_distance,
    pauc,
    roc_curve,
    tsne_embed,
    tsne_layer_figure,
)


def brute_force_points(anomalous, clean, orientation):
    """Independent threshold enumeration: one point per distinct score."""
    a = np.asarray(anomalous, dtype=float)
    c = np.asarray(clean, dtype=float)
    if orientation == "low":
        a, c = -a, -c
    pts = [(0.0, 0.0)]
    for t in sorted(set(a.tolist()) | set(c.tolist()), reverse=True):
        pts.append((float(np.mean(c >= t)), float(np.mean(a >= t))))
    return pts


class TestROCCurve:
    def test_matches_brute_force_on_hand_case(self):
        anomalous = [0.9, 0.8, 0.8, 0.4, 0.1]
        clean = [0.7, 0.5, 0.4, 0.2, 0.2]
        curve = roc_curve(anomalous, clean, orientation="high")
        expected = brute_force_points(anomalous, clean, "high")
        assert [tuple(p) for p in curve.points] == expected

    def test_matches_brute_force_ten_point_case_with_ties(self):
        anomalous = [3.0, 3.0, 2.5, 2.0, 1.0, 1.0, 0.5, 0.5, 0.5, -1.0]
        clean = [2.5, 2.0, 2.0, 1.5, 1.0, 0.0, 0.0, -0.5, -1.0, -2.0]
        for orientation in ("high", "low"):
            curve = roc_curve(anomalous, clean, orientation=orientation)
            expected = brute_force_points(anomalous, clean, orientation)
            assert [tuple(p) for p in curve.points] == expected

    def test_endpoints(self):
        curve = roc_curve([1.0, 2.0], [0.5, 1.5], orientation="high")
        assert tuple(curve.points[0]) == (0.0, 0.0)
        assert tuple(curve.points[-1]) == (1.0, 1.0)

    def test_monotone_nondecreasing(self):
        rng = np.random.default_rng(0)
        curve = roc_curve(rng.normal(1, 1, 50), rng.normal(0, 1, 60), orientation="high")
        assert np.all(np.diff(curve.fpr) >= 0)
        assert np.all(np.diff(curve.tpr) >= 0)

    def test_perfect_separation_passes_through_corner(self):
        curve = roc_curve([2.0, 3.0, 4.0], [0.0, 0.5, 1.0], orientation="high")
        assert any(f == 0.0 and t == 1.0 for f, t in curve.points)

    def test_identical_constant_scores_give_diagonal(self):
        curve = roc_curve([0.5] * 4, [0.5] * 6, orientation="high")
        assert [tuple(p) for p in curve.points] == [(0.0, 0.0), (1.0, 1.0)]

    def test_negation_plus_orientation_flip_is_identical(self):
        rng = np.random.default_rng(1)
        a = rng.normal(1, 2, 30)
        c = rng.normal(0, 1, 40)
        hi = roc_curve(a, c, orientation="high")
        lo = roc_curve(-a, -c, orientation="low")
        assert np.array_equal(hi.points, lo.points)

    def test_minus_inf_sentinel_ranks_most_anomalous_in_low_mode(self):
        curve = roc_curve([-np.inf, -5.0], [0.0, 1.0], orientation="low")
        assert any(f == 0.0 and t == 0.5 for f, t in curve.points)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            roc_curve([], [1.0], orientation="high")
        with pytest.raises(ValidationError):
            roc_curve([1.0], [], orientation="high")

    def test_nan_rejected(self):
        with pytest.raises(ValidationError):
            roc_curve([np.nan], [1.0], orientation="high")

    def test_unknown_orientation_rejected(self):
        with pytest.raises(ValidationError):
            roc_curve([1.0], [0.0], orientation="sideways")


class TestPAUC:
    def test_perfect_detector_scores_fpr_budget(self):
        curve = roc_curve([2.0, 3.0, 4.0], [0.0, 0.5, 1.0], orientation="high")
        assert pauc(curve, 0.2) == pytest.approx(0.2, abs=1e-9)

    def test_chance_detector_scores_half_budget_squared(self):
        curve = roc_curve([0.5] * 5, [0.5] * 5, orientation="high")
        assert pauc(curve, 0.2) == pytest.approx(0.02, abs=1e-9)

    def test_full_range_equals_auc(self):
        rng = np.random.default_rng(2)
        curve = roc_curve(rng.normal(1, 1, 40), rng.normal(0, 1, 40), orientation="high")
        assert pauc(curve, 1.0) == auc(curve)

    def test_monotone_in_fpr_max(self):
        rng = np.random.default_rng(3)
        curve = roc_curve(rng.normal(0.5, 1, 50), rng.normal(0, 1, 50), orientation="high")
        values = [pauc(curve, f) for f in (0.05, 0.1, 0.2, 0.5, 1.0)]
        assert all(lo <= hi + 1e-12 for lo, hi in zip(values, values[1:]))

    def test_hand_computed_trapezoid(self):
        # One anomalous at 2.0, one clean at 1.0: curve (0,0)->(0,1)->(1,1).
        curve = roc_curve([2.0], [1.0], orientation="high")
        assert pauc(curve, 0.5) == pytest.approx(0.5, abs=1e-12)
        # Boundary interpolation inside a sloped segment.
        diag = ROCCurve(points=np.array([[0.0, 0.0], [1.0, 1.0]]), orientation="high")
        assert pauc(diag, 0.3) == pytest.approx(0.045, abs=1e-12)

    def test_invalid_budget_rejected(self):
        curve = roc_curve([1.0], [0.0], orientation="high")
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValidationError):
                pauc(curve, bad)


class TestAccuracyReport:
    def test_all_correct(self):
        report = accuracy_report([1, 2, 3], [1, 2, 3])
        assert report.accuracy == 1.0
        assert report.count == 3

    def test_none_correct(self):
        assert accuracy_report([1, 2], [2, 1]).accuracy == 0.0

    def test_fraction_and_per_class(self):
        report = accuracy_report([0, 0, 1, 1], [0, 1, 1, 1])
        assert report.accuracy == pytest.approx(0.75)
        assert report.per_class == {0: 0.5, 1: 1.0}

    def test_misaligned_rejected(self):
        with pytest.raises(ValidationError):
            accuracy_report([1, 2, 3], [1, 2])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            accuracy_report([], [])


class TestTSNE:
    def test_separated_clusters_stay_separated(self):
        rng = np.random.default_rng(4)
        centers = np.array([[0.0] * 10, [30.0] * 10, [-30.0] + [0.0] * 9])
        feats = np.vstack([rng.normal(c, 0.5, size=(30, 10)) for c in centers])
        labels = np.repeat([0, 1, 2], 30)
        coords = tsne_embed(feats, seed=0)
        from sklearn.metrics import silhouette_score

        assert silhouette_score(coords, labels) > 0.5

    def test_same_seed_same_embedding(self):
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(40, 8))
        a = tsne_embed(feats, seed=7, iterations=260)
        b = tsne_embed(feats, seed=7, iterations=260)
        assert np.array_equal(a, b)

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValidationError):
            tsne_embed(np.zeros((3, 4)), seed=0)

    def test_centroid_distance(self):
        coords = np.array([[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]])
        names = ["a", "a", "b", "b"]
        assert group_centroid_distance(coords, names, "a", "b") == pytest.approx(10.0)
        with pytest.raises(ValidationError):
            group_centroid_distance(coords, names, "a", "missing")


@pytest.fixture(scope="module")
def tiny_victim_and_gan():
    rng = np.random.default_rng(11)
    n = 60
    xs = np.zeros((2 * n, 1, 8, 8), dtype=np.float32)
    xs[:n, :, :4, :4] = 1.0
    xs[n:, :, 4:, 4:] = 1.0
    xs += rng.normal(0, 0.05, xs.shape).astype(np.float32)
    xs = np.clip(xs, 0.0, 1.0)
    ys = np.repeat([0, 1], n).astype(np.int64)
    samples = [LabeledImage(x, int(y)) for x, y in zip(xs, ys)]
    split = make_splits(samples, (0.8, 0.1, 0.1), seed=0)
    model = train_classifier(
        split, TrainConfig(epochs=6, batch_size=16, channels=(4, 8, 8, 8), fc_width=16), seed=0)
    gan = train_acgan(xs, ys, 2,
                      GANConfig(epochs=2, batch_size=32, preset="mlp", mlp_hidden=64,
                                latent_dim=8),
                      seed=0, modeled_layer=0)
    return model, gan, xs, ys


class TestLayerFigure:
    def test_writes_figure_and_coordinates(self, tiny_victim_and_gan, tmp_path):
        model, gan, xs, ys = tiny_victim_and_gan
        groups = {
            "clean_source": xs[ys == 0][:20],
            "clean_target": xs[ys == 1][:20],
            "attacked": np.clip(xs[ys == 0][20:40] + 0.05, 0, 1),
        }
        written = tsne_layer_figure(model, groups, {0: gan}, layers=[0], out_dir=tmp_path,
                                    dataset_name="toy", seed=3, perplexity=10.0, iterations=260)
        fig = written[0]["figure"]
        coords = written[0]["coordinates"]
        assert fig.name == "toy_0_tsne.png" and fig.exists() and fig.stat().st_size > 0
        with open(coords) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["group", "x", "y"]
        assert len(rows) == 1 + 60
        assert {r[0] for r in rows[1:]} == set(groups)
        float(rows[1][1])  # coordinates parse back

    def test_missing_gan_for_layer_rejected(self, tiny_victim_and_gan, tmp_path):
        model, gan, xs, ys = tiny_victim_and_gan
        groups = {"clean_source": xs[:5], "clean_target": xs[-5:], "attacked": xs[5:10]}
        with pytest.raises(ValidationError):
            tsne_layer_figure(model, groups, {0: gan}, layers=["penultimate"],
                              out_dir=tmp_path, dataset_name="toy", seed=0)

    def test_empty_group_rejected(self, tiny_victim_and_gan, tmp_path):
        model, gan, xs, ys = tiny_victim_and_gan
        groups = {"clean_source": xs[:5], "clean_target": xs[:0], "attacked": xs[5:10]}
        with pytest.raises(ValidationError):
            tsne_layer_figure(model, groups, {0: gan}, layers=[0],
                              out_dir=tmp_path, dataset_name="toy", seed=0)
