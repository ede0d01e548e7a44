import csv

import numpy as np
import pytest

from scops.evaluation import (
    BboxNorm,
    EvaluationError,
    InterOcularNorm,
    MetricRow,
    assignment_purity,
    fit_landmark_regressor,
    foreground_iou,
    landmark_error,
    write_metrics_csv,
)


class TestRegressor:
    def test_identity_mapping_has_negligible_train_error(self):
        # exact-recovery claims are properties of the ridge -> 0 limit
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, (40, 6))
        fit = fit_landmark_regressor(pts, pts, ridge=0.0)
        assert np.abs(fit.predict(pts) - pts).max() < 1e-8

    def test_recovers_exact_affine_map(self):
        rng = np.random.default_rng(1)
        centers = rng.uniform(0, 1, (60, 8))
        coef = rng.normal(size=(8, 6))
        bias = rng.normal(size=6)
        landmarks = centers @ coef + bias
        fit = fit_landmark_regressor(centers[:40], landmarks[:40], ridge=0.0)
        assert np.abs(fit.predict(centers[40:]) - landmarks[40:]).max() < 1e-6

    def test_default_ridge_bias_is_small(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(0, 1, (40, 6))
        fit = fit_landmark_regressor(pts, pts)  # default ridge 1e-6
        assert np.abs(fit.predict(pts) - pts).max() < 1e-5

    def test_too_few_samples_rejected(self):
        x = np.random.default_rng(2).uniform(0, 1, (7, 6))  # need > 2K+1 = 7
        y = x.copy()
        with pytest.raises(EvaluationError):
            fit_landmark_regressor(x, y)

    def test_nan_rows_rejected(self):
        x = np.random.default_rng(3).uniform(0, 1, (20, 4))
        y = x.copy()
        x[3, 1] = np.nan
        with pytest.raises(EvaluationError):
            fit_landmark_regressor(x, y)

    def test_rank_deficient_with_zero_ridge_advises_ridge(self):
        rng = np.random.default_rng(4)
        col = rng.uniform(0, 1, (30, 1))
        x = np.repeat(col, 4, axis=1)  # rank 1 design
        y = rng.uniform(0, 1, (30, 2))
        with pytest.raises(EvaluationError, match="ridge"):
            fit_landmark_regressor(x, y, ridge=0.0)
        fit = fit_landmark_regressor(x, y, ridge=1e-6)
        assert np.isfinite(fit.coefficients).all()

    def test_bias_column_never_hurts_training_error(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            x = rng.uniform(0, 1, (30, 4))
            y = rng.uniform(0, 1, (30, 4)) + 0.3
            with_bias = fit_landmark_regressor(x, y, include_bias=True)
            without = fit_landmark_regressor(x, y, include_bias=False)
            err_b = np.linalg.norm(with_bias.predict(x) - y)
            err_n = np.linalg.norm(without.predict(x) - y)
            assert err_b <= err_n + 1e-9


class TestLandmarkError:
    def test_perfect_prediction_is_zero(self):
        g = np.array([[0.3, 0.3], [0.3, 0.7], [0.5, 0.5]])
        assert landmark_error(g, g, InterOcularNorm(0, 1)) == 0.0

    def test_offset_by_inter_ocular_distance_is_100_percent(self):
        g = np.array([[0.3, 0.3], [0.3, 0.7]])
        d = np.linalg.norm(g[0] - g[1])
        p = g + np.array([[0.0, d], [0.0, d]])
        assert landmark_error(p, g, InterOcularNorm(0, 1)) == pytest.approx(100.0)

    def test_coincident_eyes_rejected(self):
        g = np.array([[0.3, 0.3], [0.3, 0.3]])
        with pytest.raises(EvaluationError):
            landmark_error(g, g, InterOcularNorm(0, 1))

    def test_similarity_invariance_inter_ocular(self):
        rng = np.random.default_rng(6)
        g = rng.uniform(0.2, 0.8, (5, 2))
        p = g + rng.normal(0, 0.02, (5, 2))
        base = landmark_error(p, g, InterOcularNorm(0, 1))
        theta, s, t = 0.7, 1.9, np.array([0.3, -0.1])
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        moved = landmark_error(p @ rot.T * s + t, g @ rot.T * s + t, InterOcularNorm(0, 1))
        assert moved == pytest.approx(base, rel=1e-9)

    def test_bbox_per_axis_convention(self):
        g = np.array([[0.5, 0.5]])
        p = np.array([[0.7, 0.5]])  # u offset by 0.2
        err = landmark_error(p, g, BboxNorm(width=0.5, height=0.4))
        assert err == pytest.approx(100 * 0.2 / 0.4)
        err_diag = landmark_error(p, g, BboxNorm(width=0.3, height=0.4, mode="diagonal"))
        assert err_diag == pytest.approx(100 * 0.2 / 0.5)

    def test_bad_norm_specs(self):
        with pytest.raises(EvaluationError):
            BboxNorm(width=0.0, height=0.5)
        with pytest.raises(EvaluationError):
            BboxNorm(width=0.5, height=0.5, mode="bogus")
        with pytest.raises(EvaluationError):
            landmark_error(np.zeros((2, 2)), np.zeros((2, 2)), norm="bogus")


class TestForegroundIou:
    def test_identical_masks(self):
        m = np.zeros((6, 6), int)
        m[1:4, 2:5] = 1
        assert foreground_iou(m, m > 0) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((6, 6), int)
        a[:2] = 1
        b = np.zeros((6, 6), bool)
        b[4:] = True
        assert foreground_iou(a, b) == 0.0

    def test_half_overlap_of_equal_area_masks_is_one_third(self):
        a = np.zeros((4, 4), int)
        a[:2] = 1  # rows 0-1
        b = np.zeros((4, 4), bool)
        b[1:3] = True  # rows 1-2
        assert foreground_iou(a, b) == pytest.approx(1 / 3)

    def test_prediction_covering_half_of_gt(self):
        gt = np.zeros((4, 4), bool)
        gt[:2] = True
        pred = np.zeros((4, 4), int)
        pred[0] = 1  # half of gt, no false positives
        assert foreground_iou(pred, gt) == pytest.approx(0.5)

    def test_empty_vs_empty_is_one(self):
        assert foreground_iou(np.zeros((4, 4), int), np.zeros((4, 4), bool)) == 1.0

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.integers(0, 2, (8, 8))
            b = rng.integers(0, 2, (8, 8)).astype(bool)
            v = foreground_iou(a, b)
            assert 0.0 <= v <= 1.0
            assert v == foreground_iou(b.astype(int), a > 0)
            if v == 1.0:
                assert np.array_equal(a > 0, b)

    def test_size_mismatch(self):
        with pytest.raises(EvaluationError):
            foreground_iou(np.zeros((4, 4), int), np.zeros((5, 5), bool))


class TestPurity:
    def test_perfect_assignment(self):
        gt = np.zeros((6, 6), int)
        gt[:3, :3] = 1
        gt[3:, 3:] = 2
        assert assignment_purity([gt], [gt], 2, 2) == 1.0

    def test_permuted_labels_still_pure(self):
        gt = np.zeros((6, 6), int)
        gt[:3, :3] = 1
        gt[3:, 3:] = 2
        pred = np.where(gt == 1, 2, np.where(gt == 2, 1, 0))
        assert assignment_purity([pred], [gt], 2, 2) == 1.0

    def test_mixed_assignment_is_fractional(self):
        gt = np.zeros((4, 4), int)
        gt[:2] = 1
        gt[2:] = 2
        pred = np.ones((4, 4), int)  # one part covers both gt parts
        assert assignment_purity([pred], [gt], 2, 2) == pytest.approx(0.5)

    def test_no_overlap_gives_zero(self):
        assert assignment_purity([np.zeros((4, 4), int)], [np.ones((4, 4), int)], 2, 2) == 0.0


def test_metrics_csv_schema(tmp_path):
    rows = [
        MetricRow("test", "scops", 3, "foreground_iou", 0.71, 50),
        MetricRow("test", "dff", 3, "foreground_iou", 0.55, 50, n_excluded=2),
    ]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    with path.open() as fh:
        reader = list(csv.reader(fh))
    assert reader[0] == ["split", "method", "K", "metric", "value", "n_images", "n_excluded"]
    assert reader[1][:4] == ["test", "scops", "3", "foreground_iou"]
    assert float(reader[1][4]) == pytest.approx(0.71)
    assert reader[2][6] == "2"
