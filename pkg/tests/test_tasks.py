"""Synthetic task generation and the evaluation metrics."""

import warnings

import numpy as np
import pytest

from structattn import tasks as tk
from structattn.errors import DomainError, ShapeError, TaskError
from structattn.tensor import Tensor


class TestGenTask:
    def test_deterministic(self):
        for kind in tk.TASK_KINDS:
            a = tk.gen_task(kind, 16, 16, seed=5)
            b = tk.gen_task(kind, 16, 16, seed=5)
            assert np.array_equal(a.image.data, b.image.data)
            assert np.array_equal(a.target.data, b.target.data)

    def test_seed_changes_sample(self):
        a = tk.gen_task("depth", 16, 16, seed=1)
        b = tk.gen_task("depth", 16, 16, seed=2)
        assert not np.array_equal(a.image.data, b.image.data)

    def test_unknown_kind(self):
        with pytest.raises(TaskError, match="unknown task kind"):
            tk.gen_task("pose", 16, 16, seed=0)

    def test_extent_constraints(self):
        with pytest.raises(DomainError):
            tk.gen_task("depth", 6, 8, seed=0)
        with pytest.raises(DomainError):
            tk.gen_task("depth", 16, 18, seed=0)

    def test_depth_positive(self):
        s = tk.gen_task("depth", 16, 20, seed=3)
        assert s.image.dims == (3, 16, 20)
        assert s.target.dims == (1, 16, 20)
        assert np.all(s.target.data > 0.0)

    def test_normals_unit_norm(self):
        s = tk.gen_task("normals", 16, 16, seed=4)
        norms = np.sqrt(np.sum(s.target.data**2, axis=0))
        assert np.max(np.abs(norms - 1.0)) < 1e-12

    def test_segmentation_fields(self):
        s = tk.gen_task("segmentation", 16, 16, seed=6, classes=5)
        assert s.labels.shape == (16, 16)
        assert s.labels.min() >= 0 and s.labels.max() < 5
        # one-hot target rows match the label map
        assert np.array_equal(np.argmax(s.target.data, axis=0), s.labels)

    def test_segmentation_needs_two_classes(self):
        with pytest.raises(DomainError, match="classes"):
            tk.gen_task("segmentation", 16, 16, seed=0, classes=1)

    def test_class_codes_fixed_across_samples(self):
        # region identity must mean the same thing in every sample
        a = tk.gen_task("segmentation", 16, 16, seed=1, noise=0.0)
        b = tk.gen_task("segmentation", 16, 16, seed=2, noise=0.0)
        codes = tk.class_codes(4)
        for s in (a, b):
            for c in range(4):
                where = s.labels == c
                if not where.any():
                    continue
                pix = s.image.data[:, where]
                assert np.max(np.abs(pix - codes[c][:, None])) < 1e-12

    def test_class_codes_unit_and_separated(self):
        codes = tk.class_codes(4)
        assert np.allclose(np.sum(codes * codes, axis=1), 1.0)
        dots = codes @ codes.T
        np.fill_diagonal(dots, -1.0)
        assert dots.max() < 0.9


class TestLogitsToLabels:
    def test_argmax_with_ties_to_lowest(self):
        pred = np.zeros((3, 2, 2))
        pred[2, 0, 0] = 1.0
        labels = tk.logits_to_labels(Tensor(pred))
        assert labels[0, 0] == 2
        assert labels[1, 1] == 0  # tie resolves to class 0

    def test_rejects_bad_rank(self):
        with pytest.raises(ShapeError):
            tk.logits_to_labels(Tensor(np.zeros((2, 2))))


class TestEvalDepth:
    def test_perfect(self):
        gt = Tensor(np.full((1, 4, 4), 2.0))
        rep = tk.eval_depth(gt, gt)
        assert rep.values["abs_rel"] == 0.0
        assert rep.values["rms"] == 0.0
        assert rep.values["delta_1"] == 1.0
        assert rep.warning_count == 0

    def test_ratio_at_threshold_is_strict(self):
        # ratio exactly 1.25 fails delta_1 but passes delta_2
        gt = Tensor(np.full((1, 2, 2), 1.0))
        pred = Tensor(np.full((1, 2, 2), 1.25))
        rep = tk.eval_depth(pred, gt)
        assert rep.values["delta_1"] == 0.0
        assert rep.values["delta_2"] == 1.0
        assert rep.values["delta_3"] == 1.0
        assert abs(rep.values["abs_rel"] - 0.25) < 1e-12

    def test_scalar_loop(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(1.0, 3.0, size=(4, 5))
        pred = gt + rng.normal(0.0, 0.3, size=(4, 5))
        pred = np.maximum(pred, 0.1)
        mask = rng.uniform(size=(4, 5)) > 0.25
        rep = tk.eval_depth(pred, gt, mask)
        absrel = []
        sqrel = []
        sq = []
        logsq = []
        hits = [0, 0, 0]
        n = 0
        for i in range(4):
            for j in range(5):
                if not mask[i, j]:
                    continue
                n += 1
                d = pred[i, j] - gt[i, j]
                absrel.append(abs(d) / gt[i, j])
                sqrel.append(d * d / gt[i, j])
                sq.append(d * d)
                logsq.append((np.log10(pred[i, j]) - np.log10(gt[i, j])) ** 2)
                ratio = max(pred[i, j] / gt[i, j], gt[i, j] / pred[i, j])
                for t, thr in enumerate((1.25, 1.25**2, 1.25**3)):
                    hits[t] += ratio < thr
        assert abs(rep.values["abs_rel"] - np.mean(absrel)) < 1e-12
        assert abs(rep.values["sq_rel"] - np.mean(sqrel)) < 1e-12
        assert abs(rep.values["rms"] - np.sqrt(np.mean(sq))) < 1e-12
        assert abs(rep.values["log_rms"] - np.sqrt(np.mean(logsq))) < 1e-12
        for t in range(3):
            assert abs(rep.values[f"delta_{t + 1}"] - hits[t] / n) < 1e-12

    def test_clamps_nonpositive_predictions(self):
        gt = Tensor(np.full((1, 2, 2), 1.0))
        pred = np.full((1, 2, 2), 1.0)
        pred[0, 0, 0] = -2.0
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rep = tk.eval_depth(Tensor(pred), gt)
        assert rep.warning_count == 1
        assert len(caught) == 1
        assert np.isfinite(rep.values["log_rms"])

    def test_nonpositive_gt_rejected(self):
        gt = Tensor(np.zeros((1, 2, 2)))
        with pytest.raises(DomainError, match="positive"):
            tk.eval_depth(gt, gt)


class TestEvalSeg:
    def test_perfect(self):
        labels = np.arange(16).reshape(4, 4) % 3
        rep = tk.eval_seg(labels, labels, 3)
        assert rep.values["pix_acc"] == 1.0
        assert rep.values["mean_iou"] == 1.0

    def test_disjoint_single_classes(self):
        pred = np.zeros((3, 3), dtype=np.int64)
        gt = np.ones((3, 3), dtype=np.int64)
        rep = tk.eval_seg(pred, gt, 2)
        assert rep.values["pix_acc"] == 0.0
        assert rep.values["mean_iou"] == 0.0

    def test_hand_enumerated_confusion(self):
        # IoU 1/2 for class 0 and 2/3 for class 1 average to 7/12
        gt = np.array([[0, 0], [1, 1]])
        pred = np.array([[0, 1], [1, 1]])
        rep = tk.eval_seg(pred, gt, 2)
        assert abs(rep.values["pix_acc"] - 0.75) < 1e-12
        assert abs(rep.values["mean_iou"] - 7.0 / 12.0) < 1e-12

    def test_absent_class_excluded(self):
        gt = np.zeros((2, 2), dtype=np.int64)
        rep = tk.eval_seg(gt, gt, 4)
        assert rep.values["mean_iou"] == 1.0

    def test_label_out_of_range(self):
        gt = np.zeros((2, 2), dtype=np.int64)
        pred = np.full((2, 2), 5, dtype=np.int64)
        with pytest.raises(TaskError, match="predicted label 5"):
            tk.eval_seg(pred, gt, 4)

    def test_no_valid_pixels(self):
        gt = np.zeros((2, 2), dtype=np.int64)
        with pytest.raises(DomainError):
            tk.eval_seg(gt, gt, 2, np.zeros((2, 2)))

    def test_permutation_of_pixels_invariant(self):
        rng = np.random.default_rng(1)
        gt = rng.integers(0, 3, size=(4, 4))
        pred = rng.integers(0, 3, size=(4, 4))
        rep = tk.eval_seg(pred, gt, 3)
        perm = rng.permutation(16)
        rep2 = tk.eval_seg(pred.ravel()[perm].reshape(4, 4), gt.ravel()[perm].reshape(4, 4), 3)
        assert rep.values == rep2.values


class TestEvalNormals:
    def test_aligned(self):
        v = np.zeros((3, 3, 3))
        v[2] = 1.0
        rep = tk.eval_normals(Tensor(v), Tensor(v))
        assert rep.values["mean_angle"] == 0.0
        assert rep.values["frac_30_00"] == 1.0

    def test_thirty_degree_rotation(self):
        # exactly 30 degrees: strict threshold keeps frac<30 at zero
        th = np.radians(30.0)
        gt = np.zeros((3, 2, 2))
        gt[2] = 1.0
        pred = np.zeros((3, 2, 2))
        pred[0] = np.sin(th)
        pred[2] = np.cos(th)
        rep = tk.eval_normals(Tensor(pred), Tensor(gt))
        assert abs(rep.values["mean_angle"] - 30.0) < 1e-9
        assert abs(rep.values["median_angle"] - 30.0) < 1e-9
        assert rep.values["frac_22_50"] == 0.0
        assert rep.values["frac_30_00"] == 0.0

    def test_scalar_loop(self):
        rng = np.random.default_rng(2)
        gt = rng.normal(size=(3, 3, 4))
        gt /= np.sqrt(np.sum(gt * gt, axis=0))[None]
        pred = gt + 0.4 * rng.normal(size=(3, 3, 4))
        rep = tk.eval_normals(Tensor(pred), Tensor(gt))
        angles = []
        for i in range(3):
            for j in range(4):
                p = pred[:, i, j]
                g = gt[:, i, j]
                cos = np.dot(p, g) / (np.linalg.norm(p) * np.linalg.norm(g))
                angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
        angles = np.sort(angles)
        assert abs(rep.values["mean_angle"] - np.mean(angles)) < 1e-9
        assert abs(rep.values["median_angle"] - angles[(len(angles) - 1) // 2]) < 1e-9
        for name, thr in (("frac_11_25", 11.25), ("frac_22_50", 22.5), ("frac_30_00", 30.0)):
            assert abs(rep.values[name] - np.mean(angles < thr)) < 1e-12

    def test_zero_prediction_scores_ninety(self):
        gt = np.zeros((3, 2, 2))
        gt[2] = 1.0
        pred = np.zeros((3, 2, 2))
        pred[2, 0, 0] = 1.0  # one aligned pixel, three zero vectors
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rep = tk.eval_normals(Tensor(pred), Tensor(gt))
        assert rep.warning_count == 3
        assert len(caught) == 1
        assert abs(rep.values["mean_angle"] - (3 * 90.0) / 4) < 1e-12

    def test_zero_gt_rejected(self):
        pred = np.ones((3, 2, 2))
        with pytest.raises(DomainError, match="zero vector"):
            tk.eval_normals(Tensor(pred), Tensor(np.zeros((3, 2, 2))))

    def test_threshold_fractions_monotone(self):
        rng = np.random.default_rng(3)
        gt = rng.normal(size=(3, 4, 4))
        gt /= np.sqrt(np.sum(gt * gt, axis=0))[None]
        pred = gt + rng.normal(size=(3, 4, 4))
        rep = tk.eval_normals(Tensor(pred), Tensor(gt))
        assert (
            rep.values["frac_11_25"]
            <= rep.values["frac_22_50"]
            <= rep.values["frac_30_00"]
        )


class TestMetricReport:
    def test_column_order(self):
        assert tk.metric_columns("segmentation") == ("pix_acc", "mean_iou")
        assert tk.metric_columns("depth")[0] == "abs_rel"
        with pytest.raises(TaskError):
            tk.metric_columns("pose")

    def test_row_follows_columns(self):
        rep = tk.eval_seg(np.zeros((2, 2)), np.zeros((2, 2)), 2)
        assert rep.row() == [rep.values["pix_acc"], rep.values["mean_iou"]]

    def test_head_channels(self):
        assert tk.head_channels_for("depth") == 1
        assert tk.head_channels_for("segmentation", 6) == 6
        assert tk.head_channels_for("normals") == 3
        with pytest.raises(TaskError):
            tk.head_channels_for("pose")
