"""Synthetic dense-prediction tasks and their evaluation metrics.

Three toy pixel-wise tasks, each generated from a smooth random field so that
a small convolutional model can actually learn the image -> target mapping:

- depth: a positive height field; the image carries the field plus noise.
- segmentation: nearest-site label regions with per-class color codes.
- normals: unit surface normals of the height field.

Evaluators return a MetricReport with a fixed column order per task so
experiment CSVs stay stable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, TaskError
from .tensor import Tensor

TASK_KINDS = ("depth", "segmentation", "normals")

DEPTH_COLUMNS = ("abs_rel", "sq_rel", "rms", "log_rms", "delta_1", "delta_2", "delta_3")
SEG_COLUMNS = ("pix_acc", "mean_iou")
NORMAL_COLUMNS = ("mean_angle", "median_angle", "frac_11_25", "frac_22_50", "frac_30_00")

DEPTH_FLOOR = 1e-6
# angles this close to a threshold count as at it, not below it; keeps the
# exact-boundary rotation case stable under the arccos round trip
ANGLE_EPS = 1e-9


@dataclass(frozen=True)
class SyntheticSample:
    kind: str
    image: Tensor                 # [C, H, W]
    target: Tensor                # depth [1,H,W] / normals [3,H,W]; seg: label codes unused
    labels: np.ndarray | None     # segmentation only, int [H, W]
    valid_mask: np.ndarray        # bool [H, W]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _smooth_field(h, w, rng) -> np.ndarray:
    """Band-limited random field scaled to peak magnitude 1."""
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    g = np.zeros((h, w))
    for _ in range(4):
        fy = rng.integers(1, 4)
        fx = rng.integers(1, 4)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        g += amp * np.cos(2.0 * np.pi * (fy * yy / h + fx * xx / w) + phase)
    return g / np.max(np.abs(g))


SEG_BAND_FACTOR = 4.0


def seg_interference_bands(w: int) -> tuple[tuple[int, slice], ...]:
    """Fixed (channel, column band) pairs carrying extra low-frequency noise.

    The bands sit at the same columns in every sample, like banded sensor
    interference, and each hits a single color channel. Cleaning them up is
    therefore a question of where as much as of what: the other channels
    stay informative inside a band, and all channels outside it.
    """
    q = max(w // 8, 2)
    return (
        (0, slice(w // 4 - q // 2, w // 4 - q // 2 + q)),
        (1, slice(3 * w // 4 - q // 2, 3 * w // 4 - q // 2 + q)),
    )


def class_codes(classes: int) -> np.ndarray:
    """Fixed unit vectors in R^3 identifying each class, shared by every sample.

    Spherical Fibonacci directions: deterministic and well separated for any
    class count, so the image -> class mapping is consistent across samples
    and a model trained on some layouts generalizes to fresh ones.
    """
    i = np.arange(classes) + 0.5
    z = 1.0 - 2.0 * i / classes
    r = np.sqrt(1.0 - z * z)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def gen_task(
    kind: str, h: int, w: int, seed: int, classes: int = 4, noise: float = 0.35
) -> SyntheticSample:
    """Draw one sample. Same (kind, h, w, seed, ...) always gives the same sample."""
    if kind not in TASK_KINDS:
        raise TaskError(f"unknown task kind {kind!r}; expected one of {TASK_KINDS}")
    if h < 8 or w < 8 or h % 4 or w % 4:
        raise DomainError(f"extents must be multiples of 4 and >= 8, got {(h, w)}")
    rng = np.random.default_rng(seed)
    g = _smooth_field(h, w, rng)
    valid = np.ones((h, w), dtype=bool)

    if kind == "depth":
        depth = 1.5 + 0.5 * g
        image = np.stack(
            [
                g + 0.02 * rng.normal(size=(h, w)),
                0.5 * g * g + 0.02 * rng.normal(size=(h, w)),
                0.05 * rng.normal(size=(h, w)),
            ]
        )
        return SyntheticSample(kind, Tensor(image), Tensor(depth[None]), None, valid)

    if kind == "normals":
        height = 2.0 * g
        dy, dx = np.gradient(height)
        vec = np.stack([-dx, -dy, np.ones((h, w))])
        vec /= np.sqrt(np.sum(vec * vec, axis=0))[None]
        image = np.stack(
            [
                dx + 0.02 * rng.normal(size=(h, w)),
                dy + 0.02 * rng.normal(size=(h, w)),
                0.3 * g,
            ]
        )
        return SyntheticSample(kind, Tensor(image), Tensor(vec), None, valid)

    if classes < 2:
        raise DomainError(f"segmentation needs >= 2 classes, got {classes}")
    sites = rng.uniform(0.0, 1.0, size=(classes, 2)) * [h, w]
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d2 = (yy[None] - sites[:, 0, None, None]) ** 2 + (xx[None] - sites[:, 1, None, None]) ** 2
    labels = np.argmin(d2, axis=0).astype(np.int64)
    codes = class_codes(classes)
    image = codes[labels].transpose(2, 0, 1) + noise * rng.normal(size=(3, h, w))
    # smooth interference resists local averaging, so it travels with context
    for channel, cols in seg_interference_bands(w):
        width = cols.stop - cols.start
        image[channel, :, cols] += SEG_BAND_FACTOR * noise * _smooth_field(h, width, rng)
    onehot = np.zeros((classes, h, w))
    onehot[labels, yy, xx] = 1.0
    return SyntheticSample(kind, Tensor(image), Tensor(onehot), labels, valid)


def logits_to_labels(pred: Tensor) -> np.ndarray:
    """Argmax over channels; ties go to the lowest class index."""
    if len(pred.dims) != 3:
        raise ShapeError("prediction must be [K, H, W]", pred.dims)
    return np.argmax(pred.data, axis=0).astype(np.int64)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    kind: str
    values: dict[str, float]
    warning_count: int = 0

    @property
    def columns(self) -> tuple[str, ...]:
        return metric_columns(self.kind)

    def row(self) -> list[float]:
        return [self.values[c] for c in self.columns]


def metric_columns(kind: str) -> tuple[str, ...]:
    if kind == "depth":
        return DEPTH_COLUMNS
    if kind == "segmentation":
        return SEG_COLUMNS
    if kind == "normals":
        return NORMAL_COLUMNS
    raise TaskError(f"unknown task kind {kind!r}; expected one of {TASK_KINDS}")


def _as_map(x, channels, name) -> np.ndarray:
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if channels == 1 and arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != channels:
        raise ShapeError(f"{name} must be [{channels}, H, W]", arr.shape)
    return arr


def _valid_selector(valid_mask, hw) -> np.ndarray:
    if valid_mask is None:
        return np.ones(hw, dtype=bool)
    m = np.asarray(valid_mask)
    if m.shape != tuple(hw):
        raise ShapeError("mask extent disagrees with the maps", m.shape, hw)
    m = m != 0
    if not m.any():
        raise DomainError("no unmasked pixels to evaluate")
    return m


def eval_depth(pred, gt, valid_mask=None) -> MetricReport:
    """Standard depth error/accuracy set over unmasked pixels.

    Ground truth must be strictly positive where unmasked. Non-positive
    predictions are clamped to 1e-6 (counted, and reported via a warning)
    so the log and ratio terms stay defined.
    """
    p = _as_map(pred, 1, "prediction")[0]
    g = _as_map(gt, 1, "ground truth")[0]
    if p.shape != g.shape:
        raise ShapeError("prediction and ground truth disagree", p.shape, g.shape)
    m = _valid_selector(valid_mask, g.shape)
    if np.any(g[m] <= 0.0):
        raise DomainError("ground-truth depth must be positive where unmasked")
    pv = p[m]
    gv = g[m]
    clamped = int(np.count_nonzero(pv <= 0.0))
    if clamped:
        warnings.warn(f"clamped {clamped} non-positive depth predictions to {DEPTH_FLOOR}")
        pv = np.maximum(pv, DEPTH_FLOOR)
    diff = pv - gv
    ratio = np.maximum(pv / gv, gv / pv)
    logd = np.log10(pv) - np.log10(gv)
    values = {
        "abs_rel": float(np.mean(np.abs(diff) / gv)),
        "sq_rel": float(np.mean(diff * diff / gv)),
        "rms": float(np.sqrt(np.mean(diff * diff))),
        "log_rms": float(np.sqrt(np.mean(logd * logd))),
        "delta_1": float(np.mean(ratio < 1.25)),
        "delta_2": float(np.mean(ratio < 1.25**2)),
        "delta_3": float(np.mean(ratio < 1.25**3)),
    }
    return MetricReport("depth", values, clamped)


def eval_seg(pred_labels, gt_labels, num_classes: int, valid_mask=None) -> MetricReport:
    """Pixel accuracy and mean IoU.

    The IoU mean runs over classes whose union is nonempty; classes absent
    from both label maps do not dilute the average.
    """
    p = np.asarray(getattr(pred_labels, "data", pred_labels))
    g = np.asarray(getattr(gt_labels, "data", gt_labels))
    if p.shape != g.shape or p.ndim != 2:
        raise ShapeError("label maps must agree as [H, W]", p.shape, g.shape)
    if num_classes < 1:
        raise DomainError(f"num_classes must be >= 1, got {num_classes}")
    p = p.astype(np.int64)
    g = g.astype(np.int64)
    m = _valid_selector(valid_mask, g.shape)
    for name, lab in (("predicted", p), ("ground-truth", g)):
        bad = m & ((lab < 0) | (lab >= num_classes))
        if bad.any():
            raise TaskError(
                f"{name} label {int(lab[bad][0])} outside [0, {num_classes})"
            )
    pv = p[m]
    gv = g[m]
    pix_acc = float(np.mean(pv == gv))
    ious = []
    for c in range(num_classes):
        inter = int(np.count_nonzero((pv == c) & (gv == c)))
        union = int(np.count_nonzero((pv == c) | (gv == c)))
        if union > 0:
            ious.append(inter / union)
    return MetricReport("segmentation", {"pix_acc": pix_acc, "mean_iou": float(np.mean(ious))})


def eval_normals(pred, gt, valid_mask=None) -> MetricReport:
    """Angular error statistics in degrees over unmasked pixels.

    Mean and lower-median angle, plus strict accuracy fractions at 11.25,
    22.5, and 30 degrees. A zero-direction prediction scores 90 degrees and
    is counted in the report's warnings; a zero ground-truth vector at an
    unmasked pixel is an error.
    """
    p = _as_map(pred, 3, "prediction")
    g = _as_map(gt, 3, "ground truth")
    if p.shape != g.shape:
        raise ShapeError("prediction and ground truth disagree", p.shape, g.shape)
    m = _valid_selector(valid_mask, g.shape[1:])
    gn = np.sqrt(np.sum(g * g, axis=0))
    if np.any(m & (gn == 0.0)):
        raise DomainError("ground truth holds a zero vector at an unmasked pixel")
    pn = np.sqrt(np.sum(p * p, axis=0))
    zero_pred = m & (pn == 0.0)
    zeros = int(np.count_nonzero(zero_pred))
    if zeros:
        warnings.warn(f"{zeros} zero-direction normal predictions scored as 90 degrees")
    dot = np.sum(p * g, axis=0)
    denom = np.where(pn == 0.0, 1.0, pn) * np.where(gn == 0.0, 1.0, gn)
    cos = np.clip(dot / denom, -1.0, 1.0)
    ang = np.degrees(np.arccos(cos))
    ang = np.where(zero_pred, 90.0, ang)
    av = np.sort(ang[m])
    med = float(av[(av.size - 1) // 2])
    values = {
        "mean_angle": float(np.mean(av)),
        "median_angle": med,
        "frac_11_25": float(np.mean(av < 11.25 - ANGLE_EPS)),
        "frac_22_50": float(np.mean(av < 22.5 - ANGLE_EPS)),
        "frac_30_00": float(np.mean(av < 30.0 - ANGLE_EPS)),
    }
    return MetricReport("normals", values, zeros)


def head_channels_for(kind: str, classes: int = 4) -> int:
    if kind == "depth":
        return 1
    if kind == "segmentation":
        return classes
    if kind == "normals":
        return 3
    raise TaskError(f"unknown task kind {kind!r}; expected one of {TASK_KINDS}")
