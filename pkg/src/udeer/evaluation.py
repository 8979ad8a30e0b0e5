"""Scoring probability maps against ground truth.

The headline metric is MaxF: sweep the 256 thresholds k/255, compute
pixel precision/recall over valid pixels (prediction positive iff
prob >= threshold, Invalid pixels ignored entirely), and report the best
F1 as a percentage.  Multi-frame evaluation pools (micro-averages) the
confusion counts across frames per threshold before computing the curve.

Note this scores in the perspective image plane; the official benchmark
server evaluates in birds-eye view, so leaderboard numbers are not
comparable to values computed here.
"""

import csv
from dataclasses import dataclass

import numpy as np

from udeer.errors import EmptyDataset, NoValidPixels, ShapeMismatch
from udeer.kitti_io.formats import FrameBundle, GroundTruthMask
from udeer.lidar_adaptation import AdaptConfig
from udeer.model import ModelParams, forward, prepare_frame

THRESHOLDS = np.arange(256, dtype=np.float64) / 255.0


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class EvalResult:
    max_f: float                 # percent, [0, 100]
    best_threshold: float        # smallest maximizer, [0, 1]
    average_precision: float     # percent, trapezoid over the recall-sorted curve
    curve: list[tuple[float, float, float]]  # (threshold, precision, recall), ascending


def confusion_at(prob: np.ndarray, gt: GroundTruthMask, threshold: float) -> ConfusionCounts:
    """Pixel counts at one threshold; Invalid pixels never count."""
    prob = np.asarray(prob, dtype=np.float64)
    if prob.shape != gt.grid.shape:
        raise ShapeMismatch(f"prob {prob.shape} vs ground truth {gt.grid.shape}")
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    valid = gt.valid
    road = gt.road
    pred = prob >= threshold
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & road & valid)),
        fp=int(np.count_nonzero(pred & ~road & valid)),
        fn=int(np.count_nonzero(~pred & road & valid)),
        tn=int(np.count_nonzero(~pred & ~road & valid)),
    )


def threshold_counts(prob: np.ndarray, gt: GroundTruthMask) -> np.ndarray:
    """(256, 4) int64 array of (tp, fp, fn, tn) per swept threshold."""
    prob = np.asarray(prob, dtype=np.float64)
    if prob.shape != gt.grid.shape:
        raise ShapeMismatch(f"prob {prob.shape} vs ground truth {gt.grid.shape}")
    valid = gt.valid
    if not valid.any():
        raise NoValidPixels("ground truth has no valid pixels")
    pos = np.sort(prob[valid & gt.road])
    neg = np.sort(prob[valid & ~gt.road])
    tp = pos.size - np.searchsorted(pos, THRESHOLDS, side="left")
    fp = neg.size - np.searchsorted(neg, THRESHOLDS, side="left")
    out = np.empty((256, 4), dtype=np.int64)
    out[:, 0] = tp
    out[:, 1] = fp
    out[:, 2] = pos.size - tp
    out[:, 3] = neg.size - fp
    return out


def precision_recall_f1(counts: np.ndarray):
    tp = counts[:, 0].astype(np.float64)
    fp = counts[:, 1].astype(np.float64)
    fn = counts[:, 2].astype(np.float64)
    predicted = tp + fp
    actual = tp + fn
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1.0), 1.0)
    recall = np.where(actual > 0, tp / np.maximum(actual, 1.0), 0.0)
    pr = precision + recall
    f1 = np.where(pr > 0, 2.0 * precision * recall / np.maximum(pr, 1e-300), 0.0)
    return precision, recall, f1


def result_from_counts(counts: np.ndarray) -> EvalResult:
    precision, recall, f1 = precision_recall_f1(counts)
    best = int(np.argmax(f1))  # first maximizer = smallest threshold
    order = np.argsort(recall, kind="stable")
    r_sorted = recall[order]
    p_sorted = precision[order]
    ap = float(np.sum(np.diff(r_sorted) * (p_sorted[1:] + p_sorted[:-1]) / 2.0))
    return EvalResult(
        max_f=float(100.0 * f1[best]),
        best_threshold=float(THRESHOLDS[best]),
        average_precision=100.0 * ap,
        curve=[(float(t), float(p), float(r)) for t, p, r in zip(THRESHOLDS, precision, recall)],
    )


def max_f(prob: np.ndarray, gt: GroundTruthMask) -> EvalResult:
    return result_from_counts(threshold_counts(prob, gt))


def pooled_counts_for_set(
    params: ModelParams, frames: list[FrameBundle], adapt: AdaptConfig | None = None
) -> np.ndarray:
    if not frames:
        raise EmptyDataset("no frames to evaluate")
    total = np.zeros((256, 4), dtype=np.int64)
    for frame in frames:
        if frame.gt is None:
            raise EmptyDataset(f"frame {frame.frame_id!r} lacks ground truth")
        prep = prepare_frame(frame, adapt)
        out = forward(params, prep.image, prep.lidar, prep.depth)
        total += threshold_counts(out.fine_prob, frame.gt)
    return total


def evaluate_set(
    params: ModelParams, frames: list[FrameBundle], adapt: AdaptConfig | None = None
) -> EvalResult:
    """Pooled (micro-averaged) sweep across frames."""
    return result_from_counts(pooled_counts_for_set(params, frames, adapt))


def write_report_csv(path, counts: np.ndarray) -> None:
    precision, recall, f1 = precision_recall_f1(counts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "tp", "fp", "fn", "tn", "precision", "recall", "f1"])
        for k in range(256):
            writer.writerow(
                [
                    f"{THRESHOLDS[k]:.8f}",
                    int(counts[k, 0]),
                    int(counts[k, 1]),
                    int(counts[k, 2]),
                    int(counts[k, 3]),
                    f"{precision[k]:.8f}",
                    f"{recall[k]:.8f}",
                    f"{f1[k]:.8f}",
                ]
            )


def summary_line(result: EvalResult) -> str:
    return (
        f"MaxF={result.max_f:.2f} AP={result.average_precision:.2f} "
        f"best_threshold={result.best_threshold:.6f}"
    )


def overlay(image: np.ndarray, prob: np.ndarray, gt: GroundTruthMask | None = None,
            threshold: float = 0.5) -> np.ndarray:
    """Blend the prediction over the RGB frame.

    Without ground truth, predicted road is tinted green.  With ground
    truth, hits stay green, false positives turn red and false negatives
    orange; invalid pixels are left untouched.
    """
    out = np.asarray(image, dtype=np.float64).copy()
    pred = np.asarray(prob, dtype=np.float64) >= threshold

    def tint(mask, color):
        out[mask] = 0.55 * out[mask] + 0.45 * np.asarray(color, dtype=np.float64)

    if gt is None:
        tint(pred, (40, 220, 60))
    else:
        valid = gt.valid
        tint(pred & gt.road & valid, (40, 220, 60))
        tint(pred & ~gt.road & valid, (230, 40, 40))
        tint(~pred & gt.road & valid, (240, 160, 30))
    return np.clip(out, 0, 255).astype(np.uint8)
