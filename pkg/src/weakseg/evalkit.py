"""Segmentation metrics and the box-based localization evaluation.

Boxes use half-open pixel coordinates (x0, y0, x1, y1) with x0 < x1 and
y0 < y1, so area = (x1-x0) * (y1-y0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .interp import bilinear_resize


class ConfusionMatrix:
    """Pooled pixel counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, gt: np.ndarray, pred: np.ndarray):
        gt = np.asarray(gt).reshape(-1)
        pred = np.asarray(pred).reshape(-1)
        if gt.shape != pred.shape:
            raise ValueError(f"gt {gt.shape} and pred {pred.shape} differ")
        if gt.min() < 0 or gt.max() >= self.num_classes or pred.min() < 0 or pred.max() >= self.num_classes:
            raise ValueError("label outside the configured class range")
        idx = gt * self.num_classes + pred
        self.counts += np.bincount(idx, minlength=self.num_classes ** 2).reshape(
            self.num_classes, self.num_classes)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("class counts differ")
        out = ConfusionMatrix(self.num_classes)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pixel_accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("empty confusion matrix")
        return float(np.trace(self.counts)) / self.total

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN where the class appears in neither gt nor pred."""
        tp = np.diag(self.counts).astype(np.float64)
        denom = self.counts.sum(axis=1) + self.counts.sum(axis=0) - np.diag(self.counts)
        iou = np.full(self.num_classes, np.nan)
        seen = denom > 0
        iou[seen] = tp[seen] / denom[seen]
        return iou

    def mean_iou(self) -> float:
        if self.total == 0:
            raise ValueError("empty confusion matrix")
        return float(np.nanmean(self.per_class_iou()))


@dataclass(frozen=True)
class Detection:
    box: tuple          # (x0, y0, x1, y1), half-open pixels
    score: float
    class_id: int = 0
    image_id: int = 0


def box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


_CONNECTIVITY = {4: ndimage.generate_binary_structure(2, 1),
                 8: ndimage.generate_binary_structure(2, 2)}


def extract_boxes(cam: np.ndarray, image_size: tuple, threshold: float = 0.6,
                  connectivity: int = 8) -> list[Detection]:
    """Boxes from a [0,1] activation map: upsample to the image size,
    binarize above the threshold, take connected components, and score each
    component by the activation mass inside it."""
    if cam.min() < 0.0 or cam.max() > 1.0:
        raise ValueError("activation map must be normalized to [0,1]")
    h, w = image_size
    up = bilinear_resize(cam, h, w)
    mask = up > threshold
    labeled, count = ndimage.label(mask, structure=_CONNECTIVITY[connectivity])
    dets = []
    for comp in range(1, count + 1):
        ys, xs = np.nonzero(labeled == comp)
        score = float(up[ys, xs].sum())
        dets.append(Detection(box=(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1),
                              score=score))
    return dets


def nms(dets: list[Detection], iou_threshold: float = 0.3) -> list[Detection]:
    """Greedy score-descending suppression; kept detections are unchanged."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Detection] = []
    for i in order:
        if all(box_iou(dets[i].box, k.box) < iou_threshold for k in kept):
            kept.append(dets[i])
    return kept


def average_precision(dets: list[Detection], gt_boxes: dict, tiou: float) -> float:
    """Ranked-detection AP for one class.

    ``gt_boxes`` maps image_id -> list of boxes. Detections are sorted by
    score, matched greedily to the best still-unmatched ground-truth box in
    their image at IoU >= tiou, and the exact area under the interpolated
    precision-recall curve is returned.
    """
    n_gt = sum(len(v) for v in gt_boxes.values())
    if n_gt == 0:
        raise ValueError("average_precision needs at least one ground-truth box")
    if not dets:
        return 0.0
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    matched: dict = {img: np.zeros(len(boxes), dtype=bool) for img, boxes in gt_boxes.items()}
    tp = np.zeros(len(order))
    fp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = dets[i]
        boxes = gt_boxes.get(det.image_id, [])
        best, best_j = 0.0, -1
        for j, g in enumerate(boxes):
            if matched[det.image_id][j]:
                continue
            iou = box_iou(det.box, g)
            if iou > best:
                best, best_j = iou, j
        if best >= tiou and best_j >= 0:
            matched[det.image_id][best_j] = True
            tp[rank] = 1.0
        else:
            fp[rank] = 1.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(fp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # precision envelope from the right, integrated over recall steps
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def mean_average_precision(per_class_ap: dict) -> float:
    if not per_class_ap:
        raise ValueError("no classes to average")
    return float(np.mean(list(per_class_ap.values())))
