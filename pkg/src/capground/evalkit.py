"""Detection and retrieval metrics: IoU matching, precision/recall at k,
average precision with mAP, average recall at k, and vocabulary recall.

Detections and ground truths are passed as mappings image_id -> list[Box].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .objectness import Box, iou  # noqa: F401  (iou is part of this module's API)


@dataclass
class MatchResult:
    """Greedy matching of one image's detections to its ground truths."""

    det_matches: list = field(default_factory=list)  # per det: gt index or None
    det_ious: list = field(default_factory=list)
    gt_covered: list = field(default_factory=list)


def match_detections(dets, gts, iou_thresh: float = 0.5,
                     class_aware: bool = False) -> MatchResult:
    """Match detections (descending score) greedily to the highest-IoU free
    ground truth; each GT is assigned at most once, ties break by GT index."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    result = MatchResult(det_matches=[None] * len(dets),
                         det_ious=[0.0] * len(dets),
                         gt_covered=[False] * len(gts))
    for i in order:
        best_j, best_iou = None, 0.0
        for j, gt in enumerate(gts):
            if result.gt_covered[j]:
                continue
            if class_aware and dets[i].class_word != gt.class_word:
                continue
            o = iou(dets[i], gt)
            if o >= iou_thresh and o > best_iou:
                best_j, best_iou = j, o
        if best_j is not None:
            result.det_matches[i] = best_j
            result.det_ious[i] = best_iou
            result.gt_covered[best_j] = True
    return result


def _truncated(dets, k):
    order = sorted(dets, key=lambda b: -b.score)
    return order[:k] if k is not None else order


def precision_recall_at_k(detections, ground_truths, k: int,
                          iou_thresh: float = 0.5,
                          class_aware: bool = False):
    """Micro-averaged precision and recall with top-k truncation per image."""
    tp = n_det = n_gt = 0
    for image_id, gts in ground_truths.items():
        dets = _truncated(detections.get(image_id, []), k)
        match = match_detections(dets, gts, iou_thresh, class_aware)
        tp += sum(m is not None for m in match.det_matches)
        n_det += len(dets)
        n_gt += len(gts)
    precision = tp / n_det if n_det else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return precision, recall


@dataclass
class PRCurve:
    recalls: np.ndarray
    precisions: np.ndarray
    ap: float


def _ap_from_curve(recalls, precisions, interpolation: str) -> float:
    if len(recalls) == 0:
        return 0.0
    if interpolation == "11point":
        return float(np.mean([max([p for r, p in zip(recalls, precisions)
                                   if r >= t], default=0.0)
                              for t in np.linspace(0, 1, 11)]))
    # all-point precision envelope
    mrec = np.concatenate([[0.0], recalls, [recalls[-1]]])
    mpre = np.concatenate([[0.0], precisions, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(np.diff(mrec) > 0)[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(detections, ground_truths, class_word,
                      iou_thresh: float = 0.5,
                      interpolation: str = "all-point") -> PRCurve:
    """Ranked-detection AP for one class across the dataset."""
    records = []   # (score, image_id, det index within class)
    per_image = {}
    n_gt = 0
    for image_id, gts in ground_truths.items():
        cls_gts = [g for g in gts if g.class_word == class_word]
        n_gt += len(cls_gts)
        cls_dets = [d for d in detections.get(image_id, [])
                    if d.class_word == class_word]
        match = match_detections(cls_dets, cls_gts, iou_thresh)
        per_image[image_id] = (cls_dets, match)
        for i, d in enumerate(cls_dets):
            records.append((d.score, image_id, i))
    records.sort(key=lambda r: -r[0])
    tps = np.array([per_image[img][1].det_matches[i] is not None
                    for _, img, i in records], dtype=np.float64)
    if len(tps) == 0 or n_gt == 0:
        return PRCurve(np.array([]), np.array([]), 0.0)
    cum_tp = np.cumsum(tps)
    precisions = cum_tp / np.arange(1, len(tps) + 1)
    recalls = cum_tp / n_gt
    return PRCurve(recalls, precisions,
                   _ap_from_curve(recalls, precisions, interpolation))


def mean_average_precision(detections, ground_truths, class_words,
                           iou_thresh: float = 0.5,
                           interpolation: str = "all-point"):
    """mAP over the classes that have at least one ground truth.

    Returns (mAP, {class_word: PRCurve}).
    """
    curves = {}
    aps = []
    for c in class_words:
        has_gt = any(g.class_word == c for gts in ground_truths.values()
                     for g in gts)
        if not has_gt:
            continue
        curves[c] = average_precision(detections, ground_truths, c,
                                      iou_thresh, interpolation)
        aps.append(curves[c].ap)
    return (float(np.mean(aps)) if aps else 0.0), curves


def average_recall_at_k(detections, ground_truths, k_list,
                        iou_thresh: float = 0.5):
    """Mean over images of the matched-GT fraction with top-k truncation."""
    out = {}
    for k in k_list:
        recalls = []
        for image_id, gts in ground_truths.items():
            if not gts:
                continue
            dets = _truncated(detections.get(image_id, []), k)
            match = match_detections(dets, gts, iou_thresh)
            recalls.append(sum(match.gt_covered) / len(gts))
        out[k] = float(np.mean(recalls)) if recalls else 0.0
    return out


def vocabulary_recall(mined, targets, alias_map=None) -> float:
    """Fraction of target words retrieved by the mined list, directly or via
    the alias map (target -> iterable of acceptable mined words)."""
    if not targets:
        return 0.0
    mined = set(mined)
    alias_map = alias_map or {}
    hit = 0
    for t in targets:
        accept = {t} | set(alias_map.get(t, ()))
        if accept & mined:
            hit += 1
    return hit / len(targets)
