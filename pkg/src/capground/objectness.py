"""Edge-gradient objectness over candidate boxes.

A box is scored against per-class activation maps: mean activation inside the
box (weighted by beta) plus the minimum of four edge gradients, where an edge
gradient is the mean activation of a thin strip just inside the edge minus
the matching strip just outside.  Two weaker baseline criteria (average
activation, inside-outside contrast) are provided for comparison, along with
greedy NMS and pseudo-ground-truth selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument, InvalidRect
from .grounding import ActivationMap

EDGES = ("left", "right", "top", "bottom")

CRITERIA = ("min-edge-gradient", "average-activation", "inside-outside-contrast")


@dataclass
class Box:
    """Axis-aligned rectangle in normalized [0, 1] coordinates."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float
    score: float = 0.0
    class_word: Optional[int] = None

    def __post_init__(self):
        self.xmin = float(np.clip(self.xmin, 0.0, 1.0))
        self.ymin = float(np.clip(self.ymin, 0.0, 1.0))
        self.xmax = float(np.clip(self.xmax, 0.0, 1.0))
        self.ymax = float(np.clip(self.ymax, 0.0, 1.0))
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise InvalidRect(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def coords(self):
        return (self.xmin, self.ymin, self.xmax, self.ymax)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass
class ScoringConfig:
    margin_fraction: float = 0.02
    beta: float = 0.005
    nms_iou: float = 0.5
    top_k: int = 5
    criterion: str = "min-edge-gradient"
    border_fraction: float = 0.2   # inside-outside baseline ring width

    def __post_init__(self):
        if not 0.0 < self.margin_fraction < 0.5:
            raise InvalidArgument("margin_fraction must be in (0, 0.5)")
        if self.beta < 0:
            raise InvalidArgument("beta must be >= 0")
        if self.criterion not in CRITERIA:
            raise InvalidArgument(f"unknown criterion {self.criterion!r}")


def _boxes_px(boxes, rows, cols):
    """Vectorized normalized-box -> half-open pixel rect conversion."""
    b = np.array([box.coords() for box in boxes], dtype=np.float64)
    c0 = np.clip(np.rint(b[:, 0] * cols).astype(int), 0, cols - 1)
    r0 = np.clip(np.rint(b[:, 1] * rows).astype(int), 0, rows - 1)
    c1 = np.clip(np.rint(b[:, 2] * cols).astype(int), c0 + 1, cols)
    r1 = np.clip(np.rint(b[:, 3] * rows).astype(int), r0 + 1, rows)
    return r0, c0, r1, c1


def _edge_gradients_batch(amap: ActivationMap, r0, c0, r1, c1, margin_fraction):
    """Per-box edge gradients, shape (n_boxes, 4) in EDGES order."""
    ii = amap.integral
    rows, cols = ii.rows, ii.cols
    tw = np.maximum(1, np.rint(margin_fraction * (c1 - c0)).astype(int))
    th = np.maximum(1, np.rint(margin_fraction * (r1 - r0)).astype(int))
    out = np.empty((len(r0), 4), dtype=np.float64)

    def strip_pair(inner, outer, col_idx):
        (ir0, ic0, ir1, ic1) = inner
        (or0, oc0, or1, oc1) = outer
        inner_mean = ii.rect_mean_batch(ir0, ic0, ir1, ic1)
        o_area = np.maximum(or1 - or0, 0) * np.maximum(oc1 - oc0, 0)
        ok = o_area > 0
        outer_mean = np.zeros_like(inner_mean)
        if np.any(ok):
            outer_mean[ok] = ii.rect_sum(or0[ok], oc0[ok], or1[ok], oc1[ok]) \
                / o_area[ok]
        # border fallback: zero-area outer strip -> gradient = inner mean
        out[:, col_idx] = np.where(ok, inner_mean - outer_mean, inner_mean)

    # left
    strip_pair((r0, c0, r1, np.minimum(c0 + tw, c1)),
               (r0, np.maximum(c0 - tw, 0), r1, c0), 0)
    # right
    strip_pair((r0, np.maximum(c1 - tw, c0), r1, c1),
               (r0, c1, r1, np.minimum(c1 + tw, cols)), 1)
    # top
    strip_pair((r0, c0, np.minimum(r0 + th, r1), c1),
               (np.maximum(r0 - th, 0), c0, r0, c1), 2)
    # bottom
    strip_pair((np.maximum(r1 - th, r0), c0, r1, c1),
               (r1, c0, np.minimum(r1 + th, rows), c1), 3)
    return out


def edge_gradient(amap: ActivationMap, box: Box, edge: str,
                  cfg: ScoringConfig = None) -> float:
    """Inner-strip mean minus outer-strip mean along one box edge."""
    if edge not in EDGES:
        raise InvalidArgument(f"unknown edge {edge!r}")
    cfg = cfg or ScoringConfig()
    r0, c0, r1, c1 = _boxes_px([box], amap.integral.rows, amap.integral.cols)
    grads = _edge_gradients_batch(amap, r0, c0, r1, c1, cfg.margin_fraction)
    return float(grads[0, EDGES.index(edge)])


def _sorted_maps(maps):
    if not maps:
        raise InvalidArgument("need at least one activation map")
    return sorted(maps, key=lambda m: m.class_word)


def _score_batch(maps, boxes, cfg: ScoringConfig, criterion: str):
    """Scores and argmax classes for all boxes under one criterion."""
    maps = _sorted_maps(maps)
    n = len(boxes)
    best = np.full(n, -np.inf)
    best_cls = np.zeros(n, dtype=int)
    for amap in maps:
        ii = amap.integral
        r0, c0, r1, c1 = _boxes_px(boxes, ii.rows, ii.cols)
        act = ii.rect_mean_batch(r0, c0, r1, c1)
        if criterion == "average-activation":
            s = act
        elif criterion == "inside-outside-contrast":
            tw = np.maximum(1, np.rint(cfg.border_fraction * (c1 - c0)).astype(int))
            th = np.maximum(1, np.rint(cfg.border_fraction * (r1 - r0)).astype(int))
            er0 = np.maximum(r0 - th, 0)
            ec0 = np.maximum(c0 - tw, 0)
            er1 = np.minimum(r1 + th, ii.rows)
            ec1 = np.minimum(c1 + tw, ii.cols)
            ring_area = (er1 - er0) * (ec1 - ec0) - (r1 - r0) * (c1 - c0)
            ring_sum = ii.rect_sum(er0, ec0, er1, ec1) \
                - ii.rect_sum(r0, c0, r1, c1)
            ring_mean = np.divide(ring_sum, ring_area, where=ring_area > 0,
                                  out=np.zeros_like(act))
            s = act - ring_mean
        else:  # min-edge-gradient
            grads = _edge_gradients_batch(amap, r0, c0, r1, c1,
                                          cfg.margin_fraction)
            s = cfg.beta * act + grads.min(axis=1)
        better = s > best   # strict: ties keep the lower class index
        best[better] = s[better]
        best_cls[better] = amap.class_word
    return best, best_cls


def box_objectness(maps, box: Box, cfg: ScoringConfig = None):
    """Objectness of one box: max over classes of beta * inside mean plus the
    minimum edge gradient.  Returns (score, best class word index)."""
    cfg = cfg or ScoringConfig()
    s, c = _score_batch(maps, [box], cfg, "min-edge-gradient")
    return float(s[0]), int(c[0])


def baseline_avg_activation(maps, box: Box):
    """Mean activation inside the box, max over classes."""
    s, c = _score_batch(maps, [box], ScoringConfig(), "average-activation")
    return float(s[0]), int(c[0])


def baseline_inside_outside(maps, box: Box, border_fraction: float = 0.2):
    """Inside mean minus border-ring mean, max over classes."""
    cfg = ScoringConfig(border_fraction=border_fraction)
    s, c = _score_batch(maps, [box], cfg, "inside-outside-contrast")
    return float(s[0]), int(c[0])


def nms(boxes, iou_threshold: float):
    """Greedy class-agnostic non-maximum suppression, stable on score ties."""
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) <= iou_threshold for j in kept):
            kept.append(i)
    return [boxes[i] for i in kept]


def score_proposals(maps, proposals, cfg: ScoringConfig):
    """Copy of the proposals with criterion scores and argmax classes set."""
    if not proposals:
        raise InvalidArgument("no proposals to score")
    scores, classes = _score_batch(maps, proposals, cfg, cfg.criterion)
    return [Box(*b.coords(), score=float(s), class_word=int(c))
            for b, s, c in zip(proposals, scores, classes)]


def select_pseudo_gt(maps, proposals, cfg: ScoringConfig):
    """Score, suppress and truncate proposals into pseudo-ground-truth."""
    scored = score_proposals(maps, proposals, cfg)
    return nms(scored, cfg.nms_iou)[:cfg.top_k]


def grid_proposals(grid_steps: int, scales, aspects):
    """Deterministic sliding-window proposals, clipped and deduplicated."""
    if grid_steps < 1 or not scales or not aspects:
        raise InvalidArgument("grid parameters must be positive and non-empty")
    seen = set()
    out = []
    for i in range(grid_steps):
        cy = (i + 0.5) / grid_steps
        for j in range(grid_steps):
            cx = (j + 0.5) / grid_steps
            for s in scales:
                for a in aspects:
                    w = s * np.sqrt(a)
                    h = s / np.sqrt(a)
                    box = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
                    key = tuple(round(v, 6) for v in box.coords())
                    if key not in seen:
                        seen.add(key)
                        out.append(box)
    return out
