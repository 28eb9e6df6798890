"""Multiple-instance classification head over matched proposal boxes.

Image-level class labels are extracted from captions by exact token match;
proposals overlapping the pseudo-ground-truth become a bag of instances, and
a linear per-box classifier is trained with a max-pooled MIL loss where only
the most confident box per class is held responsible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics
from .errors import InvalidArgument, NumericalError
from .objectness import Box, ScoringConfig, _score_batch, iou, nms

PROB_FLOOR = 1e-12
MATCH_IOU = 0.5

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str):
    """Lowercased alphanumeric tokens (punctuation is a separator)."""
    return _TOKEN_RE.findall(text.lower())


def extract_labels(caption_tokens, class_list) -> np.ndarray:
    """Normalized per-class label weights from exact token matches.

    ``caption_tokens`` is a token list (strings); ``class_list`` the mined
    class words.  Returns the all-zero vector when no class word occurs.
    """
    if not class_list:
        raise InvalidArgument("class list must be non-empty")
    tokens = set(caption_tokens)
    y = np.array([1.0 if c in tokens else 0.0 for c in class_list])
    total = y.sum()
    return y / total if total > 0 else y


def match_boxes(proposals, pseudo_gt):
    """Proposals whose max IoU to any pseudo-GT box exceeds 0.5, in order."""
    return [p for p in proposals
            if any(iou(p, g) > MATCH_IOU for g in pseudo_gt)]


def pool_box_features(fmap, box: Box) -> np.ndarray:
    """Mean of feature-map cells whose centers fall inside the box, with a
    nearest-cell fallback for very small boxes."""
    fmap = np.asarray(fmap, dtype=np.float64)
    n0, n1, _ = fmap.shape
    cy = (np.arange(n0) + 0.5) / n0
    cx = (np.arange(n1) + 0.5) / n1
    rows = np.nonzero((cy > box.ymin) & (cy < box.ymax))[0]
    cols = np.nonzero((cx > box.xmin) & (cx < box.xmax))[0]
    if rows.size == 0 or cols.size == 0:
        r = int(np.clip(round((box.ymin + box.ymax) / 2 * n0 - 0.5), 0, n0 - 1))
        c = int(np.clip(round((box.xmin + box.xmax) / 2 * n1 - 0.5), 0, n1 - 1))
        return fmap[r, c].copy()
    return fmap[np.ix_(rows, cols)].reshape(-1, fmap.shape[2]).mean(axis=0)


@dataclass
class InstanceBag:
    image_id: str
    features: np.ndarray   # (P, d)
    boxes: list
    labels: np.ndarray     # (C,) normalized or all-zero

    @property
    def usable(self) -> bool:
        return self.labels.sum() > 0

    @classmethod
    def build(cls, image_id, fmap, proposals, pseudo_gt, caption_tokens,
              class_list) -> Optional["InstanceBag"]:
        matched = match_boxes(proposals, pseudo_gt)
        if not matched:
            return None
        feats = np.stack([pool_box_features(fmap, b) for b in matched])
        labels = extract_labels(caption_tokens, class_list)
        return cls(image_id, feats, matched, labels)


@dataclass
class MilParams:
    class_weights: np.ndarray  # (C, d)
    class_bias: np.ndarray     # (C,)

    def __post_init__(self):
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        self.class_bias = np.asarray(self.class_bias, dtype=np.float64)

    @property
    def num_classes(self):
        return self.class_weights.shape[0]

    def copy(self):
        return MilParams(self.class_weights.copy(), self.class_bias.copy())

    @classmethod
    def random_init(cls, num_classes, feature_dim, seed=0, scale=0.08):
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-scale, scale, (num_classes, feature_dim)),
                   rng.uniform(-scale, scale, num_classes))


def instance_scores(bag_features, params: MilParams) -> np.ndarray:
    """Per-box per-class linear scores, shape (P, C)."""
    return bag_features @ params.class_weights.T + params.class_bias


def mil_probability(scores) -> np.ndarray:
    """Softmax over per-class column maxima of the (P, C) score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise InvalidArgument("scores must be a non-empty (P, C) matrix")
    return numerics.softmax(scores.max(axis=0))


def mil_loss(probability, labels) -> float:
    """Cross-entropy of the bag probability against the soft label vector."""
    p = np.clip(np.asarray(probability, dtype=np.float64), PROB_FLOOR, None)
    return float(-(np.asarray(labels) * np.log(p)).sum())


def bag_loss_and_grads(bag: InstanceBag, params: MilParams):
    """MIL loss for one bag plus analytic gradients.

    The subgradient through the column max routes each class's gradient to
    exactly one responsible box (lowest index on ties, via argmax).
    """
    f = instance_scores(bag.features, params)
    responsible = f.argmax(axis=0)          # first max per class
    z = f[responsible, np.arange(f.shape[1])]
    p = numerics.softmax(z)
    loss = mil_loss(p, bag.labels)
    dz = p - bag.labels
    gw = dz[:, None] * bag.features[responsible]
    gb = dz
    return loss, gw, gb


def train_mil(bags, config, params: Optional[MilParams] = None) -> MilParams:
    """Plain gradient descent on the mean bag loss.

    ``config`` needs ``learning_rate``, ``steps`` and ``seed`` attributes (a
    :class:`capground.training.TrainConfig` works).  Bags without any class
    label are skipped.
    """
    usable = [b for b in bags if b.usable]
    if not usable:
        raise InvalidArgument("no usable bags (no caption matched a class)")
    C = usable[0].labels.shape[0]
    d = usable[0].features.shape[1]
    if params is None:
        params = MilParams.random_init(C, d, seed=config.seed)
    else:
        params = params.copy()
    for _ in range(config.steps):
        gw = np.zeros_like(params.class_weights)
        gb = np.zeros_like(params.class_bias)
        total = 0.0
        for bag in usable:
            loss, bw, bb = bag_loss_and_grads(bag, params)
            total += loss
            gw += bw
            gb += bb
        if not np.isfinite(total):
            raise NumericalError("non-finite MIL loss")
        params.class_weights -= config.learning_rate * gw / len(usable)
        params.class_bias -= config.learning_rate * gb / len(usable)
    return params


def classify_box(feature, params: MilParams) -> np.ndarray:
    """Class probability vector for a single box feature."""
    return numerics.softmax(feature @ params.class_weights.T + params.class_bias)


def detect(fmap, proposals, maps, mil_params: MilParams, class_words,
           cfg: ScoringConfig = None):
    """Detections for one image: objectness-scored proposals, NMS on the
    objectness, then the MIL head assigns a class and rescales the score.

    ``class_words`` maps MIL class row -> vocabulary word index so emitted
    boxes carry vocabulary indices.
    """
    cfg = cfg or ScoringConfig()
    if not proposals:
        return []
    obj_scores, _ = _score_batch(maps, proposals, cfg, "min-edge-gradient")
    scored = [Box(*b.coords(), score=float(s))
              for b, s in zip(proposals, obj_scores)]
    kept = nms(scored, cfg.nms_iou)[:cfg.top_k]
    out = []
    for box in kept:
        prob = classify_box(pool_box_features(fmap, box), mil_params)
        cls = int(prob.argmax())
        out.append(Box(*box.coords(), score=box.score * float(prob[cls]),
                       class_word=int(class_words[cls])))
    return out
