"""Region-word grounding model: importance scores, pairwise and aggregate
similarities, class activation maps, and object-vocabulary mining.

The model works on a precomputed feature map ``fmap`` of shape (n, n, d) and a
caption given as word indices into a :class:`Vocabulary`.  All learnable state
lives in :class:`GroundingParams`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import InvalidArgument, ShapeError, UnknownWord
from .numerics import IntegralImage

DEFAULT_EMBED_DIM = 50
DEFAULT_RASTER = 448
DEFAULT_SMOOTH_KERNEL = 32
NORM_EPS = 1e-12


class Vocabulary:
    """Ordered word list with dense indices and per-word corpus frequencies."""

    def __init__(self, words, frequencies):
        words = list(words)
        frequencies = [int(f) for f in frequencies]
        if len(words) != len(set(words)):
            raise InvalidArgument("vocabulary words must be unique")
        if len(frequencies) != len(words) or any(f < 1 for f in frequencies):
            raise InvalidArgument("need one frequency >= 1 per word")
        self.words = words
        self.frequencies = frequencies
        self.index = {w: i for i, w in enumerate(words)}

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def word_index(self, word: str) -> int:
        try:
            return self.index[word]
        except KeyError:
            raise UnknownWord(word) from None

    @classmethod
    def from_counts(cls, counts: dict) -> "Vocabulary":
        words = sorted(counts)
        return cls(words, [counts[w] for w in words])


@dataclass
class GroundingParams:
    """All learnable parameters of the grounding model."""

    word_embeddings: np.ndarray   # (|V|, e)
    img_projection: np.ndarray    # (d, e)
    img_proj_bias: np.ndarray     # (e,)
    img_score_weight: np.ndarray  # (d,)
    img_score_bias: float
    txt_score_weight: np.ndarray  # (e,)
    txt_score_bias: float

    def __post_init__(self):
        self.word_embeddings = np.asarray(self.word_embeddings, dtype=np.float64)
        self.img_projection = np.asarray(self.img_projection, dtype=np.float64)
        self.img_proj_bias = np.asarray(self.img_proj_bias, dtype=np.float64)
        self.img_score_weight = np.asarray(self.img_score_weight, dtype=np.float64)
        self.txt_score_weight = np.asarray(self.txt_score_weight, dtype=np.float64)
        v, e = self.word_embeddings.shape
        d, e2 = self.img_projection.shape
        if e2 != e or self.img_proj_bias.shape != (e,) \
                or self.img_score_weight.shape != (d,) \
                or self.txt_score_weight.shape != (e,):
            raise ShapeError("inconsistent parameter shapes")

    @property
    def vocab_size(self):
        return self.word_embeddings.shape[0]

    @property
    def feature_dim(self):
        return self.img_projection.shape[0]

    @property
    def embed_dim(self):
        return self.word_embeddings.shape[1]

    def copy(self) -> "GroundingParams":
        return GroundingParams(
            self.word_embeddings.copy(), self.img_projection.copy(),
            self.img_proj_bias.copy(), self.img_score_weight.copy(),
            float(self.img_score_bias), self.txt_score_weight.copy(),
            float(self.txt_score_bias))

    def arrays(self):
        """(name, array) pairs in declared field order; scalars as 1-element
        arrays (fresh objects, not views)."""
        return [
            ("word_embeddings", self.word_embeddings),
            ("img_projection", self.img_projection),
            ("img_proj_bias", self.img_proj_bias),
            ("img_score_weight", self.img_score_weight),
            ("img_score_bias", np.array([self.img_score_bias])),
            ("txt_score_weight", self.txt_score_weight),
            ("txt_score_bias", np.array([self.txt_score_bias])),
        ]

    @classmethod
    def random_init(cls, vocab_size: int, feature_dim: int,
                    embed_dim: int = DEFAULT_EMBED_DIM, seed: int = 0,
                    scale: float = 0.08) -> "GroundingParams":
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-scale, scale, shape)
        return cls(u(vocab_size, embed_dim), u(feature_dim, embed_dim),
                   u(embed_dim), u(feature_dim), float(u(1)[0]),
                   u(embed_dim), float(u(1)[0]))


@dataclass
class Caption:
    image_id: str
    tokens: list          # word indices, length l >= 1
    raw_text: str = ""

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise InvalidArgument("caption must contain at least one token")
        self.tokens = [int(t) for t in self.tokens]


@dataclass
class ActivationMap:
    """Per-class heat raster plus its integral image."""

    class_word: int
    heat: np.ndarray
    integral: IntegralImage = field(default=None)

    def __post_init__(self):
        self.heat = np.asarray(self.heat, dtype=np.float64)
        if self.integral is None:
            self.integral = IntegralImage(self.heat)


def _check_fmap(fmap, params: GroundingParams) -> np.ndarray:
    fmap = numerics.as_grid3d(fmap)
    if fmap.shape[2] != params.feature_dim:
        raise ShapeError(f"feature map has {fmap.shape[2]} channels, "
                         f"params expect {params.feature_dim}")
    return fmap


def safe_norms(m: np.ndarray) -> np.ndarray:
    """Row norms guarded for differentiable zero-vector handling."""
    return np.sqrt(np.einsum("ij,ij->i", m, m) + NORM_EPS ** 2)


def region_projection(fmap, params: GroundingParams) -> np.ndarray:
    """Affine projection of every region feature into the embedding space."""
    fmap = _check_fmap(fmap, params)
    return fmap @ params.img_projection + params.img_proj_bias


def sim_individual(fmap, caption: Caption, params: GroundingParams) -> np.ndarray:
    """Pairwise region-word cosine similarities, shape (n, n, l)."""
    fmap = _check_fmap(fmap, params)
    n0, n1, _ = fmap.shape
    u = region_projection(fmap, params).reshape(n0 * n1, -1)
    v = params.word_embeddings[caption.tokens]
    sims = (u @ v.T) / np.outer(safe_norms(u), safe_norms(v))
    return sims.reshape(n0, n1, len(caption.tokens))


def region_importance(fmap, params: GroundingParams) -> np.ndarray:
    """Softmax-normalized region importance scores, shape (n, n)."""
    fmap = _check_fmap(fmap, params)
    logits = fmap @ params.img_score_weight + params.img_score_bias
    return numerics.softmax(logits.ravel()).reshape(fmap.shape[:2])


def word_importance(caption: Caption, params: GroundingParams) -> np.ndarray:
    """Softmax-normalized word importance scores within the caption."""
    v = params.word_embeddings[caption.tokens]
    return numerics.softmax(v @ params.txt_score_weight + params.txt_score_bias)


def sim_aggregate(fmap, caption: Caption, params: GroundingParams) -> float:
    """Importance-weighted aggregate of the pairwise similarities."""
    sims = sim_individual(fmap, caption, params)
    p = region_importance(fmap, params)
    q = word_importance(caption, params)
    return float(np.einsum("ij,k,ijk->", p, q, sims))


def class_activation_map(fmap, class_word: int, params: GroundingParams,
                         raster_rows: int = DEFAULT_RASTER,
                         raster_cols: int = DEFAULT_RASTER,
                         smooth_kernel: int = DEFAULT_SMOOTH_KERNEL,
                         gate: str = "logit") -> ActivationMap:
    """Heat map for one class word: region-to-word similarity gated by the
    region importance (raw logit by default, softmax optionally), then
    bilinearly resized and Gaussian smoothed.
    """
    fmap = _check_fmap(fmap, params)
    class_word = int(class_word)
    if not 0 <= class_word < params.vocab_size:
        raise UnknownWord(class_word)
    n0, n1, _ = fmap.shape
    u = region_projection(fmap, params).reshape(n0 * n1, -1)
    v = params.word_embeddings[class_word]
    nv = float(np.sqrt(v @ v + NORM_EPS ** 2))
    sims = (u @ v) / (safe_norms(u) * nv)
    if gate == "logit":
        gate_vals = (fmap @ params.img_score_weight + params.img_score_bias).ravel()
    elif gate == "softmax":
        gate_vals = region_importance(fmap, params).ravel()
    else:
        raise InvalidArgument(f"unknown gate {gate!r}")
    coarse = (sims * gate_vals).reshape(n0, n1)
    heat = numerics.resize_bilinear(coarse, raster_rows, raster_cols)
    heat = numerics.gaussian_smooth(heat, smooth_kernel)
    return ActivationMap(class_word=class_word, heat=heat)


def mine_vocabulary(vocab: Vocabulary, params: GroundingParams, k_cls: int,
                    min_freq: int = 1, exclusion=None) -> list:
    """Top-k_cls word indices ranked by the word importance logit, after
    frequency and similarity-to-seed filtering.

    ``exclusion`` is an optional ``(seed word index list, cosine threshold)``
    pair; words whose max cosine to any seed embedding exceeds the threshold
    are dropped.  Ties break by ascending word index.
    """
    if k_cls > len(vocab):
        raise InvalidArgument("k_cls exceeds vocabulary size")
    scores = params.word_embeddings @ params.txt_score_weight + params.txt_score_bias
    keep = np.array([f >= min_freq for f in vocab.frequencies])
    if exclusion is not None:
        seeds, threshold = exclusion
        if len(seeds) > 0:
            e = params.word_embeddings
            s = e[list(seeds)]
            sims = (e @ s.T) / np.outer(safe_norms(e), safe_norms(s))
            keep &= sims.max(axis=1) <= threshold
    candidates = np.nonzero(keep)[0]
    # stable sort on descending score keeps ascending-index tie order
    order = candidates[np.argsort(-scores[candidates], kind="stable")]
    return [int(i) for i in order[:k_cls]]
