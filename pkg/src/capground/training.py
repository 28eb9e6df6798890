"""Triplet training of the grounding model.

The loss hinges the aggregate similarity of a matched (image, caption) pair
against an in-batch semi-hard negative caption.  Gradients are derived by
hand and verified against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidBatch, NumericalError
from .grounding import Caption, GroundingParams, NORM_EPS, safe_norms

GRAD_CLIP_NORM = 5.0


@dataclass
class TrainConfig:
    margin: float = 0.1
    learning_rate: float = 0.003
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_interval: int = 0   # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.margin <= 0:
            raise InvalidBatch("margin must be positive")
        if self.learning_rate < 0:
            raise InvalidBatch("learning rate must be non-negative")


@dataclass
class GradientSet:
    word_embeddings: np.ndarray
    img_projection: np.ndarray
    img_proj_bias: np.ndarray
    img_score_weight: np.ndarray
    img_score_bias: float
    txt_score_weight: np.ndarray
    txt_score_bias: float

    @classmethod
    def zeros_like(cls, params: GroundingParams) -> "GradientSet":
        return cls(np.zeros_like(params.word_embeddings),
                   np.zeros_like(params.img_projection),
                   np.zeros_like(params.img_proj_bias),
                   np.zeros_like(params.img_score_weight), 0.0,
                   np.zeros_like(params.txt_score_weight), 0.0)

    def arrays(self):
        return [("word_embeddings", self.word_embeddings),
                ("img_projection", self.img_projection),
                ("img_proj_bias", self.img_proj_bias),
                ("img_score_weight", self.img_score_weight),
                ("img_score_bias", np.array([self.img_score_bias])),
                ("txt_score_weight", self.txt_score_weight),
                ("txt_score_bias", np.array([self.txt_score_bias]))]

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for _, a in self.arrays())))


def triplet_loss(sim_pos: float, sim_neg: float, margin: float) -> float:
    """Hinge on the similarity gap: max(0, sim_neg - sim_pos + margin)."""
    return max(0.0, sim_neg - sim_pos + margin)


def mine_semi_hard(anchor_index: int, sims_to_all_captions, margin: float) -> int:
    """Semi-hard negative for one anchor: the most similar negative that is
    still below the positive; falls back to the hardest negative.  Ties break
    by ascending index."""
    sims = np.asarray(sims_to_all_captions, dtype=np.float64)
    if sims.size < 2:
        raise InvalidBatch("need at least 2 captions to mine negatives")
    pos = sims[anchor_index]
    best, best_sim = None, -np.inf
    hardest, hardest_sim = None, -np.inf
    for j, s in enumerate(sims):
        if j == anchor_index:
            continue
        if s > hardest_sim:
            hardest, hardest_sim = j, s
        if s < pos and s > best_sim:
            best, best_sim = j, s
    return best if best is not None else hardest


class _PairForward:
    """One image-caption forward pass with everything the backward needs."""

    def __init__(self, fmap, caption: Caption, params: GroundingParams):
        self.F = np.asarray(fmap, dtype=np.float64).reshape(-1, params.feature_dim)
        self.tokens = caption.tokens
        self.U = self.F @ params.img_projection + params.img_proj_bias
        self.V = params.word_embeddings[self.tokens]
        self.nU = safe_norms(self.U)
        self.nV = safe_norms(self.V)
        self.shat = (self.U @ self.V.T) / np.outer(self.nU, self.nV)
        a = self.F @ params.img_score_weight + params.img_score_bias
        ea = np.exp(a - a.max())
        self.p = ea / ea.sum()
        c = self.V @ params.txt_score_weight + params.txt_score_bias
        ec = np.exp(c - c.max())
        self.q = ec / ec.sum()
        self.sim = float(self.p @ self.shat @ self.q)

    def backward(self, dsim: float, params: GroundingParams, grads: GradientSet):
        """Accumulate d(dsim * sim)/dtheta into ``grads``."""
        p, q, shat = self.p, self.q, self.shat
        A = shat @ q
        B = shat.T @ p
        da = dsim * p * (A - float(p @ A))
        dc = dsim * q * (B - float(q @ B))
        dshat = dsim * np.outer(p, q)
        dU = (dshat / self.nV) @ self.V / self.nU[:, None] \
            - ((dshat * shat).sum(axis=1) / self.nU ** 2)[:, None] * self.U
        dV = (dshat / self.nU[:, None]).T @ self.U / self.nV[:, None] \
            - ((dshat * shat).sum(axis=0) / self.nV ** 2)[:, None] * self.V
        dV += np.outer(dc, params.txt_score_weight)
        grads.img_projection += self.F.T @ dU
        grads.img_proj_bias += dU.sum(axis=0)
        grads.img_score_weight += self.F.T @ da
        grads.img_score_bias += float(da.sum())
        grads.txt_score_weight += self.V.T @ dc
        grads.txt_score_bias += float(dc.sum())
        np.add.at(grads.word_embeddings, self.tokens, dV)


def _batch_step(batch, params: GroundingParams, config: TrainConfig):
    """Loss, gradients and in-batch retrieval accuracy for one batch.

    Forward passes for all image-caption combinations are computed once; each
    anchor contributes one triplet against its semi-hard negative.
    """
    B = len(batch)
    if B < 2:
        raise InvalidBatch("batch size must be >= 2")
    forwards = [[_PairForward(fmap, cap, params) for (_, cap) in batch]
                for (fmap, _) in batch]
    sims = np.array([[fw.sim for fw in row] for row in forwards])
    grads = GradientSet.zeros_like(params)
    loss = 0.0
    hits = 0
    for a in range(B):
        if int(np.argmax(sims[a])) == a:
            hits += 1
        neg = mine_semi_hard(a, sims[a], config.margin)
        hinge = triplet_loss(sims[a, a], sims[a, neg], config.margin)
        if hinge > 0.0:
            loss += hinge
            forwards[a][neg].backward(1.0, params, grads)
            forwards[a][a].backward(-1.0, params, grads)
    if not np.isfinite(loss):
        raise NumericalError("non-finite triplet loss")
    return loss, grads, hits / B


def batch_gradients(batch, params: GroundingParams, config: TrainConfig):
    """Summed hinge loss over the batch and its analytic gradients."""
    loss, grads, _ = _batch_step(batch, params, config)
    return loss, grads


class AdamState:
    def __init__(self, params: GroundingParams):
        self.m = GradientSet.zeros_like(params)
        self.v = GradientSet.zeros_like(params)
        self.t = 0


def apply_update(params: GroundingParams, grads: GradientSet,
                 config: TrainConfig, state: AdamState):
    """Clipped Adam step, in place on ``params``."""
    norm = grads.global_norm()
    scale = GRAD_CLIP_NORM / norm if norm > GRAD_CLIP_NORM else 1.0
    state.t += 1
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, g in grads.arrays():
        g = g * scale
        m = getattr(state.m, name) if name not in ("img_score_bias", "txt_score_bias") \
            else np.array([getattr(state.m, name)])
        v = getattr(state.v, name) if name not in ("img_score_bias", "txt_score_bias") \
            else np.array([getattr(state.v, name)])
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = config.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + eps)
        if name in ("img_score_bias", "txt_score_bias"):
            setattr(state.m, name, float(m[0]))
            setattr(state.v, name, float(v[0]))
            setattr(params, name, float(getattr(params, name) - step[0]))
        else:
            setattr(state.m, name, m)
            setattr(state.v, name, v)
            getattr(params, name).__isub__(step)


def train(dataset, params: GroundingParams, config: TrainConfig,
          checkpoint_callback=None):
    """Adam training loop over (fmap, Caption) samples.

    ``dataset`` is an indexable sequence; batches are drawn with a seeded RNG,
    so the whole run is deterministic.  Returns the trained params and a loss
    trace of ``(step, loss, retrieval_top1)`` rows.
    """
    if len(dataset) == 0:
        raise InvalidBatch("dataset is empty")
    rng = np.random.default_rng(config.seed)
    params = params.copy()
    state = AdamState(params)
    trace = []
    last_good = params.copy()
    for step in range(1, config.steps + 1):
        idx = rng.choice(len(dataset), size=min(config.batch_size, len(dataset)),
                         replace=len(dataset) < config.batch_size)
        batch = [dataset[int(i)] for i in idx]
        try:
            loss, grads, top1 = _batch_step(batch, params, config)
        except NumericalError:
            return last_good, trace
        apply_update(params, grads, config, state)
        if not all(np.all(np.isfinite(a)) for _, a in params.arrays()):
            return last_good, trace
        trace.append((step, loss, top1))
        last_good = params.copy()
        if checkpoint_callback and config.checkpoint_interval \
                and step % config.checkpoint_interval == 0:
            checkpoint_callback(step, params)
    return params, trace
