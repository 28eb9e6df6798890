"""Synthetic corpora: desk-scale stand-ins for image-caption datasets.

Scenes are feature-map grids with class signature vectors planted inside
ground-truth boxes, paired with templated captions that mix the class words
with non-visual distractor tokens.  A second generator builds activation-map
benchmarks (bright cores, one-sided leaks) for comparing objectness criteria.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio, numerics
from .errors import SpecError
from .grounding import ActivationMap, Vocabulary
from .milhead import tokenize
from .objectness import Box, grid_proposals

CLASS_WORD_POOL = [
    "bear", "cake", "giraffe", "zebra", "donut", "kite", "pizza", "train",
    "boat", "clock", "horse", "bench", "vase", "sheep", "truck", "couch",
]

TEXTURE_POOL = ["grass", "sand", "brick", "snow", "tile", "gravel"]

DISTRACTOR_POOL = [
    "elaborate", "party", "lovely", "scene", "photo", "view", "sunny",
    "afternoon", "cozy", "moment", "pretty", "nice", "big", "small", "quiet",
    "busy", "bright", "dark", "festive", "plain", "happy", "calm", "odd",
    "grand", "tiny", "warm", "cool", "fresh", "old", "new", "wild", "gentle",
    "crowded", "empty", "shiny", "dull", "rustic", "modern", "simple", "fancy",
]

TEMPLATES = [
    "a {adj} photo of {objects} on the {t1} near the {t2}",
    "there is {objects} by the {t1} and {t2} in this {adj} {noun}",
    "{objects} over {t1} and {t2} during a {adj} {adj2} {noun}",
    "a {noun} of {t1} and {t2} with {objects} looking {adj}",
]


@dataclass
class SyntheticSceneSpec:
    classes: int = 8
    scenes: int = 500
    grid: int = 14
    dim: int = 16
    max_objects: int = 3
    noise: float = 0.05
    seed: int = 0
    signature_seed: int = None  # defaults to seed; set explicitly to build
                                # held-out splits over the same signatures

    def __post_init__(self):
        if self.classes > len(CLASS_WORD_POOL):
            raise SpecError(f"at most {len(CLASS_WORD_POOL)} classes supported")
        if self.classes + len(TEXTURE_POOL) > self.dim:
            raise SpecError("need dim >= classes + textures for "
                            "near-orthogonal signatures")
        if self.max_objects > self.grid * self.grid:
            raise SpecError("too many objects per grid")
        if not 1 <= self.max_objects <= self.classes:
            raise SpecError("max_objects must be in [1, classes]")


@dataclass
class Scene:
    image_id: str
    fmap: np.ndarray
    caption: str
    objects: list = field(default_factory=list)   # (class word, Box) pairs


def class_signatures(spec: SyntheticSceneSpec) -> np.ndarray:
    """Mutually near-orthogonal unit signature vectors: one per class plus
    one per background texture word."""
    sig_seed = spec.seed if spec.signature_seed is None else spec.signature_seed
    rng = np.random.default_rng(sig_seed + 1)
    count = spec.classes + len(TEXTURE_POOL)
    q, _ = np.linalg.qr(rng.normal(size=(spec.dim, spec.dim)))
    sigs = q[:, :count].T.copy()
    cos = sigs @ sigs.T - np.eye(count)
    if np.abs(cos).max() >= 0.1:
        raise SpecError("signature orthogonality not achieved")
    return sigs


def _sample_box(rng) -> Box:
    w = rng.uniform(0.25, 0.5)
    h = rng.uniform(0.25, 0.5)
    x = rng.uniform(0.0, 1.0 - w)
    y = rng.uniform(0.0, 1.0 - h)
    return Box(x, y, x + w, y + h)


def _caption_for(rng, words, textures) -> str:
    template = TEMPLATES[rng.integers(len(TEMPLATES))]
    objects = " and ".join(f"a {w}" for w in words)
    picks = rng.choice(len(DISTRACTOR_POOL), size=3, replace=False)
    adj, adj2, noun = (DISTRACTOR_POOL[i] for i in picks)
    return template.format(objects=objects, adj=adj, adj2=adj2, noun=noun,
                           t1=textures[0], t2=textures[1])


def generate_scenes(spec: SyntheticSceneSpec):
    """Deterministic scene list plus the planted class words and signatures."""
    rng = np.random.default_rng(spec.seed)
    class_words = CLASS_WORD_POOL[:spec.classes]
    sigs = class_signatures(spec)
    n = spec.grid
    centers = (np.arange(n) + 0.5) / n
    scenes = []
    for s in range(spec.scenes):
        k = int(rng.integers(1, spec.max_objects + 1))
        cls = rng.choice(spec.classes, size=k, replace=False)
        boxes = []
        for _ in cls:
            for _attempt in range(200):
                box = _sample_box(rng)
                from .objectness import iou
                if all(iou(box, b) < 0.1 for b in boxes):
                    boxes.append(box)
                    break
            else:
                raise SpecError("could not place non-overlapping objects")
        fmap = rng.normal(0.0, 1.0, (n, n, spec.dim)) * spec.noise
        # background texture: each uncovered cell carries one of the scene's
        # two texture signatures, making captions scene-discriminative
        tex = rng.choice(len(TEXTURE_POOL), size=2, replace=False)
        tex_words = [TEXTURE_POOL[t] for t in tex]
        covered = np.zeros((n, n), dtype=bool)
        cell_tex = rng.integers(0, 2, size=(n, n))
        objects = []
        for ci, box in zip(cls, boxes):
            rows = (centers > box.ymin) & (centers < box.ymax)
            cols = (centers > box.xmin) & (centers < box.xmax)
            fmap[np.ix_(rows, cols)] += sigs[ci]
            covered[np.ix_(rows, cols)] = True
            objects.append((class_words[ci], box))
        for ti in range(2):
            mask = ~covered & (cell_tex == ti)
            fmap[mask] += 0.5 * sigs[spec.classes + tex[ti]]
        caption = _caption_for(rng, [w for w, _ in objects], tex_words)
        scenes.append(Scene(f"scene_{s:05d}", fmap, caption, objects))
    return scenes, class_words, sigs


def build_vocabulary(scenes) -> Vocabulary:
    counts = {}
    for scene in scenes:
        for tok in tokenize(scene.caption):
            counts[tok] = counts.get(tok, 0) + 1
    return Vocabulary.from_counts(counts)


def generate_dataset(spec: SyntheticSceneSpec, out_dir):
    """Write the corpus to disk: feature maps, captions, GT boxes, vocab."""
    out_dir = Path(out_dir)
    (out_dir / "fmaps").mkdir(parents=True, exist_ok=True)
    scenes, class_words, _ = generate_scenes(spec)
    vocab = build_vocabulary(scenes)
    captions = {}
    gt = {}
    for scene in scenes:
        fileio.write_fmap(out_dir / "fmaps" / f"{scene.image_id}.fmap",
                          scene.fmap)
        captions[scene.image_id] = scene.caption
        gt[scene.image_id] = [
            Box(*b.coords(), class_word=vocab.word_index(w))
            for w, b in scene.objects]
    fileio.write_captions_jsonl(out_dir / "captions.jsonl", captions)
    fileio.write_boxes_jsonl(out_dir / "gt.jsonl", gt, vocab)
    fileio.write_vocabulary(out_dir / "vocab.txt", vocab)
    import json
    (out_dir / "dataset.json").write_text(json.dumps(
        {"classes": class_words, "grid": spec.grid, "dim": spec.dim,
         "scenes": spec.scenes, "seed": spec.seed, "noise": spec.noise,
         "max_objects": spec.max_objects}, indent=2))
    return scenes, vocab, class_words


# ---------------------------------------------------------------------------
# Activation-map benchmark for comparing objectness criteria.

BENCH_CORE_VALUE = 1.6
BENCH_LEAK_VALUE = 0.8
BENCH_LEAK_WIDTH = 0.2      # absolute width of the ring-contaminating leak
BENCH_LEAK_SPILL = 0.05     # how far the leak spills past the box vertically
BENCH_DECAY_WIDTH = 0.25    # soft-edge decay width on the distractor blob
BENCH_SMOOTH_KERNEL = 3


def benchmark_proposals(count: int = 300):
    """Deterministic grid proposal set used by the criterion benchmark."""
    props = grid_proposals(6, (0.2, 0.3, 0.45), (0.5, 1.0, 2.0))
    return props[:count]


def _paint(heat, xmin, ymin, xmax, ymax, value, maximum=False):
    rows, cols = heat.shape
    c0 = max(0, int(round(xmin * cols)))
    c1 = min(cols, int(round(xmax * cols)))
    r0 = max(0, int(round(ymin * rows)))
    r1 = min(rows, int(round(ymax * rows)))
    if maximum:
        heat[r0:r1, c0:c1] = np.maximum(heat[r0:r1, c0:c1], value)
    else:
        heat[r0:r1, c0:c1] = value


def benchmark_scene(rng, raster: int = 56, with_core: bool = False,
                    with_leak: bool = False):
    """One benchmark scene: a smoothed activation map with the object planted
    on the proposal lattice.

    ``with_core`` adds a bright interior core, which fools the
    average-activation criterion into preferring a tight sub-box.
    ``with_leak`` adds (a) a moderately hot leak hugging one side of the
    object, contaminating its border ring, and (b) a distractor blob with
    three sharp edges and one soft decaying edge elsewhere; inside-outside
    contrast then prefers the distractor, while the minimum edge gradient
    still prefers the true box.

    Returns (maps, gt_box).
    """
    heat = np.zeros((raster, raster))
    step = 1.0 / 6.0
    if with_leak:
        scale = 0.3
        i, j = 1, int(rng.integers(1, 3))
    else:
        scale = 0.45
        i, j = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    cy, cx = (i + 0.5) * step, (j + 0.5) * step
    gt = Box(cx - scale / 2, cy - scale / 2, cx + scale / 2, cy + scale / 2)
    _paint(heat, *gt.coords(), 1.0)
    if with_core:
        _paint(heat, cx - scale / 4, cy - scale / 4,
               cx + scale / 4, cy + scale / 4, BENCH_CORE_VALUE)
    if with_leak:
        # hot leak hugging the right side of the object, slightly taller
        _paint(heat, gt.xmax, gt.ymin - BENCH_LEAK_SPILL,
               gt.xmax + BENCH_LEAK_WIDTH, gt.ymax + BENCH_LEAK_SPILL,
               BENCH_LEAK_VALUE)
        # distractor blob: sharp box with one soft, gradually decaying edge
        bj = int(rng.integers(1, 3))
        bcy, bcx = 4.5 * step, (bj + 0.5) * step
        blob = Box(bcx - scale / 2, bcy - scale / 2,
                   bcx + scale / 2, bcy + scale / 2)
        _paint(heat, *blob.coords(), 1.0)
        cols = heat.shape[1]
        c0 = int(round(blob.xmax * cols))
        decay_px = int(round(BENCH_DECAY_WIDTH * cols))
        r0 = int(round(blob.ymin * heat.shape[0]))
        r1 = int(round(blob.ymax * heat.shape[0]))
        for k in range(decay_px):
            c = c0 + k
            if c >= cols:
                break
            heat[r0:r1, c] = np.maximum(heat[r0:r1, c],
                                        1.0 - (k + 1) / (decay_px + 1))
    heat = numerics.gaussian_smooth(heat, BENCH_SMOOTH_KERNEL)
    return [ActivationMap(class_word=0, heat=heat)], gt


def benchmark_corpus(scenes: int = 500, raster: int = 56, seed: int = 0):
    """Mixed benchmark corpus alternating bright-core and leak scenes.

    Returns a list of (maps, gt_box) pairs.
    """
    rng = np.random.default_rng(seed)
    out = []
    for s in range(scenes):
        kind = s % 2
        out.append(benchmark_scene(rng, raster, with_core=(kind == 0),
                                   with_leak=(kind == 1)))
    return out
