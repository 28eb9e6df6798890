"""Tests for the synthetic corpus and objectness benchmark generators."""

import collections

import numpy as np
import pytest

from capground import synth
from capground.errors import SpecError
from capground.milhead import tokenize
from capground.objectness import iou
from capground.synth import (SyntheticSceneSpec, benchmark_corpus,
                             benchmark_proposals, build_vocabulary,
                             class_signatures, generate_scenes)


class TestSpecValidation:
    def test_too_many_classes(self):
        with pytest.raises(SpecError):
            SyntheticSceneSpec(classes=99)

    def test_dim_too_small_for_signatures(self):
        with pytest.raises(SpecError):
            SyntheticSceneSpec(classes=8, dim=8)

    def test_max_objects_bounds(self):
        with pytest.raises(SpecError):
            SyntheticSceneSpec(classes=4, dim=16, max_objects=5)


class TestSignatures:
    def test_near_orthogonal(self):
        spec = SyntheticSceneSpec(classes=8, dim=16)
        sigs = class_signatures(spec)
        assert sigs.shape[0] == 8 + len(synth.TEXTURE_POOL)
        gram = sigs @ sigs.T
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).max() < 0.1
        assert np.allclose(np.diag(gram), 1.0)

    def test_signature_seed_decouples_from_scene_seed(self):
        a = class_signatures(SyntheticSceneSpec(classes=4, seed=1,
                                                signature_seed=42))
        b = class_signatures(SyntheticSceneSpec(classes=4, seed=2,
                                                signature_seed=42))
        assert np.array_equal(a, b)


class TestGenerateScenes:
    def test_noiseless_single_object_exact_signature(self):
        spec = SyntheticSceneSpec(classes=1, scenes=3, dim=8, max_objects=1,
                                  noise=0.0, seed=0)
        scenes, class_words, sigs = generate_scenes(spec)
        for scene in scenes:
            word, box = scene.objects[0]
            assert word == class_words[0]
            n = spec.grid
            centers = (np.arange(n) + 0.5) / n
            rows = np.nonzero((centers > box.ymin) & (centers < box.ymax))[0]
            cols = np.nonzero((centers > box.xmin) & (centers < box.xmax))[0]
            for r in rows:
                for c in cols:
                    assert np.allclose(scene.fmap[r, c], sigs[0])

    def test_deterministic_per_seed(self):
        spec = SyntheticSceneSpec(classes=4, scenes=5, seed=3)
        s1, _, _ = generate_scenes(spec)
        s2, _, _ = generate_scenes(spec)
        for a, b in zip(s1, s2):
            assert a.caption == b.caption
            assert np.array_equal(a.fmap, b.fmap)

    def test_class_word_frequencies_match_planted_counts(self):
        spec = SyntheticSceneSpec(classes=8, scenes=60, seed=4)
        scenes, class_words, _ = generate_scenes(spec)
        planted = collections.Counter(w for s in scenes for w, _ in s.objects)
        vocab = build_vocabulary(scenes)
        for w in class_words:
            assert vocab.frequencies[vocab.word_index(w)] == planted[w]

    def test_captions_mention_planted_words(self):
        spec = SyntheticSceneSpec(classes=6, scenes=20, seed=5)
        scenes, _, _ = generate_scenes(spec)
        for scene in scenes:
            tokens = set(tokenize(scene.caption))
            for w, _ in scene.objects:
                assert w in tokens

    def test_objects_do_not_overlap(self):
        spec = SyntheticSceneSpec(classes=8, scenes=30, seed=6)
        scenes, _, _ = generate_scenes(spec)
        for scene in scenes:
            boxes = [b for _, b in scene.objects]
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    assert iou(boxes[i], boxes[j]) < 0.1


class TestBenchmark:
    def test_proposal_count_and_determinism(self):
        p1 = benchmark_proposals()
        p2 = benchmark_proposals()
        assert len(p1) <= 300
        assert [a.coords() for a in p1] == [b.coords() for b in p2]

    def test_corpus_structure(self):
        corpus = benchmark_corpus(scenes=6, seed=1)
        assert len(corpus) == 6
        for maps, gt in corpus:
            assert len(maps) == 1
            assert maps[0].heat.shape == (56, 56)
            assert 0.0 <= gt.xmin < gt.xmax <= 1.0

    def test_gt_on_proposal_lattice(self):
        # every benchmark ground truth must be closely matched by at least
        # one proposal, otherwise precision@1 is meaningless
        props = benchmark_proposals()
        for maps, gt in benchmark_corpus(scenes=20, seed=2):
            assert max(iou(gt, p) for p in props) > 0.9
