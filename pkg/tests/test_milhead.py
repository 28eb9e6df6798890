"""Tests for the multiple-instance classification head."""

import math

import numpy as np
import pytest

from capground.errors import InvalidArgument
from capground.milhead import (InstanceBag, MilParams, bag_loss_and_grads,
                               classify_box, detect, extract_labels,
                               instance_scores, match_boxes, mil_loss,
                               mil_probability, pool_box_features, tokenize,
                               train_mil)
from capground.objectness import Box, ScoringConfig
from capground.grounding import ActivationMap
from capground.training import TrainConfig

import oracles

# softmax([2, 0]) evaluated directly: e^2/(e^2+1), 1/(e^2+1)
MIL_PROB_20 = [0.8807970779778824, 0.11920292202211755]
NEG_LOG_MIL = 0.12692801104297252   # -ln(0.8807970779778824)


class TestTokenize:
    def test_lowercases_and_splits_punctuation(self):
        assert tokenize("A bear, near the Tree-stump!") == \
            ["a", "bear", "near", "the", "tree", "stump"]

    def test_digits_kept(self):
        assert tokenize("route 66") == ["route", "66"]


class TestExtractLabels:
    def test_single_match(self):
        y = extract_labels(tokenize("a bear near a tree stump"),
                           ["bear", "cake"])
        assert np.allclose(y, [1.0, 0.0])

    def test_both_match_normalized(self):
        y = extract_labels(tokenize("bear eats cake"), ["bear", "cake"])
        assert np.allclose(y, [0.5, 0.5])

    def test_no_match_zero_vector(self):
        y = extract_labels(tokenize("an empty street"), ["bear", "cake"])
        assert np.all(y == 0.0)

    def test_exact_match_no_stemming(self):
        y = extract_labels(tokenize("two bears"), ["bear"])
        assert np.all(y == 0.0)

    def test_empty_class_list_rejected(self):
        with pytest.raises(InvalidArgument):
            extract_labels(["a"], [])


class TestMatchBoxes:
    def test_identical_kept(self):
        b = Box(0.1, 0.1, 0.5, 0.5)
        assert match_boxes([b], [Box(0.1, 0.1, 0.5, 0.5)]) == [b]

    def test_disjoint_dropped(self):
        assert match_boxes([Box(0.0, 0.0, 0.2, 0.2)],
                           [Box(0.6, 0.6, 0.9, 0.9)]) == []

    def test_self_match_identity(self):
        rng = np.random.default_rng(0)
        xs = [Box(x, y, x + 0.2, y + 0.2)
              for x, y in rng.uniform(0, 0.7, (10, 2))]
        assert match_boxes(xs, xs) == xs

    def test_matches_brute_force_filter(self):
        rng = np.random.default_rng(1)
        props, gts = [], []
        for _ in range(40):
            x, y = rng.uniform(0, 0.6, 2)
            props.append(Box(x, y, x + rng.uniform(0.1, 0.35),
                             y + rng.uniform(0.1, 0.35)))
        for _ in range(5):
            x, y = rng.uniform(0, 0.6, 2)
            gts.append(Box(x, y, x + rng.uniform(0.1, 0.35),
                           y + rng.uniform(0.1, 0.35)))
        want = [p for p in props
                if max(oracles.brute_iou(p, g) for g in gts) > 0.5]
        assert match_boxes(props, gts) == want


class TestPoolBoxFeatures:
    def test_mean_of_covered_cells(self):
        fmap = np.zeros((4, 4, 2))
        fmap[1, 1] = [2.0, 0.0]
        fmap[1, 2] = [4.0, 2.0]
        # box covering exactly cells (1,1) and (1,2)
        feat = pool_box_features(fmap, Box(0.26, 0.26, 0.74, 0.49))
        assert np.allclose(feat, [3.0, 1.0])

    def test_tiny_box_nearest_cell_fallback(self):
        fmap = np.arange(32.0).reshape(4, 4, 2)
        feat = pool_box_features(fmap, Box(0.49, 0.49, 0.51, 0.51))
        assert np.allclose(feat, fmap[2, 2])


class TestMilProbability:
    def test_reference_value(self):
        out = mil_probability(np.array([[2.0, 0.0]]))
        assert np.allclose(out, MIL_PROB_20, atol=1e-12)

    def test_uniform_scores(self):
        out = mil_probability(np.full((3, 4), 1.7))
        assert np.allclose(out, 0.25)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=(5, 3))
        assert np.allclose(mil_probability(scores),
                           mil_probability(scores + 11.0))

    def test_box_permutation_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        assert np.allclose(mil_probability(scores),
                           mil_probability(scores[perm]))

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgument):
            mil_probability(np.empty((0, 3)))


class TestMilLoss:
    def test_reference_value(self):
        loss = mil_loss(np.array(MIL_PROB_20), np.array([1.0, 0.0]))
        assert abs(loss - NEG_LOG_MIL) < 1e-12

    def test_uniform_case(self):
        loss = mil_loss(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        assert abs(loss - math.log(2)) < 1e-12

    def test_equality_at_label_distribution(self):
        labels = np.array([0.25, 0.75])
        entropy = -(labels * np.log(labels)).sum()
        assert abs(mil_loss(labels, labels) - entropy) < 1e-12

    def test_gibbs_inequality(self):
        rng = np.random.default_rng(4)
        labels = rng.dirichlet(np.ones(4))
        entropy = -(labels * np.log(labels)).sum()
        for _ in range(20):
            p = rng.dirichlet(np.ones(4))
            assert mil_loss(p, labels) >= entropy - 1e-12

    def test_zero_probability_clamped(self):
        loss = mil_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert np.isfinite(loss)
        assert loss == pytest.approx(-math.log(1e-12))


class TestBagGradients:
    def make_bag(self, P=3, C=2, d=4, seed=5):
        rng = np.random.default_rng(seed)
        feats = rng.normal(size=(P, d))
        boxes = [Box(0.1 * i, 0.1, 0.1 * i + 0.2, 0.4) for i in range(P)]
        labels = np.zeros(C)
        labels[0] = 1.0
        return InstanceBag("img", feats, boxes, labels)

    def test_finite_difference_agreement(self):
        bag = self.make_bag()
        params = MilParams.random_init(2, 4, seed=6)
        _, gw, gb = bag_loss_and_grads(bag, params)

        def loss_fn():
            return bag_loss_and_grads(bag, params)[0]

        fd_w, fd_b = oracles.finite_difference(
            loss_fn, [params.class_weights, params.class_bias])
        assert oracles.grads_close(gw, fd_w)
        assert oracles.grads_close(gb, fd_b)

    def test_non_responsible_box_perturbation_is_inert(self):
        bag = self.make_bag()
        params = MilParams.random_init(2, 4, seed=7)
        f = instance_scores(bag.features, params)
        responsible = set(f.argmax(axis=0))
        others = [i for i in range(3) if i not in responsible]
        if not others:
            pytest.skip("all boxes responsible for this draw")
        _, gw0, gb0 = bag_loss_and_grads(bag, params)
        bag.features[others[0]] += 1e-6   # below the argmax gap
        _, gw1, gb1 = bag_loss_and_grads(bag, params)
        assert np.allclose(gw0, gw1)
        assert np.allclose(gb0, gb1)


class TestTrainMil:
    def make_separable_bags(self, n=40, C=3, d=6, seed=8):
        rng = np.random.default_rng(seed)
        sigs = np.eye(C, d)
        bags = []
        for i in range(n):
            c = i % C
            feats = np.stack([sigs[c] + rng.normal(size=d) * 0.05,
                              rng.normal(size=d) * 0.05])
            labels = np.zeros(C)
            labels[c] = 1.0
            boxes = [Box(0.1, 0.1, 0.4, 0.4), Box(0.5, 0.5, 0.9, 0.9)]
            bags.append(InstanceBag(f"img{i}", feats, boxes, labels))
        return bags

    def test_zero_steps_unchanged(self):
        bags = self.make_separable_bags()
        init = MilParams.random_init(3, 6, seed=9)
        out = train_mil(bags, TrainConfig(steps=0, seed=9), params=init)
        assert np.array_equal(out.class_weights, init.class_weights)

    def test_separable_bags_learned(self):
        bags = self.make_separable_bags()
        params = train_mil(bags, TrainConfig(steps=1000, learning_rate=0.5,
                                             seed=10))
        hits = 0
        for bag in bags:
            f = instance_scores(bag.features, params)
            pred = int(np.argmax(f.max(axis=0)))
            hits += int(pred == int(np.argmax(bag.labels)))
        assert hits / len(bags) > 0.9

    def test_unusable_bags_rejected(self):
        bag = InstanceBag("x", np.zeros((1, 2)), [Box(0.1, 0.1, 0.5, 0.5)],
                          np.zeros(2))
        assert not bag.usable
        with pytest.raises(InvalidArgument):
            train_mil([bag], TrainConfig(steps=1))


class TestInstanceBagBuild:
    def test_no_matched_proposal_returns_none(self):
        fmap = np.zeros((4, 4, 2))
        bag = InstanceBag.build("x", fmap, [Box(0.0, 0.0, 0.2, 0.2)],
                                [Box(0.6, 0.6, 0.9, 0.9)], ["bear"], ["bear"])
        assert bag is None

    def test_build_matches_and_labels(self):
        fmap = np.ones((4, 4, 2))
        gt = Box(0.1, 0.1, 0.6, 0.6)
        bag = InstanceBag.build("x", fmap, [gt, Box(0.6, 0.7, 0.9, 0.95)],
                                [gt], ["a", "bear"], ["bear", "cake"])
        assert bag.usable
        assert len(bag.boxes) == 1
        assert np.allclose(bag.labels, [1.0, 0.0])


class TestDetect:
    def make_scene(self):
        d = 4
        fmap = np.zeros((8, 8, d))
        gt1 = Box(0.1, 0.1, 0.45, 0.45)
        gt2 = Box(0.55, 0.55, 0.9, 0.9)
        fmap[1:4, 1:4] = np.eye(d)[0]     # class 0 signature
        fmap[5:8, 5:8] = np.eye(d)[1]     # class 1 signature
        heat1 = np.zeros((64, 64))
        heat1[6:29, 6:29] = 1.0
        heat2 = np.zeros((64, 64))
        heat2[35:58, 35:58] = 1.0
        maps = [ActivationMap(10, heat1), ActivationMap(11, heat2)]
        mil = MilParams(np.eye(2, d) * 5.0, np.zeros(2))
        return fmap, maps, mil, gt1, gt2

    def test_single_proposal(self):
        fmap, maps, mil, gt1, _ = self.make_scene()
        out = detect(fmap, [gt1], maps, mil, [10, 11])
        assert len(out) == 1
        assert out[0].class_word == 10

    def test_two_objects_detected_with_classes(self):
        fmap, maps, mil, gt1, gt2 = self.make_scene()
        proposals = [gt1, gt2, Box(0.3, 0.3, 0.7, 0.7),
                     Box(0.05, 0.5, 0.4, 0.95)]
        out = detect(fmap, proposals, maps, mil, [10, 11],
                     ScoringConfig(top_k=2))
        assert len(out) == 2
        found = {b.class_word: b for b in out}
        assert set(found) == {10, 11}
        from capground.objectness import iou
        assert iou(found[10], gt1) >= 0.5
        assert iou(found[11], gt2) >= 0.5

    def test_no_proposals(self):
        fmap, maps, mil, _, _ = self.make_scene()
        assert detect(fmap, [], maps, mil, [10, 11]) == []

    def test_classify_box_probabilities(self):
        p = classify_box(np.array([1.0, 0.0]),
                         MilParams(np.eye(2) * 2.0, np.zeros(2)))
        assert abs(p.sum() - 1.0) < 1e-12
        assert p[0] > p[1]
