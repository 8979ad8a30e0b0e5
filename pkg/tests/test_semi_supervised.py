"""Pseudo-label rule, masked pseudo loss, and the round loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from udeer.diff_engine import Tape, Tensor, sigmoid
from udeer.errors import EmptyLabeledSet
from udeer.kitti_io import GroundTruthMask, SynthConfig, synth_scene
from udeer.model import (
    LossWeights,
    ModelOutputs,
    forward,
    init_model_params,
    prepare_frame,
    total_loss,
)
from udeer.semi_supervised import (
    SemiConfig,
    generate_pseudo_labels,
    pseudo_from_probs,
    pseudo_loss,
    semi_supervised_rounds,
)

SMALL = SynthConfig(height=32, width=32, obstacle_count=2)


def outputs_from_grids(fine, image, lidar, depth):
    return ModelOutputs(
        fine=Tensor(fine[None, None]),
        image_aux=Tensor(image[None, None]),
        lidar_aux=Tensor(lidar[None, None]),
        depth_aux=Tensor(depth[None, None]),
    )


class TestPseudoRule:
    def test_tau_zero_includes_everything(self):
        prob = np.random.default_rng(0).uniform(size=(6, 6))
        assert pseudo_from_probs(prob, 0.0).included.all()

    def test_tau_one_includes_only_certainty(self):
        prob = np.array([[0.0, 0.3, 0.5, 1.0]])
        included = pseudo_from_probs(prob, 1.0).included
        assert included.tolist() == [[True, False, False, True]]

    def test_hand_evaluated_row(self):
        prob = np.array([[0.95, 0.60, 0.10]])
        ps = pseudo_from_probs(prob, 0.8)
        assert ps.labels.tolist() == [[1, 1, 0]]
        assert np.allclose(ps.confidence, [[0.95, 0.60, 0.90]], atol=1e-15, rtol=0)
        assert ps.included.tolist() == [[True, False, True]]

    def test_scalar_oracle(self):
        rng = np.random.default_rng(4)
        prob = rng.uniform(size=(5, 7))
        tau = 0.75
        ps = pseudo_from_probs(prob, tau)
        for y in range(5):
            for x in range(7):
                p = prob[y, x]
                assert ps.labels[y, x] == (1 if p >= 0.5 else 0)
                assert ps.confidence[y, x] == max(p, 1 - p)
                assert ps.included[y, x] == (max(p, 1 - p) >= tau)

    def test_ties_at_half_label_one(self):
        ps = pseudo_from_probs(np.array([[0.5]]), 0.5)
        assert ps.labels[0, 0] == 1
        assert ps.included[0, 0]

    def test_confidence_range(self):
        prob = np.random.default_rng(1).uniform(size=(20, 20))
        conf = pseudo_from_probs(prob, 0.9).confidence
        assert (conf >= 0.5).all() and (conf <= 1.0).all()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1))
    def test_threshold_monotonicity(self, seed, tau_a, tau_b):
        lo, hi = sorted((tau_a, tau_b))
        prob = np.random.default_rng(seed).uniform(size=(8, 8))
        s_lo = pseudo_from_probs(prob, lo).included
        s_hi = pseudo_from_probs(prob, hi).included
        assert (s_hi <= s_lo).all()  # S(tau_hi) is a subset of S(tau_lo)


class TestGeneratePseudoLabels:
    def test_idempotent_without_parameter_update(self):
        params = init_model_params(2)
        frame = synth_scene(77, SMALL)
        a = generate_pseudo_labels(params, frame, 0.9)
        b = generate_pseudo_labels(params, frame, 0.9)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.confidence, b.confidence)
        assert np.array_equal(a.included, b.included)
        assert a.tau == 0.9

    def test_matches_forward_probabilities(self):
        params = init_model_params(3)
        frame = synth_scene(78, SMALL)
        prep = prepare_frame(frame)
        prob = forward(params, prep.image, prep.lidar, prep.depth).fine_prob
        ps = generate_pseudo_labels(params, frame, 0.7)
        assert np.array_equal(ps.labels, (prob >= 0.5).astype(np.uint8))


class TestPseudoLoss:
    def test_empty_set_gives_zero_loss_and_grads(self):
        params = init_model_params(1)
        frame = synth_scene(79, SMALL)
        prep = prepare_frame(frame)
        pseudo = pseudo_from_probs(np.full((32, 32), 0.6), tau=0.99)  # nothing included
        assert not pseudo.included.any()
        with Tape() as tape:
            out = forward(params, prep.image, prep.lidar, prep.depth)
            loss = pseudo_loss(out, pseudo, LossWeights())
            tape.backward(loss)
        assert loss.item() == 0.0
        for name, t in params.tensors.items():
            assert np.array_equal(t.grad, np.zeros_like(t.data)), name
            t.grad = None

    def test_saturated_set_equals_total_loss(self):
        params = init_model_params(5)
        frame = synth_scene(80, SMALL)
        prep = prepare_frame(frame)
        out = forward(params, prep.image, prep.lidar, prep.depth)
        pseudo = pseudo_from_probs(out.fine_prob, tau=0.0)  # all included
        gt = GroundTruthMask(grid=pseudo.labels)  # same labels, all pixels valid
        a = pseudo_loss(out, pseudo, LossWeights()).item()
        b = total_loss(out, gt, LossWeights()).item()
        assert a == b

    def test_matches_scalar_oracle_restricted_to_s(self):
        rng = np.random.default_rng(9)
        grids = [rng.uniform(0, 1, size=(6, 6)) for _ in range(4)]
        out = outputs_from_grids(*grids)
        pseudo = pseudo_from_probs(rng.uniform(0, 1, size=(6, 6)), tau=0.7)

        def oracle(prob):
            eps = 1e-7
            total, wsum = 0.0, 0.0
            for p, t, inc in zip(
                prob.reshape(-1), pseudo.labels.reshape(-1), pseudo.included.reshape(-1)
            ):
                if not inc:
                    continue
                pc = min(max(p, eps), 1 - eps)
                total += -(t * math.log(pc) + (1 - t) * math.log(1 - pc))
                wsum += 1.0
            return total / max(wsum, 1.0)

        want = oracle(grids[0]) + 0.4 * (oracle(grids[1]) + oracle(grids[2]) + oracle(grids[3]))
        got = pseudo_loss(out, pseudo, LossWeights()).item()
        assert abs(got - want) < 1e-12

    def test_excluded_pixel_logit_gradient_exactly_zero(self):
        rng = np.random.default_rng(3)
        logits = Tensor(rng.normal(size=(1, 1, 5, 5)), requires_grad=True)
        pseudo = pseudo_from_probs(rng.uniform(size=(5, 5)), tau=0.8)
        assert (~pseudo.included).any() and pseudo.included.any()
        with Tape() as tape:
            prob = sigmoid(logits)
            out = ModelOutputs(fine=prob, image_aux=prob, lidar_aux=prob, depth_aux=prob)
            loss = pseudo_loss(out, pseudo, LossWeights(0, 0, 0))
            tape.backward(loss)
        grad = logits.grad[0, 0]
        assert np.all(grad[~pseudo.included] == 0.0)
        assert np.all(grad[pseudo.included] != 0.0)


class TestRounds:
    def make_sets(self):
        labeled = [synth_scene(300 + k, SMALL) for k in range(2)]
        unlabeled = [synth_scene(400 + k, SMALL) for k in range(3)]
        return labeled, unlabeled

    def test_zero_rounds_returns_init_unchanged(self):
        labeled, unlabeled = self.make_sets()
        init = init_model_params(0)
        out, reports = semi_supervised_rounds(init, labeled, unlabeled, SemiConfig(rounds=0))
        assert reports == []
        for name, t in init.tensors.items():
            assert np.array_equal(out.tensors[name].data, t.data)
        assert out is not init  # fresh copy, init untouched

    def test_empty_labeled_rejected(self):
        with pytest.raises(EmptyLabeledSet):
            semi_supervised_rounds(init_model_params(0), [], [], SemiConfig())

    def test_empty_unlabeled_pool_uses_labeled_only(self):
        labeled, _ = self.make_sets()
        cfg = SemiConfig(rounds=2, steps_per_round=3, labeled_mix=0.2, seed=1, lr=0.05)
        out, reports = semi_supervised_rounds(init_model_params(0), labeled, [], cfg)
        for report in reports:
            assert report.pseudo_loss is None  # pseudo branch never drawn
            assert report.labeled_loss is not None
            assert report.included_fraction == 0.0

    def test_deterministic_per_seed(self):
        labeled, unlabeled = self.make_sets()
        cfg = SemiConfig(rounds=1, steps_per_round=4, seed=3, lr=0.05)
        a, ra = semi_supervised_rounds(init_model_params(0), labeled, unlabeled, cfg)
        b, rb = semi_supervised_rounds(init_model_params(0), labeled, unlabeled, cfg)
        for name in a.tensors:
            assert np.array_equal(a.tensors[name].data, b.tensors[name].data)
        assert [r.as_dict() for r in ra] == [r.as_dict() for r in rb]

    def test_reports_cover_rounds_and_heldout(self):
        labeled, unlabeled = self.make_sets()
        heldout = [synth_scene(500, SMALL)]
        cfg = SemiConfig(rounds=2, steps_per_round=2, seed=0, lr=0.05)
        _, reports = semi_supervised_rounds(
            init_model_params(0), labeled, unlabeled, cfg, heldout=heldout
        )
        assert [r.round for r in reports] == [0, 1]
        for report in reports:
            assert 0.5 <= report.mean_confidence <= 1.0
            assert 0.0 <= report.included_fraction <= 1.0
            assert report.heldout_maxf is not None
            assert 0.0 <= report.heldout_maxf <= 100.0
