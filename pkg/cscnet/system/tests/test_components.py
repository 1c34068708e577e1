import logging
import unittest

import numpy as np

from cscnet.system.components import (
    EPS_LOG,
    branch_loss,
    composition_loss,
    non_param_cls,
    param_cls,
)
from cscnet.tools.numerics import (
    Mlp,
    Tensor,
    grad_check,
    mlp_forward,
    reduce_sum,
)

logging.basicConfig(level=logging.INFO)
log = logging.getLogger(__name__)
log.setLevel(logging.DEBUG)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class ClassifierTests(unittest.TestCase):
    """ParamCls and NonPaCls heads."""

    @classmethod
    def setUpClass(self):
        self.rs = np.random.RandomState(11)

    def test_zero_scorer_gives_one_half(self):
        scorer = Mlp(8, 5, 1)
        for p in scorer.parameters().values():
            p.value[...] = 0.0
        scores = param_cls(scorer, Tensor(np.ones(4)), np.ones((3, 4)))
        np.testing.assert_array_equal(scores.value, [0.5, 0.5, 0.5])

    def test_single_class(self):
        scorer = Mlp(6, 4, 1, random_state=3)
        v = self.rs.randn(3)
        S = self.rs.randn(1, 3)
        scores = param_cls(scorer, Tensor(v), S)
        raw = mlp_forward(scorer, np.concatenate([v, S[0]])).value[0]
        self.assertEqual(scores.shape, (1,))
        self.assertAlmostEqual(scores.value[0], _sigmoid(raw), places=14)

    def test_matches_per_row_oracle(self):
        scorer = Mlp(8, 6, 1, random_state=4)
        v = self.rs.randn(4)
        S = self.rs.randn(3, 4)
        scores = param_cls(scorer, Tensor(v), S).value
        for i in range(3):
            x = np.concatenate([v, S[i]])
            h = np.maximum(scorer.w1.value @ x + scorer.b1.value, 0.0)
            raw = scorer.w2.value @ h + scorer.b2.value
            self.assertAlmostEqual(scores[i], _sigmoid(raw[0]), places=14)
            self.assertTrue(0.0 < scores[i] < 1.0)

    def test_batched_rows_match_single(self):
        scorer = Mlp(7, 5, 1, random_state=6)
        V = self.rs.randn(3, 4)
        S = self.rs.randn(5, 3)
        batch = param_cls(scorer, Tensor(V), S).value
        for b in range(3):
            np.testing.assert_allclose(
                batch[b], param_cls(scorer, Tensor(V[b]), S).value, atol=1e-14
            )

    def test_param_cls_errors(self):
        scorer = Mlp(8, 5, 1)
        with self.assertRaises(ValueError):
            param_cls(scorer, Tensor(np.ones(4)), np.ones((0, 4)))
        with self.assertRaises(ValueError):
            param_cls(scorer, Tensor(np.ones(4)), np.ones((3, 5)))

    def test_identical_candidates_are_uniform(self):
        v = self.rs.randn(5)
        probs = non_param_cls(Tensor(v), np.tile(v, (4, 1))).value
        np.testing.assert_allclose(probs, np.full(4, 0.25), atol=1e-12)

    def test_hand_softmax(self):
        probs = non_param_cls(
            Tensor([1.0, 0.0]), np.array([[2.0, 0.0], [-3.0, 0.0]]), 1.0
        ).value
        e = np.exp([1.0, -1.0])
        np.testing.assert_allclose(probs, e / e.sum(), atol=1e-10)
        self.assertAlmostEqual(probs[0], 0.8808, places=4)

    def test_single_candidate(self):
        probs = non_param_cls(Tensor(self.rs.randn(3)), self.rs.randn(1, 3))
        self.assertEqual(probs.value[0], 1.0)

    def test_sums_to_one(self):
        probs = non_param_cls(Tensor(self.rs.randn(6, 4)), self.rs.randn(9, 4))
        np.testing.assert_allclose(probs.value.sum(axis=1), np.ones(6), atol=1e-10)

    def test_non_param_errors(self):
        with self.assertRaises(ValueError):
            non_param_cls(Tensor([np.nan, 1.0]), np.ones((2, 2)))
        with self.assertRaises(ValueError):
            non_param_cls(Tensor([1.0, 1.0]), np.ones((2, 2)), temperature=0.0)

    def test_gradients_reach_scorer_and_table(self):
        scorer = Mlp(6, 4, 1, random_state=8)
        v = Tensor(self.rs.randn(2, 3), requires_grad=True)
        S = Tensor(self.rs.randn(4, 3), requires_grad=True)
        w = Tensor(self.rs.randn(2, 4))
        params = dict(scorer.parameters(), v=v, S=S)
        report = grad_check(
            lambda: reduce_sum(param_cls(scorer, v, S) * w), params
        )
        self.assertTrue(report.passed, msg=repr(report))


class LossTests(unittest.TestCase):
    """Branch and composition losses."""

    def test_single_class_half(self):
        loss = branch_loss(Tensor([0.5]), 0)
        self.assertAlmostEqual(loss.item(), np.log(2.0), places=12)

    def test_perfect_prediction(self):
        loss = branch_loss(Tensor([1.0 - EPS_LOG, EPS_LOG, EPS_LOG]), 0)
        self.assertLess(loss.item(), 1e-6)

    def test_two_halves(self):
        loss = branch_loss(Tensor([0.5, 0.5]), 1)
        self.assertAlmostEqual(loss.item(), np.log(2.0), places=12)

    def test_saturated_scores_stay_finite(self):
        loss = branch_loss(Tensor([0.0, 1.0]), 0)
        self.assertTrue(np.isfinite(loss.item()))
        self.assertAlmostEqual(loss.item(), -np.log(EPS_LOG), places=6)

    def test_positive_only(self):
        scores = Tensor([0.9, 0.8, 0.7])
        self.assertAlmostEqual(
            branch_loss(scores, 0, positive_only=True).item(), -np.log(0.9)
        )

    def test_batch_mean(self):
        scores = Tensor([[0.9, 0.2], [0.3, 0.6]])
        batch = branch_loss(scores, [0, 1]).item()
        rows = [
            branch_loss(Tensor([0.9, 0.2]), 0).item(),
            branch_loss(Tensor([0.3, 0.6]), 1).item(),
        ]
        self.assertAlmostEqual(batch, np.mean(rows), places=12)

    def test_invalid_index(self):
        with self.assertRaises(ValueError):
            branch_loss(Tensor([0.5, 0.5]), 2)
        with self.assertRaises(ValueError):
            composition_loss(Tensor([0.5, 0.5]), -1)

    def test_composition_loss_values(self):
        self.assertAlmostEqual(
            composition_loss(Tensor(np.full(4, 0.25)), 2).item(), np.log(4.0)
        )
        self.assertEqual(composition_loss(Tensor([1.0, 0.0]), 0).item(), 0.0)
        self.assertAlmostEqual(
            composition_loss(Tensor([np.exp(-2.0), 1 - np.exp(-2.0)]), 0).item(),
            2.0,
            places=12,
        )


if __name__ == "__main__":
    unittest.main()
