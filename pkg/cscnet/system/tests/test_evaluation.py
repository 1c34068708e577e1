import logging
import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from cscnet.system.data import SynthSpec, generate_synthetic_dataset
from cscnet.system.evaluation import (
    EvalReport,
    ScoreMatrix,
    accuracy_at_bias,
    bias_grid,
    evaluate,
    primitive_accuracy,
    score_matrix,
)
from cscnet.system.models import CSCNet
from cscnet.system.semantics import generate_synthetic_embeddings

logging.basicConfig(level=logging.INFO)
log = logging.getLogger(__name__)
log.setLevel(logging.DEBUG)


def _oracle(scores, truths, unseen_mask, grid):
    """Loop by loop metrics over the same bias grid."""
    points = []
    for bias in grid:
        hits = {True: [], False: []}
        for row, truth in zip(scores, truths):
            best = 0
            for k in range(len(row)):
                value = row[k] + (bias if unseen_mask[k] else 0.0)
                best_value = row[best] + (bias if unseen_mask[best] else 0.0)
                if value > best_value:
                    best = k
            hits[bool(unseen_mask[truth])].append(best == truth)
        points.append((np.mean(hits[False]), np.mean(hits[True])))

    seen = max(s for s, _ in points)
    unseen = max(u for _, u in points)
    hm = max(2 * s * u / (s + u) if s + u > 0 else 0.0 for s, u in points)

    best_seen = {}
    for s, u in points:
        best_seen[u] = max(s, best_seen.get(u, 0.0))
    xs = sorted(best_seen)
    auc = 0.0
    for x0, x1 in zip(xs[:-1], xs[1:]):
        auc += (x1 - x0) * (best_seen[x0] + best_seen[x1]) / 2.0
    return seen, unseen, hm, auc


def _random_matrix(seed, n_samples=40, n_pairs=7, n_unseen=3):
    rs = np.random.RandomState(seed)
    unseen_mask = np.zeros(n_pairs, dtype=bool)
    unseen_mask[rs.choice(n_pairs, n_unseen, replace=False)] = True
    truths = np.concatenate(
        [
            rs.choice(np.where(~unseen_mask)[0], n_samples // 2),
            rs.choice(np.where(unseen_mask)[0], n_samples - n_samples // 2),
        ]
    )
    # scores lean towards the truth so the curve is not trivial
    scores = rs.randn(n_samples, n_pairs)
    scores[np.arange(n_samples), truths] += 1.0
    scores[:, unseen_mask] -= 0.5
    return ScoreMatrix(scores, truths, unseen_mask)


def _tied_matrix(seed):
    """Small integer score matrix, ties on most rows."""
    rs = np.random.RandomState(seed)
    n_pairs = rs.randint(2, 7)
    n_samples = rs.randint(2, 9)
    unseen_mask = np.zeros(n_pairs, dtype=bool)
    unseen_mask[rs.choice(n_pairs, rs.randint(1, n_pairs), replace=False)] = True
    truths = np.concatenate(
        [
            rs.choice(np.where(~unseen_mask)[0], 1),
            rs.choice(np.where(unseen_mask)[0], 1),
            rs.randint(n_pairs, size=n_samples - 2),
        ]
    )
    scores = rs.randint(0, 3, size=(n_samples, n_pairs)).astype(float)
    return ScoreMatrix(scores, truths, unseen_mask)


class BiasSweepTests(unittest.TestCase):
    """Calibration sweep, HM and AUC."""

    @classmethod
    def setUpClass(self):
        self.hand = ScoreMatrix(
            [[0.9, 0.1, 0.5], [0.2, 0.3, 0.6], [0.4, 0.1, 0.35]],
            [0, 1, 2],
            [False, False, True],
        )

    def test_hand_matrix(self):
        self.assertEqual(accuracy_at_bias(self.hand, 0.0), (0.5, 0.0))
        self.assertEqual(accuracy_at_bias(self.hand, 0.6), (0.0, 1.0))
        self.assertEqual(accuracy_at_bias(self.hand, 0.1), (0.5, 1.0))
        self.assertEqual(accuracy_at_bias(self.hand, -0.4), (1.0, 0.0))

    def test_hand_report(self):
        report = evaluate(self.hand, n_biases=50)
        self.assertEqual(report.seen, 1.0)
        self.assertEqual(report.unseen, 1.0)
        self.assertAlmostEqual(report.hm, 2 * 0.5 / 1.5, places=12)

    def test_matches_oracle(self):
        for seed in range(5):
            sm = _random_matrix(seed)
            report = evaluate(sm, n_biases=30)
            expected = _oracle(
                sm.scores, sm.truths, sm.unseen_mask, bias_grid(sm, 30)
            )
            for value, oracle in zip(
                (report.seen, report.unseen, report.hm, report.auc), expected
            ):
                self.assertAlmostEqual(value, oracle, delta=1e-12)

    def test_matches_oracle_with_ties(self):
        for seed in range(40):
            sm = _tied_matrix(seed)
            for n_biases in (2, 5, 9):
                report = evaluate(sm, n_biases=n_biases)
                expected = _oracle(
                    sm.scores, sm.truths, sm.unseen_mask, bias_grid(sm, n_biases)
                )
                for value, oracle in zip(
                    (report.seen, report.unseen, report.hm, report.auc), expected
                ):
                    self.assertAlmostEqual(
                        value, oracle, delta=1e-12, msg="seed {}".format(seed)
                    )

    def test_grid(self):
        sm = ScoreMatrix([[0.0, 3.0], [1.0, 2.0]], [0, 1], [False, True])
        grid = bias_grid(sm, 4)
        np.testing.assert_allclose(grid, [-6.0, -3.0, -1.0, 1.0, 3.0, 6.0])

        flat = ScoreMatrix(np.zeros((2, 2)), [0, 1], [False, True])
        np.testing.assert_array_equal(bias_grid(flat, 2), [-1.0, 0.0, 0.0, 1.0])

    def test_perfect_scorer(self):
        truths = np.array([0, 1, 2, 3, 1, 2])
        scores = np.eye(4)[truths]
        report = evaluate(ScoreMatrix(scores, truths, [False, False, True, True]))
        self.assertEqual(
            (report.seen, report.unseen, report.hm, report.auc),
            (1.0, 1.0, 1.0, 1.0),
        )

    def test_constant_scorer(self):
        sm = ScoreMatrix(np.zeros((4, 4)), [0, 1, 2, 3], [False, False, True, True])
        report = evaluate(sm)
        self.assertEqual(report.seen, 0.5)
        self.assertEqual(report.unseen, 0.5)
        self.assertEqual(report.hm, 0.0)
        self.assertAlmostEqual(report.auc, 0.125, places=12)

    def test_saturating_endpoints(self):
        sm = _random_matrix(9)
        curve = evaluate(sm).curve
        first = curve.iloc[0]
        last = curve.iloc[-1]
        self.assertEqual(first["unseen_acc"], 0.0)
        self.assertEqual(last["seen_acc"], 0.0)

        seen_only = sm.scores[:, ~sm.unseen_mask]
        seen_rows = ~sm.unseen_samples
        expected = np.mean(
            np.where(~sm.unseen_mask)[0][np.argmax(seen_only, axis=1)][seen_rows]
            == sm.truths[seen_rows]
        )
        self.assertAlmostEqual(first["seen_acc"], expected, places=12)

    def test_monotone_curve(self):
        curve = evaluate(_random_matrix(3)).curve
        self.assertTrue(np.all(np.diff(curve["bias"].values) >= 0))
        self.assertTrue(np.all(np.diff(curve["seen_acc"].values) <= 0))
        self.assertTrue(np.all(np.diff(curve["unseen_acc"].values) >= 0))

    def test_invariances(self):
        sm = _random_matrix(4)
        base = evaluate(sm).metrics()

        shifted = evaluate(
            ScoreMatrix(sm.scores + 3.0, sm.truths, sm.unseen_mask)
        ).metrics()
        scaled = evaluate(
            ScoreMatrix(sm.scores * 2.0, sm.truths, sm.unseen_mask)
        ).metrics()

        rs = np.random.RandomState(0)
        rows = rs.permutation(sm.scores.shape[0])
        cols = rs.permutation(sm.scores.shape[1])
        new_index = np.argsort(cols)
        permuted = evaluate(
            ScoreMatrix(
                sm.scores[rows][:, cols],
                new_index[sm.truths[rows]],
                sm.unseen_mask[cols],
            )
        ).metrics()

        for other in (shifted, scaled, permuted):
            for key, value in base.items():
                self.assertAlmostEqual(other[key], value, places=12, msg=key)

    def test_rejections(self):
        with self.assertRaises(ValueError):
            evaluate(ScoreMatrix(np.zeros((2, 2)), [0, 0], [False, True]))
        with self.assertRaises(ValueError):
            ScoreMatrix([[np.nan, 0.0]], [0], [False, True])
        with self.assertRaises(ValueError):
            ScoreMatrix([[0.0, 0.0]], [2], [False, True])
        with self.assertRaises(ValueError):
            ScoreMatrix([[0.0, 0.0]], [0, 1], [False, True])
        with self.assertRaises(ValueError):
            ScoreMatrix([[0.0, 0.0]], [0], [False])
        with self.assertRaises(ValueError):
            bias_grid(self.hand, 1)


class ReportTests(unittest.TestCase):
    """Report formatting and files."""

    @classmethod
    def setUpClass(self):
        self.tmp = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(self):
        shutil.rmtree(self.tmp)

    def test_summary_format(self):
        report = EvalReport(0.5, 0.25, 1.0 / 3.0, 0.125, pd.DataFrame())
        self.assertEqual(
            report.summary(), "seen=0.5000 unseen=0.2500 hm=0.3333 auc=0.1250"
        )
        self.assertEqual(
            sorted(report.metrics()), ["auc", "hm", "seen", "unseen"]
        )

    def test_write(self):
        report = evaluate(_random_matrix(2))
        curve_path, summary_path = report.write(
            os.path.join(self.tmp, "curve.csv"),
            os.path.join(self.tmp, "summary.txt"),
        )
        curve = pd.read_csv(curve_path)
        self.assertEqual(list(curve.columns), ["bias", "seen_acc", "unseen_acc"])
        self.assertEqual(curve.shape[0], 52)
        with open(summary_path) as f:
            self.assertEqual(f.read().strip(), report.summary())


class ModelScoringTests(unittest.TestCase):
    """Scoring a dataset with a model."""

    @classmethod
    def setUpClass(self):
        self.space = generate_synthetic_embeddings(3, 3, 4, seed=1)
        spec = SynthSpec(
            n_attrs=3, n_objs=3, d_x=5, samples_per_pair=4,
            seen_fraction=0.7, seed=1,
        )
        self.split = generate_synthetic_dataset(spec, self.space)
        self.model = CSCNet(
            {"d_x": 5, "d": 4, "d_v": 4, "d_c": 4, "hidden": 6}, random_state=2
        )

    def test_score_matrix_layout(self):
        sm = score_matrix(self.model, self.split, self.space, beta=0.3)
        features, truths = self.split.test_subset()
        self.assertEqual(sm.scores.shape, (features.shape[0], 9))
        np.testing.assert_array_equal(sm.truths, truths)
        np.testing.assert_array_equal(
            sm.unseen_mask, self.split.catalog.unseen_mask
        )

    def test_beta_endpoints(self):
        features, _ = self.split.test_subset()
        cascade, composition = self.model.inference_terms(
            features, self.space, self.split.catalog
        )
        zero = score_matrix(self.model, self.split, self.space, beta=0.0)
        one = score_matrix(self.model, self.split, self.space, beta=1.0)
        np.testing.assert_allclose(zero.scores, composition, atol=1e-12)
        np.testing.assert_allclose(one.scores, cascade, atol=1e-12)

    def test_primitive_accuracy_range(self):
        features, attr_ids, obj_ids, _ = self.split.subset("train")
        acc = primitive_accuracy(
            self.model, features, attr_ids, obj_ids, self.space
        )
        self.assertEqual(sorted(acc), ["attr", "obj"])
        for value in acc.values():
            self.assertTrue(0.0 <= value <= 1.0)


if __name__ == "__main__":
    unittest.main()
