import logging
import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from cscnet.comm.label_map import CzslLabels
from cscnet.system.data import (
    DatasetSplit,
    SynthSpec,
    batches,
    generate_synthetic_dataset,
    load_dataset,
    write_dataset,
)
from cscnet.system.semantics import (
    CompositionCatalog,
    SemanticSpace,
    generate_synthetic_embeddings,
)

logging.basicConfig(level=logging.INFO)
log = logging.getLogger(__name__)
log.setLevel(logging.DEBUG)

LABELS = u"""ripe apple train
sliced pear train
ripe apple test_seen
sliced apple test_unseen
"""


def _write_features(path, features):
    features = np.asarray(features, dtype="<f4")
    with open(path, "wb") as f:
        f.write(b"czsl-feat v1\n")
        f.write(np.asarray(features.shape, dtype="<u8").tobytes())
        f.write(features.tobytes())
    return path


def _small_split(n_train=10):
    """Two seen pairs, one unseen pair, n_train train samples."""
    d = CzslLabels().set_data_labels()
    catalog = CompositionCatalog([(0, 0), (0, 1), (1, 1)], [True, False, True])
    rows = (
        [(0, 0, d["train"])] * (n_train // 2)
        + [(1, 1, d["train"])] * (n_train - n_train // 2)
        + [(0, 0, d["test_seen"]), (0, 1, d["test_unseen"])]
    )
    labels = pd.DataFrame(rows, columns=[d["attr_id"], d["obj_id"], d["split"]])
    features = np.arange(len(rows) * 3, dtype=float).reshape(len(rows), 3)
    return DatasetSplit(features, labels, catalog)


class SynthesisTests(unittest.TestCase):
    """Synthetic compositional datasets."""

    @classmethod
    def setUpClass(self):
        self.space = generate_synthetic_embeddings(5, 5, 8, seed=3)
        self.spec = SynthSpec(
            n_attrs=5, n_objs=5, d_x=6, samples_per_pair=10, seed=3
        )
        self.split = generate_synthetic_dataset(self.spec, self.space)

    def test_seen_unseen_counts_and_coverage(self):
        catalog = self.split.catalog
        self.assertEqual(len(catalog), 25)
        self.assertEqual(int(catalog.seen_mask.sum()), 20)
        self.assertEqual(int(catalog.unseen_mask.sum()), 5)

        seen = catalog.pairs[catalog.seen_mask]
        self.assertEqual(set(seen[:, 0].tolist()), set(range(5)))
        self.assertEqual(set(seen[:, 1].tolist()), set(range(5)))

    def test_split_sizes(self):
        d = self.split.d
        counts = self.split.labels[d["split"]].value_counts()
        self.assertEqual(counts[d["train"]], 20 * 8)
        self.assertEqual(counts[d["test_seen"]], 20 * 2)
        self.assertEqual(counts[d["test_unseen"]], 5 * 10)
        self.assertEqual(self.split.features.dtype, np.float32)
        self.assertEqual(self.split.d_x, 6)
        self.assertEqual(len(self.split.train), 160)
        self.assertEqual(len(self.split.test), 90)

    def test_unseen_pairs_only_in_test_unseen(self):
        d = self.split.d
        unseen_ids = set(np.where(self.split.catalog.unseen_mask)[0].tolist())
        labels = self.split.labels
        in_unseen = labels[d["pair_id"]].isin(unseen_ids)
        self.assertTrue((labels.loc[in_unseen, d["split"]] == d["test_unseen"]).all())

    def test_deterministic(self):
        again = generate_synthetic_dataset(self.spec, self.space)
        self.assertEqual(again.fingerprint(), self.split.fingerprint())
        np.testing.assert_array_equal(again.features, self.split.features)

        other = SynthSpec(
            n_attrs=5, n_objs=5, d_x=6, samples_per_pair=10, seed=4
        )
        self.assertNotEqual(
            generate_synthetic_dataset(other, self.space).fingerprint(),
            self.split.fingerprint(),
        )

    def test_noise_free_samples_coincide(self):
        spec = SynthSpec(
            n_attrs=3, n_objs=3, d_x=4, samples_per_pair=5,
            seen_fraction=0.7, noise_sigma=0.0, seed=1,
        )
        space = generate_synthetic_embeddings(3, 3, 4, seed=1)
        split = generate_synthetic_dataset(spec, space)
        pair_ids = split.labels[split.d["pair_id"]].values
        for k in range(len(split.catalog)):
            rows = split.features[pair_ids == k]
            self.assertEqual(rows.shape[0], 5)
            np.testing.assert_array_equal(rows, np.tile(rows[0], (5, 1)))

    def test_disentangled_prototypes_are_additive(self):
        spec = SynthSpec(
            n_attrs=3, n_objs=3, d_x=4, samples_per_pair=2,
            seen_fraction=0.7, noise_sigma=0.0, entanglement=0.0, seed=2,
        )
        space = generate_synthetic_embeddings(3, 3, 4, seed=2)
        split = generate_synthetic_dataset(spec, space)
        catalog = split.catalog
        pair_ids = split.labels[split.d["pair_id"]].values
        proto = np.vstack(
            [split.features[pair_ids == k][0] for k in range(len(catalog))]
        ).astype(np.float64)

        def p(a, o):
            return proto[catalog.index_of([a], [o])[0]]

        for a in range(1, 3):
            np.testing.assert_allclose(
                p(a, 0) - p(a, 1), p(0, 0) - p(0, 1), atol=1e-4
            )

    def test_no_unseen_room(self):
        space = generate_synthetic_embeddings(2, 2, 4, seed=0)
        spec = SynthSpec(n_attrs=2, n_objs=2, seen_fraction=0.99)
        with self.assertRaises(ValueError) as ctx:
            generate_synthetic_dataset(spec, space)
        self.assertIn("no unseen", str(ctx.exception))

    def test_coverage_failure_names_primitive(self):
        space = generate_synthetic_embeddings(2, 3, 4, seed=0)
        spec = SynthSpec(n_attrs=2, n_objs=3, seen_fraction=0.2)
        with self.assertRaises(ValueError) as ctx:
            generate_synthetic_dataset(spec, space)
        self.assertTrue(
            any(name in str(ctx.exception)
                for name in space.attr_names + space.obj_names)
        )

    def test_spec_rejections(self):
        for kwargs in [
            {"samples_per_pair": 1},
            {"seen_fraction": 1.0},
            {"noise_sigma": -0.1},
            {"entanglement": 1.5},
        ]:
            with self.assertRaises(ValueError, msg=str(kwargs)):
                SynthSpec(**kwargs)
        with self.assertRaises(ValueError):
            generate_synthetic_dataset(SynthSpec(n_attrs=4), self.space)


class FileTests(unittest.TestCase):
    """Features and labels files."""

    @classmethod
    def setUpClass(self):
        self.tmp = tempfile.mkdtemp()
        self.labels_path = os.path.join(self.tmp, "labels.txt")
        with open(self.labels_path, "w") as f:
            f.write(LABELS)
        self.features_path = _write_features(
            os.path.join(self.tmp, "features.bin"),
            np.arange(8.0).reshape(4, 2),
        )

    @classmethod
    def tearDownClass(self):
        shutil.rmtree(self.tmp)

    def _write(self, name, text):
        path = os.path.join(self.tmp, name)
        with open(path, "w") as f:
            f.write(text)
        return path

    def test_load_fixture(self):
        split = load_dataset(self.features_path, self.labels_path)
        d = split.d
        np.testing.assert_array_equal(split.catalog.pairs, [[0, 0], [1, 0], [1, 1]])
        np.testing.assert_array_equal(split.catalog.unseen_mask, [False, True, False])
        np.testing.assert_array_equal(
            split.labels[d["pair_id"]].values, [0, 2, 0, 1]
        )

        features, pair_ids = split.test_subset()
        np.testing.assert_array_equal(features, [[4.0, 5.0], [6.0, 7.0]])
        np.testing.assert_array_equal(pair_ids, [0, 1])

    def test_load_with_space(self):
        space = SemanticSpace(
            ["sliced", "ripe"], ["pear", "apple"], np.eye(2), np.eye(2)
        )
        split = load_dataset(self.features_path, self.labels_path, space)
        np.testing.assert_array_equal(split.labels["attr_id"].values, [1, 0, 1, 0])
        self.assertIs(split.space, space)

    def test_unknown_name_with_space(self):
        space = SemanticSpace(["ripe"], ["apple", "pear"], np.eye(2)[:1], np.eye(2))
        with self.assertRaises(ValueError):
            load_dataset(self.features_path, self.labels_path, space)

    def test_unseen_pair_in_train(self):
        path = self._write(
            "leak.txt", LABELS.replace("ripe apple test_seen", "sliced apple train")
        )
        with self.assertRaises(ValueError) as ctx:
            load_dataset(self.features_path, path)
        self.assertIn("Train sample 2", str(ctx.exception))

    def test_bad_files(self):
        with self.assertRaises(ValueError):
            load_dataset(
                self.features_path,
                self._write("short.txt", LABELS.replace("sliced pear train", "sliced pear")),
            )
        with self.assertRaises(ValueError):
            load_dataset(
                self.features_path,
                self._write("rows.txt", LABELS + u"ripe apple train\n"),
            )

        with open(self.features_path, "rb") as f:
            blob = f.read()
        truncated = os.path.join(self.tmp, "truncated.bin")
        with open(truncated, "wb") as f:
            f.write(blob[:-3])
        with self.assertRaises(ValueError):
            load_dataset(truncated, self.labels_path)

        header = os.path.join(self.tmp, "header.bin")
        with open(header, "wb") as f:
            f.write(b"feat v0\n" + blob[len(b"czsl-feat v1\n"):])
        with self.assertRaises(ValueError):
            load_dataset(header, self.labels_path)

    def test_write_then_load(self):
        space = generate_synthetic_embeddings(3, 3, 4, seed=5)
        spec = SynthSpec(
            n_attrs=3, n_objs=3, d_x=5, samples_per_pair=4,
            seen_fraction=0.7, seed=5,
        )
        split = generate_synthetic_dataset(spec, space)
        paths = write_dataset(
            split,
            os.path.join(self.tmp, "synth.bin"),
            os.path.join(self.tmp, "synth.txt"),
        )
        loaded = load_dataset(paths[0], paths[1], space)
        self.assertEqual(loaded.fingerprint(), split.fingerprint())
        np.testing.assert_array_equal(loaded.catalog.seen_mask, split.catalog.seen_mask)


class SplitTests(unittest.TestCase):
    """Split validation and batching."""

    def test_empty_split_rejected(self):
        d = CzslLabels().set_data_labels()
        catalog = CompositionCatalog([(0, 0), (0, 1)], [True, False])
        labels = pd.DataFrame(
            [(0, 0, d["test_seen"]), (0, 1, d["test_unseen"])],
            columns=[d["attr_id"], d["obj_id"], d["split"]],
        )
        with self.assertRaises(ValueError) as ctx:
            DatasetSplit(np.zeros((2, 3)), labels, catalog)
        self.assertIn("train", str(ctx.exception))

    def test_non_finite_feature_rejected(self):
        split = _small_split()
        features = np.array(split.features)
        features[3, 1] = np.nan
        with self.assertRaises(ValueError) as ctx:
            DatasetSplit(features, split.labels, split.catalog)
        self.assertIn("3", str(ctx.exception))

    def test_batch_sizes_and_order(self):
        split = _small_split(10)
        sizes = [b.features.shape[0] for b in batches(split, 4, seed=0, epoch=0)]
        self.assertEqual(sizes, [4, 4, 2])

        one = batches(split, 4, seed=0, epoch=1)
        two = batches(split, 4, seed=0, epoch=1)
        for a, b in zip(one, two):
            np.testing.assert_array_equal(a.rows, b.rows)

        rows = np.concatenate([b.rows for b in one])
        self.assertEqual(sorted(rows.tolist()), list(range(10)))

        train = split.subset("train")
        for b in one:
            np.testing.assert_array_equal(b.features, train[0][b.rows])
            np.testing.assert_array_equal(b.attr_ids, train[1][b.rows])

    def test_epochs_reshuffle(self):
        split = _small_split(10)
        orders = [
            np.concatenate([b.rows for b in batches(split, 10, 0, epoch)])
            for epoch in range(4)
        ]
        self.assertTrue(
            any(not np.array_equal(orders[0], o) for o in orders[1:])
        )

    def test_bad_batch_size(self):
        with self.assertRaises(ValueError):
            batches(_small_split(), 0, seed=0, epoch=0)


if __name__ == "__main__":
    unittest.main()
