import hashlib
import io
import logging
from collections import namedtuple

import numpy as np
import pandas as pd

from cscnet.comm.label_map import CzslLabels
from cscnet.system.semantics import CompositionCatalog, _seed_words

log = logging.getLogger(__name__)

Sample = namedtuple("Sample", ["feature", "attr_id", "obj_id"])

Batch = namedtuple("Batch", ["features", "attr_ids", "obj_ids", "rows"])

# random streams derived from the data seed
_PROTOTYPE_STREAM = 1
_SPLIT_STREAM = 2


class SynthSpec(object):
    """Synthetic compositional dataset description.

    Parameters:

        n_attrs, n_objs: int
            Number of attributes and objects

        d_x: int
            Feature width

        samples_per_pair: int
            Samples drawn around every pair prototype, >= 2

        seen_fraction: float
            Share of pairs that are seen, strictly in (0, 1)

        noise_sigma: float
            Standard deviation of the Gaussian sample noise, >= 0

        entanglement: float
            Weight of the multiplicative attribute-object
            term in the prototypes, in [0, 1]

        seed: int
            Data seed

        test_fraction: float
            Share of every seen pair's samples held out as test_seen
            Default: 0.2
    """

    def __init__(
        self,
        n_attrs=5,
        n_objs=5,
        d_x=32,
        samples_per_pair=30,
        seen_fraction=0.8,
        noise_sigma=0.1,
        entanglement=0.5,
        seed=0,
        test_fraction=0.2,
    ):
        self.n_attrs = int(n_attrs)
        self.n_objs = int(n_objs)
        self.d_x = int(d_x)
        self.samples_per_pair = int(samples_per_pair)
        self.seen_fraction = float(seen_fraction)
        self.noise_sigma = float(noise_sigma)
        self.entanglement = float(entanglement)
        self.seed = int(seed)
        self.test_fraction = float(test_fraction)

        self.validate()

    def validate(self):
        checks = [
            (self.n_attrs >= 1, "n_attrs must be >= 1, got {}", self.n_attrs),
            (self.n_objs >= 1, "n_objs must be >= 1, got {}", self.n_objs),
            (self.d_x >= 1, "d_x must be >= 1, got {}", self.d_x),
            (
                self.samples_per_pair >= 2,
                "samples_per_pair must be >= 2, got {}",
                self.samples_per_pair,
            ),
            (
                0.0 < self.seen_fraction < 1.0,
                "seen_fraction must lie in (0, 1), got {}",
                self.seen_fraction,
            ),
            (
                self.noise_sigma >= 0.0,
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma,
            ),
            (
                0.0 <= self.entanglement <= 1.0,
                "entanglement must lie in [0, 1], got {}",
                self.entanglement,
            ),
            (
                0.0 < self.test_fraction < 1.0,
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction,
            ),
        ]
        for ok, msg, value in checks:
            if not ok:
                log.error(msg.format(value))
                raise ValueError(msg.format(value))


class DatasetSplit(object):
    """Features plus a labels table with the train, test_seen
    and test_unseen splits of a compositional dataset.

    Parameters:

        features: array, rows x d_x
            Stored at 32-bit precision, the file precision

        labels: pd.DataFrame
            Columns attr, obj, attr_id, obj_id, split, one row
            per feature row. The pair_id column gets (re)computed
            from the catalog.

        catalog: CompositionCatalog

        space: SemanticSpace or None

    Note:

        Every construction path validates the split and rejects
        violations, nothing gets repaired.
    """

    def __init__(self, features, labels, catalog, space=None):

        self.d = CzslLabels().set_data_labels()

        features = np.asarray(features, dtype=np.float32)
        if features.ndim != 2:
            msg = "Features must be a rows x d_x matrix, got shape {}."
            log.error(msg.format(features.shape))
            raise ValueError(msg.format(features.shape))

        self.features = features
        self.features.setflags(write=False)
        self.catalog = catalog
        self.space = space

        labels = labels.reset_index(drop=True).copy()
        self.labels = labels

        self.validate()

        self.labels[self.d["pair_id"]] = catalog.index_of(
            labels[self.d["attr_id"]].values, labels[self.d["obj_id"]].values
        )

    @property
    def d_x(self):
        return self.features.shape[1]

    def validate(self):
        """Checks the split invariants.

        Raises:

            ValueError naming the offending sample, pair or primitive
        """
        d = self.d
        labels = self.labels
        catalog = self.catalog

        if labels.shape[0] != self.features.shape[0]:
            msg = "{} label rows do not match {} feature rows."
            log.error(msg.format(labels.shape[0], self.features.shape[0]))
            raise ValueError(msg.format(labels.shape[0], self.features.shape[0]))

        if not np.all(np.isfinite(self.features)):
            row = int(np.where(~np.all(np.isfinite(self.features), axis=1))[0][0])
            msg = "Feature row {} is not finite."
            log.error(msg.format(row))
            raise ValueError(msg.format(row))

        known = {d["train"], d["test_seen"], d["test_unseen"]}
        bad = ~labels[d["split"]].isin(known)
        if bad.any():
            row = int(np.where(bad)[0][0])
            msg = "Sample {} has an unknown split '{}'."
            log.error(msg.format(row, labels[d["split"]].iloc[row]))
            raise ValueError(msg.format(row, labels[d["split"]].iloc[row]))

        lookup = {
            (a, o): k for k, (a, o) in enumerate(catalog.pairs.tolist())
        }
        names = self._pair_names(labels)
        for row, (a, o, split) in enumerate(
            zip(
                labels[d["attr_id"]].values,
                labels[d["obj_id"]].values,
                labels[d["split"]].values,
            )
        ):
            k = lookup.get((int(a), int(o)))
            if k is None:
                msg = "Sample {} pair {} is not in the catalog."
                log.error(msg.format(row, names[row]))
                raise ValueError(msg.format(row, names[row]))
            seen = bool(catalog.seen_mask[k])
            if split == d["train"] and not seen:
                msg = "Train sample {} has the unseen pair {}."
                log.error(msg.format(row, names[row]))
                raise ValueError(msg.format(row, names[row]))
            if split == d["test_seen"] and not seen:
                msg = "test_seen sample {} has the unseen pair {}."
                log.error(msg.format(row, names[row]))
                raise ValueError(msg.format(row, names[row]))
            if split == d["test_unseen"] and seen:
                msg = "test_unseen sample {} has the seen pair {}."
                log.error(msg.format(row, names[row]))
                raise ValueError(msg.format(row, names[row]))

        for split in (d["train"], d["test_seen"], d["test_unseen"]):
            if not (labels[d["split"]] == split).any():
                msg = "The {} split is empty."
                log.error(msg.format(split))
                raise ValueError(msg.format(split))

        seen_pairs = catalog.pairs[catalog.seen_mask]
        for kind, column, count in [
            ("attribute", 0, int(catalog.pairs[:, 0].max()) + 1),
            ("object", 1, int(catalog.pairs[:, 1].max()) + 1),
        ]:
            if self.space is not None:
                count = self.space.n if column == 0 else self.space.m
            covered = set(seen_pairs[:, column].tolist())
            for i in range(count):
                if i not in covered:
                    msg = "The {} {} is not covered by any seen pair."
                    log.error(msg.format(kind, self._primitive_name(column, i)))
                    raise ValueError(
                        msg.format(kind, self._primitive_name(column, i))
                    )

        return True

    def _pair_names(self, labels):
        d = self.d
        if d["attr"] in labels and d["obj"] in labels:
            return [
                "({}, {})".format(a, o)
                for a, o in zip(labels[d["attr"]], labels[d["obj"]])
            ]
        return [
            "({}, {})".format(a, o)
            for a, o in zip(labels[d["attr_id"]], labels[d["obj_id"]])
        ]

    def _primitive_name(self, column, i):
        if self.space is not None:
            names = self.space.attr_names if column == 0 else self.space.obj_names
            return "'{}'".format(names[i])
        return "id {}".format(i)

    def _rows(self, split):
        return np.where(self.labels[self.d["split"]].values == split)[0]

    def subset(self, split):
        """(features, attr_ids, obj_ids, pair_ids) of one split."""
        d = self.d
        rows = self._rows(d[split] if split in d else split)
        labels = self.labels.iloc[rows]
        return (
            self.features[rows],
            labels[d["attr_id"]].values.astype(np.int64),
            labels[d["obj_id"]].values.astype(np.int64),
            labels[d["pair_id"]].values.astype(np.int64),
        )

    @property
    def train(self):
        return self.samples("train")

    @property
    def test(self):
        return self.samples("test_seen") + self.samples("test_unseen")

    def samples(self, split):
        features, attr_ids, obj_ids, _ = self.subset(split)
        return [
            Sample(f, int(a), int(o))
            for f, a, o in zip(features, attr_ids, obj_ids)
        ]

    def test_subset(self):
        """Features and pair ids of test_seen followed by test_unseen."""
        seen = self.subset("test_seen")
        unseen = self.subset("test_unseen")
        return (
            np.concatenate([seen[0], unseen[0]]),
            np.concatenate([seen[3], unseen[3]]),
        )

    def fingerprint(self):
        """sha256 over the features and the labels."""
        d = self.d
        sha = hashlib.sha256()
        sha.update(self.features.astype("<f4").tobytes())
        cols = [d["attr_id"], d["obj_id"], d["split"]]
        sha.update(self.labels[cols].to_csv(index=False).encode("utf-8"))
        sha.update(self.catalog.pairs.astype("<i8").tobytes())
        return sha.hexdigest()

    def summary(self):
        d = self.d
        counts = self.labels[d["split"]].value_counts()
        return (
            "{} pairs ({} seen, {} unseen), {} train, {} test_seen, "
            "{} test_unseen samples, d_x={}"
        ).format(
            len(self.catalog),
            int(self.catalog.seen_mask.sum()),
            int(self.catalog.unseen_mask.sum()),
            int(counts.get(d["train"], 0)),
            int(counts.get(d["test_seen"], 0)),
            int(counts.get(d["test_unseen"], 0)),
            self.d_x,
        )


def _choose_unseen(n, m, n_unseen, random_state, max_attempts=100):
    """Seeded greedy removal of pairs that keeps every primitive
    covered by the remaining (seen) pairs.
    """
    blocker = None
    for _ in range(max_attempts):
        attr_count = np.full(n, m)
        obj_count = np.full(m, n)
        unseen = []
        for k in random_state.permutation(n * m):
            if len(unseen) == n_unseen:
                break
            a, o = divmod(int(k), m)
            if attr_count[a] > 1 and obj_count[o] > 1:
                attr_count[a] -= 1
                obj_count[o] -= 1
                unseen.append(int(k))
            elif blocker is None:
                blocker = ("attribute", a) if attr_count[a] <= 1 else ("object", o)
        if len(unseen) == n_unseen:
            return sorted(unseen)
    return blocker


def generate_synthetic_dataset(spec, space):
    """Draws a compositional dataset around per-pair prototypes

    p = W_a s_a + W_o s_o + entanglement W_x (s_a * s_o)

    with seeded random maps, plus Gaussian sample noise.

    Parameters:

        spec: SynthSpec

        space: SemanticSpace
            n and m must match spec.n_attrs and spec.n_objs

    Returns:

        split: DatasetSplit
            Catalog of all n x m pairs in attribute-major order,
            train and test_seen drawn from the seen pairs,
            test_unseen from the unseen ones
    """
    d = CzslLabels().set_data_labels()

    if space.n != spec.n_attrs or space.m != spec.n_objs:
        msg = "Semantic space is {} x {}, the synthetic spec asks for {} x {}."
        log.error(msg.format(space.n, space.m, spec.n_attrs, spec.n_objs))
        raise ValueError(msg.format(space.n, space.m, spec.n_attrs, spec.n_objs))

    n, m, dim = space.n, space.m, space.dim
    n_pairs = n * m
    n_seen = int(round(spec.seen_fraction * n_pairs))
    n_unseen = n_pairs - n_seen

    if n_unseen < 1:
        msg = (
            "seen_fraction {} leaves no unseen composition among {} pairs, "
            "the split needs at least one."
        )
        log.error(msg.format(spec.seen_fraction, n_pairs))
        raise ValueError(msg.format(spec.seen_fraction, n_pairs))

    split_state = np.random.RandomState(_seed_words(spec.seed, _SPLIT_STREAM))

    chosen = _choose_unseen(n, m, n_unseen, split_state)

    if isinstance(chosen, tuple):
        kind, i = chosen
        name = space.attr_names[i] if kind == "attribute" else space.obj_names[i]
        msg = (
            "seen_fraction {} is too low to keep every primitive seen: "
            "the {} '{}' is left uncovered."
        )
        log.error(msg.format(spec.seen_fraction, kind, name))
        raise ValueError(msg.format(spec.seen_fraction, kind, name))

    seen_mask = np.ones(n_pairs, dtype=bool)
    seen_mask[chosen] = False
    pairs = [(a, o) for a in range(n) for o in range(m)]
    catalog = CompositionCatalog(pairs, seen_mask, space)

    proto_state = np.random.RandomState(
        _seed_words(spec.seed, _PROTOTYPE_STREAM)
    )
    w_a = proto_state.randn(spec.d_x, dim)
    w_o = proto_state.randn(spec.d_x, dim)
    w_x = proto_state.randn(spec.d_x, dim) * np.sqrt(dim)

    s_a = space.s_attr[catalog.attr_ids]
    s_o = space.s_obj[catalog.obj_ids]
    prototypes = (
        s_a @ w_a.T + s_o @ w_o.T + spec.entanglement * ((s_a * s_o) @ w_x.T)
    )

    spp = spec.samples_per_pair
    noise = proto_state.randn(n_pairs, spp, spec.d_x) * spec.noise_sigma
    features = (prototypes[:, None, :] + noise).reshape(-1, spec.d_x)

    n_test = min(spp - 1, max(1, int(round(spec.test_fraction * spp))))
    splits = []
    for k in range(n_pairs):
        if seen_mask[k]:
            pair_split = np.full(spp, d["train"], dtype=object)
            pair_split[split_state.permutation(spp)[:n_test]] = d["test_seen"]
        else:
            pair_split = np.full(spp, d["test_unseen"], dtype=object)
        splits.append(pair_split)

    pair_rows = np.repeat(np.arange(n_pairs), spp)
    labels = pd.DataFrame(
        {
            d["attr"]: [space.attr_names[a] for a in catalog.attr_ids[pair_rows]],
            d["obj"]: [space.obj_names[o] for o in catalog.obj_ids[pair_rows]],
            d["attr_id"]: catalog.attr_ids[pair_rows],
            d["obj_id"]: catalog.obj_ids[pair_rows],
            d["split"]: np.concatenate(splits),
        }
    )

    split = DatasetSplit(features, labels, catalog, space)

    msg = "Generated synthetic dataset: {}."
    log.info(msg.format(split.summary()))

    return split


def write_dataset(split, features_path, labels_path):
    """Writes the features binary and the labels text file."""
    d = split.d

    with open(features_path, "wb") as f:
        f.write((d["feat_header"] + "\n").encode("ascii"))
        f.write(np.asarray(split.features.shape, dtype="<u8").tobytes())
        f.write(split.features.astype("<f4").tobytes())

    with io.open(labels_path, "w", encoding="utf-8") as f:
        for a, o, s in zip(
            split.labels[d["attr"]], split.labels[d["obj"]], split.labels[d["split"]]
        ):
            f.write(u"{} {} {}\n".format(a, o, s))

    msg = "Wrote {} samples to {} and {}."
    log.info(msg.format(split.features.shape[0], features_path, labels_path))

    return features_path, labels_path


def _read_features(path, header):
    with open(path, "rb") as f:
        blob = f.read()

    head = (header + "\n").encode("ascii")
    if not blob.startswith(head):
        msg = "{} is not a '{}' features file."
        log.error(msg.format(path, header))
        raise ValueError(msg.format(path, header))

    if len(blob) < len(head) + 16:
        msg = "{} is truncated before the count and d_x fields."
        log.error(msg.format(path))
        raise ValueError(msg.format(path))

    count, d_x = np.frombuffer(blob[len(head) : len(head) + 16], dtype="<u8")
    count, d_x = int(count), int(d_x)
    payload = blob[len(head) + 16 :]
    if len(payload) != 4 * count * d_x:
        msg = "{} declares {} x {} values but holds {} bytes of data."
        log.error(msg.format(path, count, d_x, len(payload)))
        raise ValueError(msg.format(path, count, d_x, len(payload)))

    return np.frombuffer(payload, dtype="<f4").reshape(count, d_x).copy()


def load_dataset(features_path, labels_path, space=None):
    """Reads a dataset written in the features and labels formats.

    Parameters:

        features_path: str
            `czsl-feat v1` binary

        labels_path: str
            Text lines `attr_name obj_name split`, in feature row order

        space: SemanticSpace or None
            If given, names resolve to its row indices and unknown
            names are rejected. Otherwise ids follow sorted names.

    Returns:

        split: DatasetSplit
            Catalog of every pair present in the files, ordered by
            (attr id, obj id); a pair is unseen iff it occurs in
            test_unseen
    """
    d = CzslLabels().set_data_labels()

    features = _read_features(features_path, d["feat_header"])

    rows = []
    with io.open(labels_path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            tokens = line.split()
            if len(tokens) != 3:
                msg = "{}: label line {} needs 'attr obj split', got '{}'."
                log.error(msg.format(labels_path, len(rows), line.strip()))
                raise ValueError(msg.format(labels_path, len(rows), line.strip()))
            rows.append(tokens)

    labels = pd.DataFrame(rows, columns=[d["attr"], d["obj"], d["split"]])

    if space is not None:
        labels[d["attr_id"]] = [space.attr_index(a) for a in labels[d["attr"]]]
        labels[d["obj_id"]] = [space.obj_index(o) for o in labels[d["obj"]]]
    else:
        attrs = sorted(labels[d["attr"]].unique())
        objs = sorted(labels[d["obj"]].unique())
        labels[d["attr_id"]] = labels[d["attr"]].map(
            {a: i for i, a in enumerate(attrs)}
        )
        labels[d["obj_id"]] = labels[d["obj"]].map(
            {o: j for j, o in enumerate(objs)}
        )

    pairs = (
        labels[[d["attr_id"], d["obj_id"]]]
        .drop_duplicates()
        .sort_values([d["attr_id"], d["obj_id"]])
        .values.tolist()
    )
    unseen = set(
        map(
            tuple,
            labels.loc[
                labels[d["split"]] == d["test_unseen"], [d["attr_id"], d["obj_id"]]
            ].values.tolist(),
        )
    )
    seen_mask = [tuple(p) not in unseen for p in pairs]
    catalog = CompositionCatalog(pairs, seen_mask, space)

    split = DatasetSplit(features, labels, catalog, space)

    msg = "Loaded dataset from {}: {}."
    log.info(msg.format(features_path, split.summary()))

    return split


def batches(split, batch_size, seed, epoch):
    """Epoch-seeded shuffle of the train samples cut into batches.

    Parameters:

        split: DatasetSplit

        batch_size: int
            >= 1, the last batch may be short

        seed: int

        epoch: int

    Returns:

        batch_list: list of Batch
            Every train sample appears exactly once
    """
    if batch_size < 1:
        msg = "batch_size must be >= 1, got {}."
        log.error(msg.format(batch_size))
        raise ValueError(msg.format(batch_size))

    features, attr_ids, obj_ids, _ = split.subset("train")
    if features.shape[0] == 0:
        msg = "Cannot batch an empty train set."
        log.error(msg)
        raise ValueError(msg)

    random_state = np.random.RandomState(_seed_words(seed, epoch))
    order = random_state.permutation(features.shape[0])

    return [
        Batch(
            features[rows], attr_ids[rows], obj_ids[rows], rows
        )
        for rows in (
            order[start : start + batch_size]
            for start in range(0, features.shape[0], batch_size)
        )
    ]
