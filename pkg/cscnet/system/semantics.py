import io
import logging

import numpy as np

from cscnet.comm.label_map import CzslLabels
from cscnet.tools.numerics import Tensor, as_tensor, concat, mlp_forward

log = logging.getLogger(__name__)


class SemanticSpace(object):
    """Attribute and object semantic embedding tables.

    Parameters:

        attr_names: list of str
            Attribute names, row order of s_attr

        obj_names: list of str
            Object names, row order of s_obj

        s_attr: array, n x d
            Attribute embeddings

        s_obj: array, m x d
            Object embeddings

        normalize: boolean
            If True rows get L2-normalized, all-zero rows
            are rejected
            Default: True

    Note:

        Instances are treated as immutable after construction.
    """

    def __init__(self, attr_names, obj_names, s_attr, s_obj, normalize=True):

        self.attr_names = [str(x) for x in attr_names]
        self.obj_names = [str(x) for x in obj_names]

        s_attr = np.asarray(s_attr, dtype=np.float64)
        s_obj = np.asarray(s_obj, dtype=np.float64)

        for kind, names, table in [
            ("attribute", self.attr_names, s_attr),
            ("object", self.obj_names, s_obj),
        ]:
            if len(names) < 1:
                msg = "At least one {} row is needed, got {}."
                log.error(msg.format(kind, len(names)))
                raise ValueError(msg.format(kind, len(names)))
            if len(set(names)) != len(names):
                dup = [x for x in names if names.count(x) > 1][0]
                msg = "Duplicate {} name '{}'."
                log.error(msg.format(kind, dup))
                raise ValueError(msg.format(kind, dup))
            if table.ndim != 2 or table.shape[0] != len(names):
                msg = "The {} table shape {} does not match {} names."
                log.error(msg.format(kind, table.shape, len(names)))
                raise ValueError(msg.format(kind, table.shape, len(names)))
            if not np.all(np.isfinite(table)):
                row = int(np.where(~np.all(np.isfinite(table), axis=1))[0][0])
                msg = "The {} row '{}' is not finite."
                log.error(msg.format(kind, names[row]))
                raise ValueError(msg.format(kind, names[row]))
            if normalize and table.shape[1] > 0:
                zero = np.where(~np.any(table != 0.0, axis=1))[0]
                if zero.size:
                    msg = "The {} row '{}' is a zero vector and has no direction."
                    log.error(msg.format(kind, names[int(zero[0])]))
                    raise ValueError(msg.format(kind, names[int(zero[0])]))

        if s_attr.shape[1] != s_obj.shape[1]:
            msg = "Attribute width {} differs from object width {}."
            log.error(msg.format(s_attr.shape[1], s_obj.shape[1]))
            raise ValueError(msg.format(s_attr.shape[1], s_obj.shape[1]))

        if normalize:
            s_attr = self._l2_normalize(s_attr)
            s_obj = self._l2_normalize(s_obj)

        self.s_attr = s_attr
        self.s_obj = s_obj
        self.s_attr.setflags(write=False)
        self.s_obj.setflags(write=False)

        self._tables = {}

    @staticmethod
    def _l2_normalize(table):
        norms = np.linalg.norm(table, axis=1, keepdims=True)
        return table / norms

    @property
    def n(self):
        return len(self.attr_names)

    @property
    def m(self):
        return len(self.obj_names)

    @property
    def dim(self):
        return self.s_attr.shape[1]

    def attr_table(self, dtype=np.float64):
        """S_a as a constant tensor."""
        return self._table("attr", self.s_attr, dtype)

    def obj_table(self, dtype=np.float64):
        """S_o as a constant tensor."""
        return self._table("obj", self.s_obj, dtype)

    def _table(self, kind, table, dtype):
        key = (kind, np.dtype(dtype).str)
        if key not in self._tables:
            self._tables[key] = Tensor(table.astype(dtype))
        return self._tables[key]

    def attr_index(self, name):
        try:
            return self.attr_names.index(name)
        except ValueError:
            msg = "Unknown attribute '{}'."
            log.error(msg.format(name))
            raise ValueError(msg.format(name))

    def obj_index(self, name):
        try:
            return self.obj_names.index(name)
        except ValueError:
            msg = "Unknown object '{}'."
            log.error(msg.format(name))
            raise ValueError(msg.format(name))

    def __eq__(self, other):
        return (
            isinstance(other, SemanticSpace)
            and self.attr_names == other.attr_names
            and self.obj_names == other.obj_names
            and np.array_equal(self.s_attr, other.s_attr)
            and np.array_equal(self.s_obj, other.s_obj)
        )


class CompositionCatalog(object):
    """Candidate attribute-object pairs with their seen/unseen
    status.

    Parameters:

        pairs: list of (int, int)
            (attribute id, object id) per candidate, in catalog order

        seen_mask: list of boolean
            True for pairs present in the training labels

        space: SemanticSpace or None
            If provided, ids get validated against it
    """

    def __init__(self, pairs, seen_mask, space=None):

        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        seen_mask = np.asarray(seen_mask, dtype=bool).reshape(-1)

        if pairs.shape[0] == 0:
            msg = "A composition catalog needs at least one pair."
            log.error(msg)
            raise ValueError(msg)
        if seen_mask.shape[0] != pairs.shape[0]:
            msg = "Seen mask length {} does not match {} pairs."
            log.error(msg.format(seen_mask.shape[0], pairs.shape[0]))
            raise ValueError(msg.format(seen_mask.shape[0], pairs.shape[0]))

        self._index = {}
        for k, (a, o) in enumerate(pairs.tolist()):
            if (a, o) in self._index:
                msg = "Duplicate composition ({}, {}) in the catalog."
                log.error(msg.format(a, o))
                raise ValueError(msg.format(a, o))
            self._index[(a, o)] = k

        if space is not None:
            bad = (
                (pairs[:, 0] < 0)
                | (pairs[:, 0] >= space.n)
                | (pairs[:, 1] < 0)
                | (pairs[:, 1] >= space.m)
            )
            if bad.any():
                k = int(np.where(bad)[0][0])
                msg = "Pair {} ({}, {}) is outside the semantic space."
                log.error(msg.format(k, pairs[k, 0], pairs[k, 1]))
                raise ValueError(msg.format(k, pairs[k, 0], pairs[k, 1]))

        self.pairs = pairs
        self.seen_mask = seen_mask
        self.pairs.setflags(write=False)
        self.seen_mask.setflags(write=False)

    def __len__(self):
        return self.pairs.shape[0]

    @property
    def attr_ids(self):
        return self.pairs[:, 0]

    @property
    def obj_ids(self):
        return self.pairs[:, 1]

    @property
    def unseen_mask(self):
        return ~self.seen_mask

    def index_of(self, attr_ids, obj_ids):
        """Pair indices for arrays of attribute and object ids.

        Raises:

            ValueError if a pair is not in the catalog
        """
        out = []
        for a, o in zip(np.atleast_1d(attr_ids), np.atleast_1d(obj_ids)):
            try:
                out.append(self._index[(int(a), int(o))])
            except KeyError:
                msg = "Composition ({}, {}) is not in the catalog."
                log.error(msg.format(a, o))
                raise ValueError(msg.format(a, o))
        return np.asarray(out, dtype=np.int64)

    def names(self, space):
        return [
            "{} {}".format(space.attr_names[a], space.obj_names[o])
            for a, o in self.pairs.tolist()
        ]

    def permuted(self, order):
        """Catalog with pairs reordered by order."""
        order = np.asarray(order, dtype=np.int64)
        return CompositionCatalog(self.pairs[order], self.seen_mask[order])

    def __eq__(self, other):
        return (
            isinstance(other, CompositionCatalog)
            and np.array_equal(self.pairs, other.pairs)
            and np.array_equal(self.seen_mask, other.seen_mask)
        )


def load_embeddings(path):
    """Reads a `czsl-emb v1` file into a SemanticSpace.

    File layout::

        czsl-emb v1 dim=<d>
        [attributes]
        <name> v1 ... vd
        [objects]
        <name> v1 ... vd

    Parameters:

        path: str
            Embedding file path

    Returns:

        space: SemanticSpace
            Rows L2-normalized
    """
    d = CzslLabels().set_data_labels()

    with io.open(path, "r", encoding="utf-8") as f:
        lines = [line.strip() for line in f if line.strip()]

    if not lines or not lines[0].startswith(d["emb_header"]):
        msg = "{} does not start with the '{}' header."
        log.error(msg.format(path, d["emb_header"]))
        raise ValueError(msg.format(path, d["emb_header"]))

    try:
        dim = int(lines[0].split("dim=")[1])
    except (IndexError, ValueError):
        msg = "{} header does not declare dim=<d>."
        log.error(msg.format(path))
        raise ValueError(msg.format(path))

    sections = {d["attr_section"]: ([], []), d["obj_section"]: ([], [])}
    current = None
    for line in lines[1:]:
        if line in sections:
            current = sections[line]
            continue
        if current is None:
            msg = "{}: row outside of a section: '{}'."
            log.error(msg.format(path, line[:40]))
            raise ValueError(msg.format(path, line[:40]))
        tokens = line.split()
        name, values = tokens[0], tokens[1:]
        if len(values) != dim:
            msg = "{}: row '{}' has {} values, expected dim={}."
            log.error(msg.format(path, name, len(values), dim))
            raise ValueError(msg.format(path, name, len(values), dim))
        try:
            row = [float(v) for v in values]
        except ValueError as err:
            msg = "{}: row '{}' holds a value that is not a number ({})."
            log.error(msg.format(path, name, err))
            raise ValueError(msg.format(path, name, err))
        current[0].append(name)
        current[1].append(row)

    attr_names, attr_rows = sections[d["attr_section"]]
    obj_names, obj_rows = sections[d["obj_section"]]

    for section, names in [
        (d["attr_section"], attr_names),
        (d["obj_section"], obj_names),
    ]:
        if len(names) < 2:
            msg = "{}: section {} needs at least two rows, got {}."
            log.error(msg.format(path, section, len(names)))
            raise ValueError(msg.format(path, section, len(names)))

    space = SemanticSpace(
        attr_names,
        obj_names,
        np.array(attr_rows).reshape(-1, dim),
        np.array(obj_rows).reshape(-1, dim),
    )

    msg = "Loaded {} attribute and {} object embeddings, dim={}, from {}."
    log.info(msg.format(space.n, space.m, dim, path))

    return space


def write_embeddings(space, path):
    """Writes a SemanticSpace in the `czsl-emb v1` format."""
    d = CzslLabels().set_data_labels()

    with io.open(path, "w", encoding="utf-8") as f:
        f.write(u"{} dim={}\n".format(d["emb_header"], space.dim))
        for section, names, table in [
            (d["attr_section"], space.attr_names, space.s_attr),
            (d["obj_section"], space.obj_names, space.s_obj),
        ]:
            f.write(u"{}\n".format(section))
            for name, row in zip(names, table):
                f.write(
                    u"{} {}\n".format(name, " ".join(repr(float(v)) for v in row))
                )

    return path


def generate_synthetic_embeddings(
    n, m, d, seed, cos_cap=0.95, max_retries=1000
):
    """Seeded Gaussian rows, L2-normalized, with the pairwise
    cosine between any two distinct rows (attributes and objects
    together) kept below cos_cap.

    Parameters:

        n: int
            Number of attributes, >= 2

        m: int
            Number of objects, >= 2

        d: int
            Embedding width, >= 2

        seed: int
            Random seed, the output is a pure function of (n, m, d, seed)

        cos_cap: float
            Upper bound on the pairwise cosine

        max_retries: int
            Resampling budget per row

    Returns:

        space: SemanticSpace
    """
    if n < 2 or m < 2:
        msg = "Synthetic embeddings need n >= 2 and m >= 2, got n={}, m={}."
        log.error(msg.format(n, m))
        raise ValueError(msg.format(n, m))
    if d < 2:
        msg = "Synthetic embeddings need d >= 2, got {}."
        log.error(msg.format(d))
        raise ValueError(msg.format(d))

    random_state = np.random.RandomState(_seed_words(seed))

    rows = np.zeros((n + m, d))
    for i in range(n + m):
        for _ in range(max_retries):
            row = random_state.randn(d)
            row /= np.linalg.norm(row)
            if i == 0 or np.max(rows[:i] @ row) < cos_cap:
                rows[i] = row
                break
        else:
            msg = (
                "Could not place embedding row {} below cosine {} "
                "after {} draws, d={} is too small for {} rows."
            )
            log.error(msg.format(i, cos_cap, max_retries, d, n + m))
            raise ValueError(msg.format(i, cos_cap, max_retries, d, n + m))

    return SemanticSpace(
        ["attr{:02d}".format(i) for i in range(n)],
        ["obj{:02d}".format(j) for j in range(m)],
        rows[:n],
        rows[n:],
    )


def _seed_words(seed, *streams):
    """Splits a 64-bit seed (and optional stream ids) into
    32-bit words accepted by numpy random states.
    """
    seed = int(seed)
    return [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF] + [
        int(s) & 0xFFFFFFFF for s in streams
    ]


def compose_embedding(s_a, s_o, composer):
    """Composition embedding MLP(Concat(s_a, s_o)).

    Parameters:

        s_a: Tensor or array, (d,) or (rows, d)
            Attribute embedding(s)

        s_o: Tensor or array, (d,) or (rows, d)
            Object embedding(s)

        composer: Mlp
            Input width 2d

    Returns:

        s_c: Tensor, (d_c,) or (rows, d_c)
    """
    s_a = as_tensor(s_a, dtype=composer.w1.dtype)
    s_o = as_tensor(s_o, dtype=composer.w1.dtype)
    if s_a.shape != s_o.shape or composer.in_dim != 2 * s_a.shape[-1]:
        msg = (
            "Composer expects input width {}, got attribute {} "
            "and object {} embeddings."
        )
        log.error(msg.format(composer.in_dim, s_a.shape, s_o.shape))
        raise ValueError(msg.format(composer.in_dim, s_a.shape, s_o.shape))

    return mlp_forward(composer, concat([s_a, s_o], axis=-1))


def candidate_embeddings(space, catalog, composer):
    """Composes S_c, one row per catalog pair in catalog order.
    Recomputed on every call since the composer trains.
    """
    dtype = composer.w1.dtype
    s_a = Tensor(space.s_attr[catalog.attr_ids].astype(dtype))
    s_o = Tensor(space.s_obj[catalog.obj_ids].astype(dtype))
    return compose_embedding(s_a, s_o, composer)
