import logging
from collections import OrderedDict

import numpy as np

from cscnet.comm.label_map import CzslLabels
from cscnet.system.components import (
    NONPARAMETRIC,
    PARAMETRIC,
    CLASSIFIERS,
    branch_loss,
    composition_loss,
    non_param_cls,
    param_cls,
)
from cscnet.system.semantics import _seed_words, candidate_embeddings
from cscnet.tools.numerics import Mlp, Tensor, as_tensor, concat, no_grad

log = logging.getLogger(__name__)

# declared network order, also the checkpoint order
NETWORKS = (
    "e_a",
    "e_o",
    "e_a2o",
    "e_o2a",
    "e_c",
    "scorer_a",
    "scorer_o",
    "scorer_a2o",
    "scorer_o2a",
    "composer",
    "scorer_c",
)

DIMS = ("d_x", "d", "d_v", "d_c", "hidden")

LOSS_TERMS = ("attr", "obj", "a2o", "o2a", "comp")


class BranchOutput(object):
    """Outputs of one cascaded branch.

    Attributes:

        primitive_scores: Tensor, (k1,) or (rows, k1)
            First-stage scores

        predicted_id: int or array of int
            Argmax of primitive_scores, lowest index on ties

        conditioned_scores: Tensor, (k2,) or (rows, k2)
            Second-stage scores conditioned on the
            predicted (or teacher forced) first-stage class
    """

    def __init__(self, primitive_scores, predicted_id, conditioned_scores):
        self.primitive_scores = primitive_scores
        self.predicted_id = predicted_id
        self.conditioned_scores = conditioned_scores


class CSCNet(object):
    """Class-specified cascaded network: attribute-to-object and
    object-to-attribute cascades plus a composition branch.

    Parameters:

        dims: dict
            'd_x' feature width, 'd' semantic width, 'd_v' visual
            primitive embedding width, 'd_c' composition width,
            'hidden' MLP hidden width

        random_state: numpy random state object or an integer
            Weight initialization source
            Default: 0

        dtype: numpy dtype
            np.float64 (test profile) or np.float32 (fast profile)

        primitive_classifier: str
            'parametric' (ParamCls) or 'nonparametric' (cosine softmax,
            needs d_v == d) for both cascade stages
            Default: 'parametric'

        composition_classifier: str
            'nonparametric' or 'parametric'
            Default: 'nonparametric'

        temperature: float
            Cosine softmax temperature
            Default: 0.05

        branches: dict
            {'a2o': bool, 'o2a': bool, 'composition': bool}
            Default: all enabled

        teacher_forcing: boolean
            Condition the second stage on the ground truth during
            training
            Default: False

        positive_only: boolean
            Keep only the positive-class term in the ParamCls loss
            Default: False

    Note:

        The networks never share parameters. All of them are built
        and serialized even when a branch or classifier choice leaves
        some unused.
    """

    def __init__(
        self,
        dims,
        random_state=0,
        dtype=np.float64,
        primitive_classifier=PARAMETRIC,
        composition_classifier=NONPARAMETRIC,
        temperature=0.05,
        branches=None,
        teacher_forcing=False,
        positive_only=False,
    ):

        self.dims = OrderedDict((k, int(dims[k])) for k in DIMS)
        self.dtype = np.dtype(dtype).type

        for choice in (primitive_classifier, composition_classifier):
            if choice not in CLASSIFIERS:
                msg = "Classifier {} is not one of {}."
                log.error(msg.format(choice, CLASSIFIERS))
                raise ValueError(msg.format(choice, CLASSIFIERS))
        if (
            primitive_classifier == NONPARAMETRIC
            and self.dims["d_v"] != self.dims["d"]
        ):
            msg = (
                "Non-parametric primitive heads need d_v == d, "
                "got d_v={} and d={}."
            )
            log.error(msg.format(self.dims["d_v"], self.dims["d"]))
            raise ValueError(msg.format(self.dims["d_v"], self.dims["d"]))

        self.primitive_classifier = primitive_classifier
        self.composition_classifier = composition_classifier
        self.temperature = temperature
        self.branches = {"a2o": True, "o2a": True, "composition": True}
        if branches is not None:
            self.branches.update(branches)
        self.teacher_forcing = teacher_forcing
        self.positive_only = positive_only

        if isinstance(random_state, int):
            random_state = np.random.RandomState(_seed_words(random_state))

        d_x, d, d_v, d_c, h = (self.dims[k] for k in DIMS)
        widths = OrderedDict(
            [
                ("e_a", (d_x, d_v)),
                ("e_o", (d_x, d_v)),
                ("e_a2o", (d_x + d, d_v)),
                ("e_o2a", (d_x + d, d_v)),
                ("e_c", (d_x, d_c)),
                ("scorer_a", (d_v + d, 1)),
                ("scorer_o", (d_v + d, 1)),
                ("scorer_a2o", (d_v + d, 1)),
                ("scorer_o2a", (d_v + d, 1)),
                ("composer", (2 * d, d_c)),
                ("scorer_c", (2 * d_c, 1)),
            ]
        )
        self.nets = OrderedDict(
            (name, Mlp(w_in, h, w_out, random_state, dtype=self.dtype))
            for name, (w_in, w_out) in widths.items()
        )

    def __getattr__(self, name):
        nets = self.__dict__.get("nets")
        if nets is not None and name in nets:
            return nets[name]
        raise AttributeError(name)

    def parameters(self):
        """Ordered {'<network>.<param>': Tensor} over all networks."""
        params = OrderedDict()
        for net_name, net in self.nets.items():
            for p_name, p in net.parameters().items():
                params["{}.{}".format(net_name, p_name)] = p
        return params

    def _phi(self, phi):
        phi = as_tensor(phi, dtype=self.dtype)
        if phi.value.dtype != self.dtype:
            phi = Tensor(phi.value.astype(self.dtype))
        if phi.shape[-1] != self.dims["d_x"]:
            msg = "Feature width mismatch: expected d_x={}, got {}."
            log.error(msg.format(self.dims["d_x"], phi.shape[-1]))
            raise ValueError(msg.format(self.dims["d_x"], phi.shape[-1]))
        return phi

    def _classify(self, scorer, v, S):
        if self.primitive_classifier == PARAMETRIC:
            return param_cls(scorer, v, S)
        return non_param_cls(v, S, self.temperature)

    def _primitive_loss(self, scores, true_id):
        if self.primitive_classifier == PARAMETRIC:
            return branch_loss(scores, true_id, positive_only=self.positive_only)
        return composition_loss(scores, true_id)

    def _cascade(self, phi, first_table, second_table, names, given_first):
        e_first, scorer_first, e_second, scorer_second = (
            self.nets[n] for n in names
        )

        v_first = e_first(phi)
        first_scores = self._classify(scorer_first, v_first, first_table)

        # np.argmax picks the lowest index on ties
        predicted = np.argmax(first_scores.value, axis=-1)
        condition_ids = predicted if given_first is None else given_first

        # the predicted class embedding is a constant lookup
        s_first = Tensor(first_table.value[condition_ids])

        v_second = e_second(concat([phi, s_first], axis=-1))
        second_scores = self._classify(scorer_second, v_second, second_table)

        if phi.ndim == 1:
            predicted = int(predicted)

        return BranchOutput(first_scores, predicted, second_scores)

    def forward_a2o(self, phi, space, true_attr=None):
        """Attribute classification, then attribute-specified
        object classification.

        Parameters:

            phi: Tensor or array, (d_x,) or (rows, d_x)
                Image features

            space: SemanticSpace

            true_attr: None or array of int
                Teacher forcing ids, only used when given

        Returns:

            out: BranchOutput
                primitive_scores over attributes, conditioned_scores
                over objects
        """
        phi = self._phi(phi)
        return self._cascade(
            phi,
            space.attr_table(self.dtype),
            space.obj_table(self.dtype),
            ("e_a", "scorer_a", "e_a2o", "scorer_a2o"),
            true_attr,
        )

    def forward_o2a(self, phi, space, true_obj=None):
        """Mirror of :func:`forward_a2o`: object classification,
        then object-specified attribute classification.
        """
        phi = self._phi(phi)
        return self._cascade(
            phi,
            space.obj_table(self.dtype),
            space.attr_table(self.dtype),
            ("e_o", "scorer_o", "e_o2a", "scorer_o2a"),
            true_obj,
        )

    def forward_composition(self, phi, space, catalog):
        """Composition probabilities over the catalog pairs.

        Returns:

            probs: Tensor, (pairs,) or (rows, pairs)
                Softmax probabilities, or sigmoid scores when the
                composition classifier is parametric
        """
        phi = self._phi(phi)
        v_c = self.nets["e_c"](phi)
        s_c = candidate_embeddings(space, catalog, self.nets["composer"])

        if self.composition_classifier == PARAMETRIC:
            return param_cls(self.nets["scorer_c"], v_c, s_c)
        return non_param_cls(v_c, s_c, self.temperature)

    def loss_terms(self, features, attr_ids, obj_ids, space, catalog, only=None):
        """The individual losses of the enabled branches.

        Parameters:

            features: array, rows x d_x

            attr_ids, obj_ids: array of int
                Ground truth per row, every pair must be seen

            space: SemanticSpace

            catalog: CompositionCatalog

            only: iterable of str or None
                Term names to compute, branches without a requested
                term are skipped. Default: None (all terms)

        Returns:

            terms: OrderedDict
                Subset of {'attr', 'obj', 'a2o', 'o2a', 'comp'},
                each a scalar Tensor averaged over rows
        """
        attr_ids = np.asarray(attr_ids, dtype=np.int64).reshape(-1)
        obj_ids = np.asarray(obj_ids, dtype=np.int64).reshape(-1)
        if attr_ids.size == 0:
            msg = "A training batch needs at least one sample."
            log.error(msg)
            raise ValueError(msg)

        pair_ids = catalog.index_of(attr_ids, obj_ids)
        if not np.all(catalog.seen_mask[pair_ids]):
            k = int(np.where(~catalog.seen_mask[pair_ids])[0][0])
            msg = "Unseen composition ({}, {}) in a training batch at row {}."
            log.error(msg.format(attr_ids[k], obj_ids[k], k))
            raise ValueError(msg.format(attr_ids[k], obj_ids[k], k))

        wanted = set(LOSS_TERMS if only is None else only)
        unknown = sorted(wanted - set(LOSS_TERMS))
        if unknown:
            msg = "Unknown loss terms {}, use some of {}."
            log.error(msg.format(unknown, list(LOSS_TERMS)))
            raise ValueError(msg.format(unknown, list(LOSS_TERMS)))

        phi = self._phi(np.asarray(features).reshape(-1, self.dims["d_x"]))

        terms = OrderedDict()
        if self.branches["a2o"] and wanted & {"attr", "a2o"}:
            out = self.forward_a2o(
                phi, space, attr_ids if self.teacher_forcing else None
            )
            terms["attr"] = self._primitive_loss(out.primitive_scores, attr_ids)
            terms["a2o"] = self._primitive_loss(out.conditioned_scores, obj_ids)
        if self.branches["o2a"] and wanted & {"obj", "o2a"}:
            out = self.forward_o2a(
                phi, space, obj_ids if self.teacher_forcing else None
            )
            terms["obj"] = self._primitive_loss(out.primitive_scores, obj_ids)
            terms["o2a"] = self._primitive_loss(out.conditioned_scores, attr_ids)
        if self.branches["composition"] and "comp" in wanted:
            probs = self.forward_composition(phi, space, catalog)
            if self.composition_classifier == PARAMETRIC:
                terms["comp"] = branch_loss(probs, pair_ids)
            else:
                terms["comp"] = composition_loss(probs, pair_ids)

        return terms

    def total_loss(self, features, attr_ids, obj_ids, space, catalog, alpha):
        """alpha * (L_a + L_o + L_a2o + L_o2a) + L_c, averaged over
        the batch, restricted to the enabled branches.
        """
        if alpha < 0:
            msg = "alpha must be non-negative, got {}."
            log.error(msg.format(alpha))
            raise ValueError(msg.format(alpha))

        terms = self.loss_terms(features, attr_ids, obj_ids, space, catalog)
        return self.combine(terms, alpha)

    @staticmethod
    def combine(terms, alpha):
        """Weighted sum of the loss terms returned by
        :func:`loss_terms`.
        """
        primitive = [terms[k] for k in ("attr", "obj", "a2o", "o2a") if k in terms]
        total = None
        if primitive:
            cascade = primitive[0]
            for term in primitive[1:]:
                cascade = cascade + term
            total = cascade * float(alpha)
        if "comp" in terms:
            total = terms["comp"] if total is None else total + terms["comp"]

        return total

    def inference_terms(self, phi, space, catalog):
        """Cascade and composition terms of the fused score, per
        candidate pair, without recording gradients.

        Returns:

            cascade: array, (rows, pairs)
                P(a|x) P(o|a_bar,x) + P(o|x) P(a|o_bar,x)
                for the enabled cascades

            composition: array, (rows, pairs)
                P(c|x), zeros when the composition branch is off
        """
        single = np.ndim(phi.value if isinstance(phi, Tensor) else phi) == 1
        pa = catalog.attr_ids
        po = catalog.obj_ids

        with no_grad():
            phi = self._phi(phi)
            if single:
                phi = Tensor(phi.value.reshape(1, -1))
            rows = phi.shape[0]
            cascade = np.zeros((rows, len(catalog)))
            composition = np.zeros((rows, len(catalog)))

            if self.branches["a2o"]:
                out = self.forward_a2o(phi, space)
                cascade += (
                    out.primitive_scores.value[:, pa]
                    * out.conditioned_scores.value[:, po]
                )
            if self.branches["o2a"]:
                out = self.forward_o2a(phi, space)
                cascade += (
                    out.primitive_scores.value[:, po]
                    * out.conditioned_scores.value[:, pa]
                )
            if self.branches["composition"]:
                composition += self.forward_composition(
                    phi, space, catalog
                ).value

        if single:
            return cascade[0], composition[0]
        return cascade, composition

    @staticmethod
    def blend(cascade, composition, beta):
        """beta * cascade + (1 - beta) * composition"""
        if not 0.0 <= beta <= 1.0:
            msg = "beta must lie in [0, 1], got {}."
            log.error(msg.format(beta))
            raise ValueError(msg.format(beta))
        return beta * cascade + (1.0 - beta) * composition

    def inference_score(self, phi, space, catalog, beta):
        """Fused per-pair score
        beta * (P(a|x) P(o|a_bar,x) + P(o|x) P(a|o_bar,x))
        + (1 - beta) * P(c|x).

        Returns:

            scores: array, (pairs,) or (rows, pairs)
        """
        if not 0.0 <= beta <= 1.0:
            msg = "beta must lie in [0, 1], got {}."
            log.error(msg.format(beta))
            raise ValueError(msg.format(beta))
        cascade, composition = self.inference_terms(phi, space, catalog)
        return self.blend(cascade, composition, beta)

    def save(self, path):
        """Writes the checkpoint: header line, dims record, then every
        network's arrays in declared order, each length-prefixed,
        as little-endian 64-bit values.
        """
        d = CzslLabels().set_data_labels()

        chunks = [(d["ckpt_header"] + "\n").encode("ascii")]
        chunks.append(_u64([len(DIMS)] + [self.dims[k] for k in DIMS]))
        for name in NETWORKS:
            params = self.nets[name].parameters()
            chunks.append(_u64([len(params)]))
            for p in params.values():
                chunks.append(_u64([p.value.ndim] + list(p.shape)))
                chunks.append(_u64([p.value.size]))
                chunks.append(p.value.astype("<f8").tobytes())

        with open(path, "wb") as f:
            f.write(b"".join(chunks))

        msg = "Saved checkpoint to {}."
        log.info(msg.format(path))
        return path

    @classmethod
    def load(cls, path, expected_dims=None, **kwargs):
        """Reads a checkpoint written by :func:`save`.

        Parameters:

            path: str

            expected_dims: dict or None
                If given, every dims field must match, otherwise
                the mismatching fields are named in the error

            kwargs:
                Forwarded to the constructor (dtype, classifiers,
                temperature, branches, ...)

        Returns:

            model: CSCNet
        """
        d = CzslLabels().set_data_labels()
        with open(path, "rb") as f:
            blob = f.read()

        header = (d["ckpt_header"] + "\n").encode("ascii")
        if not blob.startswith(header):
            msg = "{} is not a '{}' checkpoint."
            log.error(msg.format(path, d["ckpt_header"]))
            raise ValueError(msg.format(path, d["ckpt_header"]))

        reader = _Reader(blob, len(header), path)
        n_dims = reader.u64()
        if n_dims != len(DIMS):
            msg = "{}: dims record has {} fields, expected {}."
            log.error(msg.format(path, n_dims, len(DIMS)))
            raise ValueError(msg.format(path, n_dims, len(DIMS)))
        dims = OrderedDict((k, reader.u64()) for k in DIMS)

        if expected_dims is not None:
            bad = [
                "{} (checkpoint {}, config {})".format(k, dims[k], expected_dims[k])
                for k in DIMS
                if int(expected_dims[k]) != dims[k]
            ]
            if bad:
                msg = "Checkpoint {} dims mismatch: {}."
                log.error(msg.format(path, ", ".join(bad)))
                raise ValueError(msg.format(path, ", ".join(bad)))

        model = cls(dims, **kwargs)
        for name in NETWORKS:
            params = model.nets[name].parameters()
            if reader.u64() != len(params):
                msg = "{}: network {} has an unexpected parameter count."
                log.error(msg.format(path, name))
                raise ValueError(msg.format(path, name))
            for p_name, p in params.items():
                ndim = reader.u64()
                shape = tuple(reader.u64() for _ in range(ndim))
                size = reader.u64()
                if shape != p.shape or size != p.value.size:
                    msg = "{}: {}.{} has shape {}, expected {}."
                    log.error(msg.format(path, name, p_name, shape, p.shape))
                    raise ValueError(
                        msg.format(path, name, p_name, shape, p.shape)
                    )
                p.value[...] = reader.f64(size).reshape(shape)

        reader.finish()
        msg = "Loaded checkpoint {}."
        log.info(msg.format(path))
        return model


def _u64(values):
    return np.asarray(values, dtype="<u8").tobytes()


class _Reader(object):
    """Sequential little-endian reader with length validation."""

    def __init__(self, blob, offset, path):
        self.blob = blob
        self.offset = offset
        self.path = path

    def _take(self, n_bytes):
        if self.offset + n_bytes > len(self.blob):
            msg = "{} is truncated at byte {}."
            log.error(msg.format(self.path, self.offset))
            raise ValueError(msg.format(self.path, self.offset))
        chunk = self.blob[self.offset : self.offset + n_bytes]
        self.offset += n_bytes
        return chunk

    def u64(self):
        return int(np.frombuffer(self._take(8), dtype="<u8")[0])

    def f64(self, count):
        return np.frombuffer(self._take(8 * count), dtype="<f8").copy()

    def finish(self):
        if self.offset != len(self.blob):
            msg = "{} has {} trailing bytes."
            log.error(msg.format(self.path, len(self.blob) - self.offset))
            raise ValueError(msg.format(self.path, len(self.blob) - self.offset))
