import io
import logging

import numpy as np
import pandas as pd

from cscnet.comm.label_map import CzslLabels
from cscnet.tools.numerics import no_grad

log = logging.getLogger(__name__)


class ScoreMatrix(object):
    """Per test sample, per candidate pair scores.

    Parameters:

        scores: array, samples x pairs
            Finite scores

        truths: array of int
            True pair index per sample

        unseen_mask: array of boolean
            True for unseen pairs, aligned with the pair axis
    """

    def __init__(self, scores, truths, unseen_mask):

        self.scores = np.asarray(scores, dtype=np.float64)
        self.truths = np.asarray(truths, dtype=np.int64).reshape(-1)
        self.unseen_mask = np.asarray(unseen_mask, dtype=bool).reshape(-1)

        if self.scores.ndim != 2:
            msg = "Scores must be a samples x pairs matrix, got shape {}."
            log.error(msg.format(self.scores.shape))
            raise ValueError(msg.format(self.scores.shape))
        if self.truths.shape[0] != self.scores.shape[0]:
            msg = "{} truths for {} score rows."
            log.error(msg.format(self.truths.shape[0], self.scores.shape[0]))
            raise ValueError(msg.format(self.truths.shape[0], self.scores.shape[0]))
        if self.unseen_mask.shape[0] != self.scores.shape[1]:
            msg = "Unseen mask has {} entries for {} pairs."
            log.error(msg.format(self.unseen_mask.shape[0], self.scores.shape[1]))
            raise ValueError(
                msg.format(self.unseen_mask.shape[0], self.scores.shape[1])
            )
        if not np.all(np.isfinite(self.scores)):
            msg = "Score matrix holds non-finite values."
            log.error(msg)
            raise ValueError(msg)
        if self.truths.size and (
            self.truths.min() < 0 or self.truths.max() >= self.scores.shape[1]
        ):
            msg = "Truth indices must lie in [0, {}), got range [{}, {}]."
            log.error(
                msg.format(
                    self.scores.shape[1], self.truths.min(), self.truths.max()
                )
            )
            raise ValueError(
                msg.format(
                    self.scores.shape[1], self.truths.min(), self.truths.max()
                )
            )

    @property
    def unseen_samples(self):
        """True for samples whose truth is an unseen pair."""
        return self.unseen_mask[self.truths]


class EvalReport(object):
    """Generalized CZSL metrics with the calibration curve.

    Attributes:

        seen, unseen: float
            Best seen and unseen accuracy along the curve

        hm: float
            Best harmonic mean along the curve

        auc: float
            Area under the seen-unseen accuracy curve

        curve: pd.DataFrame
            Columns bias, seen_acc, unseen_acc
    """

    def __init__(self, seen, unseen, hm, auc, curve):
        self.seen = seen
        self.unseen = unseen
        self.hm = hm
        self.auc = auc
        self.curve = curve

    def to_frame(self):
        return self.curve.copy()

    def metrics(self):
        r = CzslLabels().set_res_labels()
        return {
            r["seen"]: self.seen,
            r["unseen"]: self.unseen,
            r["hm"]: self.hm,
            r["auc"]: self.auc,
        }

    def summary(self):
        return "seen={:.4f} unseen={:.4f} hm={:.4f} auc={:.4f}".format(
            self.seen, self.unseen, self.hm, self.auc
        )

    def write(self, curve_path, summary_path):
        self.curve.to_csv(curve_path, index=False, float_format="%.10g")
        with io.open(summary_path, "w", encoding="utf-8") as f:
            f.write(u"{}\n".format(self.summary()))
        return curve_path, summary_path


def accuracy_at_bias(sm, bias):
    """Seen and unseen top-1 accuracy after adding bias to every
    unseen pair's score.

    Parameters:

        sm: ScoreMatrix

        bias: float

    Returns:

        seen_acc, unseen_acc: float
            Over samples with a seen and an unseen truth
    """
    unseen_samples = sm.unseen_samples
    if unseen_samples.all() or not unseen_samples.any():
        msg = (
            "Evaluation needs test samples of seen and of unseen pairs, "
            "got {} seen and {} unseen."
        )
        n_unseen = int(unseen_samples.sum())
        log.error(msg.format(unseen_samples.size - n_unseen, n_unseen))
        raise ValueError(msg.format(unseen_samples.size - n_unseen, n_unseen))

    # argmax returns the lowest index on ties
    predicted = np.argmax(sm.scores + bias * sm.unseen_mask, axis=1)
    hit = predicted == sm.truths

    return float(hit[~unseen_samples].mean()), float(hit[unseen_samples].mean())


def bias_grid(sm, n_biases=50):
    """n_biases uniform points over [-D, D], D = max - min score,
    plus the saturating endpoints -2D and 2D (-1 and 1 if D = 0).
    """
    if n_biases < 2:
        msg = "n_biases must be >= 2, got {}."
        log.error(msg.format(n_biases))
        raise ValueError(msg.format(n_biases))

    span = float(sm.scores.max() - sm.scores.min())
    edge = 2.0 * span if span > 0 else 1.0

    return np.concatenate(
        [[-edge], np.linspace(-span, span, int(n_biases)), [edge]]
    )


def _area(unseen_acc, seen_acc):
    """Trapezoidal area of seen_acc over unseen_acc, duplicate
    unseen_acc values collapsed to their largest seen_acc.
    """
    curve = (
        pd.DataFrame({"x": unseen_acc, "y": seen_acc})
        .groupby("x", sort=True)["y"]
        .max()
    )
    x = curve.index.values
    y = curve.values
    if x.size < 2:
        return 0.0
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def evaluate(sm, n_biases=50):
    """Calibration-bias sweep.

    Parameters:

        sm: ScoreMatrix

        n_biases: int
            Uniform grid points, >= 2
            Default: 50

    Returns:

        report: EvalReport
    """
    r = CzslLabels().set_res_labels()

    grid = bias_grid(sm, n_biases)
    rows = [(b,) + accuracy_at_bias(sm, b) for b in grid]
    curve = pd.DataFrame(rows, columns=[r["bias"], r["seen_acc"], r["unseen_acc"]])

    s = curve[r["seen_acc"]].values
    u = curve[r["unseen_acc"]].values
    denom = s + u
    hm = np.where(denom > 0, 2.0 * s * u / np.where(denom > 0, denom, 1.0), 0.0)

    report = EvalReport(
        seen=float(s.max()),
        unseen=float(u.max()),
        hm=float(hm.max()),
        auc=_area(u, s),
        curve=curve,
    )

    log.debug(report.summary())

    return report


def inference_terms(model, features, space, catalog, chunk_size=256):
    """Cascade and composition terms for every row of features,
    computed in chunks.
    """
    cascade, composition = [], []
    for start in range(0, features.shape[0], chunk_size):
        c, p = model.inference_terms(
            features[start : start + chunk_size], space, catalog
        )
        cascade.append(c)
        composition.append(p)
    return np.concatenate(cascade), np.concatenate(composition)


def score_matrix(model, split, space, beta):
    """Scores test_seen and test_unseen samples of a split."""
    features, truths = split.test_subset()
    cascade, composition = inference_terms(
        model, features, space, split.catalog
    )
    return ScoreMatrix(
        model.blend(cascade, composition, beta),
        truths,
        split.catalog.unseen_mask,
    )


def primitive_accuracy(model, features, attr_ids, obj_ids, space):
    """Top-1 accuracy of the first-stage attribute and object heads.

    Returns:

        accuracy: dict
            {'attr': float, 'obj': float}
    """
    d = CzslLabels().set_data_labels()
    with no_grad():
        a2o = model.forward_a2o(features, space)
        o2a = model.forward_o2a(features, space)

    return {
        d["attr"]: float(np.mean(a2o.predicted_id == np.asarray(attr_ids))),
        d["obj"]: float(np.mean(o2a.predicted_id == np.asarray(obj_ids))),
    }
