import logging

import numpy as np

from cscnet.tools.numerics import (
    Tensor,
    as_tensor,
    clip,
    cosine_matrix,
    ln,
    log_softmax,
    exp,
    mlp_forward,
    pair_concat,
    pick,
    reduce_mean,
    reduce_sum,
    reshape,
    sigmoid,
)

log = logging.getLogger(__name__)

# clamp in every log term
EPS_LOG = 1e-7

PARAMETRIC = "parametric"
NONPARAMETRIC = "nonparametric"
CLASSIFIERS = (PARAMETRIC, NONPARAMETRIC)


def param_cls(scorer, v, S):
    """Parametric classifier, Sigmoid(MLP(Concat(v, S_i))) for
    every class row S_i.

    Parameters:

        scorer: Mlp
            Score learner, input width d_v + d, output width 1

        v: Tensor, (d_v,) or (rows, d_v)
            Visual embedding(s)

        S: Tensor or array, k x d
            Class semantic table

    Returns:

        scores: Tensor, (k,) or (rows, k)
            Matching scores in (0, 1)
    """
    dtype = scorer.w1.dtype
    v = as_tensor(v, dtype=dtype)
    S = as_tensor(S, dtype=dtype)

    if S.ndim != 2 or S.shape[0] == 0:
        msg = "ParamCls needs a non-empty class table, got shape {}."
        log.error(msg.format(S.shape))
        raise ValueError(msg.format(S.shape))
    if scorer.in_dim != v.shape[-1] + S.shape[1] or scorer.out_dim != 1:
        msg = (
            "Score learner expects width {} -> 1, got visual {} + "
            "semantic {} -> {}."
        )
        log.error(
            msg.format(scorer.in_dim, v.shape[-1], S.shape[1], scorer.out_dim)
        )
        raise ValueError(
            msg.format(scorer.in_dim, v.shape[-1], S.shape[1], scorer.out_dim)
        )

    single = v.ndim == 1
    v2 = reshape(v, (1, v.shape[0])) if single else v
    rows, k = v2.shape[0], S.shape[0]

    logits = mlp_forward(scorer, pair_concat(v2, S))
    scores = sigmoid(reshape(logits, (rows, k)))

    return reshape(scores, (k,)) if single else scores


def non_param_cls(v, S, temperature=0.05):
    """Non-parametric classifier, softmax over cosine similarity
    divided by the temperature.

    Parameters:

        v: Tensor, (d_c,) or (rows, d_c)
            Visual embedding(s)

        S: Tensor or array, k x d_c
            Candidate semantic table

        temperature: float
            Softmax temperature, > 0

    Returns:

        probabilities: Tensor, (k,) or (rows, k)
    """
    dtype = v.dtype if isinstance(v, Tensor) else np.float64
    v = as_tensor(v, dtype=dtype)
    S = as_tensor(S, dtype=dtype)

    if not temperature > 0:
        msg = "Softmax temperature must be positive, got {}."
        log.error(msg.format(temperature))
        raise ValueError(msg.format(temperature))
    if S.ndim != 2 or S.shape[0] == 0:
        msg = "NonPaCls needs a non-empty candidate table, got shape {}."
        log.error(msg.format(S.shape))
        raise ValueError(msg.format(S.shape))
    if not (np.all(np.isfinite(v.value)) and np.all(np.isfinite(S.value))):
        msg = "NonPaCls received non-finite embeddings."
        log.error(msg)
        raise ValueError(msg)

    single = v.ndim == 1
    v2 = reshape(v, (1, v.shape[0])) if single else v

    probs = exp(log_softmax(cosine_matrix(v2, S) / temperature, axis=-1))

    return reshape(probs, (S.shape[0],)) if single else probs


def _one_hot(true_id, shape, dtype):
    y = np.zeros(shape, dtype=dtype)
    if len(shape) == 1:
        y[int(true_id)] = 1.0
    else:
        y[np.arange(shape[0]), np.asarray(true_id, dtype=np.int64)] = 1.0
    return y


def _check_ids(true_id, k, what):
    ids = np.atleast_1d(np.asarray(true_id))
    if ids.size == 0 or ids.min() < 0 or ids.max() >= k:
        msg = "Invalid {} index {} for {} classes."
        log.error(msg.format(what, true_id, k))
        raise ValueError(msg.format(what, true_id, k))


def branch_loss(scores, true_id, positive_only=False, eps=EPS_LOG):
    """Binary cross-entropy over all classes for ParamCls scores,
    averaged over classes (and over rows for a batch).

    Parameters:

        scores: Tensor, (k,) or (rows, k)
            Scores in (0, 1)

        true_id: int or array of int
            Ground-truth class per row

        positive_only: boolean
            If True only -log(score_true) is kept,
            without the negative-class terms
            Default: False

        eps: float
            Scores are clamped to [eps, 1 - eps]

    Returns:

        loss: Tensor, scalar
    """
    k = scores.shape[-1]
    _check_ids(true_id, k, "class")

    y = _one_hot(true_id, scores.shape, scores.dtype)
    s = clip(scores, eps, 1.0 - eps)

    if positive_only:
        per_row = -reduce_sum(ln(s) * y, axis=-1)
    else:
        per_row = (
            -reduce_sum(ln(s) * y + ln(1.0 - s) * (1.0 - y), axis=-1) / float(k)
        )

    return reduce_mean(per_row)


def composition_loss(probs, true_pair, eps=EPS_LOG):
    """Cross-entropy -log(P(true pair)), clamped at eps and
    averaged over rows for a batch.
    """
    _check_ids(true_pair, probs.shape[-1], "pair")
    p = clip(pick(probs, true_pair), eps, 1.0)
    return reduce_mean(-ln(p))
