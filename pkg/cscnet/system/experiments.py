import logging
import os
from collections import OrderedDict

import numpy as np
import pandas as pd

from cscnet.comm.label_map import CzslLabels
from cscnet.comm.sql import Sql
from cscnet.system.data import (
    SynthSpec,
    generate_synthetic_dataset,
    load_dataset,
    write_dataset,
)
from cscnet.system.evaluation import (
    ScoreMatrix,
    evaluate,
    inference_terms,
    score_matrix,
)
from cscnet.system.models import LOSS_TERMS, CSCNet
from cscnet.system.semantics import (
    CompositionCatalog,
    _seed_words,
    generate_synthetic_embeddings,
    load_embeddings,
    write_embeddings,
)
from cscnet.system.training import Trainer
from cscnet.tools.numerics import grad_check, profile_dtype

log = logging.getLogger(__name__)

_ALL_BRANCHES = {"a2o": True, "o2a": True, "composition": True}


def _classifiers(primitive, composition):
    changes = dict(_ALL_BRANCHES)
    changes.update(
        primitive_classifier=primitive, composition_classifier=composition
    )
    return changes


_R = CzslLabels().set_res_labels()

# (group, variant, config changes), the branch variants
# add cascades on top of the composition branch
ABLATION_VARIANTS = [
    (
        _R["branch_group"],
        "composition",
        {"a2o": False, "o2a": False, "composition": True, "beta": 0.0},
    ),
    (_R["branch_group"], "+a2o", {"a2o": True, "o2a": False, "composition": True}),
    (_R["branch_group"], "+o2a", {"a2o": False, "o2a": True, "composition": True}),
    (_R["branch_group"], "+a2o+o2a", dict(_ALL_BRANCHES)),
    (_R["classifier_group"], "M1", _classifiers("nonparametric", "nonparametric")),
    (_R["classifier_group"], "M2", _classifiers("parametric", "parametric")),
    (_R["classifier_group"], "M3", _classifiers("nonparametric", "parametric")),
    (_R["classifier_group"], "M4", _classifiers("parametric", "nonparametric")),
]

# tiny gradient check setup
GRAD_CHECK_DIMS = OrderedDict(
    [("d_x", 8), ("d", 8), ("d_v", 8), ("d_c", 8), ("hidden", 8)]
)
GRAD_CHECK_N_ATTRS = 3
GRAD_CHECK_N_OBJS = 4
GRAD_CHECK_BATCH = 2


class Results(object):
    """Writes result tables into the output directory, as CSV
    and into the sqlite results database.

    Parameters:

        out: str
            Output directory, created if missing
    """

    def __init__(self, out):
        self.out = out
        self.f = CzslLabels().set_file_labels()
        self.r = CzslLabels().set_res_labels()
        try:
            if not os.path.isdir(out):
                os.makedirs(out)
        except OSError as e:
            msg = "Cannot create the output directory {}: {}."
            log.error(msg.format(out, e))
            raise ValueError(msg.format(out, e))

    def path(self, file_key):
        return os.path.join(self.out, self.f[file_key])

    def store(self, df, file_key, table_key):
        path = self.path(file_key)
        df.to_csv(path, index=False, float_format="%.10g")

        db = Sql(self.path("results_db"))
        db.pd2table(df, self.r[table_key], close=True)

        msg = "Wrote {} rows to {} and table {}."
        log.info(msg.format(df.shape[0], path, self.r[table_key]))
        return path


def build_space(cfg):
    """Semantic space from cfg.embeddings, or synthetic."""
    if cfg.embeddings:
        space = load_embeddings(cfg.embeddings)
    else:
        space = generate_synthetic_embeddings(
            cfg.n_attrs, cfg.n_objs, cfg.d, cfg.dataset_seed, cos_cap=cfg.cos_cap
        )
    if space.dim != cfg.d:
        msg = "Embeddings have dim={}, the configuration has d={}."
        log.error(msg.format(space.dim, cfg.d))
        raise ValueError(msg.format(space.dim, cfg.d))
    return space


def build_dataset(cfg, space):
    """DatasetSplit from cfg.features and cfg.labels, or synthetic."""
    if cfg.features:
        split = load_dataset(cfg.features, cfg.labels, space)
    else:
        spec = SynthSpec(
            n_attrs=cfg.n_attrs,
            n_objs=cfg.n_objs,
            d_x=cfg.d_x,
            samples_per_pair=cfg.samples_per_pair,
            seen_fraction=cfg.seen_fraction,
            noise_sigma=cfg.noise_sigma,
            entanglement=cfg.entanglement,
            seed=cfg.dataset_seed,
            test_fraction=cfg.test_fraction,
        )
        split = generate_synthetic_dataset(spec, space)
    if split.d_x != cfg.d_x:
        msg = "Features have d_x={}, the configuration has d_x={}."
        log.error(msg.format(split.d_x, cfg.d_x))
        raise ValueError(msg.format(split.d_x, cfg.d_x))
    return split


def model_options(cfg):
    """Constructor keywords of CSCNet besides dims and seed."""
    return dict(
        dtype=profile_dtype(cfg.profile),
        primitive_classifier=cfg.primitive_classifier,
        composition_classifier=cfg.composition_classifier,
        temperature=cfg.temperature,
        branches=cfg.branches,
        teacher_forcing=cfg.teacher_forcing,
        positive_only=cfg.positive_only,
    )


def build_model(cfg):
    return CSCNet(cfg.dims, random_state=cfg.seed, **model_options(cfg))


def checkpoint_path(cfg, results):
    return cfg.checkpoint or results.path("checkpoint")


def fit(cfg, space, split):
    """Builds and trains a model on split.

    Returns:

        model, train_log: CSCNet, pd.DataFrame
    """
    model = build_model(cfg)
    trainer = Trainer(
        model,
        space,
        alpha=cfg.alpha,
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
    )
    train_log = trainer.fit(split, cfg.epochs)
    return model, train_log


def gen_data(cfg):
    """Writes synthetic embeddings, features and labels.

    Returns:

        paths, split: dict, DatasetSplit
    """
    results = Results(cfg.out)
    space = build_space(cfg)
    split = build_dataset(cfg, space)

    paths = {
        "embeddings": results.path("embeddings"),
        "features": results.path("features"),
        "labels": results.path("labels"),
    }
    write_embeddings(space, paths["embeddings"])
    write_dataset(split, paths["features"], paths["labels"])

    msg = "Catalog: {}."
    log.info(msg.format(split.summary()))

    return paths, split


def train(cfg):
    """Trains on the configured data and writes the checkpoint
    and the training log.

    Returns:

        model, train_log, path: CSCNet, pd.DataFrame, str
    """
    results = Results(cfg.out)
    space = build_space(cfg)
    split = build_dataset(cfg, space)

    model, train_log = fit(cfg, space, split)

    path = model.save(checkpoint_path(cfg, results))
    results.store(train_log, "train_log", "tab_train")

    return model, train_log, path


def load_model(cfg, results):
    return CSCNet.load(
        checkpoint_path(cfg, results), expected_dims=cfg.dims, **model_options(cfg)
    )


def eval_checkpoint(cfg):
    """Scores the test samples with the checkpoint at cfg.beta and
    writes the curve and the summary.

    Returns:

        report: EvalReport
    """
    results = Results(cfg.out)
    space = build_space(cfg)
    split = build_dataset(cfg, space)
    model = load_model(cfg, results)

    report = evaluate(score_matrix(model, split, space, cfg.beta), cfg.n_biases)
    report.write(results.path("curve"), results.path("summary"))

    r = results.r
    results.store(report.to_frame(), "curve", "tab_curve")
    summary = pd.DataFrame([report.metrics()])
    summary.insert(0, r["beta"], cfg.beta)
    Sql(results.path("results_db")).pd2table(
        summary, r["tab_summary"], close=True
    )

    log.info(report.summary())

    return report


def beta_sweep(cfg, betas=None):
    """Rescores one checkpoint at every beta without retraining.

    Returns:

        sweep: pd.DataFrame
            Columns beta, auc, hm, seen, unseen
    """
    r = CzslLabels().set_res_labels()
    betas = cfg.betas if betas is None else tuple(betas)
    for beta in betas:
        if not 0.0 <= beta <= 1.0:
            msg = "Sweep beta {} lies outside [0, 1]."
            log.error(msg.format(beta))
            raise ValueError(msg.format(beta))

    results = Results(cfg.out)
    space = build_space(cfg)
    split = build_dataset(cfg, space)
    model = load_model(cfg, results)

    features, truths = split.test_subset()
    cascade, composition = inference_terms(model, features, space, split.catalog)

    rows = []
    for beta in betas:
        sm = ScoreMatrix(
            model.blend(cascade, composition, beta),
            truths,
            split.catalog.unseen_mask,
        )
        report = evaluate(sm, cfg.n_biases)
        rows.append(
            [beta, report.auc, report.hm, report.seen, report.unseen]
        )
        log.info("beta={} {}".format(beta, report.summary()))

    sweep = pd.DataFrame(
        rows, columns=[r["beta"], r["auc"], r["hm"], r["seen"], r["unseen"]]
    )
    results.store(sweep, "sweep", "tab_sweep")

    return sweep


def ablate(cfg):
    """Trains and evaluates every ablation variant for each seed in
    cfg.ablation_seeds on one dataset.

    Returns:

        runs, means: pd.DataFrame, pd.DataFrame
            One row per (variant, seed), and the per-variant means
    """
    r = CzslLabels().set_res_labels()
    results = Results(cfg.out)
    space = build_space(cfg)
    split = build_dataset(cfg, space)
    dataset_hash = split.fingerprint()

    rows = []
    for seed in cfg.ablation_seeds:
        for group, variant, changes in ABLATION_VARIANTS:
            vcfg = cfg.replace(seed=seed, data_seed=cfg.dataset_seed, **changes)
            model, _ = fit(vcfg, space, split)
            report = evaluate(
                score_matrix(model, split, space, vcfg.beta), vcfg.n_biases
            )
            rows.append(
                [
                    group,
                    variant,
                    seed,
                    dataset_hash,
                    report.auc,
                    report.hm,
                    report.seen,
                    report.unseen,
                ]
            )
            msg = "Ablation {} seed {}: {}."
            log.info(msg.format(variant, seed, report.summary()))

    metrics = [r["auc"], r["hm"], r["seen"], r["unseen"]]
    runs = pd.DataFrame(
        rows,
        columns=[r["group"], r["variant"], r["seed"], r["dataset_hash"]]
        + metrics,
    )
    means = (
        runs.groupby([r["group"], r["variant"]], sort=False)[metrics]
        .mean()
        .reset_index()
    )

    results.store(runs, "ablation", "tab_ablation")
    results.store(means, "ablation_mean", "tab_ablation_mean")

    return runs, means


def grad_check_setup(cfg):
    """Tiny 64-bit model, space, catalog and two-sample batch."""
    space = generate_synthetic_embeddings(
        GRAD_CHECK_N_ATTRS, GRAD_CHECK_N_OBJS, GRAD_CHECK_DIMS["d"], cfg.seed
    )
    pairs = [(a, o) for a in range(space.n) for o in range(space.m)]
    catalog = CompositionCatalog(pairs, np.ones(len(pairs), dtype=bool), space)

    model = CSCNet(
        GRAD_CHECK_DIMS,
        random_state=cfg.seed,
        dtype=np.float64,
        primitive_classifier=cfg.primitive_classifier,
        composition_classifier=cfg.composition_classifier,
        temperature=cfg.temperature,
        teacher_forcing=cfg.teacher_forcing,
        positive_only=cfg.positive_only,
    )

    random_state = np.random.RandomState(_seed_words(cfg.seed, GRAD_CHECK_BATCH))
    features = random_state.randn(GRAD_CHECK_BATCH, GRAD_CHECK_DIMS["d_x"])
    attr_ids = random_state.randint(space.n, size=GRAD_CHECK_BATCH)
    obj_ids = random_state.randint(space.m, size=GRAD_CHECK_BATCH)

    return model, space, catalog, (features, attr_ids, obj_ids)


def grad_check_suite(cfg):
    """Gradient checks of every loss term and of the total loss at
    each alpha in cfg.grad_check_alphas.

    Returns:

        checks, passed: pd.DataFrame, boolean
    """
    r = CzslLabels().set_res_labels()
    model, space, catalog, batch = grad_check_setup(cfg)
    params = model.parameters()

    grad_hook = None
    if cfg.corrupt_block:
        if cfg.corrupt_block not in params:
            msg = "corrupt_block '{}' is not a parameter block, use one of {}."
            log.error(msg.format(cfg.corrupt_block, list(params)))
            raise ValueError(msg.format(cfg.corrupt_block, list(params)))

        def grad_hook(name, grad):
            if name == cfg.corrupt_block:
                return grad + 1e-2 * (1.0 + np.abs(grad))
            return grad

    def term(name):
        return lambda: model.loss_terms(
            *(batch + (space, catalog)), only=(name,)
        )[name]

    def total(alpha):
        return lambda: model.total_loss(*(batch + (space, catalog, alpha)))

    targets = [(name, None, term(name)) for name in LOSS_TERMS]
    targets += [("total", alpha, total(alpha)) for alpha in cfg.grad_check_alphas]

    rows = []
    for name, alpha, f in targets:
        report = grad_check(
            f,
            params,
            step=cfg.grad_check_step,
            tol=cfg.grad_check_tol,
            grad_hook=grad_hook,
        )
        rows.append(
            [
                name,
                np.nan if alpha is None else alpha,
                report.max_rel_error,
                report.worst[0],
                report.passed,
            ]
        )
        msg = "Gradient check {} (alpha={}): {}."
        log.info(msg.format(name, alpha, report))

    checks = pd.DataFrame(
        rows,
        columns=[
            r["check"],
            r["alpha"],
            r["max_rel_error"],
            r["worst_block"],
            r["passed"],
        ],
    )
    Results(cfg.out).store(checks, "grad_check", "tab_grad_check")

    return checks, bool(checks[r["passed"]].all())
