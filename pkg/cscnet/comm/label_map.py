class CzslLabels(object):
    """Maps table, file and report labels to short labels
    used in the cscnet analysis code.

    Examples:

        >>> d = CzslLabels().set_data_labels()
        >>> train = labels[labels[d["split"]] == d["train"]]
    """

    def __init__(self):
        pass

    def set_data_labels(self):
        """Dataset related labels"""

        self.data_l = {
            # sample table columns
            "attr": "attr",
            "obj": "obj",
            "attr_id": "attr_id",
            "obj_id": "obj_id",
            "pair_id": "pair_id",
            "split": "split",
            # split values as written in the labels file
            "train": "train",
            "test_seen": "test_seen",
            "test_unseen": "test_unseen",
            # embedding file sections
            "attr_section": "[attributes]",
            "obj_section": "[objects]",
            # binary headers
            "emb_header": "czsl-emb v1",
            "feat_header": "czsl-feat v1",
            "ckpt_header": "czsl-ckpt v1",
        }

        return self.data_l

    def set_res_labels(self):
        """Result related labels"""

        self.res_l = {
            # evaluation curve
            "bias": "bias",
            "seen_acc": "seen_acc",
            "unseen_acc": "unseen_acc",
            # summary metrics
            "seen": "seen",
            "unseen": "unseen",
            "hm": "hm",
            "auc": "auc",
            # sweeps and ablations
            "beta": "beta",
            "variant": "variant",
            "group": "group",
            "seed": "seed",
            "dataset_hash": "dataset_hash",
            "branch_group": "branches",
            "classifier_group": "classifiers",
            # training log
            "epoch": "epoch",
            "loss": "loss",
            # grad check
            "check": "check",
            "alpha": "alpha",
            "max_rel_error": "max_rel_error",
            "worst_block": "worst_block",
            "passed": "passed",
            # results db tables
            "tab_curve": "eval_curve",
            "tab_summary": "eval_summary",
            "tab_train": "train_log",
            "tab_sweep": "beta_sweep",
            "tab_ablation": "ablation",
            "tab_ablation_mean": "ablation_mean",
            "tab_grad_check": "grad_check",
        }

        return self.res_l

    def set_file_labels(self):
        """Default file names inside an output directory"""

        self.file_l = {
            "embeddings": "embeddings.txt",
            "features": "features.bin",
            "labels": "labels.txt",
            "checkpoint": "model.ckpt",
            "train_log": "train_log.csv",
            "curve": "curve.csv",
            "summary": "summary.txt",
            "sweep": "beta_sweep.csv",
            "ablation": "ablation.csv",
            "ablation_mean": "ablation_mean.csv",
            "grad_check": "grad_check.csv",
            "results_db": "results.db",
        }

        return self.file_l
