import logging

import numpy as np
import pandas as pd

from cscnet.comm.label_map import CzslLabels
from cscnet.system.data import batches
from cscnet.system.models import LOSS_TERMS
from cscnet.tools.numerics import AdamState, adam_step, zero_grads

log = logging.getLogger(__name__)


class Trainer(object):
    """Joint training of every enabled CSCNet branch with Adam.

    Parameters:

        model: CSCNet

        space: SemanticSpace

        alpha: float
            Weight of the cascade losses, >= 0

        lr: float
            Adam learning rate

        batch_size: int

        seed: int
            Batch order seed, each epoch reshuffles with (seed, epoch)

        log_level: logging level or None
            Level of this module logger, None leaves it to the
            application logging setup
            Default: None
    """

    def __init__(
        self,
        model,
        space,
        alpha=4.0,
        lr=5e-3,
        batch_size=32,
        seed=0,
        log_level=None,
    ):

        if log_level is not None:
            log.setLevel(log_level)

        if alpha < 0:
            msg = "alpha must be non-negative, got {}."
            log.error(msg.format(alpha))
            raise ValueError(msg.format(alpha))
        if not lr > 0:
            msg = "The learning rate must be positive, got {}."
            log.error(msg.format(lr))
            raise ValueError(msg.format(lr))

        self.model = model
        self.space = space
        self.alpha = float(alpha)
        self.batch_size = int(batch_size)
        self.seed = seed

        self.params = model.parameters()
        self.state = AdamState(self.params, lr=lr)
        self.epoch = 0

        self.r = CzslLabels().set_res_labels()

    def step(self, batch, catalog):
        """One Adam update on a batch.

        Returns:

            loss, terms: float, dict of float
        """
        zero_grads(self.params)
        terms = self.model.loss_terms(
            batch.features, batch.attr_ids, batch.obj_ids, self.space, catalog
        )
        loss = self.model.combine(terms, self.alpha)
        loss.backward()
        adam_step(self.params, self.state)

        return loss.item(), {k: t.item() for k, t in terms.items()}

    def fit(self, split, epochs):
        """Runs epochs over the train samples of split.

        Parameters:

            split: DatasetSplit

            epochs: int

        Returns:

            train_log: pd.DataFrame
                Columns epoch, loss and the mean of every active loss
                term, one row per epoch
        """
        rows = []
        for _ in range(int(epochs)):
            epoch = self.epoch
            losses = []
            term_sums = {}
            sizes = []
            for b, batch in enumerate(
                batches(split, self.batch_size, self.seed, epoch)
            ):
                loss, terms = self.step(batch, split.catalog)
                if not np.isfinite(loss):
                    msg = "Non-finite loss {} at epoch {}, batch {}."
                    log.error(msg.format(loss, epoch, b))
                    raise FloatingPointError(msg.format(loss, epoch, b))
                log.debug("epoch {} batch {} loss {:.6f}".format(epoch, b, loss))

                n = batch.rows.shape[0]
                losses.append(loss * n)
                sizes.append(n)
                for k, v in terms.items():
                    term_sums[k] = term_sums.get(k, 0.0) + v * n

            total = float(np.sum(sizes))
            row = {self.r["epoch"]: epoch, self.r["loss"]: np.sum(losses) / total}
            for k in LOSS_TERMS:
                if k in term_sums:
                    row[k] = term_sums[k] / total
            rows.append(row)

            msg = "Epoch {}: mean loss {:.6f}."
            log.info(msg.format(epoch, row[self.r["loss"]]))
            self.epoch += 1

        columns = [self.r["epoch"], self.r["loss"]] + [
            k for k in LOSS_TERMS if rows and k in rows[0]
        ]
        return pd.DataFrame(rows, columns=columns)
