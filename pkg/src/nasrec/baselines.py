"""Comparison models sharing the evaluation harness.

* plain BPR matrix factorization (no social information)
* the uniform-attention ablation: every friend weight fixed to 1, so the
  aggregated effect is an unnormalized sum and no attention parameters exist
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import DatasetSplit, InteractionSet, SocialGraph
from .errors import DataError
from .model import LatentFactors
from .nn import AdamState, adam_step_rows
from .training import TrainConfig, TrainResult, mf_pretrain, \
    pretrain_shallow_then_deepen, run_training

log = logging.getLogger(__name__)


@dataclass
class BprMfModel:
    """Latent factor model scoring score(u, i) = u . v."""

    factors: LatentFactors
    tag: str = "bpr_mf"

    def score_items(self, user: int, items: np.ndarray, seed: int = 0) -> np.ndarray:
        return self.factors.item_vecs[np.asarray(items, dtype=np.int64)] @ \
            self.factors.user_vecs[user]

    def copy(self) -> "BprMfModel":
        return BprMfModel(factors=self.factors.copy())


def bpr_mf_triple_grads(user_vec: np.ndarray, v_pos: np.ndarray, v_neg: np.ndarray,
                        l2_reg: float):
    """Loss and exact gradients of one regularized BPR-MF triple.

    loss = -log sigmoid(u.(v+ - v-)) + l2 * (|u|^2 + |v+|^2 + |v-|^2)
    """
    margin = float(user_vec @ (v_pos - v_neg))
    loss = float(np.logaddexp(0.0, -margin)) + l2_reg * (
        float(user_vec @ user_vec) + float(v_pos @ v_pos) + float(v_neg @ v_neg))
    g = float(expit(margin)) - 1.0
    grad_u = g * (v_pos - v_neg) + 2.0 * l2_reg * user_vec
    grad_pos = g * user_vec + 2.0 * l2_reg * v_pos
    grad_neg = -g * user_vec + 2.0 * l2_reg * v_neg
    return loss, grad_u, grad_pos, grad_neg


class BprMfEngine:
    """Batch gradients and Adam updates for the BPR-MF baseline."""

    def __init__(self, config: TrainConfig, factors: LatentFactors):
        self.config = config
        self.factors = factors
        self.adam_users = AdamState.for_param(factors.user_vecs)
        self.adam_items = AdamState.for_param(factors.item_vecs)

    def current_model(self) -> BprMfModel:
        return BprMfModel(factors=self.factors)

    def snapshot_model(self) -> BprMfModel:
        return self.current_model().copy()

    def compute_batch(self, triples: np.ndarray):
        scale = 1.0 / len(triples)
        d_users: dict[int, np.ndarray] = {}
        d_items: dict[int, np.ndarray] = {}
        losses: list[float] = []
        for user, pos, neg in triples:
            user, pos, neg = int(user), int(pos), int(neg)
            loss, grad_u, grad_pos, grad_neg = bpr_mf_triple_grads(
                self.factors.user_vecs[user], self.factors.item_vecs[pos],
                self.factors.item_vecs[neg], self.config.l2_reg)
            losses.append(loss)
            d_users[user] = d_users.get(user, 0.0) + scale * grad_u
            d_items[pos] = d_items.get(pos, 0.0) + scale * grad_pos
            d_items[neg] = d_items.get(neg, 0.0) + scale * grad_neg
        return float(np.sum(losses)), losses, d_users, d_items

    def process_batch(self, triples: np.ndarray) -> float:
        loss_sum, _, d_users, d_items = self.compute_batch(triples)
        rows = np.array(sorted(d_users), dtype=np.int64)
        adam_step_rows(self.factors.user_vecs, rows,
                       np.stack([d_users[int(r)] for r in rows]),
                       self.adam_users, self.config.lr, block="factors.user_vecs")
        rows = np.array(sorted(d_items), dtype=np.int64)
        adam_step_rows(self.factors.item_vecs, rows,
                       np.stack([d_items[int(r)] for r in rows]),
                       self.adam_items, self.config.lr, block="factors.item_vecs")
        return loss_sum


def init_bpr_mf_factors(n: int, m: int, d: int, seed: int) -> LatentFactors:
    rng = np.random.default_rng(np.random.SeedSequence([0xB9F, seed]))
    return LatentFactors(user_vecs=0.1 * rng.standard_normal((n, d)),
                         item_vecs=0.1 * rng.standard_normal((m, d)))


def train_bpr_mf(config: TrainConfig, train: InteractionSet,
                 validation: InteractionSet | None = None) -> TrainResult:
    """Train the BPR-MF baseline from random factors, same loop as the main model."""
    config.validate()
    if len(train) == 0:
        raise DataError("training set is empty")
    factors = init_bpr_mf_factors(train.n, train.m, config.d, config.seed)
    engine = BprMfEngine(config, factors)
    return run_training(engine, config, train, validation)


def build_nas_star(config: TrainConfig, data: DatasetSplit, graph: SocialGraph,
                   factors: LatentFactors | None = None) -> TrainResult:
    """Train the uniform-attention ablation end to end.

    Identical pipeline to the full model (MF pretraining included when
    factors are not supplied, shallow-then-deepen for h >= 2) except that
    friend weights are fixed to 1 and no attention parameters exist.
    """
    if factors is None:
        factors = mf_pretrain(data.train, config.d, config.mf_epochs, config.mf_lr,
                              config.mf_reg, config.seed)
    return pretrain_shallow_then_deepen(config, data, graph, factors, attention=False)
