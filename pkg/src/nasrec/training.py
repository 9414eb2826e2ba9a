"""MF pretraining, BPR loss, negative sampling, and the mini-batch Adam loop.

The training loop is sequential and fully seeded: identical config and seed
produce bit-identical models. Negative items are resampled fresh every
epoch, triples are shuffled, and gradients are averaged over each batch.
Per-epoch validation NDCG@10 decides which snapshot is kept.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .data import DatasetSplit, InteractionSet, SocialGraph, binarize_relevance, \
    sample_neighbor_subset
from .errors import ConfigError, DataError, TrainingError
from .evaluation import evaluate
from .model import LatentFactors, NasParameters, SocialAttentionModel, \
    user_backward, user_forward
from .nn import AdamState, adam_step, adam_step_rows

log = logging.getLogger(__name__)

# seed-stream domain tags, so independent rngs never share a stream
_SEED_FACTORS = 0x0FAC
_SEED_EPOCH = 0x7E41
_DEEPEN_SEED_OFFSET = 104729  # fresh layers in phase 2 of shallow-then-deepen


@dataclass
class TrainConfig:
    """Hyperparameters for pretraining and BPR training."""

    d: int = 50
    h: int = 3
    k_max: int = 30
    neg_per_pos: int = 9
    batch_size: int = 512
    lr: float = 1e-4
    epochs: int = 20
    seed: int = 0
    mf_epochs: int = 30
    mf_lr: float = 0.02
    mf_reg: float = 0.01
    l2_reg: float = 0.01            # BPR-MF baseline only
    finetune_embeddings: bool = True
    star_mean: bool = False         # mean aggregation for the uniform ablation

    def problems(self) -> list[str]:
        """All validation failures, for exhaustive config error reports."""
        errs = []
        for name in ("d", "h", "k_max", "neg_per_pos", "batch_size", "epochs", "mf_epochs"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                errs.append(f"{name} must be a positive integer, got {value!r}")
        for name in ("lr", "mf_lr"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                errs.append(f"{name} must be >= 0, got {value!r}")
        for name in ("mf_reg", "l2_reg"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                errs.append(f"{name} must be >= 0, got {value!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            errs.append(f"seed must be a non-negative integer, got {self.seed!r}")
        return errs

    def validate(self) -> None:
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))


class TrainTriple(NamedTuple):
    user: int
    pos_item: int
    neg_item: int


@dataclass
class EpochLogRow:
    epoch: int
    mean_loss: float
    val_recall: float | None
    val_ndcg: float | None
    seconds: float


@dataclass
class TrainResult:
    model: object                  # SocialAttentionModel or BprMfModel
    log: list[EpochLogRow]
    best_epoch: int | None


def bpr_loss(score_pos: float, score_neg: float) -> float:
    """Pairwise ranking loss -log sigmoid(score_pos - score_neg), computed stably."""
    return float(np.logaddexp(0.0, -(score_pos - score_neg)))


def mf_pretrain(train: InteractionSet, d: int, mf_epochs: int, mf_lr: float,
                mf_reg: float, seed: int,
                rmse_out: list[float] | None = None) -> LatentFactors:
    """SGD matrix factorization on squared rating error with L2 shrinkage.

    Minimizes (r - u.v)^2 + mf_reg * (|u|^2 + |v|^2) per observation; the
    training RMSE is logged each epoch (and appended to `rmse_out` if given).
    """
    if len(train) == 0:
        raise DataError("cannot pretrain factors on an empty interaction set")
    rng = np.random.default_rng(np.random.SeedSequence([_SEED_FACTORS, seed]))
    user_vecs = 0.1 * rng.standard_normal((train.n, d))
    item_vecs = 0.1 * rng.standard_normal((train.m, d))
    users, items, ratings = train.users, train.items, train.ratings

    def rmse() -> float:
        preds = np.einsum("ij,ij->i", user_vecs[users], item_vecs[items])
        return float(np.sqrt(np.mean((ratings - preds) ** 2)))

    initial = rmse()
    for epoch in range(1, mf_epochs + 1):
        # divergence is detected at epoch end, so let overflow run silently
        with np.errstate(over="ignore", invalid="ignore"):
            for t in rng.permutation(len(train)):
                u, i = users[t], items[t]
                uu = user_vecs[u]
                vv = item_vecs[i]
                err = ratings[t] - uu @ vv
                grad_u = -2.0 * err * vv + 2.0 * mf_reg * uu
                grad_v = -2.0 * err * uu + 2.0 * mf_reg * vv
                user_vecs[u] = uu - mf_lr * grad_u
                item_vecs[i] = vv - mf_lr * grad_v
            epoch_rmse = rmse()
        log.info("mf_pretrain epoch %d rmse %.6f", epoch, epoch_rmse)
        if rmse_out is not None:
            rmse_out.append(epoch_rmse)
        if not math.isfinite(epoch_rmse) or epoch_rmse > 10.0 * initial:
            raise TrainingError(
                f"MF pretraining diverged at epoch {epoch} "
                f"(RMSE {epoch_rmse:.3g} vs initial {initial:.3g}); reduce mf_lr")
    return LatentFactors(user_vecs=user_vecs, item_vecs=item_vecs)


def sample_negatives(user: int, train_items_of_user: set[int], neg_per_pos: int,
                     m: int, rng: np.random.Generator) -> list[int]:
    """Uniform rejection sample of unobserved items (i.i.d., duplicates possible)."""
    if len(train_items_of_user) >= m:
        raise DataError(f"user {user} has interacted with every item; no negatives exist")
    out: list[int] = []
    for _ in range(neg_per_pos):
        item = int(rng.integers(0, m))
        while item in train_items_of_user:
            item = int(rng.integers(0, m))
        out.append(item)
    return out


def build_epoch_triples(train: InteractionSet, neg_per_pos: int,
                        rng: np.random.Generator,
                        exhausted_warned: set[int] | None = None) -> np.ndarray:
    """Shuffled (user, pos, neg) rows for one epoch, negatives drawn fresh.

    Users who rated every item are skipped with a one-time warning.
    """
    pos_sets = train.positive_items()
    rows: list[tuple[int, int, int]] = []
    for t in range(len(train)):
        user = int(train.users[t])
        pos = int(train.items[t])
        pos_set = pos_sets[user]
        if len(pos_set) >= train.m:
            if exhausted_warned is not None and user not in exhausted_warned:
                log.warning("user %d has rated every item; skipping their triples", user)
                exhausted_warned.add(user)
            continue
        for neg in sample_negatives(user, pos_set, neg_per_pos, train.m, rng):
            rows.append((user, pos, neg))
    triples = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return triples[rng.permutation(len(triples))]


class NasEngine:
    """Batch gradient computation and Adam updates for the social model.

    Triples in a batch are grouped by user so the user-side network runs
    (forward and backward) once per distinct user with the summed upstream
    gradient; the result is exactly the batch-mean gradient.
    """

    def __init__(self, config: TrainConfig, factors: LatentFactors,
                 params: NasParameters, neighbors: tuple[np.ndarray, ...]):
        self.config = config
        self.factors = factors
        self.params = params
        self.neighbors = neighbors
        self.contexts = [
            sample_neighbor_subset(neighbors[u], config.k_max, config.seed, u)
            for u in range(factors.n)
        ]
        self.adam = {name: AdamState.for_param(arr) for name, arr in params.named_arrays()}
        self.adam_users = AdamState.for_param(factors.user_vecs)
        self.adam_items = AdamState.for_param(factors.item_vecs)

    def current_model(self) -> SocialAttentionModel:
        return SocialAttentionModel(factors=self.factors, params=self.params,
                                    neighbors=self.neighbors, k_max=self.config.k_max,
                                    star_mean=self.config.star_mean)

    def snapshot_model(self) -> SocialAttentionModel:
        return self.current_model().copy()

    def compute_batch(self, triples: np.ndarray):
        """Mean loss and mean gradients over one batch, without applying them."""
        batch = len(triples)
        scale = 1.0 / batch
        grads = NasParameters.zeros_like(self.params)
        d_users: dict[int, np.ndarray] = {}
        d_items: dict[int, np.ndarray] = {}
        losses: list[float] = []
        gamma_mode = self.current_model().gamma_mode
        order = np.argsort(triples[:, 0], kind="stable")
        boundaries = np.flatnonzero(np.diff(triples[order, 0])) + 1
        for chunk in np.split(order, boundaries) if batch else []:
            user = int(triples[chunk[0], 0])
            cache = user_forward(user, self.contexts[user], self.factors,
                                 self.params, gamma_mode)
            pos = triples[chunk, 1]
            neg = triples[chunk, 2]
            v_pos = self.factors.item_vecs[pos]
            v_neg = self.factors.item_vecs[neg]
            margins = (v_pos - v_neg) @ cache.z
            losses.extend(np.logaddexp(0.0, -margins).tolist())
            g = (expit(margins) - 1.0) * scale       # dL/d score_pos per triple
            dz = g @ (v_pos - v_neg)
            for idx in range(len(chunk)):
                p, q = int(pos[idx]), int(neg[idx])
                gz = g[idx] * cache.z
                d_items[p] = d_items.get(p, 0.0) + gz
                d_items[q] = d_items.get(q, 0.0) - gz
            du, d_friends = user_backward(cache, dz, self.params, grads)
            d_users[user] = d_users.get(user, 0.0) + du
            for row, fid in enumerate(cache.friend_ids):
                fid = int(fid)
                d_users[fid] = d_users.get(fid, 0.0) + d_friends[row]
        return float(np.sum(losses)), losses, grads, d_users, d_items

    def process_batch(self, triples: np.ndarray) -> float:
        """Compute batch-mean gradients, apply Adam, return the loss sum."""
        loss_sum, _, grads, d_users, d_items = self.compute_batch(triples)
        param_pairs = zip(self.params.named_arrays(), grads.named_arrays())
        for (name, param), (_, grad) in param_pairs:
            adam_step(param, grad, self.adam[name], self.config.lr, block=name)
        if self.config.finetune_embeddings:
            if d_users:
                rows = np.array(sorted(d_users), dtype=np.int64)
                adam_step_rows(self.factors.user_vecs, rows,
                               np.stack([d_users[int(r)] for r in rows]),
                               self.adam_users, self.config.lr, block="factors.user_vecs")
            if d_items:
                rows = np.array(sorted(d_items), dtype=np.int64)
                adam_step_rows(self.factors.item_vecs, rows,
                               np.stack([d_items[int(r)] for r in rows]),
                               self.adam_items, self.config.lr, block="factors.item_vecs")
        return loss_sum


def run_training(engine, config: TrainConfig, train_set: InteractionSet,
                 validation: InteractionSet | None) -> TrainResult:
    """Shared epoch loop: triples, batches, Adam, validation, best retention."""
    config.validate()
    if len(train_set) == 0:
        raise DataError("training set is empty")
    val_labels = None
    train_pos = train_set.positive_items()
    if validation is not None and len(validation) > 0:
        candidate = binarize_relevance(validation)
        if any(candidate.relevant.values()):
            val_labels = candidate
        else:
            log.warning("validation set has no relevant items; best-model tracking disabled")
    exhausted: set[int] = set()
    rows: list[EpochLogRow] = []
    best_ndcg = -math.inf
    best_epoch = None
    best_model = None
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        rng = np.random.default_rng(np.random.SeedSequence([_SEED_EPOCH, config.seed, epoch]))
        triples = build_epoch_triples(train_set, config.neg_per_pos, rng, exhausted)
        if len(triples) == 0:
            raise DataError("no trainable triples (all users exhausted the item universe)")
        loss_total = 0.0
        for start in range(0, len(triples), config.batch_size):
            batch = triples[start:start + config.batch_size]
            loss_sum = engine.process_batch(batch)
            if not math.isfinite(loss_sum):
                raise TrainingError(
                    f"non-finite loss in epoch {epoch}, batch starting at triple {start}")
            loss_total += loss_sum
        mean_loss = loss_total / len(triples)
        val_recall = val_ndcg = None
        if val_labels is not None:
            report = evaluate(engine.current_model(), val_labels, train_pos,
                              num_items=train_set.m, top_n=10, runs=1,
                              seeds=[config.seed])
            val_recall, val_ndcg = report.recall_mean, report.ndcg_mean
            if val_ndcg > best_ndcg:
                best_ndcg = val_ndcg
                best_epoch = epoch
                best_model = engine.snapshot_model()
        seconds = time.perf_counter() - started
        rows.append(EpochLogRow(epoch, mean_loss, val_recall, val_ndcg, seconds))
        log.info("epoch %d mean_loss %.6f val_ndcg %s (%.2fs)", epoch, mean_loss,
                 "n/a" if val_ndcg is None else f"{val_ndcg:.6f}", seconds)
    if best_model is None:
        best_model = engine.snapshot_model()
        best_epoch = None
    return TrainResult(model=best_model, log=rows, best_epoch=best_epoch)


def train(config: TrainConfig, data: DatasetSplit, graph: SocialGraph,
          factors: LatentFactors, params: NasParameters | None = None,
          attention: bool = True) -> TrainResult:
    """Train the social model (or its uniform-attention ablation) with BPR.

    `factors` come from `mf_pretrain` (or any source with matching shapes)
    and are copied, never mutated. When `params` is given its attention
    block decides the weighting mode; otherwise fresh parameters are drawn.
    """
    config.validate()
    if factors.d != config.d:
        raise ConfigError(f"factor dimension {factors.d} does not match config d={config.d}")
    if params is None:
        params = NasParameters.init(config.d, config.h, config.seed, attention=attention)
    else:
        if params.d != config.d or params.h != config.h:
            raise ConfigError("supplied parameters do not match config (d, h)")
        params = params.copy()
    engine = NasEngine(config, factors.copy(), params, graph.neighbors)
    return run_training(engine, config, data.train, data.validation)


def deepen_params(shallow: NasParameters, h: int, seed: int) -> NasParameters:
    """Extend 1-hidden-layer parameters to h layers.

    The shared embeddings, first hidden layers, effects output, and
    attention blocks are copied; the added upper layers are freshly
    initialized.
    """
    if shallow.h != 1:
        raise ValueError("deepen_params expects phase-1 parameters with h=1")
    if h < 2:
        raise ValueError("deepen target must be >= 2 layers")
    fresh = NasParameters.init(shallow.d, h, seed + _DEEPEN_SEED_OFFSET,
                               attention=shallow.has_attention)
    src = shallow.copy()
    fresh.effects_user_w = src.effects_user_w
    fresh.effects_friend_w = src.effects_friend_w
    fresh.effects_bias = src.effects_bias
    fresh.effects_hidden_w[0] = src.effects_hidden_w[0]
    fresh.effects_hidden_b[0] = src.effects_hidden_b[0]
    fresh.effects_out_w = src.effects_out_w
    fresh.effects_out_b = src.effects_out_b
    fresh.attention = src.attention
    fresh.extract_user_w = src.extract_user_w
    fresh.extract_social_w = src.extract_social_w
    fresh.extract_bias = src.extract_bias
    fresh.extract_hidden_w[0] = src.extract_hidden_w[0]
    fresh.extract_hidden_b[0] = src.extract_hidden_b[0]
    return fresh


def pretrain_shallow_then_deepen(config: TrainConfig, data: DatasetSplit,
                                 graph: SocialGraph, factors: LatentFactors,
                                 attention: bool = True) -> TrainResult:
    """Two-phase training: fit with one hidden layer, transfer, then go deep.

    With h=1 this is identical to plain `train`. Otherwise phase 1 trains an
    h=1 model, phase 2 copies its depth-independent blocks plus the first
    hidden layers into an h-layer model (upper layers fresh) and trains to
    completion, continuing the epoch numbering in the log.
    """
    config.validate()
    if config.h == 1:
        return train(config, data, graph, factors, attention=attention)
    phase1 = train(replace(config, h=1), data, graph, factors, attention=attention)
    deep = deepen_params(phase1.model.params, config.h, config.seed)
    phase2 = train(config, data, graph, phase1.model.factors, params=deep,
                   attention=attention)
    offset = len(phase1.log)
    merged = list(phase1.log) + [
        replace(row, epoch=row.epoch + offset) for row in phase2.log
    ]
    best = None if phase2.best_epoch is None else phase2.best_epoch + offset
    return TrainResult(model=phase2.model, log=merged, best_epoch=best)


def write_epoch_log(path, rows: list[EpochLogRow]) -> None:
    """CSV log: epoch,mean_loss,val_recall@10,val_ndcg@10,seconds."""
    lines = ["epoch,mean_loss,val_recall@10,val_ndcg@10,seconds"]
    for row in rows:
        rec = "" if row.val_recall is None else f"{row.val_recall:.6f}"
        ndcg = "" if row.val_ndcg is None else f"{row.val_ndcg:.6f}"
        lines.append(f"{row.epoch},{row.mean_loss:.6f},{rec},{ndcg},{row.seconds:.3f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
