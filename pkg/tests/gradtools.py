"""Shared helpers for finite-difference validation of the training losses.

Builds random model instances whose ReLU pre-activations all sit at least
1e-3 away from zero (rejection sampling), flattens parameters plus the
touched embedding rows into one vector, and exposes loss-and-gradient
callables compatible with nasrec.nn.grad_check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from nasrec.baselines import bpr_mf_triple_grads
from nasrec.data import FriendContext
from nasrec.model import (AttentionParams, LatentFactors, NasParameters,
                          backward, forward)
from nasrec.nn import sigmoid
from nasrec.training import bpr_loss

KINK_MARGIN = 1e-3


def random_nas_params(rng: np.random.Generator, d: int, h: int,
                      attention: bool) -> NasParameters:
    def mat():
        return rng.normal(0.0, 0.6, (d, d))

    def vec():
        return rng.normal(0.0, 0.3, d)

    att = AttentionParams(user_w=mat(), effect_w=mat(), bias=vec()) if attention else None
    return NasParameters(
        d=d, h=h,
        effects_user_w=mat(), effects_friend_w=mat(), effects_bias=vec(),
        effects_hidden_w=[mat() for _ in range(h)],
        effects_hidden_b=[vec() for _ in range(h)],
        effects_out_w=mat(), effects_out_b=vec(),
        attention=att,
        extract_user_w=mat(), extract_social_w=mat(), extract_bias=vec(),
        extract_hidden_w=[mat() for _ in range(h)],
        extract_hidden_b=[vec() for _ in range(h)],
    )


@dataclass
class NasInstance:
    params: NasParameters
    factors: LatentFactors
    ctx: FriendContext
    user: int
    pos_item: int
    neg_item: int
    gamma_mode: str
    friend_rows: list[int]   # unique friend rows in flattening order

    def pack(self) -> np.ndarray:
        chunks = [arr.ravel() for _, arr in self.params.named_arrays()]
        chunks.append(self.factors.user_vecs[self.user])
        chunks.extend(self.factors.user_vecs[row] for row in self.friend_rows)
        chunks.append(self.factors.item_vecs[self.pos_item])
        chunks.append(self.factors.item_vecs[self.neg_item])
        return np.concatenate(chunks)

    def unpack(self, theta: np.ndarray) -> None:
        off = 0
        for _, arr in self.params.named_arrays():
            arr[...] = theta[off:off + arr.size].reshape(arr.shape)
            off += arr.size
        d = self.params.d
        rows = [self.user, *self.friend_rows, None]
        for row in rows[:-1]:
            self.factors.user_vecs[row] = theta[off:off + d]
            off += d
        self.factors.item_vecs[self.pos_item] = theta[off:off + d]
        off += d
        self.factors.item_vecs[self.neg_item] = theta[off:off + d]
        off += d
        assert off == theta.size

    def loss_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Full BPR triple loss and its analytic gradient at theta."""
        self.unpack(theta)
        score_pos, score_neg, cache = forward(
            self.user, self.pos_item, self.neg_item, self.ctx,
            self.factors, self.params, self.gamma_mode)
        margin = score_pos - score_neg
        loss = bpr_loss(score_pos, score_neg)
        d_pos = sigmoid(margin) - 1.0
        res = backward(cache, (d_pos, -d_pos), self.factors, self.params)
        chunks = [arr.ravel() for _, arr in res.params.named_arrays()]
        chunks.append(res.user_vec_grad)
        chunks.extend(res.friend_row_grads[row] for row in self.friend_rows)
        chunks.append(res.pos_item_grad)
        chunks.append(res.neg_item_grad)
        return loss, np.concatenate(chunks)


def random_nas_instance(seed: int, d: int | None = None, h: int | None = None,
                        k: int | None = None, attention: bool = True,
                        allow_duplicate_friend: bool = True) -> NasInstance:
    """Random instance with every ReLU pre-activation at least 1e-3 from zero."""
    gamma_mode = "attention" if attention else "sum"
    for attempt in range(200):
        rng = np.random.default_rng(np.random.SeedSequence([0x6AD, seed, attempt]))
        d_ = int(d if d is not None else rng.integers(2, 9))
        h_ = int(h if h is not None else rng.integers(1, 4))
        k_ = int(k if k is not None else rng.integers(1, 6))
        params = random_nas_params(rng, d_, h_, attention)
        n_users = k_ + 3
        factors = LatentFactors(rng.normal(0.0, 0.8, (n_users, d_)),
                                rng.normal(0.0, 0.8, (3, d_)))
        friend_pool = np.arange(1, k_ + 1)
        friend_ids = friend_pool.copy()
        if allow_duplicate_friend and k_ >= 2 and rng.random() < 0.3:
            friend_ids[-1] = friend_ids[0]  # exercise accumulation on shared rows
        ctx = FriendContext(user_id=0, friend_ids=friend_ids, k=len(friend_ids))
        _, _, cache = forward(0, 0, 1, ctx, factors, params, gamma_mode)
        if cache.min_preactivation() >= KINK_MARGIN:
            rows = sorted(set(int(f) for f in friend_ids))
            return NasInstance(params=params, factors=factors, ctx=ctx, user=0,
                               pos_item=0, neg_item=1, gamma_mode=gamma_mode,
                               friend_rows=rows)
    raise RuntimeError(f"could not find a kink-free instance for seed {seed}")


def bpr_mf_loss_and_grad_factory(l2_reg: float, d: int):
    """Loss-and-gradient callable over a flat (u, v_pos, v_neg) vector."""

    def loss_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        u = theta[:d]
        v_pos = theta[d:2 * d]
        v_neg = theta[2 * d:]
        loss, grad_u, grad_pos, grad_neg = bpr_mf_triple_grads(u, v_pos, v_neg, l2_reg)
        return loss, np.concatenate([grad_u, grad_pos, grad_neg])

    return loss_and_grad
