"""The attention-weighted social influence model and its exact gradients.

Pipeline per user: every friend's latent vector is pushed with the user's
through a shared-embedding ReLU MLP to a per-friend influence vector
("effect"); a single-layer attention net scores each effect against the
user and a softmax turns the scores into weights; the weighted sum of
effects plus the user's own vector feed a second ReLU MLP whose final
hidden state is the user's social vector z; predicted preference for an
item is the inner product of z with the item's latent vector.

The backward pass is written out by hand and is exact; it is validated
against central finite differences in the test suite.

Friend weighting modes:
  * "attention": softmax-normalized learned scores (the full model)
  * "sum":       every weight fixed to 1, an unnormalized sum (ablation)
  * "mean":      weights 1/k (sensitivity variant of the ablation)
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import FriendContext, sample_neighbor_subset
from .nn import relu, softmax, xavier_uniform

GAMMA_MODES = ("attention", "sum", "mean")


@dataclass
class LatentFactors:
    """Pretrained user and item embeddings; user rows double as friend vectors."""

    user_vecs: np.ndarray  # (n, d)
    item_vecs: np.ndarray  # (m, d)

    @property
    def n(self) -> int:
        return self.user_vecs.shape[0]

    @property
    def m(self) -> int:
        return self.item_vecs.shape[0]

    @property
    def d(self) -> int:
        return self.user_vecs.shape[1]

    def copy(self) -> "LatentFactors":
        return LatentFactors(self.user_vecs.copy(), self.item_vecs.copy())


@dataclass
class AttentionParams:
    user_w: np.ndarray    # (d, d)
    effect_w: np.ndarray  # (d, d)
    bias: np.ndarray      # (d,)


@dataclass
class NasParameters:
    """All weight matrices and bias vectors of the model.

    The effects output pair is shared across friend positions so the model
    handles a variable number of friends and stays permutation-equivariant.
    `attention` is None for the uniform-weight ablation, which carries no
    attention parameters at all.
    """

    d: int
    h: int
    effects_user_w: np.ndarray        # (d, d) user side of the shared embedding
    effects_friend_w: np.ndarray      # (d, d) friend side
    effects_bias: np.ndarray          # (d,)
    effects_hidden_w: list[np.ndarray]  # h x (d, d)
    effects_hidden_b: list[np.ndarray]
    effects_out_w: np.ndarray         # (d, d), no activation on the output
    effects_out_b: np.ndarray
    attention: AttentionParams | None
    extract_user_w: np.ndarray
    extract_social_w: np.ndarray
    extract_bias: np.ndarray
    extract_hidden_w: list[np.ndarray]
    extract_hidden_b: list[np.ndarray]

    def __post_init__(self) -> None:
        if self.h < 1:
            raise ValueError("h must be >= 1")
        for name, arr in self.named_arrays():
            expect = (self.d, self.d) if arr.ndim == 2 else (self.d,)
            if arr.shape != expect:
                raise ValueError(f"parameter block '{name}' has shape {arr.shape}, expected {expect}")
        if len(self.effects_hidden_w) != self.h or len(self.extract_hidden_w) != self.h:
            raise ValueError("hidden layer count does not match h")

    @property
    def has_attention(self) -> bool:
        return self.attention is not None

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameter blocks in a fixed, stable order."""
        out = [
            ("effects.user_w", self.effects_user_w),
            ("effects.friend_w", self.effects_friend_w),
            ("effects.bias", self.effects_bias),
        ]
        for q, (w, b) in enumerate(zip(self.effects_hidden_w, self.effects_hidden_b)):
            out.append((f"effects.hidden.{q}.w", w))
            out.append((f"effects.hidden.{q}.b", b))
        out.append(("effects.out_w", self.effects_out_w))
        out.append(("effects.out_b", self.effects_out_b))
        if self.attention is not None:
            out.append(("attention.user_w", self.attention.user_w))
            out.append(("attention.effect_w", self.attention.effect_w))
            out.append(("attention.bias", self.attention.bias))
        out.extend([
            ("extract.user_w", self.extract_user_w),
            ("extract.social_w", self.extract_social_w),
            ("extract.bias", self.extract_bias),
        ])
        for q, (w, b) in enumerate(zip(self.extract_hidden_w, self.extract_hidden_b)):
            out.append((f"extract.hidden.{q}.w", w))
            out.append((f"extract.hidden.{q}.b", b))
        return out

    def copy(self) -> "NasParameters":
        att = None
        if self.attention is not None:
            att = AttentionParams(self.attention.user_w.copy(),
                                  self.attention.effect_w.copy(),
                                  self.attention.bias.copy())
        return NasParameters(
            d=self.d, h=self.h,
            effects_user_w=self.effects_user_w.copy(),
            effects_friend_w=self.effects_friend_w.copy(),
            effects_bias=self.effects_bias.copy(),
            effects_hidden_w=[w.copy() for w in self.effects_hidden_w],
            effects_hidden_b=[b.copy() for b in self.effects_hidden_b],
            effects_out_w=self.effects_out_w.copy(),
            effects_out_b=self.effects_out_b.copy(),
            attention=att,
            extract_user_w=self.extract_user_w.copy(),
            extract_social_w=self.extract_social_w.copy(),
            extract_bias=self.extract_bias.copy(),
            extract_hidden_w=[w.copy() for w in self.extract_hidden_w],
            extract_hidden_b=[b.copy() for b in self.extract_hidden_b],
        )

    @classmethod
    def init(cls, d: int, h: int, seed: int, attention: bool = True) -> "NasParameters":
        """Xavier-uniform weights, zero biases, one rng stream per block."""
        counter = [0]

        def mat() -> np.ndarray:
            counter[0] += 1
            return xavier_uniform(d, d, np.random.SeedSequence([0x1A17, seed, counter[0]]))

        def vec() -> np.ndarray:
            return np.zeros(d, dtype=np.float64)

        att = AttentionParams(user_w=mat(), effect_w=mat(), bias=vec()) if attention else None
        return cls(
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

    @classmethod
    def zeros_like(cls, params: "NasParameters") -> "NasParameters":
        """Gradient buffers with the same block structure."""
        z = params.copy()
        for _name, arr in z.named_arrays():
            arr[...] = 0.0
        return z


@dataclass
class ForwardCache:
    """Every intermediate needed by the backward pass for one user-side run.

    Pre-activation arrays double as the ReLU masks (mask = pre > 0).
    """

    user: int
    friend_ids: np.ndarray
    user_vec: np.ndarray
    friend_vecs: np.ndarray            # (k, d)
    gamma_mode: str
    effects_pre: list[np.ndarray]      # h+1 arrays of shape (k, d)
    effects_out: list[np.ndarray]      # h+1 activations, (k, d)
    effects: np.ndarray                # (k, d) per-friend influence vectors
    att_pre: np.ndarray | None         # (k, d) attention net pre-activations
    att_scores: np.ndarray | None      # (k,) scalar scores (summed components)
    gamma: np.ndarray                  # (k,) friend weights
    social_agg: np.ndarray             # (d,) weighted effect aggregate
    extract_pre: list[np.ndarray]      # h+1 arrays of shape (d,)
    extract_out: list[np.ndarray]
    z: np.ndarray                      # (d,) social vector
    pos_item: int | None = None
    neg_item: int | None = None

    @property
    def k(self) -> int:
        return len(self.friend_ids)

    def min_preactivation(self) -> float:
        """Smallest |pre-activation| across all ReLU layers; inf when k=0 paths only."""
        chunks = [np.abs(p).min() for p in self.effects_pre if p.size]
        if self.att_pre is not None and self.att_pre.size:
            chunks.append(np.abs(self.att_pre).min())
        chunks.extend(np.abs(p).min() for p in self.extract_pre)
        return float(min(chunks)) if chunks else float("inf")


@dataclass
class BackwardResult:
    """Gradients from one backward pass, with friend rows accumulated by id."""

    params: NasParameters
    user_vec_grad: np.ndarray
    friend_row_grads: dict[int, np.ndarray]
    pos_item_grad: np.ndarray
    neg_item_grad: np.ndarray


def _effects_forward(user_vec: np.ndarray, friend_vecs: np.ndarray,
                     params: NasParameters):
    """Per-friend influence vectors for all k friends at once."""
    base = params.effects_user_w @ user_vec + params.effects_bias
    pre0 = friend_vecs @ params.effects_friend_w.T + base
    pres = [pre0]
    outs = [relu(pre0)]
    for w, b in zip(params.effects_hidden_w, params.effects_hidden_b):
        pre = outs[-1] @ w.T + b
        pres.append(pre)
        outs.append(relu(pre))
    effects = outs[-1] @ params.effects_out_w.T + params.effects_out_b
    return effects, pres, outs


def _attention_forward(user_vec: np.ndarray, effects: np.ndarray,
                       att: AttentionParams):
    """Scalar score per friend (summed ReLU components) and softmax weights."""
    base = att.user_w @ user_vec + att.bias
    pre = effects @ att.effect_w.T + base
    scores = relu(pre).sum(axis=1)
    gamma = softmax(scores)
    return gamma, pre, scores


def _extract_forward(user_vec: np.ndarray, social_agg: np.ndarray,
                     params: NasParameters):
    pre0 = params.extract_user_w @ user_vec + params.extract_social_w @ social_agg + params.extract_bias
    pres = [pre0]
    outs = [relu(pre0)]
    for w, b in zip(params.extract_hidden_w, params.extract_hidden_b):
        pre = outs[-1] @ w.T + b
        pres.append(pre)
        outs.append(relu(pre))
    return outs[-1], pres, outs


def social_effect(user_vec: np.ndarray, friend_vec: np.ndarray,
                  params: NasParameters) -> np.ndarray:
    """Influence vector of a single friend on the user (no output activation)."""
    effects, _, _ = _effects_forward(user_vec, friend_vec[None, :], params)
    return effects[0]


def attention_weights(user_vec: np.ndarray, effects: np.ndarray,
                      params: NasParameters) -> np.ndarray:
    """Softmax-normalized friend weights; requires k >= 1 and attention params."""
    effects = np.atleast_2d(effects)
    if effects.shape[0] < 1:
        raise ValueError("attention_weights requires at least one friend effect")
    if params.attention is None:
        raise ValueError("model has no attention parameters")
    gamma, _, _ = _attention_forward(user_vec, effects, params.attention)
    return gamma


def aggregate_effects(gamma: np.ndarray, effects: np.ndarray) -> np.ndarray:
    """Weighted sum of friend effects; the zero vector when there are none."""
    effects = np.atleast_2d(effects)
    if effects.shape[0] == 0:
        return np.zeros(effects.shape[1], dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if len(gamma) != effects.shape[0]:
        raise ValueError("gamma length does not match number of effects")
    return gamma @ effects


def extract_social_vector(user_vec: np.ndarray, social_agg: np.ndarray,
                          params: NasParameters) -> np.ndarray:
    """Social vector z: final hidden state of the extraction MLP (ReLU output)."""
    z, _, _ = _extract_forward(user_vec, social_agg, params)
    return z


def predict(z: np.ndarray, item_vec: np.ndarray) -> float:
    """Predicted preference: inner product of the social and item vectors."""
    z = np.asarray(z, dtype=np.float64)
    item_vec = np.asarray(item_vec, dtype=np.float64)
    if z.shape != item_vec.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {item_vec.shape}")
    return float(z @ item_vec)


def user_forward(user: int, friend_ids: np.ndarray, factors: LatentFactors,
                 params: NasParameters, gamma_mode: str = "attention") -> ForwardCache:
    """User-side pipeline producing z and the full cache; items not involved."""
    if gamma_mode not in GAMMA_MODES:
        raise ValueError(f"unknown gamma mode '{gamma_mode}'")
    if gamma_mode == "attention" and params.attention is None:
        raise ValueError("attention mode requires attention parameters")
    friend_ids = np.asarray(friend_ids, dtype=np.int64)
    user_vec = factors.user_vecs[user]
    friend_vecs = factors.user_vecs[friend_ids] if len(friend_ids) else \
        np.zeros((0, params.d), dtype=np.float64)
    k = len(friend_ids)
    if k > 0:
        effects, e_pres, e_outs = _effects_forward(user_vec, friend_vecs, params)
        if gamma_mode == "attention":
            gamma, att_pre, att_scores = _attention_forward(user_vec, effects, params.attention)
        else:
            att_pre, att_scores = None, None
            gamma = np.ones(k) if gamma_mode == "sum" else np.full(k, 1.0 / k)
        social_agg = gamma @ effects
    else:
        effects = np.zeros((0, params.d), dtype=np.float64)
        e_pres = [np.zeros((0, params.d), dtype=np.float64) for _ in range(params.h + 1)]
        e_outs = [np.zeros((0, params.d), dtype=np.float64) for _ in range(params.h + 1)]
        att_pre, att_scores = None, None
        gamma = np.zeros(0, dtype=np.float64)
        social_agg = np.zeros(params.d, dtype=np.float64)
    z, x_pres, x_outs = _extract_forward(user_vec, social_agg, params)
    return ForwardCache(
        user=user, friend_ids=friend_ids, user_vec=user_vec, friend_vecs=friend_vecs,
        gamma_mode=gamma_mode, effects_pre=e_pres, effects_out=e_outs, effects=effects,
        att_pre=att_pre, att_scores=att_scores, gamma=gamma, social_agg=social_agg,
        extract_pre=x_pres, extract_out=x_outs, z=z,
    )


def forward(user: int, pos_item: int, neg_item: int, friends: FriendContext,
            factors: LatentFactors, params: NasParameters,
            gamma_mode: str = "attention") -> tuple[float, float, ForwardCache]:
    """Full pipeline for one training triple; z is shared by both scores."""
    if friends.user_id != user:
        raise ValueError(f"friend context belongs to user {friends.user_id}, not {user}")
    cache = user_forward(user, friends.friend_ids, factors, params, gamma_mode)
    cache.pos_item = pos_item
    cache.neg_item = neg_item
    score_pos = predict(cache.z, factors.item_vecs[pos_item])
    score_neg = predict(cache.z, factors.item_vecs[neg_item])
    return score_pos, score_neg, cache


def user_backward(cache: ForwardCache, dz: np.ndarray, params: NasParameters,
                  grads: NasParameters) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate dL/dz through the user-side pipeline.

    Accumulates parameter gradients into `grads` (shape-matched buffers) and
    returns (dL/d user_vec, dL/d friend_vecs) with friend rows positional.
    """
    if grads.h != params.h or grads.d != params.d:
        raise ValueError("gradient buffers do not match parameter shapes")
    k = cache.k
    d_out = dz
    # extraction MLP, top down
    for q in range(params.h, 0, -1):
        d_pre = d_out * (cache.extract_pre[q] > 0.0)
        grads.extract_hidden_w[q - 1] += np.outer(d_pre, cache.extract_out[q - 1])
        grads.extract_hidden_b[q - 1] += d_pre
        d_out = params.extract_hidden_w[q - 1].T @ d_pre
    d_pre0 = d_out * (cache.extract_pre[0] > 0.0)
    grads.extract_user_w += np.outer(d_pre0, cache.user_vec)
    grads.extract_social_w += np.outer(d_pre0, cache.social_agg)
    grads.extract_bias += d_pre0
    du = params.extract_user_w.T @ d_pre0
    d_agg = params.extract_social_w.T @ d_pre0

    if k == 0:
        return du, np.zeros((0, params.d), dtype=np.float64)

    # aggregation: social_agg = gamma @ effects
    d_effects = cache.gamma[:, None] * d_agg[None, :]
    if cache.gamma_mode == "attention":
        d_gamma = cache.effects @ d_agg
        # softmax jacobian
        d_scores = cache.gamma * (d_gamma - float(cache.gamma @ d_gamma))
        att = params.attention
        mask = cache.att_pre > 0.0
        d_att_pre = mask * d_scores[:, None]
        grads.attention.user_w += np.outer(d_att_pre.sum(axis=0), cache.user_vec)
        grads.attention.effect_w += d_att_pre.T @ cache.effects
        grads.attention.bias += d_att_pre.sum(axis=0)
        du += att.user_w.T @ d_att_pre.sum(axis=0)
        d_effects = d_effects + d_att_pre @ att.effect_w

    # effects output layer (linear)
    grads.effects_out_w += d_effects.T @ cache.effects_out[-1]
    grads.effects_out_b += d_effects.sum(axis=0)
    d_out_mat = d_effects @ params.effects_out_w
    # effects hidden stack
    for q in range(params.h, 0, -1):
        d_pre = d_out_mat * (cache.effects_pre[q] > 0.0)
        grads.effects_hidden_w[q - 1] += d_pre.T @ cache.effects_out[q - 1]
        grads.effects_hidden_b[q - 1] += d_pre.sum(axis=0)
        d_out_mat = d_pre @ params.effects_hidden_w[q - 1]
    d_pre0_mat = d_out_mat * (cache.effects_pre[0] > 0.0)
    grads.effects_user_w += np.outer(d_pre0_mat.sum(axis=0), cache.user_vec)
    grads.effects_friend_w += d_pre0_mat.T @ cache.friend_vecs
    grads.effects_bias += d_pre0_mat.sum(axis=0)
    du += params.effects_user_w.T @ d_pre0_mat.sum(axis=0)
    d_friends = d_pre0_mat @ params.effects_friend_w
    return du, d_friends


def backward(cache: ForwardCache, d_scores: tuple[float, float],
             factors: LatentFactors, params: NasParameters) -> BackwardResult:
    """Exact gradients of (d_pos * score_pos + d_neg * score_neg) for one triple."""
    if cache.pos_item is None or cache.neg_item is None:
        raise ValueError("cache was not produced by forward() with items")
    if cache.user_vec.shape != (params.d,):
        raise ValueError("cache does not match parameter dimensions")
    d_pos, d_neg = d_scores
    grads = NasParameters.zeros_like(params)
    v_pos = factors.item_vecs[cache.pos_item]
    v_neg = factors.item_vecs[cache.neg_item]
    dz = d_pos * v_pos + d_neg * v_neg
    du, d_friends = user_backward(cache, dz, params, grads)
    friend_grads: dict[int, np.ndarray] = {}
    for row, fid in enumerate(cache.friend_ids):
        fid = int(fid)
        if fid in friend_grads:
            friend_grads[fid] = friend_grads[fid] + d_friends[row]
        else:
            friend_grads[fid] = d_friends[row].copy()
    return BackwardResult(
        params=grads,
        user_vec_grad=du,
        friend_row_grads=friend_grads,
        pos_item_grad=d_pos * cache.z,
        neg_item_grad=d_neg * cache.z,
    )


@dataclass
class SocialAttentionModel:
    """Trained model bundle: factors, parameters, and the friendship lists.

    Adjacency travels with the model so users can be scored (friend
    subsampling included) from the snapshot alone.
    """

    factors: LatentFactors
    params: NasParameters
    neighbors: tuple[np.ndarray, ...]
    k_max: int
    star_mean: bool = False  # "mean" weighting for the uniform ablation

    @property
    def tag(self) -> str:
        return "nas" if self.params.has_attention else "nas_star"

    @property
    def gamma_mode(self) -> str:
        if self.params.has_attention:
            return "attention"
        return "mean" if self.star_mean else "sum"

    def friend_ids(self, user: int, seed: int) -> np.ndarray:
        return sample_neighbor_subset(self.neighbors[user], self.k_max, seed, user)

    def user_vector(self, user: int, seed: int = 0) -> np.ndarray:
        cache = user_forward(user, self.friend_ids(user, seed), self.factors,
                             self.params, self.gamma_mode)
        return cache.z

    def score_items(self, user: int, items: np.ndarray, seed: int = 0) -> np.ndarray:
        z = self.user_vector(user, seed)
        return self.factors.item_vecs[np.asarray(items, dtype=np.int64)] @ z

    def copy(self) -> "SocialAttentionModel":
        return replace(self, factors=self.factors.copy(), params=self.params.copy())
