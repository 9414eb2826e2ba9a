"""Planted-influence synthetic datasets for benchmarking and diagnostics.

Every user gets a ground-truth taste vector and a designated subset of
"influential" friends; the effective preference driving their ratings is
(1 - alpha) * own taste + alpha * mean taste of the influential subset.
Ratings are clipped, discretized, noisy inner products with item vectors,
so a recommender only beats the social-blind baseline by exploiting the
friendship structure, and attention should concentrate on the influential
friends. The generator writes the same file formats as real data plus the
influential sets for diagnostics.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import user_forward


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 300
    m: int = 500
    d_true: int = 8
    friends_per_user: int = 10
    influential_per_user: int = 5
    influence_strength: float = 0.8   # alpha
    rating_noise: float = 0.25
    ratings_per_user: int = 30
    exposure_noise: float = 1.0       # how far rated items stray from top preference
    community_size: int = 0           # >= 2 draws influential friends per community
    active_fraction: float = 1.0      # share of users rating active_boost x more
    active_boost: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        errs = []
        for name in ("n", "m", "d_true", "friends_per_user", "influential_per_user",
                     "ratings_per_user"):
            if getattr(self, name) < 1:
                errs.append(f"{name} must be positive")
        if not 0.0 <= self.influence_strength <= 1.0:
            errs.append("influence_strength must be in [0, 1]")
        if self.rating_noise < 0:
            errs.append("rating_noise must be >= 0")
        if self.exposure_noise < 0:
            errs.append("exposure_noise must be >= 0")
        if self.influential_per_user > self.friends_per_user:
            errs.append("influential_per_user cannot exceed friends_per_user")
        if self.friends_per_user >= self.n:
            errs.append("friends_per_user must be below the user count")
        if self.community_size == 1 or self.community_size < 0:
            errs.append("community_size must be 0 (off) or >= 2")
        if self.community_size >= 2 and self.community_size <= self.influential_per_user:
            errs.append("community_size must exceed influential_per_user")
        if not 0.0 < self.active_fraction <= 1.0:
            errs.append("active_fraction must be in (0, 1]")
        if self.active_boost < 1:
            errs.append("active_boost must be >= 1")
        if self.ratings_per_user * self.active_boost > self.m:
            errs.append("ratings_per_user * active_boost cannot exceed the item count")
        if self.ratings_per_user > self.m:
            errs.append("ratings_per_user cannot exceed the item count")
        if self.seed < 0:
            errs.append("seed must be non-negative")
        if errs:
            raise ConfigError("; ".join(errs))


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    users: np.ndarray            # int64 per rating
    items: np.ndarray
    ratings: np.ndarray          # float64, values in 1..5
    edges: list[tuple[int, int]]  # undirected, deduplicated
    influential: dict[int, list[int]]
    active_users: np.ndarray     # bool mask, heavy raters
    true_user_vecs: np.ndarray
    effective_user_vecs: np.ndarray
    true_item_vecs: np.ndarray


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Deterministic dataset for a spec; identical spec+seed gives identical data."""
    rng = np.random.default_rng(np.random.SeedSequence([0x57A7, spec.seed]))
    scale = spec.d_true ** -0.25     # inner products roughly unit variance
    taste = scale * rng.standard_normal((spec.n, spec.d_true))
    item_vecs = scale * rng.standard_normal((spec.m, spec.d_true))

    # activity skew: a fraction of each block rates active_boost times more,
    # mirroring long-tail rating activity
    active = np.zeros(spec.n, dtype=bool)
    if spec.community_size:
        for start in range(0, spec.n, spec.community_size):
            block = np.arange(start, min(start + spec.community_size, spec.n))
            take = max(1, int(round(spec.active_fraction * len(block))))
            active[rng.choice(block, size=take, replace=False)] = True
    else:
        take = max(1, int(round(spec.active_fraction * spec.n)))
        active[rng.choice(spec.n, size=take, replace=False)] = True

    def prefer_active(pool: np.ndarray, count: int) -> np.ndarray:
        """Sample `count` ids, active users first, light users as filler."""
        strong = pool[active[pool]]
        light = pool[~active[pool]]
        head = rng.choice(strong, size=min(count, len(strong)), replace=False)
        if len(head) < count:
            tail = rng.choice(light, size=count - len(head), replace=False)
            head = np.concatenate([head, tail])
        return head

    # friendship draws; with communities the influential picks are the
    # user's block mates (clustered influence, so users sharing influencers
    # have correlated preferences) while the remaining friends come from one
    # "foil" block whose taste consistently differs: non-influential friends
    # are then genuinely mismatched rather than averaged-out noise. Active
    # users are preferred on both sides (influencers rate a lot).
    community_of = np.arange(spec.n) // spec.community_size if spec.community_size else None
    influential: dict[int, list[int]] = {}
    edges: set[tuple[int, int]] = set()
    num_blocks = -(-spec.n // spec.community_size) if spec.community_size else 0
    for u in range(spec.n):
        others = np.concatenate([np.arange(u), np.arange(u + 1, spec.n)])
        if community_of is not None and num_blocks > 1:
            mates = others[community_of[others] == community_of[u]]
            marked = prefer_active(mates, min(spec.influential_per_user, len(mates)))
            foil = (community_of[u] + int(rng.integers(1, num_blocks))) % num_blocks
            pool = others[community_of[others] == foil]
            rest = prefer_active(pool, min(spec.friends_per_user - len(marked), len(pool)))
            friends = np.concatenate([marked, rest])
        else:
            friends = rng.choice(others, size=spec.friends_per_user, replace=False)
            marked = friends[:spec.influential_per_user]
        influential[u] = sorted(int(f) for f in marked)
        for f in friends:
            edges.add((min(u, int(f)), max(u, int(f))))

    alpha = spec.influence_strength
    effective = np.empty_like(taste)
    for u in range(spec.n):
        effective[u] = (1.0 - alpha) * taste[u] + alpha * taste[influential[u]].mean(axis=0)

    # users rate what they encounter: selection leans toward preferred items,
    # with exposure_noise controlling how far it strays from the top
    users: list[int] = []
    items: list[int] = []
    raw: list[float] = []
    for u in range(spec.n):
        count = spec.ratings_per_user * (spec.active_boost if active[u] else 1)
        propensity = item_vecs @ effective[u]
        wobble = spec.exposure_noise * float(propensity.std()) * rng.standard_normal(spec.m)
        chosen = np.sort(np.argsort(-(propensity + wobble))[:count])
        users.extend([u] * count)
        items.extend(int(i) for i in chosen)
        raw.extend(propensity[chosen].tolist())
    raw_arr = np.array(raw)
    std = float(raw_arr.std())
    standardized = (raw_arr - raw_arr.mean()) / std if std > 0 else raw_arr
    noisy = standardized + spec.rating_noise * rng.standard_normal(len(raw_arr))
    ratings = np.clip(np.rint(3.0 + 1.4 * noisy), 1.0, 5.0)

    return SyntheticData(
        spec=spec,
        users=np.array(users, dtype=np.int64),
        items=np.array(items, dtype=np.int64),
        ratings=ratings.astype(np.float64),
        edges=sorted(edges),
        influential=influential,
        active_users=active,
        true_user_vecs=taste,
        effective_user_vecs=effective,
        true_item_vecs=item_vecs,
    )


def write_dataset(data: SyntheticData, out_dir: str | Path) -> dict[str, Path]:
    """Write ratings.tsv, graph.tsv, influential.json, and the spec echo."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "ratings": out / "ratings.tsv",
        "graph": out / "graph.tsv",
        "influential": out / "influential.json",
        "spec": out / "synth_spec.json",
    }
    lines = [f"{u}\t{i}\t{int(r)}" for u, i, r in zip(data.users, data.items, data.ratings)]
    paths["ratings"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    lines = [f"{a}\t{b}" for a, b in data.edges]
    paths["graph"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["influential"].write_text(
        json.dumps({str(u): v for u, v in data.influential.items()},
                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["spec"].write_text(json.dumps(asdict(data.spec), indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return paths


def attention_gap(model, influential_by_user: dict[int, set[int]],
                  seed: int = 0) -> tuple[float, float, int]:
    """Mean attention weight on influential vs other friends, averaged over users.

    Users whose sampled context misses one of the two groups are skipped;
    returns (mean over users of each group's mean weight, users counted).
    Only meaningful for a model with attention enabled. Ids here are dense
    indices, so callers working from files must translate through the id map.
    """
    influential_means: list[float] = []
    other_means: list[float] = []
    counted = 0
    for user, marked in sorted(influential_by_user.items()):
        ids = model.friend_ids(user, seed)
        if len(ids) == 0:
            continue
        cache = user_forward(user, ids, model.factors, model.params, model.gamma_mode)
        in_marked = np.array([int(f) in marked for f in ids])
        if not in_marked.any() or in_marked.all():
            continue
        influential_means.append(float(cache.gamma[in_marked].mean()))
        other_means.append(float(cache.gamma[~in_marked].mean()))
        counted += 1
    if counted == 0:
        return math.nan, math.nan, 0
    return (float(np.mean(influential_means)), float(np.mean(other_means)), counted)
