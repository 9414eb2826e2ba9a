"""Ratings and friendship-graph ingestion, splitting, relevance labels, friend sampling.

File formats:
  * interactions: one ``user<sep>item<sep>rating`` per line, sep tab or comma
  * graph: one ``user<sep>user`` per line
  * id map sidecar: ``original_id<TAB>dense_index``

All loaders are deterministic. Loaded structures are immutable by convention
and safe to share read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

SEPARATORS = {"tsv": "\t", "csv": ","}


@dataclass(frozen=True)
class IdMap:
    """Bidirectional mapping between original string ids and dense indices."""

    to_index: dict[str, int]
    originals: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.originals)

    @classmethod
    def empty(cls) -> "IdMap":
        return cls(to_index={}, originals=())


@dataclass
class InteractionSet:
    """Sparse user-item ratings with dense 0-based ids."""

    users: np.ndarray      # int64, one entry per interaction
    items: np.ndarray
    ratings: np.ndarray    # float64
    n: int                 # user universe size
    m: int                 # item universe size
    user_map: IdMap | None = None
    item_map: IdMap | None = None
    _by_user: dict[int, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.ratings = np.asarray(self.ratings, dtype=np.float64)
        if not (len(self.users) == len(self.items) == len(self.ratings)):
            raise DataError("interaction columns have different lengths")
        if len(self.users) > 0:
            if self.users.min() < 0 or self.users.max() >= self.n:
                raise DataError(f"user id out of range [0, {self.n})")
            if self.items.min() < 0 or self.items.max() >= self.m:
                raise DataError(f"item id out of range [0, {self.m})")
            if not np.all(np.isfinite(self.ratings)):
                raise DataError("non-finite rating")
            pairs = self.users * max(self.m, 1) + self.items
            if len(np.unique(pairs)) != len(pairs):
                raise DataError("duplicate (user, item) pair")

    def __len__(self) -> int:
        return len(self.users)

    def by_user(self) -> dict[int, np.ndarray]:
        """Interaction indices grouped by user, cached after first call."""
        if self._by_user is None:
            order = np.argsort(self.users, kind="stable")
            groups: dict[int, np.ndarray] = {}
            if len(order):
                sorted_users = self.users[order]
                boundaries = np.flatnonzero(np.diff(sorted_users)) + 1
                for chunk in np.split(order, boundaries):
                    groups[int(self.users[chunk[0]])] = chunk
            self._by_user = groups
        return self._by_user

    def positive_items(self) -> dict[int, set[int]]:
        """Per-user set of interacted item ids."""
        return {u: set(self.items[idx].tolist()) for u, idx in self.by_user().items()}


@dataclass(frozen=True)
class SocialGraph:
    """Symmetric friendship adjacency as per-user sorted neighbor arrays."""

    n: int
    neighbors: tuple[np.ndarray, ...]
    num_edges: int
    dropped_endpoints: int = 0

    def degree(self, user: int) -> int:
        return len(self.neighbors[user])


@dataclass(frozen=True)
class DatasetSplit:
    train: InteractionSet
    validation: InteractionSet
    test: InteractionSet
    seed: int


@dataclass(frozen=True)
class RelevanceLabels:
    """Per-user relevant item sets under the strict above-own-mean rule."""

    relevant: dict[int, set[int]]
    mean_rating: dict[int, float]


@dataclass(frozen=True)
class FriendContext:
    """Bounded friend sample for one user; k is the count actually used."""

    user_id: int
    friend_ids: np.ndarray
    k: int


def _parse_lines(path: str | Path, sep: str, n_fields: int):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(sep)
        if len(parts) != n_fields:
            raise ParseError(f"{path}:{lineno}: expected {n_fields} fields, got {len(parts)}")
        yield lineno, parts


def load_interactions(path: str | Path, fmt: str = "tsv",
                      user_map: IdMap | None = None,
                      item_map: IdMap | None = None) -> InteractionSet:
    """Load a ratings file, remapping ids to dense 0-based indices.

    Without explicit maps, ids are assigned in order of first appearance and
    the resulting maps are carried on the returned set. With maps (e.g. when
    reloading split files written by `prepare`), ids are resolved against
    them and the universe sizes come from the map lengths.
    """
    if fmt not in SEPARATORS:
        raise ConfigError(f"unknown interaction format '{fmt}' (expected tsv or csv)")
    sep = SEPARATORS[fmt]
    build_maps = user_map is None
    if build_maps != (item_map is None):
        raise ConfigError("user_map and item_map must be given together")
    user_index: dict[str, int] = {} if build_maps else dict(user_map.to_index)
    item_index: dict[str, int] = {} if build_maps else dict(item_map.to_index)
    user_originals: list[str] = [] if build_maps else list(user_map.originals)
    item_originals: list[str] = [] if build_maps else list(item_map.originals)

    users: list[int] = []
    items: list[int] = []
    ratings: list[float] = []
    seen: set[tuple[int, int]] = set()
    for lineno, (u_tok, i_tok, r_tok) in _parse_lines(path, sep, 3):
        try:
            rating = float(r_tok)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: rating '{r_tok}' is not a number") from None
        if not np.isfinite(rating):
            raise ParseError(f"{path}:{lineno}: rating is not finite")
        if build_maps:
            u = user_index.setdefault(u_tok, len(user_index))
            if u == len(user_originals):
                user_originals.append(u_tok)
            i = item_index.setdefault(i_tok, len(item_index))
            if i == len(item_originals):
                item_originals.append(i_tok)
        else:
            if u_tok not in user_index:
                raise DataError(f"{path}:{lineno}: user '{u_tok}' not in id mapping")
            if i_tok not in item_index:
                raise DataError(f"{path}:{lineno}: item '{i_tok}' not in id mapping")
            u = user_index[u_tok]
            i = item_index[i_tok]
        if (u, i) in seen:
            raise DataError(f"{path}:{lineno}: duplicate (user, item) pair ({u_tok}, {i_tok})")
        seen.add((u, i))
        users.append(u)
        items.append(i)
        ratings.append(rating)

    final_user_map = IdMap(dict(user_index), tuple(user_originals))
    final_item_map = IdMap(dict(item_index), tuple(item_originals))
    return InteractionSet(
        users=np.array(users, dtype=np.int64),
        items=np.array(items, dtype=np.int64),
        ratings=np.array(ratings, dtype=np.float64),
        n=len(final_user_map),
        m=len(final_item_map),
        user_map=final_user_map,
        item_map=final_item_map,
    )


def load_social_graph(path: str | Path, user_map: IdMap, fmt: str = "tsv") -> SocialGraph:
    """Load an edge-list friendship file against an existing user mapping.

    Edges are symmetrized and deduplicated; self-loops are removed and
    endpoints missing from the mapping are dropped and counted.
    """
    if fmt not in SEPARATORS:
        raise ConfigError(f"unknown graph format '{fmt}' (expected tsv or csv)")
    sep = SEPARATORS[fmt]
    n = len(user_map)
    edges: set[tuple[int, int]] = set()
    dropped = 0
    for _lineno, (a_tok, b_tok) in _parse_lines(path, sep, 2):
        a = user_map.to_index.get(a_tok)
        b = user_map.to_index.get(b_tok)
        if a is None or b is None:
            dropped += 1
            continue
        if a == b:
            continue
        edges.add((min(a, b), max(a, b)))
    return build_graph(n, edges, dropped_endpoints=dropped)


def build_graph(n: int, edges, dropped_endpoints: int = 0) -> SocialGraph:
    """Construct a SocialGraph from undirected edge pairs (deduplicated)."""
    adj: list[list[int]] = [[] for _ in range(n)]
    unique = {(min(a, b), max(a, b)) for a, b in edges if a != b}
    for a, b in unique:
        if not (0 <= a < n and 0 <= b < n):
            raise DataError(f"graph endpoint out of range: ({a}, {b}) with n={n}")
        adj[a].append(b)
        adj[b].append(a)
    neighbors = tuple(np.array(sorted(lst), dtype=np.int64) for lst in adj)
    return SocialGraph(n=n, neighbors=neighbors, num_edges=len(unique),
                       dropped_endpoints=dropped_endpoints)


def split(data: InteractionSet, train_frac: float, val_frac: float, seed: int) -> DatasetSplit:
    """Per-user stratified random split into train/validation/test.

    Users with fewer than 3 ratings keep everything in train; otherwise each
    user contributes round(frac * count) interactions to train and
    validation and the remainder to test.
    """
    if train_frac <= 0 or val_frac <= 0:
        raise ConfigError("split fractions must be positive")
    if train_frac + val_frac >= 1.0:
        raise ConfigError("train_frac + val_frac must be < 1")
    rng = np.random.default_rng(np.random.SeedSequence([0x5B17, seed]))
    train_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for user in sorted(data.by_user()):
        idx = data.by_user()[user]
        count = len(idx)
        if count < 3:
            train_idx.append(idx)
            continue
        perm = idx[rng.permutation(count)]
        n_train = int(round(train_frac * count))
        n_val = int(round(val_frac * count))
        n_val = min(n_val, count - n_train)
        train_idx.append(perm[:n_train])
        val_idx.append(perm[n_train:n_train + n_val])
        test_idx.append(perm[n_train + n_val:])

    def subset(chunks: list[np.ndarray]) -> InteractionSet:
        sel = np.sort(np.concatenate(chunks)) if chunks else np.array([], dtype=np.int64)
        return InteractionSet(
            users=data.users[sel], items=data.items[sel], ratings=data.ratings[sel],
            n=data.n, m=data.m, user_map=data.user_map, item_map=data.item_map,
        )

    return DatasetSplit(train=subset(train_idx), validation=subset(val_idx),
                        test=subset(test_idx), seed=seed)


def binarize_relevance(data: InteractionSet,
                       mean_over: InteractionSet | None = None) -> RelevanceLabels:
    """Mark items relevant iff their rating strictly exceeds the user's mean.

    The mean is computed over `mean_over` (default: `data` itself); users
    absent from the mean source get no labels.
    """
    source = data if mean_over is None else mean_over
    means: dict[int, float] = {}
    for user, idx in source.by_user().items():
        means[user] = float(np.mean(source.ratings[idx]))
    relevant: dict[int, set[int]] = {}
    for user, idx in data.by_user().items():
        if user not in means:
            continue
        mask = data.ratings[idx] > means[user]
        relevant[user] = set(data.items[idx[mask]].tolist())
    return RelevanceLabels(relevant=relevant,
                           mean_rating={u: means[u] for u in relevant})


def sample_neighbor_subset(neighbors: np.ndarray, k_max: int, seed: int, user: int) -> np.ndarray:
    """Seeded uniform subsample of a neighbor array, capped at k_max.

    The stream is keyed on (seed, user) so one run seed yields a stable
    context per user.
    """
    if len(neighbors) <= k_max:
        return neighbors
    rng = np.random.default_rng(np.random.SeedSequence([0xF21E, seed, user]))
    chosen = rng.choice(neighbors, size=k_max, replace=False)
    return np.sort(chosen)


def friend_context(graph: SocialGraph, user: int, k_max: int, seed: int) -> FriendContext:
    """Friend list for a user: all neighbors, or a seeded k_max-subset."""
    if not (0 <= user < graph.n):
        raise DataError(f"user {user} out of range [0, {graph.n})")
    if k_max < 1:
        raise ConfigError("k_max must be >= 1")
    ids = sample_neighbor_subset(graph.neighbors[user], k_max, seed, user)
    return FriendContext(user_id=user, friend_ids=ids, k=len(ids))


def write_interactions(path: str | Path, data: InteractionSet, fmt: str = "tsv") -> None:
    """Write interactions using original ids (requires attached id maps)."""
    if data.user_map is None or data.item_map is None:
        raise DataError("cannot write interactions without id maps")
    sep = SEPARATORS[fmt]
    lines = []
    for u, i, r in zip(data.users, data.items, data.ratings):
        r = float(r)
        r_tok = str(int(r)) if r.is_integer() else repr(r)
        lines.append(f"{data.user_map.originals[u]}{sep}{data.item_map.originals[i]}{sep}{r_tok}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_id_map(path: str | Path, id_map: IdMap) -> None:
    lines = [f"{orig}\t{idx}" for idx, orig in enumerate(id_map.originals)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_id_map(path: str | Path) -> IdMap:
    to_index: dict[str, int] = {}
    for lineno, (orig, idx_tok) in _parse_lines(path, "\t", 2):
        try:
            idx = int(idx_tok)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: index '{idx_tok}' is not an integer") from None
        if orig in to_index:
            raise DataError(f"{path}:{lineno}: duplicate original id '{orig}'")
        to_index[orig] = idx
    originals = [""] * len(to_index)
    for orig, idx in to_index.items():
        if not (0 <= idx < len(to_index)):
            raise DataError(f"{path}: index {idx} not dense in [0, {len(to_index)})")
        originals[idx] = orig
    return IdMap(to_index=to_index, originals=tuple(originals))


def dataset_density_percent(num_ratings: int, num_users: int, num_items: int) -> float:
    """Rating-matrix density in percent; 0 for an empty universe."""
    cells = num_users * num_items
    return 100.0 * num_ratings / cells if cells else 0.0
