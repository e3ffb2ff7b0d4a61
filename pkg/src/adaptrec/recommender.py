"""Recommendation strategies over a clustered catalog.

Every function here is pure over a :class:`~adaptrec.clustering.ClusterView`
(a :class:`~adaptrec.clustering.ClusterState` is accepted and viewed) and
draws randomness from a stream derived from ``(seed, user id)``, so users
can be processed in any order or in parallel with identical results.
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sps

from .catalog import UserProfile, _largest_remainder
from .clustering import ClusterView
from .embedding import EmbeddingSource

N_TOP_CLUSTERS = 3
STRATEGIES = ("cold_start", "personalized", "popularity", "cf")


class RecommendationError(ValueError):
    pass


@dataclass
class RecommendationList:
    user_id: object
    item_ids: list
    strategy: str
    explore: bool = False
    params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.item_ids)

    def __iter__(self):
        return iter(self.item_ids)


def _view(clustering) -> ClusterView:
    return clustering.view() if hasattr(clustering, "view") else clustering


def user_rng(seed: int, user_id, stream: int = 0) -> np.random.Generator:
    """Independent random stream for one (experiment seed, user, purpose) triple."""
    if isinstance(user_id, (int, np.integer)) and user_id >= 0:
        key = int(user_id)
    else:
        key = zlib.crc32(str(user_id).encode("utf-8"))
    return np.random.default_rng([int(seed), key, stream])


def _draw(rng: np.random.Generator, pool: Sequence, n: int) -> list:
    if n <= 0 or not pool:
        return []
    idx = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
    return [pool[i] for i in idx]


def top_clusters(user: UserProfile, clustering, window: int) -> tuple[list, Counter]:
    """The user's (up to) three most engaged clusters over the last ``window`` interactions.

    Recorded cluster ids are refreshed from the current partition, since
    merges may have retired them. Ties are broken by the most recent
    interaction, then by the lower cluster id.

    Returns:
        ``(top_ids, engagement)`` where ``engagement`` counts interactions per
        cluster inside the window.
    """
    if not user.history:
        raise RecommendationError(f"user {user.id} has no history; use cold start")
    if window <= 0:
        raise RecommendationError("window must be positive")
    lookup = _view(clustering).item_to_cluster
    counts: Counter = Counter()
    last: dict = {}
    for pos, (cid, item) in enumerate(user.history[-window:]):
        cid = lookup.get(item, cid)
        counts[cid] += 1
        last[cid] = pos
    ranked = sorted(counts, key=lambda c: (-counts[c], -last[c], c))
    return ranked[:N_TOP_CLUSTERS], counts


def _eligible(members: Iterable, exclude) -> list:
    return [m for m in members if m not in exclude]


def _sample_top(rng, view: ClusterView, top, counts, quota, exclude, fallback=()) -> list:
    """Engagement-proportional draw from the top clusters with backfill."""
    alloc = _largest_remainder([counts[c] for c in top], quota)
    picked: list = []
    leftovers = []
    for cid, n in zip(top, alloc):
        pool = _eligible(view.members.get(cid, ()), exclude)
        order = [pool[i] for i in rng.permutation(len(pool))]
        picked.extend(order[:n])
        leftovers.append(order[n:])
    for rest in leftovers:
        if len(picked) >= quota:
            break
        picked.extend(rest[: quota - len(picked)])
    if len(picked) < quota:
        taken = set(picked)
        for cid in fallback:
            if len(picked) >= quota:
                break
            pool = [m for m in _eligible(view.members[cid], exclude) if m not in taken]
            picked.extend(_draw(rng, pool, quota - len(picked)))
    return picked


class _ExploreSampler:
    """Round-robin draw over the non-top clusters in a lazily generated random order.

    Cluster positions are rejection-sampled in small batches while fewer
    than half have been seen, then the remainder is permuted in one go, so
    the order is a uniform permutation but a quota met early only pays for
    the clusters it visits. The fractional part of each position draw picks
    the member on the first visit. ``order`` records the visit order and
    iterating replays it.
    """

    def __init__(self, rng: np.random.Generator, view: ClusterView, skip):
        self.rng, self.view, self.skip = rng, view, skip
        self._seen: set = set()
        self.order: list = []
        self.done = False

    def _extend(self, want: int) -> list:
        """Visit about ``want`` more positions; returns ``(cluster id, uniform)`` pairs."""
        ids, seen, skip, order = self.view.ids, self._seen, self.skip, self.order
        n = len(ids)
        new = []
        if 2 * len(seen) < n:
            for u in self.rng.random(want + 2).tolist():
                x = u * n
                i = int(x)
                if i not in seen:
                    seen.add(i)
                    cid = ids[i]
                    if cid not in skip:
                        order.append(cid)
                        new.append((cid, x - i))
        else:
            rest = [i for i in range(n) if i not in seen]
            seen.update(rest)
            us = self.rng.random(len(rest)).tolist()
            perm = self.rng.permutation(len(rest)).tolist()
            new = [(ids[rest[j]], u) for j, u in zip(perm, us) if ids[rest[j]] not in skip]
            order.extend(cid for cid, _ in new)
            self.done = True
        return new

    def __iter__(self):
        pos = 0
        while True:
            while pos >= len(self.order):
                if self.done:
                    return
                self._extend(16)
            yield self.order[pos]
            pos += 1

    def sample(self, n: int, exclude) -> list:
        """One uniformly drawn eligible item per cluster per pass, until ``n`` or exhaustion.

        A first-pass pick tries a uniform member and redraws among eligible
        members if that one is excluded, which keeps it uniform over them.
        """
        members = self.view.members
        picked: list = []
        again: list = []
        need = n
        while need > 0 and not self.done:
            for cid, u in self._extend(need):
                pool = members[cid]
                m = len(pool)
                j = int(u * m)
                item = pool[j if j < m else m - 1]
                if item in exclude:
                    pool = _eligible(pool, exclude)
                    if not pool:
                        continue
                    item = pool[int(self.rng.integers(len(pool)))]
                picked.append(item)
                again.append(cid)
                need -= 1
                if not need:
                    break

        chosen = set(picked)
        pools: dict = {}
        while len(picked) < n and again:
            still = []
            for cid in again:
                if len(picked) >= n:
                    break
                pool = pools.get(cid)
                if pool is None:
                    pool = pools[cid] = [m for m in members[cid] if m not in exclude and m not in chosen]
                if pool:
                    # swap-remove a uniform pick
                    j = int(self.rng.integers(len(pool)))
                    pool[j], pool[-1] = pool[-1], pool[j]
                    picked.append(pool.pop())
                if pool:
                    still.append(cid)
            again = still
        return picked


def explore_quota(k: int) -> int:
    return (2 * k) // 3


def recommend_personalized(
    user: UserProfile,
    k: int,
    explore: bool,
    window: int,
    clustering,
    seed: int = 0,
) -> RecommendationList:
    """Cluster-engagement recommendations for a returning user.

    With ``explore`` off all ``k`` items come from the three most engaged
    clusters, split in proportion to engagement. With it on, ``floor(2k/3)``
    items are first drawn round-robin from the other clusters (in a seeded
    random order) and the rest from the top clusters. Watched items are
    never returned; lists come back short rather than failing when the
    candidates run out.
    """
    view = _view(clustering)
    if not len(view):
        raise RecommendationError("no clusters available")
    top, counts = top_clusters(user, view, window)
    rng = user_rng(seed, user.id)
    exclude = set(user.watched_ids)

    explored: list = []
    fallback: Iterable = ()
    if explore:
        fallback = _ExploreSampler(rng, view, set(top))
        explored = fallback.sample(explore_quota(k), exclude)
        exclude.update(explored)
    exploit = _sample_top(rng, view, top, counts, k - len(explored), exclude, fallback)
    return RecommendationList(
        user.id,
        explored + exploit,
        "personalized",
        explore,
        {"k": k, "h": window, "seed": seed, "top_clusters": list(top)},
    )


def recommend_cold_start(
    keywords: Sequence[str],
    k: int,
    clustering,
    source: EmbeddingSource,
    exclude: Iterable = (),
    seed: int = 0,
    user_id=0,
) -> RecommendationList:
    """Keyword-driven recommendations for a user without usable history."""
    if not keywords:
        raise RecommendationError("cold start needs at least one keyword")
    view = _view(clustering)
    if not len(view):
        raise RecommendationError("no clusters available")
    query = np.mean(np.stack(source.embed_texts(keywords)), axis=0)
    norm = np.linalg.norm(query)
    if norm == 0.0:
        raise RecommendationError("keyword embeddings average to the zero vector")
    sims = view.unit_centroids @ (query / norm)
    ids = np.asarray(view.ids)
    ranked = ids[np.lexsort((ids, -sims))][:N_TOP_CLUSTERS].tolist()
    exclude = set(exclude)
    pool = [m for c in ranked for m in view.members[c] if m not in exclude]
    items = _draw(user_rng(seed, user_id), pool, k)
    return RecommendationList(
        user_id, items, "cold_start", False, {"k": k, "seed": seed, "top_clusters": ranked}
    )


def route(
    user: UserProfile,
    k: int,
    explore: bool,
    clustering,
    source: EmbeddingSource,
    history_min: int = 5,
    window: int = 10,
    seed: int = 0,
) -> RecommendationList:
    """Personalized when the history is long enough, cold start otherwise."""
    if user.history and len(user.history) >= history_min:
        return recommend_personalized(user, k, explore, window, clustering, seed)
    if user.prefs:
        return recommend_cold_start(
            user.prefs, k, clustering, source, exclude=user.watched_ids, seed=seed, user_id=user.id
        )
    raise RecommendationError(f"user {user.id} has neither enough history nor keywords")


def interaction_counts(profiles: Iterable[UserProfile]) -> Counter:
    return Counter(item for p in profiles for item in p.history_items)


class PopularityRecommender:
    """Most-interacted items first; ties by lower item id.

    ``universe`` optionally appends never-interacted items (count 0).
    """

    def __init__(self, counts: Mapping, universe: Iterable | None = None):
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        self.ranking = [item for item, _ in ranked]
        if universe is not None:
            seen = set(self.ranking)
            self.ranking.extend(sorted(i for i in universe if i not in seen))

    def recommend(self, user: UserProfile, k: int) -> RecommendationList:
        watched = user.watched_ids
        items = []
        for item in self.ranking:
            if len(items) >= k:
                break
            if item not in watched:
                items.append(item)
        return RecommendationList(user.id, items, "popularity", False, {"k": k})


def recommend_popularity(user: UserProfile, k: int, counts: Mapping, universe=None) -> RecommendationList:
    return PopularityRecommender(counts, universe).recommend(user, k)


class UserKNN:
    """User-user collaborative filtering on binary watch vectors.

    Neighbors are the ``neighbors`` most cosine-similar other users (ties by
    lower user id). An item scores the summed similarity of the neighbors
    who watched it; only positively scored, unwatched items are returned.
    """

    def __init__(self, profiles: Sequence[UserProfile], neighbors: int = 20):
        if len(profiles) < 2:
            raise RecommendationError("collaborative filtering needs at least two users")
        self.neighbors = neighbors
        self.user_ids = np.array(sorted(p.id for p in profiles))
        self._user_row = {u: i for i, u in enumerate(self.user_ids.tolist())}
        items = sorted({i for p in profiles for i in p.watched_ids})
        self.item_ids = np.array(items)
        self._item_col = {it: j for j, it in enumerate(items)}
        rows, cols = [], []
        for p in profiles:
            r = self._user_row[p.id]
            for it in p.watched_ids:
                rows.append(r)
                cols.append(self._item_col[it])
        self.matrix = sps.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(self.user_ids), len(items))
        )
        self.norms = np.sqrt(np.asarray(self.matrix.sum(axis=1)).ravel())

    def similarities(self, user: UserProfile) -> np.ndarray:
        cols = [self._item_col[i] for i in user.watched_ids if i in self._item_col]
        vec = np.zeros(len(self.item_ids))
        vec[cols] = 1.0
        overlap = self.matrix @ vec
        denom = self.norms * np.sqrt(len(user.watched_ids))
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = np.where(denom > 0, overlap / denom, 0.0)
        return sims

    def recommend(self, user: UserProfile, k: int) -> RecommendationList:
        if not user.watched_ids:
            raise RecommendationError(f"user {user.id} has no history; use cold start")
        sims = self.similarities(user)
        candidates = np.ones(len(self.user_ids), dtype=bool)
        if user.id in self._user_row:
            candidates[self._user_row[user.id]] = False
        idx = np.flatnonzero(candidates)
        order = idx[np.lexsort((self.user_ids[idx], -sims[idx]))][: self.neighbors]
        scores = np.asarray(self.matrix[order].T @ sims[order]).ravel()
        watched = [self._item_col[i] for i in user.watched_ids if i in self._item_col]
        scores[watched] = 0.0
        keep = np.flatnonzero(scores > 0)
        ranked = keep[np.lexsort((self.item_ids[keep], -scores[keep]))][:k]
        return RecommendationList(
            user.id, self.item_ids[ranked].tolist(), "cf", False, {"k": k, "neighbors": self.neighbors}
        )


def recommend_cf(user: UserProfile, k: int, profiles: Sequence[UserProfile], neighbors: int = 20):
    return UserKNN(profiles, neighbors).recommend(user, k)
