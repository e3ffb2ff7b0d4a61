"""Online clustering with a silhouette-tuned similarity threshold.

Items arrive one at a time. Each joins the cluster whose centroid is most
cosine-similar when that similarity beats the current threshold, otherwise
it opens a new cluster. Every ``threshold_update_freq`` inserts the
silhouette of the whole partition nudges the threshold and near-duplicate
clusters are merged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .embedding import EmbeddingError, as_vector, normalize_rows

logger = logging.getLogger(__name__)

MIN_THRESHOLD = 0.3
MAX_THRESHOLD = 0.8


class ClusteringError(ValueError):
    pass


@dataclass
class Cluster:
    id: int
    members: dict = field(default_factory=dict)  # ordered set: item id -> None
    total: np.ndarray | None = None  # running sum of member vectors

    @property
    def member_ids(self) -> list:
        return list(self.members)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def centroid(self) -> np.ndarray:
        return self.total / len(self.members)


@dataclass(frozen=True)
class ClusterView:
    """Immutable read-side snapshot used by the recommenders."""

    ids: tuple
    members: dict  # cluster id -> tuple of item ids
    item_to_cluster: dict
    unit_centroids: np.ndarray  # rows aligned with ``ids``

    def __len__(self) -> int:
        return len(self.ids)


def silhouette_score(vectors: np.ndarray, labels, block: int = 512) -> float | None:
    """Mean silhouette with cosine distance ``1 - cos``.

    Items alone in their cluster score 0. Returns None when fewer than two
    items or two clusters are present. Rows are processed in blocks, so
    memory stays at ``block * N`` distances.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n < 2:
        return None
    order = np.argsort(labels, kind="stable")
    unit = normalize_rows(vectors[order])
    labels = labels[order]
    uniq, starts, counts = np.unique(labels, return_index=True, return_counts=True)
    if uniq.size < 2:
        return None
    own = np.searchsorted(uniq, labels)

    scores = np.empty(n)
    for lo in range(0, n, block):
        hi = min(n, lo + block)
        dist = 1.0 - unit[lo:hi] @ unit.T
        # round-off on parallel vectors would otherwise give 0/eps silhouettes
        dist[dist < 1e-12] = 0.0
        sums = np.add.reduceat(dist, starts, axis=1)
        rows = np.arange(hi - lo)
        own_b = own[lo:hi]
        own_n = counts[own_b]
        self_d = dist[rows, np.arange(lo, hi)]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (sums[rows, own_b] - self_d) / (own_n - 1)
            means = sums / counts
        means[rows, own_b] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, (b - a) / denom, 0.0)
        s[own_n == 1] = 0.0
        scores[lo:hi] = s
    return float(scores.mean())


class ClusterState:
    """Mutable owner of the item partition.

    Not thread-safe: mutate from a single owner and hand readers a
    :meth:`view`.

    Args:
        threshold: initial similarity an item must exceed to join a cluster.
        dynamic: tune the threshold from the silhouette score.
        threshold_update_freq: inserts between adaptation/merge cycles.
        merge_threshold: centroid similarity above which clusters are merged.
        silhouette_sample: if set, score only a seeded uniform sample of this
            many items (the full score is quadratic in the item count).
        seed: seed for silhouette sampling.
    """

    def __init__(
        self,
        threshold: float = 0.45,
        dynamic: bool = True,
        threshold_update_freq: int = 100,
        merge_threshold: float = 0.85,
        silhouette_sample: int | None = None,
        seed: int = 0,
    ):
        if threshold_update_freq <= 0:
            raise ClusteringError("threshold_update_freq must be positive")
        if dynamic and not MIN_THRESHOLD <= threshold <= MAX_THRESHOLD:
            raise ClusteringError(
                f"dynamic threshold must start within [{MIN_THRESHOLD}, {MAX_THRESHOLD}]"
            )
        self.threshold = float(threshold)
        self.dynamic = dynamic
        self.threshold_update_freq = threshold_update_freq
        self.merge_threshold = merge_threshold
        self.silhouette_sample = silhouette_sample
        self.seed = seed
        self.interaction_count = 0
        self.silhouette_last: float | None = None
        self.adaptations: list[tuple[int, float | None, float]] = []

        self.clusters: dict[int, Cluster] = {}
        self.item_to_cluster: dict = {}
        self.vectors: dict = {}
        self.dim: int | None = None
        self._next_id = 0
        self._version = 0
        self._view: ClusterView | None = None
        self._rng = np.random.default_rng(seed)

        # dense index of unit centroids for the nearest-centroid scan
        self._ids: list[int] = []
        self._row: dict[int, int] = {}
        self._unit = np.zeros((0, 0))

    # -- centroid index -------------------------------------------------

    def _unit_centroid(self, cluster: Cluster) -> np.ndarray:
        norm = np.linalg.norm(cluster.total)
        return cluster.total / norm if norm > 0 else np.zeros_like(cluster.total)

    def _index_put(self, cluster: Cluster) -> None:
        row = self._row.get(cluster.id)
        if row is None:
            row = len(self._ids)
            if row >= self._unit.shape[0]:
                grown = np.zeros((max(16, 2 * self._unit.shape[0]), self.dim))
                grown[:row] = self._unit[:row]
                self._unit = grown
            self._ids.append(cluster.id)
            self._row[cluster.id] = row
        self._unit[row] = self._unit_centroid(cluster)

    def _index_drop(self, cid: int) -> None:
        row = self._row.pop(cid)
        last = len(self._ids) - 1
        if row != last:
            moved = self._ids[last]
            self._ids[row] = moved
            self._row[moved] = row
            self._unit[row] = self._unit[last]
        self._ids.pop()

    def _touch(self) -> None:
        self._version += 1
        self._view = None

    # -- queries --------------------------------------------------------

    def __len__(self) -> int:
        return len(self.clusters)

    def _check_vector(self, embedding) -> np.ndarray:
        try:
            vec = as_vector(embedding, self.dim)
        except EmbeddingError as exc:
            raise ClusteringError(str(exc)) from exc
        if not np.any(vec):
            raise ClusteringError("cannot cluster a zero vector")
        return vec

    def nearest_centroid(self, embedding) -> tuple[int, float]:
        """Cluster with the most similar centroid; ties go to the lowest id."""
        if not self.clusters:
            raise ClusteringError("no clusters exist")
        vec = self._check_vector(embedding)
        n = len(self._ids)
        sims = self._unit[:n] @ (vec / np.linalg.norm(vec))
        best = sims.max()
        ids = np.asarray(self._ids)[sims == best]
        return int(ids.min()), float(min(1.0, best))

    # -- mutation -------------------------------------------------------

    def _new_cluster(self, item_id, vec: np.ndarray) -> int:
        cluster = Cluster(self._next_id, {item_id: None}, vec.copy())
        self._next_id += 1
        self.clusters[cluster.id] = cluster
        self.item_to_cluster[item_id] = cluster.id
        self._index_put(cluster)
        return cluster.id

    def _assign(self, item_id, vec: np.ndarray) -> int:
        self.vectors[item_id] = vec
        if self.clusters:
            cid, sim = self.nearest_centroid(vec)
            if sim > self.threshold:
                cluster = self.clusters[cid]
                cluster.members[item_id] = None
                cluster.total = cluster.total + vec
                self.item_to_cluster[item_id] = cid
                self._index_put(cluster)
                return cid
        return self._new_cluster(item_id, vec)

    def insert(self, item_id, embedding) -> int:
        """Place a new item and run the periodic maintenance cycle when due.

        Returns the id of the cluster holding the item once maintenance (which
        may merge clusters) has finished.
        """
        if item_id in self.item_to_cluster:
            raise ClusteringError(f"item {item_id!r} is already clustered")
        vec = self._check_vector(embedding)
        if self.dim is None:
            self.dim = vec.size
            self._unit = np.zeros((16, self.dim))
        self._assign(item_id, vec)
        self.interaction_count += 1
        self._touch()
        if self.dynamic and self.interaction_count % self.threshold_update_freq == 0:
            score = self.silhouette()
            self.silhouette_last = score
            self.adapt_threshold(score)
            self.merge_similar()
        return self.item_to_cluster[item_id]

    def reassign_item(self, item_id, new_embedding) -> int:
        """Move an item whose vector changed; does not count as an insert."""
        if item_id not in self.item_to_cluster:
            raise ClusteringError(f"unknown item {item_id!r}")
        vec = self._check_vector(new_embedding)
        cid = self.item_to_cluster.pop(item_id)
        cluster = self.clusters[cid]
        del cluster.members[item_id]
        if cluster.members:
            cluster.total = cluster.total - self.vectors[item_id]
            self._index_put(cluster)
        else:
            del self.clusters[cid]
            self._index_drop(cid)
        new_cid = self._assign(item_id, vec)
        self._touch()
        return new_cid

    def adapt_threshold(self, score: float | None) -> float:
        """Apply one step of the silhouette-driven threshold schedule."""
        if not self.dynamic:
            raise ClusteringError("threshold adaptation requires dynamic=True")
        old = self.threshold
        if score is not None:
            if score < 0.1:
                self.threshold = max(MIN_THRESHOLD, self.threshold * 0.95)
            elif score < 0.2:
                self.threshold = max(MIN_THRESHOLD, self.threshold * 0.98)
            elif score > 0.4:
                self.threshold = min(MAX_THRESHOLD, self.threshold * 1.02)
        self.adaptations.append((self.interaction_count, score, self.threshold))
        logger.debug("threshold %.4f -> %.4f (silhouette %s)", old, self.threshold, score)
        return self.threshold

    def _merge_pair(self, keep: int, drop: int) -> None:
        a, b = self.clusters[keep], self.clusters.pop(drop)
        a.members.update(b.members)
        a.total = a.total + b.total
        for item in b.members:
            self.item_to_cluster[item] = keep
        self._index_drop(drop)
        self._index_put(a)

    def merge_similar(self) -> int:
        """Merge the most similar centroid pair until none exceeds ``merge_threshold``."""
        ids = sorted(self.clusters)
        if len(ids) < 2:
            return 0
        unit = self._unit[[self._row[c] for c in ids]]
        sims = unit @ unit.T
        sims[np.tril_indices(len(ids))] = -np.inf
        merges = 0
        while True:
            flat = int(np.argmax(sims))
            i, j = divmod(flat, len(ids))
            if not sims[i, j] > self.merge_threshold:
                break
            self._merge_pair(ids[i], ids[j])
            merges += 1
            sims[j, :] = -np.inf
            sims[:, j] = -np.inf
            fresh = unit @ self._unit[self._row[ids[i]]]
            unit[i] = self._unit[self._row[ids[i]]]
            alive = np.array([c in self.clusters for c in ids])
            col = np.where(alive, fresh, -np.inf)
            sims[:i, i] = col[:i]
            sims[i, i + 1:] = col[i + 1:]
        if merges:
            self._touch()
            logger.debug("merged %d cluster pairs, %d clusters left", merges, len(self.clusters))
        return merges

    # -- quality --------------------------------------------------------

    def silhouette(self) -> float | None:
        """Silhouette of the current partition, or None if undefined."""
        if len(self.clusters) < 2 or len(self.item_to_cluster) < 2:
            return None
        items = list(self.item_to_cluster)
        if self.silhouette_sample and len(items) > self.silhouette_sample:
            pick = self._rng.choice(len(items), size=self.silhouette_sample, replace=False)
            items = [items[i] for i in np.sort(pick)]
        X = np.stack([self.vectors[i] for i in items])
        labels = np.array([self.item_to_cluster[i] for i in items])
        return silhouette_score(X, labels)

    # -- snapshots ------------------------------------------------------

    def view(self) -> ClusterView:
        if self._view is None:
            ids = tuple(sorted(self.clusters))
            members = {c: tuple(self.clusters[c].members) for c in ids}
            unit = self._unit[[self._row[c] for c in ids]] if ids else np.zeros((0, self.dim or 0))
            unit.setflags(write=False)
            self._view = ClusterView(ids, members, dict(self.item_to_cluster), unit)
        return self._view

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "dynamic": self.dynamic,
            "threshold_update_freq": self.threshold_update_freq,
            "merge_threshold": self.merge_threshold,
            "interaction_count": self.interaction_count,
            "silhouette_last": self.silhouette_last,
            "clusters": [
                {
                    "id": c.id,
                    "member_ids": c.member_ids,
                    "centroid": [float(x) for x in c.centroid],
                }
                for c in sorted(self.clusters.values(), key=lambda c: c.id)
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping, vectors: Mapping | None = None) -> "ClusterState":
        """Rebuild a state from :meth:`to_dict` output.

        With ``vectors`` the running sums are recomputed from member
        embeddings; without, they are reconstructed as ``centroid * size``
        and reassignment of those items is unavailable.
        """
        state = cls(
            threshold=doc["threshold"],
            dynamic=doc.get("dynamic", False),
            threshold_update_freq=doc.get("threshold_update_freq", 100),
            merge_threshold=doc.get("merge_threshold", 0.85),
        )
        state.interaction_count = doc.get("interaction_count", 0)
        state.silhouette_last = doc.get("silhouette_last")
        for entry in doc["clusters"]:
            members = entry["member_ids"]
            if not members:
                raise ClusteringError(f"cluster {entry['id']} has no members")
            if vectors is not None:
                total = np.sum([np.asarray(vectors[m], dtype=np.float64) for m in members], axis=0)
                for m in members:
                    state.vectors[m] = as_vector(vectors[m])
            else:
                total = np.asarray(entry["centroid"], dtype=np.float64) * len(members)
            if state.dim is None:
                state.dim = total.size
                state._unit = np.zeros((16, state.dim))
            cluster = Cluster(int(entry["id"]), dict.fromkeys(members), total)
            for m in members:
                if m in state.item_to_cluster:
                    raise ClusteringError(f"item {m!r} listed in two clusters")
                state.item_to_cluster[m] = cluster.id
            state.clusters[cluster.id] = cluster
            state._index_put(cluster)
        state._next_id = max(state.clusters, default=-1) + 1
        return state

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, vectors: Mapping | None = None) -> "ClusterState":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), vectors)
