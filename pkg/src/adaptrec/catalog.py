"""Item and user spaces plus MovieLens ingestion."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple

import numpy as np

NO_GENRES = "(no genres listed)"


class DataError(ValueError):
    """Malformed input files or impossible sampling requests."""


@dataclass(frozen=True)
class Item:
    id: int
    title: str
    tags: tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self):
        if not self.title:
            raise DataError(f"item {self.id} has an empty title")

    @property
    def primary_genre(self) -> str:
        return self.tags[0] if self.tags else ""


class Rating(NamedTuple):
    user_id: int
    item_id: int
    rating: float
    timestamp: int


@dataclass
class UserProfile:
    """A user's declared keywords and watch history.

    ``history`` holds ``(cluster_id, item_id)`` pairs, oldest first.
    """

    id: int
    prefs: list[str] = field(default_factory=list)
    history: list[tuple] = field(default_factory=list)
    watched_ids: set = field(default_factory=set)

    def __post_init__(self):
        self.watched_ids = set(self.watched_ids) | {item for _, item in self.history}

    def record(self, cluster_id, item_id) -> None:
        self.history.append((cluster_id, item_id))
        self.watched_ids.add(item_id)

    @property
    def history_items(self) -> list:
        return [item for _, item in self.history]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "prefs": list(self.prefs),
            "history": [list(pair) for pair in self.history],
            "watched_ids": sorted(self.watched_ids),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "UserProfile":
        return cls(
            id=doc["id"],
            prefs=list(doc.get("prefs", [])),
            history=[tuple(pair) for pair in doc.get("history", [])],
            watched_ids=set(doc.get("watched_ids", [])),
        )


def build_item_text(item: Item) -> str:
    """``title. tag, tag. description`` with empty parts left out."""
    parts = [item.title, ", ".join(item.tags), item.description]
    return ". ".join(p for p in parts if p)


def _reader(path, required: tuple[str, ...]) -> Iterator[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            # header is line 1
            yield reader.line_num, row


def iter_movies(path) -> Iterator[Item]:
    for line, row in _reader(path, ("movieId", "title", "genres")):
        try:
            genres = row["genres"] or ""
            tags = () if genres in ("", NO_GENRES) else tuple(genres.split("|"))
            yield Item(int(row["movieId"]), row["title"].strip(), tags)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: cannot parse row {line}: {exc}") from exc


def iter_ratings(path) -> Iterator[Rating]:
    """Stream ratings row by row; the file is never loaded whole."""
    for line, row in _reader(path, ("userId", "movieId", "rating", "timestamp")):
        try:
            yield Rating(
                int(row["userId"]), int(row["movieId"]), float(row["rating"]), int(row["timestamp"])
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: cannot parse row {line}: {exc}") from exc


def load_movielens(movies_path, ratings_path) -> tuple[list[Item], list[Rating]]:
    items = list(iter_movies(movies_path))
    seen = set()
    for item in items:
        if item.id in seen:
            raise DataError(f"{movies_path}: duplicate movieId {item.id}")
        seen.add(item.id)
    return items, list(iter_ratings(ratings_path))


def _largest_remainder(weights: list[float], total: int) -> list[int]:
    """Split ``total`` integer slots proportionally; ties go to earlier entries."""
    wsum = sum(weights)
    if wsum <= 0 or total <= 0:
        return [0] * len(weights)
    exact = [total * w / wsum for w in weights]
    alloc = [math.floor(x) for x in exact]
    left = total - sum(alloc)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - alloc[i]), i))
    for i in order[:left]:
        alloc[i] += 1
    return alloc


def sample_items(items: list[Item], n: int, seed: int = 0) -> list[Item]:
    """Genre-stratified sample of ``min(n, len(items))`` items.

    Strata are primary (first listed) genres; slot counts follow the catalog
    shares with largest-remainder rounding. The result keeps catalog order.
    """
    if n <= 0:
        raise DataError("sample size must be positive")
    if n >= len(items):
        return list(items)
    strata: dict[str, list[int]] = defaultdict(list)
    for pos, item in enumerate(items):
        strata[item.primary_genre].append(pos)
    keys = sorted(strata)
    alloc = _largest_remainder([len(strata[k]) for k in keys], n)
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for key, take in zip(keys, alloc):
        if take:
            chosen.extend(rng.choice(strata[key], size=take, replace=False).tolist())
    return [items[pos] for pos in sorted(chosen)]


def build_user_histories(
    ratings: Iterable[Rating],
    item_subset: Iterable[Item],
    n_users: int,
    h: int,
    watch_rating_min: float = 3.5,
    seed: int = 0,
    clustering=None,
) -> list[UserProfile]:
    """Sample users and give each their ``h`` most recent watched items.

    "Watched" means rated at least ``watch_rating_min`` on an item of the
    subset. Only users with at least ``h`` such ratings are eligible.
    Cluster ids are looked up in ``clustering.item_to_cluster`` when a
    clustering is given and are None otherwise.
    """
    if n_users <= 0 or h <= 0:
        raise DataError("n_users and h must be positive")
    subset = {item.id for item in item_subset}
    watched: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for r in ratings:
        if r.item_id in subset and r.rating >= watch_rating_min:
            watched[r.user_id].append((r.timestamp, r.item_id))
    eligible = sorted(u for u, events in watched.items() if len(events) >= h)
    if len(eligible) < n_users:
        raise DataError(
            f"only {len(eligible)} users have >= {h} watched items, {n_users} requested "
            f"(short by {n_users - len(eligible)})"
        )
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(eligible, size=n_users, replace=False).tolist())
    lookup = clustering.item_to_cluster if clustering is not None else {}
    profiles = []
    for user in picked:
        recent = sorted(watched[user])[-h:]
        history = [(lookup.get(item), item) for _, item in recent]
        profiles.append(UserProfile(id=user, history=history))
    return profiles


def derive_keywords(profile: UserProfile, items: Mapping[int, Item], n: int = 5) -> list[str]:
    """The ``n`` most frequent tags across a user's history (ties alphabetical)."""
    counts = Counter(tag for item in profile.history_items for tag in items[item].tags)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keywords = [tag for tag, _ in ranked[:n]]
    if not keywords:
        # untagged history: fall back to the most recent titles
        keywords = [items[i].title for i in reversed(profile.history_items)][:n]
    return keywords


def save_catalog(path, items: Iterable[Item], users: Iterable[UserProfile]) -> None:
    doc = {
        "items": [
            {"id": it.id, "title": it.title, "tags": list(it.tags), "description": it.description}
            for it in items
        ],
        "users": [u.to_dict() for u in users],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_catalog(path) -> tuple[list[Item], list[UserProfile]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = [Item(d["id"], d["title"], tuple(d["tags"]), d.get("description", "")) for d in doc["items"]]
    return items, [UserProfile.from_dict(d) for d in doc["users"]]
