"""Planted-cluster fixtures with known ground truth."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .catalog import UserProfile
from .embedding import save_embeddings

GENRES = (
    "Action", "Adventure", "Animation", "Comedy", "Crime", "Documentary",
    "Drama", "Fantasy", "Horror", "Musical", "Romance", "Sci-Fi",
    "Thriller", "War", "Western", "Mystery",
)
_WORDS = (
    "night", "river", "king", "shadow", "city", "garden", "storm", "letter",
    "winter", "echo", "harbor", "glass", "road", "silver", "moon", "fire",
)


def planted_clusters(
    n_clusters: int = 12,
    n_items: int = 2000,
    dim: int = 64,
    spread: float = 0.2,
    seed: int = 0,
) -> tuple[dict[int, np.ndarray], dict[int, int], np.ndarray]:
    """Unit vectors scattered tightly around orthonormal cluster centers.

    Item ``i`` belongs to planted cluster ``i % n_clusters``. Noise is
    orthogonal to the center with norm ``spread``, so any two members of a
    cluster have cosine at least ``(1 - spread**2) / (1 + spread**2)``
    (0.923 at the default). Cross-cluster cosines sit near 0.

    Returns:
        ``(vectors, labels, centers)``.
    """
    if dim < n_clusters:
        raise ValueError("dim must be at least n_clusters for orthonormal centers")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, n_clusters)))
    centers = q.T
    vectors, labels = {}, {}
    for item in range(n_items):
        c = item % n_clusters
        noise = rng.standard_normal(dim)
        noise -= (noise @ centers[c]) * centers[c]
        noise /= np.linalg.norm(noise)
        v = centers[c] + spread * noise
        vectors[item] = v / np.linalg.norm(v)
        labels[item] = c
    return vectors, labels, centers


def planted_users(
    labels: dict[int, int],
    n_users: int = 100,
    history: int = 50,
    clusters_per_user: int = 3,
    seed: int = 0,
) -> list[UserProfile]:
    """Users whose histories fall entirely inside a few planted clusters.

    Each user draws cluster weights from a flat Dirichlet, so engagement is
    uneven between their clusters. History cluster ids are left as None;
    recommenders resolve them from the live partition.
    """
    rng = np.random.default_rng(seed)
    by_cluster: dict[int, list[int]] = {}
    for item, c in labels.items():
        by_cluster.setdefault(c, []).append(item)
    cluster_ids = sorted(by_cluster)
    users = []
    for uid in range(n_users):
        chosen = rng.choice(cluster_ids, size=clusters_per_user, replace=False)
        weights = rng.dirichlet(np.ones(clusters_per_user))
        counts = np.bincount(
            rng.choice(clusters_per_user, size=history, p=weights), minlength=clusters_per_user
        )
        items: list[int] = []
        for c, n in zip(chosen, counts):
            pool = by_cluster[int(c)]
            items.extend(rng.choice(pool, size=min(n, len(pool)), replace=False).tolist())
        items = [items[i] for i in rng.permutation(len(items))]
        users.append(UserProfile(id=uid, history=[(None, i) for i in items]))
    return users


def write_movielens_fixture(
    directory,
    n_items: int = 100,
    n_users: int = 10,
    n_clusters: int = 5,
    ratings_per_user: int = 55,
    dim: int = 64,
    seed: int = 0,
) -> dict[str, Path]:
    """Write ``movies.csv``, ``ratings.csv`` and ``embeddings.tsv`` to ``directory``.

    Movies in planted cluster ``c`` carry genre ``GENRES[c]``; the embedding
    file holds the planted item vectors plus one vector per genre keyword
    (its cluster center) for cold-start queries. Users rate mostly inside
    three clusters with high scores, plus a few low ratings elsewhere.
    """
    if n_clusters > len(GENRES):
        raise ValueError(f"at most {len(GENRES)} planted clusters supported")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    vectors, labels, centers = planted_clusters(n_clusters, n_items, dim, seed=seed)
    ids = {i: i + 1 for i in vectors}  # MovieLens ids start at 1

    movies = directory / "movies.csv"
    with open(movies, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["movieId", "title", "genres"])
        for i in sorted(vectors):
            words = rng.choice(_WORDS, size=2, replace=False)
            year = 1950 + int(rng.integers(0, 70))
            title = f"The {words[0].title()} {words[1].title()} ({year})"
            w.writerow([ids[i], title, GENRES[labels[i]]])

    by_cluster: dict[int, list[int]] = {}
    for i, c in labels.items():
        by_cluster.setdefault(c, []).append(i)
    ratings = directory / "ratings.csv"
    with open(ratings, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["userId", "movieId", "rating", "timestamp"])
        for uid in range(1, n_users + 1):
            liked = rng.choice(n_clusters, size=min(3, n_clusters), replace=False)
            pool = [i for c in liked for i in by_cluster[int(c)]]
            n_like = min(ratings_per_user, len(pool))
            picks = rng.choice(pool, size=n_like, replace=False).tolist()
            rest = [i for i in vectors if i not in set(picks)]
            dislikes = rng.choice(rest, size=min(5, len(rest)), replace=False).tolist()
            ts = 1_000_000_000 + uid * 100_000
            for i in picks:
                ts += int(rng.integers(1, 1000))
                w.writerow([uid, ids[i], float(rng.choice([3.5, 4.0, 4.5, 5.0])), ts])
            for i in dislikes:
                ts += int(rng.integers(1, 1000))
                w.writerow([uid, ids[i], float(rng.choice([1.0, 2.0, 3.0])), ts])

    table: dict = {ids[i]: v for i, v in vectors.items()}
    for c in range(n_clusters):
        table[GENRES[c]] = centers[c]
    embeddings = directory / "embeddings.tsv"
    save_embeddings(embeddings, table)
    return {"movies": movies, "ratings": ratings, "embeddings": embeddings}
