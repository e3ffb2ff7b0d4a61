from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptrec.catalog import UserProfile
from adaptrec.clustering import ClusterState
from adaptrec.embedding import FileEmbeddingSource, HashingEmbedder
from adaptrec.recommender import (
    PopularityRecommender,
    RecommendationError,
    UserKNN,
    explore_quota,
    interaction_counts,
    recommend_cf,
    recommend_cold_start,
    recommend_personalized,
    recommend_popularity,
    route,
    top_clusters,
)

from . import oracles


def make_state(sizes: dict[int, int], dim: int = 16) -> ClusterState:
    """Clusters with the given ids and sizes; item ids are ``cid * 1000 + j``."""
    basis = np.eye(dim)
    doc = {
        "threshold": 0.45,
        "clusters": [
            {"id": cid, "member_ids": [cid * 1000 + j for j in range(n)], "centroid": basis[cid % dim].tolist()}
            for cid, n in sizes.items()
        ],
    }
    return ClusterState.from_dict(doc)


def history_for(counts: dict[int, int]) -> list[tuple]:
    hist = []
    for cid, n in counts.items():
        hist += [(cid, cid * 1000 + j) for j in range(n)]
    return hist


def cluster_of(item):
    return item // 1000


def test_top_clusters_single():
    state = make_state({3: 10})
    user = UserProfile(1, history=history_for({3: 4}))
    top, eng = top_clusters(user, state, 10)
    assert top == [3]
    assert eng == Counter({3: 4})


def test_top_clusters_tie_break_by_recency():
    state = make_state({2: 10, 7: 10, 1: 10, 9: 10})
    hist = (
        [(2, 2000 + j) for j in range(5)]
        + [(7, 7000), (7, 7001), (1, 1000), (9, 9000), (7, 7002), (1, 1001), (1, 1002)]
    )
    user = UserProfile(1, history=hist)
    top, eng = top_clusters(user, state, 50)
    # sort oracle: count desc, then latest position desc, then id
    last = {c: max(i for i, (cc, _) in enumerate(hist) if cc == c) for c in eng}
    expected = sorted(eng, key=lambda c: (-eng[c], -last[c], c))[:3]
    assert top == expected == [2, 1, 7]
    assert sum(eng.values()) == len(hist)


def test_top_clusters_window():
    state = make_state({0: 60, 1: 60})
    hist = [(0, j) for j in range(40)] + [(1, 1000 + j) for j in range(10)]
    top, eng = top_clusters(UserProfile(1, history=hist), state, 10)
    assert eng == Counter({1: 10})
    assert top == [1]


def test_top_clusters_remaps_stale_ids():
    state = make_state({0: 5, 1: 5})
    user = UserProfile(1, history=[(42, 1000), (42, 1001)])
    assert top_clusters(user, state, 10)[0] == [1]


def test_top_clusters_empty_history():
    with pytest.raises(RecommendationError):
        top_clusters(UserProfile(1), make_state({0: 3}), 10)


def test_personalized_explore_quota_k5():
    state = make_state({c: 20 for c in range(8)})
    user = UserProfile(1, history=history_for({0: 5, 1: 3, 2: 2}))
    rec = recommend_personalized(user, 5, True, 10, state, seed=1)
    assert explore_quota(5) == 3
    clusters = [cluster_of(i) for i in rec.item_ids]
    assert len(rec) == 5
    assert sum(c not in (0, 1, 2) for c in clusters) == 3
    # explore items come first, one per cluster on the first pass
    assert all(c not in (0, 1, 2) for c in clusters[:3])
    assert len(set(clusters[:3])) == 3


def test_personalized_explore_quota_k10():
    state = make_state({c: 20 for c in range(8)})
    user = UserProfile(1, history=history_for({0: 5, 1: 3, 2: 2}))
    rec = recommend_personalized(user, 10, True, 10, state, seed=2)
    clusters = [cluster_of(i) for i in rec.item_ids]
    assert sum(c not in (0, 1, 2) for c in clusters) == 6
    assert sum(c in (0, 1, 2) for c in clusters) == 4


def test_personalized_explore_off_allocation():
    state = make_state({2: 30, 7: 30, 1: 30, 5: 30})
    user = UserProfile(1, history=history_for({2: 6, 7: 3, 1: 1}))
    rec = recommend_personalized(user, 10, False, 10, state, seed=0)
    got = Counter(cluster_of(i) for i in rec.item_ids)
    assert oracles.largest_remainder([6, 3, 1], 10) == [6, 3, 1]
    assert got == {2: 6, 7: 3, 1: 1}


def test_personalized_backfills_within_top_clusters():
    state = make_state({0: 6, 1: 30, 2: 30, 3: 30})
    # cluster 0 has 6 members, 5 of them watched
    user = UserProfile(1, history=history_for({0: 5, 1: 1, 2: 1}))
    rec = recommend_personalized(user, 10, False, 10, state)
    got = Counter(cluster_of(i) for i in rec.item_ids)
    assert len(rec) == 10
    assert got[0] == 1
    assert set(got) <= {0, 1, 2}


def test_personalized_explore_off_never_leaves_top_clusters():
    state = make_state({0: 3, 1: 50})
    user = UserProfile(1, history=history_for({0: 2}))
    rec = recommend_personalized(user, 5, False, 10, state)
    assert rec.item_ids == [2]


def test_personalized_exhausted_catalog_returns_empty():
    state = make_state({0: 3})
    user = UserProfile(1, history=history_for({0: 3}))
    assert recommend_personalized(user, 5, True, 10, state).item_ids == []


def test_personalized_explore_shortfall_filled_from_top():
    state = make_state({0: 30, 1: 1})
    user = UserProfile(1, history=history_for({0: 2}))
    rec = recommend_personalized(user, 6, True, 10, state)
    clusters = [cluster_of(i) for i in rec.item_ids]
    assert clusters[0] == 1
    assert clusters.count(0) == 5


def test_personalized_deterministic_and_seed_sensitive():
    state = make_state({c: 25 for c in range(10)})
    user = UserProfile(4, history=history_for({0: 3, 4: 2}))
    a = recommend_personalized(user, 10, True, 10, state, seed=3)
    b = recommend_personalized(user, 10, True, 10, state, seed=3)
    c = recommend_personalized(user, 10, True, 10, state, seed=4)
    assert a.item_ids == b.item_ids
    assert a.item_ids != c.item_ids


@settings(max_examples=80, deadline=None)
@given(
    st.dictionaries(st.integers(0, 11), st.integers(1, 15), min_size=1, max_size=12),
    st.integers(1, 12),
    st.booleans(),
    st.integers(0, 10_000),
    st.data(),
)
def test_personalized_properties(sizes, k, explore, seed, data):
    state = make_state(sizes)
    pool = [cid * 1000 + j for cid, n in sizes.items() for j in range(n)]
    hist_items = data.draw(st.lists(st.sampled_from(pool), min_size=1, max_size=20, unique=True))
    user = UserProfile(seed, history=[(cluster_of(i), i) for i in hist_items])
    rec = recommend_personalized(user, k, explore, 10, state, seed=seed)
    top = set(top_clusters(user, state, 10)[0])
    assert len(rec) <= k
    assert len(set(rec.item_ids)) == len(rec)
    assert not set(rec.item_ids) & user.watched_ids
    if not explore:
        assert all(cluster_of(i) in top for i in rec.item_ids)
    else:
        n_explore = sum(cluster_of(i) not in top for i in rec.item_ids)
        avail = sum(1 for i in pool if cluster_of(i) not in top and i not in user.watched_ids)
        assert n_explore >= min(explore_quota(k), avail)
    assert rec.item_ids == recommend_personalized(user, k, explore, 10, state, seed=seed).item_ids


def test_cold_start_single_cluster():
    state = make_state({0: 10})
    rec = recommend_cold_start(["drama"], 5, state, HashingEmbedder(16), seed=0)
    assert len(rec) == 5
    assert all(cluster_of(i) == 0 for i in rec.item_ids)


def test_cold_start_ranks_matching_cluster_first(tmp_path):
    state = make_state({0: 10, 1: 10, 2: 10, 3: 10, 4: 10})
    path = tmp_path / "kw.tsv"
    e = np.eye(16)
    # mean of the two keyword vectors is exactly cluster 3's direction
    path.write_text(
        "space\t" + ",".join(map(str, e[3] + e[4])) + "\n"
        "opera\t" + ",".join(map(str, e[3] - e[4])) + "\n",
        encoding="utf-8",
    )
    rec = recommend_cold_start(["space", "opera"], 4, state, FileEmbeddingSource(path))
    assert rec.params["top_clusters"][0] == 3


def test_cold_start_pool_exhaustion_and_exclusion():
    state = make_state({0: 3})
    rec = recommend_cold_start(["x"], 5, state, HashingEmbedder(16))
    assert sorted(rec.item_ids) == [0, 1, 2]
    rec = recommend_cold_start(["x"], 5, state, HashingEmbedder(16), exclude={1})
    assert sorted(rec.item_ids) == [0, 2]


def test_cold_start_errors():
    with pytest.raises(RecommendationError):
        recommend_cold_start([], 5, make_state({0: 3}), HashingEmbedder(16))
    with pytest.raises(RecommendationError):
        recommend_cold_start(["x"], 5, ClusterState(dynamic=False), HashingEmbedder(16))


def test_route():
    state = make_state({0: 10, 1: 10})
    emb = HashingEmbedder(16)
    assert route(UserProfile(1, prefs=["drama"]), 3, False, state, emb, history_min=5).strategy == "cold_start"
    at_min = UserProfile(2, history=history_for({0: 5}))
    assert route(at_min, 3, False, state, emb, history_min=5).strategy == "personalized"
    short = UserProfile(3, prefs=["war"], history=history_for({0: 2}))
    rec = route(short, 3, False, state, emb, history_min=5)
    assert rec.strategy == "cold_start"
    assert not set(rec.item_ids) & short.watched_ids
    with pytest.raises(RecommendationError):
        route(UserProfile(4), 3, False, state, emb)


def test_popularity_examples():
    counts = {"a": 9, "b": 5, "c": 2}
    assert recommend_popularity(UserProfile(1), 2, counts).item_ids == ["a", "b"]
    assert recommend_popularity(UserProfile(1, watched_ids={"a"}), 2, counts).item_ids == ["b", "c"]
    assert recommend_popularity(UserProfile(1), 10, counts).item_ids == ["a", "b", "c"]


def test_popularity_ties_and_universe():
    counts = {5: 2, 3: 2, 9: 7}
    pop = PopularityRecommender(counts, universe=[1, 3, 5, 9, 11])
    assert pop.recommend(UserProfile(1), 5).item_ids == [9, 3, 5, 1, 11]


def test_interaction_counts():
    users = [UserProfile(1, history=[(0, 1), (0, 2)]), UserProfile(2, history=[(0, 2)])]
    assert interaction_counts(users) == Counter({2: 2, 1: 1})


def test_cf_identical_users_similarity_one():
    a = UserProfile(1, history=[(0, 1), (0, 2)])
    b = UserProfile(2, history=[(0, 1), (0, 2)])
    knn = UserKNN([a, b])
    assert knn.similarities(a)[1] == pytest.approx(1.0)


def test_cf_example():
    a = UserProfile(1, history=[(0, 1), (0, 2)])
    b = UserProfile(2, history=[(0, 1), (0, 2), (0, 3)])
    assert recommend_cf(a, 1, [a, b]).item_ids == [3]


def test_cf_matches_bruteforce_scores():
    rng = np.random.default_rng(0)
    users = [
        UserProfile(u, history=[(0, int(i)) for i in rng.choice(40, size=rng.integers(1, 12), replace=False)])
        for u in range(30)
    ]
    knn = UserKNN(users, neighbors=5)
    for target in users[:10]:
        sims = {}
        for other in users:
            if other.id == target.id:
                continue
            inter = len(target.watched_ids & other.watched_ids)
            sims[other.id] = inter / np.sqrt(len(target.watched_ids) * len(other.watched_ids))
        nbrs = sorted(sims, key=lambda u: (-sims[u], u))[:5]
        scores = Counter()
        for u in nbrs:
            for item in users[u].watched_ids:
                if item not in target.watched_ids:
                    scores[item] += sims[u]
        expected = [i for i, s in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0])) if s > 0][:4]
        got = knn.recommend(target, 4).item_ids
        assert got == expected or np.allclose([scores[i] for i in got], [scores[i] for i in expected])


def test_cf_disjoint_histories():
    users = [UserProfile(u, history=[(0, u)]) for u in range(4)]
    assert recommend_cf(users[0], 3, users).item_ids == []


def test_cf_errors():
    with pytest.raises(RecommendationError):
        UserKNN([UserProfile(1, history=[(0, 1)])])
    users = [UserProfile(1, history=[(0, 1)]), UserProfile(2, history=[(0, 2)])]
    with pytest.raises(RecommendationError):
        recommend_cf(UserProfile(3), 2, users)


def test_explore_picks_are_uniform():
    state = make_state({c: 8 for c in range(10)})
    user = UserProfile(0, history=history_for({0: 3, 1: 2, 2: 1}))
    first_cluster = Counter()
    member = Counter()
    trials = 7000
    for seed in range(trials):
        rec = recommend_personalized(user, 3, True, 10, state, seed=seed)
        first = rec.item_ids[0]
        first_cluster[cluster_of(first)] += 1
        member[first % 1000] += 1
    assert set(first_cluster) == set(range(3, 10))
    # 7 equally likely clusters and 8 equally likely members; 5 sigma bounds
    for count in first_cluster.values():
        assert abs(count - trials / 7) < 5 * np.sqrt(trials * (1 / 7) * (6 / 7))
    for count in member.values():
        assert abs(count - trials / 8) < 5 * np.sqrt(trials * (1 / 8) * (7 / 8))
