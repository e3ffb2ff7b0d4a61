"""Adaptive cluster-based content recommendation with user-controlled exploration."""

from .catalog import Item, UserProfile, build_item_text
from .clustering import ClusterState, ClusterView, silhouette_score
from .embedding import HashingEmbedder, cosine_similarity, load_embeddings, make_source
from .metrics import intra_list_similarity, unexpectedness
from .recommender import (
    RecommendationList,
    recommend_cf,
    recommend_cold_start,
    recommend_personalized,
    recommend_popularity,
    route,
    top_clusters,
)

__all__ = [
    "ClusterState",
    "ClusterView",
    "HashingEmbedder",
    "Item",
    "RecommendationList",
    "UserProfile",
    "build_item_text",
    "cosine_similarity",
    "intra_list_similarity",
    "load_embeddings",
    "make_source",
    "recommend_cf",
    "recommend_cold_start",
    "recommend_personalized",
    "recommend_popularity",
    "route",
    "silhouette_score",
    "top_clusters",
    "unexpectedness",
]

__version__ = "0.1.0"
