"""End-to-end offline experiment: ingest, embed, cluster, recommend, score, A/B."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import abtest, catalog, metrics
from .clustering import ClusterState
from .embedding import make_source
from .recommender import (
    PopularityRecommender,
    UserKNN,
    interaction_counts,
    recommend_cold_start,
    recommend_personalized,
)

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    movies_path: str = ""
    ratings_path: str = ""
    embedding_source: str = "test"
    embedding_dim: int = 384
    embedding_timeout: float = 30.0
    n_items: int = 20000
    n_users: int = 300
    k_values: list[int] = field(default_factory=lambda: [5, 10])
    h_values: list[int] = field(default_factory=lambda: [10, 50])
    threshold: float = 0.45
    threshold_update_freq: int = 100
    merge_threshold: float = 0.85
    dynamic: bool = True
    silhouette_sample: int | None = None
    watch_rating_min: float = 3.5
    history_min: int = 5
    n_keywords: int = 5
    cf_neighbors: int = 20
    unexp_centroid: bool = False
    seed: int = 0
    judge: dict = field(default_factory=dict)
    out: str = "results"

    def validate(self) -> "ExperimentConfig":
        for name in ("n_items", "n_users", "threshold_update_freq", "history_min", "n_keywords",
                     "cf_neighbors", "embedding_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not self.k_values or not self.h_values:
            raise ConfigError("k_values and h_values must be non-empty")
        if any(v <= 0 for v in self.k_values + self.h_values):
            raise ConfigError("k and h values must be positive")
        if max(self.k_values) > self.n_items:
            raise ConfigError("k cannot exceed n_items")
        if self.silhouette_sample is not None and self.silhouette_sample < 2:
            raise ConfigError("silhouette_sample must be at least 2")
        self.judge_config()
        return self

    def judge_config(self) -> abtest.JudgeConfig:
        try:
            return abtest.JudgeConfig(**self.judge)
        except TypeError as exc:
            valid = ", ".join(f.name for f in dataclasses.fields(abtest.JudgeConfig))
            raise ConfigError(f"bad judge settings ({exc}); valid keys: {valid}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _check_type(name: str, value, annotation: str):
    def fail():
        raise ConfigError(f"{name}: expected {annotation}, got {type(value).__name__} {value!r}")

    is_int = isinstance(value, int) and not isinstance(value, bool)
    if annotation == "int":
        if not is_int:
            fail()
    elif annotation == "float":
        if not (is_int or isinstance(value, float)):
            fail()
        value = float(value)
    elif annotation == "bool":
        if not isinstance(value, bool):
            fail()
    elif annotation == "str":
        if not isinstance(value, str):
            fail()
    elif annotation == "int | None":
        if value is not None and not is_int:
            fail()
    elif annotation == "list[int]":
        if not isinstance(value, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            fail()
    elif annotation == "dict":
        if not isinstance(value, dict):
            fail()
    return value


def parse_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Load a JSON config file and apply flag overrides on top.

    Unknown keys and mistyped values raise :class:`ConfigError`.
    """
    values: dict[str, Any] = {}
    if path:
        text = Path(path).read_text(encoding="utf-8").strip()
        if text:
            try:
                values = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: top level must be an object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "judge" and isinstance(values.get("judge"), dict):
            value = {**values["judge"], **value}
        values[key] = value
    fields = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(
            f"unknown config key(s): {', '.join(unknown)}; valid keys: {', '.join(sorted(fields))}"
        )
    checked = {k: _check_type(k, v, fields[k]) for k, v in values.items()}
    return ExperimentConfig(**checked).validate()


@dataclass
class ExperimentReport:
    rows: list[metrics.MetricReportRow]
    ab_results: dict
    clustering: ClusterState
    users: list
    files: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


class _Stage:
    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        logger.info("stage %s", self.name)
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, ExperimentError):
            raise ExperimentError(self.name, exc) from exc
        return False


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run every (k, h) block and write the report files into ``config.out``.

    A failing stage raises :class:`ExperimentError` and leaves a ``FAILED``
    marker next to whatever partial outputs were written.
    """
    marker = Path(config.out) / "FAILED"
    try:
        report = _run(config)
    except ExperimentError as exc:
        if marker.parent.is_dir():
            marker.write_text(f"{exc}\n", encoding="utf-8")
        raise
    marker.unlink(missing_ok=True)
    return report


def _run(config: ExperimentConfig) -> ExperimentReport:
    timings: dict = {}
    out = Path(config.out)
    seed = config.seed

    with _Stage("config", timings):
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved").write_text(
            json.dumps(dataclasses.asdict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        judge = config.judge_config()

    with _Stage("ingest", timings):
        items = list(catalog.iter_movies(config.movies_path))
        subset = catalog.sample_items(items, config.n_items, seed)
        by_id = {it.id: it for it in subset}

    with _Stage("embed", timings):
        source = make_source(config.embedding_source, config.embedding_dim, config.embedding_timeout)
        embeddings = {it.id: source.embed_item(it.id, catalog.build_item_text(it)) for it in subset}

    with _Stage("cluster", timings):
        state = ClusterState(
            threshold=config.threshold,
            dynamic=config.dynamic,
            threshold_update_freq=config.threshold_update_freq,
            merge_threshold=config.merge_threshold,
            silhouette_sample=config.silhouette_sample,
            seed=seed,
        )
        order = np.random.default_rng(seed).permutation(len(subset))
        for pos in order:
            item = subset[pos]
            state.insert(item.id, embeddings[item.id])
        state.save(out / "clusters.json")
        view = state.view()
        logger.info("%d items in %d clusters (threshold %.3f)", len(subset), len(state), state.threshold)

    with _Stage("users", timings):
        ratings = (
            r for r in catalog.iter_ratings(config.ratings_path) if r.rating >= config.watch_rating_min
        )
        users = catalog.build_user_histories(
            ratings, subset, config.n_users, max(config.h_values), config.watch_rating_min, seed, state
        )
        for user in users:
            user.prefs = catalog.derive_keywords(user, by_id, config.n_keywords)
        catalog.save_catalog(out / "catalog.json", subset, users)

    samples: list[dict] = []
    ab_pct: dict = {}
    ab_results: dict = {}
    with _Stage("recommend", timings):
        popularity = PopularityRecommender(interaction_counts(users), by_id)
        knn = UserKNN(users, config.cf_neighbors)
        titles = {i: it.title for i, it in by_id.items()}
        for h in config.h_values:
            for k in config.k_values:
                off_on: dict = {}
                for user in users:
                    history = user.history_items
                    lists = {
                        "Cold Start": recommend_cold_start(
                            user.prefs, k, view, source, user.watched_ids, seed, user.id
                        ),
                        "Collaborative Filtering": knn.recommend(user, k),
                        "Popularity-Based": popularity.recommend(user, k),
                        "Exploration Off": recommend_personalized(user, k, False, h, view, seed),
                        "Exploration On": recommend_personalized(user, k, True, h, view, seed),
                    }
                    off_on[user.id] = (lists["Exploration Off"].item_ids, lists["Exploration On"].item_ids)
                    for conf, rec in lists.items():
                        unexp = None
                        if conf != "Cold Start":
                            unexp = metrics.unexpectedness(rec.item_ids, history, embeddings, config.unexp_centroid)
                        samples.append(
                            {
                                "k": k,
                                "h": h,
                                "configuration": conf,
                                "user": user.id,
                                "ils": metrics.intra_list_similarity(rec.item_ids, embeddings),
                                "unexp": unexp,
                            }
                        )
                with _Stage(f"abtest k={k} h={h}", timings):
                    judged = [u for u in users if off_on[u.id][0] and off_on[u.id][1]]
                    result = abtest.run_ab_test(judged, off_on, titles, judge, seed, k=k, h=h)
                    ab_results[(k, h)] = result
                    ab_pct[(k, h, "Exploration Off")] = result.off_pct
                    ab_pct[(k, h, "Exploration On")] = result.on_pct
                    if result.on_pct is None:
                        logger.warning("k=%d h=%d: no valid A/B verdicts", k, h)

    with _Stage("report", timings):
        rows = metrics.aggregate_report(samples, ab_pct)
        files = {
            "report.csv": out / "report.csv",
            "report.txt": out / "report.txt",
            "trials.jsonl": out / "trials.jsonl",
            "clusters.json": out / "clusters.json",
            "config.resolved": out / "config.resolved",
            "catalog.json": out / "catalog.json",
        }
        files["report.csv"].write_text(metrics.report_csv(rows), encoding="utf-8")
        files["report.txt"].write_text(metrics.report_table(rows), encoding="utf-8")
        abtest.write_trials(files["trials.jsonl"], list(ab_results.values()))

    return ExperimentReport(rows, ab_results, state, users, files, timings)
