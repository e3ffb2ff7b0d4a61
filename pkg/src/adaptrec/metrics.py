"""Diversity and novelty of recommendation lists, plus report aggregation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embedding import normalize_rows

logger = logging.getLogger(__name__)

CONFIGURATIONS = ("Cold Start", "Collaborative Filtering", "Popularity-Based", "Exploration Off", "Exploration On")


def _unit(ids: Sequence, embeddings: Mapping) -> np.ndarray:
    return normalize_rows(np.stack([embeddings[i] for i in ids]))


def intra_list_similarity(items: Sequence, embeddings: Mapping) -> float | None:
    """Mean cosine similarity over ordered pairs of distinct list positions.

    Lower means more diverse. None for lists shorter than two.
    """
    n = len(items)
    if n < 2:
        return None
    unit = _unit(items, embeddings)
    sims = unit @ unit.T
    return float((sims.sum() - np.trace(sims)) / (n * (n - 1)))


def unexpectedness(items: Sequence, history: Sequence, embeddings: Mapping, centroid: bool = False) -> float | None:
    """Mean cosine distance between recommended items and the user's history.

    By default each item's distance to the history is its mean distance to
    the individual history items. ``centroid=True`` instead measures the
    distance to the mean history vector.
    """
    if not items or not history:
        return None
    rec = _unit(items, embeddings)
    if centroid:
        hist = np.mean(np.stack([embeddings[i] for i in history]), axis=0)
        hist = hist / np.linalg.norm(hist)
        return float(np.mean(1.0 - rec @ hist))
    hist = _unit(history, embeddings)
    return float(np.mean(1.0 - rec @ hist.T))


@dataclass
class MetricReportRow:
    configuration: str
    k: int
    h: int
    ils: float | None
    unexp: float | None
    ab_preference: float | None = None
    users: int = 0


def _mean(values: Iterable) -> float | None:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(vals)) if vals else None


def aggregate_report(samples: Iterable[Mapping], ab: Mapping | None = None) -> list[MetricReportRow]:
    """Average per-user samples into one row per ``(k, h, configuration)``.

    Each sample is a mapping with keys ``k``, ``h``, ``configuration``,
    ``ils`` and ``unexp`` (either may be None). ``ab`` maps
    ``(k, h, configuration)`` to a preference percentage. Rows are ordered by
    first appearance of their group.
    """
    groups: dict[tuple, list[Mapping]] = {}
    for s in samples:
        groups.setdefault((s["k"], s["h"], s["configuration"]), []).append(s)
    ab = ab or {}
    rows = []
    for key, group in groups.items():
        if not group:
            logger.warning("no samples for %s; row omitted", key)
            continue
        k, h, conf = key
        rows.append(
            MetricReportRow(
                conf,
                k,
                h,
                _mean(s["ils"] for s in group),
                _mean(s["unexp"] for s in group),
                ab.get(key),
                len(group),
            )
        )
    return rows


def _fmt(value: float | None, digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def report_csv(rows: Sequence[MetricReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "h", "configuration", "ils", "unexp", "ab_preference_pct", "users"])
    for r in rows:
        writer.writerow(
            [
                r.k,
                r.h,
                r.configuration,
                "" if r.ils is None else repr(r.ils),
                "" if r.unexp is None else repr(r.unexp),
                "" if r.ab_preference is None else repr(r.ab_preference),
                r.users,
            ]
        )
    return buf.getvalue()


def report_table(rows: Sequence[MetricReportRow]) -> str:
    """Aligned text table in the familiar k / h / Configuration / ILS / Unexp. / A/B layout."""
    header = ["k", "h", "Configuration", "ILS", "Unexp.", "A/B Preference (%)"]
    body = [
        [str(r.k), str(r.h), r.configuration, _fmt(r.ils), _fmt(r.unexp), _fmt(r.ab_preference, 1)]
        for r in rows
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    prev = None
    for r, row in zip(rows, body):
        if prev is not None and (r.k, r.h) != prev:
            lines.append("")
        prev = (r.k, r.h)
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
