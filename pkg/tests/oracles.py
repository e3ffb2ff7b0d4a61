"""Independent reference implementations for checking the vectorized code.

Plain Python loops over ``math``; nothing here imports the package.
"""

from __future__ import annotations

import math


def cos(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def silhouette(vectors, labels) -> float:
    """Textbook silhouette: a(i) own-cluster mean distance, b(i) nearest other cluster."""
    n = len(vectors)
    groups = sorted(set(labels))
    total = 0.0
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            continue  # singleton contributes 0
        a = sum(1 - cos(vectors[i], vectors[j]) for j in own) / len(own)
        b = math.inf
        for g in groups:
            if g == labels[i]:
                continue
            members = [j for j in range(n) if labels[j] == g]
            b = min(b, sum(1 - cos(vectors[i], vectors[j]) for j in members) / len(members))
        denom = max(a, b)
        total += (b - a) / denom if denom > 0 else 0.0
    return total / n


def ils(vectors) -> float:
    n = len(vectors)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += cos(vectors[i], vectors[j])
    return total / (n * (n - 1))


def unexp(rec_vectors, hist_vectors) -> float:
    total = 0.0
    for r in rec_vectors:
        total += sum(1 - cos(r, h) for h in hist_vectors) / len(hist_vectors)
    return total / len(rec_vectors)


def threshold_trajectory(start: float, scores) -> list[float]:
    """Step the adaptive-threshold schedule by hand."""
    t = start
    out = []
    for s in scores:
        if s < 0.1:
            t = max(0.3, t * 0.95)
        elif s < 0.2:
            t = max(0.3, t * 0.98)
        elif s > 0.4:
            t = min(0.8, t * 1.02)
        out.append(t)
    return out


def largest_remainder(weights, total) -> list[int]:
    exact = [total * w / sum(weights) for w in weights]
    floors = [math.floor(x) for x in exact]
    rema = sorted(range(len(weights)), key=lambda i: (-(exact[i] - floors[i]), i))
    for i in rema[: total - sum(floors)]:
        floors[i] += 1
    return floors
