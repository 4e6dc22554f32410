"""Full-ranking top-K evaluation plus the silhouette diagnostic.

Every metric ranks a user's scores over all items except those in the
user's training set; ties break by ascending item index so runs are
deterministic. Users without held-out items are excluded from averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .util import fmt_fixed6

METRIC_NAMES = ("precision", "recall", "hr", "ndcg")


def _ordered(scores: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    """Eligible items by descending score, ties by ascending item index."""
    sub = scores[eligible]
    order = np.lexsort((eligible, -sub))
    return eligible[order]


def rank_all(model, user: int, exclusions, features, graph=None) -> np.ndarray:
    """Ranked item ids for one user with the given items excluded."""
    u_reps, i_reps = model.final_representations(features, graph=graph)
    if not 0 <= user < u_reps.shape[0]:
        raise IndexError(f"user {user} out of range [0, {u_reps.shape[0]})")
    scores = i_reps @ u_reps[user]
    mask = np.ones(i_reps.shape[0], dtype=bool)
    exclusions = np.asarray(list(exclusions), dtype=np.int64)
    if exclusions.size:
        mask[exclusions] = False
    return _ordered(scores, np.nonzero(mask)[0])


def metrics_at_k(ranked: np.ndarray, test_items, k: int) -> Tuple[float, float, float, float]:
    """(precision, recall, hit-ratio, ndcg) at cutoff k for one user.

    NDCG uses binary relevance: DCG sums 1/log2(rank+1) over hit ranks
    (1-based) and is normalized by the ideal DCG truncated at
    min(k, |test_items|).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    test_items = set(int(i) for i in test_items)
    if not test_items:
        raise ValueError("empty test set; caller must skip such users")
    top = ranked[:k]
    hit_ranks = [r + 1 for r, item in enumerate(top) if int(item) in test_items]
    hits = len(hit_ranks)
    precision = hits / k
    recall = hits / len(test_items)
    hr = 1.0 if hits else 0.0
    dcg = sum(1.0 / np.log2(r + 1) for r in hit_ranks)
    idcg = sum(1.0 / np.log2(r + 1) for r in range(1, min(k, len(test_items)) + 1))
    return precision, recall, hr, dcg / idcg


@dataclass
class EvalReport:
    ks: Tuple[int, ...]
    metrics: Dict[str, Dict[int, float]]
    n_users: int
    silhouette: Optional[float] = None
    extras: Dict[str, float] = field(default_factory=dict)

    def to_tsv(self) -> str:
        lines = ["k\t" + "\t".join(METRIC_NAMES)]
        for k in self.ks:
            row = [str(k)] + [fmt_fixed6(self.metrics[m][k]) for m in METRIC_NAMES]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"

    def to_keyvalues(self) -> str:
        lines = []
        for m in METRIC_NAMES:
            for k in self.ks:
                lines.append(f"{m}.{k} = {fmt_fixed6(self.metrics[m][k])}")
        lines.append(f"users = {self.n_users}")
        if self.silhouette is not None:
            lines.append(f"silhouette = {fmt_fixed6(self.silhouette)}")
        for key in sorted(self.extras):
            lines.append(f"{key} = {fmt_fixed6(self.extras[key])}")
        return "\n".join(lines) + "\n"


def evaluate(model, dataset, split, ks: Tuple[int, ...] = (10, 20),
             part: str = "test", graph=None) -> EvalReport:
    """Average the per-user metrics over every user with held-out items."""
    if part not in ("val", "test"):
        raise ValueError(f"part must be val or test, got {part!r}")
    ks = tuple(int(k) for k in ks)
    features = dataset.feature_matrix()
    u_reps, i_reps = model.final_representations(features, graph=graph)
    fold = getattr(split, part)
    totals = {m: {k: 0.0 for k in ks} for m in METRIC_NAMES}
    n_users = 0
    all_items = np.arange(dataset.n_items)
    for user in range(split.n_users):
        test_items = fold[user]
        if len(test_items) == 0:
            continue
        scores = i_reps @ u_reps[user]
        mask = np.ones(dataset.n_items, dtype=bool)
        mask[split.train[user]] = False
        ranked = _ordered(scores, all_items[mask])
        for k in ks:
            p, r, h, n = metrics_at_k(ranked, test_items, k)
            totals["precision"][k] += p
            totals["recall"][k] += r
            totals["hr"][k] += h
            totals["ndcg"][k] += n
        n_users += 1
    if n_users == 0:
        metrics = {m: {k: 0.0 for k in ks} for m in METRIC_NAMES}
    else:
        metrics = {m: {k: totals[m][k] / n_users for k in ks} for m in METRIC_NAMES}
    return EvalReport(ks=ks, metrics=metrics, n_users=n_users)


def silhouette(points: np.ndarray, labels) -> float:
    """Mean silhouette coefficient under Euclidean distance.

    Per point, a = mean distance to its own cluster (0 for singletons, and
    such points score 0), b = smallest mean distance to another cluster;
    s = (b - a) / max(a, b) with the 0/0 case scored 0.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or points.shape[0] != labels.shape[0]:
        raise ValueError("points must be (n, d) with one label per row")
    unique = np.unique(labels)
    if unique.size < 2:
        raise ValueError("silhouette needs at least two groups")
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    scores = np.zeros(points.shape[0])
    for idx in range(points.shape[0]):
        own = labels == labels[idx]
        n_own = int(own.sum())
        if n_own <= 1:
            continue  # singleton cluster scores 0
        a = dist[idx][own].sum() / (n_own - 1)
        b = min(dist[idx][labels == other].mean()
                for other in unique if other != labels[idx])
        denom = max(a, b)
        scores[idx] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())
