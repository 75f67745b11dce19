"""Full-catalogue top-k ranking metrics with normal-approximation CIs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

METRIC_IDS = ("ndcg@10", "hr@10")


@dataclass
class MetricReport:
    metric: str
    mean: float
    ci95_halfwidth: float
    per_user: Optional[np.ndarray] = None

    def __str__(self):
        return f"{self.metric}={self.mean:.4f}±{self.ci95_halfwidth:.4f}"


def rank_items_for_user(user_row, item_matrix, exclude=()) -> np.ndarray:
    """Non-excluded items by descending dot-product score, ties to lower index."""
    scores = np.asarray(item_matrix) @ np.asarray(user_row)
    keep = np.ones(len(scores), dtype=bool)
    keep[np.asarray(list(exclude), dtype=np.int64)] = False
    cand = np.flatnonzero(keep)
    return cand[np.argsort(-scores[cand], kind="stable")]


def ndcg_at_k(ranked, relevant, k: int = 10) -> float:
    """Binary-relevance NDCG@k; the ideal DCG fills ``min(|relevant|, k)`` slots."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    dcg = sum(1.0 / math.log2(rank + 2) for rank, item in enumerate(list(ranked)[:k]) if item in relevant)
    idcg = sum(1.0 / math.log2(rank + 2) for rank in range(min(len(relevant), k)))
    return dcg / idcg


def hr_at_k(ranked, relevant, k: int = 10) -> float:
    """1.0 if any relevant item is in the top ``k``, else 0.0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    return 1.0 if any(item in relevant for item in list(ranked)[:k]) else 0.0


def aggregate_metric(per_user, metric: str = "") -> MetricReport:
    """Mean and ``1.96 * s / sqrt(N)`` halfwidth (``s`` the sample std)."""
    x = np.asarray(per_user, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("confidence interval needs at least 2 users")
    half = 1.96 * x.std(ddof=1) / math.sqrt(len(x))
    return MetricReport(metric, float(x.mean()), float(half), x)


def topk_batch(user_matrix: np.ndarray, item_matrix: np.ndarray, exclude: Sequence, k: int) -> np.ndarray:
    """Top-``k`` item indices per user (``-1`` pads when too few candidates).

    Same ordering rule as :func:`rank_items_for_user`, vectorised.
    """
    scores = user_matrix @ item_matrix.T
    for u, ex in enumerate(exclude):
        if len(ex):
            scores[u, ex] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(scores, order, axis=1)
    return np.where(np.isneginf(top), -1, order)


def _dcg_discounts(k):
    return 1.0 / np.log2(np.arange(2, k + 2))


def score_topk(top: np.ndarray, relevant: Sequence, k: int):
    """Per-user NDCG@k and HR@k from precomputed top-k lists.

    Users with no relevant items are skipped; returns ``(users, ndcg, hr)``.
    """
    disc = _dcg_discounts(k)
    users, ndcg, hr = [], [], []
    for u, rel in enumerate(relevant):
        if not len(rel):
            continue
        hits = np.isin(top[u, :k], rel)
        dcg = float(disc[: len(hits)][hits].sum())
        idcg = float(disc[: min(len(rel), k)].sum())
        users.append(u)
        ndcg.append(dcg / idcg)
        hr.append(1.0 if hits.any() else 0.0)
    return np.array(users, dtype=np.int64), np.array(ndcg), np.array(hr)


def evaluate(user_matrix, item_matrix, exclude, relevant, k: int = 10) -> dict[str, MetricReport]:
    top = topk_batch(user_matrix, item_matrix, exclude, k)
    _, ndcg, hr = score_topk(top, relevant, k)
    return {
        f"ndcg@{k}": aggregate_metric(ndcg, f"ndcg@{k}"),
        f"hr@{k}": aggregate_metric(hr, f"hr@{k}"),
    }
