"""Server-side aggregation of user and item embeddings.

Every strategy takes the list of :class:`~fedgraph.lightgcn.ClientUpdate`
objects from one round plus the previous global matrix and returns a new
matrix. Rows nobody contributed to are carried forward unchanged.

Contributions are put in ``(row, client)`` order before any reduction, so
the result does not depend on the order of ``updates``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

USER_STRATEGIES = ("dist-fedavg", "fedavg", "simpleavg", "fedmedian", "fedatt")
ITEM_STRATEGIES = ("fedavg", "simpleavg", "fedmedian", "fedatt")
ALPHA_MODES = ("fixed", "arithmetic", "geometric")


@dataclass
class AggregationConfig:
    user_strategy: str = "dist-fedavg"
    item_strategy: str = "fedavg"
    p: float = 2.0
    alpha_mode: str = "fixed"
    alpha: float = 0.5
    alpha0: float = 1.0
    alpha_T: float = 0.2
    gamma: float = 0.1
    z: int = 10
    warmup_rounds: int = 0
    eps: float = 1e-8
    temperature: float = 1.0

    def validate(self) -> None:
        if self.user_strategy not in USER_STRATEGIES:
            raise ValueError(f"user_strategy: unknown strategy {self.user_strategy!r}")
        if self.item_strategy not in ITEM_STRATEGIES:
            raise ValueError(f"item_strategy: unknown strategy {self.item_strategy!r}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode: expected one of {ALPHA_MODES}, got {self.alpha_mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha: must lie in [0, 1]")
        if not 0.0 <= self.alpha_T <= self.alpha0 <= 1.0:
            raise ValueError("alpha_T, alpha0: need 0 <= alpha_T <= alpha0 <= 1")
        if self.p < 1:
            raise ValueError("p: must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma: must be >= 0")
        if self.z < 1:
            raise ValueError("z: must be >= 1")
        if self.warmup_rounds < 0:
            raise ValueError("warmup_rounds: must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps: must be > 0")
        if not self.temperature > 0:
            raise ValueError("temperature: must be > 0")


def minkowski_distance(a, b, p: float = 2.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(_minkowski_rows(a[None, :], b[None, :], p)[0])


def _minkowski_rows(a: np.ndarray, b: np.ndarray, p: float) -> np.ndarray:
    diff = np.abs(a - b)
    if p == 1:
        return diff.sum(axis=-1)
    if p == 2:
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))
    # scale by the largest gap so |d|^p cannot overflow for big p
    scale = diff.max(axis=-1, initial=0.0)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * ((diff / safe[:, None]) ** p).sum(axis=-1) ** (1.0 / p)


def pairwise_minkowski(x: np.ndarray, p: float = 2.0) -> np.ndarray:
    n = len(x)
    i, j = np.triu_indices(n, k=1)
    d = np.zeros((n, n))
    d[i, j] = _minkowski_rows(x[i], x[j], p)
    d[j, i] = d[i, j]
    return d


class WeightMatrix(NamedTuple):
    W: np.ndarray
    d: np.ndarray


def build_weights(prev_global: np.ndarray, membership: Mapping[int, Sequence[int]],
                  p: float = 2.0, eps: float = 1e-8) -> WeightMatrix:
    """Inverse-distance weights between users that share a client.

    ``W[i, j] = 1 / max(D[i, j], eps)`` when ``i != j`` and user ``j`` is in
    client ``i``'s expanded set, else 0; ``d`` holds the row sums.
    """
    n = len(prev_global)
    W = np.zeros((n, n))
    for i, users in membership.items():
        js = np.asarray([j for j in users if j != i], dtype=np.int64)
        if len(js):
            dist = _minkowski_rows(np.broadcast_to(prev_global[i], (len(js), prev_global.shape[1])),
                                   prev_global[js], p)
            W[i, js] = 1.0 / np.maximum(dist, eps)
    return WeightMatrix(W, W.sum(axis=1))


def alpha_schedule(cfg: AggregationConfig, r: int) -> float:
    """Anchor interpolation weight for round ``r`` (1-based)."""
    if r <= cfg.warmup_rounds:
        return 1.0
    if cfg.alpha_mode == "fixed":
        return cfg.alpha
    steps = r // cfg.z
    if cfg.alpha_mode == "arithmetic":
        return max(cfg.alpha_T, cfg.alpha0 - cfg.gamma * steps)
    if cfg.alpha_mode == "geometric":
        return max(cfg.alpha_T, cfg.alpha0 ** (cfg.gamma * steps))
    raise ValueError(f"unknown alpha_mode {cfg.alpha_mode!r}")


class Contributions(NamedTuple):
    """Flattened per-row contributions, sorted by (row, client)."""

    rows: np.ndarray      # target row index
    clients: np.ndarray   # contributing client (anchor) id
    values: np.ndarray    # (C, K) contributed vectors
    weights: np.ndarray   # FedAvg sample counts


def _collect(updates, kind: str, prev: np.ndarray) -> Contributions:
    n_rows, dim = prev.shape
    rows, clients, values, weights = [], [], [], []
    for up in updates:
        if kind == "user":
            idx, vals = up.users, up.user_rows
            w = np.full(len(idx), float(up.train_edge_count))
        else:
            idx, vals = up.items, up.item_rows
            w = np.asarray(up.item_edge_counts, dtype=np.float64)
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) and (idx.min() < 0 or idx.max() >= n_rows):
            raise IndexError(f"client {up.client} references unknown {kind} index")
        rows.append(idx)
        clients.append(np.full(len(idx), up.client, dtype=np.int64))
        values.append(np.asarray(vals, dtype=np.float64).reshape(len(idx), dim))
        weights.append(w)
    if not rows:
        return Contributions(np.empty(0, np.int64), np.empty(0, np.int64), None, np.empty(0))
    rows = np.concatenate(rows)
    clients = np.concatenate(clients)
    order = np.lexsort((clients, rows))
    return Contributions(rows[order], clients[order], np.concatenate(values)[order],
                         np.concatenate(weights)[order])


def _groups(rows: np.ndarray):
    """Yield ``(row, start, stop)`` for runs of equal values in sorted ``rows``."""
    if not len(rows):
        return
    cuts = np.flatnonzero(np.diff(rows)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [len(rows)]])
    for s, e in zip(starts.tolist(), stops.tolist()):
        yield int(rows[s]), s, e


def _weighted(vals: np.ndarray, w: np.ndarray) -> np.ndarray:
    # shifted by the first row so that identical rows average to themselves exactly
    w = w / w.sum()
    return vals[0] + w @ (vals - vals[0])


def _blend(anchor: np.ndarray, other: np.ndarray, a: float) -> np.ndarray:
    if a == 1.0:
        return anchor
    if a == 0.0:
        return other
    return other + a * (anchor - other)


def _reduce(c: Contributions, prev: np.ndarray, strategy: str, temperature: float) -> np.ndarray:
    out = np.array(prev, dtype=np.float64, copy=True)
    for row, s, e in _groups(c.rows):
        vals = c.values[s:e]
        if e - s == 1:
            out[row] = vals[0]
            continue
        if strategy == "fedavg":
            w = c.weights[s:e]
            out[row] = _weighted(vals, w if w.sum() > 0 else np.ones(len(vals)))
        elif strategy == "simpleavg":
            out[row] = _weighted(vals, np.ones(len(vals)))
        elif strategy == "fedmedian":
            out[row] = np.median(vals, axis=0)
        elif strategy == "fedatt":
            logits = -np.sqrt(((vals - prev[row]) ** 2).sum(axis=1)) / temperature
            w = np.exp(logits - logits.max())
            out[row] = _weighted(vals, w)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
    return out


def fedavg_user(updates, prev_global: np.ndarray) -> np.ndarray:
    """Per-row mean weighted by each client's local train-edge count."""
    return _reduce(_collect(updates, "user", prev_global), prev_global, "fedavg", 1.0)


def simple_avg_user(updates, prev_global: np.ndarray) -> np.ndarray:
    return _reduce(_collect(updates, "user", prev_global), prev_global, "simpleavg", 1.0)


def fed_median_user(updates, prev_global: np.ndarray) -> np.ndarray:
    """Coordinate-wise median; even counts take the midpoint of the middle pair."""
    return _reduce(_collect(updates, "user", prev_global), prev_global, "fedmedian", 1.0)


def fed_att_user(updates, prev_global: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax of ``-||row - prev_row|| / temperature`` over contributors."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    return _reduce(_collect(updates, "user", prev_global), prev_global, "fedatt", temperature)


def dist_fedavg_user(updates, prev_global: np.ndarray, membership: Optional[Mapping],
                     selected, r: int, cfg: AggregationConfig,
                     alpha: Optional[float] = None) -> np.ndarray:
    """Inverse-distance averaging of user replicas blended with the anchor's row.

    For user ``i`` the contributors are the selected clients ``j != i`` that
    hold a row for ``i``. Each gets weight ``1 / max(D_ij, eps)`` where
    ``D_ij`` is the Minkowski distance between users ``i`` and ``j`` in
    ``prev_global``; the weights are normalised over the contributors only.
    If client ``i`` itself was selected, its row is blended in with weight
    ``alpha``; otherwise the weighted mean is used as is.

    ``membership`` may be None: a client contributes to ``i`` exactly when
    ``i`` is in its update, whether or not ``j`` is in ``i``'s own expanded
    set. When given, every update's users must match its membership entry.
    """
    c = _collect(updates, "user", prev_global)
    a = alpha_schedule(cfg, r) if alpha is None else alpha
    selected = {int(s) for s in selected}
    for up in updates:
        if up.client not in selected:
            raise ValueError(f"update from client {up.client}, which was not selected")
        if membership is not None and set(np.asarray(up.users).tolist()) != set(
                np.asarray(membership[up.client]).tolist()):
            raise ValueError(f"update from client {up.client} does not match its expanded users")
    out = np.array(prev_global, dtype=np.float64, copy=True)
    for row, s, e in _groups(c.rows):
        clients = c.clients[s:e]
        vals = c.values[s:e]
        is_anchor = clients == row
        anchor_row = vals[is_anchor][0] if is_anchor.any() and row in selected else None
        others = ~is_anchor
        if others.any():
            js = clients[others]
            dist = _minkowski_rows(np.broadcast_to(prev_global[row], (len(js), prev_global.shape[1])),
                                   prev_global[js], cfg.p)
            w = 1.0 / np.maximum(dist, cfg.eps)
            blended = _weighted(vals[others], w)
            if anchor_row is not None:
                blended = _blend(anchor_row, blended, a)
            out[row] = blended
        elif anchor_row is not None:
            out[row] = anchor_row
    return out


def aggregate_users(updates, prev_global: np.ndarray, cfg: AggregationConfig,
                    selected=(), r: int = 1, membership=None) -> np.ndarray:
    s = cfg.user_strategy
    if s == "dist-fedavg":
        return dist_fedavg_user(updates, prev_global, membership, selected, r, cfg)
    if s == "fedatt":
        return fed_att_user(updates, prev_global, cfg.temperature)
    if s in ("fedavg", "simpleavg", "fedmedian"):
        return _reduce(_collect(updates, "user", prev_global), prev_global, s, 1.0)
    raise ValueError(f"unknown user strategy {s!r}")


def aggregate_items(updates, prev_global_items: np.ndarray, strategy: str = "fedavg",
                    temperature: float = 1.0) -> np.ndarray:
    """Item rows aggregated over the clients whose subgraph holds the item.

    FedAvg weights an item by the client's train-edge count for that item.
    """
    if strategy not in ITEM_STRATEGIES:
        raise ValueError(f"unknown item strategy {strategy!r}; expected one of {ITEM_STRATEGIES}")
    c = _collect(updates, "item", prev_global_items)
    return _reduce(c, prev_global_items, strategy, temperature)
