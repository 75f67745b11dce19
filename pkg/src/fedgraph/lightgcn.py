"""Client-side LightGCN propagation and BPR training on a local subgraph.

Parameters are the layer-0 embeddings. Propagation is linear, so the
backward pass through it is the same symmetric operator applied to the
gradient of the layer-averaged output.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import LocalSubgraph


@dataclass
class LocalHyperParams:
    epochs: int = 5
    batch_size: int = 1024
    # the loss is a batch mean, so the step size is large
    lr: float = 20.0
    reg: float = 1e-4
    n_layers: int = 2
    momentum: float = 0.0


@dataclass
class LocalModelState:
    """Row ``k`` of ``user_emb`` belongs to ``sub.users[k]``; same for items."""

    user_emb: np.ndarray
    item_emb: np.ndarray
    n_layers: int = 2
    user_velocity: Optional[np.ndarray] = None
    item_velocity: Optional[np.ndarray] = None


@dataclass
class ClientUpdate:
    client: int
    users: np.ndarray
    user_rows: np.ndarray
    items: np.ndarray
    item_rows: np.ndarray
    item_edge_counts: np.ndarray
    train_edge_count: int
    losses: list = field(default_factory=list)

    def user_row(self, user: int) -> np.ndarray:
        hit = np.flatnonzero(self.users == user)
        if not len(hit):
            raise KeyError(user)
        return self.user_rows[hit[0]]


def normalized_adjacency(sub: LocalSubgraph) -> sp.csr_matrix:
    """Symmetric ``D^-1/2 A D^-1/2`` over the stacked ``[users; items]`` nodes."""
    nu, ni = sub.n_users, sub.n_items
    le = sub.local_edges
    r = sp.csr_matrix((np.ones(len(le)), (le[:, 0], le[:, 1])), shape=(nu, ni))
    a = sp.bmat([[None, r], [r.T, None]], format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = deg[nz] ** -0.5
    d = sp.diags(inv_sqrt)
    return (d @ a @ d).tocsr()


def _propagate(adj: sp.csr_matrix, x: np.ndarray, n_layers: int) -> np.ndarray:
    # isolated nodes keep their layer-0 embedding in every layer
    isolated = np.diff(adj.indptr) == 0
    total = x.copy()
    layer = x
    for _ in range(n_layers):
        layer = adj @ layer
        if isolated.any():
            layer[isolated] = x[isolated]
        total += layer
    return total / (n_layers + 1)


def _scatter(rows: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """Sum ``values`` into an ``(n, K)`` array at ``rows`` (repeats accumulate)."""
    sel = sp.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(n, len(rows)))
    return sel @ values


def lightgcn_propagate(state: LocalModelState, sub: LocalSubgraph, adj=None):
    """Return the layer-averaged ``(user_final, item_final)`` embeddings."""
    if adj is None:
        adj = normalized_adjacency(sub)
    x = np.vstack([state.user_emb, state.item_emb])
    out = _propagate(adj, x, state.n_layers)
    nu = state.user_emb.shape[0]
    return out[:nu], out[nu:]


def bpr_loss_and_grad(state: LocalModelState, sub: LocalSubgraph, batch, reg: float, adj=None):
    """Mean BPR loss over ``batch`` plus L2 on the batch's layer-0 rows.

    ``batch`` rows are ``(user_pos, pos_item_pos, neg_item_pos)`` given as
    positions into ``sub.users`` / ``sub.items``. Returns
    ``(loss, grad_user_emb, grad_item_emb)``.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    nu = state.user_emb.shape[0]
    if len(batch) == 0:
        return 0.0, np.zeros_like(state.user_emb), np.zeros_like(state.item_emb)
    if adj is None:
        adj = normalized_adjacency(sub)

    x = np.vstack([state.user_emb, state.item_emb])
    final = _propagate(adj, x, state.n_layers)
    u, p, n = batch[:, 0], batch[:, 1] + nu, batch[:, 2] + nu
    fu, fp, fn = final[u], final[p], final[n]
    gap = np.einsum("ij,ij->i", fu, fp - fn)
    b = len(batch)

    bpr = np.logaddexp(0.0, -gap).mean()
    x0u, x0p, x0n = x[u], x[p], x[n]
    l2 = 0.5 * (np.sum(x0u ** 2) + np.sum(x0p ** 2) + np.sum(x0n ** 2)) / b
    loss = float(bpr + reg * l2)

    # d/dgap of softplus(-gap) = -sigmoid(-gap)
    coef = (-0.5 * (1.0 - np.tanh(gap / 2.0)) / b)[:, None]
    rows = np.concatenate([u, p, n])
    g_final = _scatter(rows, np.vstack([coef * (fp - fn), coef * fu, -coef * fu]), len(x))

    # the layer operator (adj plus identity on isolated nodes) is symmetric
    grad = _propagate(adj, g_final, state.n_layers)
    grad += _scatter(rows, (reg / b) * np.vstack([x0u, x0p, x0n]), len(x))
    return loss, grad[:nu], grad[nu:]


def bpr_step(state: LocalModelState, sub: LocalSubgraph, batch, lr: float, reg: float,
             momentum: float = 0.0, adj=None):
    """One SGD (optionally momentum) step in place; returns ``(state, loss)``."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if len(batch) == 0:
        return state, 0.0
    loss, gu, gi = bpr_loss_and_grad(state, sub, batch, reg, adj)
    if momentum:
        if state.user_velocity is None:
            state.user_velocity = np.zeros_like(state.user_emb)
            state.item_velocity = np.zeros_like(state.item_emb)
        state.user_velocity *= momentum
        state.user_velocity += gu
        state.item_velocity *= momentum
        state.item_velocity += gi
        gu, gi = state.user_velocity, state.item_velocity
    state.user_emb -= lr * gu
    state.item_emb -= lr * gi
    return state, loss


def sample_negatives(rng: np.random.Generator, users: np.ndarray, positives: np.ndarray,
                     n_items: int, max_tries: int = 50) -> np.ndarray:
    """Uniform local items that ``users`` have no train edge to.

    ``positives`` is a boolean ``(n_local_users, n_local_items)`` mask.
    Users whose every local item is positive get an unrestricted draw.
    """
    neg = rng.integers(0, n_items, size=len(users))
    full = positives[users].all(axis=1)
    for _ in range(max_tries):
        bad = positives[users, neg] & ~full
        if not bad.any():
            return neg
        neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    # rare: fall back to an exact draw from the complement
    for k in np.flatnonzero(positives[users, neg] & ~full):
        choices = np.flatnonzero(~positives[users[k]])
        neg[k] = choices[rng.integers(len(choices))]
    return neg


def client_update(global_user: np.ndarray, global_item: np.ndarray, sub: LocalSubgraph,
                  hp: LocalHyperParams, rnd: int = 0, seed: int = 42) -> ClientUpdate:
    """Train the client's rows for ``hp.epochs`` BPR epochs; globals stay untouched.

    Negative sampling and batch order come from a generator seeded with
    ``(seed, rnd, sub.anchor)``.
    """
    state = LocalModelState(
        user_emb=global_user[sub.users].copy(),
        item_emb=global_item[sub.items].copy(),
        n_layers=hp.n_layers,
    )
    le = sub.local_edges
    item_counts = np.bincount(le[:, 1], minlength=sub.n_items) if len(le) else np.zeros(sub.n_items, np.int64)
    losses = []
    if len(le) and hp.epochs > 0:
        adj = normalized_adjacency(sub)
        positives = np.zeros((sub.n_users, sub.n_items), dtype=bool)
        positives[le[:, 0], le[:, 1]] = True
        rng = np.random.default_rng([seed, rnd, sub.anchor])
        for _ in range(hp.epochs):
            order = rng.permutation(len(le))
            total = 0.0
            for start in range(0, len(le), hp.batch_size):
                idx = order[start:start + hp.batch_size]
                u, pos = le[idx, 0], le[idx, 1]
                neg = sample_negatives(rng, u, positives, sub.n_items)
                _, loss = bpr_step(state, sub, np.stack([u, pos, neg], axis=1), hp.lr, hp.reg,
                                   hp.momentum, adj)
                total += loss * len(idx)
            losses.append(total / len(le))
    return ClientUpdate(
        client=sub.anchor,
        users=sub.users,
        user_rows=state.user_emb,
        items=sub.items,
        item_rows=state.item_emb,
        item_edge_counts=item_counts,
        train_edge_count=len(le),
        losses=losses,
    )
