"""Global user-item graph and per-client anchored subgraphs.

Expansion stands in for the trusted third party that matches users on
shared interactions; matching here is done in plaintext.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .data import InteractionDataset

EDGE_SCOPES = ("anchor-only", "all-local")


@dataclass(frozen=True, eq=False)
class GlobalGraph:
    """Train-edge adjacency in both directions (sorted index arrays)."""

    n_users: int
    n_items: int
    user_items: tuple
    item_users: tuple

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        rows = np.repeat(np.arange(self.n_users), [len(a) for a in self.user_items])
        cols = np.concatenate(self.user_items) if self.n_users else np.empty(0, np.int64)
        data = np.ones(len(rows), dtype=np.int64)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_users, self.n_items))

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.user_items)


def build_global_graph(ds: InteractionDataset) -> GlobalGraph:
    if ds.n_users == 0:
        raise ValueError("dataset is empty")
    return graph_from_edges(ds.train, ds.n_users, ds.n_items)


def graph_from_edges(edges, n_users: int, n_items: int) -> GlobalGraph:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    by_user = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    by_item = edges[np.lexsort((edges[:, 0], edges[:, 1]))]
    ub = np.searchsorted(by_user[:, 0], np.arange(n_users + 1))
    ib = np.searchsorted(by_item[:, 1], np.arange(n_items + 1))
    user_items = tuple(by_user[ub[u]:ub[u + 1], 1].copy() for u in range(n_users))
    item_users = tuple(by_item[ib[i]:ib[i + 1], 0].copy() for i in range(n_items))
    return GlobalGraph(n_users, n_items, user_items, item_users)


@dataclass(frozen=True, eq=False)
class LocalSubgraph:
    """One client's graph: the anchor, its expanded users, items and edges.

    ``users[0]`` is always the anchor. ``edges`` holds global
    ``(user, item)`` indices; ``local_edges`` the same edges as positions
    into ``users`` / ``items``.
    """

    anchor: int
    users: np.ndarray
    items: np.ndarray
    edges: np.ndarray

    @cached_property
    def local_edges(self) -> np.ndarray:
        if len(self.edges) == 0:
            return np.empty((0, 2), dtype=np.int64)
        upos = np.searchsorted(self._sorted_users, self.edges[:, 0])
        ipos = np.searchsorted(self.items, self.edges[:, 1])
        return np.stack([self._user_order[upos], ipos], axis=1)

    @cached_property
    def _user_order(self) -> np.ndarray:
        return np.argsort(self.users, kind="stable")

    @cached_property
    def _sorted_users(self) -> np.ndarray:
        return self.users[self._user_order]

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def __contains__(self, user) -> bool:
        pos = np.searchsorted(self._sorted_users, user)
        return pos < len(self.users) and self._sorted_users[pos] == user


def co_interaction_counts(g: GlobalGraph, anchor: int) -> np.ndarray:
    """Number of train items each user shares with ``anchor`` (anchor zeroed)."""
    counts = np.zeros(g.n_users, dtype=np.int64)
    items = g.user_items[anchor]
    if len(items):
        np.add.at(counts, np.concatenate([g.item_users[i] for i in items]), 1)
    counts[anchor] = 0
    return counts


def expand_user(
    g: GlobalGraph,
    anchor: int,
    max_neighbors: Optional[int] = 32,
    edge_scope: str = "all-local",
) -> LocalSubgraph:
    """Anchor plus its top co-interacting users, with their local edges.

    Neighbours are ranked by shared-item count (ties to the lower user
    index); ``max_neighbors=None`` keeps every co-interacting user.
    ``edge_scope="anchor-only"`` restricts items to the anchor's own items,
    ``"all-local"`` takes the union of every expanded user's items.
    """
    if not 0 <= anchor < g.n_users:
        raise IndexError(f"anchor {anchor} out of range")
    if max_neighbors is not None and max_neighbors < 0:
        raise ValueError("max_neighbors must be >= 0")
    if edge_scope not in EDGE_SCOPES:
        raise ValueError(f"unknown edge_scope {edge_scope!r}")

    counts = co_interaction_counts(g, anchor)
    cand = np.flatnonzero(counts)
    cand = cand[np.lexsort((cand, -counts[cand]))]
    if max_neighbors is not None:
        cand = cand[:max_neighbors]
    users = np.concatenate([[anchor], cand]).astype(np.int64)

    if edge_scope == "anchor-only":
        items = g.user_items[anchor]
    else:
        items = np.unique(np.concatenate([g.user_items[u] for u in users]))
    edges = []
    for u in np.sort(users):
        ui = g.user_items[u]
        if edge_scope == "anchor-only":
            ui = ui[np.isin(ui, items, assume_unique=True)]
        edges.append(np.stack([np.full(len(ui), u), ui], axis=1))
    edges = np.concatenate(edges).astype(np.int64) if edges else np.empty((0, 2), np.int64)
    return LocalSubgraph(int(anchor), users, np.asarray(items, dtype=np.int64), edges)


def build_subgraphs(g: GlobalGraph, max_neighbors: Optional[int] = 32,
                    edge_scope: str = "all-local") -> list[LocalSubgraph]:
    return [expand_user(g, u, max_neighbors, edge_scope) for u in range(g.n_users)]


def expansion_symmetry_check(subgraphs: Iterable[LocalSubgraph]) -> list[tuple[int, int]]:
    """Pairs ``(i, j)`` with user j expanded into client i but not i into j.

    Only clients present in ``subgraphs`` are compared.
    """
    members = {s.anchor: set(s.users.tolist()) for s in subgraphs}
    out = []
    for i in sorted(members):
        for j in sorted(members[i]):
            if j != i and j in members and i not in members[j]:
                out.append((i, j))
    return out


def membership(subgraphs: Sequence[LocalSubgraph]) -> dict[int, np.ndarray]:
    return {s.anchor: s.users for s in subgraphs}


def dump_subgraphs(subgraphs: Iterable[LocalSubgraph], path) -> None:
    with open(path, "w") as fh:
        for s in subgraphs:
            users = ",".join(str(u) for u in s.users.tolist())
            fh.write(f"{s.anchor} | {users} | {len(s.edges)}\n")
