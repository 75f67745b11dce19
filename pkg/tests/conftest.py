from pathlib import Path

import numpy as np
import pytest

from fedgraph.data import InteractionDataset, RawInteraction, filter_and_split, load_dataset
from fedgraph.lightgcn import ClientUpdate

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k" / "u.data"

needs_ml100k = pytest.mark.skipif(
    not ML100K.exists(), reason="run scripts/fetch_ml100k.py to fetch MovieLens-100k"
)


def make_update(client, users, user_rows, items=(), item_rows=None, item_counts=None, n_edges=1):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    user_rows = np.asarray(user_rows, dtype=np.float64).reshape(len(users), -1)
    if item_rows is None:
        item_rows = np.zeros((len(items), user_rows.shape[1]))
    if item_counts is None:
        item_counts = np.ones(len(items), dtype=np.int64)
    return ClientUpdate(client, users, user_rows, items,
                        np.asarray(item_rows, dtype=np.float64).reshape(len(items), user_rows.shape[1]),
                        np.asarray(item_counts), n_edges)


def toy_raw(n_users=6, n_items=8, per_user=5, seed=0):
    rng = np.random.default_rng(seed)
    raw = []
    for u in range(n_users):
        for i in rng.choice(n_items, size=per_user, replace=False):
            raw.append(RawInteraction(str(u + 1), str(i + 1), float(rng.integers(1, 6))))
    return raw


@pytest.fixture
def toy_dataset() -> InteractionDataset:
    return filter_and_split(toy_raw(), rating_threshold=0, min_interactions=1, seed=1)


@pytest.fixture(scope="session")
def ml100k_raw():
    if not ML100K.exists():
        pytest.skip("MovieLens-100k not fetched")
    return load_dataset(ML100K, "movielens-tab")


@pytest.fixture(scope="session")
def ml100k(ml100k_raw):
    return filter_and_split(ml100k_raw, 3.0, 15, (0.7, 0.1, 0.2), 42)


def random_round(seed, max_users=4, max_items=4, max_dim=3, dup_prob=0.2):
    """A small random aggregation round: (updates, prev_users, prev_items, selected).

    Clients are anchor users; each selected client holds itself plus a random
    subset of the other users, and a random subset of items with edge counts.
    Some previous rows are duplicated so zero distances show up.
    """
    rng = np.random.default_rng(seed)
    n_users = int(rng.integers(1, max_users + 1))
    n_items = int(rng.integers(1, max_items + 1))
    dim = int(rng.integers(1, max_dim + 1))
    prev_u = rng.normal(size=(n_users, dim))
    if n_users > 1 and rng.random() < dup_prob:
        prev_u[1] = prev_u[0]
    prev_i = rng.normal(size=(n_items, dim))
    n_sel = int(rng.integers(1, n_users + 1))
    selected = sorted(rng.choice(n_users, size=n_sel, replace=False).tolist())
    updates = []
    for c in selected:
        others = [u for u in range(n_users) if u != c and rng.random() < 0.6]
        users = [c] + others
        items = sorted(u for u in range(n_items) if rng.random() < 0.7)
        updates.append(make_update(
            c, users, rng.normal(size=(len(users), dim)), items,
            rng.normal(size=(len(items), dim)), rng.integers(1, 5, size=len(items)),
            n_edges=int(rng.integers(1, 20)),
        ))
    return updates, prev_u, prev_i, selected
