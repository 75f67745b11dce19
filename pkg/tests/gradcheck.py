"""Finite-difference gradient checking for the BPR loss on tiny subgraphs."""
import numpy as np

from fedgraph.graph import LocalSubgraph
from fedgraph.lightgcn import LocalModelState, bpr_loss_and_grad


def tiny_subgraph(edges, n_users, n_items):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return LocalSubgraph(0, np.arange(n_users), np.arange(n_items), edges)


def random_state(rng, nu, ni, k, n_layers=2):
    return LocalModelState(rng.normal(0, 0.5, (nu, k)), rng.normal(0, 0.5, (ni, k)), n_layers)


def central_fd(state, sub, batch, reg, h=1e-6):
    def f():
        return bpr_loss_and_grad(state, sub, batch, reg)[0]

    grads = []
    for arr in (state.user_emb, state.item_emb):
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = f()
            arr[idx] = old - h
            down = f()
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def random_instance(seed):
    rng = np.random.default_rng(seed)
    nu, ni = rng.integers(1, 6), rng.integers(2, 6)
    pairs = [(u, i) for u in range(nu) for i in range(ni)]
    take = rng.choice(len(pairs), size=rng.integers(1, len(pairs)), replace=False)
    edges = sorted(pairs[t] for t in take)
    sub = tiny_subgraph(edges, nu, ni)
    pos = {}
    for u, i in edges:
        pos.setdefault(u, []).append(i)
    batch = []
    for _ in range(rng.integers(1, 6)):
        u, p = edges[rng.integers(len(edges))]
        free = [i for i in range(ni) if i not in pos[u]] or list(range(ni))
        batch.append((u, p, free[rng.integers(len(free))]))
    state = random_state(rng, nu, ni, int(rng.integers(1, 4)), int(rng.integers(0, 4)))
    return state, sub, batch, float(rng.choice([0.0, 1e-2, 0.3]))
