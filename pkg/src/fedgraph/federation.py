"""Synchronous central-server loop: select clients, train locally, aggregate."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .aggregation import AggregationConfig, aggregate_items, aggregate_users, alpha_schedule
from .data import InteractionDataset, TEST, TRAIN, VALID
from .graph import LocalSubgraph, build_global_graph, build_subgraphs, membership
from .lightgcn import ClientUpdate, LocalHyperParams, _propagate, client_update, normalized_adjacency
from .metrics import MetricReport, evaluate

log = logging.getLogger(__name__)

EVAL_PROPAGATION = ("global", "none")


@dataclass
class RunConfig:
    rounds: int = 100
    clients_per_round: int = 20
    patience: int = 5
    seed: int = 42
    eval_every: int = 1
    eval_k: int = 10
    dim: int = 64
    init_std: float = 0.1
    max_neighbors: Optional[int] = 10
    edge_scope: str = "all-local"
    eval_propagation: str = "global"
    local: LocalHyperParams = field(default_factory=LocalHyperParams)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)

    def validate(self) -> None:
        for name in ("rounds", "patience", "clients_per_round", "eval_every", "eval_k", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}: must be >= 1")
        if self.init_std < 0:
            raise ValueError("init_std: must be >= 0")
        if self.max_neighbors is not None and self.max_neighbors < 0:
            raise ValueError("max_neighbors: must be >= 0 or null")
        if self.eval_propagation not in EVAL_PROPAGATION:
            raise ValueError(f"eval_propagation: expected one of {EVAL_PROPAGATION}")
        lp = self.local
        if lp.epochs < 0 or lp.batch_size < 1 or lp.n_layers < 0:
            raise ValueError("local: need epochs >= 0, batch_size >= 1, n_layers >= 0")
        if not lp.lr > 0 or lp.reg < 0 or not 0 <= lp.momentum < 1:
            raise ValueError("local: need lr > 0, reg >= 0, 0 <= momentum < 1")
        self.aggregation.validate()


@dataclass
class RoundState:
    r: int
    user_matrix: np.ndarray
    item_matrix: np.ndarray
    selected: tuple = ()
    alpha: Optional[float] = None
    mean_loss: Optional[float] = None
    metrics: dict = field(default_factory=dict)


def init_embeddings(n_users: int, n_items: int, dim: int, std: float, seed: int):
    rng = np.random.default_rng([seed, 0])
    return rng.normal(0.0, std, (n_users, dim)), rng.normal(0.0, std, (n_items, dim))


def select_clients(n: int, k: int, seed: int, r: int) -> tuple[int, ...]:
    """``min(k, n)`` distinct clients, uniform without replacement, sorted."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        return tuple(range(n))
    rng = np.random.default_rng([seed, r, 1])
    return tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FEDGRAPH_THREADS", "1")))
    except ValueError:
        return 1


def run_round(state: RoundState, subgraphs: Sequence[LocalSubgraph], cfg: RunConfig,
              members: Optional[dict] = None) -> RoundState:
    """One round of local training on the selected clients plus aggregation.

    Clients train against a read-only snapshot of the round ``r - 1``
    matrices; the input ``state`` is not modified.
    """
    r = state.r + 1
    by_anchor = {s.anchor: s for s in subgraphs}
    selected = select_clients(len(subgraphs), cfg.clients_per_round, cfg.seed, r)
    anchors = sorted(by_anchor)
    chosen = [by_anchor[anchors[c]] for c in selected]
    selected = tuple(s.anchor for s in chosen)

    prev_u, prev_v = state.user_matrix, state.item_matrix
    prev_u.flags.writeable = False
    prev_v.flags.writeable = False
    try:
        def train(sub):
            return client_update(prev_u, prev_v, sub, cfg.local, rnd=r, seed=cfg.seed)

        n_threads = min(_threads(), len(chosen))
        if n_threads > 1:
            with ThreadPoolExecutor(n_threads) as pool:
                updates: list[ClientUpdate] = list(pool.map(train, chosen))
        else:
            updates = [train(s) for s in chosen]

        agg = cfg.aggregation
        alpha = alpha_schedule(agg, r) if agg.user_strategy == "dist-fedavg" else None
        new_u = aggregate_users(updates, prev_u, agg, selected=selected, r=r,
                                membership=members)
        new_v = aggregate_items(updates, prev_v, agg.item_strategy, agg.temperature)
    finally:
        prev_u.flags.writeable = True
        prev_v.flags.writeable = True

    last = [u.losses[-1] for u in updates if u.losses]
    return RoundState(r, new_u, new_v, selected, alpha, float(np.mean(last)) if last else None)


class Evaluator:
    """Validation and test ranking over the full item catalogue.

    Validation excludes each user's train items; test excludes train and
    validation items.
    """

    def __init__(self, ds: InteractionDataset, k: int = 10, propagation: str = "global",
                 n_layers: int = 2):
        self.k = k
        train = ds.user_items(TRAIN)
        valid = ds.user_items(VALID)
        self.exclude = {"valid": train,
                        "test": [np.union1d(a, b) for a, b in zip(train, valid)]}
        self.relevant = {"valid": valid, "test": ds.user_items(TEST)}
        self.n_layers = n_layers
        self.adj = None
        if propagation == "global":
            g = LocalSubgraph(-1, np.arange(ds.n_users), np.arange(ds.n_items), ds.train)
            self.adj = normalized_adjacency(g)

    def embed(self, user_matrix, item_matrix):
        if self.adj is None:
            return user_matrix, item_matrix
        out = _propagate(self.adj, np.vstack([user_matrix, item_matrix]), self.n_layers)
        return out[:len(user_matrix)], out[len(user_matrix):]

    def __call__(self, user_matrix, item_matrix, split: str = "valid") -> dict[str, MetricReport]:
        fu, fv = self.embed(user_matrix, item_matrix)
        return evaluate(fu, fv, self.exclude[split], self.relevant[split], self.k)


@dataclass
class RunReport:
    rounds: list
    best_round: int
    valid: dict
    test: dict
    user_matrix: np.ndarray
    item_matrix: np.ndarray
    stopped_early: bool = False


def run_experiment(ds: InteractionDataset, cfg: RunConfig,
                   on_round: Optional[Callable[[dict], None]] = None,
                   subgraphs: Optional[Sequence[LocalSubgraph]] = None) -> RunReport:
    """Train for up to ``cfg.rounds`` rounds with early stopping on valid NDCG.

    Test metrics are computed on the matrices of the best validation round.
    ``on_round`` receives one plain-dict record per round.
    """
    cfg.validate()
    if subgraphs is None:
        g = build_global_graph(ds)
        subgraphs = build_subgraphs(g, cfg.max_neighbors, cfg.edge_scope)
    members = membership(subgraphs)
    evaluator = Evaluator(ds, cfg.eval_k, cfg.eval_propagation, cfg.local.n_layers)
    key = f"ndcg@{cfg.eval_k}"

    u0, v0 = init_embeddings(ds.n_users, ds.n_items, cfg.dim, cfg.init_std, cfg.seed)
    state = RoundState(0, u0, v0)
    best = (-np.inf, 0, u0, v0, {})
    since_best = 0
    records = []
    stopped = False
    for r in range(1, cfg.rounds + 1):
        state = run_round(state, subgraphs, cfg, members)
        if not (np.isfinite(state.user_matrix).all() and np.isfinite(state.item_matrix).all()):
            raise FloatingPointError(f"non-finite embeddings after round {r}")
        rec = {"round": r, "alpha": state.alpha, "selected": list(state.selected),
               "mean_loss": state.mean_loss}
        if r % cfg.eval_every == 0 or r == cfg.rounds:
            state.metrics = evaluator(state.user_matrix, state.item_matrix, "valid")
            for name, rep in state.metrics.items():
                rec[f"valid_{name}"] = rep.mean
            score = state.metrics[key].mean
            if score > best[0]:
                best = (score, r, state.user_matrix.copy(), state.item_matrix.copy(), state.metrics)
                since_best = 0
            else:
                since_best += 1
            log.info("round %d valid %s", r, " ".join(str(m) for m in state.metrics.values()))
        records.append(rec)
        if on_round is not None:
            on_round(rec)
        if since_best >= cfg.patience:
            stopped = True
            break

    _, best_r, bu, bv, bvalid = best
    test = evaluator(bu, bv, "test")
    return RunReport(records, best_r, bvalid, test, bu, bv, stopped)


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Copy of ``cfg`` with top-level or ``aggregation.*``/``local.*`` fields replaced."""
    top, agg, loc = {}, {}, {}
    for k, v in changes.items():
        if k.startswith("aggregation."):
            agg[k.split(".", 1)[1]] = v
        elif k.startswith("local."):
            loc[k.split(".", 1)[1]] = v
        else:
            top[k] = v
    return replace(cfg, aggregation=replace(cfg.aggregation, **agg),
                   local=replace(cfg.local, **loc), **top)
