"""
A short federated run on MovieLens-100k
=======================================

Loads and splits the data, expands every user into a local subgraph,
then runs a few federated rounds and prints the validation curve.
Fetch the data first with ``python scripts/fetch_ml100k.py``.
"""

import sys
from pathlib import Path

from fedgraph.data import dataset_stats, filter_and_split, load_dataset
from fedgraph.federation import RunConfig, run_experiment
from fedgraph.graph import build_global_graph, build_subgraphs, expansion_symmetry_check

path = Path(sys.argv[1] if len(sys.argv) > 1 else "data/ml-100k/u.data")
raw = load_dataset(path, "movielens-tab")
print("raw:", dataset_stats(raw))

# keep ratings >= 3, users with >= 15 interactions, split 70/10/20 per user
ds = filter_and_split(raw, rating_threshold=3.0, min_interactions=15)
print("filtered:", dataset_stats(ds), "train/valid/test edges:", len(ds.train), len(ds.valid), len(ds.test))

# each client is one anchor user plus up to 10 users sharing the most items
cfg = RunConfig(rounds=10, patience=10)
subs = build_subgraphs(build_global_graph(ds), cfg.max_neighbors, cfg.edge_scope)
sizes = [len(s.users) for s in subs]
print(f"{len(subs)} clients, mean expanded users {sum(sizes) / len(sizes):.1f}")
print("one-way neighbour pairs after truncation:", len(expansion_symmetry_check(subs)))


def show(rec):
    print(f"round {rec['round']:3d}  loss {rec['mean_loss']:.4f}  valid ndcg@10 {rec['valid_ndcg@10']:.4f}")


report = run_experiment(ds, cfg, on_round=show, subgraphs=subs)
print("best round", report.best_round)
for rep in report.test.values():
    print("test", rep)
