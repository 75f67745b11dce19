"""
Tables from a sweep results file
================================

``fedgraph sweep`` writes one JSON line per cell. This script groups the
result records by user and item strategy and prints mean test NDCG@10
and HR@10 as a table, plus the user-by-item grid when several item
strategies are present. Usage::

    fedgraph sweep --config configs/heatmap.yaml --out results/heatmap.jsonl
    python demos/03_results_tables.py results/heatmap.jsonl
"""

import json
import sys
from collections import defaultdict

import numpy as np

records = [json.loads(line) for line in open(sys.argv[1])]
results = [r for r in records if r["type"] == "result"]

cells = defaultdict(list)
for r in results:
    cells[r["user_strategy"], r["item_strategy"]].append(r)

print(f"{'user':12s} {'item':10s} {'n':>2s} {'ndcg@10':>16s} {'hr@10':>16s}")
for (user, item), rs in cells.items():
    nd = np.mean([r["test_ndcg"] for r in rs])
    hr = np.mean([r["test_hr"] for r in rs])
    ci_nd = np.mean([r["test_ndcg_ci"] for r in rs])
    ci_hr = np.mean([r["test_hr_ci"] for r in rs])
    print(f"{user:12s} {item:10s} {len(rs):2d} {nd:8.4f}±{ci_nd:.4f} {hr:8.4f}±{ci_hr:.4f}")

users = list(dict.fromkeys(u for u, _ in cells))
items = list(dict.fromkeys(i for _, i in cells))
if len(items) > 1:
    # rows: user aggregator, columns: item aggregator
    grid = np.full((len(users), len(items)), np.nan)
    for (u, i), rs in cells.items():
        grid[users.index(u), items.index(i)] = np.mean([r["test_ndcg"] for r in rs])
    print("\nNDCG@10 grid")
    print(" " * 12 + "".join(f"{i:>11s}" for i in items))
    for u, row in zip(users, grid):
        print(f"{u:12s}" + "".join(f"{v:11.4f}" for v in row))
