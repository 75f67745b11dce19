"""
Distance-weighted user aggregation on a three-user toy
=======================================================

User 0 did not train this round, but clients 1 and 2 both hold a copy of
user 0 in their expanded subgraphs. The server averages those two copies,
weighting each by the inverse distance between user 0 and the client's
anchor user in the previous round's embedding space.
"""

import numpy as np

from fedgraph.aggregation import AggregationConfig, alpha_schedule, build_weights, dist_fedavg_user
from fedgraph.lightgcn import ClientUpdate

# previous-round embeddings: user 1 sits at distance 1 from user 0, user 2 at distance 3
prev = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
W = build_weights(prev, {0: [0, 1, 2]}, p=2.0)
print("inverse-distance weights for user 0:", W.W[0], "normaliser:", W.d[0])


def update(client, users, rows):
    """A client update carrying user rows only."""
    return ClientUpdate(client, np.array(users), np.array(rows, dtype=float),
                        np.empty(0, dtype=np.int64), np.empty((0, 2)), np.empty(0, dtype=np.int64), 1)


# client 1 sends (1, 1) for user 0, client 2 sends (5, 5)
updates = [update(1, [1, 0], [[9, 9], [1, 1]]), update(2, [2, 0], [[9, 9], [5, 5]])]
out = dist_fedavg_user(updates, prev, None, selected=[1, 2], r=1, cfg=AggregationConfig())
print("aggregated row for user 0:", out[0])  # 0.75 * (1, 1) + 0.25 * (5, 5)

# when user 0 is selected too, its own row is blended in with weight alpha
updates.append(update(0, [0], [[0, 0]]))
for a in (1.0, 0.5, 0.0):
    out = dist_fedavg_user(updates, prev, None, [0, 1, 2], 1, AggregationConfig(alpha=a))
    print(f"alpha={a}: user 0 ->", out[0])

# alpha can also decay over rounds, arithmetically or geometrically
arith = AggregationConfig(alpha_mode="arithmetic", alpha0=1.0, gamma=0.1, z=10, alpha_T=0.2)
geo = AggregationConfig(alpha_mode="geometric", alpha0=0.9, gamma=2.0, z=10, alpha_T=0.1)
for r in (1, 10, 25, 50, 100):
    print(f"round {r:3d}: arithmetic {alpha_schedule(arith, r):.4f}  geometric {alpha_schedule(geo, r):.4f}")
