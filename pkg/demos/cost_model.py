import numpy as np

from sisa.analytics import (ExperimentParams, combined_report, shard_batch_cost, shard_seq_cost,
                            slice_batch_cost, slice_seq_cost)
from sisa.montecarlo import simulate, simulate_curve

# expected points retrained, closed form against simulation, on a single layout
N, S, R, e = 10_000, 10, 5, 10
for K in (1, 5, 20):
    p = ExperimentParams(N, S, 1, K, 1)
    print(f"K={K:3d}  batch sharding  closed {shard_batch_cost(N, S, K):9.1f}  "
          f"sim {simulate(p, 'batch', trials=20000, seed=K).mean_cost:9.1f}")
    print(f"       seq sharding    closed {shard_seq_cost(N, S, K):9.1f}  "
          f"sim {simulate(p, 'sequential', trials=20000, seed=K).mean_cost:9.1f}")

D = N // S
print("\nslicing inside one shard of", D, "points, e' =", e)
for K in (1, 2, 5):
    sim = simulate(ExperimentParams(D, 1, R, K, e), "batch", trials=20000, seed=0).mean_cost
    print(f"K={K}: closed {slice_batch_cost(e, D, R, K):8.1f}  sim {sim:8.1f}")
print("K=1 equals the sequential form:", slice_seq_cost(e, D, R))

# sharding and slicing together, against one model retrained from scratch
print()
for N, K in ((250_000, 8), (604_833, 18)):
    rep = combined_report(ExperimentParams(N, 20, 50, K, 1), "batch")
    print(f"N={N}, S=20, R=50, K={K}: speed-up {rep.speedup:.2f}")

# speed-up against the number of buffered requests; gains fade around K = 3S
Ks = np.unique(np.geomspace(1, 300, 12).astype(int))
curve = simulate_curve(60_000, 10, 20, Ks, "batch", trials=100, seed=0, base_epochs=10).curve
for c in curve:
    print(f"K={c.K:4d}  speed-up {c.speedup:6.2f}")
