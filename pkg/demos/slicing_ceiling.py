from sisa.analytics import ExperimentParams, slice_seq_cost
from sisa.montecarlo import simulate

# single requests into one shard: restarting mid-sequence saves at most a third of the work
D, e = 60_000, 10
print(" R   closed   simulated")
for R in (1, 2, 5, 10, 20, 50, 200):
    closed = e * D / slice_seq_cost(e, D, R)
    sim = simulate(ExperimentParams(D, 1, R, 1, e), "sequential", trials=5000, seed=R).speedup
    print(f"{R:3d}  {closed:6.3f}   {sim:6.3f}")
print("limit as R grows: 1.5")
