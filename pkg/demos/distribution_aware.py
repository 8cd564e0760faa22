import numpy as np

from sisa import ShardBudget, assign_probs, distribution_aware_shard, gen_synthetic, three_group_scenario
from sisa.montecarlo import simulate_scenario

# three populations with different appetite for erasure; probabilities scaled up so a
# 10^4-point dataset sees a handful of requests per trial
ds = assign_probs(gen_synthetic(10_000, 2, 2, seed=0), three_group_scenario(seed=0, prob_scale=300.0))
print("expected requests per trial", ds.erase_probs.sum())

plan = distribution_aware_shard(ds, ShardBudget(1.0), R=1)
sizes = np.array(plan.shard_sizes)
print(plan.num_shards, "shards; sizes", sizes.tolist())

# the same request realisations are replayed on both layouts
res = simulate_scenario(ds, ShardBudget(1.0), horizon_requests=15, trials=100, seed=0)
aware = res.summaries["distribution_aware"].curve
uni = res.summaries["uniform"].curve
print(" K   aware    uniform   ratio")
for a, u in zip(aware, uni):
    print(f"{a.K:2d} {a.mean_cost:8.0f} {u.mean_cost:9.0f}   {a.mean_cost / u.mean_cost:.3f}")

# every full shard carries the same probability mass, so a request lands in each of them
# about equally often; the expected size of the shard it hits is then about N/S whichever
# way the points were grouped
mass = [ds.erase_probs[ds.rows(plan.shard_ids(k))].sum() for k in range(plan.num_shards)]
print("mass per shard", np.round(mass, 3).tolist())
