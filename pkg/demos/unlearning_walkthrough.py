import numpy as np

from sisa import (RequestStream, TrainConfig, evaluate, gen_synthetic, remove_point, sisa_train,
                  split_train_test, uniform_partition, unlearn)

# four gaussian blobs in 10 dimensions, 20% held out
ds = gen_synthetic(2000, 10, 4, seed=0)
train, test = split_train_test(ds, 0.2, seed=0)

# 5 shards, each cut into 4 slices; a checkpoint is stored before every slice joins
plan = uniform_partition(train, S=5, R=4, seed=0)
cfg = TrainConfig(base_epochs=10, learning_rate=0.1, batch_size=32, seed=0)
model = sisa_train(train, plan, cfg)
print("shard sizes", plan.shard_sizes)
print("test accuracy", evaluate(model, test))

# forget 10 random points, one request at a time
rng = np.random.default_rng(1)
forget = rng.choice(train.ids, 10, replace=False).tolist()
model2, ledger = unlearn(model, RequestStream(forget, "sequential"))
for e in ledger.entries:
    print(f"request {e.event}: shard {e.shards[0]} restarted at slice {e.restart_slices[0]}, "
          f"{e.samples_retrained} samples")
print("total samples retrained", ledger.total_samples)

# the same 10 points, handled as one batch: each shard restarts once, from its lowest hit slice
_, batch_ledger = unlearn(model, RequestStream(forget, "batch"))
print("batch mode retrained", batch_ledger.total_samples)

# what a from-scratch run on the reduced data would have produced
reduced = plan
for pid in forget:
    reduced = remove_point(reduced, pid)
scratch = sisa_train(train.without(forget), reduced, cfg)
same = all(model2.serving(k).params == scratch.serving(k).params for k in range(5))
print("bit-identical to retraining from scratch:", same)

full = cfg.base_epochs * len(train)
print(f"retraining one model on everything would cost about {full * len(forget)} samples")
