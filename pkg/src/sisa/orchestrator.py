"""SISA lifecycle: sliced training with checkpoints, aggregation, unlearning."""
from __future__ import annotations

import csv
import json
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import learner
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .dataset import Dataset
from .errors import NotFoundError, SisaError
from .learner import Arch, SliceSchedule, TrainConfig, derive_seed, epoch_calibration, init_params
from .partition import PartitionPlan, locate, remove_point

__all__ = [
    "MAJORITY",
    "MEAN",
    "SisaModel",
    "RequestStream",
    "LedgerEntry",
    "CostLedger",
    "sisa_train",
    "aggregate_predict",
    "aggregate_predict_batch",
    "evaluate",
    "evaluate_report",
    "unlearn",
    "save_model",
    "load_model",
]

MAJORITY = "majority_label"
MEAN = "mean_vector"
SEQUENTIAL = "sequential"
BATCH = "batch"


@dataclass(frozen=True, eq=False)
class SisaModel:
    dataset: Dataset
    plan: PartitionPlan
    cfg: TrainConfig
    arch: Arch
    schedule: SliceSchedule
    constituents: tuple  # per shard: tuple of Checkpoint, slice_after = 0..R
    aggregation: str = MAJORITY

    @property
    def num_shards(self) -> int:
        return len(self.constituents)

    def serving(self, shard: int) -> Checkpoint:
        return self.constituents[shard][-1]

    def digests(self) -> list[list[str]]:
        """SHA-256 of every checkpoint's serialized bytes, per shard."""
        return [[c.digest() for c in shard] for shard in self.constituents]


@dataclass(frozen=True)
class RequestStream:
    requests: tuple
    mode: str = SEQUENTIAL

    def __post_init__(self):
        reqs = tuple(int(i) for i in self.requests)
        if len(set(reqs)) != len(reqs):
            raise ValueError("duplicate id in request stream")
        if self.mode not in (SEQUENTIAL, BATCH):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "requests", reqs)

    def __len__(self):
        return len(self.requests)


@dataclass(frozen=True)
class LedgerEntry:
    event: int
    shards: tuple
    restart_slices: tuple  # 0-based index of the first retrained slice
    shard_samples: tuple

    @property
    def samples_retrained(self) -> int:
        return sum(self.shard_samples)


@dataclass
class CostLedger:
    entries: list = field(default_factory=list)

    @property
    def total_samples(self) -> int:
        return sum(e.samples_retrained for e in self.entries)

    def rows(self):
        for e in self.entries:
            for k, r, n in zip(e.shards, e.restart_slices, e.shard_samples):
                yield e.event, k, r, n

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["event", "shard", "restart_slice", "samples_retrained"])
            w.writerows(self.rows())


def _shard_seed(cfg: TrainConfig, shard: int) -> int:
    return derive_seed(cfg.seed, shard)


def _train_shard(dataset: Dataset, plan: PartitionPlan, shard: int, cfg: TrainConfig,
                 arch: Arch, schedule: SliceSchedule, prefix=None):
    """Train slices after ``prefix`` (checkpoints 0..s); returns (checkpoints, samples)."""
    seed = _shard_seed(cfg, shard)
    shard_cfg = replace(cfg, seed=seed)
    if prefix:
        ckpts = list(prefix)
    else:
        params = init_params(arch, dataset.feature_dim, dataset.num_classes, seed)
        ckpts = [Checkpoint(shard, 0, params, 0)]
    params, seen = ckpts[-1].params, ckpts[-1].samples_seen
    retrained = 0
    for r in range(len(ckpts), plan.num_slices + 1):
        rows = dataset.rows(plan.shard_ids(shard, r))
        try:
            params, n = learner.train(params, dataset.features[rows], dataset.labels[rows],
                                      schedule.epochs_per_slice[r - 1], shard_cfg, stream_tag=r)
        except SisaError as exc:
            raise type(exc)(f"shard {shard}: {exc}") from exc
        seen += n
        retrained += n
        ckpts.append(Checkpoint(shard, r, params, seen))
    return tuple(ckpts), retrained


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def sisa_train(dataset: Dataset, plan: PartitionPlan, cfg: TrainConfig,
               aggregation: str = MAJORITY, arch: Arch | None = None, workers: int = 1) -> SisaModel:
    """Train one constituent per shard, checkpointing around every slice.

    Shard ``k`` starts from an initialisation seeded by ``hash(cfg.seed, k)``;
    step ``r`` trains on slices ``1..r`` for ``2e'/(R+1)`` epochs. Results do
    not depend on ``workers``.
    """
    if aggregation not in (MAJORITY, MEAN):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    arch = arch or Arch.logistic()
    missing = [i for i in plan.ids() if i not in dataset]
    if missing:
        raise NotFoundError(f"plan references ids missing from dataset, e.g. {missing[0]}")
    schedule = epoch_calibration(cfg.base_epochs, plan.num_slices)
    shards = _map(lambda k: _train_shard(dataset, plan, k, cfg, arch, schedule)[0],
                  list(range(plan.num_shards)), workers)
    return SisaModel(dataset, plan, cfg, arch, schedule, tuple(shards), aggregation)


def _constituent_probs(model: SisaModel, X: np.ndarray):
    """Stacked softmax outputs (S, n, C) and a mask of shards that hold data."""
    sizes = model.plan.shard_sizes
    C = model.dataset.num_classes
    out = np.empty((model.num_shards, X.shape[0], C))
    for k in range(model.num_shards):
        if sizes[k] == 0:
            out[k] = 1.0 / C
        else:
            out[k] = learner.predict(model.serving(k).params, X)
    return out, np.array([s > 0 for s in sizes])


def aggregate_predict_batch(model: SisaModel, X):
    """Aggregated labels (n,) and vectors (n, C) for rows of ``X``.

    Majority: each non-empty constituent votes its argmax, the vector is the
    vote histogram divided by S. Mean: average of the S softmax vectors.
    Ties go to the lowest class index (``argmax`` semantics).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    probs, active = _constituent_probs(model, X)
    S, n, C = probs.shape
    if model.aggregation == MEAN:
        vec = probs.mean(axis=0)
    else:
        votes = probs[active].argmax(axis=2)  # (S_active, n)
        vec = np.zeros((n, C))
        for row in votes:
            vec[np.arange(n), row] += 1.0
        vec /= S
    return vec.argmax(axis=1), vec


def aggregate_predict(model: SisaModel, features):
    labels, vec = aggregate_predict_batch(model, np.asarray(features, dtype=np.float64)[None, :])
    return int(labels[0]), vec[0]


def evaluate(model: SisaModel, test: Dataset) -> float:
    if test is None or len(test) == 0:
        raise ValueError("empty test set")
    labels, _ = aggregate_predict_batch(model, test.features)
    return float(np.mean(labels == test.labels))


def evaluate_report(model: SisaModel, test: Dataset) -> dict:
    labels, _ = aggregate_predict_batch(model, test.features)
    correct = labels == test.labels
    per_class = {}
    for c in range(test.num_classes):
        mask = test.labels == c
        per_class[str(c)] = float(correct[mask].mean()) if mask.any() else None
    return {
        "accuracy": float(correct.mean()),
        "per_class_accuracy": per_class,
        "S": model.plan.num_shards,
        "R": model.plan.num_slices,
        "aggregation": model.aggregation,
    }


def unlearn(model: SisaModel, stream: RequestStream, workers: int = 1):
    """Remove the requested points and retrain only what they touched.

    Sequential mode handles requests one at a time; batch mode restarts each
    affected shard once, from its lowest affected slice. Every retrained
    shard resumes from the checkpoint saved before that slice was introduced,
    with the original seeds and epoch schedule.

    Returns ``(new_model, ledger)``.
    """
    plan = model.plan
    for pid in stream.requests:
        locate(plan, pid)  # fail before mutating anything
    constituents = list(model.constituents)
    ledger = CostLedger()

    def retrain(plan, k, s):
        return _train_shard(model.dataset, plan, k, model.cfg, model.arch, model.schedule,
                            prefix=constituents[k][:s + 1])

    if stream.mode == SEQUENTIAL:
        for event, pid in enumerate(stream.requests):
            k, s = locate(plan, pid)
            plan = remove_point(plan, pid)
            ckpts, n = retrain(plan, k, s)
            constituents[k] = ckpts
            ledger.entries.append(LedgerEntry(event, (k,), (s,), (n,)))
    else:
        restart = OrderedDict()
        for pid in stream.requests:
            k, s = locate(plan, pid)
            restart[k] = min(s, restart.get(k, s))
        for pid in stream.requests:
            plan = remove_point(plan, pid)
        shards = sorted(restart)
        results = _map(lambda k: retrain(plan, k, restart[k]), shards, workers)
        for k, (ckpts, _) in zip(shards, results):
            constituents[k] = ckpts
        ledger.entries.append(LedgerEntry(0, tuple(shards), tuple(restart[k] for k in shards),
                                          tuple(n for _, n in results)))
    return replace(model, plan=plan, constituents=tuple(constituents)), ledger


def save_model(model: SisaModel, store) -> None:
    """Write every checkpoint plus a manifest (plan, config, arch) under ``store``."""
    store = Path(store)
    store.mkdir(parents=True, exist_ok=True)
    for shard in model.constituents:
        for ckpt in shard:
            save_checkpoint(store, ckpt)
    manifest = {
        "cfg": asdict(model.cfg),
        "arch": asdict(model.arch),
        "aggregation": model.aggregation,
        "plan": model.plan.to_json(),
    }
    (store / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def load_model(store, dataset: Dataset) -> SisaModel:
    store = Path(store)
    manifest = json.loads((store / "manifest.json").read_text(encoding="utf-8"))
    plan = PartitionPlan.from_json(manifest["plan"])
    cfg = TrainConfig(**manifest["cfg"])
    arch = Arch(**manifest["arch"])
    schedule = epoch_calibration(cfg.base_epochs, plan.num_slices)
    constituents = []
    for k in range(plan.num_shards):
        shard = tuple(load_checkpoint(store, k, r) for r in range(plan.num_slices + 1))
        for r, c in enumerate(shard):
            if c.shard != k or c.slice_after != r:
                raise SisaError(f"checkpoint for shard {k} slice {r} carries ({c.shard}, {c.slice_after})")
        constituents.append(shard)
    return SisaModel(dataset, plan, cfg, arch, schedule, tuple(constituents), manifest["aggregation"])
