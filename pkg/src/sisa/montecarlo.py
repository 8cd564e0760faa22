"""Monte Carlo simulation of unlearning request streams.

The simulator applies the orchestrator's accounting rules to shard/slice
occupancy counts instead of real models: requests are distinct points drawn
without replacement, a retrained step ``r`` over ``n`` remaining points
costs ``floor(e_r * n)`` samples, sequential mode tracks shrinking shards
exactly, batch mode restarts each hit shard once from its lowest hit slice.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytics import (
    ExperimentParams,
    full_retrain_cost,
    lone_shard_batch_cost,
    lone_shard_seq_cost,
    shard_batch_cost,
    shard_seq_cost,
    slice_batch_cost,
    slice_seq_cost,
)
from .dataset import Dataset
from .learner import epoch_calibration
from .partition import PartitionPlan, ShardBudget, distribution_aware_shard, uniform_partition

__all__ = [
    "TrialRecord",
    "CurvePoint",
    "SimSummary",
    "ScenarioResult",
    "ValidationRow",
    "layout_sizes",
    "layout_from_plan",
    "draw_distinct",
    "run_trials",
    "simulate",
    "simulate_curve",
    "simulate_plan",
    "simulate_scenario",
    "validate_formulas",
    "default_grid",
    "DEFAULT_TOLERANCES",
    "write_curve_csv",
    "format_table",
]

SEQUENTIAL = "sequential"
BATCH = "batch"
_CHUNK_CELLS = 2_000_000


@dataclass(frozen=True)
class TrialRecord:
    hits_per_shard: np.ndarray
    affected_flags: np.ndarray
    min_slice_per_shard: np.ndarray  # R where the shard was not hit
    cost: int
    requests: np.ndarray = field(repr=False)  # flat layout positions, in order


@dataclass(frozen=True)
class CurvePoint:
    K: int
    mean_cost: float
    variance: float
    speedup: float
    trials: int


@dataclass(frozen=True)
class SimSummary:
    trials: int
    mean_cost: float
    variance: float
    baseline_cost: float = math.nan
    curve: tuple = ()
    records: tuple = ()

    @property
    def speedup(self) -> float:
        return self.baseline_cost / self.mean_cost if self.mean_cost > 0 else math.inf


def _stats(costs: np.ndarray):
    costs = np.asarray(costs)
    if costs.size == 0:
        return 0.0, 0.0
    # integer sums are exact, hence order independent
    mean = int(costs.sum()) / costs.size
    if costs.size < 2 or costs.min() == costs.max():
        return float(mean), 0.0
    return float(mean), float(np.var(costs.astype(np.float64), ddof=1))


def layout_sizes(N: int, S: int, R: int) -> np.ndarray:
    """``(S, R)`` cell sizes produced by :func:`uniform_partition`."""
    shard = N // S + (np.arange(S) < N % S)
    return np.array([[n // R + (r < n % R) for r in range(R)] for n in shard], dtype=np.int64)


def layout_from_plan(plan: PartitionPlan):
    """Cell sizes ``(S, R)`` and the point ids in flat layout order."""
    sizes = np.array([plan.slice_sizes(k) for k in range(plan.num_shards)], dtype=np.int64)
    ids = [i for shard in plan.members for sl in shard for i in sl]
    return sizes, np.array(ids, dtype=np.int64)


def draw_distinct(rng: np.random.Generator, N: int, K: int, T: int) -> np.ndarray:
    """``(T, K)`` ordered draws without replacement from ``range(N)``, one row per trial."""
    if K > N:
        raise ValueError(f"cannot draw K={K} distinct points from N={N}")
    out = rng.integers(0, N, size=(T, K))
    if K < 2:
        return out
    accept = math.exp(-K * (K - 1) / (2 * N))
    bad = np.arange(T)
    for _ in range(8 if accept > 0.05 else 0):
        s = np.sort(out[bad], axis=1)
        bad = bad[(s[:, 1:] == s[:, :-1]).any(axis=1)]
        if bad.size == 0:
            return out
        out[bad] = rng.integers(0, N, size=(bad.size, K))
    s = np.sort(out[bad], axis=1)
    bad = bad[(s[:, 1:] == s[:, :-1]).any(axis=1)]
    for t in bad:
        out[t] = rng.choice(N, size=K, replace=False)
    return out


def _cells(positions: np.ndarray, sizes: np.ndarray):
    R = sizes.shape[1]
    edges = np.cumsum(sizes.ravel())
    cell = np.searchsorted(edges, positions, side="right")
    return cell // R, cell % R


def _chunk_costs(sizes, e, shards, slices, mode):
    T, K = shards.shape
    S, R = sizes.shape
    t = np.arange(T)
    counts = np.broadcast_to(sizes, (T, S, R)).copy()
    q = np.arange(R)
    if mode == SEQUENTIAL:
        cost = np.zeros(T, dtype=np.int64)
        for i in range(K):
            k, s = shards[:, i], slices[:, i]
            counts[t, k, s] -= 1
            cum = np.cumsum(counts[t, k, :], axis=1)
            step = np.floor(e * cum).astype(np.int64)
            cost += np.where(q[None, :] >= s[:, None], step, 0).sum(axis=1)
        rmin = np.full((T, S), R, dtype=np.int64)
        np.minimum.at(rmin, (np.repeat(t, K), shards.ravel()), slices.ravel())
        return cost, rmin
    np.add.at(counts, (np.repeat(t, K), shards.ravel(), slices.ravel()), -1)
    rmin = np.full((T, S), R, dtype=np.int64)
    np.minimum.at(rmin, (np.repeat(t, K), shards.ravel()), slices.ravel())
    cum = np.cumsum(counts, axis=2)
    step = np.floor(e * cum).astype(np.int64)
    cost = np.where(q[None, None, :] >= rmin[:, :, None], step, 0).sum(axis=(1, 2))
    return cost, rmin


def run_trials(sizes, epochs_per_slice, K: int, mode: str, trials: int,
               rng: np.random.Generator, keep_records: bool = False):
    """Exact retraining cost of ``trials`` random request sets over a layout.

    Returns ``(costs, records)``; ``records`` is empty unless ``keep_records``.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if mode not in (SEQUENTIAL, BATCH):
        raise ValueError(f"unknown mode {mode!r}")
    S, R = sizes.shape
    e = np.asarray(epochs_per_slice, dtype=np.float64)
    N = int(sizes.sum())
    chunk = max(1, _CHUNK_CELLS // (S * R))
    costs, records = [], []
    for lo in range(0, trials, chunk):
        T = min(chunk, trials - lo)
        pos = draw_distinct(rng, N, K, T)
        shards, slices = _cells(pos, sizes)
        cost, rmin = _chunk_costs(sizes, e, shards, slices, mode)
        costs.append(cost)
        if keep_records:
            for j in range(T):
                hits = np.bincount(shards[j], minlength=S)
                records.append(TrialRecord(hits, hits > 0, rmin[j], int(cost[j]), pos[j]))
    return np.concatenate(costs) if costs else np.zeros(0, np.int64), records


def _epochs(base_epochs: int, R: int):
    return epoch_calibration(base_epochs, R).epochs_per_slice


def simulate(params: ExperimentParams, mode: str = BATCH, trials: int = 100, seed: int = 0,
             keep_records: bool = False) -> SimSummary:
    """Mean and variance of the retraining cost for ``params.K`` requests."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    sizes = layout_sizes(params.N, params.S, params.R)
    costs, records = run_trials(sizes, _epochs(params.base_epochs, params.R), params.K, mode,
                                trials, np.random.default_rng(seed), keep_records)
    mean, var = _stats(costs)
    return SimSummary(trials, mean, var, full_retrain_cost(params, mode), records=tuple(records))


def simulate_curve(N: int, S: int, R: int, Ks, mode: str = BATCH, trials: int = 100,
                   seed: int = 0, base_epochs: int = 1) -> SimSummary:
    """Cost and speed-up against ``K``; every ``K`` reuses the same request prefixes."""
    Ks = sorted(int(k) for k in Ks)
    if Ks[-1] > N:
        raise ValueError("K must not exceed N")
    sizes = layout_sizes(N, S, R)
    e = np.asarray(_epochs(base_epochs, R))
    rng = np.random.default_rng(seed)
    pos = draw_distinct(rng, N, Ks[-1], trials)
    shards, slices = _cells(pos, sizes)
    curve = []
    for K in Ks:
        chunk = max(1, _CHUNK_CELLS // (S * R))
        cost = np.concatenate([_chunk_costs(sizes, e, shards[lo:lo + chunk, :K],
                                            slices[lo:lo + chunk, :K], mode)[0]
                               for lo in range(0, trials, chunk)])
        mean, var = _stats(cost)
        base = full_retrain_cost(ExperimentParams(N, S, R, K, base_epochs), mode)
        curve.append(CurvePoint(K, mean, var, base / mean if mean > 0 else math.inf, trials))
    last = curve[-1]
    return SimSummary(trials, last.mean_cost, last.variance,
                      last.mean_cost * last.speedup, tuple(curve))


def simulate_plan(plan: PartitionPlan, base_epochs: int, K: int, mode: str, trials: int,
                  seed: int = 0):
    """Simulate request sets on a concrete plan; records carry the requested point ids.

    Returns ``(summary, request_ids)`` with one id array per trial.
    """
    sizes, ids = layout_from_plan(plan)
    costs, records = run_trials(sizes, _epochs(base_epochs, plan.num_slices), K, mode, trials,
                                np.random.default_rng(seed), keep_records=True)
    mean, var = _stats(costs)
    return SimSummary(trials, mean, var, records=tuple(records)), [ids[r.requests] for r in records]


# --- request streams driven by per-point erasure probabilities ---------------------------

@dataclass(frozen=True)
class ScenarioResult:
    summaries: dict  # plan kind -> SimSummary (curve over request count)
    plans: dict  # plan kind -> PartitionPlan
    request_counts: np.ndarray  # realised number of requests per trial


def _sequential_costs(counts: np.ndarray, e: np.ndarray, cells) -> np.ndarray:
    counts = counts.copy()
    out = np.empty(len(cells), dtype=np.int64)
    for j, (k, s) in enumerate(cells):
        counts[k, s] -= 1
        cum = np.cumsum(counts[k])
        out[j] = int(np.floor(e[s:] * cum[s:]).sum())
    return out


def simulate_scenario(dataset: Dataset, budget: ShardBudget, horizon_requests: int,
                      trials: int = 100, seed: int = 0, R: int = 1, base_epochs: int = 1,
                      uniform_shards: int | None = None,
                      plan_kinds=("uniform", "distribution_aware")) -> ScenarioResult:
    """Uniform against distribution-aware sharding under identical request realisations.

    Each trial draws one Bernoulli(erase_prob) event per point, shuffles the
    requesting points into an arrival order and processes them sequentially
    on both plans. The curve point at ``K`` averages the cumulative cost of
    the first ``K`` requests over trials that produced at least ``K``.
    ``uniform_shards`` defaults to the number of distribution-aware shards.
    """
    aware = distribution_aware_shard(dataset, budget, R, seed=seed)
    S_u = uniform_shards or aware.num_shards
    plans = {"distribution_aware": aware, "uniform": uniform_partition(dataset, S_u, R, seed)}
    plans = {k: plans[k] for k in plan_kinds}
    e = np.asarray(_epochs(base_epochs, R))
    layouts = {}
    for kind, plan in plans.items():
        sizes = np.array([plan.slice_sizes(k) for k in range(plan.num_shards)], dtype=np.int64)
        where = plan.assignment
        layouts[kind] = (sizes, where)
    rng = np.random.default_rng(seed)
    n_req = np.zeros(trials, dtype=np.int64)
    cums = {kind: [] for kind in plans}
    for t in range(trials):
        hit = rng.random(len(dataset)) < dataset.erase_probs
        req = dataset.ids[hit][rng.permutation(int(hit.sum()))][:horizon_requests]
        n_req[t] = hit.sum()
        for kind, (sizes, where) in layouts.items():
            cells = [where[int(i)] for i in req]
            cums[kind].append(np.cumsum(_sequential_costs(sizes, e, cells)))
    summaries = {}
    for kind in plans:
        curve = []
        for K in range(1, horizon_requests + 1):
            vals = np.array([c[K - 1] for c in cums[kind] if len(c) >= K], dtype=np.int64)
            if vals.size == 0:
                break
            mean, var = _stats(vals)
            base = base_epochs * (len(dataset) * K - K * (K + 1) / 2)
            curve.append(CurvePoint(K, mean, var, base / mean if mean > 0 else math.inf, vals.size))
        totals = np.array([c[-1] if len(c) else 0 for c in cums[kind]], dtype=np.int64)
        mean, var = _stats(totals)
        summaries[kind] = SimSummary(trials, mean, var, curve=tuple(curve))
    return ScenarioResult(summaries, plans, n_req)


# --- formula validation -----------------------------------------------------------------

DEFAULT_TOLERANCES = {
    "shard_batch": 0.01,
    "lone_shard_batch": 0.01,
    "shard_seq": 0.05,
    "lone_shard_seq": 0.05,
    "slice_seq": 0.02,
    "slice_batch": 0.03,
    "slice_batch_k1": 1e-12,
}

_NOTES = {
    "shard_seq": "constant-shard-size approximation",
    "lone_shard_seq": "constant-shard-size approximation",
    "lone_shard_batch": "formula assumes the lone shard is hit; applied where (1-1/S)^K < 1e-3",
    "slice_batch": "applied for K <= R",
    "slice_batch_k1": "formula-to-formula: slice_batch(K=1) vs slice_seq",
}


@dataclass(frozen=True)
class ValidationRow:
    formula: str
    params: ExperimentParams
    closed_form: float
    simulated: float
    rel_error: float
    tolerance: float
    passed: bool
    note: str = ""


def default_grid():
    """24 parameter points covering every formula's applicability region."""
    grid = []
    for N, S in ((10_000, 5), (10_000, 10), (20_000, 20)):
        for K in (1, 4, 10, 200):
            for R in (5, 20):
                grid.append(ExperimentParams(N, S, R, K, base_epochs=10))
    return grid


def _lone_costs(N, S, K, mode, trials, rng):
    D = N // S
    chunk = max(1, _CHUNK_CELLS // max(K, 1))
    out = []
    for lo in range(0, trials, chunk):
        pos = draw_distinct(rng, N, K, min(chunk, trials - lo))
        hits = (pos < D).sum(axis=1)
        if mode == BATCH:
            out.append(np.where(hits > 0, D - hits, 0))
        else:
            # j-th hit (0-based) retrains D - 1 - j points
            out.append(hits * (D - 1) - hits * (hits - 1) // 2)
    return np.concatenate(out)


def validate_formulas(grid=None, trials: int = 100_000, tolerances=None, seed: int = 0):
    """Closed forms against simulation on every applicable grid point."""
    grid = list(grid if grid is not None else default_grid())
    if not grid:
        raise ValueError("grid must be non-empty")
    tol = dict(DEFAULT_TOLERANCES, **(tolerances or {}))
    rng = np.random.default_rng(seed)
    rows = []

    def add(name, p, closed, sim):
        err = abs(sim - closed) / abs(closed) if closed else abs(sim - closed)
        rows.append(ValidationRow(name, p, float(closed), float(sim), float(err), tol[name],
                                  bool(err <= tol[name]), _NOTES.get(name, "")))

    for p in grid:
        N, S, R, K, e = p.N, p.S, p.R, p.K, p.base_epochs
        D = N // S
        sim_mean = lambda sizes, ep, k, mode: _stats(run_trials(sizes, ep, k, mode, trials, rng)[0])[0]
        add("shard_batch", p, shard_batch_cost(N, S, K),
            sim_mean(layout_sizes(N, S, 1), [1.0], K, BATCH))
        if K <= N / (2 * S):
            add("shard_seq", p, shard_seq_cost(N, S, K),
                sim_mean(layout_sizes(N, S, 1), [1.0], K, SEQUENTIAL))
            add("lone_shard_seq", p, lone_shard_seq_cost(N, S, K),
                _stats(_lone_costs(N, S, K, SEQUENTIAL, trials, rng))[0])
        if (1 - 1 / S) ** K < 1e-3:
            add("lone_shard_batch", p, lone_shard_batch_cost(N, S, K),
                _stats(_lone_costs(N, S, K, BATCH, trials, rng))[0])
        ep = _epochs(e, R)
        if K == 1:
            add("slice_seq", p, slice_seq_cost(e, D, R),
                sim_mean(layout_sizes(D, 1, R), ep, 1, SEQUENTIAL))
            add("slice_batch_k1", p, slice_seq_cost(e, D, R), slice_batch_cost(e, D, R, 1))
        if K <= R:
            add("slice_batch", p, slice_batch_cost(e, D, R, K),
                sim_mean(layout_sizes(D, 1, R), ep, K, BATCH))
    return rows


def format_table(rows) -> str:
    lines = [f"{'formula':<18}{'N':>7}{'S':>4}{'R':>4}{'K':>5}{'closed':>14}{'simulated':>14}"
             f"{'rel_err':>10}{'tol':>7}  result"]
    for r in rows:
        p = r.params
        lines.append(f"{r.formula:<18}{p.N:>7}{p.S:>4}{p.R:>4}{p.K:>5}{r.closed_form:>14.2f}"
                     f"{r.simulated:>14.2f}{r.rel_error:>10.2e}{r.tolerance:>7.2f}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def write_curve_csv(summary: SimSummary, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["K", "mean_cost", "variance", "speedup"])
        for c in summary.curve:
            w.writerow([c.K, repr(c.mean_cost), repr(c.variance), repr(c.speedup)])
