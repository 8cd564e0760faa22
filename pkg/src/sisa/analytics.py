"""Closed-form expected retraining costs, in training-sample units.

Sharding costs count points (one pass); slicing costs carry the base epoch
count ``e'`` and the per-shard size ``D = N / S``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import binom

__all__ = [
    "ExperimentParams",
    "CostReport",
    "shard_seq_cost",
    "shard_batch_cost",
    "shard_batch_asymptote",
    "slice_seq_cost",
    "uniform_min_moments",
    "discrete_min_moments",
    "slice_batch_cost",
    "lone_shard_seq_cost",
    "lone_shard_batch_cost",
    "full_retrain_cost",
    "combined_report",
    "formula_rows",
    "write_report_csv",
]


@dataclass(frozen=True)
class ExperimentParams:
    N: int
    S: int = 1
    R: int = 1
    K: int = 1
    base_epochs: int = 1

    def __post_init__(self):
        if min(self.N, self.S, self.R, self.K, self.base_epochs) < 1:
            raise ValueError("N, S, R, K and base_epochs must all be positive")
        if self.K > self.N:
            raise ValueError("K must not exceed N")
        if self.S > self.N:
            raise ValueError("S must not exceed N")

    @property
    def D(self) -> float:
        return self.N / self.S


@dataclass(frozen=True)
class CostReport:
    params: ExperimentParams
    mode: str
    expected_cost: float
    baseline_cost: float
    speedup: float
    regime_flag: bool


def shard_seq_cost(N, S, K):
    """Expected points retrained over ``K`` sequential requests with ``S`` shards."""
    return (N / S + 1 / (2 * S) - 1) * K - K ** 2 / (2 * S)


def shard_batch_cost(N, S, K):
    """Expected points retrained for one batch of ``K`` requests."""
    return N * (1 - (1 - 1 / S) ** K) - K


def shard_batch_asymptote(N, S, K):
    """Small-K form ``N (1 - exp(-K / tau))`` with ``tau = -1 / ln(1 - 1/S)``."""
    if S == 1:
        return float(N)
    tau = -1.0 / math.log(1 - 1 / S)
    return N * (1 - math.exp(-K / tau))


def slice_seq_cost(base_epochs, D, R):
    """Expected samples for one request in a shard of ``D`` points cut into ``R`` slices."""
    return base_epochs * D * (2 / 3 + 1 / (3 * R))


def uniform_min_moments(n, a, b):
    """First two moments of the minimum of ``n`` iid ``U(a, b)`` draws."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if a > b:
        raise ValueError("need a <= b")
    mean = (n * a + b) / (n + 1)
    second = a ** 2 + (2 * (b - a) / (n + 1)) * ((n + 1) * a + b) / (n + 2)
    return mean, second


def discrete_min_moments(n, R):
    """First two moments of the minimum of ``n`` iid uniform draws on ``{1..R}``.

    Uses ``P(min >= k) = ((R - k + 1) / R) ** n``.
    """
    k = np.arange(1, R + 1, dtype=np.float64)
    tail = ((R - k + 1) / R) ** n
    return float(tail.sum()), float(((2 * k - 1) * tail).sum())


def slice_batch_cost(base_epochs, D, R, K, moments: str = "discrete"):
    """Expected samples to service a batch of ``K`` requests inside one shard.

    Retraining restarts at the lowest slice hit. ``moments="discrete"`` uses
    the exact order statistics of ``U{1..R}`` (so ``K=1`` reproduces
    :func:`slice_seq_cost`); ``"continuous"`` uses the ``U(1, R)`` closed forms.
    """
    if moments == "discrete":
        m1, m2 = discrete_min_moments(K, R)
    elif moments == "continuous":
        m1, m2 = uniform_min_moments(K, 1, R)
    else:
        raise ValueError(f"unknown moments {moments!r}")
    return 2 * base_epochs * D / (R * (R + 1)) * (R * (R + 1) / 2 - 0.5 * (m2 - m1))


def lone_shard_seq_cost(N, S, K):
    return (N / S + 1 / (2 * S) - 1) * K / S - K ** 2 / (2 * S ** 2)


def lone_shard_batch_cost(N, S, K):
    return (N - K) / S


def full_retrain_cost(params: ExperimentParams, mode: str) -> float:
    """Samples used by retraining one model from scratch on what remains."""
    N, K, e = params.N, params.K, params.base_epochs
    if mode == "batch":
        return float(e * (N - K))
    if mode == "sequential":
        return float(e * (N * K - K * (K + 1) / 2))
    raise ValueError(f"unknown mode {mode!r}")


def combined_report(params: ExperimentParams, mode: str = "batch") -> CostReport:
    """Sharding and slicing together, against retraining from scratch.

    Batch: a shard hit ``u`` times (``u ~ B(K, 1/S)``) restarts at its lowest
    hit slice over ``D - u`` remaining points; expected cost sums that over
    ``u >= 1`` and the ``S`` shards. Sequential: request ``i`` lands on a
    shard holding ``D - 1 - (i-1)/S`` points in expectation and pays the
    single-request slicing cost there.
    """
    N, S, R, K, e = params.N, params.S, params.R, params.K, params.base_epochs
    D = N / S
    if mode == "batch":
        u = np.arange(1, K + 1)
        pmf = binom.pmf(u, K, 1 / S)
        keep = pmf > 0
        per_shard = np.array([slice_batch_cost(e, max(D - ui, 0.0), R, int(ui)) for ui in u[keep]])
        expected = float(S * np.sum(pmf[keep] * per_shard))
    elif mode == "sequential":
        i = np.arange(1, K + 1)
        expected = float(np.sum(slice_seq_cost(e, D - 1 - (i - 1) / S, R)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    baseline = full_retrain_cost(params, mode)
    speedup = baseline / expected if expected > 0 else math.inf
    return CostReport(params, mode, expected, baseline, speedup, K < 3 * S)


def formula_rows(params: ExperimentParams):
    """One dict per closed form, each with its own no-sharding/no-slicing baseline."""
    N, S, R, K, e = params.N, params.S, params.R, params.K, params.base_epochs
    D = N / S
    seq_base = N * K - K * (K + 1) / 2
    rows = [
        ("shard_seq", shard_seq_cost(N, S, K), seq_base),
        ("shard_batch", shard_batch_cost(N, S, K), N - K),
        ("slice_seq", slice_seq_cost(e, D, R), e * D),
        ("slice_batch", slice_batch_cost(e, D, R, K), e * D),
        ("lone_shard_seq", lone_shard_seq_cost(N, S, K), seq_base),
        ("lone_shard_batch", lone_shard_batch_cost(N, S, K), N - K),
    ]
    out = []
    for name, cost, base in rows:
        out.append(dict(formula=name, N=N, S=S, R=R, K=K, base_epochs=e,
                        expected_cost=cost, speedup=base / cost if cost > 0 else math.inf))
    for mode in ("sequential", "batch"):
        rep = combined_report(params, mode)
        out.append(dict(formula=f"combined_{mode}", N=N, S=S, R=R, K=K, base_epochs=e,
                        expected_cost=rep.expected_cost, speedup=rep.speedup))
    return out


def write_report_csv(rows, path) -> None:
    fields = ["formula", "N", "S", "R", "K", "base_epochs", "expected_cost", "speedup"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
