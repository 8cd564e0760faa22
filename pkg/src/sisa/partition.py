"""Shard/slice layouts: uniform round-robin and distribution-aware sharding."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import NotFoundError

__all__ = [
    "PartitionPlan",
    "ShardBudget",
    "uniform_partition",
    "distribution_aware_shard",
    "locate",
    "remove_point",
    "save_plan",
    "load_plan",
]

UNIFORM = "uniform"
DISTRIBUTION_AWARE = "distribution_aware"


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Assignment of every point id to a ``(shard, slice)`` cell.

    ``members[k][r]`` is the tuple of ids in slice ``r`` of shard ``k``, in
    training order. Everything else (assignment map, sizes) is derived.
    """

    members: tuple
    kind: str = UNIFORM
    _assignment: dict = field(init=False, repr=False)

    def __post_init__(self):
        members = tuple(tuple(tuple(int(i) for i in sl) for sl in shard) for shard in self.members)
        if not members:
            raise ValueError("plan needs at least one shard")
        R = len(members[0])
        if R < 1 or any(len(shard) != R for shard in members):
            raise ValueError("every shard needs the same number of slices (>= 1)")
        if self.kind not in (UNIFORM, DISTRIBUTION_AWARE):
            raise ValueError(f"unknown plan kind {self.kind!r}")
        assignment = {}
        for k, shard in enumerate(members):
            for r, sl in enumerate(shard):
                for i in sl:
                    if i in assignment:
                        raise ValueError(f"point {i} assigned twice")
                    assignment[i] = (k, r)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "_assignment", assignment)

    @property
    def num_shards(self) -> int:
        return len(self.members)

    S = num_shards

    @property
    def num_slices(self) -> int:
        return len(self.members[0])

    R = num_slices

    @property
    def assignment(self) -> dict:
        return dict(self._assignment)

    @property
    def shard_sizes(self) -> list[int]:
        return [sum(len(sl) for sl in shard) for shard in self.members]

    def slice_sizes(self, shard: int) -> list[int]:
        return [len(sl) for sl in self.members[shard]]

    def shard_ids(self, shard: int, upto: int | None = None) -> list[int]:
        """Ids of slices ``0 .. upto-1`` of ``shard`` concatenated in order."""
        slices = self.members[shard] if upto is None else self.members[shard][:upto]
        out = []
        for sl in slices:
            out.extend(sl)
        return out

    def ids(self) -> list[int]:
        return list(self._assignment)

    def __contains__(self, point_id) -> bool:
        return int(point_id) in self._assignment

    def __len__(self) -> int:
        return len(self._assignment)

    def __eq__(self, other):
        if not isinstance(other, PartitionPlan):
            return NotImplemented
        return self.kind == other.kind and self.members == other.members

    def __hash__(self):
        return hash((self.kind, self.members))

    def to_json(self) -> dict:
        return {
            "S": self.num_shards,
            "R": self.num_slices,
            "kind": self.kind,
            "shard_sizes": self.shard_sizes,
            "assignment": {str(i): [k, r] for i, (k, r) in self._assignment.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PartitionPlan":
        S, R = int(doc["S"]), int(doc["R"])
        members = [[[] for _ in range(R)] for _ in range(S)]
        # dict order carries the within-slice training order
        for key, (k, r) in doc["assignment"].items():
            if not (0 <= k < S and 0 <= r < R):
                raise ValueError(f"assignment of {key} out of range: {[k, r]}")
            members[k][r].append(int(key))
        return cls(members, doc.get("kind", UNIFORM))


@dataclass(frozen=True)
class ShardBudget:
    """Cap on a shard's expected number of erasure requests."""

    cap: float

    def __post_init__(self):
        if not 0.0 < self.cap <= 1.0:
            raise ValueError("budget cap must lie in (0, 1]")


def _round_robin(items, n):
    return [list(items[j::n]) for j in range(n)]


def uniform_partition(dataset: Dataset, S: int, R: int, seed: int) -> PartitionPlan:
    """Seeded shuffle, round-robin into ``S`` shards, then round-robin into ``R`` slices."""
    N = len(dataset)
    if not 1 <= S <= N:
        raise ValueError(f"S={S} must satisfy 1 <= S <= N={N}")
    if not 1 <= R <= math.ceil(N / S):
        raise ValueError(f"R={R} must satisfy 1 <= R <= ceil(N/S)={math.ceil(N / S)}")
    perm = np.random.default_rng(seed).permutation(N)
    shuffled = [int(i) for i in dataset.ids[perm]]
    members = [_round_robin(shard, R) for shard in _round_robin(shuffled, S)]
    return PartitionPlan(members, UNIFORM)


class _ExactSum:
    """Running float sum without accumulated rounding (Shewchuk partials)."""

    def __init__(self):
        self.partials = []

    def add(self, x: float) -> None:
        i = 0
        for y in self.partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                self.partials[i] = lo
                i += 1
            x = hi
        self.partials[i:] = [x]

    def value_with(self, x: float) -> float:
        return math.fsum(self.partials + [x])


def distribution_aware_shard(dataset: Dataset, budget: ShardBudget, R: int, seed: int = 0) -> PartitionPlan:
    """Greedy sharding capped by expected request count.

    Points are visited in ascending ``erase_prob`` (ties by id). A point whose
    addition would bring the shard's probability mass to ``budget.cap`` or
    beyond opens a new shard instead. Each shard is then sliced round-robin
    after a shuffle seeded by ``(seed, shard index)``.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    order = np.lexsort((dataset.ids, dataset.erase_probs))
    C = budget.cap
    shards, current, mass = [], [], _ExactSum()
    for row in order:
        pid, p = int(dataset.ids[row]), float(dataset.erase_probs[row])
        if current and mass.value_with(p) >= C:
            shards.append(current)
            current, mass = [], _ExactSum()
        current.append(pid)
        mass.add(p)
    shards.append(current)

    members = []
    for k, shard in enumerate(shards):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        perm = rng.permutation(len(shard))
        members.append(_round_robin([shard[j] for j in perm], R))
    return PartitionPlan(members, DISTRIBUTION_AWARE)


def locate(plan: PartitionPlan, point_id: int) -> tuple[int, int]:
    try:
        return plan._assignment[int(point_id)]
    except KeyError:
        raise NotFoundError(f"point id {point_id} not in plan") from None


def remove_point(plan: PartitionPlan, point_id: int) -> PartitionPlan:
    """New plan without ``point_id``; no other assignment moves."""
    k, r = locate(plan, point_id)
    pid = int(point_id)
    members = [list(shard) for shard in plan.members]
    members[k][r] = tuple(i for i in members[k][r] if i != pid)
    return PartitionPlan(members, plan.kind)


def save_plan(plan: PartitionPlan, path) -> None:
    Path(path).write_text(json.dumps(plan.to_json()) + "\n", encoding="utf-8")


def load_plan(path) -> PartitionPlan:
    return PartitionPlan.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
