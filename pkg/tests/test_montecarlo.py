import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sisa.analytics import ExperimentParams, slice_seq_cost
from sisa.dataset import Dataset, gen_synthetic
from sisa.learner import TrainConfig
from sisa.montecarlo import (DEFAULT_TOLERANCES, draw_distinct,
                             format_table, layout_from_plan, layout_sizes, run_trials, simulate,
                             simulate_curve, simulate_plan, simulate_scenario, validate_formulas,
                             write_curve_csv)
from sisa.orchestrator import RequestStream, sisa_train, unlearn
from sisa.partition import ShardBudget, uniform_partition


def _exact_batch_mean(N, S, K):
    """Expected points retrained, by enumerating every K-subset (no replacement)."""
    sizes = layout_sizes(N, S, 1)[:, 0]
    owner = np.repeat(np.arange(S), sizes)
    total = 0
    combos = list(itertools.combinations(range(N), K))
    for c in combos:
        hit = set(owner[list(c)])
        total += sum(int(sizes[k]) for k in hit) - K
    return Fraction(total, len(combos))


class TestDraws:
    @given(st.integers(1, 300), st.integers(1, 40), st.integers(1, 50), st.integers(0, 10 ** 6))
    def test_distinct_rows(self, N, K, T, seed):
        if K > N:
            with pytest.raises(ValueError):
                draw_distinct(np.random.default_rng(seed), N, K, T)
            return
        out = draw_distinct(np.random.default_rng(seed), N, K, T)
        assert out.shape == (T, K) and out.min() >= 0 and out.max() < N
        assert all(len(set(row.tolist())) == K for row in out)

    def test_marginals_uniform(self):
        out = draw_distinct(np.random.default_rng(0), 10, 9, 20_000)
        counts = np.bincount(out.ravel(), minlength=10) / out.size
        np.testing.assert_allclose(counts, 0.1, atol=0.005)

    @given(st.integers(2, 500), st.integers(1, 20), st.integers(1, 10))
    def test_layout_matches_plan(self, N, S, R):
        if S > N or R > -(-N // S):
            return
        plan = uniform_partition(gen_synthetic(N, 1, 2, seed=0), S, R, 0)
        sizes, ids = layout_from_plan(plan)
        np.testing.assert_array_equal(sizes, layout_sizes(N, S, R))
        assert sorted(ids.tolist()) == list(range(N))


class TestSimulate:
    @pytest.mark.parametrize("N,S,K", [(8, 2, 2), (9, 3, 3), (10, 4, 2)])
    def test_batch_mean_matches_enumeration(self, N, S, K):
        exact = float(_exact_batch_mean(N, S, K))
        res = simulate(ExperimentParams(N, S, 1, K, 1), "batch", trials=200_000, seed=1)
        se = math.sqrt(res.variance / res.trials)
        assert abs(res.mean_cost - exact) < 5 * se + 1e-12

    def test_deterministic(self):
        p = ExperimentParams(5000, 5, 4, 7, 3)
        a = simulate(p, "sequential", trials=300, seed=4)
        b = simulate(p, "sequential", trials=300, seed=4)
        assert (a.mean_cost, a.variance) == (b.mean_cost, b.variance)

    def test_single_shard_batch_has_no_variance(self):
        res = simulate(ExperimentParams(1000, 1, 1, 20, 2), "batch", trials=500, seed=0)
        assert res.variance == 0.0 and res.mean_cost == 2 * 980
        assert res.speedup == 1.0

    def test_records_conserve_requests(self):
        res = simulate(ExperimentParams(300, 4, 3, 9, 1), "batch", trials=50, seed=2,
                       keep_records=True)
        for rec in res.records:
            assert rec.hits_per_shard.sum() == 9
            assert (rec.affected_flags == (rec.hits_per_shard > 0)).all()
            assert ((rec.min_slice_per_shard < 3) == rec.affected_flags).all()

    def test_sequential_single_request_vs_formula(self):
        res = simulate(ExperimentParams(3000, 1, 5, 1, 10), "sequential", trials=100_000, seed=0)
        # shard loses the point before retraining: D-1 points in the closed form
        assert res.mean_cost == pytest.approx(slice_seq_cost(10, 2999, 5), rel=0.01)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            run_trials(np.ones((1, 1), dtype=int), [1.0], 1, "online", 1, np.random.default_rng())


class TestCurves:
    def test_common_prefixes_and_csv(self, tmp_path):
        s = simulate_curve(5000, 10, 4, [1, 3, 10, 30], "batch", trials=200, seed=3, base_epochs=2)
        costs = [c.mean_cost for c in s.curve]
        # nested request sets can only cost more
        assert costs == sorted(costs)
        assert [c.K for c in s.curve] == [1, 3, 10, 30]
        write_curve_csv(s, tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "K,mean_cost,variance,speedup" and len(lines) == 5

    def test_curve_point_equals_direct_run(self):
        s = simulate_curve(2000, 4, 2, [6], "sequential", trials=100, seed=9)
        d = simulate(ExperimentParams(2000, 4, 2, 6, 1), "sequential", trials=100, seed=9)
        assert s.curve[0].mean_cost == d.mean_cost


class TestConservationReplay:
    @pytest.mark.parametrize("mode", ["sequential", "batch"])
    def test_ledger_equals_simulated_cost(self, mode):
        ds = gen_synthetic(90, 2, 3, seed=4)
        plan = uniform_partition(ds, 3, 3, seed=2)
        cfg = TrainConfig(base_epochs=3, batch_size=8, seed=0)
        model = sisa_train(ds, plan, cfg)
        summary, requests = simulate_plan(plan, cfg.base_epochs, 4, mode, trials=100, seed=11)
        for rec, req in zip(summary.records, requests):
            _, ledger = unlearn(model, RequestStream(req.tolist(), mode))
            assert ledger.total_samples == rec.cost


class TestScenario:
    def _ds(self, probs):
        n = len(probs)
        return Dataset(np.arange(n), np.zeros((n, 1)), np.arange(n) % 2, probs, 2)

    def test_zero_probability(self):
        res = simulate_scenario(self._ds(np.zeros(200)), ShardBudget(0.5), 5, trials=20, seed=0)
        assert (res.request_counts == 0).all()
        assert all(s.mean_cost == 0 and s.curve == () for s in res.summaries.values())

    def test_common_random_numbers(self):
        ds = self._ds(np.full(400, 0.02))
        res = simulate_scenario(ds, ShardBudget(1.0), 6, trials=50, seed=3)
        a, u = res.summaries["distribution_aware"], res.summaries["uniform"]
        assert [c.trials for c in a.curve] == [c.trials for c in u.curve]
        assert res.plans["uniform"].num_shards == res.plans["distribution_aware"].num_shards

    def test_equal_probabilities_give_equal_costs(self):
        # 99 points of 0.01 stay below the cap, so 20 * 99 points give 20 equal shards
        ds = self._ds(np.full(20 * 99, 0.01))
        res = simulate_scenario(ds, ShardBudget(1.0), 10, trials=200, seed=1)
        assert res.plans["distribution_aware"].shard_sizes == [99] * 20
        a, u = res.summaries["distribution_aware"], res.summaries["uniform"]
        for ca, cu in zip(a.curve, u.curve):
            se = math.sqrt((ca.variance + cu.variance) / ca.trials)
            assert abs(ca.mean_cost - cu.mean_cost) < 4 * se + 1

    def test_deterministic(self):
        ds = self._ds(np.full(300, 0.03))
        a = simulate_scenario(ds, ShardBudget(1.0), 5, trials=20, seed=8)
        b = simulate_scenario(ds, ShardBudget(1.0), 5, trials=20, seed=8)
        assert a.summaries["uniform"].curve == b.summaries["uniform"].curve


class TestValidation:
    def test_small_grid_passes(self):
        grid = [ExperimentParams(2000, 4, 5, 1, 10), ExperimentParams(2000, 4, 5, 3, 10),
                ExperimentParams(4000, 5, 10, 60, 2)]
        rows = validate_formulas(grid, trials=20_000, seed=1)
        names = {r.formula for r in rows}
        assert {"shard_batch", "shard_seq", "slice_seq", "slice_batch", "slice_batch_k1",
                "lone_shard_batch", "lone_shard_seq"} <= names
        assert all(r.passed for r in rows), format_table(rows)
        assert "PASS" in format_table(rows)

    def test_tolerance_override_can_fail(self):
        rows = validate_formulas([ExperimentParams(2000, 4, 5, 3, 10)], trials=2000,
                                 tolerances={"shard_batch": 1e-9})
        row = next(r for r in rows if r.formula == "shard_batch")
        assert not row.passed and "FAIL" in format_table(rows)

    def test_default_tolerances(self):
        assert DEFAULT_TOLERANCES["shard_batch"] == 0.01 and DEFAULT_TOLERANCES["slice_batch"] == 0.03
        with pytest.raises(ValueError):
            validate_formulas([], trials=10)
