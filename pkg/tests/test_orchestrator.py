import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sisa.checkpoint import Checkpoint
from sisa.dataset import gen_synthetic, split_train_test
from sisa.errors import NotFoundError
from sisa.learner import Arch, TrainConfig, epoch_calibration, init_params
from sisa.orchestrator import (MAJORITY, MEAN, RequestStream, SisaModel, aggregate_predict,
                               aggregate_predict_batch, evaluate, evaluate_report, load_model,
                               save_model, sisa_train, unlearn)
from sisa.partition import locate, remove_point, uniform_partition

CFG = TrainConfig(base_epochs=4, learning_rate=0.2, batch_size=16, seed=5)


@pytest.fixture(scope="module")
def small():
    ds = gen_synthetic(240, 4, 3, seed=3)
    plan = uniform_partition(ds, 4, 3, seed=1)
    return ds, plan, sisa_train(ds, plan, CFG)


def _expected_retrain(plan, shard, start, base_epochs):
    """Samples spent re-running slice steps ``start+1 .. R`` of one shard."""
    e = epoch_calibration(base_epochs, plan.num_slices).epochs_per_slice
    total, cum = 0, 0
    for r, size in enumerate(plan.slice_sizes(shard)):
        cum += size
        if r >= start:
            total += math.floor(e[r] * cum)
    return total


def _fixed_model(votes, num_classes=3, aggregation=MAJORITY, sizes=None):
    """Constituents that always output the given class (bias-only logistic models)."""
    ds = gen_synthetic(12, 2, num_classes, seed=0)
    S = len(votes)
    plan = uniform_partition(ds, S, 1, seed=0)
    sched = epoch_calibration(1, 1)
    constituents = []
    for k, c in enumerate(votes):
        w = np.zeros(2 * num_classes + num_classes)
        w[2 * num_classes + c] = 5.0
        p = init_params(Arch.logistic(), 2, num_classes, 0).replace_weights(w)
        constituents.append((Checkpoint(k, 0, p, 0), Checkpoint(k, 1, p, 0)))
    if sizes is not None:
        members = [[list(plan.members[k][0])] if sizes[k] else [[]] for k in range(S)]
        from sisa.partition import PartitionPlan
        plan = PartitionPlan(members)
    return SisaModel(ds, plan, TrainConfig(), Arch.logistic(), sched, tuple(constituents), aggregation)


class TestTraining:
    def test_checkpoint_grid(self, small):
        ds, plan, model = small
        assert model.num_shards == 4
        for k, shard in enumerate(model.constituents):
            assert [c.slice_after for c in shard] == [0, 1, 2, 3]
            assert all(c.shard == k for c in shard)
            assert shard[0].samples_seen == 0
            assert shard[-1].samples_seen == _expected_retrain(plan, k, 0, CFG.base_epochs)

    def test_workers_do_not_change_bits(self, small):
        ds, plan, model = small
        assert sisa_train(ds, plan, CFG, workers=4).digests() == model.digests()

    def test_shards_get_distinct_seeds(self, small):
        _, _, model = small
        inits = {model.constituents[k][0].params.weights.tobytes() for k in range(4)}
        assert len(inits) == 4

    def test_missing_ids(self, small):
        ds, plan, _ = small
        with pytest.raises(NotFoundError):
            sisa_train(ds.without([plan.ids()[0]]), plan, CFG)

    def test_bad_aggregation(self, small):
        ds, plan, _ = small
        with pytest.raises(ValueError):
            sisa_train(ds, plan, CFG, aggregation="median")


class TestAggregation:
    def test_majority(self):
        model = _fixed_model([2, 0, 2, 1, 2])
        label, vec = aggregate_predict(model, np.zeros(2))
        assert label == 2
        np.testing.assert_allclose(vec, [0.2, 0.2, 0.6])

    def test_tie_goes_to_lowest_label(self):
        label, _ = aggregate_predict(_fixed_model([2, 1, 1, 2]), np.zeros(2))
        assert label == 1

    def test_mean_vector(self):
        model = _fixed_model([0, 1], aggregation=MEAN)
        labels, vecs = aggregate_predict_batch(model, np.zeros((3, 2)))
        one = math.exp(5) / (math.exp(5) + 2)
        np.testing.assert_allclose(vecs[0], [(one + (1 - one) / 2) / 2] * 2 + [(1 - one) / 2], rtol=1e-12)
        assert labels.tolist() == [0, 0, 0]

    def test_empty_shard_abstains(self):
        model = _fixed_model([1, 2, 2], sizes=[4, 0, 0])
        label, vec = aggregate_predict(model, np.zeros(2))
        assert label == 1
        np.testing.assert_allclose(vec, [0, 1 / 3, 0])

    def test_evaluate(self, small):
        ds, _, model = small
        acc = evaluate(model, ds)
        rep = evaluate_report(model, ds)
        assert acc == rep["accuracy"] > 0.9
        assert set(rep["per_class_accuracy"]) == {"0", "1", "2"}
        assert rep["S"] == 4 and rep["R"] == 3 and rep["aggregation"] == MAJORITY
        with pytest.raises(ValueError):
            evaluate(model, None)


class TestUnlearning:
    def _scratch(self, ds, plan, removed):
        reduced = plan
        for pid in removed:
            reduced = remove_point(reduced, pid)
        return sisa_train(ds.without(removed), reduced, CFG)

    def test_sequential_matches_scratch(self, small, rng):
        ds, plan, model = small
        req = rng.choice(ds.ids, 6, replace=False).tolist()
        new, ledger = unlearn(model, RequestStream(req, "sequential"))
        assert new.digests() == self._scratch(ds, plan, req).digests()
        assert len(ledger.entries) == 6

    def test_batch_matches_scratch(self, small, rng):
        ds, plan, model = small
        req = rng.choice(ds.ids, 9, replace=False).tolist()
        new, ledger = unlearn(model, RequestStream(req, "batch"), workers=3)
        assert new.digests() == self._scratch(ds, plan, req).digests()
        assert len(ledger.entries) == 1

    def test_ledger_costs(self, small):
        ds, plan, model = small
        pid = plan.members[2][1][0]
        new, ledger = unlearn(model, RequestStream([pid]))
        (entry,) = ledger.entries
        assert entry.shards == (2,) and entry.restart_slices == (1,)
        assert entry.samples_retrained == _expected_retrain(new.plan, 2, 1, CFG.base_epochs)

    def test_batch_restarts_from_lowest_slice(self, small):
        ds, plan, model = small
        req = [plan.members[1][2][0], plan.members[1][0][0], plan.members[3][1][0]]
        new, ledger = unlearn(model, RequestStream(req, "batch"))
        (entry,) = ledger.entries
        assert entry.shards == (1, 3) and entry.restart_slices == (0, 1)
        assert ledger.total_samples == (_expected_retrain(new.plan, 1, 0, CFG.base_epochs)
                                        + _expected_retrain(new.plan, 3, 1, CFG.base_epochs))

    def test_untouched_shards_and_prefixes(self, small):
        ds, plan, model = small
        pid = plan.members[0][2][0]
        new, _ = unlearn(model, RequestStream([pid]))
        old, now = model.digests(), new.digests()
        assert old[1:] == now[1:]
        assert old[0][:3] == now[0][:3] and old[0][3] != now[0][3]

    def test_unknown_id_leaves_model_alone(self, small):
        ds, plan, model = small
        before = model.digests()
        with pytest.raises(NotFoundError, match="9999"):
            unlearn(model, RequestStream([int(plan.ids()[0]), 9999]))
        assert model.digests() == before

    def test_ledger_csv(self, small, tmp_path):
        ds, plan, model = small
        req = [plan.members[0][0][0], plan.members[2][2][0]]
        _, ledger = unlearn(model, RequestStream(req, "batch"))
        ledger.to_csv(tmp_path / "l.csv")
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == "event,shard,restart_slice,samples_retrained"
        assert len(lines) == 3

    def test_duplicate_request(self):
        with pytest.raises(ValueError):
            RequestStream([1, 2, 1])
        with pytest.raises(ValueError):
            RequestStream([1], mode="lazy")

    @settings(max_examples=8)
    @given(st.lists(st.integers(0, 59), min_size=1, max_size=5, unique=True),
           st.sampled_from(["sequential", "batch"]))
    def test_exactness_property(self, req, mode):
        ds = gen_synthetic(60, 2, 2, seed=1)
        plan = uniform_partition(ds, 3, 2, seed=0)
        cfg = TrainConfig(base_epochs=2, batch_size=8, seed=1)
        model = sisa_train(ds, plan, cfg)
        new, _ = unlearn(model, RequestStream(req, mode))
        reduced = plan
        for pid in req:
            reduced = remove_point(reduced, pid)
        assert new.digests() == sisa_train(ds.without(req), reduced, cfg).digests()


class TestPersistence:
    def test_round_trip(self, small, tmp_path):
        ds, plan, model = small
        save_model(model, tmp_path / "st")
        back = load_model(tmp_path / "st", ds)
        assert back.digests() == model.digests() and back.plan == plan
        assert back.cfg == model.cfg and back.aggregation == model.aggregation

    def test_unlearn_after_reload(self, small, tmp_path, rng):
        ds, plan, model = small
        save_model(model, tmp_path / "st")
        req = rng.choice(ds.ids, 3, replace=False).tolist()
        a, _ = unlearn(load_model(tmp_path / "st", ds), RequestStream(req))
        b, _ = unlearn(model, RequestStream(req))
        assert a.digests() == b.digests()

    def test_split_free_accuracy(self):
        ds = gen_synthetic(600, 3, 3, seed=2)
        train, test = split_train_test(ds, 0.25, 0)
        model = sisa_train(train, uniform_partition(train, 3, 2, 0), CFG, aggregation=MEAN)
        assert evaluate(model, test) > 0.85
