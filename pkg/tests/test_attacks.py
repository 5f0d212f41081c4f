import numpy as np
import pytest

from classes.Attacks import (AttackBudget, SubstituteTrainingSet, coreset_select, dual_cf, model_extraction,
                             paired_order, run_strategy, steal_ml, steal_ml_coreset, train_substitute)
from classes.Dataset import Normalizer
from classes.Mlp import Architecture, TrainConfig, mlp_init, train
from tools.errors import ConfigError, InputError

QUERIES = np.array([[1.0, 0.0], [5.0, 2.0], [0.5, 4.0], [3.5, 1.0], [2.0, 5.5]])


def test_steal_ml_labels_with_predictions(linear_oracle, boundary_model):
    tset = steal_ml(linear_oracle, QUERIES)
    assert len(tset) == 5
    assert linear_oracle.meter.predict_calls == 5
    assert linear_oracle.meter.explain_calls == 0
    assert tset.labels.tolist() == boundary_model.predict_labels(QUERIES).tolist()
    assert tset.pairing is None
    assert tset.budget == AttackBudget(5, 5)


def test_coreset_picks_opposite_corners():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    for seed in range(5):
        picked = coreset_select(square, 2, seed)
        assert np.linalg.norm(picked[0] - picked[1]) == pytest.approx(np.sqrt(2))


def test_coreset_exhausts_pool():
    pool = np.random.default_rng(0).normal(size=(7, 3))
    picked = coreset_select(pool, 7, seed=1)
    assert sorted(map(tuple, picked)) == sorted(map(tuple, pool))
    with pytest.raises(InputError):
        coreset_select(pool, 8, seed=1)


def test_coreset_spreads_more_than_random_subsets():
    rng = np.random.default_rng(42)

    def min_gap(points):
        diffs = points[:, None, :] - points[None, :, :]
        d = np.sqrt((diffs ** 2).sum(-1))
        return d[np.triu_indices(len(points), 1)].min()

    wins = 0
    for _ in range(100):
        pool = rng.uniform(0, 6, size=(60, 2))
        greedy = coreset_select(pool, 6, seed=int(rng.integers(1000)))
        random_subset = pool[rng.choice(60, size=6, replace=False)]
        wins += min_gap(greedy) >= min_gap(random_subset)
    assert wins >= 95


def test_coreset_distances_use_the_given_space():
    pool = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 3.0]])
    squash = Normalizer([0.0, 0.0], [100.0, 1.0])
    picked = coreset_select(pool, 2, seed=0, space=squash)
    first = tuple(picked[0])
    expected = {(0.0, 0.0): (0.0, 3.0), (10.0, 0.0): (0.0, 3.0), (0.0, 3.0): (10.0, 0.0)}[first]
    assert tuple(picked[1]) == expected


def test_steal_ml_coreset_costs_k_predictions(linear_oracle):
    pool = np.random.default_rng(3).uniform(0, 6, size=(40, 2))
    tset = steal_ml_coreset(linear_oracle, pool, 4, seed=0)
    assert len(tset) == 4
    assert linear_oracle.meter.predict_calls == 4


def test_model_extraction_counts(linear_oracle):
    tset = model_extraction(linear_oracle, QUERIES[:3])
    assert len(tset) == 6
    assert linear_oracle.meter.explain_calls == 3
    assert linear_oracle.meter.predict_calls == 0
    for i in range(0, 6, 2):
        assert tset.sources[i] == "query" and tset.sources[i + 1] == "cf"
        assert tset.labels[i] != tset.labels[i + 1]
    assert tset.budget.api_calls == 3


def test_dual_cf_counts_and_pairs(linear_oracle, boundary_model):
    tset = dual_cf(linear_oracle, QUERIES[:4], include_x=False)
    assert len(tset) == 8
    assert len(tset.pairing) == 4
    assert linear_oracle.meter.explain_calls == 8
    query_labels = boundary_model.predict_labels(QUERIES[:4])
    for k, (a, b) in enumerate(tset.pairing):
        assert tset.labels[a] != tset.labels[b]
        assert tset.sources[b] == "ccf"
        assert tset.labels[b] == query_labels[k]
    assert np.sum(tset.labels == 1) == np.sum(tset.labels == 0)


def test_dual_cfx_reuses_known_labels(linear_oracle, boundary_model):
    tset = dual_cf(linear_oracle, QUERIES[:4], include_x=True)
    assert len(tset) == 12
    assert linear_oracle.meter.explain_calls == 8
    assert tset.budget == AttackBudget(4, 8)
    direct = boundary_model.predict_labels(tset.features)
    assert tset.labels.tolist() == direct.tolist()


def test_non_converged_pairs_are_dropped(boundary_model):
    from classes.Oracle import CfConfig, CfOracle
    # a tiny budget leaves queries far from the boundary unresolved
    oracle = CfOracle(boundary_model, CfConfig(max_steps=1, max_escalations=0), Normalizer.identity(2))
    tset = dual_cf(oracle, np.array([[-20.0, 0.0]]), include_x=True)
    assert tset.dropped == 1
    assert tset.sources == ["query"]
    assert oracle.meter.explain_calls == 2


def test_run_strategy_rejects_unknown_name(linear_oracle):
    with pytest.raises(ConfigError):
        run_strategy("membership", linear_oracle, QUERIES)


def test_training_set_validates_pairing():
    with pytest.raises(InputError):
        SubstituteTrainingSet([[0.0], [1.0]], [1, 1], ["cf", "ccf"], pairing=[(0, 1)])
    with pytest.raises(InputError):
        SubstituteTrainingSet([[0.0], [1.0]], [1, 0], ["cf", "ccf"], pairing=[(0, 2)])


def test_training_set_csv_with_sidecar(linear_oracle, tmp_path):
    tset = dual_cf(linear_oracle, QUERIES[:2])
    path = str(tmp_path / "set.csv")
    _, sidecar = tset.to_csv(path)
    assert sidecar.endswith("set.pairs.csv")
    loaded = SubstituteTrainingSet.from_csv(path)
    assert loaded.pairing == tset.pairing
    assert loaded.sources == tset.sources
    assert np.array_equal(loaded.labels, tset.labels)


def test_paired_order_keeps_pairs_in_one_batch():
    pairing = [(i, i + 1) for i in range(0, 40, 2)]
    order = paired_order(pairing, 53)
    rng = np.random.default_rng(0)
    for _ in range(20):
        perm = order(rng, 53)
        assert sorted(perm.tolist()) == list(range(53))
        batch_of = {int(idx): pos // 32 for pos, idx in enumerate(perm)}
        for a, b in pairing:
            assert batch_of[a] == batch_of[b]


def test_paired_batching_needs_even_batch(linear_oracle):
    tset = dual_cf(linear_oracle, QUERIES[:2])
    arch = Architecture.from_hidden(2, [4])
    with pytest.raises(ConfigError):
        train_substitute(tset, arch, TrainConfig(batch_size=31, epochs=1), Normalizer.identity(2), True)


def test_unpaired_set_trains_like_plain_training(linear_oracle):
    tset = steal_ml(linear_oracle, QUERIES)
    arch = Architecture.from_hidden(2, [4])
    cfg = TrainConfig(epochs=15, seed=4)
    normalizer = Normalizer([3.0, 3.0], [2.0, 2.0])
    substitute = train_substitute(tset, arch, cfg, normalizer, paired_batching=True)
    plain = train(mlp_init(arch, 4), normalizer.apply(tset.features), tset.labels, cfg)
    assert substitute == plain


def test_min_steps_raises_epochs_for_small_sets(linear_oracle):
    tset = steal_ml(linear_oracle, QUERIES)
    arch = Architecture.from_hidden(2, [4])
    normalizer = Normalizer.identity(2)
    # 5 items fit one batch of 32, so 40 steps need 40 epochs
    lifted = train_substitute(tset, arch, TrainConfig(epochs=3, seed=1), normalizer, min_steps=40)
    plain = train(mlp_init(arch, 1), tset.features, tset.labels, TrainConfig(epochs=40, seed=1))
    assert lifted == plain
    # batches of 2 give 3 steps per epoch: 10 steps round up to 4 epochs
    small = TrainConfig(epochs=1, batch_size=2, seed=1)
    lifted = train_substitute(tset, arch, small, normalizer, min_steps=10)
    plain = train(mlp_init(arch, 1), tset.features, tset.labels, TrainConfig(epochs=4, batch_size=2, seed=1))
    assert lifted == plain


def test_min_steps_below_epoch_budget_changes_nothing(linear_oracle):
    tset = steal_ml(linear_oracle, QUERIES)
    arch = Architecture.from_hidden(2, [4])
    cfg = TrainConfig(epochs=15, seed=4)
    normalizer = Normalizer.identity(2)
    assert train_substitute(tset, arch, cfg, normalizer, min_steps=15) == train_substitute(tset, arch, cfg, normalizer)
    with pytest.raises(ConfigError):
        train_substitute(tset, arch, cfg, normalizer, min_steps=-1)


def test_substitute_training_is_deterministic(linear_oracle):
    tset = dual_cf(linear_oracle, QUERIES, include_x=True)
    arch = Architecture.from_hidden(2, [6])
    cfg = TrainConfig(epochs=20, batch_size=4, seed=2)
    a = train_substitute(tset, arch, cfg, Normalizer.identity(2))
    b = train_substitute(tset, arch, cfg, Normalizer.identity(2))
    assert a == b
