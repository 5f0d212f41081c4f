"""Statistical reproduction checks on the synthetic datasets. Run with `pytest -m slow`."""

import os
from dataclasses import replace

import numpy as np
import pytest

from classes.Dataset import fit_normalizer, gen_syn_nonlinear, split
from classes.Evaluation import confidence_profile, paired_test
from classes.Mlp import Architecture, TrainConfig, mlp_init, train
from classes.Oracle import CfConfig, CfOracle
from classes.Sweep import boundary_shift_study, build_sweep_config, expand_ablation, run_sweep
from tools.utils import load_config

pytestmark = pytest.mark.slow

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "config")
SIZES = [1, 2, 4, 8]
STRATEGIES = ["steal_ml", "model_extraction", "dual_cf", "dual_cfx"]


def sweep_config(name, cloud, strategies, sizes=SIZES):
    splits, model, normalizer = cloud
    cfg = load_config(os.path.join(CONFIG_DIR, name))
    cfg["sweep"].update(strategies=list(strategies), query_sizes=list(sizes), runs_per_size=30)
    return build_sweep_config(cfg, name, splits, model, normalizer)


def by_cell(table):
    return table.aggregates().set_index(["strategy", "query_size"])


@pytest.fixture(scope="module")
def linear_sweep(syn_linear_cloud):
    return run_sweep(sweep_config("syn_linear.json", syn_linear_cloud, STRATEGIES))


@pytest.fixture(scope="module")
def nonlinear_sweep(syn_nonlinear_cloud):
    return run_sweep(sweep_config("syn_nonlinear.json", syn_nonlinear_cloud, STRATEGIES))


@pytest.mark.parametrize("sweep", ["linear_sweep", "nonlinear_sweep"])
def test_dual_cf_beats_steal_ml_at_small_budgets(request, sweep):
    table = request.getfixturevalue(sweep)
    agg = by_cell(table)
    for size in SIZES:
        dual = agg.loc[("dual_cf", size), "mean_agreement"]
        assert dual > agg.loc[("steal_ml", size), "mean_agreement"]
        assert agg.loc[("dual_cfx", size), "mean_agreement"] >= dual - 0.02
        assert paired_test(table, "dual_cf", "steal_ml", size) < 0.05


def test_strategy_ordering_on_linear_data(linear_sweep):
    agg = by_cell(linear_sweep)
    for size in SIZES:
        extraction = agg.loc[("model_extraction", size), "mean_agreement"]
        assert extraction > agg.loc[("steal_ml", size), "mean_agreement"]
        assert agg.loc[("dual_cf", size), "mean_agreement"] >= extraction - 0.01


def test_dual_cf_is_more_stable_on_linear_data(linear_sweep):
    agg = by_cell(linear_sweep)
    # one query gives Steal-ML a single label, so its spread there only reflects class balance
    for size in SIZES[1:]:
        assert agg.loc[("dual_cf", size), "std_agreement"] <= agg.loc[("steal_ml", size), "std_agreement"]


@pytest.mark.xfail(strict=False, reason="CF pairs on the S-curve land on different arcs from run to run; "
                                        "measured std 0.098 vs 0.022 at one query")
def test_dual_cf_is_more_stable_on_nonlinear_data(nonlinear_sweep):
    agg = by_cell(nonlinear_sweep)
    for size in SIZES:
        assert agg.loc[("dual_cf", size), "std_agreement"] <= agg.loc[("steal_ml", size), "std_agreement"]


@pytest.mark.xfail(strict=False, reason="the query keeps ME ahead at one query on the S-curve; measured 0.752 vs 0.774")
def test_dual_cf_matches_model_extraction_on_nonlinear_data(nonlinear_sweep):
    agg = by_cell(nonlinear_sweep)
    for size in SIZES:
        assert agg.loc[("dual_cf", size), "mean_agreement"] >= agg.loc[("model_extraction", size), "mean_agreement"]


def test_cf_validity_on_nonlinear_cloud(syn_nonlinear_cloud):
    _, model, normalizer = syn_nonlinear_cloud
    oracle = CfOracle(model, CfConfig(), normalizer)
    results = oracle.explain_batch(np.random.default_rng(0).uniform(0, 6, size=(1000, 2)))
    converged = [r for r in results if r.converged]
    assert len(converged) >= 990
    assert all(r.achieved_prob >= 0.6 and r.cf_label != r.origin_label for r in converged)


def test_single_pair_shifts_the_boundary_less(syn_linear_cloud):
    cfg = sweep_config("syn_linear.json", syn_linear_cloud, ["dual_cf"])
    rows = boundary_shift_study(cfg, seeds=30)
    shifts = {name: [r["boundary_shift"] for r in rows if r["strategy"] == name]
              for name in ("model_extraction", "dual_cf")}
    assert np.mean(shifts["model_extraction"]) > np.mean(shifts["dual_cf"])


def test_training_longer_makes_the_cloud_overconfident():
    splits = split(gen_syn_nonlinear(2000, 0), 0)
    normalizer = fit_normalizer(splits.train)
    X = normalizer.apply(splits.train.features)
    snapshots = {}

    def keep(epoch, model, _loss):
        if epoch in (25, 100):
            snapshots[epoch] = model

    arch = Architecture.from_hidden(2, [20, 10])
    train(mlp_init(arch, 0), X, splits.train.labels, TrainConfig(epochs=100, seed=0), on_epoch=keep)
    early = confidence_profile(snapshots[25], X, 0.9)
    late = confidence_profile(snapshots[100], X, 0.9)
    assert late > early


def test_threshold_barely_matters(syn_linear_cloud):
    base = replace(sweep_config("syn_linear.json", syn_linear_cloud, ["dual_cf"]), query_sizes=(8,))
    means = [run_sweep(cfg).aggregates()["mean_agreement"].iloc[0] for _, cfg in expand_ablation("threshold", base)]
    assert max(means) - min(means) <= 0.05


def test_capacity_barely_matters(syn_linear_cloud):
    base = sweep_config("syn_linear.json", syn_linear_cloud, ["dual_cf"], sizes=[32])
    means = [run_sweep(cfg).aggregates()["mean_agreement"].iloc[0] for _, cfg in expand_ablation("capacity", base)]
    assert max(means) - min(means) <= 0.05


def test_pairing_does_not_hurt_once_sets_span_batches(syn_nonlinear_cloud):
    # 2 * size exceeds the batch of 32, so pairs and shuffles really fill different batches
    base = sweep_config("syn_nonlinear.json", syn_nonlinear_cloud, ["dual_cf"], sizes=[32, 64])
    variants = {name: by_cell(run_sweep(cfg)) for name, cfg in expand_ablation("shuffle", base)}
    for size in (32, 64):
        paired = variants["paired"].loc[("dual_cf", size), "mean_agreement"]
        assert paired >= variants["shuffled"].loc[("dual_cf", size), "mean_agreement"] - 0.01


def test_sweep_csv_is_byte_identical(syn_linear_cloud, tmp_path):
    base = replace(sweep_config("syn_linear.json", syn_linear_cloud, ["steal_ml_coreset", "dual_cfx"]),
                   runs_per_size=3, jobs=2)
    paths = []
    for attempt in ("a", "b"):
        records, aggregates = run_sweep(base).write_csv(str(tmp_path / f"{attempt}_records.csv"),
                                                        str(tmp_path / f"{attempt}_aggregates.csv"))
        paths.append((records, aggregates))
    for first, second in zip(*paths):
        assert open(first, "rb").read() == open(second, "rb").read()
