from dataclasses import replace

import numpy as np
import pytest

from classes.Dataset import gen_syn_linear
from classes.Evaluation import paired_test
from classes.Mlp import Architecture, TrainConfig
from classes.Oracle import CfConfig
from classes.Sweep import (SweepConfig, ablation_summary, boundary_shift_study, capacity_variants, expand_ablation,
                           run_ablation, run_sweep)
from tools.errors import ConfigError, InputError
from tools.utils import derive_seed

from conftest import train_cloud


@pytest.fixture(scope="module")
def small_sweep():
    splits, model, normalizer = train_cloud(gen_syn_linear(400, 0), [10], 30)
    return SweepConfig(
        dataset_id="syn_small",
        splits=splits,
        cloud_model=model,
        cloud_normalizer=normalizer,
        cf_config=CfConfig(),
        strategies=("steal_ml", "dual_cf"),
        query_sizes=(1, 2, 4),
        runs_per_size=5,
        base_seed=0,
        arch=Architecture.from_hidden(2, [4]),
        train_config=TrainConfig(epochs=5, batch_size=8),
    )


def test_sweep_produces_one_record_per_cell(small_sweep):
    table = run_sweep(small_sweep)
    frame = table.records_frame()
    assert len(frame) == 30
    assert frame["strategy"].tolist() == ["steal_ml"] * 15 + ["dual_cf"] * 15
    assert frame["query_size"].tolist()[:15] == [1] * 5 + [2] * 5 + [4] * 5
    assert int(frame["run_seed"].iloc[7]) == derive_seed(0, "steal_ml", 2, 2)
    assert frame["agreement"].between(0.0, 1.0).all()
    steal = frame[frame["strategy"] == "steal_ml"]
    assert (steal["api_calls"] == steal["query_size"]).all()
    dual = frame[frame["strategy"] == "dual_cf"]
    assert (dual["api_calls"] == 2 * dual["query_size"]).all()
    agg = table.aggregates()
    assert len(agg) == 6
    assert 0.0 <= paired_test(table, "dual_cf", "steal_ml", 4) <= 1.0


def test_sweep_is_deterministic_across_jobs(small_sweep):
    cfg = replace(small_sweep, strategies=("dual_cfx",), query_sizes=(2,), runs_per_size=3)
    serial = run_sweep(cfg).records_frame()
    parallel = run_sweep(replace(cfg, jobs=2)).records_frame()
    assert serial.equals(parallel)


def test_query_size_beyond_pool(small_sweep):
    cfg = replace(small_sweep, query_sizes=(1, len(small_sweep.splits.query) + 1))
    with pytest.raises(InputError):
        run_sweep(cfg)


def test_sweep_config_validation(small_sweep):
    with pytest.raises(ConfigError):
        replace(small_sweep, strategies=("membership",))
    with pytest.raises(ConfigError):
        replace(small_sweep, query_sizes=(4, 2))
    with pytest.raises(ConfigError):
        replace(small_sweep, runs_per_size=0)
    with pytest.raises(ConfigError):
        replace(small_sweep, min_steps=-1)


def test_capacity_variants():
    assert capacity_variants([10]) == [
        ("base", [10]), ("remove_nodes", [5]), ("add_nodes", [15]), ("add_layer", [10, 10])]
    assert capacity_variants([20, 10])[3] == ("add_layer", [20, 10, 10])
    with pytest.raises(ConfigError):
        capacity_variants([])


@pytest.mark.parametrize("name, variants", [
    ("capacity", ["base", "remove_nodes", "add_nodes", "add_layer"]),
    ("threshold", ["threshold_0.6", "threshold_0.7", "threshold_0.8", "threshold_0.9"]),
    ("metric", ["L1", "L2", "L1_MAD"]),
    ("imbalance", ["original", "ratio_5"]),
    ("shuffle", ["paired", "shuffled"]),
])
def test_expand_ablation(small_sweep, name, variants):
    expanded = expand_ablation(name, small_sweep)
    assert [label for label, _ in expanded] == variants
    if name in ("threshold", "metric", "shuffle"):
        assert all(cfg.strategies == ("dual_cf",) for _, cfg in expanded)


def test_ablation_variants_change_the_right_knob(small_sweep):
    thresholds = [cfg.cf_config.threshold for _, cfg in expand_ablation("threshold", small_sweep)]
    assert thresholds == [0.6, 0.7, 0.8, 0.9]
    metrics = dict(expand_ablation("metric", small_sweep))
    assert metrics["L1_MAD"].cf_config.mad is not None
    assert metrics["L2"].cf_config.mad is None
    imbalance = dict(expand_ablation("imbalance", small_sweep))
    neg, pos = imbalance["ratio_5"].splits.query.class_counts()
    assert max(neg, pos) >= 5 * min(neg, pos)
    assert imbalance["ratio_5"].splits.eval is small_sweep.splits.eval
    shuffle = dict(expand_ablation("shuffle", small_sweep))
    assert shuffle["paired"].paired_batching and not shuffle["shuffled"].paired_batching


def test_unknown_ablation(small_sweep):
    with pytest.raises(ConfigError):
        expand_ablation("dropout", small_sweep)


def test_ablation_summary_leads_with_variant(small_sweep):
    cfg = replace(small_sweep, query_sizes=(2,), runs_per_size=2)
    outcome = run_ablation("shuffle", cfg)
    summary = ablation_summary(outcome)
    assert summary.columns[0] == "variant"
    assert summary["variant"].tolist() == ["paired", "shuffled"]
    assert np.all(summary["mean_api_calls"] == 4.0)


def test_pairing_is_moot_when_the_set_fits_one_batch(small_sweep):
    # dual_cf at size 2 collects at most 4 instances: a single batch of 8
    outcome = dict(run_ablation("shuffle", replace(small_sweep, query_sizes=(2,))))
    np.testing.assert_allclose(outcome["paired"].get_all_data("agreement"),
                               outcome["shuffled"].get_all_data("agreement"))


def test_boundary_shift_study(small_sweep):
    cfg = replace(small_sweep, min_steps=20)
    rows = boundary_shift_study(cfg, seeds=3)
    assert 1 <= len(rows) <= 6
    assert {r["strategy"] for r in rows} <= {"model_extraction", "dual_cf"}
    assert rows[0]["strategy"] == "model_extraction"
    assert rows[0]["seed"] == derive_seed(0, "boundary_shift", 1, 0)
    assert all(0.0 <= r["boundary_shift"] <= 1.0 for r in rows)
    assert rows == boundary_shift_study(cfg, seeds=3)
    with pytest.raises(ConfigError):
        boundary_shift_study(cfg, seeds=0)
