import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from classes.Attacks import STRATEGIES, run_strategy, train_substitute
from classes.Dataset import SplitSet, domain_bounds, fit_normalizer, rebalance
from classes.Evaluation import NormalizedModel, agreement, boundary_shift, probe_grid
from classes.Mlp import Architecture, TrainConfig, mlp_init
from classes.Oracle import CfConfig, CfOracle, mad_stats
from classes.Storage import ResultTable
from tools.errors import ConfigError, InputError
from tools.utils import derive_seed

logger = logging.getLogger(__name__)

ABLATIONS = ("capacity", "threshold", "metric", "imbalance", "shuffle")
THRESHOLDS = (0.6, 0.7, 0.8, 0.9)
PAIRED_BY_DEFAULT = ("dual_cf", "dual_cfx")


@dataclass(frozen=True)
class SweepConfig:
    """
    Everything one sweep needs; the ResultTable is a pure function of it.

    Args:
        dataset_id (str): Name written into every record.
        splits (SplitSet): Train/query/eval partitions (raw features).
        cloud_model (MlpModel): The frozen cloud classifier.
        cloud_normalizer (Normalizer): Normalizer fitted on the train split.
        cf_config (CfConfig): Solver settings of the cloud API.
        strategies (tuple): Strategy names.
        query_sizes (tuple): Positive, ascending.
        runs_per_size (int): Repetitions per (strategy, size).
        base_seed (int): Root of every derived seed.
        arch (Architecture): Substitute architecture.
        train_config (TrainConfig): Substitute training; its seed is replaced per run.
        paired_batching (bool): None keeps pairs together for dual_cf / dual_cfx only.
        jobs (int): Parallel workers.
        min_steps (int): Lower bound on substitute optimizer steps per run.
    """
    dataset_id: str
    splits: SplitSet
    cloud_model: object
    cloud_normalizer: object
    cf_config: CfConfig
    strategies: tuple
    query_sizes: tuple
    runs_per_size: int
    base_seed: int
    arch: Architecture
    train_config: TrainConfig
    paired_batching: bool = None
    jobs: int = 1
    min_steps: int = 0

    def __post_init__(self):
        if self.runs_per_size < 1:
            raise ConfigError("at least one run per size is required", "sweep.runs_per_size")
        if self.min_steps < 0:
            raise ConfigError("min_steps cannot be negative", "attack.min_steps")
        sizes = list(self.query_sizes)
        if not sizes or any(s < 1 for s in sizes) or sorted(set(sizes)) != sizes:
            raise ConfigError("query sizes must be positive and strictly ascending", "sweep.query_sizes")
        for name in self.strategies:
            if name not in STRATEGIES:
                raise ConfigError(f"unknown strategy {name!r}", "sweep.strategies")
        object.__setattr__(self, "strategies", tuple(self.strategies))
        object.__setattr__(self, "query_sizes", tuple(sizes))


def _run_cell(cfg, sub_normalizer, strategy, size, run):
    seed = derive_seed(cfg.base_seed, strategy, size, run)
    rng = np.random.default_rng(seed)
    query = cfg.splits.query
    picked = rng.choice(len(query), size=size, replace=False)
    queries = query.features[picked]

    oracle = CfOracle(cfg.cloud_model, cfg.cf_config, cfg.cloud_normalizer)
    tset = run_strategy(strategy, oracle, queries, pool=query.features, seed=seed, space=cfg.cloud_normalizer)

    train_cfg = replace(cfg.train_config, seed=seed)
    paired = cfg.paired_batching if cfg.paired_batching is not None else strategy in PAIRED_BY_DEFAULT
    if len(tset) == 0:
        logger.warning("%s size %d run %d collected nothing; scoring an untrained substitute", strategy, size, run)
        substitute = mlp_init(cfg.arch, seed)
    else:
        substitute = train_substitute(tset, cfg.arch, train_cfg, sub_normalizer, paired, cfg.min_steps)

    cloud = NormalizedModel(cfg.cloud_model, cfg.cloud_normalizer)
    score = agreement(cloud, NormalizedModel(substitute, sub_normalizer), cfg.splits.eval)
    return {
        "dataset": cfg.dataset_id,
        "strategy": strategy,
        "query_size": int(size),
        "run_seed": seed,
        "agreement": score,
        "api_calls": int(oracle.meter.total),
        "dropped_pairs": int(tset.dropped),
    }


def run_sweep(cfg):
    """
    Run every (strategy, query size, run) cell and collect agreements.

    Cells are independent and may run in parallel; records keep the
    strategy / size / run order whatever the number of jobs.

    Returns:
        ResultTable: One record per cell.
    """
    pool = len(cfg.splits.query)
    if cfg.query_sizes[-1] > pool:
        raise InputError(f"query size {cfg.query_sizes[-1]} exceeds the {pool}-row query split")
    sub_normalizer = fit_normalizer(cfg.splits.query)
    cells = [(s, size, r) for s in cfg.strategies for size in cfg.query_sizes for r in range(cfg.runs_per_size)]
    logger.info("Running %d sweep cells on %s with %d job(s)...", len(cells), cfg.dataset_id, cfg.jobs)
    records = Parallel(n_jobs=cfg.jobs)(
        delayed(_run_cell)(cfg, sub_normalizer, s, size, r) for s, size, r in cells
    )
    return ResultTable(records)


def boundary_shift_study(cfg, seeds=30):
    """
    Train on one query worth of answers and measure how far the substitute's
    boundary lands from the cloud's.

    Each seed draws a single query from the query split and trains two
    substitutes: one on the query and its counterfactual (model_extraction),
    one on the counterfactual and its own counterfactual (dual_cf). The shift
    is the disagreement over a grid covering the train domain.

    Args:
        cfg (SweepConfig): Cloud, splits, substitute and training settings.
        seeds (int): Number of single-query draws.

    Returns:
        list: {"seed", "strategy", "boundary_shift"} rows; draws whose CF
        search failed are left out.
    """
    if seeds < 1:
        raise ConfigError("the boundary study needs at least one seed", "seeds")
    sub_normalizer = fit_normalizer(cfg.splits.query)
    cloud = NormalizedModel(cfg.cloud_model, cfg.cloud_normalizer)
    grid = probe_grid(*domain_bounds(cfg.splits.train), seed=cfg.base_seed)
    query = cfg.splits.query
    rows = []
    for i in range(seeds):
        seed = derive_seed(cfg.base_seed, "boundary_shift", 1, i)
        rng = np.random.default_rng(seed)
        queries = query.features[[rng.integers(len(query))]]
        oracle = CfOracle(cfg.cloud_model, cfg.cf_config, cfg.cloud_normalizer)
        train_cfg = replace(cfg.train_config, seed=seed)
        for strategy in ("model_extraction", "dual_cf"):
            tset = run_strategy(strategy, oracle, queries)
            if len(tset) == 0:
                logger.warning("Boundary study seed %d: %s collected nothing", i, strategy)
                continue
            paired = cfg.paired_batching if cfg.paired_batching is not None else strategy in PAIRED_BY_DEFAULT
            substitute = train_substitute(tset, cfg.arch, train_cfg, sub_normalizer, paired, cfg.min_steps)
            shift = boundary_shift(cloud, NormalizedModel(substitute, sub_normalizer), grid)
            rows.append({"seed": seed, "strategy": strategy, "boundary_shift": shift})
    return rows


#========================================#
# ABLATIONS
#========================================#

def capacity_variants(hidden):
    """Base substitute plus fewer nodes (x0.5), more nodes (x1.5) and one extra layer in the last hidden block."""
    hidden = list(hidden)
    if not hidden:
        raise ConfigError("capacity variants need at least one hidden layer", "attack.hidden")
    last = hidden[-1]
    return [
        ("base", hidden),
        ("remove_nodes", hidden[:-1] + [max(1, int(last * 0.5))]),
        ("add_nodes", hidden[:-1] + [int(last * 1.5)]),
        ("add_layer", hidden + [last]),
    ]


def expand_ablation(name, cfg, imbalance_ratio=5.0):
    """
    Turn one ablation name into (variant, SweepConfig) pairs.

    Args:
        name (str): capacity, threshold, metric, imbalance or shuffle.
        cfg (SweepConfig): The main sweep configuration.
        imbalance_ratio (float): Majority:minority ratio of the imbalanced variant.

    Returns:
        list: (variant name, SweepConfig) tuples.
    """
    if name == "capacity":
        dim = cfg.splits.train.dim
        return [(label, replace(cfg, arch=Architecture.from_hidden(dim, hidden)))
                for label, hidden in capacity_variants(cfg.arch.hidden)]
    if name == "threshold":
        return [(f"threshold_{eps:g}", replace(cfg, strategies=("dual_cf",), cf_config=cfg.cf_config.with_changes(threshold=eps)))
                for eps in THRESHOLDS]
    if name == "metric":
        mad = mad_stats(cfg.cloud_normalizer.apply(cfg.splits.train.features))
        variants = []
        for metric in ("L1", "L2", "L1_MAD"):
            cf_config = cfg.cf_config.with_changes(metric=metric, mad=mad if metric == "L1_MAD" else None)
            variants.append((metric, replace(cfg, strategies=("dual_cf",), cf_config=cf_config)))
        return variants
    if name == "imbalance":
        skewed = rebalance(cfg.splits.query, imbalance_ratio, cfg.base_seed)
        splits = SplitSet(cfg.splits.train, skewed, cfg.splits.eval)
        return [("original", cfg), (f"ratio_{imbalance_ratio:g}", replace(cfg, splits=splits))]
    if name == "shuffle":
        return [
            ("paired", replace(cfg, strategies=("dual_cf",), paired_batching=True)),
            ("shuffled", replace(cfg, strategies=("dual_cf",), paired_batching=False)),
        ]
    raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}", "ablation")


def run_ablation(name, cfg, imbalance_ratio=5.0):
    """Run the sweep of every variant. Returns a list of (variant, ResultTable)."""
    outcome = []
    for variant, variant_cfg in expand_ablation(name, cfg, imbalance_ratio):
        logger.info("Ablation %s: variant %s", name, variant)
        outcome.append((variant, run_sweep(variant_cfg)))
    return outcome


def ablation_summary(outcome):
    """Aggregates of every variant stacked into one frame with a leading variant column."""
    frames = []
    for variant, table in outcome:
        frame = table.aggregates()
        frame.insert(0, "variant", variant)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def build_sweep_config(cfg, dataset_id, splits, cloud_model, cloud_normalizer):
    """
    Assemble a SweepConfig from a validated config dict and the trained cloud artifacts.
    """
    cf = cfg["cf"]
    mad = None
    if cf["metric"] == "L1_MAD":
        mad = mad_stats(cloud_normalizer.apply(splits.train.features))
    cf_config = CfConfig(
        threshold=cf["threshold"], metric=cf["metric"], mad=mad, lr=cf["lr"], max_steps=cf["max_steps"],
        lambda_init=cf["lambda_init"], lambda_growth=cf["lambda_growth"], max_escalations=cf["max_escalations"],
        hinge=cf["hinge"], margin=cf["margin"], refine_steps=cf["refine_steps"],
    )
    attack = cfg["attack"]
    sweep = cfg["sweep"]
    return SweepConfig(
        dataset_id=dataset_id,
        splits=splits,
        cloud_model=cloud_model,
        cloud_normalizer=cloud_normalizer,
        cf_config=cf_config,
        strategies=tuple(sweep["strategies"]),
        query_sizes=tuple(sweep["query_sizes"]),
        runs_per_size=sweep["runs_per_size"],
        base_seed=sweep["base_seed"],
        arch=Architecture.from_hidden(splits.train.dim, attack["hidden"]),
        train_config=TrainConfig(
            learning_rate=attack["learning_rate"], batch_size=attack["batch_size"], epochs=attack["epochs"]),
        paired_batching=attack["paired_batching"],
        jobs=sweep["jobs"],
        min_steps=attack["min_steps"],
    )
