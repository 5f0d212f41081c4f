import copy
import logging
import os
import time

import pandas as pd

from classes.Dataset import Normalizer, fit_normalizer, load_dataset, split
from classes.Evaluation import feature_leakage_rank, lemma_check
from classes.Mlp import Architecture, MlpModel, TrainConfig, mlp_init, train
from classes.Storage import read_aggregates
from classes.Oracle import CfOracle
from classes.Sweep import ablation_summary, boundary_shift_study, build_sweep_config, run_ablation, run_sweep
from tools.charts import write_agreement_chart
from tools.errors import ConfigError, InputError
from tools.utils import RunManifest, resolve_out_dir

logger = logging.getLogger(__name__)

LEMMA_MIN_AGREEMENT = 0.999


class ExperimentPipeline:
    """
    Steps of one experiment, all writing below a single output directory.

    Args:
        cfg (dict): Validated configuration (see tools.utils.load_config).
        out_dir (str): Optional output root overriding $CFX_OUT_DIR and output.dir.
    """

    def __init__(self, cfg, out_dir=None):
        self.cfg = copy.deepcopy(cfg)
        self.out_dir = resolve_out_dir(self.cfg, out_dir)
        self.dataset_id = self._dataset_id()
        os.makedirs(self.out_dir, exist_ok=True)

    def apply_overrides(self, runs=None, sizes=None, seed=None, jobs=None):
        """Command-line overrides of the sweep section."""
        sweep = self.cfg["sweep"]
        if runs is not None:
            if runs < 1:
                raise ConfigError("at least one run per size is required", "--runs")
            sweep["runs_per_size"] = runs
        if sizes is not None:
            if not sizes or any(s < 1 for s in sizes) or sorted(set(sizes)) != list(sizes):
                raise ConfigError("query sizes must be positive and strictly ascending", "--sizes")
            sweep["query_sizes"] = list(sizes)
        if seed is not None:
            sweep["base_seed"] = seed
        if jobs is not None:
            if jobs < 1:
                raise ConfigError("jobs must be at least 1", "--jobs")
            sweep["jobs"] = jobs

    def _dataset_id(self):
        source = self.cfg["dataset"]["source"]
        if source == "csv":
            return os.path.splitext(os.path.basename(self.cfg["dataset"]["csv_path"]))[0]
        return source

    def path(self, *parts):
        return os.path.join(self.out_dir, *parts)

    def _manifest(self, command):
        return RunManifest(command=command, config=self.cfg)

    #========================================#
    # DATA AND CLOUD MODEL
    #========================================#

    def load_splits(self):
        dataset_cfg = self.cfg["dataset"]
        if dataset_cfg["source"] == "csv" and not os.path.isfile(dataset_cfg["csv_path"]):
            raise ConfigError(f"dataset file not found: {dataset_cfg['csv_path']}", "dataset.csv_path.value")
        dataset = load_dataset(dataset_cfg)
        return split(dataset, dataset_cfg["seed"])

    def train_cloud(self):
        """
        Train the cloud model on the train split and save it with its
        normalizer, requested epoch checkpoints, the split CSVs and a manifest.
        """
        manifest = self._manifest("train-cloud")
        start = time.perf_counter()
        logger.info("Generating dataset and splits...")
        splits = self.load_splits()
        os.makedirs(self.path("splits"), exist_ok=True)
        for name, part in (("train", splits.train), ("query", splits.query), ("eval", splits.eval)):
            target = self.path("splits", f"{name}.csv")
            part.to_csv(target)
            manifest.add_artifact(f"split_{name}", target)

        cloud = self.cfg["cloud"]
        normalizer = fit_normalizer(splits.train)
        arch = Architecture.from_hidden(splits.train.dim, cloud["hidden"])
        train_cfg = TrainConfig(learning_rate=cloud["learning_rate"], batch_size=cloud["batch_size"],
                                epochs=cloud["epochs"], seed=cloud["seed"])
        wanted = set(cloud["checkpoints"])
        for epoch in wanted:
            if not 1 <= epoch <= train_cfg.epochs:
                raise ConfigError(f"checkpoint epoch {epoch} is outside 1..{train_cfg.epochs}", "cloud.checkpoints.value")
        if wanted:
            os.makedirs(self.path("checkpoints"), exist_ok=True)

        def save_checkpoint(epoch, model, _loss):
            if epoch in wanted:
                target = self.path("checkpoints", f"cloud_epoch_{epoch:03d}.json")
                model.save(target)
                manifest.add_artifact(f"checkpoint_{epoch:03d}", target)

        logger.info("Training cloud model %s for %d epochs...", arch.describe(), train_cfg.epochs)
        model = train(mlp_init(arch, cloud["seed"]), normalizer.apply(splits.train.features), splits.train.labels,
                      train_cfg, on_epoch=save_checkpoint)

        model.save(self.path("cloud_model.json"))
        normalizer.save(self.path("cloud_normalizer.json"))
        manifest.add_artifact("cloud_model", self.path("cloud_model.json"))
        manifest.add_artifact("cloud_normalizer", self.path("cloud_normalizer.json"))
        manifest.timings["train_cloud"] = time.perf_counter() - start
        manifest.write(self.path("manifest_train-cloud.json"))
        train_acc = float((model.predict_labels(normalizer.apply(splits.train.features)) == splits.train.labels).mean())
        logger.info("Cloud model train accuracy: %.4f", train_acc)
        return model, normalizer

    def load_cloud(self):
        model_path = self.path("cloud_model.json")
        if not os.path.isfile(model_path):
            raise InputError(f"no cloud model at {model_path}; run train-cloud first")
        return MlpModel.load(model_path), Normalizer.load(self.path("cloud_normalizer.json"))

    def sweep_config(self):
        model, normalizer = self.load_cloud()
        return build_sweep_config(self.cfg, self.dataset_id, self.load_splits(), model, normalizer)

    #========================================#
    # SWEEPS
    #========================================#

    def sweep(self):
        """Run the main sweep and write records.csv, aggregates.csv and a manifest."""
        manifest = self._manifest("sweep")
        start = time.perf_counter()
        table = run_sweep(self.sweep_config())
        dropped = int(table.get_all_data("dropped_pairs").sum())
        if dropped:
            logger.warning("%d CF/CCF pairs were dropped by failed searches", dropped)
        manifest.counters.update(api_calls=int(table.get_all_data("api_calls").sum()), dropped_pairs=dropped)
        records, aggregates = table.write_csv(self.path("records.csv"), self.path("aggregates.csv"))
        manifest.add_artifact("records", records)
        manifest.add_artifact("aggregates", aggregates)
        manifest.timings["sweep"] = time.perf_counter() - start
        manifest.write(self.path("manifest_sweep.json"))
        logger.info("Wrote %d records to %s", len(table), records)
        return table

    def ablate(self, name):
        """Run one ablation; per-variant CSVs and a combined summary.csv go to ablation_<name>/."""
        manifest = self._manifest(f"ablate {name}")
        start = time.perf_counter()
        outcome = run_ablation(name, self.sweep_config(), self.cfg["attack"]["imbalance_ratio"])
        folder = self.path(f"ablation_{name}")
        os.makedirs(folder, exist_ok=True)
        for variant, table in outcome:
            records, aggregates = table.write_csv(os.path.join(folder, f"{variant}_records.csv"),
                                                  os.path.join(folder, f"{variant}_aggregates.csv"))
            manifest.add_artifact(f"{variant}_records", records)
            manifest.add_artifact(f"{variant}_aggregates", aggregates)
        summary_path = os.path.join(folder, "summary.csv")
        ablation_summary(outcome).to_csv(summary_path, index=False, lineterminator="\n")
        manifest.add_artifact("summary", summary_path)
        manifest.timings["ablate"] = time.perf_counter() - start
        manifest.write(os.path.join(folder, "manifest.json"))
        return outcome

    #========================================#
    # REPORTING
    #========================================#

    @staticmethod
    def plot(results_csv, out_svg, cost_axis="queries", title=None):
        """Chart an aggregates or ablation summary CSV."""
        frame = read_aggregates(results_csv)
        group = "strategy"
        if "variant" in frame.columns:
            frame = frame.copy()
            multi = frame["strategy"].nunique() > 1
            frame["series"] = frame["variant"].astype(str) + (" / " + frame["strategy"] if multi else "")
            group = "series"
        return write_agreement_chart(frame, out_svg, cost_axis, title, group_column=group)

    def lemma_check(self, n_models=20, dims=(2, 5, 10)):
        """Extract random linear cloud models from one CF/CCF pair each; returns (rows, passed)."""
        rows = lemma_check(dims=dims, n_models=n_models, seed=self.cfg["sweep"]["base_seed"])
        target = self.path("lemma_check.csv")
        pd.DataFrame(rows).to_csv(target, index=False, lineterminator="\n")
        passed = all(r["converged"] and r["agreement"] >= LEMMA_MIN_AGREEMENT for r in rows)
        worst = min((r["agreement"] for r in rows if r["converged"]), default=float("nan"))
        logger.info("Linear recovery check: worst agreement %.5f over %d models (%s)", worst, len(rows),
                    "pass" if passed else "FAIL")
        return rows, passed

    def diagnose(self, seeds=30):
        """
        Boundary shift of single-query substitutes and the feature leakage
        ranking of the cloud's counterfactuals over the query split.

        Writes boundary_shift.csv, feature_leakage.csv and manifest_diagnose.json.

        Returns:
            tuple: (boundary shift DataFrame, feature leakage DataFrame).
        """
        manifest = self._manifest("diagnose")
        start = time.perf_counter()
        cfg = self.sweep_config()
        shifts = pd.DataFrame(boundary_shift_study(cfg, seeds), columns=["seed", "strategy", "boundary_shift"])
        shift_path = self.path("boundary_shift.csv")
        shifts.to_csv(shift_path, index=False, lineterminator="\n")
        manifest.add_artifact("boundary_shift", shift_path)
        for strategy, mean in shifts.groupby("strategy", sort=False)["boundary_shift"].mean().items():
            logger.info("Mean boundary shift of %s over %d seeds: %.4f", strategy, seeds, mean)

        oracle = CfOracle(cfg.cloud_model, cfg.cf_config, cfg.cloud_normalizer)
        results = oracle.explain_batch(cfg.splits.query.features)
        ranking, scores, tied = feature_leakage_rank(results, cfg.cloud_normalizer)
        names = cfg.splits.query.feature_names
        leakage = pd.DataFrame({
            "feature": [names[i] for i in ranking],
            "score": scores[ranking],
            "rank": range(1, len(ranking) + 1),
        })
        leakage_path = self.path("feature_leakage.csv")
        leakage.to_csv(leakage_path, index=False, lineterminator="\n")
        manifest.add_artifact("feature_leakage", leakage_path)
        if tied:
            logger.warning("Feature leakage ranking has ties; adjacent ranks are not meaningful")
        logger.info("Most moved feature: %s", leakage["feature"].iloc[0])

        manifest.counters.update(oracle.meter.snapshot())
        manifest.timings["diagnose"] = time.perf_counter() - start
        manifest.write(self.path("manifest_diagnose.json"))
        return shifts, leakage
