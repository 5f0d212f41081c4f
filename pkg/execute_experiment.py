import os
import sys
import time
import argparse
import logging

from classes.Experiment import ExperimentPipeline
from classes.Sweep import ABLATIONS
from tools.errors import CfxError, ConfigError
from tools.utils import load_config, setup_logging

logger = logging.getLogger("cfx.experiment")


class FullReproduction:
    def __init__(self, config_path, out_dir=None, jobs=None, runs=None):
        """Run every stage of one experiment config end to end.

        Args:
            config_path: Path of the JSON experiment configuration
            out_dir: Output root overriding $CFX_OUT_DIR and output.dir
            jobs: Parallel sweep cells (None keeps the config value)
            runs: Runs per query size (None keeps the config value)
        """
        self.config_path = config_path
        self.pipeline = ExperimentPipeline(load_config(config_path), out_dir)
        self.pipeline.apply_overrides(runs=runs, jobs=jobs)
        self.timings = {}

    def _timed(self, name, step, *args):
        start = time.perf_counter()
        result = step(*args)
        self.timings[name] = time.perf_counter() - start
        logger.info("%s finished in %.1f s", name, self.timings[name])
        return result

    def train_cloud(self):
        logger.info("Training the cloud model...")
        return self._timed("train-cloud", self.pipeline.train_cloud)

    def main_sweep(self):
        logger.info("Running the main sweep...")
        self._timed("sweep", self.pipeline.sweep)
        return self.pipeline.plot(self.pipeline.path("aggregates.csv"), self.pipeline.path("agreement.svg"),
                                  "queries", self.pipeline.dataset_id)

    def ablations(self, names=ABLATIONS):
        """Run each ablation and chart its summary.

        Returns:
            list: Paths of the ablation charts.
        """
        charts = []
        for name in names:
            logger.info("Running the %s ablation...", name)
            self._timed(f"ablate {name}", self.pipeline.ablate, name)
            folder = self.pipeline.path(f"ablation_{name}")
            charts.append(self.pipeline.plot(os.path.join(folder, "summary.csv"), os.path.join(folder, "summary.svg"),
                                             "queries", f"{self.pipeline.dataset_id}: {name}"))
        return charts

    def diagnose(self):
        logger.info("Measuring boundary shift and feature leakage...")
        return self._timed("diagnose", self.pipeline.diagnose)

    def lemma_check(self):
        logger.info("Checking exact recovery of linear models...")
        _, passed = self._timed("lemma-check", self.pipeline.lemma_check)
        return passed

    def run(self, skip_ablations=False):
        self.train_cloud()
        self.main_sweep()
        if not skip_ablations:
            self.ablations()
        self.diagnose()
        passed = self.lemma_check()
        total = sum(self.timings.values())
        logger.info("All stages done in %.1f s; results in %s", total, self.pipeline.out_dir)
        return passed


def main():
    parser = argparse.ArgumentParser(description='Reproduce the full study for one experiment config')
    parser.add_argument('config', help='JSON experiment configuration')
    parser.add_argument('--out-dir', default=None)
    parser.add_argument('--jobs', type=int, default=None)
    parser.add_argument('--runs', type=int, default=None)
    parser.add_argument('--skip-ablations', action='store_true')
    parser.add_argument('-v', '--verbose', action='store_true')
    args = parser.parse_args()
    setup_logging(args.verbose)

    try:
        reproduction = FullReproduction(args.config, args.out_dir, args.jobs, args.runs)
        passed = reproduction.run(args.skip_ablations)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return 1
    except CfxError as exc:
        logger.error("%s", exc)
        return 2
    return 0 if passed else 2


if __name__ == "__main__":
    sys.exit(main())
