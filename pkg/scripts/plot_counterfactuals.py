import os
import sys
import glob
import argparse
import logging

# Add the project path so that classes and tools can be read
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.append(project_root)

import numpy as np
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt

from classes.Dataset import Normalizer, SYNTHETIC_HIGH, SYNTHETIC_LOW, load_csv
from classes.Evaluation import confidence_profile, NormalizedModel
from classes.Mlp import MlpModel
from classes.Oracle import CfConfig, CfOracle
from tools.utils import setup_logging

logger = logging.getLogger(__name__)


class CounterfactualPlotter:
    """
    Draw a 2-D cloud model's probability contours together with sampled
    queries, their counterfactuals (CF) and the counterfactuals of those (CCF).

    The experiment directory is the one written by `cfx train-cloud`.
    """

    def __init__(self, experiment_dir, threshold=0.6):
        self.experiment_dir = experiment_dir
        self.normalizer = Normalizer.load(os.path.join(experiment_dir, 'cloud_normalizer.json'))
        self.model = MlpModel.load(os.path.join(experiment_dir, 'cloud_model.json'))
        if self.model.input_dim != 2:
            raise ValueError(f"only 2-D models can be drawn, got {self.model.input_dim} features")
        self.oracle = CfOracle(self.model, CfConfig(threshold=threshold), self.normalizer)
        self.checkpoints = sorted(glob.glob(os.path.join(experiment_dir, 'checkpoints', 'cloud_epoch_*.json')))

    def _grid(self, resolution=200):
        xs = np.linspace(SYNTHETIC_LOW, SYNTHETIC_HIGH, resolution)
        gx, gy = np.meshgrid(xs, xs)
        return gx, gy, np.column_stack([gx.ravel(), gy.ravel()])

    def _contours(self, ax, model):
        gx, gy, points = self._grid()
        probs = NormalizedModel(model, self.normalizer).predict_proba(points).reshape(gx.shape)
        filled = ax.contourf(gx, gy, probs, levels=np.linspace(0, 1, 11), cmap='RdBu_r', alpha=0.75)
        ax.contour(gx, gy, probs, levels=[0.5], colors='black', linewidths=1.5)
        return filled

    def plot_counterfactuals(self, n_queries, seed, out_path):
        """Contours of the final model plus n_queries query -> CF -> CCF chains."""
        rng = np.random.default_rng(seed)
        queries = rng.uniform(SYNTHETIC_LOW, SYNTHETIC_HIGH, size=(n_queries, 2))
        pairs = self.oracle.explain_of_explain_batch(queries)

        fig, ax = plt.subplots(figsize=(7, 6))
        filled = self._contours(ax, self.model)
        for cf, ccf in pairs:
            ax.plot(*cf.origin, 'ko', markersize=4)
            if cf.converged:
                ax.annotate('', xy=cf.explanation, xytext=cf.origin,
                            arrowprops=dict(arrowstyle='->', color='#444444', lw=0.8))
                ax.plot(*cf.explanation, 'o', color='#ffdd00', markeredgecolor='black', markersize=6)
            if cf.converged and ccf.converged:
                ax.plot(*ccf.explanation, 's', color='#22cc66', markeredgecolor='black', markersize=6)
        ax.plot([], [], 'ko', label='query')
        ax.plot([], [], 'o', color='#ffdd00', markeredgecolor='black', label='CF')
        ax.plot([], [], 's', color='#22cc66', markeredgecolor='black', label='CCF')
        ax.set_xlim(SYNTHETIC_LOW, SYNTHETIC_HIGH)
        ax.set_ylim(SYNTHETIC_LOW, SYNTHETIC_HIGH)
        ax.set_xlabel('x1')
        ax.set_ylabel('x2')
        ax.set_title(f'Counterfactual explanations (threshold {self.oracle.cf_config.threshold:g})')
        ax.legend(loc='upper right')
        fig.colorbar(filled, ax=ax, label='p(class 1)')
        fig.savefig(out_path, bbox_inches='tight')
        plt.close(fig)
        return out_path

    def plot_checkpoints(self, train_csv, out_path, hi=0.9):
        """One contour panel per saved checkpoint, titled with its over-confidence fraction."""
        if not self.checkpoints:
            raise ValueError(f"no checkpoints under {self.experiment_dir}")
        train = load_csv(train_csv, "label", "1")
        fig, axes = plt.subplots(1, len(self.checkpoints), figsize=(4.5 * len(self.checkpoints), 4), squeeze=False)
        for ax, path in zip(axes[0], self.checkpoints):
            model = MlpModel.load(path)
            self._contours(ax, model)
            fraction = confidence_profile(NormalizedModel(model, self.normalizer), train.features, hi)
            epoch = int(os.path.splitext(os.path.basename(path))[0].split('_')[-1])
            ax.set_title(f'epoch {epoch}: {fraction:.2f} beyond {hi:g}')
            ax.set_xlabel('x1')
            ax.set_ylabel('x2')
            logger.info('Epoch %d: fraction of confident training points %.4f', epoch, fraction)
        fig.savefig(out_path, bbox_inches='tight')
        plt.close(fig)
        return out_path


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description='Plot counterfactuals and probability contours of a 2-D cloud model')
    parser.add_argument('experiment_dir', help='Directory written by train-cloud')
    parser.add_argument('--queries', type=int, default=20)
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--threshold', type=float, default=0.6)
    parser.add_argument('--format', choices=['pdf', 'png'], default='pdf')
    args = parser.parse_args()
    setup_logging()

    plotter = CounterfactualPlotter(args.experiment_dir, args.threshold)
    print('Plotting counterfactual explanations...')
    plotter.plot_counterfactuals(args.queries, args.seed,
                                 os.path.join(args.experiment_dir, f'counterfactuals.{args.format}'))
    if plotter.checkpoints:
        print('Plotting checkpoint contours...')
        plotter.plot_checkpoints(os.path.join(args.experiment_dir, 'splits', 'train.csv'),
                                 os.path.join(args.experiment_dir, f'checkpoints.{args.format}'))
