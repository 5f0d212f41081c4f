import logging

import numpy as np
from scipy import stats

from classes.Dataset import Dataset, Normalizer
from classes.LinearExtract import extract_linear
from classes.Mlp import Layer, MlpModel
from classes.Oracle import CfConfig, CfOracle
from tools.errors import InputError

logger = logging.getLogger(__name__)

GRID_SIDE = 200
PROBE_SAMPLES = 10000


class NormalizedModel:
    """An MlpModel together with the normalizer its inputs go through."""

    def __init__(self, model, normalizer):
        if normalizer.dim != model.input_dim:
            raise InputError(f"normalizer has {normalizer.dim} features, model expects {model.input_dim}")
        self.model = model
        self.normalizer = normalizer

    @property
    def input_dim(self):
        return self.model.input_dim

    def predict_proba(self, X):
        return self.model.predict_proba(self.normalizer.apply(X))

    def predict_labels(self, X):
        return (self.predict_proba(X) >= 0.5).astype(int)


def _points(eval_set):
    X = eval_set.features if isinstance(eval_set, Dataset) else np.asarray(eval_set, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("evaluation set must be a non-empty [n x d] array")
    return X


def agreement(cloud, substitute, eval_set):
    """
    Fraction of evaluation points on which both models predict the same label.

    Each model applies its own normalizer, so raw features are passed in.
    """
    X = _points(eval_set)
    return float(np.mean(cloud.predict_labels(X) == substitute.predict_labels(X)))


def probe_grid(low, high, seed=0):
    """
    Probe points over the data domain: a 200x200 grid in 2-D, otherwise
    10,000 uniform samples drawn with the given seed.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    if low.shape[0] == 2:
        xs = np.linspace(low[0], high[0], GRID_SIDE)
        ys = np.linspace(low[1], high[1], GRID_SIDE)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])
    return np.random.default_rng(seed).uniform(low, high, size=(PROBE_SAMPLES, low.shape[0]))


def boundary_shift(cloud, substitute, probes):
    """Disagreement on the probes, used as a proxy for boundary displacement."""
    return 1.0 - agreement(cloud, substitute, probes)


def confidence_profile(model, points, hi):
    """Fraction of points predicted with probability >= hi or <= 1 - hi."""
    if not 0.5 < hi < 1.0:
        raise InputError(f"hi must lie in (0.5, 1), got {hi}")
    probs = model.predict_proba(_points(points))
    return float(np.mean((probs >= hi) | (probs <= 1.0 - hi)))


def feature_leakage_rank(results, normalizer):
    """
    Rank features by how far counterfactuals move them.

    Args:
        results (list): Converged CfResults.
        normalizer (Normalizer): The normalizer of the CF search space.

    Returns:
        tuple: (ranking as feature indices, mean |c_i - x_i| per feature in
        normalized space, True when two adjacent ranks are tied).
    """
    kept = [r for r in results if r.converged]
    if not kept:
        raise InputError("feature leakage needs at least one converged result")
    origins = normalizer.apply(np.stack([r.origin for r in kept]))
    explanations = normalizer.apply(np.stack([r.explanation for r in kept]))
    scores = np.mean(np.abs(explanations - origins), axis=0)
    ranking = np.argsort(-scores, kind="stable")
    ordered = scores[ranking]
    tied = bool(np.any(np.isclose(ordered[:-1], ordered[1:], rtol=1e-6, atol=1e-9)))
    return ranking, scores, tied


def paired_test(table, strategy_a, strategy_b, query_size, dataset=None):
    """
    One-sided paired t-test that strategy_a agrees better than strategy_b.

    Runs are matched by their position within each (strategy, size) group.

    Returns:
        float: p-value of H1 mean(a - b) > 0.
    """
    frame = table.records_frame()
    if dataset is not None:
        frame = frame[frame["dataset"] == dataset]
    a = frame[(frame["strategy"] == strategy_a) & (frame["query_size"] == query_size)]["agreement"].to_numpy()
    b = frame[(frame["strategy"] == strategy_b) & (frame["query_size"] == query_size)]["agreement"].to_numpy()
    if a.size == 0 or a.size != b.size:
        raise InputError(f"need matched runs, got {a.size} vs {b.size}")
    if np.allclose(a, b):
        return 1.0
    return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


#========================================#
# EXACT RECOVERY OF LINEAR MODELS
#========================================#

def random_linear_cloud(dim, rng):
    """One-layer sigmoid model whose boundary crosses [-2, 2]^dim, with |theta| in [1, 3]."""
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    theta = direction * rng.uniform(1.0, 3.0)
    anchor = rng.uniform(-2.0, 2.0, size=dim)
    return MlpModel([Layer(theta.reshape(1, -1), np.array([-theta @ anchor]), "sigmoid")], dim)


def lemma_check(dims=(2, 5, 10), n_models=20, seed=0, cf_config=None, n_eval=PROBE_SAMPLES):
    """
    Extract random linear cloud models from a single CF/CCF pair each.

    Models cycle over dims; each is served with an identity normalizer and
    scored on n_eval uniform points of [-3, 3]^d.

    Returns:
        list: One dict per model with dim, converged and agreement.
    """
    rng = np.random.default_rng(seed)
    cf_config = cf_config or CfConfig()
    rows = []
    for i in range(n_models):
        dim = dims[i % len(dims)]
        cloud = random_linear_cloud(dim, rng)
        oracle = CfOracle(cloud, cf_config, Normalizer.identity(dim))
        query = rng.uniform(-3.0, 3.0, size=dim)
        cf, ccf = oracle.explain_of_explain(query)
        evaluation = rng.uniform(-3.0, 3.0, size=(n_eval, dim))
        row = {"model": i, "dim": dim, "converged": cf.converged and ccf.converged, "agreement": float("nan")}
        if row["converged"]:
            extracted = extract_linear(cf.explanation, ccf.explanation, ccf.cf_label)
            row["agreement"] = agreement(cloud, extracted, evaluation)
        else:
            logger.warning("Model %d: CF/CCF pair did not converge", i)
        rows.append(row)
    return rows
