import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from classes.Mlp import mlp_init, train
from tools.errors import ConfigError, InputError

logger = logging.getLogger(__name__)

SOURCES = ("query", "cf", "ccf")
STRATEGIES = ("steal_ml", "steal_ml_coreset", "model_extraction", "dual_cf", "dual_cfx")


@dataclass(frozen=True)
class AttackBudget:
    """
    Cost of one attack.

    Args:
        initial_queries (int): Queries the attacker chose to send.
        api_calls (int): Billed interactions, read from the oracle meter.
    """
    initial_queries: int
    api_calls: int

    def __post_init__(self):
        if self.api_calls < self.initial_queries:
            raise InputError(f"{self.api_calls} API calls cannot cover {self.initial_queries} queries")


class SubstituteTrainingSet:
    """
    Labeled instances gathered by an attack, plus the CF/CCF pairing.

    Args:
        features (np.ndarray): Raw-space instances [n x d].
        labels (np.ndarray): Cloud labels [n].
        sources (list): query, cf or ccf per item.
        pairing (list): (cf_index, ccf_index) tuples, or None.
        dropped (int): Pairs (or CFs) discarded because the solver did not converge.
        budget (AttackBudget): Cost of collecting the set.
    """

    def __init__(self, features, labels, sources, pairing=None, dropped=0, budget=None):
        labels = np.array(labels, dtype=int).reshape(-1)
        features = np.array(features, dtype=float)
        if features.size == 0 and features.ndim < 2:
            raise InputError("features of an empty set must be shaped [0 x d]")
        if features.ndim != 2 or features.shape[0] != labels.shape[0] or len(sources) != labels.shape[0]:
            raise InputError("features, labels and sources must have the same length")
        for s in sources:
            if s not in SOURCES:
                raise InputError(f"unknown item source {s!r}")
        pairing = [tuple(int(i) for i in p) for p in pairing] if pairing else None
        if pairing:
            used = [i for p in pairing for i in p]
            if len(set(used)) != len(used) or min(used) < 0 or max(used) >= labels.shape[0]:
                raise InputError("pairing indices must be valid and disjoint")
            for a, b in pairing:
                if labels[a] == labels[b]:
                    raise InputError(f"paired items {a} and {b} share label {labels[a]}")
        self.features = features
        self.labels = labels
        self.sources = list(sources)
        self.pairing = pairing
        self.dropped = int(dropped)
        self.budget = budget

    def __len__(self):
        return self.labels.shape[0]

    def to_frame(self, feature_names=None):
        names = list(feature_names) if feature_names is not None else [f"x{i + 1}" for i in range(self.features.shape[1])]
        frame = pd.DataFrame(self.features, columns=names)
        frame["label"] = self.labels
        frame["source"] = self.sources
        return frame

    def to_csv(self, path, feature_names=None):
        """Write the items and, when pairs exist, a <path stem>.pairs.csv sidecar."""
        self.to_frame(feature_names).to_csv(path, index=False, lineterminator="\n")
        if self.pairing:
            sidecar = path[:-4] + ".pairs.csv" if path.endswith(".csv") else path + ".pairs.csv"
            pd.DataFrame(self.pairing, columns=["cf_index", "ccf_index"]).to_csv(
                sidecar, index=False, lineterminator="\n")
            return path, sidecar
        return path, None

    @classmethod
    def from_csv(cls, path):
        frame = pd.read_csv(path)
        names = [c for c in frame.columns if c not in ("label", "source")]
        pairing = None
        sidecar = path[:-4] + ".pairs.csv" if path.endswith(".csv") else path + ".pairs.csv"
        try:
            pairs = pd.read_csv(sidecar)
            pairing = list(pairs.itertuples(index=False, name=None))
        except FileNotFoundError:
            pass
        return cls(frame[names].to_numpy(), frame["label"].to_numpy(), frame["source"].tolist(), pairing)


def _queries(queries):
    X = np.asarray(queries, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("an attack needs at least one query")
    return X


def _budget(oracle, before, n_queries):
    return AttackBudget(n_queries, oracle.meter.total - before)


def steal_ml(oracle, queries):
    """Label the queries with the cloud prediction API only."""
    X = _queries(queries)
    before = oracle.meter.total
    labels, _ = oracle.predict_batch(X)
    return SubstituteTrainingSet(X, labels, ["query"] * X.shape[0], budget=_budget(oracle, before, X.shape[0]))


def coreset_select(pool, k, seed, space=None):
    """
    Greedy k-center selection.

    The first center is drawn uniformly with the seeded generator; every next
    one maximizes the minimum Euclidean distance to the centers picked so far,
    ties going to the lowest pool index.

    Args:
        pool (np.ndarray): Candidate instances [n x d], raw space.
        k (int): Number of points to pick.
        seed (int): Seed of the first draw.
        space (Normalizer): Optional normalizer; distances are measured in its output space.

    Returns:
        np.ndarray: The selected raw instances [k x d], in selection order.
    """
    pool = np.asarray(pool, dtype=float)
    n = pool.shape[0]
    if k < 1 or k > n:
        raise InputError(f"cannot select {k} points out of a pool of {n}")
    embedded = space.apply(pool) if space is not None else pool
    rng = np.random.default_rng(seed)
    selected = [int(rng.integers(n))]
    min_distances = cdist(embedded, embedded[selected]).reshape(-1)
    min_distances[selected[0]] = -np.inf
    while len(selected) < k:
        idx = int(np.argmax(min_distances))
        selected.append(idx)
        min_distances = np.minimum(min_distances, cdist(embedded, embedded[[idx]]).reshape(-1))
        min_distances[idx] = -np.inf
    return pool[selected]


def steal_ml_coreset(oracle, pool, k, seed, space=None):
    """Steal-ML over k CoreSet-selected queries out of the pool."""
    chosen = coreset_select(pool, k, seed, space)
    return steal_ml(oracle, chosen)


def model_extraction(oracle, queries):
    """
    Keep each query with its label and its counterfactual.

    The API answers prediction and CF in one call, so each query costs one
    explain call. A non-converged CF drops the cf item only.
    """
    X = _queries(queries)
    before = oracle.meter.total
    results = oracle.explain_batch(X)
    features, labels, sources = [], [], []
    dropped = 0
    for r in results:
        features.append(r.origin)
        labels.append(r.origin_label)
        sources.append("query")
        if r.converged:
            features.append(r.explanation)
            labels.append(r.cf_label)
            sources.append("cf")
        else:
            dropped += 1
    if dropped:
        logger.warning("Dropped %d non-converged counterfactuals", dropped)
    return SubstituteTrainingSet(features, labels, sources, dropped=dropped,
                                 budget=_budget(oracle, before, X.shape[0]))


def dual_cf(oracle, queries, include_x=False):
    """
    DualCF: train on each CF and the CF of that CF (CCF).

    Args:
        oracle (CfOracle): The cloud API.
        queries (np.ndarray): Initial queries [n x d].
        include_x (bool): DualCFX; also keep each query, labeled like its CCF at no extra cost.

    Returns:
        SubstituteTrainingSet: Pairs are recorded in `pairing`. A pair with a
        non-converged leg is dropped and counted.
    """
    X = _queries(queries)
    before = oracle.meter.total
    features, labels, sources, pairing = [], [], [], []
    dropped = 0
    for cf, ccf in oracle.explain_of_explain_batch(X):
        if include_x:
            features.append(cf.origin)
            labels.append(cf.origin_label)
            sources.append("query")
        if not (cf.converged and ccf.converged):
            dropped += 1
            continue
        pairing.append((len(labels), len(labels) + 1))
        features.extend([cf.explanation, ccf.explanation])
        labels.extend([cf.cf_label, ccf.cf_label])
        sources.extend(["cf", "ccf"])
    if dropped:
        logger.warning("Dropped %d of %d CF/CCF pairs", dropped, X.shape[0])
    if not labels:
        features = np.empty((0, X.shape[1]))
    return SubstituteTrainingSet(features, labels, sources, pairing or None, dropped,
                                 _budget(oracle, before, X.shape[0]))


def run_strategy(name, oracle, queries, pool=None, seed=0, space=None):
    """Dispatch a strategy by name. steal_ml_coreset picks len(queries) points out of pool."""
    if name == "steal_ml":
        return steal_ml(oracle, queries)
    if name == "steal_ml_coreset":
        if pool is None:
            raise InputError("steal_ml_coreset needs a candidate pool")
        return steal_ml_coreset(oracle, pool, len(queries), seed, space)
    if name == "model_extraction":
        return model_extraction(oracle, queries)
    if name == "dual_cf":
        return dual_cf(oracle, queries, include_x=False)
    if name == "dual_cfx":
        return dual_cf(oracle, queries, include_x=True)
    raise ConfigError(f"unknown strategy {name!r}; expected one of {STRATEGIES}", "sweep.strategies")


def paired_order(pairing, n):
    """
    Build an epoch order callable keeping each pair adjacent on an even offset.

    Unpaired items are grouped two by two, so with an even batch size no
    pair straddles a batch boundary.
    """
    paired = {i for p in pairing for i in p}
    singles = [i for i in range(n) if i not in paired]

    def order(rng, _n):
        loose = rng.permutation(singles).tolist() if singles else []
        units = [list(p) for p in pairing]
        units.extend(loose[i:i + 2] for i in range(0, len(loose) - 1, 2))
        tail = [loose[-1]] if len(loose) % 2 else []
        perm = []
        for u in rng.permutation(len(units)):
            if rng.random() < 0.5:
                perm.extend(units[u])
            else:
                perm.extend(reversed(units[u]))
        return np.array(perm + tail, dtype=int)

    return order


def train_substitute(tset, arch, cfg, normalizer, paired_batching=True, min_steps=0):
    """
    Train the attacker's model on a SubstituteTrainingSet.

    Small sets fill a single batch, so cfg.epochs alone can leave them at
    chance level. Epochs are raised until at least min_steps optimizer steps
    are taken; larger sets keep cfg.epochs.

    Args:
        tset (SubstituteTrainingSet): Collected instances (raw space).
        arch (Architecture): Substitute architecture.
        cfg (TrainConfig): Training settings; cfg.seed seeds both init and shuffles.
        normalizer (Normalizer): Substitute normalizer, fitted on the full query split.
        paired_batching (bool): Keep every CF and its CCF in the same batch.
        min_steps (int): Lower bound on optimizer steps (0 keeps cfg.epochs).

    Returns:
        MlpModel: Substitute operating on normalizer.apply(x).
    """
    if len(tset) == 0:
        raise InputError("cannot train a substitute on an empty set")
    use_pairs = paired_batching and bool(tset.pairing)
    if use_pairs and cfg.batch_size % 2:
        raise ConfigError(f"paired batching needs an even batch size, got {cfg.batch_size}", "attack.batch_size")
    if min_steps < 0:
        raise ConfigError(f"min_steps cannot be negative, got {min_steps}", "attack.min_steps")
    batches = -(-len(tset) // int(cfg.batch_size))
    epochs = max(int(cfg.epochs), -(-int(min_steps) // batches))
    if epochs != cfg.epochs:
        logger.debug("Training %d items for %d epochs to reach %d steps", len(tset), epochs, min_steps)
        cfg = replace(cfg, epochs=epochs)
    model = mlp_init(arch, cfg.seed, input_dim=tset.features.shape[1])
    order = paired_order(tset.pairing, len(tset)) if use_pairs else None
    return train(model, normalizer.apply(tset.features), tset.labels, cfg, order=order)
