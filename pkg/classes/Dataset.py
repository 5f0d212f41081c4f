import json
import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from tools.errors import InputError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-6
SYNTHETIC_LOW = 0.0
SYNTHETIC_HIGH = 6.0


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Labeled tabular instances.

    Args:
        features (np.ndarray): Feature matrix [n x d].
        labels (np.ndarray): 0/1 labels [n].
        feature_names (tuple): One name per column.
        provenance (str): synthetic-linear, synthetic-nonlinear or csv:<path>.
    """
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple
    provenance: str

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        labels = np.array(self.labels).astype(int).reshape(-1)
        if features.ndim != 2 or features.shape[0] == 0:
            raise InputError("a dataset needs at least one row")
        if labels.shape[0] != features.shape[0]:
            raise InputError(f"{features.shape[0]} rows but {labels.shape[0]} labels")
        if not np.all((labels == 0) | (labels == 1)):
            raise InputError("labels must be 0 or 1")
        if len(self.feature_names) != features.shape[1]:
            raise InputError(f"{len(self.feature_names)} feature names for {features.shape[1]} columns")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.features[indices], self.labels[indices], self.feature_names, self.provenance)

    def class_counts(self):
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def to_frame(self, label_column="label"):
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        frame[label_column] = self.labels
        return frame

    def to_csv(self, path):
        """Cache format mirrors the CSV input: header row, one feature per column, label last."""
        self.to_frame().to_csv(path, index=False, lineterminator="\n")


@dataclass(frozen=True)
class SplitSet:
    train: Dataset
    query: Dataset
    eval: Dataset

    def sizes(self):
        return len(self.train), len(self.query), len(self.eval)


class Normalizer:
    """
    Per-feature standardization x_hat = (x - mean) / std, std floored at 1e-6.
    """

    def __init__(self, mean, std):
        mean = np.array(mean, dtype=float).reshape(-1)
        std = np.maximum(np.array(std, dtype=float).reshape(-1), STD_FLOOR)
        if mean.shape != std.shape:
            raise InputError("mean and std must have the same length")
        mean.flags.writeable = False
        std.flags.writeable = False
        self.mean = mean
        self.std = std

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self):
        return self.mean.shape[0]

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise InputError(f"normalizer fitted on {self.dim} features, got {X.shape[-1]}")
        return X

    def apply(self, X):
        return (self._check(X) - self.mean) / self.std

    def inverse(self, X_hat):
        return self._check(X_hat) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload):
        return cls(payload["mean"], payload["std"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def fit_normalizer(reference):
    """Fit mean and population std per feature on a Dataset or feature matrix."""
    X = reference.features if isinstance(reference, Dataset) else np.asarray(reference, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("cannot fit a normalizer on an empty reference")
    return Normalizer(X.mean(axis=0), X.std(axis=0))


def _uniform_square(n, seed):
    if n < 4:
        raise InputError(f"a synthetic dataset needs at least 4 points, got {n}")
    rng = np.random.default_rng(seed)
    return rng.uniform(SYNTHETIC_LOW, SYNTHETIC_HIGH, size=(n, 2))


def syn_linear_label(X):
    X = np.atleast_2d(X)
    return (X[:, 0] + X[:, 1] > 6.0).astype(int)


def syn_nonlinear_label(X):
    X = np.atleast_2d(X)
    return (X[:, 1] > 3.0 + 1.5 * np.sin(np.pi * X[:, 0] / 3.0)).astype(int)


def gen_syn_linear(n, seed):
    """n points uniform on [0,6]^2, class 1 above the line x1 + x2 = 6."""
    X = _uniform_square(n, seed)
    return Dataset(X, syn_linear_label(X), ("x1", "x2"), "synthetic-linear")


def gen_syn_nonlinear(n, seed):
    """n points uniform on [0,6]^2, class 1 above the S-curve x2 = 3 + 1.5 sin(pi x1 / 3)."""
    X = _uniform_square(n, seed)
    return Dataset(X, syn_nonlinear_label(X), ("x1", "x2"), "synthetic-nonlinear")


def load_csv(path, label_column, positive_label):
    """
    Read a preprocessed CSV file.

    Args:
        path (str): Comma separated UTF-8 file with a header row.
        label_column (str): Name of the label column.
        positive_label (str): Cell value mapped to class 1; every other value is class 0.

    Returns:
        Dataset: Rows in file order.
    """
    if not os.path.isfile(path):
        raise InputError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise InputError(f"{path} is empty") from exc
    if label_column not in frame.columns:
        raise InputError(f"{path} has no column {label_column!r}")
    if frame.shape[0] == 0:
        raise InputError(f"{path} holds a header but no rows")

    feature_names = [c for c in frame.columns if c != label_column]
    features = np.empty((frame.shape[0], len(feature_names)))
    for j, name in enumerate(feature_names):
        for i, cell in enumerate(frame[name]):
            try:
                value = float(cell)
            except ValueError:
                value = float("nan")
            if not np.isfinite(value):
                raise InputError(f"{path}: unparsable value {cell!r} at row {i + 1}, column {name!r}")
            features[i, j] = value
    labels = (frame[label_column] == str(positive_label)).astype(int).to_numpy()
    logger.info("Loaded %d rows with %d features from %s", features.shape[0], len(feature_names), path)
    return Dataset(features, labels, tuple(feature_names), f"csv:{path}")


def split(dataset, seed):
    """
    Seeded shuffle followed by a contiguous 50/25/25 cut into train/query/eval.

    The query and evaluation parts get round(n/4) rows each and the remainder
    goes to train, so n=100 gives (50, 25, 25) and n=101 gives (51, 25, 25).
    """
    n = len(dataset)
    if n < 8:
        raise InputError(f"need at least 8 rows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    quarter = int(np.floor(n / 4.0 + 0.5))
    n_train = n - 2 * quarter
    return SplitSet(
        train=dataset.subset(perm[:n_train]),
        query=dataset.subset(perm[n_train:n_train + quarter]),
        eval=dataset.subset(perm[n_train + quarter:]),
    )


def rebalance(dataset, ratio, seed):
    """
    Subsample the minority class so that majority : minority is at least ratio : 1.

    Row order of the retained rows is preserved. A dataset that is already at
    least that imbalanced is returned unchanged.
    """
    if ratio < 1:
        raise InputError(f"ratio must be >= 1, got {ratio}")
    n_neg, n_pos = dataset.class_counts()
    minority = 1 if n_pos <= n_neg else 0
    majority_count = max(n_neg, n_pos)
    minority_idx = np.flatnonzero(dataset.labels == minority)
    keep = max(1, int(np.floor(majority_count / ratio)))
    if minority_idx.size <= keep:
        return dataset
    rng = np.random.default_rng(seed)
    dropped = rng.choice(minority_idx, size=minority_idx.size - keep, replace=False)
    mask = np.ones(len(dataset), dtype=bool)
    mask[dropped] = False
    logger.info("Rebalanced to %d majority / %d minority rows", majority_count, keep)
    return dataset.subset(np.flatnonzero(mask))


def load_dataset(dataset_cfg):
    """Build the Dataset described by the `dataset` config section."""
    source = dataset_cfg["source"]
    if source == "synthetic-linear":
        return gen_syn_linear(dataset_cfg["n_samples"], dataset_cfg["seed"])
    if source == "synthetic-nonlinear":
        return gen_syn_nonlinear(dataset_cfg["n_samples"], dataset_cfg["seed"])
    return load_csv(dataset_cfg["csv_path"], dataset_cfg["label_column"], dataset_cfg["positive_label"])


def domain_bounds(dataset):
    """Axis-aligned bounding box of the data domain, used to lay probe grids."""
    if dataset.provenance.startswith("synthetic"):
        low = np.full(dataset.dim, SYNTHETIC_LOW)
        high = np.full(dataset.dim, SYNTHETIC_HIGH)
        return low, high
    return dataset.features.min(axis=0), dataset.features.max(axis=0)
