import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from tools.errors import ConfigError, InputError, TrainingError

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "identity")
FORMAT_VERSION = 1
LOG_EPS = 1e-12


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return expit(z)
    return z


def _activation_slope(z, a, activation):
    # Derivative of the activation given its input z and output a
    if activation == "relu":
        return (z > 0).astype(float)
    if activation == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass(frozen=True)
class Architecture:
    """
    Layer sizes and activations of a dense binary classifier.

    Args:
        sizes (tuple): Layer widths, input first, e.g. (2, 10, 1).
        activations (tuple): One activation per weight layer.
    """
    sizes: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ConfigError("an architecture needs at least an input and an output size", "arch")
        if len(self.activations) != len(self.sizes) - 1:
            raise ConfigError(f"expected {len(self.sizes) - 1} activations, got {len(self.activations)}", "arch")
        if any(int(s) < 1 for s in self.sizes):
            raise ConfigError("layer sizes must be positive", "arch")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}", "arch")
        if self.sizes[-1] != 1 or self.activations[-1] != "sigmoid":
            raise ConfigError("the output layer must be Linear(*, 1) followed by a sigmoid", "arch")

    @classmethod
    def from_hidden(cls, input_dim, hidden):
        """ReLU hidden layers of the given widths and a sigmoid output unit."""
        sizes = (int(input_dim),) + tuple(int(h) for h in hidden) + (1,)
        activations = ("relu",) * len(hidden) + ("sigmoid",)
        return cls(sizes, activations)

    @property
    def hidden(self):
        return tuple(self.sizes[1:-1])

    def describe(self):
        parts = []
        for n_in, n_out, act in zip(self.sizes[:-1], self.sizes[1:], self.activations):
            parts.append(f"Linear({n_in}, {n_out}), {act}")
        return ", ".join(parts)


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # [out x in]
    bias: np.ndarray  # [out]
    activation: str


class MlpModel:
    """
    Dense feed-forward binary classifier with a sigmoid output.

    The model is immutable: parameter arrays are read-only and every
    training step builds a new instance.
    """

    def __init__(self, layers, input_dim):
        self.input_dim = int(input_dim)
        frozen = []
        expected_in = self.input_dim
        for i, layer in enumerate(layers):
            weight = np.array(layer.weight, dtype=float)
            bias = np.array(layer.bias, dtype=float).reshape(-1)
            if weight.ndim != 2 or weight.shape[1] != expected_in:
                raise ConfigError(f"layer {i} expects {expected_in} inputs, weight shape is {weight.shape}", "arch")
            if bias.shape[0] != weight.shape[0]:
                raise ConfigError(f"layer {i} bias has {bias.shape[0]} entries for {weight.shape[0]} units", "arch")
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {layer.activation!r}", "arch")
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                raise InputError(f"layer {i} holds non-finite parameters")
            weight.flags.writeable = False
            bias.flags.writeable = False
            frozen.append(Layer(weight, bias, layer.activation))
            expected_in = weight.shape[0]
        if not frozen or expected_in != 1 or frozen[-1].activation != "sigmoid":
            raise ConfigError("the output layer must have one sigmoid unit", "arch")
        self.layers = tuple(frozen)

    @property
    def architecture(self):
        sizes = (self.input_dim,) + tuple(layer.weight.shape[0] for layer in self.layers)
        return Architecture(sizes, tuple(layer.activation for layer in self.layers))

    def parameters(self):
        """Flat list [W1, b1, W2, b2, ...] of the parameter arrays."""
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def with_parameters(self, params):
        """Return a new model sharing this architecture with the given parameters."""
        layers = [Layer(params[2 * i], params[2 * i + 1], layer.activation) for i, layer in enumerate(self.layers)]
        return MlpModel(layers, self.input_dim)

    def forward_batch(self, X):
        """
        Forward pass over a batch.

        Args:
            X (np.ndarray): Inputs of shape [n x input_dim].

        Returns:
            tuple: (probabilities of class 1, logits), each of shape [n].
        """
        X = _as_batch(X, self.input_dim)
        a = X
        z = None
        for layer in self.layers:
            z = a @ layer.weight.T + layer.bias
            a = _activate(z, layer.activation)
        return a[:, 0], z[:, 0]

    def forward(self, x):
        """Probability of class 1 and the logit for a single feature vector."""
        probs, logits = self.forward_batch(np.asarray(x, dtype=float).reshape(1, -1))
        return float(probs[0]), float(logits[0])

    def predict_proba(self, X):
        return self.forward_batch(X)[0]

    def predict_labels(self, X):
        # class 1 iff prob >= 0.5
        return (self.predict_proba(X) >= 0.5).astype(int)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "input_dim": self.input_dim,
            "layers": [
                {
                    "activation": layer.activation,
                    "shape": list(layer.weight.shape),
                    "weight": layer.weight.reshape(-1).tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, payload):
        version = payload.get("format_version")
        if version != FORMAT_VERSION:
            raise InputError(f"unsupported model format version {version!r}")
        layers = []
        for entry in payload["layers"]:
            shape = tuple(entry["shape"])
            weight = np.array(entry["weight"], dtype=float).reshape(shape)
            layers.append(Layer(weight, np.array(entry["bias"], dtype=float), entry["activation"]))
        return cls(layers, payload["input_dim"])

    def save(self, path):
        """Write the model as JSON; float repr makes the round trip bit-exact."""
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def __eq__(self, other):
        if not isinstance(other, MlpModel) or self.input_dim != other.input_dim:
            return False
        if len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation and np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    __hash__ = None


def _as_batch(X, input_dim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != input_dim:
        raise InputError(f"expected inputs with {input_dim} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("inputs must be finite")
    return X


def mlp_init(arch, seed, input_dim=None):
    """
    Draw a fresh model with weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)).

    Args:
        arch (Architecture): Layer sizes and activations.
        seed (int): Seed of the PCG64 generator; same (arch, seed) gives bit-identical models.
        input_dim (int): Optional declared input dimension, checked against arch.

    Returns:
        MlpModel: The initialized model.
    """
    if input_dim is not None and int(input_dim) != arch.sizes[0]:
        raise ConfigError(f"architecture takes {arch.sizes[0]} inputs but input_dim is {input_dim}", "arch")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(arch.sizes[:-1], arch.sizes[1:], arch.activations):
        bound = 1.0 / np.sqrt(n_in)
        weight = rng.uniform(-bound, bound, size=(n_out, n_in))
        bias = rng.uniform(-bound, bound, size=n_out)
        layers.append(Layer(weight, bias, act))
    return MlpModel(layers, arch.sizes[0])


def bce_loss(probs, labels):
    """Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12]."""
    probs = np.asarray(probs, dtype=float).reshape(-1)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if probs.size == 0:
        raise InputError("cannot compute the loss of an empty batch")
    if probs.shape != labels.shape:
        raise InputError(f"{probs.size} probabilities for {labels.size} labels")
    p = np.clip(probs, LOG_EPS, 1.0 - LOG_EPS)
    return float(np.mean(-(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))))


def _backprop(params, activations, X, y):
    """Forward and backward pass. Returns (probs, gradients mirroring params)."""
    n_layers = len(activations)
    pre = []
    post = [X]
    a = X
    for i in range(n_layers):
        z = a @ params[2 * i].T + params[2 * i + 1]
        a = _activate(z, activations[i])
        pre.append(z)
        post.append(a)
    probs = a[:, 0]

    # d(mean bce)/d(logit) is (p - y)/n; zero where the clamp is active
    clamped = (probs < LOG_EPS) | (probs > 1.0 - LOG_EPS)
    delta = np.where(clamped, 0.0, probs - y)[:, None] / X.shape[0]

    grads = [None] * len(params)
    for i in reversed(range(n_layers)):
        grads[2 * i] = delta.T @ post[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            upstream = delta @ params[2 * i]
            delta = upstream * _activation_slope(pre[i - 1], post[i], activations[i - 1])
    return probs, grads


def grad_params(model, X, y):
    """
    Exact gradient of bce_loss over a batch with respect to every weight and bias.

    Returns:
        list: Gradient arrays in the order of model.parameters().
    """
    X = _as_batch(X, model.input_dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] == 0:
        raise InputError("cannot differentiate an empty batch")
    if y.shape[0] != X.shape[0]:
        raise InputError(f"{X.shape[0]} inputs for {y.shape[0]} labels")
    activations = [layer.activation for layer in model.layers]
    _, grads = _backprop(model.parameters(), activations, X, y)
    return grads


def grad_logit_batch(model, X):
    """Gradient of the logit with respect to each input row. Returns (logits, probs, grads [n x d])."""
    X = _as_batch(X, model.input_dim)
    pre = []
    post = [X]
    a = X
    for layer in model.layers:
        z = a @ layer.weight.T + layer.bias
        a = _activate(z, layer.activation)
        pre.append(z)
        post.append(a)
    delta = np.ones((X.shape[0], 1))
    for i in reversed(range(len(model.layers))):
        delta = delta @ model.layers[i].weight
        if i > 0:
            prev = model.layers[i - 1]
            delta = delta * _activation_slope(pre[i - 1], post[i], prev.activation)
    return pre[-1][:, 0], a[:, 0], delta


def grad_input(model, x, target_class):
    """
    Gradient of p(target_class | x) with respect to x.

    For a one-layer sigmoid model this is p(1-p) * theta, sign-flipped for class 0.
    """
    _, probs, grads = grad_logit_batch(model, np.asarray(x, dtype=float).reshape(1, -1))
    p = probs[0]
    g = p * (1.0 - p) * grads[0]
    return g if int(target_class) == 1 else -g


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 32
    epochs: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive", "learning_rate")
        if int(self.batch_size) < 1:
            raise ConfigError("batch size must be at least 1", "batch_size")
        if int(self.epochs) < 0:
            raise ConfigError("epochs cannot be negative", "epochs")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError("Adam betas must lie in (0, 1)", name)


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the model parameters."""
    first: list
    second: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)

    def update(self, params, grads, cfg):
        """Apply one Adam step and return the new parameter list."""
        self.step += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        correction1 = 1.0 - b1 ** self.step
        correction2 = 1.0 - b2 ** self.step
        updated = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.first[i] = b1 * self.first[i] + (1.0 - b1) * g
            self.second[i] = b2 * self.second[i] + (1.0 - b2) * g * g
            m_hat = self.first[i] / correction1
            v_hat = self.second[i] / correction2
            updated.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
        return updated


def train(model, X, y, cfg, order=None, on_epoch=None):
    """
    Minimize mean BCE with Adam for cfg.epochs full passes (no early stopping).

    Args:
        model (MlpModel): Starting point; left untouched.
        X (np.ndarray): Training inputs [n x d].
        y (np.ndarray): 0/1 labels [n].
        cfg (TrainConfig): Hyper-parameters; cfg.seed drives the epoch shuffles.
        order (callable): Optional order(rng, n) -> permutation used instead of a plain shuffle.
        on_epoch (callable): Optional on_epoch(epoch, model, mean_loss) hook, e.g. for checkpoints.

    Returns:
        MlpModel: The trained model. The last incomplete batch is kept.
    """
    X = _as_batch(X, model.input_dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] == 0:
        raise InputError("cannot train on an empty dataset")
    if y.shape[0] != X.shape[0]:
        raise InputError(f"{X.shape[0]} inputs for {y.shape[0]} labels")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("labels must be 0 or 1")
    if cfg.epochs == 0:
        return model

    rng = np.random.default_rng(cfg.seed)
    activations = [layer.activation for layer in model.layers]
    params = [np.array(p, dtype=float) for p in model.parameters()]
    state = AdamState.zeros_like(params)
    n = X.shape[0]
    batch_size = int(cfg.batch_size)

    for epoch in range(1, int(cfg.epochs) + 1):
        perm = order(rng, n) if order is not None else rng.permutation(n)
        losses = []
        for batch, start in enumerate(range(0, n, batch_size)):
            idx = perm[start:start + batch_size]
            probs, grads = _backprop(params, activations, X[idx], y[idx])
            loss = bce_loss(probs, y[idx])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(epoch, batch, loss)
            losses.append(loss * len(idx))
            params = state.update(params, grads, cfg)
        mean_loss = float(np.sum(losses) / n)
        if epoch == 1 or epoch % 50 == 0 or epoch == cfg.epochs:
            logger.debug("epoch %d/%d loss %.6f", epoch, cfg.epochs, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, model.with_parameters(params), mean_loss)

    try:
        return model.with_parameters(params)
    except InputError as exc:
        raise TrainingError(int(cfg.epochs), -1, float("nan")) from exc
