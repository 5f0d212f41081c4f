import logging
import threading
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from classes.Dataset import Dataset, STD_FLOOR
from classes.Mlp import grad_logit_batch
from tools.errors import ConfigError, InputError

logger = logging.getLogger(__name__)

METRICS = ("L1", "L2", "L1_MAD")
HINGES = ("logit", "probability")
STALL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CfConfig:
    """
    Counterfactual solver settings.

    Args:
        threshold (float): Probability epsilon the target class must reach, in (0.5, 1).
        metric (str): L1 (sum |dx|), L2 (sum dx^2) or L1_MAD (sum |dx| / MAD).
        mad (np.ndarray): Per-feature MAD in the solver's (normalized) space; L1_MAD only.
        lr (float): Gradient descent step size.
        max_steps (int): Descent steps per penalty weight before it is escalated. A weight is
            escalated early once a step moves no coordinate by 1e-10 (STALL_TOL) or more.
        lambda_init (float): Initial penalty weight.
        lambda_growth (float): Escalation factor, > 1.
        max_escalations (int): Number of escalations before giving up.
        hinge (str): "logit" penalizes max(0, logit(eps) + margin - z_y)^2, "probability" max(0, eps - p_y)^2.
        margin (float): Extra logit the "logit" hinge aims past the threshold; feasibility is still p_y >= eps.
        refine_steps (int): Bisection steps on the step that first crosses the threshold.
    """
    threshold: float = 0.6
    metric: str = "L2"
    mad: np.ndarray = None
    lr: float = 0.01
    max_steps: int = 1000
    lambda_init: float = 0.1
    lambda_growth: float = 10.0
    max_escalations: int = 5
    hinge: str = "logit"
    margin: float = 0.1
    refine_steps: int = 30

    def __post_init__(self):
        if not 0.5 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0.5, 1), got {self.threshold}", "cf.threshold")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}", "cf.metric")
        if self.hinge not in HINGES:
            raise ConfigError(f"hinge must be one of {HINGES}, got {self.hinge!r}", "cf.hinge")
        if not self.lr > 0:
            raise ConfigError("step size must be positive", "cf.lr")
        if not self.lambda_growth > 1:
            raise ConfigError("lambda growth must exceed 1", "cf.lambda_growth")
        if not self.lambda_init > 0:
            raise ConfigError("initial lambda must be positive", "cf.lambda_init")
        if self.margin < 0:
            raise ConfigError("margin cannot be negative", "cf.margin")
        if self.max_steps < 1 or self.max_escalations < 0 or self.refine_steps < 0:
            raise ConfigError("step counts must be non-negative (max_steps >= 1)", "cf.max_steps")
        if self.metric == "L1_MAD":
            if self.mad is None:
                raise ConfigError("L1_MAD needs per-feature MAD values", "cf.mad")
            mad = np.array(self.mad, dtype=float).reshape(-1)
            if not np.all(mad > 0):
                raise ConfigError("MAD entries must be positive", "cf.mad")
            object.__setattr__(self, "mad", mad)
        elif self.mad is not None:
            raise ConfigError("MAD values are only used by the L1_MAD metric", "cf.mad")

    def with_changes(self, **changes):
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return CfConfig(**values)


@dataclass(frozen=True, eq=False)
class CfResult:
    """One counterfactual explanation. origin and explanation are in raw feature space."""
    origin: np.ndarray
    explanation: np.ndarray
    origin_label: int
    cf_label: int
    achieved_prob: float
    distance: float
    steps_used: int
    converged: bool


def distance(x, c, metric, mad=None):
    """
    Distance between a query and a candidate explanation.

    L1 is sum |x_i - c_i|, L2 the squared sum (x_i - c_i)^2 and L1_MAD
    sum |x_i - c_i| / MAD_i.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    if x.shape != c.shape:
        raise InputError(f"shape mismatch {x.shape} vs {c.shape}")
    diff = x - c
    if metric == "L1":
        return float(np.sum(np.abs(diff)))
    if metric == "L2":
        return float(np.sum(diff * diff))
    if metric == "L1_MAD":
        if mad is None:
            raise InputError("L1_MAD needs MAD values")
        mad = np.asarray(mad, dtype=float)
        if mad.shape[-1] != x.shape[-1] or not np.all(mad > 0):
            raise InputError("MAD values must be positive, one per feature")
        return float(np.sum(np.abs(diff) / mad))
    raise InputError(f"unknown metric {metric!r}")


def mad_stats(reference):
    """Per-feature median absolute deviation, floored at 1e-6."""
    X = reference.features if isinstance(reference, Dataset) else np.asarray(reference, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError("cannot compute MAD of an empty reference")
    median = np.median(X, axis=0)
    return np.maximum(np.median(np.abs(X - median), axis=0), STD_FLOOR)


class QueryMeter:
    """Billing counters of the simulated API. Increments are atomic."""

    def __init__(self):
        self._lock = threading.Lock()
        self.predict_calls = 0
        self.explain_calls = 0

    def charge_predict(self, n=1):
        with self._lock:
            self.predict_calls += int(n)

    def charge_explain(self, n=1):
        with self._lock:
            self.explain_calls += int(n)

    @property
    def total(self):
        with self._lock:
            return self.predict_calls + self.explain_calls

    def snapshot(self):
        with self._lock:
            return {"predict_calls": self.predict_calls, "explain_calls": self.explain_calls}


class CfOracle:
    """
    The simulated cloud API: a frozen classifier, its normalizer and a CF solver.

    Every public entry point bills the meter: predict charges predict_calls,
    explain charges explain_calls. The solver works in normalized feature
    space and hands back de-normalized explanations.
    """

    def __init__(self, model, cf_config, normalizer):
        if normalizer.dim != model.input_dim:
            raise InputError(f"normalizer has {normalizer.dim} features, model expects {model.input_dim}")
        if cf_config.mad is not None and cf_config.mad.shape[0] != model.input_dim:
            raise ConfigError("one MAD value per feature is required", "cf.mad")
        self.model = model
        self.cf_config = cf_config
        self.normalizer = normalizer
        self.meter = QueryMeter()

    def fresh(self):
        """Same frozen model and settings with a zeroed meter."""
        return CfOracle(self.model, self.cf_config, self.normalizer)

    def _normalize(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.model.input_dim:
            raise InputError(f"expected queries with {self.model.input_dim} features, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("queries must be finite")
        return X, self.normalizer.apply(X)

    #========================================#
    # PREDICTION
    #========================================#

    def predict_batch(self, X):
        """Labels and class-1 probabilities for many queries; charges len(X) predict calls."""
        _, X_hat = self._normalize(X)
        probs = self.model.predict_proba(X_hat)
        self.meter.charge_predict(X_hat.shape[0])
        return (probs >= 0.5).astype(int), probs

    def predict(self, x):
        """(label, prob) of a single query; charges one predict call."""
        labels, probs = self.predict_batch(x)
        return int(labels[0]), float(probs[0])

    #========================================#
    # EXPLANATION
    #========================================#

    def explain_batch(self, X):
        """Counterfactual explanations of many queries; charges len(X) explain calls."""
        X, X_hat = self._normalize(X)
        results = self._search(X, X_hat)
        self.meter.charge_explain(len(results))
        return results

    def explain(self, x):
        """Counterfactual explanation of one query; charges one explain call."""
        return self.explain_batch(x)[0]

    def explain_of_explain_batch(self, X):
        """
        Explain each query, then explain each explanation (CF then CCF).

        Charges 2 * len(X) explain calls. Non-converged legs are reported, not raised.
        """
        cfs = self.explain_batch(X)
        ccfs = self.explain_batch(np.stack([r.explanation for r in cfs]))
        return list(zip(cfs, ccfs))

    def explain_of_explain(self, x):
        return self.explain_of_explain_batch(x)[0]

    def _target_margin(self, X_hat, sign):
        """Target-class logit, target-class probability and d logit_target / dx."""
        z, _, grads = grad_logit_batch(self.model, X_hat)
        z_target = sign * z
        return z_target, expit(z_target), sign[:, None] * grads

    def _objective_grad(self, C, X0, sign, lam):
        cfg = self.cf_config
        z_t, p_t, dz = self._target_margin(C, sign)
        if cfg.hinge == "logit":
            gap = np.maximum(logit(cfg.threshold) + cfg.margin - z_t, 0.0)
            push = -2.0 * lam * gap[:, None] * dz
        else:
            gap = np.maximum(cfg.threshold - p_t, 0.0)
            push = -2.0 * lam * (gap * p_t * (1.0 - p_t))[:, None] * dz
        diff = C - X0
        if cfg.metric == "L2":
            pull = 2.0 * diff
        elif cfg.metric == "L1":
            pull = np.sign(diff)
        else:
            pull = np.sign(diff) / cfg.mad
        return push + pull

    def _target_prob(self, C, sign):
        _, logits = self.model.forward_batch(C)
        return expit(sign * logits)

    def _refine(self, lo, hi, sign):
        # lo is infeasible, hi feasible; the feasible end is kept
        for _ in range(self.cf_config.refine_steps):
            mid = 0.5 * (lo + hi)
            ok = self._target_prob(mid, sign) >= self.cf_config.threshold
            hi = np.where(ok[:, None], mid, hi)
            lo = np.where(ok[:, None], lo, mid)
        return hi

    def _search(self, X, X_hat):
        cfg = self.cf_config
        n = X_hat.shape[0]
        probs, _ = self.model.forward_batch(X_hat)
        origin_labels = (probs >= 0.5).astype(int)
        sign = np.where(origin_labels == 0, 1.0, -1.0)  # +1 when the target class is 1

        C = X_hat.copy()
        done = np.zeros(n, dtype=bool)
        steps = np.zeros(n, dtype=int)
        # each row follows its own lambda schedule so batching never changes a result
        lam = np.full(n, cfg.lambda_init)
        stage = np.zeros(n, dtype=int)
        in_stage = np.zeros(n, dtype=int)
        while not done.all():
            active = np.flatnonzero(~done)
            current = C[active]
            candidate = current - cfg.lr * self._objective_grad(current, X_hat[active], sign[active], lam[active][:, None])
            finite = np.all(np.isfinite(candidate), axis=1)
            candidate[~finite] = current[~finite]
            hit = finite & (self._target_prob(candidate, sign[active]) >= cfg.threshold)
            if hit.any():
                candidate[hit] = self._refine(current[hit], candidate[hit], sign[active][hit])
            C[active] = candidate
            steps[active] += 1
            in_stage[active] += 1

            moved = np.max(np.abs(candidate - current), axis=1)
            escalate = ~hit & finite & ((in_stage[active] >= cfg.max_steps) | (moved < STALL_TOL))
            exhausted = escalate & (stage[active] >= cfg.max_escalations)
            rows = active[escalate & ~exhausted]
            lam[rows] *= cfg.lambda_growth
            stage[rows] += 1
            in_stage[rows] = 0
            if rows.size:
                logger.debug("Escalating lambda for %d queries", rows.size)
            done[active[hit | ~finite | exhausted]] = True

        final_p = self._target_prob(C, sign)
        converged = final_p >= cfg.threshold
        if not converged.all():
            logger.warning("CF search exhausted its budget for %d of %d queries", int(np.sum(~converged)), n)
        cf_probs, _ = self.model.forward_batch(C)
        cf_labels = (cf_probs >= 0.5).astype(int)
        explanations = self.normalizer.inverse(C)

        results = []
        for i in range(n):
            results.append(CfResult(
                origin=X[i].copy(),
                explanation=explanations[i],
                origin_label=int(origin_labels[i]),
                cf_label=int(cf_labels[i]),
                achieved_prob=float(final_p[i]),
                distance=distance(X_hat[i], C[i], cfg.metric, cfg.mad),
                steps_used=int(steps[i]),
                converged=bool(converged[i]),
            ))
        return results


def results_to_frame(results, feature_names=None):
    """Flatten CfResults into a DataFrame (origin features, explanation features, bookkeeping)."""
    if not results:
        raise InputError("no results to export")
    d = results[0].origin.shape[0]
    names = list(feature_names) if feature_names is not None else [f"x{i + 1}" for i in range(d)]
    rows = []
    for r in results:
        row = {f"origin_{name}": v for name, v in zip(names, r.origin)}
        row.update({f"cf_{name}": v for name, v in zip(names, r.explanation)})
        row.update({
            "origin_label": r.origin_label,
            "cf_label": r.cf_label,
            "achieved_prob": r.achieved_prob,
            "distance": r.distance,
            "steps": r.steps_used,
            "converged": int(r.converged),
        })
        rows.append(row)
    return pd.DataFrame(rows)


def write_results_csv(results, path, feature_names=None):
    results_to_frame(results, feature_names).to_csv(path, index=False, lineterminator="\n")
