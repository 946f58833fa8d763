"""Multinomial L2-regularised logistic regression on sparse features.

The objective is ``sum_i CE(x_i, y_i) + ||W||^2 / (2C)`` (the bias is not penalised),
minimised from a zero start by L-BFGS-B with the analytic gradient. Training stops
when the gradient max-norm drops below ``gtol`` or after ``max_iter`` iterations.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from .core import Codeframe, LabelledCollection, as_csr

log = logging.getLogger(__name__)

MODEL_FORMAT = "quantbench-logistic"
MODEL_VERSION = 1
DEFAULT_FOLDS = 5


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    codeframe: Codeframe
    C: float
    loss_history: tuple = field(default=(), repr=False)
    n_iter: int = 0

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def predict_proba(self, docs) -> np.ndarray:
        return predict_proba(self, docs)

    def predict(self, docs) -> np.ndarray:
        return predict_hard(self, docs)

    def save(self, path) -> None:
        header = dict(format=MODEL_FORMAT, version=MODEL_VERSION, labels=list(self.codeframe.labels),
                      C=self.C, n_iter=self.n_iter)
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header)), weights=self.weights, bias=self.bias)

    @classmethod
    def load(cls, path) -> "LogisticModel":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
                raise ValueError(f"unsupported model file: {header.get('format')} v{header.get('version')}")
            return cls(z["weights"].copy(), z["bias"].copy(), Codeframe(tuple(header["labels"])),
                       float(header["C"]), n_iter=int(header["n_iter"]))


def _objective(theta, X, Y, C, n_classes):
    """Penalised cross-entropy and its gradient for flattened [W, b]."""
    d = X.shape[1]
    W = theta[: n_classes * d].reshape(n_classes, d)
    b = theta[n_classes * d:]
    Z = X @ W.T + b
    lse = logsumexp(Z, axis=1)
    loss = float(np.sum(lse - np.sum(Z * Y, axis=1)) + 0.5 * np.sum(W * W) / C)
    R = np.exp(Z - lse[:, None]) - Y
    gW = (X.T @ R).T + W / C
    gb = R.sum(axis=0)
    return loss, np.concatenate([np.asarray(gW).ravel(), gb])


def lr_objective(model_or_theta, data: LabelledCollection, C: float | None = None):
    """Objective value and gradient at a model's parameters (exposed for checking)."""
    if isinstance(model_or_theta, LogisticModel):
        theta = np.concatenate([model_or_theta.weights.ravel(), model_or_theta.bias])
        C = model_or_theta.C if C is None else C
    else:
        theta = np.asarray(model_or_theta, dtype=np.float64)
    Y = np.eye(data.n_classes)[data.labels]
    return _objective(theta, data.X, Y, C, data.n_classes)


def train_lr(data: LabelledCollection, C: float = 1.0, seed: int = 0, max_iter: int = 1000,
             gtol: float = 1e-5) -> LogisticModel:
    """Fit the multinomial model. ``seed`` is accepted for interface symmetry; the
    optimiser starts from zero and is fully deterministic."""
    if len(data) == 0:
        raise ValueError("empty training set")
    if np.count_nonzero(data.counts) < 2:
        raise ValueError("degenerate training set")
    if not C > 0:
        raise ValueError("C must be positive")
    n_classes, d = data.n_classes, data.n_features
    X = data.X.astype(np.float64)
    Y = np.eye(n_classes)[data.labels]
    history = []

    def fun(theta):
        return _objective(theta, X, Y, C, n_classes)

    theta0 = np.zeros(n_classes * (d + 1))
    history.append(fun(theta0)[0])
    res = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                   callback=lambda intermediate_result: history.append(float(intermediate_result.fun)),
                   options=dict(maxiter=max_iter, gtol=gtol, ftol=0.0, maxcor=20, maxls=50))
    W = res.x[: n_classes * d].reshape(n_classes, d).copy()
    b = res.x[n_classes * d:].copy()
    # softmax is invariant to a common shift of the bias; pin it for reproducible output
    b -= b.mean()
    return LogisticModel(W, b, data.codeframe, float(C), tuple(history), int(res.nit))


def predict_proba(model: LogisticModel, docs) -> np.ndarray:
    X = as_csr(docs, model.n_features)
    Z = np.asarray(X @ model.weights.T) + model.bias
    return softmax(Z, axis=1)


def predict_hard(model: LogisticModel, docs) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(predict_proba(model, docs), axis=1)


def stratified_folds(labels, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per document; each class is shuffled and dealt round-robin across folds."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        folds[members] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    return folds


def confusion_rates(true_labels, outputs, n_classes: int, mode: str = "hard") -> np.ndarray:
    """Column-normalised rates: entry (i, j) estimates P(output i | true class j).

    ``outputs`` are hard class indices (hard mode) or posterior rows (soft mode).
    Columns of classes without documents fall back to the identity column.
    """
    true_labels = np.asarray(true_labels)
    if mode == "hard":
        counts = np.zeros((n_classes, n_classes))
        np.add.at(counts, (np.asarray(outputs), true_labels), 1.0)
    elif mode == "soft":
        P = np.asarray(outputs, dtype=np.float64)
        counts = np.zeros((n_classes, n_classes))
        for j in range(n_classes):
            counts[:, j] = P[true_labels == j].sum(axis=0)
    else:
        raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")
    totals = counts.sum(axis=0)
    rates = np.eye(n_classes)
    nz = totals > 0
    rates[:, nz] = counts[:, nz] / totals[nz]
    return rates


def cross_val_posteriors(data: LabelledCollection, C: float, k: int = DEFAULT_FOLDS,
                         seed: int = 0) -> np.ndarray:
    if k < 2:
        raise ValueError("k must be >= 2")
    counts = data.counts
    missing = [data.codeframe.labels[c] for c in range(data.n_classes) if counts[c] == 0]
    if missing:
        raise ValueError(f"classes absent from data: {missing}")
    scarce = [data.codeframe.labels[c] for c in range(data.n_classes) if counts[c] < k]
    if scarce:
        warnings.warn(f"classes with fewer than {k} documents: {scarce}; stratification is best-effort")
    folds = stratified_folds(data.labels, k, seed)
    posteriors = np.zeros((len(data), data.n_classes))
    for f in range(k):
        test = folds == f
        if not test.any():
            continue
        train = data.sampling_from_index(np.flatnonzero(~test))
        model = train_lr(train, C, seed)
        posteriors[test] = predict_proba(model, data.X[np.flatnonzero(test)])
    return posteriors


def cross_val_confusion(data: LabelledCollection, C: float, k: int = DEFAULT_FOLDS,
                        mode: str = "hard", seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-fold confusion rates plus the out-of-fold posterior matrix."""
    posteriors = cross_val_posteriors(data, C, k, seed)
    outputs = np.argmax(posteriors, axis=1) if mode == "hard" else posteriors
    return confusion_rates(data.labels, outputs, data.n_classes, mode), posteriors
