"""Prevalence estimators built on the logistic-regression soft classifier.

Every quantifier follows the same two-step shape: ``classify`` maps documents to a
per-document array (posteriors for the aggregative methods) and ``aggregate`` turns
the rows belonging to one sample into a prevalence vector. Evaluation code classifies
a whole pool once and aggregates the rows of each sample, which is what keeps the
artificial-prevalence protocol cheap.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .classifier import (DEFAULT_FOLDS, LogisticModel, confusion_rates, cross_val_posteriors,
                         predict_proba, train_lr)
from .core import LabelledCollection, as_csr, normalize_prevalence
from .metrics import ae
from .protocol import allocate_counts, draw_sample

log = logging.getLogger(__name__)

METHODS = ("CC", "ACC", "PCC", "PACC", "SLD", "HDy", "MLPE", "E-PACC-Ptr", "E-PACC-AE")

SLD_EPSILON = 1e-4
SLD_MAX_ITER = 1000
HDY_BINS = tuple(range(10, 111, 10))
HDY_ALPHAS = np.arange(101) / 100
MAX_CONDITION = 1e8
SOLUTION_RANGE = (-0.1, 1.1)


# adjustment ---------------------------------------------------------------

def _simplex_least_squares(M, observed):
    n = M.shape[1]
    res = minimize(lambda p: float(np.sum((M @ p - observed) ** 2)),
                   np.full(n, 1.0 / n),
                   jac=lambda p: 2.0 * M.T @ (M @ p - observed),
                   method="SLSQP", bounds=[(0.0, 1.0)] * n,
                   constraints=[dict(type="eq", fun=lambda p: p.sum() - 1.0, jac=lambda p: np.ones(n))],
                   options=dict(ftol=1e-14, maxiter=500))
    return res.x


def solve_adjustment(M, observed) -> np.ndarray:
    """Solve ``M @ p = observed`` for the true prevalence ``p``.

    Ill-conditioned systems, and solutions far outside the simplex, fall back to
    least squares constrained to the simplex. The result is always clipped and
    L1-normalised.
    """
    M = np.asarray(M, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    p = None
    if np.all(np.isfinite(M)) and np.linalg.cond(M) <= MAX_CONDITION:
        try:
            p = np.linalg.solve(M, observed)
        except np.linalg.LinAlgError:
            p = None
    if p is None or np.any(p < SOLUTION_RANGE[0]) or np.any(p > SOLUTION_RANGE[1]):
        p = _simplex_least_squares(M, observed)
    return normalize_prevalence(p)


# EM rescaling -------------------------------------------------------------

@dataclass
class EMResult:
    prevalence: np.ndarray
    posteriors: np.ndarray
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list)
    objective: list = field(default_factory=list)


def em_objective(train_prev, prev, posteriors) -> float:
    """Mean log of the rescaled-row normalisers, i.e. the sample log-likelihood of
    prior ``prev`` up to a constant."""
    ratio = _prior_ratio(prev, train_prev)
    with np.errstate(divide="ignore"):
        return float(np.mean(np.log(posteriors @ ratio)))


def _prior_ratio(prev, train_prev):
    prev = np.asarray(prev, dtype=np.float64)
    train_prev = np.asarray(train_prev, dtype=np.float64)
    ratio = np.zeros_like(prev)
    nz = train_prev > 0
    ratio[nz] = prev[nz] / train_prev[nz]
    return ratio


def sld_em(train_prev, posteriors, epsilon: float = SLD_EPSILON, max_iter: int = SLD_MAX_ITER,
           track: bool = False) -> EMResult:
    """Alternate posterior rescaling and prevalence re-estimation until the estimate
    moves by less than ``epsilon`` (max-norm) or ``max_iter`` steps have run."""
    train_prev = np.asarray(train_prev, dtype=np.float64)
    P = np.asarray(posteriors, dtype=np.float64)
    if np.any(train_prev <= 0):
        warnings.warn("zero training prevalence for some class; its posterior mass is ignored")
    prev = train_prev.copy()
    trace, objective = [], []
    if track:
        trace.append(prev.copy())
        objective.append(em_objective(train_prev, prev, P))
    rescaled = P
    converged = False
    t = 0
    while t < max_iter:
        t += 1
        rescaled = P * _prior_ratio(prev, train_prev)
        norm = rescaled.sum(axis=1, keepdims=True)
        dead = norm[:, 0] <= 0
        if dead.any():
            # rows carrying mass only on zero-prior classes contribute nothing
            rescaled[dead] = 0.0
            norm[dead] = 1.0
        rescaled = rescaled / norm
        new_prev = normalize_prevalence(rescaled.mean(axis=0))
        change = float(np.max(np.abs(new_prev - prev)))
        prev = new_prev
        if track:
            trace.append(prev.copy())
            objective.append(em_objective(train_prev, prev, P))
        if change < epsilon:
            converged = True
            break
    if not converged:
        log.warning("SLD reached %d iterations without converging", max_iter)
    return EMResult(prev, rescaled, t, converged, trace, objective)


# Hellinger distance matching -----------------------------------------------

def _histogram(scores, bins):
    """Normalised counts over ``bins`` equal-width bins of [0, 1] (1.0 falls in the last)."""
    scores = np.asarray(scores, dtype=np.float64)
    idx = np.minimum((scores * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, minlength=bins) / max(len(scores), 1)


def hellinger(p, q) -> np.ndarray:
    """Hellinger distance between histograms along the last axis (range [0, 1])."""
    return np.sqrt(np.maximum(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2, axis=-1), 0.0))


def mixture_histograms(pos_scores, neg_scores, bins=HDY_BINS, alphas=HDY_ALPHAS) -> list:
    """Candidate mixture histograms, one (n_alphas, b) array per bin count."""
    a = np.asarray(alphas)[:, None]
    return [a * _histogram(pos_scores, b) + (1 - a) * _histogram(neg_scores, b) for b in bins]


def hdy_distances(pos_scores, neg_scores, test_scores, bins=HDY_BINS, alphas=HDY_ALPHAS,
                  mixtures=None) -> np.ndarray:
    """Hellinger distance of every candidate mixture, averaged over the bin counts."""
    if mixtures is None:
        mixtures = mixture_histograms(pos_scores, neg_scores, bins, alphas)
    total = np.zeros(len(alphas))
    for b, mix in zip(bins, mixtures):
        total += hellinger(mix, _histogram(test_scores, b))
    return total / len(bins)


def hdy_alpha(pos_scores, neg_scores, test_scores, bins=HDY_BINS, alphas=HDY_ALPHAS,
              mixtures=None) -> float:
    d = hdy_distances(pos_scores, neg_scores, test_scores, bins, alphas, mixtures)
    return float(np.asarray(alphas)[int(np.argmin(d))])


# quantifiers --------------------------------------------------------------

class Quantifier:
    method = "base"

    def fit(self, data: LabelledCollection):
        raise NotImplementedError

    def classify(self, docs) -> np.ndarray:
        raise NotImplementedError

    def aggregate(self, classified: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def quantify(self, docs) -> np.ndarray:
        classified = self.classify(docs)
        if len(classified) == 0:
            raise ValueError("cannot quantify an empty sample")
        return self.aggregate(classified)

    def __repr__(self):
        return f"{type(self).__name__}()"


class MLPE(Quantifier):
    method = "MLPE"

    def __init__(self):
        self.train_prevalence = None

    def fit(self, data: LabelledCollection):
        self.train_prevalence = data.prevalence()
        self.n_features = data.n_features
        return self

    def classify(self, docs):
        return np.empty((as_csr(docs).shape[0], 0))

    def aggregate(self, classified):
        return self.train_prevalence.copy()


class AggregativeQuantifier(Quantifier):
    """Base for quantifiers that aggregate logistic-regression posteriors."""

    def __init__(self, C: float = 1.0, seed: int = 0, k: int = DEFAULT_FOLDS):
        self.C = C
        self.seed = seed
        self.k = k
        self.model: LogisticModel | None = None

    def fit(self, data: LabelledCollection):
        self.n_classes = data.n_classes
        self.train_prevalence = data.prevalence()
        self.model = train_lr(data, self.C, self.seed)
        return self

    def classify(self, docs):
        return predict_proba(self.model, docs)

    def __repr__(self):
        return f"{type(self).__name__}(C={self.C:g})"


class CC(AggregativeQuantifier):
    method = "CC"

    def raw_counts(self, posteriors):
        hard = np.argmax(posteriors, axis=1)
        return np.bincount(hard, minlength=posteriors.shape[1]) / len(hard)

    def aggregate(self, posteriors):
        return normalize_prevalence(self.raw_counts(posteriors))


class PCC(AggregativeQuantifier):
    method = "PCC"

    def raw_counts(self, posteriors):
        return np.asarray(posteriors).mean(axis=0)

    def aggregate(self, posteriors):
        return normalize_prevalence(self.raw_counts(posteriors))


class ACC(CC):
    """CC corrected by inverting the cross-validated hard misclassification rates."""

    method = "ACC"
    mode = "hard"

    def fit(self, data: LabelledCollection):
        oof = cross_val_posteriors(data, self.C, self.k, self.seed)
        self.fit_from_posteriors(data, oof)
        return super().fit(data)

    def fit_from_posteriors(self, data, oof):
        outputs = np.argmax(oof, axis=1) if self.mode == "hard" else oof
        self.rates = confusion_rates(data.labels, outputs, data.n_classes, self.mode)
        return self

    def aggregate(self, posteriors):
        return solve_adjustment(self.rates, self.raw_counts(posteriors))


class PACC(ACC):
    method = "PACC"
    mode = "soft"

    def raw_counts(self, posteriors):
        return np.asarray(posteriors).mean(axis=0)


class SLD(AggregativeQuantifier):
    method = "SLD"

    def __init__(self, C: float = 1.0, seed: int = 0, epsilon: float = SLD_EPSILON,
                 max_iter: int = SLD_MAX_ITER):
        super().__init__(C, seed)
        self.epsilon = epsilon
        self.max_iter = max_iter

    def aggregate(self, posteriors):
        return sld_em(self.train_prevalence, posteriors, self.epsilon, self.max_iter).prevalence


class HDy(AggregativeQuantifier):
    """One-vs-all Hellinger-distance mixture matching on the multiclass posteriors.

    Validation histograms come from out-of-fold posteriors on the training data.
    """

    method = "HDy"

    def fit(self, data: LabelledCollection):
        oof = cross_val_posteriors(data, self.C, self.k, self.seed)
        self.fit_from_posteriors(data, oof)
        return super().fit(data)

    def fit_from_posteriors(self, data, oof):
        self.pos_scores, self.neg_scores = [], []
        for c in range(data.n_classes):
            is_c = data.labels == c
            if is_c.all() or not is_c.any():
                raise ValueError(f"class {data.codeframe.labels[c]!r} has an empty validation side")
            self.pos_scores.append(oof[is_c, c])
            self.neg_scores.append(oof[~is_c, c])
        self.mixtures = [mixture_histograms(p, n) for p, n in zip(self.pos_scores, self.neg_scores)]
        return self

    def aggregate(self, posteriors):
        alphas = [hdy_alpha(self.pos_scores[c], self.neg_scores[c], posteriors[:, c],
                            mixtures=self.mixtures[c])
                  for c in range(posteriors.shape[1])]
        return normalize_prevalence(alphas)


# ensembles ----------------------------------------------------------------

@dataclass
class EnsembleMember:
    quantifier: Quantifier
    training_prevalence: np.ndarray
    training_error: float = float("nan")
    sample: np.ndarray | None = field(default=None, repr=False)


def ptr_selection(training_prevalences, reference, k: int) -> np.ndarray:
    """Indices of the ``k`` members whose training prevalence is closest (Euclidean)
    to ``reference``; ties keep member order."""
    d = np.linalg.norm(np.asarray(training_prevalences) - np.asarray(reference), axis=1)
    return np.argsort(d, kind="stable")[:k]


def uniform_simplex(rng: np.random.Generator, n_classes: int) -> np.ndarray:
    # normalised exponentials are uniform on the simplex
    e = rng.exponential(size=n_classes)
    return e / e.sum()


class EnsemblePACC(Quantifier):
    """Ensemble of PACC members trained on samples at random prevalences, with
    either dynamic (``Ptr``) or static (``AE``) selection of half the members."""

    def __init__(self, policy: str = "Ptr", C: float = 1.0, n: int = 50, q_size: int = 1000,
                 seed: int = 0, k: int = DEFAULT_FOLDS):
        if policy not in ("Ptr", "AE"):
            raise ValueError("policy must be 'Ptr' or 'AE'")
        if n < 2 or n % 2:
            raise ValueError("ensemble size must be even and >= 2")
        self.policy = policy
        self.C, self.n, self.q_size, self.seed, self.k = C, n, q_size, seed, k
        self.members: list[EnsembleMember] = []
        self.selected = None

    @property
    def method(self):
        return f"E-PACC-{self.policy}"

    def _draw_target(self, rng, n_classes):
        # members need at least k documents per class for their cross-validation
        for _ in range(1000):
            target = uniform_simplex(rng, n_classes)
            if allocate_counts(target, self.q_size).min() >= min(self.k, self.q_size // n_classes):
                return target
        return np.full(n_classes, 1.0 / n_classes)

    def fit(self, data: LabelledCollection):
        rng = np.random.default_rng([self.seed, 0])
        self.members = []
        for i in range(self.n):
            target = self._draw_target(rng, data.n_classes)
            idx = draw_sample(data, target, self.q_size, "auto", [self.seed, 1, i]).indices
            sample = data.sampling_from_index(idx)
            member = PACC(self.C, seed=self.seed + i, k=self.k).fit(sample)
            self.members.append(EnsembleMember(member, sample.prevalence(), sample=idx))
        if self.policy == "AE":
            self._score_members(data)
        return self

    def _score_members(self, data):
        samples = [(m.training_prevalence, data.X[m.sample]) for m in self.members]
        for m in self.members:
            m.training_error = float(np.mean([ae(p, m.quantifier.quantify(X)) for p, X in samples]))
        self.select_static()

    def select_static(self):
        errors = np.array([m.training_error for m in self.members])
        self.selected = np.argsort(errors, kind="stable")[: len(self.members) // 2]
        return self

    @classmethod
    def from_members(cls, members, policy: str = "Ptr") -> "EnsemblePACC":
        ens = cls(policy=policy, n=max(2, len(members) + len(members) % 2))
        ens.n = len(members)
        ens.members = list(members)
        if policy == "AE":
            ens.select_static()
        return ens

    def classify(self, docs):
        X = as_csr(docs)
        return np.stack([m.quantifier.classify(X) for m in self.members], axis=1)

    def member_estimates(self, classified) -> np.ndarray:
        return np.array([m.quantifier.aggregate(classified[:, i]) for i, m in enumerate(self.members)])

    def aggregate(self, classified):
        estimates = self.member_estimates(classified)
        half = max(1, len(self.members) // 2)
        if self.policy == "Ptr":
            reference = estimates.mean(axis=0)
            chosen = ptr_selection([m.training_prevalence for m in self.members], reference, half)
        else:
            chosen = self.selected
        return normalize_prevalence(estimates[chosen].mean(axis=0))

    def __repr__(self):
        return f"EnsemblePACC(policy={self.policy!r}, C={self.C:g}, n={self.n}, q_size={self.q_size})"


# factory ------------------------------------------------------------------

def make_quantifier(method: str, C: float = 1.0, seed: int = 0, ensemble_n: int = 50,
                    ensemble_q: int = 1000) -> Quantifier:
    if method == "MLPE":
        return MLPE()
    simple = dict(CC=CC, ACC=ACC, PCC=PCC, PACC=PACC, SLD=SLD, HDy=HDy)
    if method in simple:
        return simple[method](C=C, seed=seed)
    if method in ("E-PACC-Ptr", "E-PACC-AE"):
        return EnsemblePACC(method.rsplit("-", 1)[1], C=C, n=ensemble_n, q_size=ensemble_q, seed=seed)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def fit(method: str, train: LabelledCollection, C: float = 1.0, seed: int = 0, **kwargs) -> Quantifier:
    if len(train) == 0:
        raise ValueError("empty training set")
    return make_quantifier(method, C, seed, **kwargs).fit(train)


def fit_ensemble(policy: str, train: LabelledCollection, C: float = 1.0, n: int = 50,
                 q_size: int = 1000, seed: int = 0) -> EnsemblePACC:
    return EnsemblePACC(policy, C, n, q_size, seed).fit(train)


def estimate(q: Quantifier, docs) -> np.ndarray:
    return q.quantify(docs)


def _checked(methods, name):
    def estimator(q: Quantifier, docs) -> np.ndarray:
        if getattr(q, "method", None) not in methods:
            raise TypeError(f"{name} expects a fitted {'/'.join(methods)} quantifier, got {q!r}")
        return q.quantify(docs)
    estimator.__name__ = name
    return estimator


estimate_cc = _checked(("CC",), "estimate_cc")
estimate_acc = _checked(("ACC",), "estimate_acc")
estimate_pcc = _checked(("PCC",), "estimate_pcc")
estimate_pacc = _checked(("PACC",), "estimate_pacc")
estimate_hdy = _checked(("HDy",), "estimate_hdy")
estimate_mlpe = _checked(("MLPE",), "estimate_mlpe")
estimate_ensemble = _checked(("E-PACC-Ptr", "E-PACC-AE"), "estimate_ensemble")


def estimate_sld(q: SLD, docs, max_iter: int = SLD_MAX_ITER, epsilon: float = SLD_EPSILON) -> np.ndarray:
    if not isinstance(q, SLD):
        raise TypeError(f"estimate_sld expects a fitted SLD quantifier, got {q!r}")
    P = q.classify(docs)
    if len(P) == 0:
        raise ValueError("cannot quantify an empty sample")
    return sld_em(q.train_prevalence, P, epsilon, max_iter).prevalence
