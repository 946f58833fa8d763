"""Choose the regularisation strength C by minimising a quantification loss on
artificial-prevalence samples drawn from the validation split."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import LabelledCollection, SampleIndices
from .metrics import error_by_name
from .protocol import APPSample, PrevalenceGrid, SamplingPlan, app_samples, enumerate_grid
from .quantifiers import Quantifier, make_quantifier

log = logging.getLogger(__name__)

C_GRID = tuple(10.0 ** i for i in range(-4, 6))
VALIDATION_PLAN = SamplingPlan(m=5, q=100)


@dataclass
class GridSearchResult:
    best_C: float
    scores: dict = field(default_factory=dict)
    target_loss: str = "ae"


def _indices(sample) -> np.ndarray:
    if isinstance(sample, APPSample):
        return sample.indices.indices
    if isinstance(sample, SampleIndices):
        return sample.indices
    return np.asarray(sample, dtype=np.int64)


def sample_errors(q: Quantifier, pool: LabelledCollection, samples, loss: str = "ae") -> list[float]:
    """Per-sample loss of ``q`` on samples drawn from ``pool``; the pool is classified once."""
    err = error_by_name(loss)
    classified = q.classify(pool.X)
    out = []
    for s in samples:
        idx = _indices(s)
        true = np.bincount(pool.labels[idx], minlength=pool.n_classes) / len(idx)
        out.append(err(true, q.aggregate(classified[idx]), len(idx)))
    return out


def evaluate_on_samples(q: Quantifier, pool: LabelledCollection, samples, loss: str = "ae") -> float:
    errors = sample_errors(q, pool, samples, loss)
    if not errors:
        raise ValueError("no samples to evaluate on")
    return float(np.mean(errors))


def select_C(method: str, train: LabelledCollection, validation: LabelledCollection,
             loss: str = "ae", plan: SamplingPlan = VALIDATION_PLAN, seed: int = 0,
             grid: PrevalenceGrid | None = None, C_grid=C_GRID, **quantifier_kwargs) -> GridSearchResult:
    """Fit ``method`` on ``train`` for each C and keep the one with the lowest mean
    validation loss; ties go to the smaller C. Refitting on train+validation is left
    to the caller."""
    if len(validation) == 0:
        raise ValueError("empty validation set")
    if train is validation:
        raise ValueError("validation samples must come from a split distinct from training")
    grid = grid or enumerate_grid(validation.n_classes, 0.05)
    samples = list(app_samples(validation, plan, grid))
    scores = {}
    for C in sorted(C_grid):
        q = make_quantifier(method, C, seed, **quantifier_kwargs).fit(train)
        scores[C] = evaluate_on_samples(q, validation, samples, loss)
        log.info("%s C=%g %s=%.5f", method, C, loss, scores[C])
    best = min(sorted(scores), key=lambda c: scores[c])
    return GridSearchResult(best, scores, loss)
