"""Artificial- and natural-prevalence sampling protocols.

Every APP sample is generated from its own ``numpy.random.Generator`` (PCG64) seeded
with the entropy triple ``(seed, grid_point, replicate)``, so any single sample can be
regenerated without replaying the stream before it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from .core import LabelledCollection, SampleIndices, check_prevalence

POLICIES = ("auto", "always", "never")


@dataclass(frozen=True)
class PrevalenceGrid:
    step: float
    triples: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)


@dataclass(frozen=True)
class SamplingPlan:
    m: int = 25
    q: int = 100
    seed: int = 0
    replacement_policy: str = "auto"

    def __post_init__(self):
        if self.m < 1 or self.q < 1:
            raise ValueError("sampling plan needs m >= 1 and q >= 1")
        if self.replacement_policy not in POLICIES:
            raise ValueError(f"replacement policy must be one of {POLICIES}")


def _steps_per_unit(step: float) -> int:
    k = Fraction(step).limit_denominator(10**6)
    if k <= 0 or k.numerator != 1 or abs(float(k) - step) > 1e-12:
        raise ValueError(f"1/step must be an integer (step={step})")
    return k.denominator


def _compositions(total: int, parts: int):
    """Non-negative integer tuples summing to ``total``, lexicographically descending."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_grid(n_classes: int, step: float = 0.05) -> PrevalenceGrid:
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    k = _steps_per_unit(step)
    points = np.array([[c / k for c in comp] for comp in _compositions(k, n_classes)])
    return PrevalenceGrid(step=step, triples=points)


def allocate_counts(target, q: int) -> np.ndarray:
    """Largest-remainder integerization of ``q * target``; ties go to the lower class index."""
    if q < 1:
        raise ValueError("q must be >= 1")
    target = check_prevalence(target)
    exact = q * target
    # guard against 0.3*100 == 30.000000000000004 style drift
    floors = np.floor(exact + 1e-9).astype(np.int64)
    floors = np.minimum(floors, np.ceil(exact).astype(np.int64))
    remainders = exact - floors
    missing = q - int(floors.sum())
    if missing > 0:
        order = sorted(range(len(target)), key=lambda i: (-round(remainders[i], 9), i))
        for i in order[:missing]:
            floors[i] += 1
    elif missing < 0:
        order = sorted(range(len(target)), key=lambda i: (round(remainders[i], 9), -i))
        for i in order[:-missing]:
            floors[i] -= 1
    return floors


def draw_sample(pool: LabelledCollection, target, q: int, policy: str = "auto",
                seed: int | np.random.Generator | list | tuple = 0) -> SampleIndices:
    if len(pool) == 0:
        raise ValueError("cannot sample from an empty pool")
    if policy not in POLICIES:
        raise ValueError(f"replacement policy must be one of {POLICIES}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    counts = allocate_counts(target, q)
    if len(counts) != pool.n_classes:
        raise ValueError("target prevalence does not match the pool codeframe")
    chosen = []
    for c, n in enumerate(counts):
        if n == 0:
            continue
        members = pool.class_indices(c)
        label = pool.codeframe.labels[c]
        if len(members) == 0:
            raise ValueError(f"class {label!r} has no documents in the pool")
        if policy == "always":
            replace = True
        elif len(members) >= n:
            replace = False
        elif policy == "never":
            raise ValueError(f"class {label!r} has {len(members)} documents, {n} requested "
                             f"without replacement")
        else:
            replace = True
        chosen.append(rng.choice(members, size=n, replace=replace))
    return SampleIndices(np.concatenate(chosen))


def sample_seed(seed: int, grid_point: int, replicate: int) -> list[int]:
    return [int(seed), int(grid_point), int(replicate)]


@dataclass(frozen=True)
class APPSample:
    grid_point: int
    replicate: int
    target: np.ndarray
    indices: SampleIndices


def app_sample(pool: LabelledCollection, plan: SamplingPlan, grid: PrevalenceGrid,
               grid_point: int, replicate: int) -> APPSample:
    target = grid.triples[grid_point]
    idx = draw_sample(pool, target, plan.q, plan.replacement_policy,
                      sample_seed(plan.seed, grid_point, replicate))
    return APPSample(grid_point, replicate, target, idx)


def app_samples(pool: LabelledCollection, plan: SamplingPlan,
                grid: PrevalenceGrid) -> Iterator[APPSample]:
    for g in range(len(grid)):
        for r in range(plan.m):
            yield app_sample(pool, plan, grid, g, r)


def npp_sample(pool: LabelledCollection) -> tuple[np.ndarray, SampleIndices]:
    return pool.prevalence(), SampleIndices(np.arange(len(pool)))


def export_samples(samples, path) -> None:
    """One line per sample: grid point id, replicate id, then space-separated indices."""
    with open(path, "w") as f:
        for s in samples:
            f.write(f"{s.grid_point} {s.replicate} {' '.join(map(str, s.indices.indices))}\n")


def import_samples(path) -> list[tuple[int, int, np.ndarray]]:
    out = []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if parts:
                out.append((int(parts[0]), int(parts[1]), np.array(parts[2:], dtype=np.int64)))
    return out
