"""Shared domain types: codeframes, sparse documents, labelled collections and prevalence vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

PREVALENCE_ATOL = 1e-9
RENORMALIZE_ATOL = 1e-6

SENTIMENT_LABELS = ("positive", "neutral", "negative")


@dataclass(frozen=True)
class Codeframe:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValueError("a codeframe needs at least 2 classes")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in codeframe: {labels}")

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    @classmethod
    def sentiment(cls) -> "Codeframe":
        return cls(SENTIMENT_LABELS)


@dataclass(frozen=True)
class SparseDocument:
    """A document as sorted (feature index, value) pairs with no stored zeros."""

    indices: tuple[int, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")
        idx = np.asarray(self.indices, dtype=np.int64)
        if np.any(idx < 0):
            raise ValueError("negative feature index")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("feature indices must be strictly increasing")
        if any(v == 0 for v in self.values):
            raise ValueError("explicit zero values are not allowed")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "SparseDocument":
        pairs = sorted((int(f), float(v)) for f, v in pairs if v != 0)
        return cls(tuple(f for f, _ in pairs), tuple(v for _, v in pairs))

    def __len__(self):
        return len(self.indices)


def documents_to_csr(docs: Sequence[SparseDocument], n_features: int | None = None) -> sp.csr_matrix:
    indptr = np.zeros(len(docs) + 1, dtype=np.int64)
    for i, d in enumerate(docs):
        indptr[i + 1] = indptr[i] + len(d)
    indices = np.fromiter((f for d in docs for f in d.indices), dtype=np.int64, count=indptr[-1])
    data = np.fromiter((v for d in docs for v in d.values), dtype=np.float64, count=indptr[-1])
    if n_features is None:
        n_features = int(indices.max()) + 1 if len(indices) else 0
    return sp.csr_matrix((data, indices, indptr), shape=(len(docs), n_features))


def csr_to_documents(X: sp.csr_matrix) -> list[SparseDocument]:
    X = sp.csr_matrix(X)
    X.sort_indices()
    X.eliminate_zeros()
    docs = []
    for i in range(X.shape[0]):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        docs.append(SparseDocument(tuple(int(f) for f in X.indices[lo:hi]),
                                   tuple(float(v) for v in X.data[lo:hi])))
    return docs


def as_csr(docs, n_features: int | None = None) -> sp.csr_matrix:
    """Accept a sparse matrix, a dense array or a list of SparseDocument."""
    if sp.issparse(docs):
        X = docs.tocsr()
    elif isinstance(docs, np.ndarray):
        X = sp.csr_matrix(docs)
    else:
        X = documents_to_csr(list(docs), n_features)
    if n_features is not None and X.shape[1] != n_features:
        if X.shape[1] > n_features:
            # features never seen in training carry no weight
            X = X[:, :n_features]
        else:
            X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(X.shape[0], n_features))
    return X


def check_prevalence(values, n_classes: int | None = None) -> np.ndarray:
    """Validate a prevalence vector, renormalizing small floating-point drift.

    Sums within 1e-9 of one are accepted as they are; sums within 1e-6 are divided
    by their total; anything further off (or any entry outside [0, 1]) is an error.
    """
    p = np.asarray(values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"prevalence must be a vector, got shape {p.shape}")
    if n_classes is not None and len(p) != n_classes:
        raise ValueError(f"prevalence has {len(p)} entries, expected {n_classes}")
    if np.any(~np.isfinite(p)) or np.any(p < -PREVALENCE_ATOL) or np.any(p > 1 + PREVALENCE_ATOL):
        raise ValueError(f"prevalence entries out of [0,1]: {p}")
    p = np.clip(p, 0.0, 1.0)
    s = p.sum()
    if abs(s - 1) <= PREVALENCE_ATOL:
        return p
    if abs(s - 1) <= RENORMALIZE_ATOL:
        return p / s
    raise ValueError(f"prevalence does not sum to 1 (sum={s!r})")


def is_valid_prevalence(p, atol: float = PREVALENCE_ATOL) -> bool:
    p = np.asarray(p, dtype=np.float64)
    return bool(np.all(np.isfinite(p)) and np.all(p >= 0) and np.all(p <= 1 + atol)
                and abs(p.sum() - 1) <= atol)


def normalize_prevalence(values) -> np.ndarray:
    """Clip to non-negative and L1-normalize; an all-zero vector becomes uniform."""
    p = np.clip(np.asarray(values, dtype=np.float64), 0.0, None)
    p[~np.isfinite(p)] = 0.0
    s = p.sum()
    if s <= 0:
        return np.full(len(p), 1.0 / len(p))
    return p / s


def uniform_prevalence(codeframe: Codeframe | int) -> np.ndarray:
    n = codeframe if isinstance(codeframe, int) else len(codeframe)
    return np.full(n, 1.0 / n)


def prevalence_from_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty sample")
    return np.bincount(labels, minlength=n_classes).astype(np.float64) / len(labels)


@dataclass(frozen=True, eq=False)
class LabelledCollection:
    """Sparse document vectors (CSR rows) with dense class indices over a codeframe."""

    X: sp.csr_matrix
    labels: np.ndarray
    codeframe: Codeframe
    _counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = as_csr(self.X)
        labels = np.asarray(self.labels, dtype=np.int64)
        if X.shape[0] != len(labels):
            raise ValueError(f"{X.shape[0]} documents but {len(labels)} labels")
        if len(labels) and (labels.min() < 0 or labels.max() >= len(self.codeframe)):
            raise ValueError("label index outside the codeframe")
        labels.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_counts", np.bincount(labels, minlength=len(self.codeframe)))

    @classmethod
    def from_documents(cls, docs: Sequence[SparseDocument], labels, codeframe: Codeframe,
                       n_features: int | None = None) -> "LabelledCollection":
        return cls(documents_to_csr(docs, n_features), labels, codeframe)

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.codeframe)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return self._counts.copy()

    @property
    def documents(self) -> list[SparseDocument]:
        return csr_to_documents(self.X)

    def prevalence(self) -> np.ndarray:
        if len(self) == 0:
            raise ValueError("empty sample")
        return self._counts / len(self)

    def class_indices(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def sampling_from_index(self, indices) -> "LabelledCollection":
        indices = np.asarray(indices, dtype=np.int64)
        return LabelledCollection(self.X[indices], self.labels[indices], self.codeframe)

    def __add__(self, other: "LabelledCollection") -> "LabelledCollection":
        if other.codeframe != self.codeframe:
            raise ValueError("cannot join collections over different codeframes")
        n = max(self.n_features, other.n_features)
        return LabelledCollection(sp.vstack([as_csr(self.X, n), as_csr(other.X, n)]).tocsr(),
                                  np.concatenate([self.labels, other.labels]), self.codeframe)

    def equals(self, other: "LabelledCollection") -> bool:
        if self.codeframe != other.codeframe or self.X.shape != other.X.shape:
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        return (self.X != other.X).nnz == 0


def prevalence(collection: LabelledCollection) -> np.ndarray:
    return collection.prevalence()


@dataclass(frozen=True)
class SampleIndices:
    """Positions into a parent collection; duplicates appear when drawn with replacement."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def check(self, parent: LabelledCollection):
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= len(parent)):
            raise IndexError("sample index outside the parent collection")
        return self

    def prevalence(self, parent: LabelledCollection) -> np.ndarray:
        return prevalence_from_labels(parent.labels[self.indices], parent.n_classes)
