"""Dataset loading, feature selection and synthetic data generation.

Canonical sparse vector files hold one document per line::

    <label>\t<f>:<v> <f>:<v> ...

``label`` is ``positive``, ``neutral`` or ``negative`` (any case), or an integer when a
label map is supplied. Feature ids are non-negative integers; values are decimal reals.
Blank lines and lines starting with ``#`` are skipped. A line holding only a label is
an empty document.

A dataset manifest is a ``key = value`` text file with keys ``name``, ``train``,
``validation``, ``test`` and optionally ``label_map``; relative paths resolve against
the manifest's directory. A label map file holds ``<integer> <label>`` per line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import Codeframe, LabelledCollection, as_csr
from .protocol import allocate_counts

# numeric encoding assumed for the tweet vector files when no label map is given
DEFAULT_NUMERIC_LABELS = {"1": "positive", "0": "neutral", "-1": "negative"}


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    name: str
    train: LabelledCollection
    validation: LabelledCollection
    test: LabelledCollection
    codeframe: Codeframe

    @property
    def labelled(self) -> LabelledCollection:
        """Training and validation splits joined."""
        return self.train + self.validation

    @property
    def n_features(self) -> int:
        return self.train.n_features

    def equals(self, other: "DatasetBundle") -> bool:
        return (self.name == other.name and self.codeframe == other.codeframe
                and all(a.equals(b) for a, b in zip(self.splits(), other.splits())))

    def splits(self):
        return self.train, self.validation, self.test


def read_label_map(path) -> dict[str, str]:
    mapping = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected '<integer> <label>'")
            mapping[parts[0]] = parts[1].lower()
    return mapping


def parse_sparse_lines(lines, codeframe: Codeframe, label_map: dict[str, str] | None = None,
                       source: str = "<input>"):
    """Parse sparse-vector lines into (rows, cols, vals, labels)."""
    rows, cols, vals, labels = [], [], [], []
    lookup = {l.lower(): i for i, l in enumerate(codeframe.labels)}
    n = 0
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        raw = parts[0]
        key = raw.lower()
        if label_map is not None and raw in label_map:
            key = label_map[raw]
        if key not in lookup:
            raise DataFormatError(f"{source}:{lineno}: unknown label {raw!r}")
        seen = set()
        for tok in parts[1:]:
            f, sep, v = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                fi, fv = int(f), float(v)
            except ValueError:
                raise DataFormatError(f"{source}:{lineno}: malformed feature {tok!r}") from None
            if fi < 0:
                raise DataFormatError(f"{source}:{lineno}: negative feature index {fi}")
            if fi in seen:
                raise DataFormatError(f"{source}:{lineno}: repeated feature index {fi}")
            seen.add(fi)
            if fv != 0:
                rows.append(n)
                cols.append(fi)
                vals.append(fv)
        labels.append(lookup[key])
        n += 1
    return rows, cols, vals, labels


def read_sparse_file(path, codeframe: Codeframe | None = None, label_map=None,
                     n_features: int | None = None) -> LabelledCollection:
    codeframe = codeframe or Codeframe.sentiment()
    with open(path) as f:
        rows, cols, vals, labels = parse_sparse_lines(f, codeframe, label_map, str(path))
    if not labels:
        raise DataFormatError(f"{path}: empty split")
    width = n_features if n_features is not None else (max(cols) + 1 if cols else 0)
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), width))
    X.sort_indices()
    return LabelledCollection(X, labels, codeframe)


def write_sparse_file(collection: LabelledCollection, path) -> None:
    X = collection.X.tocsr()
    X.sort_indices()
    names = collection.codeframe.labels
    with open(path, "w") as f:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            feats = " ".join(f"{j}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
            f.write(f"{names[collection.labels[i]]}\t{feats}\n")


def load_dataset(train_path, validation_path, test_path, name: str, label_map=None,
                 codeframe: Codeframe | None = None) -> DatasetBundle:
    codeframe = codeframe or Codeframe.sentiment()
    if isinstance(label_map, (str, os.PathLike)):
        label_map = read_label_map(label_map)
    splits = [read_sparse_file(p, codeframe, label_map) for p in (train_path, validation_path, test_path)]
    width = max(s.n_features for s in splits)
    splits = [LabelledCollection(as_csr(s.X, width), s.labels, codeframe) for s in splits]
    return DatasetBundle(name, *splits, codeframe)


def read_manifest(path) -> dict[str, str]:
    entries = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataFormatError(f"{path}:{lineno}: expected 'key = value'")
            entries[key.strip()] = value.strip()
    missing = {"name", "train", "validation", "test"} - entries.keys()
    if missing:
        raise DataFormatError(f"{path}: manifest lacks keys {sorted(missing)}")
    return entries


def write_manifest(path, name: str, train, validation, test, label_map=None) -> None:
    lines = [f"name = {name}", f"train = {train}", f"validation = {validation}", f"test = {test}"]
    if label_map:
        lines.append(f"label_map = {label_map}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetBundle:
    entries = read_manifest(path)
    base = Path(path).parent

    def resolve(p):
        return p if os.path.isabs(p) else str(base / p)

    label_map = resolve(entries["label_map"]) if entries.get("label_map") else None
    return load_dataset(resolve(entries["train"]), resolve(entries["validation"]),
                        resolve(entries["test"]), entries["name"], label_map)


def save_dataset(bundle: DatasetBundle, directory) -> Path:
    """Write the three splits in canonical form plus a manifest; return the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = {}
    for split, coll in zip(("train", "validation", "test"), bundle.splits()):
        names[split] = f"{bundle.name}.{split}.txt"
        write_sparse_file(coll, d / names[split])
    manifest = d / f"{bundle.name}.manifest"
    write_manifest(manifest, bundle.name, names["train"], names["validation"], names["test"])
    return manifest


def document_frequency(X: sp.spmatrix) -> np.ndarray:
    X = sp.csr_matrix(X)
    return np.bincount(X.indices[X.data != 0], minlength=X.shape[1])


def feature_select(bundle: DatasetBundle, min_df: int = 5) -> DatasetBundle:
    """Keep features occurring in at least ``min_df`` training documents, compacting
    indices in all splits. Documents left empty are kept."""
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df = document_frequency(bundle.train.X)
    keep = np.flatnonzero(df >= min_df)
    splits = [LabelledCollection(s.X[:, keep], s.labels, s.codeframe) for s in bundle.splits()]
    for s in splits:
        s.X.sort_indices()
    return DatasetBundle(bundle.name, *splits, bundle.codeframe)


def synthesize_collection(rng: np.random.Generator, labels, n_features: int, n_classes: int,
                          class_separation: float, doc_length: float = 12.0) -> LabelledCollection:
    """Bag-of-words documents over a shared vocabulary plus one disjoint block per class.

    Each token comes from the document's class block with probability
    ``class_separation`` and from the shared vocabulary otherwise; token frequencies
    inside every block follow a Zipf-like law.
    """
    block = n_features // (n_classes + 1)
    shared = n_features - block * n_classes
    zipf = 1.0 / np.arange(1, max(block, shared) + 1)
    w_block = zipf[:block] / zipf[:block].sum()
    w_shared = zipf[:shared] / zipf[:shared].sum()
    rows, cols = [], []
    for i, y in enumerate(labels):
        n_tok = 1 + rng.poisson(doc_length - 1)
        from_class = rng.random(n_tok) < class_separation
        k = int(from_class.sum())
        toks = np.concatenate([shared + y * block + rng.choice(block, size=k, p=w_block),
                               rng.choice(shared, size=n_tok - k, p=w_shared)])
        rows.append(np.full(n_tok, i))
        cols.append(toks)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    X = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(labels), n_features))
    X.sum_duplicates()
    X.sort_indices()
    return LabelledCollection(X, labels, Codeframe(tuple(f"class{c}" for c in range(n_classes))))


def synthesize_dataset(codeframe: Codeframe, n_features: int, sizes: tuple[int, int, int],
                       class_separation: float, seed: int = 0, prevalence=None,
                       test_prevalence=None, name: str = "synthetic",
                       doc_length: float = 12.0) -> DatasetBundle:
    """Deterministic synthetic bundle. Split labels follow ``prevalence`` (uniform by
    default) exactly up to integer rounding and are then shuffled."""
    n_classes = len(codeframe)
    if min(sizes) < n_classes:
        raise ValueError("every split needs at least one document per class")
    if not 0 <= class_separation <= 1:
        raise ValueError("class_separation must be in [0, 1]")
    if n_features < n_classes + 1:
        raise ValueError("need more features than classes")
    rng = np.random.default_rng(seed)
    prevalence = np.full(n_classes, 1 / n_classes) if prevalence is None else np.asarray(prevalence)
    test_prevalence = prevalence if test_prevalence is None else np.asarray(test_prevalence)
    splits = []
    for size, prev in zip(sizes, (prevalence, prevalence, test_prevalence)):
        labels = np.repeat(np.arange(n_classes), allocate_counts(prev, size))
        labels = rng.permutation(labels)
        coll = synthesize_collection(rng, labels, n_features, n_classes, class_separation, doc_length)
        splits.append(LabelledCollection(coll.X, coll.labels, codeframe))
    return DatasetBundle(name, *splits, codeframe)


def convert_files(train, validation, test, out_dir, name: str, label_map=None) -> Path:
    """Rewrite external vector files in canonical form and write a manifest.

    Input lines may separate the label with any whitespace; numeric labels are mapped
    with ``label_map`` or, failing that, 1/0/-1 to positive/neutral/negative.
    """
    mapping = read_label_map(label_map) if label_map else dict(DEFAULT_NUMERIC_LABELS)
    bundle = load_dataset(train, validation, test, name, mapping)
    return save_dataset(bundle, out_dir)
