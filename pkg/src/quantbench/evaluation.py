"""Experiment runner and the analyses built on its per-sample records.

Output schemas (all CSV with a header row):

``records.csv``
    dataset, method, loss_target, grid_point, replicate, sample_size, target_prev,
    realized_prev, estimated_prev, train_prev, shift, ae, rae. Prevalence columns are
    semicolon-joined decimals with 6 digits; error columns use full float precision.
``comparison.csv``
    dataset, method, mean, best, tie, marker, p_value, score. ``marker`` is empty
    (p <= 0.001 against the row's best method), ``dagger`` (0.001 < p < 0.05) or
    ``ddagger`` (p >= 0.05); ``score`` is 1 for the best mean and 0 for the worst of
    the row. The ``Average`` dataset row pools all paired samples for its t-tests.
``ranks.csv``
    dataset, method, rank (1 = lowest mean error; ``Average`` holds mean ranks).
``shiftbins.csv``
    bin, lo, hi, method, mean_error, n_samples. Bin 0 is [0, w], bin k is (kw, (k+1)w].
``diagonal.csv``
    class, true_prev, method, mean_estimate, n_samples.
``bias.csv``
    class, method, n, min, q1, median, q3, max, whisker_lo, whisker_hi, n_outliers.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .core import LabelledCollection
from .data import DatasetBundle
from .metrics import ae, rae
from .model_selection import C_GRID, GridSearchResult, select_C
from .protocol import PrevalenceGrid, SamplingPlan, app_samples, enumerate_grid
from .quantifiers import make_quantifier

log = logging.getLogger(__name__)

RECORD_FIELDS = ("dataset", "method", "loss_target", "grid_point", "replicate", "sample_size",
                 "target_prev", "realized_prev", "estimated_prev", "train_prev", "shift", "ae", "rae")
MARKERS = {"": "", "dagger": "†", "ddagger": "‡"}
AVERAGE = "Average"


@dataclass
class ExperimentRecord:
    dataset: str
    method: str
    loss_target: str
    grid_point: int
    replicate: int
    sample_size: int
    target_prev: np.ndarray
    realized_prev: np.ndarray
    estimated_prev: np.ndarray
    train_prev: np.ndarray
    shift: float
    ae: float
    rae: float

    def error(self, measure: str) -> float:
        return self.ae if measure.lower() == "ae" else self.rae

    @property
    def key(self):
        return self.dataset, self.grid_point, self.replicate


@dataclass
class ExperimentSettings:
    plan: SamplingPlan = field(default_factory=SamplingPlan)
    validation_plan: SamplingPlan = field(default_factory=lambda: SamplingPlan(m=5, q=100))
    step: float = 0.05
    C_grid: tuple = C_GRID
    ensemble_n: int = 50
    ensemble_q: int = 1000
    seed: int = 0


@dataclass
class MethodOutcome:
    method: str
    records: list
    selection: GridSearchResult | None = None
    error: str | None = None
    seconds: float = 0.0


def _fit_quantifier(method, bundle, loss, settings, grid, pacc_selection=None):
    kw = dict(ensemble_n=settings.ensemble_n, ensemble_q=settings.ensemble_q)
    selection = None
    C = 1.0
    if method != "MLPE":
        if method.startswith("E-PACC"):
            # ensembles reuse the C chosen for plain PACC
            selection = pacc_selection or select_C("PACC", bundle.train, bundle.validation, loss,
                                                   settings.validation_plan, settings.seed, grid,
                                                   settings.C_grid)
        else:
            selection = select_C(method, bundle.train, bundle.validation, loss,
                                 settings.validation_plan, settings.seed, grid, settings.C_grid, **kw)
        C = selection.best_C
    q = make_quantifier(method, C, settings.seed, **kw).fit(bundle.labelled)
    return q, selection


def run_method(bundle: DatasetBundle, method: str, loss: str, settings: ExperimentSettings,
               pacc_selection: GridSearchResult | None = None) -> MethodOutcome:
    """Select C on the validation split, refit on train+validation and evaluate on
    every APP sample of the test split. Failures are captured, not raised."""
    t0 = time.perf_counter()
    grid = enumerate_grid(len(bundle.codeframe), settings.step)
    try:
        q, selection = _fit_quantifier(method, bundle, loss, settings, grid, pacc_selection)
        records = evaluate_quantifier(q, method, bundle.name, loss, bundle.labelled.prevalence(),
                                      bundle.test, settings.plan, grid)
    except Exception as exc:  # noqa: BLE001 - one failing method must not sink the run
        log.exception("method %s failed on %s", method, bundle.name)
        return MethodOutcome(method, [], None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0)
    return MethodOutcome(method, records, selection, None, time.perf_counter() - t0)


def evaluate_quantifier(q, method: str, dataset: str, loss: str, train_prev,
                        pool: LabelledCollection, plan: SamplingPlan,
                        grid: PrevalenceGrid) -> list[ExperimentRecord]:
    classified = q.classify(pool.X)
    records = []
    for s in app_samples(pool, plan, grid):
        idx = s.indices.indices
        realized = np.bincount(pool.labels[idx], minlength=pool.n_classes) / len(idx)
        est = q.aggregate(classified[idx])
        records.append(ExperimentRecord(
            dataset, method, loss.lower(), s.grid_point, s.replicate, len(idx),
            np.asarray(s.target, dtype=float), realized, est, np.asarray(train_prev, dtype=float),
            ae(train_prev, realized), ae(realized, est), rae(realized, est, len(idx))))
    return records


def _run_method_job(args):
    return run_method(*args)


def run_experiment(bundle: DatasetBundle, methods, loss: str = "ae", plan: SamplingPlan | None = None,
                   seed: int | None = None, *, settings: ExperimentSettings | None = None,
                   jobs: int = 1, outcomes: list | None = None) -> list[ExperimentRecord]:
    """Evaluate every method on the identical stream of APP test samples.

    ``plan`` and ``seed`` override the corresponding fields of ``settings``. Records
    come back ordered by method (as given), grid point and replicate, whatever the
    degree of parallelism. Pass a list as ``outcomes`` to collect the per-method
    selection results and failures.
    """
    methods = list(methods)
    if not methods:
        raise ValueError("no methods to run")
    settings = replace(settings or ExperimentSettings())
    if plan is not None:
        settings.plan = plan
    if seed is not None:
        settings.seed = seed
        settings.plan = replace(settings.plan, seed=seed)
        settings.validation_plan = replace(settings.validation_plan, seed=seed)
    if loss.lower() not in ("ae", "rae"):
        raise ValueError(f"loss must be 'ae' or 'rae', got {loss!r}")
    jobs_args = [(bundle, m, loss, settings) for m in methods]
    if jobs > 1 and len(methods) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(methods))) as pool:
            results = list(pool.map(_run_method_job, jobs_args))
    else:
        results = []
        pacc = None
        for args in jobs_args:
            r = run_method(*args, pacc_selection=pacc if args[1].startswith("E-PACC") else None)
            if args[1] == "PACC" and r.selection is not None:
                pacc = r.selection
            results.append(r)
    if outcomes is not None:
        outcomes.extend(results)
    return [rec for r in results for rec in r.records]


# statistics ---------------------------------------------------------------

def paired_ttest(errors_a, errors_b) -> float:
    """Two-tailed p-value of the paired-difference t statistic (n - 1 dof).

    Differences with zero variance give p = 1 when their mean is 0 and p = 0 otherwise.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("paired t-test needs two equal-length samples of size >= 2")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0 or not np.isfinite(sd):
        return 1.0 if d.mean() == 0 else 0.0
    t = d.mean() / (sd / math.sqrt(len(d)))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), len(d) - 1)))


def significance_marker(p: float) -> str:
    if p <= 0.001:
        return ""
    if p < 0.05:
        return "dagger"
    return "ddagger"


@dataclass
class ComparisonReport:
    measure: str
    datasets: list
    methods: list
    means: dict  # (dataset, method) -> mean error
    best: dict  # dataset -> method
    tie: dict  # dataset -> bool
    pvalues: dict  # (dataset, method) -> p-value against best (None for best)
    markers: dict  # (dataset, method) -> '', 'dagger' or 'ddagger'
    ranks: dict  # (dataset, method) -> rank; Average -> mean rank
    scores: dict  # (dataset, method) -> normalised colour score

    def rows(self):
        return self.datasets + [AVERAGE]


def _group_errors(records, measure):
    errors = defaultdict(dict)
    methods = []
    datasets = []
    for r in records:
        if r.method not in methods:
            methods.append(r.method)
        if r.dataset not in datasets:
            datasets.append(r.dataset)
        errors[r.method][r.key] = r.error(measure)
    return errors, methods, datasets


def _compare_row(row, present, mean_of, pairs_of, report):
    means = {m: mean_of(m) for m in present}
    low = min(means.values())
    tied = sorted(m for m in present if means[m] == low)
    best = tied[0]
    report.best[row] = best
    report.tie[row] = len(tied) > 1
    worst = max(means.values())
    for m in present:
        report.means[row, m] = means[m]
        report.scores[row, m] = 1.0 if worst == low else (worst - means[m]) / (worst - low)
        if m == best:
            report.pvalues[row, m] = None
            report.markers[row, m] = ""
            continue
        a, b = pairs_of(m, best)
        p = paired_ttest(a, b) if len(a) >= 2 else float("nan")
        report.pvalues[row, m] = p
        report.markers[row, m] = significance_marker(p) if np.isfinite(p) else ""


def build_comparison(records, measure: str = "ae") -> ComparisonReport:
    """Per-dataset means, best method, significance markers and ranks.

    Paired t-tests match samples by (dataset, grid point, replicate). The Average
    row averages the per-dataset means and pools every matched pair for its tests.
    """
    measure = measure.lower()
    errors, methods, datasets = _group_errors(records, measure)
    report = ComparisonReport(measure, datasets, methods, {}, {}, {}, {}, {}, {}, {})

    def pairs(keys_filter):
        def pairs_of(m, best):
            keys = sorted(k for k in errors[m] if k in errors[best] and keys_filter(k))
            return [errors[m][k] for k in keys], [errors[best][k] for k in keys]
        return pairs_of

    per_dataset = {}
    for d in datasets:
        present = [m for m in methods if any(k[0] == d for k in errors[m])]
        per_dataset[d] = present

        def mean_of(m, d=d):
            return float(np.mean([e for k, e in errors[m].items() if k[0] == d]))

        _compare_row(d, present, mean_of, pairs(lambda k, d=d: k[0] == d), report)
        order = sorted(present, key=lambda m: (report.means[d, m], m))
        for rank, m in enumerate(order, 1):
            report.ranks[d, m] = rank

    everywhere = [m for m in methods if all(m in per_dataset[d] for d in datasets)]
    if everywhere:
        _compare_row(AVERAGE, everywhere,
                     lambda m: float(np.mean([report.means[d, m] for d in datasets])),
                     pairs(lambda k: True), report)
        for m in everywhere:
            report.ranks[AVERAGE, m] = float(np.mean([report.ranks[d, m] for d in datasets]))
    return report


@dataclass
class ShiftBin:
    index: int
    lo: float
    hi: float
    means: dict
    counts: dict

    @property
    def n_samples(self) -> int:
        return max(self.counts.values(), default=0)

    def contains(self, s: float) -> bool:
        return (self.lo <= s <= self.hi) if self.index == 0 else (self.lo < s <= self.hi)


BIN_TOLERANCE = 1e-9


def shift_bin_index(shift: float, width: float) -> int:
    """Bin 0 is [0, w]; bin k >= 1 is (kw, (k+1)w]. Shifts within 1e-9 of a boundary
    count as sitting on it."""
    return max(0, math.ceil(shift / width - BIN_TOLERANCE) - 1)


def shift_bins(records, measure: str = "ae", width: float = 0.05) -> list[ShiftBin]:
    if not width > 0:
        raise ValueError("bin width must be positive")
    acc = defaultdict(lambda: defaultdict(list))
    methods = []
    for r in records:
        if r.method not in methods:
            methods.append(r.method)
        acc[shift_bin_index(r.shift, width)][r.method].append(r.error(measure))
    if not acc:
        return []
    bins = []
    for k in range(max(acc) + 1):
        cell = acc.get(k, {})
        bins.append(ShiftBin(k, k * width, (k + 1) * width,
                             {m: float(np.mean(cell[m])) for m in methods if cell.get(m)},
                             {m: len(cell[m]) for m in methods if cell.get(m)}))
    return bins


def diagonal_data(records, class_index: int, digits: int = 6) -> list[tuple[float, dict]]:
    """Mean estimated prevalence per method for each true prevalence value of a class."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in records:
        acc[round(float(r.realized_prev[class_index]), digits)][r.method].append(
            float(r.estimated_prev[class_index]))
    return [(x, {m: float(np.mean(v)) for m, v in acc[x].items()}) for x in sorted(acc)]


@dataclass
class BiasSummary:
    errors: np.ndarray
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    whisker_lo: float
    whisker_hi: float
    outliers: np.ndarray  # boolean mask over errors


def summarize_bias(errors) -> BiasSummary:
    e = np.asarray(errors, dtype=np.float64)
    q1, med, q3 = np.percentile(e, [25, 50, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = (e < lo) | (e > hi)
    inside = e[~outliers]
    return BiasSummary(e, float(e.min()), float(q1), float(med), float(q3), float(e.max()),
                       float(inside.min()), float(inside.max()), outliers)


def bias_data(records, class_index: int) -> dict[str, BiasSummary]:
    """Signed errors (estimated minus true prevalence) of one class, per method."""
    acc = defaultdict(list)
    for r in records:
        acc[r.method].append(float(r.estimated_prev[class_index] - r.realized_prev[class_index]))
    return {m: summarize_bias(v) for m, v in acc.items()}


# CSV ----------------------------------------------------------------------

def _vec(v) -> str:
    return ";".join(f"{x:.6f}" for x in v)


def _unvec(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.split(";")])


def write_records(records, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.dataset, r.method, r.loss_target, r.grid_point, r.replicate, r.sample_size,
                        _vec(r.target_prev), _vec(r.realized_prev), _vec(r.estimated_prev),
                        _vec(r.train_prev), repr(float(r.shift)), repr(float(r.ae)), repr(float(r.rae))])


def read_records(path) -> list[ExperimentRecord]:
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for lineno, row in enumerate(reader, 2):
            try:
                records.append(ExperimentRecord(
                    row["dataset"], row["method"], row["loss_target"], int(row["grid_point"]),
                    int(row["replicate"]), int(row["sample_size"]), _unvec(row["target_prev"]),
                    _unvec(row["realized_prev"]), _unvec(row["estimated_prev"]),
                    _unvec(row["train_prev"]), float(row["shift"]), float(row["ae"]), float(row["rae"])))
            except (TypeError, ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from None
    return records


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def write_reports(records, measure: str, out_dir, class_labels=None) -> dict[str, Path]:
    """Write every analysis table (plus a shift-bin SVG) for ``records``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    rep = build_comparison(records, measure)

    paths["comparison"] = out / "comparison.csv"
    with open(paths["comparison"], "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["dataset", "method", "mean", "best", "tie", "marker", "p_value", "score"])
        for d in rep.rows():
            for m in rep.methods:
                if (d, m) in rep.means:
                    w.writerow([d, m, _fmt(rep.means[d, m]), int(rep.best[d] == m), int(rep.tie[d]),
                                rep.markers[d, m], _fmt(rep.pvalues[d, m]), _fmt(rep.scores[d, m])])

    paths["ranks"] = out / "ranks.csv"
    with open(paths["ranks"], "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["dataset", "method", "rank"])
        for d in rep.rows():
            for m in rep.methods:
                if (d, m) in rep.ranks:
                    w.writerow([d, m, rep.ranks[d, m]])

    bins = shift_bins(records, measure)
    paths["shiftbins"] = out / "shiftbins.csv"
    with open(paths["shiftbins"], "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin", "lo", "hi", "method", "mean_error", "n_samples"])
        for b in bins:
            for m in rep.methods:
                if m in b.means:
                    w.writerow([b.index, f"{b.lo:.2f}", f"{b.hi:.2f}", m, _fmt(b.means[m]), b.counts[m]])
    paths["shiftbins_svg"] = out / f"shiftbins_{measure.lower()}.svg"
    paths["shiftbins_svg"].write_text(shift_bins_svg(bins, rep.methods, measure))

    n_classes = len(records[0].realized_prev) if records else 0
    labels = class_labels or [str(c) for c in range(n_classes)]
    paths["diagonal"] = out / "diagonal.csv"
    paths["bias"] = out / "bias.csv"
    with open(paths["diagonal"], "w", newline="") as fd, open(paths["bias"], "w", newline="") as fb:
        wd = csv.writer(fd, lineterminator="\n")
        wb = csv.writer(fb, lineterminator="\n")
        wd.writerow(["class", "true_prev", "method", "mean_estimate", "n_samples"])
        wb.writerow(["class", "method", "n", "min", "q1", "median", "q3", "max",
                     "whisker_lo", "whisker_hi", "n_outliers"])
        for c in range(n_classes):
            counts = defaultdict(int)
            for r in records:
                counts[round(float(r.realized_prev[c]), 6), r.method] += 1
            for x, per_method in diagonal_data(records, c):
                for m in rep.methods:
                    if m in per_method:
                        wd.writerow([labels[c], f"{x:.6f}", m, _fmt(per_method[m]), counts[x, m]])
            for m, s in bias_data(records, c).items():
                wb.writerow([labels[c], m, len(s.errors), _fmt(s.minimum), _fmt(s.q1), _fmt(s.median),
                             _fmt(s.q3), _fmt(s.maximum), _fmt(s.whisker_lo), _fmt(s.whisker_hi),
                             int(s.outliers.sum())])
    return paths


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf")


def shift_bins_svg(bins, methods, measure: str, width: int = 640, height: int = 400) -> str:
    """Plain line chart of mean error per shift bin, one polyline per method."""
    pad = 50
    top = max([v for b in bins for v in b.means.values()] + [1e-12])
    xmax = bins[-1].hi if bins else 1.0

    def xy(x, y):
        return pad + (width - 2 * pad) * x / xmax, height - pad - (height - 2 * pad) * y / top

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">shift</text>',
             f'<text x="12" y="{height / 2}" font-size="12">{measure.upper()}</text>']
    for i, m in enumerate(methods):
        pts = [xy((b.lo + b.hi) / 2, b.means[m]) for b in bins if m in b.means]
        colour = _PALETTE[i % len(_PALETTE)]
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="2" points="'
                     + " ".join(f"{x:.1f},{y:.1f}" for x, y in pts) + '"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i}" font-size="11" fill="{colour}">{m}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
