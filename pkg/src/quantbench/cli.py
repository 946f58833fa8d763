"""Command-line front end: ``convert``, ``run`` and ``report``.

Run configurations are INI files. The ``[run]`` section takes::

    datasets = a.manifest, b.manifest      # paths relative to the config file
    methods = CC, ACC, PCC, PACC, SLD, HDy, MLPE, E-PACC-Ptr, E-PACC-AE
    loss = ae                              # or rae
    seed = 0
    step = 0.05
    m = 25
    q = 100
    validation_m = 5
    validation_q = 100
    replacement_policy = auto
    min_df = 5
    c_grid = 1e-4, 1e-3, ..., 1e5
    ensemble_n = 50
    ensemble_q = 1000
    output = results
    jobs = <available cores>

Every key is optional except that at least one dataset must be given, either as a
manifest or as a ``[synthetic:<name>]`` section with keys ``n_features``, ``sizes``
(train, validation, test), ``class_separation``, ``seed`` and optionally
``prevalence`` and ``test_prevalence``. The environment variable ``QUANTBENCH_SEED``
overrides ``seed``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import Codeframe
from .data import DataFormatError, convert_files, feature_select, load_manifest, synthesize_dataset
from .evaluation import ExperimentSettings, read_records, run_experiment, write_records, write_reports
from .model_selection import C_GRID
from .protocol import SamplingPlan
from .quantifiers import METHODS

log = logging.getLogger("quantbench")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
SEED_ENV = "QUANTBENCH_SEED"


class UsageError(Exception):
    pass


@dataclass
class SyntheticSpec:
    name: str
    n_features: int = 1000
    sizes: tuple = (3000, 1000, 4000)
    class_separation: float = 0.35
    seed: int = 0
    prevalence: tuple | None = None
    test_prevalence: tuple | None = None


@dataclass
class RunConfig:
    manifests: list = field(default_factory=list)
    synthetic: list = field(default_factory=list)
    methods: tuple = METHODS
    loss: str = "ae"
    seed: int = 0
    step: float = 0.05
    m: int = 25
    q: int = 100
    validation_m: int = 5
    validation_q: int = 100
    replacement_policy: str = "auto"
    min_df: int = 5
    C_grid: tuple = C_GRID
    ensemble_n: int = 50
    ensemble_q: int = 1000
    output: str = "results"
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)

    def settings(self) -> ExperimentSettings:
        return ExperimentSettings(
            plan=SamplingPlan(self.m, self.q, self.seed, self.replacement_policy),
            validation_plan=SamplingPlan(self.validation_m, self.validation_q, self.seed,
                                         self.replacement_policy),
            step=self.step, C_grid=tuple(self.C_grid), ensemble_n=self.ensemble_n,
            ensemble_q=self.ensemble_q, seed=self.seed)


def _list(value: str) -> list[str]:
    return [v.strip() for v in value.replace("\n", ",").split(",") if v.strip()]


def _floats(value: str) -> tuple:
    return tuple(float(v) for v in _list(value))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    cfg = RunConfig()
    base = path.parent
    run = parser["run"] if parser.has_section("run") else {}
    try:
        if "datasets" in run:
            cfg.manifests = [p if os.path.isabs(p) else str(base / p) for p in _list(run["datasets"])]
        if "methods" in run:
            cfg.methods = tuple(_list(run["methods"]))
        for key in ("loss", "replacement_policy"):
            if key in run:
                setattr(cfg, key, run[key].strip().lower())
        for key in ("seed", "m", "q", "validation_m", "validation_q", "min_df", "ensemble_n",
                    "ensemble_q", "jobs"):
            if key in run:
                setattr(cfg, key, int(run[key]))
        if "step" in run:
            cfg.step = float(run["step"])
        if "c_grid" in run:
            cfg.C_grid = _floats(run["c_grid"])
        if "output" in run:
            out = run["output"].strip()
            cfg.output = out if os.path.isabs(out) else os.path.normpath(base / out)
        else:
            cfg.output = os.path.normpath(base / cfg.output)
        for section in parser.sections():
            if not section.startswith("synthetic:"):
                continue
            s = parser[section]
            spec = SyntheticSpec(section.split(":", 1)[1].strip())
            if "n_features" in s:
                spec.n_features = int(s["n_features"])
            if "sizes" in s:
                spec.sizes = tuple(int(v) for v in _list(s["sizes"]))
            if "class_separation" in s:
                spec.class_separation = float(s["class_separation"])
            if "seed" in s:
                spec.seed = int(s["seed"])
            if "prevalence" in s:
                spec.prevalence = _floats(s["prevalence"])
            if "test_prevalence" in s:
                spec.test_prevalence = _floats(s["test_prevalence"])
            cfg.synthetic.append(spec)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return cfg


def validate_config(cfg: RunConfig) -> None:
    unknown = [m for m in cfg.methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown methods {unknown}; choose from {list(METHODS)}")
    if not cfg.methods:
        raise UsageError("no methods given")
    if cfg.loss not in ("ae", "rae"):
        raise UsageError(f"loss must be ae or rae, got {cfg.loss!r}")
    if not cfg.manifests and not cfg.synthetic:
        raise UsageError("no datasets given")
    if cfg.jobs < 1:
        raise UsageError("jobs must be >= 1")


def load_bundles(cfg: RunConfig):
    bundles = []
    for manifest in cfg.manifests:
        if not Path(manifest).is_file():
            raise DataFormatError(f"missing dataset: {manifest}")
        bundles.append(load_manifest(manifest))
    for spec in cfg.synthetic:
        bundles.append(synthesize_dataset(Codeframe.sentiment(), spec.n_features, spec.sizes,
                                          spec.class_separation, spec.seed, spec.prevalence,
                                          spec.test_prevalence, spec.name))
    if cfg.min_df > 1:
        bundles = [feature_select(b, cfg.min_df) for b in bundles]
    return bundles


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.methods:
        cfg.methods = tuple(_list(",".join(args.methods)))
    if args.loss:
        cfg.loss = args.loss
    if os.environ.get(SEED_ENV):
        try:
            cfg.seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer") from None
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.output:
        cfg.output = args.output
    validate_config(cfg)

    started = time.time()
    bundles = load_bundles(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    settings = cfg.settings()
    records, per_dataset = [], {}
    for bundle in bundles:
        outcomes = []
        log.info("dataset %s: %d/%d/%d documents, %d features", bundle.name, len(bundle.train),
                 len(bundle.validation), len(bundle.test), bundle.n_features)
        records += run_experiment(bundle, cfg.methods, cfg.loss, settings=settings, jobs=cfg.jobs,
                                  outcomes=outcomes)
        per_dataset[bundle.name] = {
            o.method: dict(best_C=o.selection.best_C if o.selection else None,
                           validation_scores={repr(c): v for c, v in o.selection.scores.items()}
                           if o.selection else None,
                           failed=o.error, seconds=round(o.seconds, 3))
            for o in outcomes}

    records_path = out / "records.csv"
    write_records(records, records_path)
    if records:
        # reports are built from the file just written so `report` reproduces them exactly
        write_reports(read_records(records_path), cfg.loss, out)
    shutil.copyfile(args.config, out / "config.ini")
    cfg_dict = asdict(cfg)
    cfg_dict["C_grid"] = list(cfg.C_grid)
    metadata = dict(
        software=dict(package="quantbench", version=__version__, numpy=np.__version__,
                      python=sys.version.split()[0]),
        seed=cfg.seed, config=cfg_dict, datasets=per_dataset,
        notes=["paired t-tests pair samples within each dataset; the Average row pools every pair",
               "ensemble members reuse the C selected for PACC",
               "MLPE has no hyperparameter and skips model selection"],
        wall_clock_seconds=round(time.time() - started, 3),
        started=time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)))
    (out / "run-metadata.json").write_text(json.dumps(metadata, indent=2, default=str) + "\n")

    failed = [(d, m) for d, ms in per_dataset.items() for m, info in ms.items() if info["failed"]]
    for d, m in failed:
        print(f"warning: {m} failed on {d}: {per_dataset[d][m]['failed']}", file=sys.stderr)
    print(f"{len(records)} records written to {records_path}")
    return EXIT_RUNTIME if not records else EXIT_OK


def cmd_report(args) -> int:
    records = read_records(args.records)
    if not records:
        raise DataFormatError(f"{args.records}: no records")
    out = Path(args.output) if args.output else Path(args.records).parent
    paths = write_reports(records, args.measure, out)
    print(f"reports written to {paths['comparison'].parent}")
    return EXIT_OK


def cmd_convert(args) -> int:
    manifest = convert_files(args.train, args.validation, args.test, args.output, args.name,
                             args.label_map)
    print(manifest)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quantbench", description="Quantification benchmark under the artificial-prevalence protocol.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("convert", help="rewrite external vector files in canonical form")
    c.add_argument("--train", required=True)
    c.add_argument("--validation", required=True)
    c.add_argument("--test", required=True)
    c.add_argument("--name", required=True)
    c.add_argument("--output", required=True, help="output directory")
    c.add_argument("--label-map", help="file of '<integer> <label>' lines")
    c.set_defaults(func=cmd_convert)

    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--methods", nargs="+", help=f"subset of {', '.join(METHODS)}")
    r.add_argument("--loss", choices=("ae", "rae"))
    r.add_argument("--seed", type=int)
    r.add_argument("--jobs", type=int)
    r.add_argument("--output", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="rebuild the analysis tables from records.csv")
    s.add_argument("--records", required=True)
    s.add_argument("--measure", choices=("ae", "rae"), default="ae")
    s.add_argument("--output", help="output directory (defaults to the records' directory)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # malformed records and invalid dataset contents surface as ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
