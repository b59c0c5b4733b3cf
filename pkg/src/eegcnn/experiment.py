"""Experiment configuration and the end-to-end cross-validated pipeline.

filter -> (decimate) -> standardize -> window -> arrange -> per-fold train/test -> metrics
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DatasetError, SyntheticSpec, generate_synthetic, load_dataset
from .evaluation import ConfusionMatrix, FoldResult, kfold_split, loso_split, mean
from .nn import ARCHITECTURES, TrainConfig, TrainError, train
from .ordering import Layout, OrderingError, OrderingStrategy, correlation_from_array, resolve_layouts
from .preprocess import (STATS_SCOPES, FilterSpec, bandpass, compute_stats, decimate, standardize,
                         standardize_array, stats_from_arrays)
from .windowing import WindowError, WindowSpec, WindowTally, build_instances

log = logging.getLogger(__name__)

TARGETS = ("arousal", "valence")
CV_SCHEMES = ("kfold10", "loso")
REPORT_CSV_HEADER = ("target", "architecture", "window_s", "ordering", "fold", "accuracy", "mcc")


class ConfigError(ValueError):
    """Invalid experiment configuration (field-level message)."""


class PipelineError(RuntimeError):
    def __init__(self, stage: str, fold, cause: Exception):
        self.stage, self.fold, self.cause = stage, fold, cause
        where = f"stage={stage}" + (f" fold={fold}" if fold is not None else "")
        super().__init__(f"[{where}] {type(cause).__name__}: {cause}")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DatasetSource:
    manifest: str | None = None
    synthetic: SyntheticSpec | None = None
    synthetic_seed: int = 0

    def to_dict(self) -> dict:
        if self.manifest is not None:
            return {"manifest": self.manifest}
        return {"synthetic": self.synthetic.to_dict(), "synthetic_seed": self.synthetic_seed}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource
    seed: int
    architecture: str = "3Conv"
    target: str = "arousal"
    cv: str = "kfold10"
    filter: FilterSpec = FilterSpec()
    decimate: int = 1
    stats_scope: str = "train_only"
    window: WindowSpec = WindowSpec()
    ordering: OrderingStrategy = OrderingStrategy()
    train: TrainConfig = TrainConfig()
    stratified: bool = False
    shuffle_labels: bool = False
    output_dir: str = "results"

    def to_dict(self) -> dict:
        """Canonical echo of everything that determines results."""
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "dataset": self.dataset.to_dict(),
            "seed": self.seed,
            "architecture": self.architecture,
            "target": self.target,
            "cv": self.cv,
            "filter": {"low_cut_hz": self.filter.low_cut_hz, "high_cut_hz": self.filter.high_cut_hz,
                       "order": self.filter.order},
            "decimate": self.decimate,
            "stats_scope": self.stats_scope,
            "window": {"window_s": self.window.window_s, "overlap_s": self.window.overlap_s,
                       "binarize_threshold": self.window.binarize_threshold,
                       "tie_policy": self.window.tie_policy},
            "ordering": {"kind": self.ordering.kind, "n_repeats": self.ordering.n_repeats,
                         "seed": self.ordering.seed},
            "train": train,
            "stratified": self.stratified,
            "shuffle_labels": self.shuffle_labels,
        }

    def slug(self) -> str:
        return (f"{self.target}_{self.architecture}_w{self.window.window_s:g}"
                f"_o{self.window.overlap_s:g}_{self.ordering.kind}_{self.cv}")


_SWEEPABLE = {
    ("architecture",), ("target",), ("cv",), ("window", "window_s"), ("ordering",),
}


def _get(d: dict, key: str, kind, default=None, required=False, where=""):
    name = f"{where}{key}"
    if key not in d:
        if required:
            raise ConfigError(f"{name}: required field missing")
        return default
    v = d[key]
    if kind is float:
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        v = float(v) if ok else v
    elif kind is int:
        ok = isinstance(v, int) and not isinstance(v, bool)
    else:
        ok = isinstance(v, kind)
    if not ok:
        raise ConfigError(f"{name}: expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}{sorted(unknown)[0]}: unknown field")


def _section(d: dict, key: str) -> dict:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"{key}: expected object")
    return v


def expand_sweeps(doc: dict) -> list[dict]:
    """Expand list-valued sweepable fields into a Cartesian product of scalar configs."""
    axes = []
    for path in sorted(_SWEEPABLE):
        node = doc
        for p in path[:-1]:
            node = node.get(p, {}) if isinstance(node, dict) else {}
        if isinstance(node, dict) and isinstance(node.get(path[-1]), list):
            values = node[path[-1]]
            if not values:
                raise ConfigError(f"{'.'.join(path)}: empty sweep list")
            axes.append((path, values))
    if not axes:
        return [doc]
    out = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        d = json.loads(json.dumps(doc))
        for (path, _), value in zip(axes, combo):
            node = d
            for p in path[:-1]:
                node = node.setdefault(p, {})
            node[path[-1]] = value
        out.append(d)
    return out


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate one scalar config document (no sweep lists)."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    _check_keys(doc, {"dataset", "seed", "architecture", "target", "cv", "filter", "decimate",
                      "stats_scope", "window", "ordering", "train", "stratified", "shuffle_labels",
                      "output_dir"}, "")
    seed = _get(doc, "seed", int, required=True)
    if seed < 0:
        raise ConfigError("seed: must be a non-negative integer")

    ds = doc.get("dataset")
    if not isinstance(ds, dict):
        raise ConfigError("dataset: required object with 'manifest' or 'synthetic'")
    _check_keys(ds, {"manifest", "synthetic", "synthetic_seed"}, "dataset.")
    if ("manifest" in ds) == ("synthetic" in ds):
        raise ConfigError("dataset: give exactly one of 'manifest' or 'synthetic'")
    if "manifest" in ds:
        mpath = Path(_get(ds, "manifest", str, where="dataset."))
        resolved = mpath if mpath.is_absolute() or base_dir is None else base_dir / mpath
        if not resolved.exists():
            raise ConfigError(f"dataset.manifest: file not found: {resolved}")
        source = DatasetSource(manifest=str(resolved))
    else:
        syn = _get(ds, "synthetic", dict, where="dataset.")
        try:
            spec = SyntheticSpec.from_dict(syn)
        except DatasetError as exc:
            raise ConfigError(f"dataset.synthetic.{exc}") from None
        source = DatasetSource(synthetic=spec, synthetic_seed=_get(ds, "synthetic_seed", int, 0, where="dataset."))

    arch = _get(doc, "architecture", str, "3Conv")
    if arch not in ARCHITECTURES:
        raise ConfigError(f"architecture: must be one of {list(ARCHITECTURES)}, got {arch!r}")
    target = _get(doc, "target", str, "arousal")
    if target not in TARGETS:
        raise ConfigError(f"target: must be one of {list(TARGETS)}, got {target!r}")
    cv = _get(doc, "cv", str, "kfold10")
    if cv not in CV_SCHEMES:
        raise ConfigError(f"cv: must be one of {list(CV_SCHEMES)}, got {cv!r}")
    scope = _get(doc, "stats_scope", str, "train_only")
    if scope not in STATS_SCOPES:
        raise ConfigError(f"stats_scope: must be one of {list(STATS_SCOPES)}, got {scope!r}")
    dec = _get(doc, "decimate", int, 1)
    if dec < 1:
        raise ConfigError("decimate: must be >= 1")

    f = _section(doc, "filter")
    _check_keys(f, {"low_cut_hz", "high_cut_hz", "order"}, "filter.")
    fspec = FilterSpec(_get(f, "low_cut_hz", float, 0.5, where="filter."),
                       _get(f, "high_cut_hz", float, 60.0, where="filter."),
                       _get(f, "order", int, 4, where="filter."))
    if fspec.order < 1 or not 0 < fspec.low_cut_hz < fspec.high_cut_hz:
        raise ConfigError("filter: need order >= 1 and 0 < low_cut_hz < high_cut_hz")

    w = _section(doc, "window")
    _check_keys(w, {"window_s", "overlap_s", "binarize_threshold", "tie_policy"}, "window.")
    try:
        wspec = WindowSpec(_get(w, "window_s", float, 4.0, where="window."),
                           _get(w, "overlap_s", float, 0.0, where="window."),
                           _get(w, "binarize_threshold", float, 0.0, where="window."),
                           _get(w, "tie_policy", str, "drop", where="window."))
    except WindowError as exc:
        raise ConfigError(str(exc)) from None

    o = doc.get("ordering", {})
    if isinstance(o, str):
        o = {"kind": o}
    if not isinstance(o, dict):
        raise ConfigError("ordering: expected object or strategy name")
    _check_keys(o, {"kind", "n_repeats", "seed"}, "ordering.")
    try:
        ospec = OrderingStrategy(_get(o, "kind", str, "given", where="ordering."),
                                 _get(o, "n_repeats", int, 20, where="ordering."),
                                 _get(o, "seed", int, seed, where="ordering."))
    except OrderingError as exc:
        raise ConfigError(str(exc)) from None

    t = _section(doc, "train")
    _check_keys(t, {"learning_rate", "beta1", "beta2", "eps", "batch_size", "max_epochs", "patience",
                    "validation_fraction"}, "train.")
    try:
        tspec = TrainConfig(
            learning_rate=_get(t, "learning_rate", float, 1e-3, where="train."),
            beta1=_get(t, "beta1", float, 0.9, where="train."),
            beta2=_get(t, "beta2", float, 0.999, where="train."),
            eps=_get(t, "eps", float, 1e-8, where="train."),
            batch_size=_get(t, "batch_size", int, 64, where="train."),
            max_epochs=_get(t, "max_epochs", int, 200, where="train."),
            patience=_get(t, "patience", int, 10, where="train."),
            validation_fraction=_get(t, "validation_fraction", float, 0.1, where="train."),
        )
    except TrainError as exc:
        raise ConfigError(str(exc)) from None

    return ExperimentConfig(
        dataset=source, seed=seed, architecture=arch, target=target, cv=cv, filter=fspec, decimate=dec,
        stats_scope=scope, window=wspec, ordering=ospec, train=tspec,
        stratified=_get(doc, "stratified", bool, False),
        shuffle_labels=_get(doc, "shuffle_labels", bool, False),
        output_dir=_get(doc, "output_dir", str, "results"),
    )


def load_configs(path, seed: int | None = None) -> list[ExperimentConfig]:
    """Parse and sweep-expand a config file; ``seed`` overrides the file's top-level seed."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    if seed is not None:
        doc["seed"] = seed
    return [parse_config(d, path.parent) for d in expand_sweeps(doc)]


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class Prepared:
    """Windowed data in canonical electrode order, ready for fold loops."""

    data: np.ndarray  # (N, 12, L)
    labels: np.ndarray
    subjects: np.ndarray
    tally: WindowTally
    sample_rate_hz: float
    recordings: int = 0
    extra: dict = field(default_factory=dict)


@contextmanager
def _stage(name, fold=None):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, fold, exc) from exc


def prepare(config: ExperimentConfig) -> Prepared:
    with _stage("load"):
        if config.dataset.manifest is not None:
            recs = load_dataset(config.dataset.manifest)
        else:
            recs = generate_synthetic(config.dataset.synthetic, config.dataset.synthetic_seed)
    with _stage("filter"):
        recs = [decimate(bandpass(r, config.filter), config.decimate) for r in recs]
    with _stage("standardize"):
        if config.stats_scope == "global":
            stats = compute_stats(recs)
            recs = [standardize(r, stats) for r in recs]
        elif config.stats_scope == "per_recording":
            recs = [standardize(r, compute_stats([r])) for r in recs]
    with _stage("window"):
        tally = WindowTally()
        windows = build_instances(recs, config.window, tally)
        if not windows:
            raise WindowError("no labeled windows")
        data = np.stack([w.data for w in windows])
        labels = np.array([w.label(config.target) for w in windows], dtype=np.int64)
        subjects = np.array([w.subject_id for w in windows])
    if config.shuffle_labels:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
        labels = labels[rng.permutation(labels.size)]
    return Prepared(data, labels, subjects, tally, recs[0].sample_rate_hz, len(recs))


def make_splits(config: ExperimentConfig, prep: Prepared):
    with _stage("split"):
        n = len(prep.labels)
        if config.cv == "loso":
            return [(s, tr, te) for s, tr, te in loso_split(prep.subjects)]
        folds = kfold_split(n, 10, config.seed, labels=prep.labels if config.stratified else None)
        return [(i, tr, te) for i, (tr, te) in enumerate(folds)]


def _fold_seed(seed: int, repeat: int, fold_index: int) -> int:
    return int(np.random.SeedSequence([seed, repeat, fold_index]).generate_state(1)[0])


@dataclass
class FoldTask:
    fold: int | str
    fold_index: int
    repeat: int | None
    layout: Layout | None
    strategy: OrderingStrategy
    architecture: str
    train_config: TrainConfig
    stats_scope: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    log_path: str | None = None


def run_fold(task: FoldTask) -> FoldResult:
    fold = task.fold
    xtr, xte = task.x_train, task.x_test
    if task.stats_scope == "train_only":
        with _stage("standardize", fold):
            # stats pooled over the training windows only
            stats = stats_from_arrays([xtr.transpose(1, 0, 2).reshape(12, -1)])
            xtr = standardize_array(xtr.transpose(1, 0, 2), stats).transpose(1, 0, 2)
            xte = standardize_array(xte.transpose(1, 0, 2), stats).transpose(1, 0, 2)
    with _stage("arrange", fold):
        layout = task.layout
        if layout is None:
            corr = None
            if task.strategy.needs_correlation:
                corr = correlation_from_array(xtr.transpose(1, 0, 2).reshape(12, -1))
            layout = resolve_layouts(task.strategy, corr)[0]
        xtr = layout.apply(xtr)[..., None]
        xte = layout.apply(xte)[..., None]
    with _stage("train", fold):
        model, tlog = train(task.architecture, xtr, task.y_train, task.train_config)
        if task.log_path:
            tlog.write_csv(task.log_path)
    with _stage("test", fold):
        pred = np.argmax(model.predict(xte), axis=1)
        cm = ConfusionMatrix.from_labels(task.y_test, pred)
    return FoldResult(fold, cm, repeat=task.repeat, order=layout.describe(), n_train=len(task.y_train),
                      best_epoch=tlog.best_epoch, stopped_epoch=tlog.stopped_epoch)


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Run the full pipeline; returns the report dict (also written when ``out_dir`` is given)."""
    out = Path(out_dir) if out_dir is not None else None
    prep = prepare(config)
    splits = make_splits(config, prep)

    if config.ordering.kind == "random":
        layouts = resolve_layouts(config.ordering)
    elif config.ordering.needs_correlation:
        layouts = [None]  # resolved per fold on training data
    else:
        layouts = resolve_layouts(config.ordering)

    tasks = []
    for layout in layouts:
        repeat = layout.repeat if layout is not None else None
        for fi, (fold, tr, te) in enumerate(splits):
            log_path = None
            if out is not None:
                name = f"fold_{fold}" if repeat is None else f"repeat_{repeat:02d}_fold_{fold}"
                log_path = str(out / "logs" / f"{name}.csv")
            tasks.append(FoldTask(
                fold, fi, repeat, layout, config.ordering, config.architecture,
                replace(config.train, seed=_fold_seed(config.seed, repeat or 0, fi)), config.stats_scope,
                prep.data[tr], prep.labels[tr], prep.data[te], prep.labels[te], log_path,
            ))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_fold, tasks))
    else:
        results = []
        for t in tasks:
            log.info("fold %s%s", t.fold, "" if t.repeat is None else f" repeat {t.repeat}")
            results.append(run_fold(t))

    report = build_report(config, prep, results)
    if out is not None:
        write_report(report, out)
    return report


def build_report(config: ExperimentConfig, prep: Prepared, results: list[FoldResult]) -> dict:
    folds = [r.to_dict() for r in results]
    report = {
        "config": config.to_dict(),
        "data": {
            "recordings": prep.recordings,
            "sample_rate_hz": prep.sample_rate_hz,
            "instances": int(len(prep.labels)),
            "positives": int(prep.labels.sum()),
            "windows_total": prep.tally.windows,
            "windows_dropped_ties": prep.tally.dropped,
        },
        "folds": folds,
    }
    if config.ordering.kind == "random":
        repeats = []
        for r in sorted({f.repeat for f in results}):
            rs = [f for f in results if f.repeat == r]
            repeats.append({"repeat": r, "order": rs[0].order,
                            "mean_accuracy": mean(f.accuracy for f in rs),
                            "mean_mcc": mean(f.mcc for f in rs)})
        report["repeats"] = repeats
        report["mean_accuracy"] = mean(r["mean_accuracy"] for r in repeats)
        report["mean_mcc"] = mean(r["mean_mcc"] for r in repeats)
    else:
        report["mean_accuracy"] = mean(f.accuracy for f in results)
        report["mean_mcc"] = mean(f.mcc for f in results)
    return report


def report_rows(report: dict) -> list[list]:
    c = report["config"]
    base = [c["target"], c["architecture"], repr(float(c["window"]["window_s"])), c["ordering"]["kind"]]
    rows = []
    for f in report["folds"]:
        fold = f["fold"] if "repeat" not in f else f"r{f['repeat']}:{f['fold']}"
        rows.append(base + [fold, repr(f["accuracy"]), repr(f["mcc"])])
    rows.append(base + ["mean", repr(report["mean_accuracy"]), repr(report["mean_mcc"])])
    return rows


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_report(report: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dump_json(report), encoding="utf-8")
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_CSV_HEADER)
        w.writerows(report_rows(report))
    return out / "report.json"
