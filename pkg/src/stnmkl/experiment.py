"""Cross-validation harness, metrics and the sampling-rate sweep."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, LengthMismatch, TooFewSamples
from .features import decimate_spectrogram, fit_pca, gram_matrix, pca_from_gram
from .kernel_svm import LINEAR, POLY, RBF, KernelSpec, gram, kernel, train_multiclass
from .lfp_data import (
    ARM_MOVEMENT,
    BUTTON_PRESS,
    HEMISPHERES,
    MOUTH_MOVEMENT,
    RANDOM_SEGMENT,
    SPEECH,
    LfpRecording,
    SyntheticSpec,
    bipolar_rereference,
    extract_windows,
    generate_synthetic_recording,
    load_recording,
    random_segment_markers,
)
from .mkl import MklConfig, train_mkl_multiclass
from .spectrogram import MorletParams, hemisphere_spectrogram

log = logging.getLogger(__name__)

TASK_SETS = {
    3: (BUTTON_PRESS, SPEECH, RANDOM_SEGMENT),
    5: (BUTTON_PRESS, ARM_MOVEMENT, SPEECH, MOUTH_MOVEMENT, RANDOM_SEGMENT),
}
SVM_FAMILIES = {"SVM-Linear": LINEAR, "SVM-RBF": RBF, "SVM-Poly": POLY}
CLASSIFIERS = tuple(SVM_FAMILIES) + ("MKL",)
DEFAULT_RATES = (5000.0, 500.0, 50.0, 25.0, 10.0, 2.0)
VIEWS = {"left": HEMISPHERES[0], "right": HEMISPHERES[1]}


@dataclass(frozen=True)
class ExperimentConfig:
    data: str | None = None
    synthetic: dict = field(default_factory=dict)
    tasks: int = 3
    rates: tuple = DEFAULT_RATES
    classifiers: tuple = ("SVM-Linear", "MKL")
    mkl: MklConfig = MklConfig()
    svm_C: float = 1.0
    svm_view: str = "left"
    kernel_offset: float = 1.0
    kernel_degree: int = 2
    folds: int = 10
    pca_retain: float = 0.95
    seed: int = 0
    events_per_class: int = 40
    random_segments: int | None = None
    guard: float = 2.0
    morlet_bandwidth: float = 1.0
    morlet_freqs: tuple = tuple(float(f) for f in range(13, 36))
    grid_search: bool = False
    shuffle_labels: bool = False
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "classifiers", tuple(self.classifiers))
        object.__setattr__(self, "morlet_freqs", tuple(float(f) for f in self.morlet_freqs))
        if isinstance(self.mkl, dict):
            object.__setattr__(self, "mkl", _mkl_from_dict(self.mkl))
        self.validate()

    @property
    def classes(self) -> tuple:
        return TASK_SETS[self.tasks]

    @property
    def morlet(self) -> MorletParams:
        return MorletParams(self.morlet_bandwidth, self.morlet_freqs)

    def validate(self) -> None:
        if self.tasks not in TASK_SETS:
            raise ConfigError(f"tasks must be 3 or 5, got {self.tasks}")
        if self.folds < 2:
            raise ConfigError("fold count must be >= 2")
        if not self.rates or any(r <= 0 for r in self.rates):
            raise ConfigError("rates must be positive")
        if any(b > a for a, b in zip(self.rates, self.rates[1:])):
            raise ConfigError("rates must be non-increasing")
        for c in self.classifiers:
            if c not in CLASSIFIERS:
                raise ConfigError(f"unknown classifier {c!r}; choose from {CLASSIFIERS}")
        if self.svm_view not in VIEWS:
            raise ConfigError(f"svm_view must be one of {tuple(VIEWS)}")
        for v, _ in self.mkl.bank:
            if v not in VIEWS:
                raise ConfigError(f"MKL bank view {v!r} not in {tuple(VIEWS)}")
        if not 0 < self.pca_retain <= 1:
            raise ConfigError("pca_retain must be in (0, 1]")
        if self.events_per_class < self.folds:
            raise ConfigError("events_per_class must be >= fold count")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.morlet.validate()

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["mkl"] = self.mkl.to_dict()
        d["rates"] = list(self.rates)
        d["classifiers"] = list(self.classifiers)
        d["morlet_freqs"] = list(self.morlet_freqs)
        d.pop("threads")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "mkl" in d and isinstance(d["mkl"], dict):
            d["mkl"] = _mkl_from_dict(d["mkl"])
        for key in ("rates", "classifiers", "morlet_freqs"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _mkl_from_dict(d: dict) -> MklConfig:
    d = dict(d)
    if "bank" in d:
        bank = []
        for entry in d["bank"]:
            if isinstance(entry, dict):
                entry = dict(entry)
                bank.append((entry.pop("view"), KernelSpec(**entry)))
            else:
                view, spec = entry
                bank.append((view, spec if isinstance(spec, KernelSpec) else KernelSpec(**spec)))
        d["bank"] = tuple(bank)
    try:
        return MklConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"mkl: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            import tomli

            data = tomli.loads(text)
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# metrics


def stratified_folds(labels, k: int, seed=0) -> np.ndarray:
    """Fold index per sample; class counts per fold differ by at most one.

    Each class is shuffled and dealt round-robin, continuing from the fold
    where the previous class stopped so fold sizes stay balanced too.
    """
    labels = np.asarray(labels, dtype=object)
    if k < 2:
        raise ConfigError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(labels.size, dtype=int)
    start = 0
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise TooFewSamples(f"class {c!r} has {idx.size} samples for {k} folds")
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (start + np.arange(idx.size)) % k
        start = (start + idx.size) % k
    return folds


@dataclass(frozen=True)
class ConfusionMatrix:
    matrix: np.ndarray
    counts: np.ndarray
    classes: tuple
    empty_rows: tuple


def confusion_matrix(predictions, truths, classes) -> ConfusionMatrix:
    """Row-normalised confusion matrix in percent (rows = truth)."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truths)} truths")
    classes = tuple(classes)
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predictions, truths):
        counts[pos[t], pos[p]] += 1
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        mat = np.where(totals > 0, 100.0 * counts / np.maximum(totals, 1), 0.0)
    empty = tuple(c for c, n in zip(classes, totals[:, 0]) if n == 0)
    return ConfusionMatrix(mat, counts, classes, empty)


@dataclass(frozen=True)
class ChanceRate:
    uniform: float
    majority: float

    @property
    def level(self) -> float:
        return max(self.uniform, self.majority)


def chance_rate(labels) -> ChanceRate:
    labels = list(labels)
    if not labels:
        raise LengthMismatch("empty label list")
    _, counts = np.unique(np.asarray(labels, dtype=object).astype(str), return_counts=True)
    return ChanceRate(100.0 / counts.size, 100.0 * counts.max() / len(labels))


# ---------------------------------------------------------------------------
# features


@dataclass(eq=False)
class FeatureSet:
    """Per-rate feature matrices for both views, aligned with ``labels``."""

    labels: np.ndarray
    onsets: np.ndarray
    views: dict  # rate -> {"left": (n, dim), "right": (n, dim)}
    classes: tuple

    grams: dict = field(default_factory=dict)

    def matrix(self, rate: float, view: str) -> np.ndarray:
        return self.views[float(rate)][view]

    def gram(self, rate: float, view: str):
        """Cached linear Gram matrix for long vectors (dim > n), else None."""
        X = self.matrix(rate, view)
        if X.shape[1] <= X.shape[0]:
            return None
        key = (float(rate), view)
        if key not in self.grams:
            self.grams[key] = gram_matrix(X)
        return self.grams[key]


def experiment_recording(config: ExperimentConfig) -> LfpRecording:
    if config.data:
        return load_recording(config.data)
    task_classes = [c for c in config.classes if c != RANDOM_SEGMENT]
    params = {"events_per_class": {c: config.events_per_class for c in task_classes}, "seed": config.seed}
    params.update(config.synthetic)
    if "profiles" in params:
        from .lfp_data import ClassProfile, DEFAULT_PROFILES

        profiles = dict(DEFAULT_PROFILES)
        profiles.update({k: ClassProfile(**v) if isinstance(v, dict) else v for k, v in params["profiles"].items()})
        params["profiles"] = profiles
    for key in ("beta_freqs", "contact_gains"):
        if key in params:
            params[key] = tuple(params[key])
    try:
        spec = SyntheticSpec(**params)
    except TypeError as exc:
        raise ConfigError(f"synthetic: {exc}") from exc
    return generate_synthetic_recording(spec)


def extract_features(rec: LfpRecording, config: ExperimentConfig) -> FeatureSet:
    """Windows -> stacked beta spectrograms -> per-rate decimated vectors.

    Matrices are stored as float32; every later computation promotes to
    float64.
    """
    classes = config.classes
    events = [e for e in rec.events if e.label in classes]
    if RANDOM_SEGMENT in classes:
        n_random = config.random_segments
        if n_random is None:
            n_random = config.events_per_class
        events += random_segment_markers(
            rec.n_samples, rec.sample_rate, rec.events, n_random, config.guard, rng_seed=config.seed
        )
    labels = np.array([e.label for e in events], dtype=object)
    for c in classes:
        if not np.any(labels == c):
            raise TooFewSamples(f"no events of class {c!r} in recording")
    params = config.morlet
    rates = [r for r in config.rates]
    if rates[0] > rec.sample_rate:
        raise ConfigError(f"rate {rates[0]} Hz exceeds the recording rate {rec.sample_rate} Hz")
    views: dict = {r: {} for r in rates}
    for vname, hemi in VIEWS.items():
        wins = extract_windows(bipolar_rereference(rec, hemi), events)
        for i, win in enumerate(wins):
            spec = hemisphere_spectrogram(win, params)
            for r in rates:
                vec = decimate_spectrogram(spec, r).values.reshape(-1)
                if vname not in views[r]:
                    views[r][vname] = np.empty((len(wins), vec.size), dtype=np.float32)
                views[r][vname][i] = vec
    return FeatureSet(labels, np.array([e.onset for e in events]), views, classes)


# ---------------------------------------------------------------------------
# evaluation


def _svm_spec(config: ExperimentConfig, family: str) -> KernelSpec:
    return KernelSpec(family, None, config.kernel_offset, config.kernel_degree)


def _scaled(spec: KernelSpec, X, scale: float) -> KernelSpec:
    spec = spec.resolve(X)
    if spec.family == RBF and scale != 1.0:
        spec = replace(spec, gamma=spec.gamma * scale)
    return spec


def _fit_predict(name, Ztr, Zte, ytr, config, C, gamma_scale):
    """Train ``name`` on projected training views and predict the test views.

    Returns (predictions, extra, seconds spent predicting).
    """
    classes = config.classes
    if name == "MKL":
        specs = [(view, _scaled(spec, Ztr[view], gamma_scale)) for view, spec in config.mkl.bank]
        bank_tr = [gram(Ztr[v], s).values for v, s in specs]
        model = train_mkl_multiclass(bank_tr, ytr, replace(config.mkl, C=C), classes=classes)
        t = time.perf_counter()
        pred = model.predict([kernel(Zte[v], Ztr[v], s) for v, s in specs])
        extra = {"d": [m.d.tolist() for m in model.models], "traces": [m.trace for m in model.models]}
        return pred, extra, time.perf_counter() - t
    view = config.svm_view
    s = _scaled(_svm_spec(config, SVM_FAMILIES[name]), Ztr[view], gamma_scale)
    model = train_multiclass(Ztr[view], ytr, s, C, classes=classes)
    t = time.perf_counter()
    pred = model.predict(Zte[view])
    return pred, {}, time.perf_counter() - t


GRID_C = (0.1, 1.0, 10.0)
GRID_GAMMA = (0.1, 1.0, 10.0)


def _select_hyper(name, Ztr, ytr, config, seed):
    """Inner stratified 3-fold search over C and RBF gamma scale (train fold only)."""
    base_C = config.mkl.C if name == "MKL" else config.svm_C
    inner = stratified_folds(ytr, 3, seed)
    uses_rbf = name == "SVM-RBF" or (name == "MKL" and any(s.family == RBF for _, s in config.mkl.bank))
    best, best_acc = (base_C, 1.0), -1.0
    for C in GRID_C:
        for g in GRID_GAMMA if uses_rbf else (1.0,):
            hits = 0
            for f in range(3):
                tr, te = inner != f, inner == f
                pred, *_ = _fit_predict(
                    name, {v: z[tr] for v, z in Ztr.items()}, {v: z[te] for v, z in Ztr.items()}, ytr[tr], config, C, g
                )
                hits += int(np.sum(pred == ytr[te]))
            acc = hits / ytr.size
            if acc > best_acc:
                best, best_acc = (C, g), acc
    return best


def _needed_views(config) -> list:
    needed = set()
    for name in config.classifiers:
        if name == "MKL":
            needed.update(v for v, _ in config.mkl.bank)
        else:
            needed.add(config.svm_view)
    return sorted(needed)


def _run_fold(fs: FeatureSet, labels, folds, f, rate, config):
    tr, te = folds != f, folds == f
    t0 = time.perf_counter()
    Ztr, Zte, pca = {}, {}, {}
    for view in _needed_views(config):
        X = fs.matrix(rate, view)
        G = fs.gram(rate, view)
        if G is not None:
            res = pca_from_gram(G, tr, te, config.pca_retain)
            Ztr[view], Zte[view] = res.train_scores, res.test_scores
        else:
            res = fit_pca(X[tr], config.pca_retain)
            Ztr[view], Zte[view] = res.transform(X[tr]), res.transform(X[te])
        pca[view] = {"retained": res.retained_fraction, "components": res.n_components}
    pca_time = time.perf_counter() - t0
    out = {}
    ytr = labels[tr]
    for name in config.classifiers:
        t1 = time.perf_counter()
        if config.grid_search:
            C, g = _select_hyper(name, Ztr, ytr, config, config.seed + f)
        else:
            C, g = (config.mkl.C if name == "MKL" else config.svm_C), 1.0
        pred, extra, test_t = _fit_predict(name, Ztr, Zte, ytr, config, C, g)
        out[name] = {
            "pred": pred,
            "truth": labels[te],
            "accuracy": 100.0 * float(np.mean(pred == labels[te])),
            "extra": extra,
            "C": C,
            "gamma_scale": g,
            "train_s": pca_time + (time.perf_counter() - t1) - test_t,
            "test_s": test_t,
            "n_test": int(te.sum()),
        }
    return out, pca


def evaluate(fs: FeatureSet, config: ExperimentConfig, traces: list | None = None) -> dict:
    """Cross-validate every (classifier, rate) cell on a fixed feature set.

    When ``traces`` is a list, MKL training traces are appended to it as
    flat rows (rate, fold, binary model index plus the trace row).
    """
    labels = np.asarray(fs.labels, dtype=object)
    if config.shuffle_labels:
        labels = labels[np.random.default_rng(config.seed).permutation(labels.size)]
    folds = stratified_folds(labels, config.folds, config.seed)
    classes = config.classes
    chance = chance_rate(labels)
    results = []
    for rate in config.rates:
        if float(rate) not in fs.views:
            raise ConfigError(f"no features extracted at {rate} Hz")
        t_gram = time.perf_counter()
        for view in _needed_views(config):
            fs.gram(rate, view)
        # shared Gram cost is charged evenly to the folds
        gram_share = (time.perf_counter() - t_gram) / config.folds
        jobs = range(config.folds)
        if config.threads > 1:
            with ThreadPoolExecutor(config.threads) as pool:
                per_fold = list(pool.map(lambda f: _run_fold(fs, labels, folds, f, rate, config), jobs))
        else:
            per_fold = [_run_fold(fs, labels, folds, f, rate, config) for f in jobs]
        for name in config.classifiers:
            cells = [pf[0][name] for pf in per_fold]
            pred = np.concatenate([c["pred"] for c in cells])
            truth = np.concatenate([c["truth"] for c in cells])
            cm = confusion_matrix(pred, truth, classes)
            accs = [c["accuracy"] for c in cells]
            entry = {
                "classifier": name,
                "rate": float(rate),
                "mean_accuracy": float(np.mean(accs)),
                "fold_accuracies": accs,
                "confusion": cm.matrix.tolist(),
                "confusion_counts": cm.counts.tolist(),
                "empty_rows": list(cm.empty_rows),
                "hyperparameters": [{"C": c["C"], "gamma_scale": c["gamma_scale"]} for c in cells],
                "pca": {
                    view: {
                        "retained": [pf[1][view]["retained"] for pf in per_fold],
                        "components": [pf[1][view]["components"] for pf in per_fold],
                    }
                    for view in sorted(per_fold[0][1])
                },
                "timing": {
                    "train_s_per_fold": gram_share + float(np.mean([c["train_s"] for c in cells])),
                    "test_s_per_sample": float(sum(c["test_s"] for c in cells) / max(sum(c["n_test"] for c in cells), 1)),
                },
            }
            if name == "MKL":
                entry["kernel_weights"] = [c["extra"]["d"] for c in cells]
                if traces is not None:
                    for f, c in enumerate(cells):
                        for k, tr in enumerate(c["extra"]["traces"]):
                            traces.extend({"rate": float(rate), "fold": f, "model": k, **row} for row in tr)
            results.append(entry)
            log.info("%s @ %g Hz: %.2f%%", name, rate, entry["mean_accuracy"])
    return {
        "config": config.to_dict(),
        "classes": list(classes),
        "n_events": int(labels.size),
        "class_counts": {c: int(np.sum(labels == c)) for c in classes},
        "chance_rate": {"uniform": chance.uniform, "majority": chance.majority},
        "folds": folds.tolist(),
        "results": results,
    }


def run_experiment(config: ExperimentConfig, traces: list | None = None) -> dict:
    t0 = time.perf_counter()
    rec = experiment_recording(config)
    fs = extract_features(rec, config)
    del rec
    t1 = time.perf_counter()
    report = evaluate(fs, config, traces)
    report["timing"] = {"features_s": t1 - t0, "evaluate_s": time.perf_counter() - t1}
    return report


def strip_timing(obj):
    """Copy of a report with every ``timing`` field removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True)


def result_cell(report: dict, classifier: str, rate: float) -> dict:
    for r in report["results"]:
        if r["classifier"] == classifier and r["rate"] == float(rate):
            return r
    raise KeyError((classifier, rate))


__all__ = [
    "CLASSIFIERS",
    "DEFAULT_RATES",
    "TASK_SETS",
    "ChanceRate",
    "ConfusionMatrix",
    "ExperimentConfig",
    "FeatureSet",
    "chance_rate",
    "confusion_matrix",
    "evaluate",
    "experiment_recording",
    "extract_features",
    "load_config",
    "report_json",
    "result_cell",
    "run_experiment",
    "stratified_folds",
    "strip_timing",
]
