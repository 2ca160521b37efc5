"""Metrics and the experiment harness: confusion-matrix metrics, pairwise
binary identification, the incremental-class experiment, per-session latency
measurement, and per-user pattern statistics.

Precision here is TP / (TP + FP) (so that F1 = 2PR/(P+R) is coherent);
TN / (TN + FP), sometimes mislabeled as precision, is specificity and is not
used. Multi-class aggregates are unweighted (macro) means over classes, with
per-class values always available for other averaging choices.

CSV outputs are byte-deterministic for a fixed seed. Wall-clock timing
columns are left empty unless explicitly requested, because measured times
can never be reproducible.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import (
    ForestHyper,
    LinearHyper,
    TreeHyper,
    train_baseline,
)
from .model import ModelConfig, MvmcModel, train
from .preprocess import impute_missing
from .seeding import derive_seed
from .sessions import SYMBOL_CATEGORIES, Dataset, Session, ViewKind, filter_users, stratified_split

__all__ = [
    "ConfusionMatrix",
    "EvalReport",
    "ExperimentRow",
    "HeatmapResult",
    "LatencyReport",
    "RESULTS_COLUMNS",
    "compute_metrics",
    "confusion_from_model",
    "incremental_experiment",
    "latency_bench",
    "pairwise_heatmap",
    "pattern_summary",
    "write_heatmap_csv",
    "write_patterns_csv",
    "write_results_csv",
]

RESULTS_COLUMNS = (
    "experiment",
    "model",
    "n_classes",
    "seed",
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "train_s",
    "infer_ms_median",
)


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts; entry (i, j) is sessions of true class i predicted j."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(c < 0):
            raise ValueError("confusion matrix entries must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_pairs(cls, y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        for t, p in zip(y_true, y_pred, strict=True):
            counts[t, p] += 1
        return cls(counts=counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class EvalReport:
    """Per-class and macro metrics for one evaluation run."""

    model: str
    n_classes: int
    n_sessions: int
    accuracy: float
    precision: np.ndarray  # per class
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    ms_per_session: float | None = None


def compute_metrics(cm: ConfusionMatrix, model: str = "", ms_per_session: float | None = None) -> EvalReport:
    """Standard one-vs-rest metrics from a confusion matrix.

    Per class c: TP = cm[c,c], FP = column sum minus TP, FN = row sum minus
    TP; zero denominators yield 0. Accuracy is trace / total.
    """
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return EvalReport(
        model=model,
        n_classes=cm.n_classes,
        n_sessions=int(total),
        accuracy=float(tp.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        ms_per_session=ms_per_session,
    )


def confusion_from_model(model, ds: Dataset) -> ConfusionMatrix:
    """Predict every session of ``ds`` with any model exposing
    ``predict_many`` and tally the confusion matrix."""
    y_true = ds.labels()
    predicted = model.predict_many(list(ds.sessions))
    y_pred = [ds.label_index[u] for u in predicted]
    return ConfusionMatrix.from_pairs(list(y_true), y_pred, ds.n_classes)


# --- experiment drivers -----------------------------------------------------


def _three_way_split(
    ds: Dataset, test_fraction: float, val_fraction: float, seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    trainval, test = stratified_split(ds, test_fraction, derive_seed(seed, "test-split"))
    train_split, val = stratified_split(trainval, val_fraction, derive_seed(seed, "val-split"))
    return train_split, val, test


@dataclass(frozen=True)
class HeatmapResult:
    users: tuple[str, ...]
    f1: np.ndarray  # (K, K), symmetric, diagonal fixed at 1.0 by convention
    accuracy: np.ndarray


def pairwise_heatmap(
    ds: Dataset,
    cfg: ModelConfig,
    test_fraction: float = 0.3,
    val_fraction: float = 0.25,
    seed: int = 0,
) -> HeatmapResult:
    """Train one two-class model per unordered user pair and evaluate it on
    the pair's held-out sessions. Diagonal entries (a user against itself)
    are recorded as 1.0 by convention."""
    if ds.n_classes < 2:
        raise ValueError("need at least two users")
    users = tuple(sorted(ds.label_index, key=lambda u: ds.label_index[u]))
    k = len(users)
    f1 = np.eye(k)
    acc = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            pair = (users[i], users[j])
            sessions = tuple(s for s in ds.sessions if s.user_id in pair)
            pair_ds = Dataset(sessions=sessions, label_index={pair[0]: 0, pair[1]: 1})
            pair_seed = derive_seed(seed, f"pair:{pair[0]}|{pair[1]}")
            pair_cfg = replace(cfg, n_classes=2, seed=pair_seed)
            tr, val, test = _three_way_split(pair_ds, test_fraction, val_fraction, pair_seed)
            model, _ = train(tr, val, pair_cfg)
            report = compute_metrics(confusion_from_model(model, test))
            f1[i, j] = f1[j, i] = report.macro_f1
            acc[i, j] = acc[j, i] = report.accuracy
    return HeatmapResult(users=users, f1=f1, accuracy=acc)


def write_heatmap_csv(result: HeatmapResult, path: str | Path) -> None:
    """Off-diagonal pairs only, sorted, as ``user_a,user_b,f1,accuracy``."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("# pairwise identification; diagonal entries use the 1.0 convention\n")
        writer = csv.writer(fh)
        writer.writerow(["user_a", "user_b", "f1", "accuracy"])
        order = sorted(
            (a, b) for a in range(len(result.users)) for b in range(len(result.users)) if a < b
        )
        for a, b in order:
            writer.writerow(
                [
                    result.users[a],
                    result.users[b],
                    f"{result.f1[a, b]:.6f}",
                    f"{result.accuracy[a, b]:.6f}",
                ]
            )


@dataclass(frozen=True)
class ExperimentRow:
    """One results-CSV row."""

    experiment: str
    model: str
    n_classes: int
    seed: int
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    train_s: float | None = None
    infer_ms_median: float | None = None


def write_results_csv(rows: Sequence[ExperimentRow], path: str | Path, timings: bool = False) -> None:
    """Write rows under the canonical column set. Timing columns are blank
    unless ``timings`` is set, keeping default outputs byte-reproducible."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.experiment,
                    r.model,
                    r.n_classes,
                    r.seed,
                    f"{r.accuracy:.6f}",
                    f"{r.macro_precision:.6f}",
                    f"{r.macro_recall:.6f}",
                    f"{r.macro_f1:.6f}",
                    "" if (not timings or r.train_s is None) else f"{r.train_s:.3f}",
                    "" if (not timings or r.infer_ms_median is None) else f"{r.infer_ms_median:.3f}",
                ]
            )


def _train_named_model(
    name: str,
    train_split: Dataset,
    val_split: Dataset,
    cfg: ModelConfig,
    linear_hyper: LinearHyper | None,
    tree_hyper: TreeHyper | None,
    forest_hyper: ForestHyper | None,
):
    """Dispatch a model name to its trainer. Deep models use the validation
    split for best-epoch selection; baselines train on train+val combined."""
    if name == "deep-mvmc" or name.startswith("deep-single"):
        model_cfg = cfg
        if name.startswith("deep-single"):
            view = ViewKind(name.split(":", 1)[1])
            model_cfg = replace(cfg, views_enabled=(view,))
        return train(train_split, val_split, model_cfg)[0]
    merged = Dataset(
        sessions=train_split.sessions + val_split.sessions,
        label_index=dict(train_split.label_index),
    )
    forest_hyper = forest_hyper or ForestHyper()
    forest_hyper = replace(forest_hyper, seed=derive_seed(cfg.seed, f"forest:{name}"))
    return train_baseline(
        name, merged, linear_hyper=linear_hyper, tree_hyper=tree_hyper, forest_hyper=forest_hyper
    )


def incremental_experiment(
    ds: Dataset,
    ns: Sequence[int],
    models: Sequence[str],
    cfg: ModelConfig,
    test_fraction: float = 0.2,
    val_fraction: float = 0.2,
    seed: int = 0,
    linear_hyper: LinearHyper | None = None,
    tree_hyper: TreeHyper | None = None,
    forest_hyper: ForestHyper | None = None,
    measure_time: bool = False,
) -> list[ExperimentRow]:
    """For each class count n: keep the n most active users, split, train
    every named model, and evaluate on the held-out sessions. One row per
    (n, model), sorted by (n, model) for reproducible output."""
    if max(ns) > ds.n_classes:
        raise ValueError(f"requested up to {max(ns)} users, dataset has {ds.n_classes}")
    rows: list[ExperimentRow] = []
    for n in sorted(ns):
        sub = filter_users(ds, n)
        sub_seed = derive_seed(seed, f"incremental:{n}")
        tr, val, test = _three_way_split(sub, test_fraction, val_fraction, sub_seed)
        for name in sorted(models):
            model_cfg = replace(cfg, n_classes=n, seed=derive_seed(sub_seed, name))
            t0 = time.perf_counter()
            model = _train_named_model(
                name, tr, val, model_cfg, linear_hyper, tree_hyper, forest_hyper
            )
            train_s = time.perf_counter() - t0
            t0 = time.perf_counter()
            report = compute_metrics(confusion_from_model(model, test), model=name)
            infer_ms = (time.perf_counter() - t0) * 1000.0 / max(1, len(test.sessions))
            rows.append(
                ExperimentRow(
                    experiment="incremental",
                    model=name,
                    n_classes=n,
                    seed=seed,
                    accuracy=report.accuracy,
                    macro_precision=report.macro_precision,
                    macro_recall=report.macro_recall,
                    macro_f1=report.macro_f1,
                    train_s=train_s if measure_time else None,
                    infer_ms_median=infer_ms if measure_time else None,
                )
            )
    return rows


# --- latency ----------------------------------------------------------------


@dataclass(frozen=True)
class LatencyReport:
    """Per-session inference latency, with and without preprocessing."""

    median_ms: float
    p95_ms: float
    median_ms_model_only: float
    p95_ms_model_only: float
    n_measurements: int


def latency_bench(model: MvmcModel, sessions: Sequence[Session], repetitions: int = 3) -> LatencyReport:
    """Measure single-session inference wall time.

    One warm-up pass is excluded; each measured pass times preprocessing
    (impute + normalize + tensorize) and the network forward separately.
    Requires at least 100 sessions and one repetition.
    """
    if repetitions < 1:
        raise ValueError("no measurements: repetitions must be >= 1")
    if len(sessions) < 100:
        raise ValueError(f"need at least 100 sessions for a stable benchmark, got {len(sessions)}")
    for s in sessions:
        model.forward(s)  # warm-up
    totals = []
    model_only = []
    for _ in range(repetitions):
        for s in sessions:
            t0 = time.perf_counter()
            views = model.encode(s)
            t1 = time.perf_counter()
            model.net.forward_views(views)
            t2 = time.perf_counter()
            totals.append((t2 - t0) * 1000.0)
            model_only.append((t2 - t1) * 1000.0)
    totals_arr = np.asarray(totals)
    net_arr = np.asarray(model_only)
    return LatencyReport(
        median_ms=float(np.median(totals_arr)),
        p95_ms=float(np.percentile(totals_arr, 95)),
        median_ms_model_only=float(np.median(net_arr)),
        p95_ms_model_only=float(np.percentile(net_arr, 95)),
        n_measurements=len(totals),
    )


# --- user pattern statistics --------------------------------------------------


@dataclass(frozen=True)
class UserPatternRow:
    user_id: str
    n_sessions: int
    alphabet_len_median: float
    symbol_len_median: float
    accel_len_median: float
    alphabet_dwell_median: float
    alphabet_gap_median: float
    symbol_dwell_median: float
    symbol_gap_median: float
    category_count_median: dict[str, float]
    category_class: dict[str, str]  # "frequent" (median count > 2) or "infrequent"


def pattern_summary(ds: Dataset, top_n: int) -> list[UserPatternRow]:
    """Per-view behavior statistics for the ``top_n`` most active users.

    A key category is "frequent" for a user when its median per-session count
    exceeds 2, otherwise "infrequent".
    """
    if not ds.sessions:
        raise ValueError("empty dataset")
    counts: dict[str, int] = {u: 0 for u in ds.label_index}
    for s in ds.sessions:
        counts[s.user_id] += 1
    ranked = sorted(counts, key=lambda u: (-counts[u], u))[: max(0, top_n)]
    rows = []
    for user in ranked:
        sessions = [impute_missing(s) for s in ds.sessions if s.user_id == user]
        alpha_lens = [len(s.alphabet_view) for s in sessions]
        sym_lens = [len(s.symbol_view) for s in sessions]
        accel_lens = [len(s.accel_view) for s in sessions]
        alpha_dwell = [e.duration for s in sessions for e in s.alphabet_view]
        alpha_gap = [e.time_since_last_key for s in sessions for e in s.alphabet_view]
        sym_dwell = [e.duration for s in sessions for e in s.symbol_view]
        sym_gap = [e.time_since_last_key for s in sessions for e in s.symbol_view]
        med = lambda xs: float(np.median(xs)) if xs else 0.0
        cat_median: dict[str, float] = {}
        cat_class: dict[str, str] = {}
        for cat in SYMBOL_CATEGORIES:
            per_session = [sum(1 for e in s.symbol_view if e.category is cat) for s in sessions]
            m = float(np.median(per_session))
            cat_median[cat.value] = m
            cat_class[cat.value] = "frequent" if m > 2 else "infrequent"
        rows.append(
            UserPatternRow(
                user_id=user,
                n_sessions=counts[user],
                alphabet_len_median=med(alpha_lens),
                symbol_len_median=med(sym_lens),
                accel_len_median=med(accel_lens),
                alphabet_dwell_median=med(alpha_dwell),
                alphabet_gap_median=med(alpha_gap),
                symbol_dwell_median=med(sym_dwell),
                symbol_gap_median=med(sym_gap),
                category_count_median=cat_median,
                category_class=cat_class,
            )
        )
    return rows


def write_patterns_csv(rows: Sequence[UserPatternRow], path: str | Path) -> None:
    header = [
        "user_id",
        "n_sessions",
        "alphabet_len_median",
        "symbol_len_median",
        "accel_len_median",
        "alphabet_dwell_median",
        "alphabet_gap_median",
        "symbol_dwell_median",
        "symbol_gap_median",
    ]
    for cat in SYMBOL_CATEGORIES:
        header += [f"{cat.value}_count_median", f"{cat.value}_class"]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            row = [
                r.user_id,
                r.n_sessions,
                f"{r.alphabet_len_median:.1f}",
                f"{r.symbol_len_median:.1f}",
                f"{r.accel_len_median:.1f}",
                f"{r.alphabet_dwell_median:.6f}",
                f"{r.alphabet_gap_median:.6f}",
                f"{r.symbol_dwell_median:.6f}",
                f"{r.symbol_gap_median:.6f}",
            ]
            for cat in SYMBOL_CATEGORIES:
                row += [f"{r.category_count_median[cat.value]:.1f}", r.category_class[cat.value]]
            writer.writerow(row)
