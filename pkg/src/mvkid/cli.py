"""Command-line surface: dataset generation, training, evaluation, pairwise
heatmaps, latency benchmarking, pattern statistics, and gradient checking.

Commands take an optional JSON config file; command-line flags override
config values. Exit codes: 0 success, 1 runtime failure, 2 usage/config
error. All outputs except measured timings are byte-reproducible for a fixed
config: rerunning a command overwrites files with identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .baselines import (
    BASELINE_NAMES,
    BaselineModel,
    ForestHyper,
    LinearHyper,
    TreeHyper,
    train_baseline,
)
from .evaluation import (
    ExperimentRow,
    compute_metrics,
    confusion_from_model,
    incremental_experiment,
    latency_bench,
    pairwise_heatmap,
    pattern_summary,
    write_heatmap_csv,
    write_patterns_csv,
    write_results_csv,
)
from .model import (
    ModelConfig,
    MvmcModel,
    load_model,
    save_model,
    train,
)
from .nn import grad_check_suite
from .optim import NadamHyper
from .preprocess import DEFAULT_MAX_LEN
from .seeding import derive_seed
from .sessions import (
    VIEW_ORDER,
    Dataset,
    ViewKind,
    load_dataset,
    save_dataset,
    stratified_split,
)
from .synthgen import GenConfig, generate_dataset

__all__ = ["main"]

MODEL_CHOICES = ("deep-mvmc", "deep-single") + BASELINE_NAMES

BASELINE_MAGIC = b"MVKB"
BASELINE_VERSION = 1

_REFERENCE_LATENCY_MS = 0.657  # published figure for the original system


class CliError(ValueError):
    """User-facing configuration problem; maps to exit code 2."""


@dataclass
class RunConfig:
    """Everything a run needs, resolvable from JSON plus flag overrides."""

    seed: int = 0
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    gen: GenConfig | None = None
    model: dict = field(default_factory=dict)
    linear_hyper: LinearHyper = field(default_factory=LinearHyper)
    svm_hyper: LinearHyper = field(default_factory=lambda: LinearHyper(lr=0.1))
    tree_hyper: TreeHyper = field(default_factory=TreeHyper)
    forest_hyper: ForestHyper = field(default_factory=ForestHyper)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            obj = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise CliError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc.msg}") from exc
        cfg = cls()
        cfg.seed = int(obj.get("seed", cfg.seed))
        cfg.test_fraction = float(obj.get("test_fraction", cfg.test_fraction))
        cfg.val_fraction = float(obj.get("val_fraction", cfg.val_fraction))
        if "gen" in obj:
            g = obj["gen"]
            cfg.gen = GenConfig(
                n_users=int(g["users"]),
                sessions_per_user=int(g["sessions"]),
                separation=float(g.get("separation", 1.0)),
                seed=int(g.get("seed", cfg.seed)),
            )
        cfg.model = dict(obj.get("model", {}))
        b = obj.get("baselines", {})
        if "logreg" in b:
            cfg.linear_hyper = LinearHyper(**b["logreg"])
        if "svm" in b:
            cfg.svm_hyper = LinearHyper(**b["svm"])
        if "dtree" in b:
            cfg.tree_hyper = TreeHyper(**b["dtree"])
        if "rforest" in b:
            cfg.forest_hyper = ForestHyper(**b["rforest"])
        return cfg

    def model_config(self, n_classes: int, views: Sequence[ViewKind] | None = None) -> ModelConfig:
        m = self.model
        max_len = dict(DEFAULT_MAX_LEN)
        for key, value in m.get("max_len", {}).items():
            max_len[ViewKind(key)] = int(value)
        enabled = views
        if enabled is None:
            enabled = tuple(ViewKind(v) for v in m.get("views", [k.value for k in VIEW_ORDER]))
        nadam = NadamHyper.from_json(m["nadam"]) if "nadam" in m else NadamHyper()
        return ModelConfig(
            n_classes=n_classes,
            views_enabled=tuple(enabled),
            hidden_size=int(m.get("hidden_size", 32)),
            fusion_hidden=int(m.get("fusion_hidden", 64)),
            max_len=max_len,
            epochs=int(m.get("epochs", 50)),
            batch_size=int(m.get("batch_size", 16)),
            seed=int(m.get("seed", self.seed)),
            use_bias=bool(m.get("use_bias", True)),
            clip_norm=m.get("clip_norm", 5.0),
            nadam=nadam,
        )


# --- baseline checkpoint envelope -------------------------------------------


def save_baseline(model: BaselineModel, path: str | Path) -> None:
    payload = json.dumps(model.to_json(), separators=(",", ":"), sort_keys=True).encode()
    blob = bytearray()
    blob += BASELINE_MAGIC
    blob += BASELINE_VERSION.to_bytes(4, "little")
    blob += len(payload).to_bytes(4, "little")
    blob += payload
    blob += (zlib.crc32(bytes(blob)) & 0xFFFFFFFF).to_bytes(4, "little")
    Path(path).write_bytes(bytes(blob))


def load_baseline(path: str | Path) -> BaselineModel:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != BASELINE_MAGIC:
        raise CliError("not a baseline checkpoint (bad magic)")
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != int.from_bytes(blob[-4:], "little"):
        raise CliError("baseline checkpoint corrupted (checksum mismatch)")
    version = int.from_bytes(blob[4:8], "little")
    if version != BASELINE_VERSION:
        raise CliError(f"unsupported baseline checkpoint version {version}")
    header_len = int.from_bytes(blob[8:12], "little")
    return BaselineModel.from_json(json.loads(blob[12 : 12 + header_len].decode()))


def load_any_checkpoint(path: str | Path) -> MvmcModel | BaselineModel:
    with Path(path).open("rb") as fh:
        magic = fh.read(4)
    if magic == BASELINE_MAGIC:
        return load_baseline(path)
    return load_model(path)


def _model_display_name(model: MvmcModel | BaselineModel) -> str:
    if isinstance(model, BaselineModel):
        return model.name
    views = model.config.views_enabled
    if len(views) == 1:
        return f"deep-single:{views[0].value}"
    return "deep-mvmc"


# --- split plumbing -----------------------------------------------------------


def _split_for_run(ds: Dataset, cfg: RunConfig) -> tuple[Dataset, Dataset, Dataset]:
    trainval, test = stratified_split(ds, cfg.test_fraction, derive_seed(cfg.seed, "test-split"))
    train_split, val = stratified_split(trainval, cfg.val_fraction, derive_seed(cfg.seed, "val-split"))
    return train_split, val, test


def _load_data(path: str) -> Dataset:
    try:
        return load_dataset(path)
    except FileNotFoundError as exc:
        raise CliError(f"data file not found: {path}") from exc


# --- commands ------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = GenConfig(
        n_users=args.users,
        sessions_per_user=args.sessions,
        separation=args.separation,
        seed=args.seed,
    )
    ds = generate_dataset(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {out} ({len(ds.sessions)} sessions, {ds.n_classes} users)")
    return 0


def _write_history_csv(history, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for h in history:
            writer.writerow([h.epoch, f"{h.train_loss:.6f}", f"{h.val_accuracy:.6f}"])


def cmd_train(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.model["epochs"] = args.epochs
    ds = _load_data(args.data)
    train_split, val_split, _ = _split_for_run(ds, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.bin"

    if args.model in ("deep-mvmc", "deep-single"):
        views = None
        if args.model == "deep-single":
            if args.view is None:
                raise CliError("--view is required with --model deep-single")
            views = (ViewKind(args.view),)
        model_cfg = cfg.model_config(ds.n_classes, views)
        model, history = train(train_split, val_split, model_cfg)
        save_model(model, ckpt)
        _write_history_csv(history, out_dir / "history.csv")
        best = max((h.val_accuracy for h in history), default=0.0)
        print(f"wrote {ckpt} (best validation accuracy {best:.4f})")
        return 0

    merged = Dataset(
        sessions=train_split.sessions + val_split.sessions,
        label_index=dict(train_split.label_index),
    )
    forest = replace(cfg.forest_hyper, seed=derive_seed(cfg.seed, f"forest:{args.model}"))
    baseline = train_baseline(
        args.model,
        merged,
        linear_hyper=cfg.svm_hyper if args.model == "svm" else cfg.linear_hyper,
        tree_hyper=cfg.tree_hyper,
        forest_hyper=forest,
    )
    save_baseline(baseline, ckpt)
    print(f"wrote {ckpt}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    ds = _load_data(args.data)
    model = load_any_checkpoint(args.checkpoint)
    if args.split == "test":
        _, _, subset = _split_for_run(ds, cfg)
    else:
        subset = ds
    if model.label_index != subset.label_index:
        raise CliError("checkpoint and dataset disagree on users/classes")
    name = _model_display_name(model)
    report = compute_metrics(confusion_from_model(model, subset), model=name)
    row = ExperimentRow(
        experiment=f"eval:{args.split}",
        model=name,
        n_classes=report.n_classes,
        seed=cfg.seed,
        accuracy=report.accuracy,
        macro_precision=report.macro_precision,
        macro_recall=report.macro_recall,
        macro_f1=report.macro_f1,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv([row], out, timings=False)
    print(f"wrote {out} (accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f})")
    return 0


def cmd_incremental(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    ds = _load_data(args.data)
    ns = [int(x) for x in args.ns.split(",") if x]
    models = [m for m in args.models.split(",") if m]
    for m in models:
        base = m.split(":", 1)[0]
        if base not in MODEL_CHOICES:
            raise CliError(f"unknown model {m!r}; valid: {', '.join(MODEL_CHOICES)}")
        if base == "deep-single" and ":" not in m:
            raise CliError("deep-single requires a view, e.g. deep-single:accel")
    model_cfg = cfg.model_config(n_classes=max(2, min(ns)))
    rows = incremental_experiment(
        ds,
        ns,
        models,
        model_cfg,
        test_fraction=cfg.test_fraction,
        val_fraction=cfg.val_fraction,
        seed=cfg.seed,
        linear_hyper=cfg.linear_hyper,
        tree_hyper=cfg.tree_hyper,
        forest_hyper=cfg.forest_hyper,
        measure_time=args.timings,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(rows, out, timings=args.timings)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def cmd_heatmap(args: argparse.Namespace) -> int:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    ds = _load_data(args.data)
    model_cfg = cfg.model_config(n_classes=2)
    result = pairwise_heatmap(
        ds,
        model_cfg,
        test_fraction=cfg.test_fraction,
        val_fraction=cfg.val_fraction,
        seed=cfg.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_heatmap_csv(result, out)
    n_pairs = len(result.users) * (len(result.users) - 1) // 2
    print(f"wrote {out} ({n_pairs} pairs)")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    model = load_any_checkpoint(args.checkpoint)
    if isinstance(model, BaselineModel):
        raise CliError("bench requires a deep-model checkpoint")
    ds = _load_data(args.data)
    report = latency_bench(model, list(ds.sessions), repetitions=args.reps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["median_ms", "p95_ms", "median_ms_model_only", "p95_ms_model_only", "n_measurements"]
        )
        writer.writerow(
            [
                f"{report.median_ms:.4f}",
                f"{report.p95_ms:.4f}",
                f"{report.median_ms_model_only:.4f}",
                f"{report.p95_ms_model_only:.4f}",
                report.n_measurements,
            ]
        )
    print(
        f"median {report.median_ms:.3f} ms/session including preprocessing "
        f"({report.median_ms_model_only:.3f} ms model only); "
        f"reference system: {_REFERENCE_LATENCY_MS} ms"
    )
    print(f"wrote {out}")
    return 0


def cmd_patterns(args: argparse.Namespace) -> int:
    ds = _load_data(args.data)
    rows = pattern_summary(ds, args.top)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_patterns_csv(rows, out)
    print(f"wrote {out} ({len(rows)} users)")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    worst = grad_check_suite(
        n_models=args.models,
        hidden=args.hidden,
        n_classes=args.classes,
        seed=args.seed if args.seed is not None else 0,
        eps=args.eps,
        max_coords=args.coords,
    )
    print(f"max relative error over {args.models} models: {worst:.3e} (threshold {args.threshold:.1e})")
    if worst < args.threshold:
        print("gradient check PASSED")
        return 0
    print("gradient check FAILED")
    return 1


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvkid",
        description="Multi-view keystroke/motion biometrics: generate data, train and "
        "evaluate user-identification models.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("gen", help="Generate a synthetic JSONL dataset")
    p.add_argument("--users", type=int, required=True, help="Number of synthetic users (>= 2)")
    p.add_argument("--sessions", type=int, required=True, help="Sessions per user (>= 2)")
    p.add_argument("--separation", type=float, default=1.0, help="Inter-user separation knob (>= 0)")
    p.add_argument("--seed", type=int, default=0, help="Generation seed")
    p.add_argument("--out", required=True, help="Output JSONL path")
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("train", help="Train a model and write a checkpoint")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES, help="Model to train")
    p.add_argument("--data", required=True, help="JSONL dataset path")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--view", choices=[k.value for k in VIEW_ORDER], help="View for deep-single")
    p.add_argument("--out-dir", default="out/run", help="Output directory")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--epochs", type=int, help="Override the configured epoch count")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint, writing a results CSV")
    p.add_argument("--checkpoint", required=True, help="Checkpoint path")
    p.add_argument("--data", required=True, help="JSONL dataset path")
    p.add_argument("--config", help="JSON config file (must match training)")
    p.add_argument("--split", choices=("test", "all"), default="test", help="Evaluate the held-out test split (default) or everything")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--out", default="out/results.csv", help="Results CSV path")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("incremental", help="Accuracy vs number of users, for several models")
    p.add_argument("--data", required=True, help="JSONL dataset path")
    p.add_argument("--ns", required=True, help="Comma-separated class counts, e.g. 2,5,10")
    p.add_argument(
        "--models",
        required=True,
        help="Comma-separated models; deep-single needs a view suffix, e.g. deep-single:accel",
    )
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--timings", action="store_true", help="Include measured (non-reproducible) timing columns")
    p.add_argument("--out", default="out/results.csv", help="Results CSV path")
    p.set_defaults(handler=cmd_incremental)

    p = sub.add_parser("heatmap", help="Pairwise two-user identification heatmap")
    p.add_argument("--data", required=True, help="JSONL dataset path")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="Override the config seed")
    p.add_argument("--out", default="out/heatmap.csv", help="Heatmap CSV path")
    p.set_defaults(handler=cmd_heatmap)

    p = sub.add_parser("bench", help="Per-session inference latency of a deep checkpoint")
    p.add_argument("--checkpoint", required=True, help="Deep-model checkpoint path")
    p.add_argument("--data", required=True, help="JSONL dataset path (>= 100 sessions)")
    p.add_argument("--reps", type=int, default=3, help="Measurement repetitions")
    p.add_argument("--out", default="out/timings.csv", help="Timing CSV path (not reproducible)")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("patterns", help="Per-user behavior statistics CSV")
    p.add_argument("--data", required=True, help="JSONL dataset path")
    p.add_argument("--top", type=int, default=5, help="How many most-active users to include")
    p.add_argument("--out", default="out/patterns.csv", help="Patterns CSV path")
    p.set_defaults(handler=cmd_patterns)

    p = sub.add_parser("gradcheck", help="Finite-difference check of the analytic gradients")
    p.add_argument("--models", type=int, default=10, help="Number of random models to check")
    p.add_argument("--hidden", type=int, default=4, help="Hidden size of the checked models")
    p.add_argument("--classes", type=int, default=3, help="Class count of the checked models")
    p.add_argument("--eps", type=float, default=1e-5, help="Central-difference step")
    p.add_argument("--coords", type=int, default=400, help="Coordinates sampled per model (>= 200)")
    p.add_argument("--threshold", type=float, default=1e-4, help="Max relative error to pass")
    p.add_argument("--seed", type=int, help="Seed of the first checked model")
    p.set_defaults(handler=cmd_gradcheck)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
