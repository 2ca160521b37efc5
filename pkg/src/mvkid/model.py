"""Single- and multi-view sequence classifiers: assembly, training loop with
Nadam, prediction, and versioned binary checkpoints.

A model bundles the numeric network with the preprocessing state it was
trained with (normalizer, per-view max lengths) and the user-id/class-index
mapping, so a checkpoint is self-contained.

Checkpoint layout (all integers little-endian):

    magic "MVKD" | format version u32 | header length u32 |
    header JSON (config, label_index, normalizer) |
    parameter tensors, float64, declaration order |
    CRC32 u32 of everything prior
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .nn import MvmcNet
from .optim import NadamHyper, NadamState, clip_global_norm, nadam_step
from .preprocess import (
    DEFAULT_MAX_LEN,
    N_FEATURES,
    EncodedView,
    Normalizer,
    apply_normalizer,
    fit_normalizer,
    impute_missing,
)
from .seeding import derive_seed
from .sessions import VIEW_ORDER, Dataset, Session, ViewKind

__all__ = [
    "CheckpointError",
    "EpochStats",
    "ModelConfig",
    "MvmcModel",
    "load_model",
    "save_model",
    "train",
]

CHECKPOINT_MAGIC = b"MVKD"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for corrupt, truncated, or incompatible checkpoints."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training settings for one classifier."""

    n_classes: int
    views_enabled: tuple[ViewKind, ...] = VIEW_ORDER
    hidden_size: int = 32
    fusion_hidden: int = 64
    max_len: Mapping[ViewKind, int] = field(default_factory=lambda: dict(DEFAULT_MAX_LEN))
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    use_bias: bool = True
    clip_norm: float | None = 5.0
    nadam: NadamHyper = field(default_factory=NadamHyper)

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        views = tuple(k for k in VIEW_ORDER if k in self.views_enabled)
        if not views:
            raise ValueError("at least one view must be enabled")
        object.__setattr__(self, "views_enabled", views)
        object.__setattr__(self, "max_len", dict(self.max_len))
        if self.hidden_size < 1 or self.fusion_hidden < 1 or self.batch_size < 1:
            raise ValueError("sizes must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if any(self.max_len[k] < 1 for k in self.views_enabled):
            raise ValueError("max_len must be >= 1 for every enabled view")

    def to_json(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "views": [k.value for k in self.views_enabled],
            "hidden_size": self.hidden_size,
            "fusion_hidden": self.fusion_hidden,
            "max_len": {k.value: self.max_len[k] for k in ViewKind if k in self.max_len},
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "use_bias": self.use_bias,
            "clip_norm": self.clip_norm,
            "nadam": self.nadam.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(
            n_classes=obj["n_classes"],
            views_enabled=tuple(ViewKind(v) for v in obj["views"]),
            hidden_size=obj["hidden_size"],
            fusion_hidden=obj["fusion_hidden"],
            max_len={ViewKind(k): int(v) for k, v in obj["max_len"].items()},
            epochs=obj["epochs"],
            batch_size=obj["batch_size"],
            seed=obj["seed"],
            use_bias=obj["use_bias"],
            clip_norm=obj["clip_norm"],
            nadam=NadamHyper.from_json(obj["nadam"]),
        )


@dataclass(frozen=True)
class EpochStats:
    """One training-history row."""

    epoch: int
    train_loss: float  # mean cross-entropy per session
    val_accuracy: float


class MvmcModel:
    """A trained (or freshly initialized) classifier plus its preprocessing
    state. ``forward`` is a pure function of (model, session)."""

    def __init__(
        self,
        net: MvmcNet,
        normalizer: Normalizer,
        label_index: dict[str, int],
        config: ModelConfig,
    ) -> None:
        self.net = net
        self.normalizer = normalizer
        self.label_index = dict(label_index)
        self.config = config
        self.users = [u for u, _ in sorted(self.label_index.items(), key=lambda kv: kv[1])]

    @classmethod
    def init(
        cls, config: ModelConfig, normalizer: Normalizer, label_index: dict[str, int]
    ) -> "MvmcModel":
        if len(label_index) != config.n_classes:
            raise ValueError("label_index size must equal n_classes")
        rng = np.random.default_rng(derive_seed(config.seed, "init"))
        net = MvmcNet(
            {k: N_FEATURES[k] for k in config.views_enabled},
            hidden=config.hidden_size,
            fusion_hidden=config.fusion_hidden,
            n_classes=config.n_classes,
            rng=rng,
            use_bias=config.use_bias,
        )
        return cls(net, normalizer, label_index, config)

    # --- inference -------------------------------------------------------

    def encode(self, s: Session) -> dict[ViewKind, EncodedView]:
        """Impute and normalize the enabled views of one session."""
        views = apply_normalizer(self.normalizer, impute_missing(s), self.config.max_len)
        by_kind = dict(zip(VIEW_ORDER, views))
        return {k: by_kind[k] for k in self.config.views_enabled}

    def forward(self, s: Session) -> np.ndarray:
        """Class probability vector for one session."""
        return self.net.forward_views(self.encode(s))

    def forward_many(self, sessions: Sequence[Session], batch_size: int = 64) -> np.ndarray:
        """Batched probabilities, (N, K); identical to per-session forward."""
        encoded = [self.encode(s) for s in sessions]
        return _forward_encoded(self.net, encoded, batch_size)

    def predict(self, s: Session) -> str:
        """User id of the most probable class (ties -> lowest class index)."""
        return self.users[int(np.argmax(self.forward(s)))]

    def predict_many(self, sessions: Sequence[Session], batch_size: int = 64) -> list[str]:
        probs = self.forward_many(sessions, batch_size)
        return [self.users[i] for i in np.argmax(probs, axis=1)]


def _forward_encoded(
    net: MvmcNet, encoded: Sequence[Mapping[ViewKind, EncodedView]], batch_size: int
) -> np.ndarray:
    outs = []
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start : start + batch_size]
        batches = _make_batches(net.views, chunk)
        probs, _ = net.forward_batch(batches)
        outs.append(probs)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, net.n_classes))


def _make_batches(
    views: Sequence[ViewKind], encoded: Sequence[Mapping[ViewKind, EncodedView]]
) -> dict[ViewKind, tuple[np.ndarray, np.ndarray]]:
    """Stack per-sample encodings, trimming each view to the longest real
    length in the batch (padding beyond it cannot affect anything)."""
    batches = {}
    for kind in views:
        lengths = np.array([e[kind].true_length for e in encoded])
        t = int(lengths.max()) if len(lengths) else 0
        X = np.stack([e[kind].values[:t] for e in encoded])
        batches[kind] = (X, lengths)
    return batches


def train(
    train_ds: Dataset, val_ds: Dataset, cfg: ModelConfig
) -> tuple[MvmcModel, list[EpochStats]]:
    """Train with shuffled mini-batches of summed cross-entropy and clipped
    Nadam steps; returns the parameters of the epoch with the best validation
    accuracy (ties -> earlier epoch) plus the per-epoch history.

    Deterministic given the config seed. Raises ``ValueError`` when the splits
    disagree on the label index or the class count.
    """
    if train_ds.label_index != val_ds.label_index:
        raise ValueError("train/validation splits must share the same label_index")
    if train_ds.n_classes != cfg.n_classes:
        raise ValueError(
            f"config expects {cfg.n_classes} classes, dataset has {train_ds.n_classes}"
        )

    normalizer = fit_normalizer(
        Dataset(
            sessions=tuple(impute_missing(s) for s in train_ds.sessions),
            label_index=dict(train_ds.label_index),
        )
    )
    model = MvmcModel.init(cfg, normalizer, train_ds.label_index)
    if cfg.epochs == 0 or not train_ds.sessions:
        return model, []

    enc_train = [model.encode(s) for s in train_ds.sessions]
    y_train = train_ds.labels()
    enc_val = [model.encode(s) for s in val_ds.sessions]
    y_val = val_ds.labels()

    params = model.net.params()
    state = NadamState.init_like(params)
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))

    history: list[EpochStats] = []
    best: tuple[float, int] | None = None
    best_params: dict[str, np.ndarray] | None = None
    n = len(enc_train)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batches = _make_batches(model.net.views, [enc_train[i] for i in idx])
            loss, grads, _ = model.net.loss_and_grads(batches, y_train[idx])
            if cfg.clip_norm is not None:
                clip_global_norm(grads, cfg.clip_norm)
            nadam_step(params, grads, state, cfg.nadam)
            loss_total += loss
        if len(enc_val):
            probs = _forward_encoded(model.net, enc_val, cfg.batch_size)
            val_acc = float(np.mean(np.argmax(probs, axis=1) == y_val))
        else:
            val_acc = 0.0
        history.append(EpochStats(epoch=epoch, train_loss=loss_total / n, val_accuracy=val_acc))
        if best is None or val_acc > best[0]:
            best = (val_acc, epoch)
            best_params = {k: v.copy() for k, v in params.items()}
    if best_params is not None:
        model.net.set_params(best_params)
    return model, history


# --- checkpoint io ---------------------------------------------------------


def save_model(model: MvmcModel, path: str | Path) -> None:
    """Write the versioned binary checkpoint described in the module docs."""
    header = {
        "config": model.config.to_json(),
        "label_index": model.label_index,
        "normalizer": model.normalizer.to_json(),
    }
    header_bytes = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += CHECKPOINT_VERSION.to_bytes(4, "little")
    blob += len(header_bytes).to_bytes(4, "little")
    blob += header_bytes
    for arr in model.net.params().values():
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob += (zlib.crc32(bytes(blob)) & 0xFFFFFFFF).to_bytes(4, "little")
    Path(path).write_bytes(bytes(blob))


def load_model(path: str | Path) -> MvmcModel:
    """Read a checkpoint; forward outputs match the saved model bit-exactly.

    Raises:
        CheckpointError: bad magic, checksum mismatch (truncation or
            corruption), or an unsupported format version.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    stored_crc = int.from_bytes(blob[-4:], "little")
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checkpoint corrupted (checksum mismatch)")
    version = int.from_bytes(blob[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )
    header_len = int.from_bytes(blob[8:12], "little")
    header = json.loads(blob[12 : 12 + header_len].decode())
    config = ModelConfig.from_json(header["config"])
    normalizer = Normalizer.from_json(header["normalizer"])
    label_index = {str(k): int(v) for k, v in header["label_index"].items()}
    model = MvmcModel.init(config, normalizer, label_index)
    offset = 12 + header_len
    for name, arr in model.net.params().items():
        nbytes = arr.size * 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"checkpoint truncated in tensor {name!r}")
        np.copyto(arr, np.frombuffer(chunk, dtype="<f8").reshape(arr.shape))
        offset += nbytes
    if offset != len(blob) - 4:
        raise CheckpointError("checkpoint has trailing bytes")
    return model
