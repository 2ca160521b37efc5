"""Imputation, train-split min-max normalization, and view tensorization.

Feature layouts per view (column order is part of the on-disk model format):

* alphabet (F=3): duration, time_since_last_key, distance_from_last_key
* symbol (F=10): 8 one-hot key-category columns in ``SymbolCategory`` order,
  then duration, time_since_last_key
* accel (F=3): ax, ay, az

Normalization statistics are always fit on the training split only; values
outside the training range are clamped into [0, 1] at application time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .sessions import (
    SYMBOL_CATEGORIES,
    AlphabetEvent,
    Dataset,
    Session,
    SymbolEvent,
    ViewKind,
)

__all__ = [
    "DEFAULT_MAX_LEN",
    "EncodedView",
    "N_FEATURES",
    "Normalizer",
    "apply_normalizer",
    "fit_normalizer",
    "impute_missing",
    "view_matrix",
]

N_FEATURES: dict[ViewKind, int] = {
    ViewKind.ALPHABET: 3,
    ViewKind.SYMBOL: len(SYMBOL_CATEGORIES) + 2,
    ViewKind.ACCEL: 3,
}

DEFAULT_MAX_LEN: dict[ViewKind, int] = {
    ViewKind.ALPHABET: 128,
    ViewKind.SYMBOL: 32,
    ViewKind.ACCEL: 256,
}

_CATEGORY_INDEX = {c: i for i, c in enumerate(SYMBOL_CATEGORIES)}


def impute_missing(s: Session) -> Session:
    """Replace every undefined gap/distance with exactly 0. Idempotent."""

    def fix_alpha(e: AlphabetEvent) -> AlphabetEvent:
        if e.time_since_last_key is not None and e.distance_from_last_key is not None:
            return e
        return replace(
            e,
            time_since_last_key=e.time_since_last_key if e.time_since_last_key is not None else 0.0,
            distance_from_last_key=(
                e.distance_from_last_key if e.distance_from_last_key is not None else 0.0
            ),
        )

    def fix_symbol(e: SymbolEvent) -> SymbolEvent:
        if e.time_since_last_key is not None:
            return e
        return replace(e, time_since_last_key=0.0)

    return replace(
        s,
        alphabet_view=tuple(fix_alpha(e) for e in s.alphabet_view),
        symbol_view=tuple(fix_symbol(e) for e in s.symbol_view),
    )


def view_matrix(s: Session, kind: ViewKind) -> np.ndarray:
    """Raw (n_events, F) float matrix of one view; undefined values read as 0."""
    if kind is ViewKind.ALPHABET:
        rows = [
            (e.duration, e.time_since_last_key or 0.0, e.distance_from_last_key or 0.0)
            for e in s.alphabet_view
        ]
        return np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    if kind is ViewKind.SYMBOL:
        out = np.zeros((len(s.symbol_view), N_FEATURES[kind]), dtype=np.float64)
        for i, e in enumerate(s.symbol_view):
            out[i, _CATEGORY_INDEX[e.category]] = 1.0
            out[i, -2] = e.duration
            out[i, -1] = e.time_since_last_key or 0.0
        return out
    rows = [(a.ax, a.ay, a.az) for a in s.accel_view]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


@dataclass(frozen=True)
class Normalizer:
    """Per-view, per-feature min/max statistics from a training split."""

    mins: dict[ViewKind, np.ndarray]
    maxs: dict[ViewKind, np.ndarray]

    def __post_init__(self) -> None:
        for kind in ViewKind:
            if kind not in self.mins or kind not in self.maxs:
                raise ValueError(f"missing statistics for view {kind.value}")
            if np.any(self.maxs[kind] < self.mins[kind]):
                raise ValueError("max < min in normalizer statistics")

    def to_json(self) -> dict:
        return {
            kind.value: {"min": self.mins[kind].tolist(), "max": self.maxs[kind].tolist()}
            for kind in ViewKind
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Normalizer":
        mins = {kind: np.asarray(obj[kind.value]["min"], dtype=np.float64) for kind in ViewKind}
        maxs = {kind: np.asarray(obj[kind.value]["max"], dtype=np.float64) for kind in ViewKind}
        return cls(mins=mins, maxs=maxs)


def fit_normalizer(train: Dataset) -> Normalizer:
    """Per-feature min/max over every real timestep in the training split.

    Constant features get ``max = min + 1`` so scaling never divides by zero
    (their normalized value is exactly 0). Views with no events anywhere get
    the degenerate (0, 1) range.
    """
    if not train.sessions:
        raise ValueError("cannot fit a normalizer on an empty dataset")
    mins: dict[ViewKind, np.ndarray] = {}
    maxs: dict[ViewKind, np.ndarray] = {}
    for kind in ViewKind:
        stacks = [m for s in train.sessions if len(m := view_matrix(s, kind))]
        if stacks:
            values = np.concatenate(stacks, axis=0)
            lo = values.min(axis=0)
            hi = values.max(axis=0)
        else:
            lo = np.zeros(N_FEATURES[kind])
            hi = np.ones(N_FEATURES[kind])
        hi = np.where(hi == lo, lo + 1.0, hi)
        mins[kind] = lo
        maxs[kind] = hi
    return Normalizer(mins=mins, maxs=maxs)


@dataclass(frozen=True)
class EncodedView:
    """Fixed-length normalized tensor of one view plus its validity mask."""

    values: np.ndarray  # (T, F) float64, zeros beyond true_length
    mask: np.ndarray  # (T,) bool, exactly true_length leading Trues
    true_length: int

    def __post_init__(self) -> None:
        if self.values.shape[0] != self.mask.shape[0]:
            raise ValueError("values and mask length mismatch")
        if int(self.mask.sum()) != self.true_length or np.any(
            self.mask != (np.arange(len(self.mask)) < self.true_length)
        ):
            raise ValueError("mask must have exactly true_length leading Trues")


def encode_view(nz: Normalizer, s: Session, kind: ViewKind, max_len: int) -> EncodedView:
    """Normalize one view into a (max_len, F) tensor.

    Values are mapped by ``clamp((x - min) / (max - min), 0, 1)``. Sequences
    longer than ``max_len`` keep their LAST ``max_len`` timesteps; shorter
    ones are zero-padded with the mask flagging real rows.
    """
    raw = view_matrix(s, kind)
    if len(raw) > max_len:
        raw = raw[-max_len:]
    span = nz.maxs[kind] - nz.mins[kind]
    scaled = np.clip((raw - nz.mins[kind]) / span, 0.0, 1.0)
    values = np.zeros((max_len, N_FEATURES[kind]), dtype=np.float64)
    values[: len(scaled)] = scaled
    mask = np.arange(max_len) < len(scaled)
    return EncodedView(values=values, mask=mask, true_length=len(scaled))


def apply_normalizer(
    nz: Normalizer, s: Session, max_len: Mapping[ViewKind, int] | None = None
) -> tuple[EncodedView, EncodedView, EncodedView]:
    """Encode all three views of a session in canonical view order."""
    lens = DEFAULT_MAX_LEN if max_len is None else max_len
    return (
        encode_view(nz, s, ViewKind.ALPHABET, lens[ViewKind.ALPHABET]),
        encode_view(nz, s, ViewKind.SYMBOL, lens[ViewKind.SYMBOL]),
        encode_view(nz, s, ViewKind.ACCEL, lens[ViewKind.ACCEL]),
    )
