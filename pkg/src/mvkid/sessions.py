"""Multi-view session data model, JSONL persistence, and dataset splitting.

A session is one continuous phone-usage episode and carries three independent
time-series views: alphabet keystrokes (timing + travel distance), symbol
keystrokes (key category + timing), and raw accelerometer samples. Views are
never aligned to a shared clock; the order of events within a view is the
collection order and is authoritative.

Timing fields that are undefined at collection time (e.g. the gap before the
very first keystroke) are held as ``None`` until :func:`mvkid.preprocess.impute_missing`
replaces them with 0.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AccelSample",
    "AlphabetEvent",
    "Dataset",
    "DatasetFormatError",
    "Session",
    "SymbolCategory",
    "SymbolEvent",
    "ViewKind",
    "VIEW_ORDER",
    "filter_users",
    "load_dataset",
    "save_dataset",
    "stratified_split",
]


class ViewKind(enum.Enum):
    """The three session views, in their canonical fusion order."""

    ALPHABET = "alphabet"
    SYMBOL = "symbol"
    ACCEL = "accel"


VIEW_ORDER: tuple[ViewKind, ViewKind, ViewKind] = (
    ViewKind.ALPHABET,
    ViewKind.SYMBOL,
    ViewKind.ACCEL,
)


class SymbolCategory(enum.Enum):
    """The eight non-alphabet key categories tracked in the symbol view."""

    SPACE = "space"
    BACKSPACE = "backspace"
    AUTO_CORRECT = "auto_correct"
    NUMBER = "number"
    PUNCTUATION = "punctuation"
    ENTER = "enter"
    SHIFT = "shift"
    OTHER_SYMBOL = "other_symbol"


SYMBOL_CATEGORIES: tuple[SymbolCategory, ...] = tuple(SymbolCategory)

_CATEGORY_BY_VALUE = {c.value: c for c in SymbolCategory}


class DatasetFormatError(ValueError):
    """Raised when an on-disk dataset violates the JSONL schema."""


def _check_timing(value: float | None, name: str) -> None:
    if value is None:
        return
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and non-negative, got {value!r}")


@dataclass(frozen=True)
class AlphabetEvent:
    """One alphabet keystroke: dwell time, gap to the previous key, and the
    normalized on-screen distance travelled from it.

    ``time_since_last_key`` and ``distance_from_last_key`` are ``None`` when
    undefined (first keystroke of a session); imputation maps them to 0.
    """

    duration: float
    time_since_last_key: float | None
    distance_from_last_key: float | None

    def __post_init__(self) -> None:
        if self.duration is None:
            raise ValueError("duration is required")
        _check_timing(self.duration, "duration")
        _check_timing(self.time_since_last_key, "time_since_last_key")
        _check_timing(self.distance_from_last_key, "distance_from_last_key")


@dataclass(frozen=True)
class SymbolEvent:
    """One non-alphabet keystroke: key category plus dwell/gap timing."""

    category: SymbolCategory
    duration: float
    time_since_last_key: float | None

    def __post_init__(self) -> None:
        if not isinstance(self.category, SymbolCategory):
            raise ValueError(f"category must be a SymbolCategory, got {self.category!r}")
        _check_timing(self.duration, "duration")
        _check_timing(self.time_since_last_key, "time_since_last_key")


@dataclass(frozen=True)
class AccelSample:
    """One accelerometer reading along the three device axes, in m/s^2."""

    ax: float
    ay: float
    az: float

    def __post_init__(self) -> None:
        for name in ("ax", "ay", "az"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class Session:
    """One labeled phone-usage session with its three views.

    Immutable after construction; safe to share across workers. At least one
    view must be non-empty.
    """

    user_id: str
    session_id: str
    alphabet_view: tuple[AlphabetEvent, ...] = ()
    symbol_view: tuple[SymbolEvent, ...] = ()
    accel_view: tuple[AccelSample, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphabet_view", tuple(self.alphabet_view))
        object.__setattr__(self, "symbol_view", tuple(self.symbol_view))
        object.__setattr__(self, "accel_view", tuple(self.accel_view))
        if not (self.alphabet_view or self.symbol_view or self.accel_view):
            raise ValueError("session must have at least one non-empty view")

    def view(self, kind: ViewKind) -> tuple:
        if kind is ViewKind.ALPHABET:
            return self.alphabet_view
        if kind is ViewKind.SYMBOL:
            return self.symbol_view
        return self.accel_view

    def with_ids(self, user_id: str, session_id: str) -> "Session":
        return replace(self, user_id=user_id, session_id=session_id)


@dataclass(frozen=True)
class Dataset:
    """A corpus of sessions plus the user-id/class-index bijection."""

    sessions: tuple[Session, ...]
    label_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sessions", tuple(self.sessions))
        seen_ids: set[str] = set()
        for s in self.sessions:
            if s.session_id in seen_ids:
                raise ValueError(f"duplicate session_id {s.session_id!r}")
            seen_ids.add(s.session_id)
            if s.user_id not in self.label_index:
                raise ValueError(f"user {s.user_id!r} missing from label_index")
        if sorted(self.label_index.values()) != list(range(len(self.label_index))):
            raise ValueError("label_index must be a bijection onto [0, K)")

    @classmethod
    def from_sessions(cls, sessions: Iterable[Session]) -> "Dataset":
        """Build a dataset with class indices assigned by first appearance."""
        sessions = tuple(sessions)
        label_index: dict[str, int] = {}
        for s in sessions:
            if s.user_id not in label_index:
                label_index[s.user_id] = len(label_index)
        return cls(sessions=sessions, label_index=label_index)

    @property
    def n_classes(self) -> int:
        return len(self.label_index)

    def user_of_class(self, index: int) -> str:
        for user, i in self.label_index.items():
            if i == index:
                return user
        raise KeyError(index)

    def sessions_of_user(self, user_id: str) -> list[Session]:
        return [s for s in self.sessions if s.user_id == user_id]

    def labels(self) -> np.ndarray:
        """Class index of each session, aligned with ``self.sessions``."""
        return np.array([self.label_index[s.user_id] for s in self.sessions], dtype=np.int64)


# --- JSONL persistence ---------------------------------------------------


def _require(obj: dict, key: str, lineno: int):
    if key not in obj:
        raise DatasetFormatError(f"line {lineno}: missing field {key!r}")
    return obj[key]


def _parse_number(value, lineno: int, name: str, allow_none: bool = False) -> float | None:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DatasetFormatError(f"line {lineno}: field {name!r} must be a number")
    return float(value)


def _parse_session(obj: dict, lineno: int) -> Session:
    user_id = _require(obj, "user_id", lineno)
    session_id = _require(obj, "session_id", lineno)
    if not isinstance(user_id, str) or not isinstance(session_id, str):
        raise DatasetFormatError(f"line {lineno}: field 'user_id'/'session_id' must be strings")

    alphabet = []
    for ev in obj.get("alphabet", []):
        alphabet.append(
            AlphabetEvent(
                duration=_parse_number(_require(ev, "dur", lineno), lineno, "dur"),
                time_since_last_key=_parse_number(ev.get("gap"), lineno, "gap", allow_none=True),
                distance_from_last_key=_parse_number(ev.get("dist"), lineno, "dist", allow_none=True),
            )
        )
    symbol = []
    for ev in obj.get("symbol", []):
        cat = _require(ev, "cat", lineno)
        if cat not in _CATEGORY_BY_VALUE:
            raise DatasetFormatError(f"line {lineno}: field 'cat' has unknown category {cat!r}")
        symbol.append(
            SymbolEvent(
                category=_CATEGORY_BY_VALUE[cat],
                duration=_parse_number(_require(ev, "dur", lineno), lineno, "dur"),
                time_since_last_key=_parse_number(ev.get("gap"), lineno, "gap", allow_none=True),
            )
        )
    accel = []
    for ev in obj.get("accel", []):
        accel.append(
            AccelSample(
                ax=_parse_number(_require(ev, "ax", lineno), lineno, "ax"),
                ay=_parse_number(_require(ev, "ay", lineno), lineno, "ay"),
                az=_parse_number(_require(ev, "az", lineno), lineno, "az"),
            )
        )
    try:
        return Session(user_id, session_id, tuple(alphabet), tuple(symbol), tuple(accel))
    except ValueError as exc:
        raise DatasetFormatError(f"line {lineno}: {exc}") from exc


def load_dataset(path: str | Path) -> Dataset:
    """Load a JSONL dataset; class indices follow first appearance of user ids.

    Raises:
        DatasetFormatError: empty file, malformed JSON, or schema violations;
            the message names the offending line (1-based) and field.
    """
    path = Path(path)
    sessions: list[Session] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetFormatError(f"line {lineno}: expected a JSON object")
            try:
                sessions.append(_parse_session(obj, lineno))
            except ValueError as exc:
                if isinstance(exc, DatasetFormatError):
                    raise
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    if not sessions:
        raise DatasetFormatError("empty dataset")
    try:
        return Dataset.from_sessions(sessions)
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from exc


def _session_to_obj(s: Session) -> dict:
    return {
        "user_id": s.user_id,
        "session_id": s.session_id,
        "alphabet": [
            {"dur": e.duration, "gap": e.time_since_last_key, "dist": e.distance_from_last_key}
            for e in s.alphabet_view
        ],
        "symbol": [
            {"cat": e.category.value, "dur": e.duration, "gap": e.time_since_last_key}
            for e in s.symbol_view
        ],
        "accel": [{"ax": a.ax, "ay": a.ay, "az": a.az} for a in s.accel_view],
    }


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write the canonical JSONL form (one compact object per line)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in ds.sessions:
            fh.write(json.dumps(_session_to_obj(s), separators=(",", ":")) + "\n")


def dumps_dataset(ds: Dataset) -> str:
    """Canonical JSONL serialization as a string (used for byte-level checks)."""
    return "".join(json.dumps(_session_to_obj(s), separators=(",", ":")) + "\n" for s in ds.sessions)


# --- splitting and filtering ----------------------------------------------


def stratified_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split per user: each user contributes ``ceil(test_fraction * n_u)`` test
    sessions, capped at ``n_u - 1`` so every user stays present in both splits.

    Deterministic given ``seed``. Raises ``ValueError`` if any user has fewer
    than two sessions or the fraction is outside (0, 1).
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    by_user: dict[str, list[int]] = {u: [] for u in ds.label_index}
    for i, s in enumerate(ds.sessions):
        by_user[s.user_id].append(i)
    rng = np.random.default_rng(seed)
    test_idx: set[int] = set()
    for user in sorted(by_user, key=lambda u: ds.label_index[u]):
        idx = by_user[user]
        if len(idx) < 2:
            raise ValueError(f"user {user!r} has {len(idx)} session(s); need at least 2 to split")
        n_test = min(math.ceil(test_fraction * len(idx)), len(idx) - 1)
        chosen = rng.permutation(len(idx))[:n_test]
        test_idx.update(idx[i] for i in chosen)
    train_sessions = tuple(s for i, s in enumerate(ds.sessions) if i not in test_idx)
    test_sessions = tuple(s for i, s in enumerate(ds.sessions) if i in test_idx)
    label_index = dict(ds.label_index)
    return (
        Dataset(sessions=train_sessions, label_index=label_index),
        Dataset(sessions=test_sessions, label_index=dict(label_index)),
    )


def filter_users(ds: Dataset, n: int, policy: str = "most_active") -> Dataset:
    """Keep the ``n`` users with the most sessions (ties broken by user id),
    reindexing classes to [0, n) in activity-rank order."""
    if policy != "most_active":
        raise ValueError(f"unknown policy {policy!r}")
    if n > ds.n_classes:
        raise ValueError(f"requested {n} users but dataset has {ds.n_classes}")
    counts: dict[str, int] = {u: 0 for u in ds.label_index}
    for s in ds.sessions:
        counts[s.user_id] += 1
    ranked = sorted(counts, key=lambda u: (-counts[u], u))
    kept = ranked[:n]
    label_index = {u: i for i, u in enumerate(kept)}
    sessions = tuple(s for s in ds.sessions if s.user_id in label_index)
    return Dataset(sessions=sessions, label_index=label_index)
