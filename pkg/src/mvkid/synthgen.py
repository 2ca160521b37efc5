"""Synthetic labeled multi-view sessions from parameterized user profiles.

Each synthetic user owns a :class:`UserProfile`; sessions are drawn from it
with controllable distributions: Normal dwell times (clamped at 0), Gamma
inter-key gaps, categorical symbol keys, and a per-axis sinusoid plus Gaussian
noise for acceleration. Accelerometer sampling is 10x denser than keystrokes.

Profiles are placed around per-user anchors in a whitened parameter space;
pairwise anchor distance grows linearly with the ``separation`` knob, so the
difficulty of telling users apart is tunable. Randomness is counter-based
(Philox keyed by ``(seed, user, session)``), so each session's stream is
independent of generation order and safe to produce concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .sessions import (
    SYMBOL_CATEGORIES,
    AccelSample,
    AlphabetEvent,
    Dataset,
    Session,
    SymbolEvent,
)

__all__ = [
    "GenConfig",
    "UserProfile",
    "dataset_from_profiles",
    "default_profile",
    "generate_dataset",
    "generate_session",
    "make_profiles",
    "profile_vector",
]

_ACCEL_PER_KEY = 10  # accelerometer samples per keystroke


@dataclass(frozen=True)
class UserProfile:
    """Generative parameters of one user's typing and motion behavior."""

    dwell_mean: float = 0.08
    dwell_std: float = 0.025
    gap_shape: float = 2.0
    gap_scale: float = 0.12
    dist_mean: float = 0.30
    dist_std: float = 0.12
    category_weights: tuple[float, ...] = (0.34, 0.12, 0.08, 0.12, 0.14, 0.06, 0.08, 0.06)
    accel_base: tuple[float, float, float] = (0.3, -0.2, 9.7)
    accel_amp: tuple[float, float, float] = (0.5, 0.4, 0.3)
    accel_freq: float = 0.35
    accel_noise_std: float = 0.25
    keys_per_session_mean: float = 60.0
    symbol_rate: float = 0.25

    def __post_init__(self) -> None:
        if min(self.dwell_std, self.dist_std, self.accel_noise_std) < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.gap_shape <= 0 or self.gap_scale <= 0:
            raise ValueError("gamma parameters must be positive")
        if len(self.category_weights) != len(SYMBOL_CATEGORIES):
            raise ValueError(f"need {len(SYMBOL_CATEGORIES)} category weights")
        if any(w < 0 for w in self.category_weights):
            raise ValueError("category weights must be non-negative")
        if abs(sum(self.category_weights) - 1.0) > 1e-9:
            raise ValueError("category weights must sum to 1")
        if not 0.0 <= self.symbol_rate <= 1.0:
            raise ValueError("symbol_rate must be in [0, 1]")
        if self.keys_per_session_mean <= 0:
            raise ValueError("keys_per_session_mean must be positive")


def default_profile() -> UserProfile:
    """The population-base profile that anchors are perturbed around."""
    return UserProfile()


@dataclass(frozen=True)
class GenConfig:
    """Corpus-level generation settings."""

    n_users: int
    sessions_per_user: int
    separation: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_users < 2:
            raise ValueError("n_users must be >= 2")
        if self.sessions_per_user < 2:
            raise ValueError("sessions_per_user must be >= 2")
        if self.separation < 0:
            raise ValueError("separation must be >= 0")


# Per-parameter perturbation scales at separation = 1. Positive parameters are
# perturbed multiplicatively (log space), accel_base additively, symbol_rate in
# logit space, and category weights via their softmax logits.
_LOG_SCALES = {
    "dwell_mean": 0.25,
    "dwell_std": 0.20,
    "gap_shape": 0.20,
    "gap_scale": 0.25,
    "dist_mean": 0.20,
    "dist_std": 0.20,
    "accel_freq": 0.30,
    "accel_noise_std": 0.20,
    "keys_per_session_mean": 0.15,
}
_ACCEL_BASE_SCALE = 0.15
_ACCEL_AMP_SCALE = 0.30
_SYMBOL_RATE_SCALE = 0.40
_CATEGORY_SCALE = 0.50

_N_KNOBS = len(_LOG_SCALES) + 3 + 3 + 1 + len(SYMBOL_CATEGORIES)


def _rng_for(seed: int, *key: int) -> np.random.Generator:
    """Counter-based stream for a namespaced key; independent of draw order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=key)))


def make_profiles(cfg: GenConfig) -> list[UserProfile]:
    """Draw one profile per user around separation-scaled anchors.

    With ``separation == 0`` every user collapses onto the shared base
    profile; anchor distances in the whitened space of
    :func:`profile_vector` grow linearly with ``separation``.
    """
    base = default_profile()
    rng = _rng_for(cfg.seed, 0)
    deltas = rng.standard_normal((cfg.n_users, _N_KNOBS))
    profiles = []
    for u in range(cfg.n_users):
        d = deltas[u]
        i = 0
        updates: dict[str, object] = {}
        for name, scale in _LOG_SCALES.items():
            updates[name] = getattr(base, name) * math.exp(scale * cfg.separation * d[i])
            i += 1
        updates["accel_base"] = tuple(
            b + _ACCEL_BASE_SCALE * cfg.separation * d[i + k] for k, b in enumerate(base.accel_base)
        )
        i += 3
        updates["accel_amp"] = tuple(
            a * math.exp(_ACCEL_AMP_SCALE * cfg.separation * d[i + k])
            for k, a in enumerate(base.accel_amp)
        )
        i += 3
        logit = math.log(base.symbol_rate / (1 - base.symbol_rate))
        logit += _SYMBOL_RATE_SCALE * cfg.separation * d[i]
        updates["symbol_rate"] = 1.0 / (1.0 + math.exp(-logit))
        i += 1
        logits = np.log(np.asarray(base.category_weights)) + _CATEGORY_SCALE * cfg.separation * d[i:]
        w = np.exp(logits - logits.max())
        w /= w.sum()
        # renormalize in plain floats so the tuple sums to 1 within 1e-9
        weights = [float(x) for x in w]
        weights[-1] = 1.0 - sum(weights[:-1])
        updates["category_weights"] = tuple(weights)
        profiles.append(replace(base, **updates))
    return profiles


def profile_vector(p: UserProfile) -> np.ndarray:
    """Whitened parameter embedding of a profile.

    Distances between embeddings of profiles produced by
    :func:`make_profiles` with the same seed scale linearly with the
    ``separation`` setting, which makes the knob directly testable.
    """
    parts = [math.log(getattr(p, name)) for name in _LOG_SCALES]
    parts.extend(p.accel_base)
    parts.extend(math.log(a) for a in p.accel_amp)
    rate = min(max(p.symbol_rate, 1e-9), 1 - 1e-9)
    parts.append(math.log(rate / (1 - rate)))
    logw = np.log(np.maximum(np.asarray(p.category_weights), 1e-12))
    parts.extend(logw - logw.mean())
    return np.asarray(parts, dtype=np.float64)


def generate_session(p: UserProfile, rng: np.random.Generator) -> Session:
    """Draw one unlabeled session from a profile; caller attaches ids.

    Alphabet length is Poisson with a floor of 1; the symbol view may be
    empty. The gap and travel distance of the first keystroke in each view
    are undefined and emitted as ``None``.
    """
    n_alpha = max(1, int(rng.poisson(p.keys_per_session_mean * (1.0 - p.symbol_rate))))
    n_sym = int(rng.poisson(p.keys_per_session_mean * p.symbol_rate))

    def draw_timing(n: int) -> tuple[np.ndarray, np.ndarray]:
        dwell = np.maximum(rng.normal(p.dwell_mean, p.dwell_std, n), 0.0)
        gap = rng.gamma(p.gap_shape, p.gap_scale, n)
        return dwell, gap

    dwell_a, gap_a = draw_timing(n_alpha)
    dist_a = np.maximum(rng.normal(p.dist_mean, p.dist_std, n_alpha), 0.0)
    alphabet = tuple(
        AlphabetEvent(
            duration=float(dwell_a[i]),
            time_since_last_key=None if i == 0 else float(gap_a[i]),
            distance_from_last_key=None if i == 0 else float(dist_a[i]),
        )
        for i in range(n_alpha)
    )

    symbol: tuple[SymbolEvent, ...] = ()
    if n_sym > 0:
        cats = rng.choice(len(SYMBOL_CATEGORIES), size=n_sym, p=np.asarray(p.category_weights))
        dwell_s, gap_s = draw_timing(n_sym)
        symbol = tuple(
            SymbolEvent(
                category=SYMBOL_CATEGORIES[int(cats[i])],
                duration=float(dwell_s[i]),
                time_since_last_key=None if i == 0 else float(gap_s[i]),
            )
            for i in range(n_sym)
        )

    n_accel = _ACCEL_PER_KEY * (n_alpha + n_sym)
    t = np.arange(n_accel, dtype=np.float64)
    phase = rng.uniform(0.0, 2.0 * math.pi, size=3)
    axes = []
    for k in range(3):
        signal = p.accel_base[k] + p.accel_amp[k] * np.sin(p.accel_freq * t + phase[k])
        if p.accel_noise_std > 0:
            signal = signal + rng.normal(0.0, p.accel_noise_std, n_accel)
        axes.append(signal)
    accel = tuple(
        AccelSample(float(axes[0][i]), float(axes[1][i]), float(axes[2][i])) for i in range(n_accel)
    )

    return Session("", "", alphabet, symbol, accel)


def dataset_from_profiles(
    profiles: list[UserProfile], sessions_per_user: int, seed: int
) -> Dataset:
    """Generate ``sessions_per_user`` sessions per profile, labeled u00, u01, ...

    Session (u, j) is drawn from its own Philox stream keyed by
    ``(seed, u + 1, j)``, so output is identical whatever the generation order.
    """
    width = max(2, len(str(len(profiles) - 1)))
    sessions = []
    for u, profile in enumerate(profiles):
        user_id = f"u{u:0{width}d}"
        for j in range(sessions_per_user):
            rng = _rng_for(seed, u + 1, j)
            sessions.append(generate_session(profile, rng).with_ids(user_id, f"{user_id}-{j:04d}"))
    return Dataset.from_sessions(sessions)


def generate_dataset(cfg: GenConfig) -> Dataset:
    """Full corpus generation: profiles then sessions, all from ``cfg.seed``."""
    return dataset_from_profiles(make_profiles(cfg), cfg.sessions_per_user, cfg.seed)
