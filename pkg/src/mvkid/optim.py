"""Nadam (Adam with Nesterov momentum and a decaying momentum schedule) plus
plain SGD and global-norm gradient clipping.

The Nadam update per coordinate, with step counter t' = t + 1:

    mu_t   = mu * (1 - 0.5 * 0.96^(t' * schedule_decay))
    mu_t1  = mu * (1 - 0.5 * 0.96^((t' + 1) * schedule_decay))
    M'     = M * mu_t                      (running momentum-schedule product)
    m'     = mu * m + (1 - mu) * g
    v'     = nu * v + (1 - nu) * g^2
    g_hat  = g  / (1 - M')
    m_hat  = m' / (1 - M' * mu_t1)
    v_hat  = v' / (1 - nu^t')
    theta' = theta - lr * (mu_t1 * m_hat + (1 - mu_t1) * g_hat) / (sqrt(v_hat) + eps)

Updates are applied in place and are bit-deterministic for identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

__all__ = [
    "NadamHyper",
    "NadamState",
    "clip_global_norm",
    "nadam_step",
    "sgd_step",
]

_SCHEDULE_BASE = 0.96


@dataclass(frozen=True)
class NadamHyper:
    """Nadam hyperparameters; defaults follow the classic formulation."""

    lr: float = 2e-3
    mu: float = 0.975
    nu: float = 0.999
    eps: float = 1e-8
    schedule_decay: float = 0.004

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if not (0.0 < self.mu < 1.0 and 0.0 < self.nu < 1.0):
            raise ValueError("mu and nu must lie in (0, 1)")

    def to_json(self) -> dict:
        return {
            "lr": self.lr,
            "mu": self.mu,
            "nu": self.nu,
            "eps": self.eps,
            "schedule_decay": self.schedule_decay,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NadamHyper":
        return cls(**obj)


@dataclass
class NadamState:
    """First/second moment tensors plus the step counter and the running
    product of momentum-schedule values."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    mu_product: float = 1.0

    @classmethod
    def init_like(cls, params: Mapping[str, np.ndarray]) -> "NadamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def _check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")


def nadam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: NadamState,
    hyper: NadamHyper,
) -> None:
    """Apply one Nadam update in place to every tensor in ``params``.

    Tensors are updated coordinate-wise and independently, so optimizing a
    concatenation of parameter sets equals optimizing them separately.
    """
    _check_finite(grads)
    t1 = state.t + 1
    mu_t = hyper.mu * (1.0 - 0.5 * _SCHEDULE_BASE ** (t1 * hyper.schedule_decay))
    mu_t1 = hyper.mu * (1.0 - 0.5 * _SCHEDULE_BASE ** ((t1 + 1) * hyper.schedule_decay))
    mu_product = state.mu_product * mu_t
    nu_t = 1.0 - hyper.nu**t1
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= hyper.mu
        m += (1.0 - hyper.mu) * g
        v *= hyper.nu
        v += (1.0 - hyper.nu) * g * g
        g_hat = g / (1.0 - mu_product)
        m_hat = m / (1.0 - mu_product * mu_t1)
        v_hat = v / nu_t
        theta -= hyper.lr * (mu_t1 * m_hat + (1.0 - mu_t1) * g_hat) / (np.sqrt(v_hat) + hyper.eps)
    state.t = t1
    state.mu_product = mu_product


def sgd_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float
) -> None:
    """Plain gradient descent, in place: theta -= lr * g."""
    _check_finite(grads)
    for name, theta in params.items():
        theta -= lr * grads[name]


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most
    ``max_norm``; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
