"""Self-contained numerical core: GRU cells, bidirectional encoders, the
fused multi-view classifier graph, exact backpropagation through time, and
finite-difference gradient checking.

Everything runs in float64; all randomness comes from caller-supplied
generators. The recurrence implemented by :func:`gru_step` is

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W x + U (r * h) + b)
    h' = z * c + (1 - z) * h

with the update gate ``z`` choosing how much of the candidate ``c`` replaces
the carried state and the reset gate ``r`` discarding old state inside the
candidate. Bias vectors are optional (``use_bias``); when disabled they are
not parameters at all.

Sequence masks must be "leading Trues": a masked-out timestep never updates
the state, so the final encoding of a length-L sequence is the state after
step L-1 and padding content is irrelevant to both outputs and gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .preprocess import N_FEATURES, EncodedView
from .sessions import ViewKind

__all__ = [
    "DenseLayer",
    "GruCell",
    "MvmcNet",
    "bigru_encode",
    "cross_entropy",
    "dense_softmax_forward",
    "grad_check",
    "grad_check_suite",
    "gru_forward",
    "gru_step",
    "sigmoid",
    "softmax",
]

CROSS_ENTROPY_EPS = 1e-12


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (branches on sign)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _glorot(rng: np.random.Generator, n_out: int, n_in: int, fan_sum: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_sum)
    return rng.uniform(-bound, bound, size=(n_out, n_in))


@dataclass
class GruCell:
    """Parameters of one gated recurrent cell (hidden size H, input size F)."""

    W_z: np.ndarray
    W_r: np.ndarray
    W: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b: np.ndarray
    use_bias: bool = True

    @property
    def n_hidden(self) -> int:
        return self.W_z.shape[0]

    @property
    def n_in(self) -> int:
        return self.W_z.shape[1]

    @classmethod
    def init(
        cls, n_in: int, n_hidden: int, rng: np.random.Generator, use_bias: bool = True
    ) -> "GruCell":
        """Uniform Glorot-style init: input matrices bounded by sqrt(6/(F+H)),
        recurrent matrices by sqrt(6/(2H)); biases start at zero."""
        w = lambda: _glorot(rng, n_hidden, n_in, n_in + n_hidden)
        u = lambda: _glorot(rng, n_hidden, n_hidden, 2 * n_hidden)
        z = lambda: np.zeros(n_hidden)
        return cls(W_z=w(), W_r=w(), W=w(), U_z=u(), U_r=u(), U=u(),
                   b_z=z(), b_r=z(), b=z(), use_bias=use_bias)

    def params(self) -> list[tuple[str, np.ndarray]]:
        out = [("W_z", self.W_z), ("W_r", self.W_r), ("W", self.W),
               ("U_z", self.U_z), ("U_r", self.U_r), ("U", self.U)]
        if self.use_bias:
            out += [("b_z", self.b_z), ("b_r", self.b_r), ("b", self.b)]
        return out


def gru_step(cell: GruCell, x_t: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """One recurrence step on vectors (F,) and (H,) -> (H,)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape != (cell.n_in,) or h_prev.shape != (cell.n_hidden,):
        raise ValueError(
            f"shape mismatch: x {x_t.shape} vs F={cell.n_in}, h {h_prev.shape} vs H={cell.n_hidden}"
        )
    h, _, _, _ = _step_batch(cell, x_t[None, :], h_prev[None, :])
    return h[0]


def _step_batch(cell: GruCell, x: np.ndarray, h_prev: np.ndarray):
    """Vectorized step on (B, F) and (B, H); returns (h, z, r, c)."""
    pre_z = x @ cell.W_z.T + h_prev @ cell.U_z.T
    pre_r = x @ cell.W_r.T + h_prev @ cell.U_r.T
    if cell.use_bias:
        pre_z = pre_z + cell.b_z
        pre_r = pre_r + cell.b_r
    z = sigmoid(pre_z)
    r = sigmoid(pre_r)
    pre_c = x @ cell.W.T + (r * h_prev) @ cell.U.T
    if cell.use_bias:
        pre_c = pre_c + cell.b
    c = np.tanh(pre_c)
    h = z * c + (1.0 - z) * h_prev
    return h, z, r, c


def _scan(cell: GruCell, X: np.ndarray, lengths: np.ndarray):
    """Run the recurrence over (B, T, F) with per-row true lengths.

    Masked-out steps (t >= length) carry the state through unchanged. Returns
    the per-step states (B, T, H) and the cache needed for backprop.
    """
    B, T, _ = X.shape
    H = cell.n_hidden
    h = np.zeros((B, H))
    states = np.zeros((B, T, H))
    Hprev = np.zeros((B, T, H))
    Z = np.zeros((B, T, H))
    R = np.zeros((B, T, H))
    C = np.zeros((B, T, H))
    for t in range(T):
        alive = (t < lengths).astype(np.float64)[:, None]
        h_new, z, r, c = _step_batch(cell, X[:, t], h)
        Hprev[:, t] = h
        Z[:, t] = z
        R[:, t] = r
        C[:, t] = c
        h = alive * h_new + (1.0 - alive) * h
        states[:, t] = h
    cache = (X, lengths, Hprev, Z, R, C)
    return states, cache


def _final_states(states: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """State at each row's last real step; zero vector for empty rows."""
    B, T, H = states.shape
    out = np.zeros((B, H))
    nonzero = lengths > 0
    if T and np.any(nonzero):
        idx = np.clip(lengths - 1, 0, T - 1)
        out[nonzero] = states[np.arange(B)[nonzero], idx[nonzero]]
    return out


def _scan_backward(cell: GruCell, cache, d_final: np.ndarray) -> dict[str, np.ndarray]:
    """Exact BPTT for gradients of all cell parameters.

    ``d_final[b]`` is the loss gradient w.r.t. the final state of row ``b``;
    it is injected at that row's last real timestep and propagated back.
    """
    X, lengths, Hprev, Z, R, C = cache
    B, T, _ = X.shape
    g = {name: np.zeros_like(arr) for name, arr in cell.params()}
    dh = np.zeros_like(d_final)
    for t in range(T - 1, -1, -1):
        inject = (lengths - 1 == t)[:, None]
        dh = dh + np.where(inject, d_final, 0.0)
        alive = (t < lengths).astype(np.float64)[:, None]
        dcur = dh * alive
        x = X[:, t]
        h_prev = Hprev[:, t]
        z, r, c = Z[:, t], R[:, t], C[:, t]

        dz = dcur * (c - h_prev)
        dc = dcur * z
        dhp = dcur * (1.0 - z)

        dpre_c = dc * (1.0 - c * c)
        g["W"] += dpre_c.T @ x
        g["U"] += dpre_c.T @ (r * h_prev)
        drh = dpre_c @ cell.U
        dr = drh * h_prev
        dhp = dhp + drh * r

        dpre_r = dr * r * (1.0 - r)
        g["W_r"] += dpre_r.T @ x
        g["U_r"] += dpre_r.T @ h_prev
        dhp = dhp + dpre_r @ cell.U_r

        dpre_z = dz * z * (1.0 - z)
        g["W_z"] += dpre_z.T @ x
        g["U_z"] += dpre_z.T @ h_prev
        dhp = dhp + dpre_z @ cell.U_z

        if cell.use_bias:
            g["b"] += dpre_c.sum(axis=0)
            g["b_r"] += dpre_r.sum(axis=0)
            g["b_z"] += dpre_z.sum(axis=0)

        dh = dhp + dh * (1.0 - alive)
    return g


def gru_forward(cell: GruCell, seq: EncodedView) -> tuple[np.ndarray, np.ndarray]:
    """Run the cell over one encoded sequence from h_0 = 0.

    Returns all per-step states (T, H) (masked-out steps carry the previous
    state) and the final masked state, which is the zero vector when the
    sequence is empty.
    """
    if seq.values.shape[1] != cell.n_in:
        raise ValueError(f"feature mismatch: seq F={seq.values.shape[1]}, cell F={cell.n_in}")
    lengths = np.array([seq.true_length])
    states, _ = _scan(cell, seq.values[None], lengths)
    return states[0], _final_states(states, lengths)[0]


def _reverse_within_lengths(X: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    out = np.zeros_like(X)
    for b, L in enumerate(lengths):
        if L:
            out[b, :L] = X[b, :L][::-1]
    return out


def bigru_encode(fwd: GruCell, bwd: GruCell, seq: EncodedView) -> np.ndarray:
    """Concatenate the forward final state with the final state of the
    backward cell run over the reversed real timesteps: (2H,)."""
    if fwd.n_in != bwd.n_in or fwd.n_hidden != bwd.n_hidden:
        raise ValueError("forward/backward cells must share F and H")
    _, h_f = gru_forward(fwd, seq)
    rev = _reverse_within_lengths(seq.values[None], np.array([seq.true_length]))[0]
    rev_view = EncodedView(values=rev, mask=seq.mask.copy(), true_length=seq.true_length)
    _, h_b = gru_forward(bwd, rev_view)
    return np.concatenate([h_f, h_b])


@dataclass
class DenseLayer:
    """Affine layer y = W x + b with W of shape (out, in)."""

    W: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "DenseLayer":
        return cls(W=_glorot(rng, n_out, n_in, n_in + n_out), b=np.zeros(n_out))

    def params(self) -> list[tuple[str, np.ndarray]]:
        return [("W", self.W), ("b", self.b)]


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.W.shape[1]:
        raise ValueError(f"shape mismatch: input {x.shape[-1]} vs layer in={layer.W.shape[1]}")
    return x @ layer.W.T + layer.b


def dense_softmax_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Class probabilities softmax(W x + b); sums to 1, entries in (0, 1)."""
    return softmax(dense_forward(layer, x))


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-log(probs[label] + 1e-12) for one sample."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(probs[..., label] + CROSS_ENTROPY_EPS))


class MvmcNet:
    """The fused classifier graph: one bidirectional GRU encoder per enabled
    view, encoder outputs concatenated in canonical view order, a tanh fusion
    layer, and a softmax output head.

    A single-view network is the same graph with one enabled view.
    """

    def __init__(
        self,
        view_feats: Mapping[ViewKind, int],
        hidden: int,
        fusion_hidden: int,
        n_classes: int,
        rng: np.random.Generator,
        use_bias: bool = True,
    ) -> None:
        if n_classes < 2:
            raise ValueError("need at least 2 classes")
        if not view_feats:
            raise ValueError("need at least one enabled view")
        self.views: tuple[ViewKind, ...] = tuple(k for k in ViewKind if k in view_feats)
        self.hidden = hidden
        self.cells: dict[ViewKind, tuple[GruCell, GruCell]] = {}
        for kind in self.views:
            f = view_feats[kind]
            self.cells[kind] = (
                GruCell.init(f, hidden, rng, use_bias),
                GruCell.init(f, hidden, rng, use_bias),
            )
        self.fusion = DenseLayer.init(2 * hidden * len(self.views), fusion_hidden, rng)
        self.out = DenseLayer.init(fusion_hidden, n_classes, rng)

    @property
    def n_classes(self) -> int:
        return self.out.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        """Named parameter tensors in declaration order."""
        out: dict[str, np.ndarray] = {}
        for kind in self.views:
            for direction, cell in zip(("fwd", "bwd"), self.cells[kind]):
                for name, arr in cell.params():
                    out[f"{kind.value}.{direction}.{name}"] = arr
        for name, arr in self.fusion.params():
            out[f"fusion.{name}"] = arr
        for name, arr in self.out.params():
            out[f"out.{name}"] = arr
        return out

    def set_params(self, values: Mapping[str, np.ndarray]) -> None:
        own = self.params()
        if set(own) != set(values):
            raise ValueError("parameter name mismatch")
        for name, arr in own.items():
            np.copyto(arr, values[name])

    # --- batched forward/backward ---------------------------------------

    def _encode_batch(self, batches: Mapping[ViewKind, tuple[np.ndarray, np.ndarray]]):
        """Encode (X, lengths) per view into the fused matrix E of shape
        (B, 2H * n_views), keeping caches for backprop."""
        parts = []
        caches = {}
        for kind in self.views:
            X, lengths = batches[kind]
            fwd, bwd = self.cells[kind]
            states_f, cache_f = _scan(fwd, X, lengths)
            Xr = _reverse_within_lengths(X, lengths)
            states_b, cache_b = _scan(bwd, Xr, lengths)
            parts.append(_final_states(states_f, lengths))
            parts.append(_final_states(states_b, lengths))
            caches[kind] = (cache_f, cache_b)
        return np.concatenate(parts, axis=1), caches

    def forward_batch(self, batches: Mapping[ViewKind, tuple[np.ndarray, np.ndarray]]):
        E, caches = self._encode_batch(batches)
        A = np.tanh(dense_forward(self.fusion, E))
        probs = softmax(dense_forward(self.out, A))
        return probs, (E, caches, A)

    def forward_views(self, views: Mapping[ViewKind, EncodedView]) -> np.ndarray:
        """Probabilities for one sample given its encoded views."""
        batches = {
            kind: (views[kind].values[None], np.array([views[kind].true_length]))
            for kind in self.views
        }
        probs, _ = self.forward_batch(batches)
        return probs[0]

    def loss_batch(
        self, batches: Mapping[ViewKind, tuple[np.ndarray, np.ndarray]], labels: np.ndarray
    ) -> float:
        probs, _ = self.forward_batch(batches)
        p = probs[np.arange(len(labels)), labels]
        return float(-np.log(p + CROSS_ENTROPY_EPS).sum())

    def loss_and_grads(
        self, batches: Mapping[ViewKind, tuple[np.ndarray, np.ndarray]], labels: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
        """Summed cross-entropy over the batch, exact parameter gradients,
        and the predicted probabilities."""
        labels = np.asarray(labels)
        probs, (E, caches, A) = self.forward_batch(batches)
        B = len(labels)
        rows = np.arange(B)
        p_label = probs[rows, labels]
        loss = float(-np.log(p_label + CROSS_ENTROPY_EPS).sum())

        # d loss / d logits through -log(p + eps) composed with softmax
        factor = (p_label / (p_label + CROSS_ENTROPY_EPS))[:, None]
        dlogits = factor * probs
        dlogits[rows, labels] -= factor[:, 0]

        grads: dict[str, np.ndarray] = {}
        grads["out.W"] = dlogits.T @ A
        grads["out.b"] = dlogits.sum(axis=0)
        dA = dlogits @ self.out.W
        dpre = dA * (1.0 - A * A)
        grads["fusion.W"] = dpre.T @ E
        grads["fusion.b"] = dpre.sum(axis=0)
        dE = dpre @ self.fusion.W

        H = self.hidden
        for i, kind in enumerate(self.views):
            cache_f, cache_b = caches[kind]
            d_f = dE[:, 2 * i * H : (2 * i + 1) * H]
            d_b = dE[:, (2 * i + 1) * H : (2 * i + 2) * H]
            fwd, bwd = self.cells[kind]
            for direction, cell, cache, d_final in (
                ("fwd", fwd, cache_f, d_f),
                ("bwd", bwd, cache_b, d_b),
            ):
                for name, arr in _scan_backward(cell, cache, d_final).items():
                    grads[f"{kind.value}.{direction}.{name}"] = arr
        # reorder to declaration order for deterministic accumulation
        ordered = {name: grads[name] for name in self.params()}
        return loss, ordered, probs


def grad_check(
    net: MvmcNet,
    views: Mapping[ViewKind, EncodedView],
    label: int,
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every coordinate, or a random subsample of at least 200 when
    ``max_coords`` caps the work. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    batches = {
        kind: (views[kind].values[None], np.array([views[kind].true_length]))
        for kind in net.views
    }
    labels = np.array([label])
    _, grads, _ = net.loss_and_grads(batches, labels)
    params = net.params()
    coords = [(name, idx) for name, arr in params.items() for idx in np.ndindex(arr.shape)]
    if max_coords is not None and len(coords) > max_coords:
        if max_coords < 200:
            raise ValueError("subsample must cover at least 200 coordinates")
        picked = (rng or np.random.default_rng(0)).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picked]
    worst = 0.0
    for name, idx in coords:
        arr = params[name]
        saved = arr[idx]
        arr[idx] = saved + eps
        lo_hi = net.loss_batch(batches, labels)
        arr[idx] = saved - eps
        lo_lo = net.loss_batch(batches, labels)
        arr[idx] = saved
        numeric = (lo_hi - lo_lo) / (2.0 * eps)
        analytic = grads[name][idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def _random_views(
    view_feats: Mapping[ViewKind, int], rng: np.random.Generator, max_len: int = 6
) -> dict[ViewKind, EncodedView]:
    views = {}
    for kind, f in view_feats.items():
        L = int(rng.integers(0, max_len + 1))
        values = np.zeros((max_len, f))
        values[:L] = rng.uniform(0.0, 1.0, size=(L, f))
        views[kind] = EncodedView(
            values=values, mask=np.arange(max_len) < L, true_length=L
        )
    return views


def grad_check_suite(
    n_models: int = 10,
    hidden: int = 4,
    fusion_hidden: int = 8,
    n_classes: int = 3,
    seed: int = 0,
    eps: float = 1e-5,
    max_coords: int | None = 400,
    max_len: int = 6,
) -> float:
    """Gradient-check ``n_models`` random multi-view networks on random short
    sequences; returns the worst relative error seen."""
    worst = 0.0
    for i in range(n_models):
        rng = np.random.default_rng(seed + i)
        net = MvmcNet(N_FEATURES, hidden, fusion_hidden, n_classes, rng)
        views = _random_views(N_FEATURES, rng, max_len=max_len)
        while all(v.true_length == 0 for v in views.values()):
            # at least one non-empty view, otherwise the check is vacuous
            views = _random_views(N_FEATURES, rng, max_len=max_len)
        label = int(rng.integers(0, n_classes))
        worst = max(worst, grad_check(net, views, label, eps=eps, max_coords=max_coords, rng=rng))
    return worst
