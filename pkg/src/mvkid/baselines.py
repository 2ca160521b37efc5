"""Classical multi-class baselines over fixed-length session features:
multinomial logistic regression, one-vs-rest linear SVM, a CART decision
tree, and a random forest. All are implemented here directly so their tie
rules and seeds are fully pinned down.

Feature vector layout (FEATURE_DIM = 37, fixed for schema version 1):

    [0:12)   alphabet dur/gap/dist x (mean, std, min, max), normalized
    [12:20)  symbol dur/gap x (mean, std, min, max), normalized
    [20:28)  symbol key-category counts (8, raw per-session counts)
    [28:34)  accel ax/ay/az x (mean, std), normalized
    [34:37)  event counts: alphabet, symbol, accel

Statistics are taken over all real events of a view (no truncation); an empty
view contributes zeros for its whole block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import softmax
from .preprocess import Normalizer, fit_normalizer, impute_missing, view_matrix
from .seeding import derive_seed
from .sessions import SYMBOL_CATEGORIES, Dataset, Session, ViewKind

__all__ = [
    "BASELINE_NAMES",
    "BaselineModel",
    "DecisionTree",
    "FEATURE_DIM",
    "ForestHyper",
    "LinearHyper",
    "LinearModel",
    "RandomForest",
    "TreeHyper",
    "featurize",
    "train_baseline",
    "train_decision_tree",
    "train_linear_svm",
    "train_logreg",
    "train_random_forest",
]

FEATURE_DIM = 37

BASELINE_NAMES = ("logreg", "svm", "dtree", "rforest")


def _stats(values: np.ndarray, with_extremes: bool = True) -> list[float]:
    if len(values) == 0:
        return [0.0] * (4 if with_extremes else 2)
    out = [float(values.mean()), float(values.std())]
    if with_extremes:
        out += [float(values.min()), float(values.max())]
    return out


def featurize(s: Session, nz: Normalizer) -> np.ndarray:
    """Deterministic NaN-free summary vector of one session (see layout)."""
    s = impute_missing(s)
    parts: list[float] = []

    def scaled(kind: ViewKind) -> np.ndarray:
        raw = view_matrix(s, kind)
        span = nz.maxs[kind] - nz.mins[kind]
        return np.clip((raw - nz.mins[kind]) / span, 0.0, 1.0)

    alpha = scaled(ViewKind.ALPHABET)
    for col in range(3):
        parts += _stats(alpha[:, col])
    sym = scaled(ViewKind.SYMBOL)
    for col in (-2, -1):
        parts += _stats(sym[:, col])
    counts = np.zeros(len(SYMBOL_CATEGORIES))
    for e in s.symbol_view:
        counts[SYMBOL_CATEGORIES.index(e.category)] += 1
    parts += counts.tolist()
    accel = scaled(ViewKind.ACCEL)
    for col in range(3):
        parts += _stats(accel[:, col], with_extremes=False)
    parts += [float(len(s.alphabet_view)), float(len(s.symbol_view)), float(len(s.accel_view))]
    vec = np.asarray(parts, dtype=np.float64)
    assert vec.shape == (FEATURE_DIM,)
    return vec


# --- linear models ----------------------------------------------------------


@dataclass(frozen=True)
class LinearHyper:
    """Hyperparameters shared by the two linear baselines."""

    lr: float = 0.5
    iterations: int = 500
    l2: float = 1e-4
    tol: float = 1e-6  # stop when the gradient norm falls below this


@dataclass
class LinearModel:
    """Multi-class linear scorer over internally standardized features."""

    kind: str
    W: np.ndarray  # (K, d)
    b: np.ndarray  # (K,)
    mean: np.ndarray
    scale: np.ndarray

    def decision(self, X: np.ndarray) -> np.ndarray:
        Xs = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Xs @ self.W.T + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision(X), axis=1)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if self.kind != "logreg":
            raise ValueError("probabilities are only defined for logistic regression")
        return softmax(self.decision(X))

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearModel":
        return cls(
            kind=obj["kind"],
            W=np.asarray(obj["W"], dtype=np.float64),
            b=np.asarray(obj["b"], dtype=np.float64),
            mean=np.asarray(obj["mean"], dtype=np.float64),
            scale=np.asarray(obj["scale"], dtype=np.float64),
        )


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std == 0, 1.0, std)
    return (X - mean) / scale, mean, scale


def _check_xy(X: np.ndarray, y: np.ndarray, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if len(np.unique(y)) < 2:
        raise ValueError("training labels contain a single class")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels out of range")
    return X, y


def train_logreg(
    X: np.ndarray, y: np.ndarray, n_classes: int, hyper: LinearHyper | None = None
) -> LinearModel:
    """Multinomial softmax regression by full-batch gradient descent with L2
    weight decay on the weights (never the intercept)."""
    hyper = hyper or LinearHyper()
    X, y = _check_xy(X, y, n_classes)
    Xs, mean, scale = _standardize(X)
    n, d = Xs.shape
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), y] = 1.0
    for _ in range(hyper.iterations):
        P = softmax(Xs @ W.T + b)
        diff = P - Y
        gW = diff.T @ Xs / n + hyper.l2 * W
        gb = diff.mean(axis=0)
        gnorm = math.sqrt(float(np.sum(gW * gW)) + float(np.sum(gb * gb)))
        if gnorm < hyper.tol:
            break
        W -= hyper.lr * gW
        b -= hyper.lr * gb
    return LinearModel(kind="logreg", W=W, b=b, mean=mean, scale=scale)


def train_linear_svm(
    X: np.ndarray, y: np.ndarray, n_classes: int, hyper: LinearHyper | None = None
) -> LinearModel:
    """One-vs-rest hinge loss with L2 regularization via subgradient descent;
    prediction is the argmax of the per-class decision values."""
    hyper = hyper or LinearHyper(lr=0.1)
    X, y = _check_xy(X, y, n_classes)
    Xs, mean, scale = _standardize(X)
    n, d = Xs.shape
    W = np.zeros((n_classes, d))
    b = np.zeros(n_classes)
    S = -np.ones((n, n_classes))
    S[np.arange(n), y] = 1.0
    for _ in range(hyper.iterations):
        margins = 1.0 - S * (Xs @ W.T + b)
        active = (margins > 0).astype(np.float64) * S
        gW = -active.T @ Xs / n + hyper.l2 * W
        gb = -active.mean(axis=0)
        gnorm = math.sqrt(float(np.sum(gW * gW)) + float(np.sum(gb * gb)))
        if gnorm < hyper.tol:
            break
        W -= hyper.lr * gW
        b -= hyper.lr * gb
    return LinearModel(kind="svm", W=W, b=b, mean=mean, scale=scale)


# --- decision tree and random forest ---------------------------------------


@dataclass(frozen=True)
class TreeHyper:
    max_depth: int = 12
    min_samples_leaf: int = 2


@dataclass
class _Node:
    prediction: int
    feature: int | None = None
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_json(self) -> dict:
        if self.is_leaf:
            return {"pred": self.prediction}
        return {
            "pred": self.prediction,
            "f": self.feature,
            "t": self.threshold,
            "l": self.left.to_json(),
            "r": self.right.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "_Node":
        if "f" not in obj:
            return cls(prediction=obj["pred"])
        return cls(
            prediction=obj["pred"],
            feature=obj["f"],
            threshold=obj["t"],
            left=cls.from_json(obj["l"]),
            right=cls.from_json(obj["r"]),
        )


def _gini(counts: np.ndarray, n: int) -> float:
    p = counts / n
    return 1.0 - float((p * p).sum())


def _best_split(
    X: np.ndarray, y: np.ndarray, n_classes: int, features: Sequence[int], min_leaf: int
) -> tuple[int, float] | None:
    """Exhaustive scan over midpoint thresholds of the given features.

    Returns the (feature, threshold) with the largest Gini decrease; ties go
    to the lowest feature index, then the lowest threshold. Splits leaving a
    side below ``min_leaf`` are not considered.
    """
    n = len(y)
    parent_counts = np.bincount(y, minlength=n_classes)
    parent_gini = _gini(parent_counts, n)
    best: tuple[float, int, float] | None = None
    for f in sorted(features):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y[order]] = 1.0
        cum = onehot.cumsum(axis=0)
        n_left = np.arange(1, n)
        valid = (xs[:-1] != xs[1:]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not np.any(valid):
            continue
        counts_left = cum[:-1]
        counts_right = parent_counts - counts_left
        n_right = n - n_left
        g_left = 1.0 - ((counts_left / n_left[:, None]) ** 2).sum(axis=1)
        g_right = 1.0 - ((counts_right / n_right[:, None]) ** 2).sum(axis=1)
        weighted = (n_left * g_left + n_right * g_right) / n
        decrease = np.where(valid, parent_gini - weighted, -np.inf)
        i = int(np.argmax(decrease))  # first maximum -> lowest threshold
        if best is None or decrease[i] > best[0]:
            best = (float(decrease[i]), f, float((xs[i] + xs[i + 1]) / 2.0))
    if best is None:
        return None
    return best[1], best[2]


def _majority(y: np.ndarray, n_classes: int) -> int:
    return int(np.argmax(np.bincount(y, minlength=n_classes)))


def _build_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    depth: int,
    hyper: TreeHyper,
    rng: np.random.Generator | None,
    max_features: int | None,
) -> _Node:
    node = _Node(prediction=_majority(y, n_classes))
    if (
        depth >= hyper.max_depth
        or len(y) < 2 * hyper.min_samples_leaf
        or np.all(y == y[0])
    ):
        return node
    d = X.shape[1]
    if max_features is not None and max_features < d:
        features = rng.choice(d, size=max_features, replace=False)
    else:
        features = range(d)
    split = _best_split(X, y, n_classes, features, hyper.min_samples_leaf)
    if split is None:
        return node
    f, thr = split
    mask = X[:, f] <= thr
    node.feature = f
    node.threshold = thr
    node.left = _build_tree(X[mask], y[mask], n_classes, depth + 1, hyper, rng, max_features)
    node.right = _build_tree(X[~mask], y[~mask], n_classes, depth + 1, hyper, rng, max_features)
    return node


@dataclass
class DecisionTree:
    """CART classifier with Gini impurity and pinned tie-break rules."""

    root: _Node
    n_classes: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X), dtype=np.int64)
        for i, row in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.prediction
        return out

    def to_json(self) -> dict:
        return {"kind": "dtree", "n_classes": self.n_classes, "root": self.root.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "DecisionTree":
        return cls(root=_Node.from_json(obj["root"]), n_classes=obj["n_classes"])


def train_decision_tree(
    X: np.ndarray, y: np.ndarray, n_classes: int, hyper: TreeHyper | None = None
) -> DecisionTree:
    hyper = hyper or TreeHyper()
    X, y = _check_tree_data(X, y, n_classes)
    root = _build_tree(X, y, n_classes, 0, hyper, rng=None, max_features=None)
    return DecisionTree(root=root, n_classes=n_classes)


def _check_tree_data(X: np.ndarray, y: np.ndarray, n_classes: int):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("cannot train on empty data")
    if len(X) != len(y):
        raise ValueError("X and y length mismatch")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels out of range")
    return X, y


@dataclass(frozen=True)
class ForestHyper:
    n_trees: int = 100
    bootstrap: bool = True
    max_features: int | str | None = "sqrt"  # "sqrt", None (= all), or a count
    max_depth: int = 12
    min_samples_leaf: int = 2
    seed: int = 0


@dataclass
class RandomForest:
    """Bagged CART trees; prediction is the majority vote with ties going to
    the lowest class index."""

    trees: list[DecisionTree]
    n_classes: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        votes = np.stack([t.predict(X) for t in self.trees])
        out = np.empty(votes.shape[1], dtype=np.int64)
        for i in range(votes.shape[1]):
            out[i] = np.argmax(np.bincount(votes[:, i], minlength=self.n_classes))
        return out

    def to_json(self) -> dict:
        return {
            "kind": "rforest",
            "n_classes": self.n_classes,
            "trees": [t.root.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RandomForest":
        trees = [DecisionTree(root=_Node.from_json(t), n_classes=obj["n_classes"]) for t in obj["trees"]]
        return cls(trees=trees, n_classes=obj["n_classes"])


def train_random_forest(
    X: np.ndarray, y: np.ndarray, n_classes: int, hyper: ForestHyper | None = None
) -> RandomForest:
    """Bootstrap-bagged trees with per-split feature subsampling; each tree
    draws from its own stream derived from the master seed, so results do not
    depend on training order."""
    hyper = hyper or ForestHyper()
    X, y = _check_tree_data(X, y, n_classes)
    d = X.shape[1]
    if hyper.max_features == "sqrt":
        max_features: int | None = max(1, math.isqrt(d))
    elif hyper.max_features is None:
        max_features = None
    else:
        max_features = int(hyper.max_features)
    tree_hyper = TreeHyper(max_depth=hyper.max_depth, min_samples_leaf=hyper.min_samples_leaf)
    trees = []
    for i in range(hyper.n_trees):
        rng = np.random.default_rng(derive_seed(hyper.seed, f"tree:{i}"))
        if hyper.bootstrap:
            idx = rng.integers(0, len(y), size=len(y))
            Xi, yi = X[idx], y[idx]
        else:
            Xi, yi = X, y
        root = _build_tree(Xi, yi, n_classes, 0, tree_hyper, rng=rng, max_features=max_features)
        trees.append(DecisionTree(root=root, n_classes=n_classes))
    return RandomForest(trees=trees, n_classes=n_classes)


# --- session-level wrapper ---------------------------------------------------


@dataclass
class BaselineModel:
    """A fitted baseline bundled with its normalizer and label mapping, so it
    consumes sessions exactly like the deep models do."""

    name: str
    inner: LinearModel | DecisionTree | RandomForest
    normalizer: Normalizer
    label_index: dict[str, int]

    def __post_init__(self) -> None:
        self.users = [u for u, _ in sorted(self.label_index.items(), key=lambda kv: kv[1])]

    def features(self, sessions: Sequence[Session]) -> np.ndarray:
        return np.stack([featurize(s, self.normalizer) for s in sessions])

    def predict_many(self, sessions: Sequence[Session]) -> list[str]:
        labels = self.inner.predict(self.features(sessions))
        return [self.users[i] for i in labels]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "model": self.inner.to_json(),
            "normalizer": self.normalizer.to_json(),
            "label_index": self.label_index,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BaselineModel":
        kind = obj["model"].get("kind")
        if kind in ("logreg", "svm"):
            inner: LinearModel | DecisionTree | RandomForest = LinearModel.from_json(obj["model"])
        elif kind == "dtree":
            inner = DecisionTree.from_json(obj["model"])
        elif kind == "rforest":
            inner = RandomForest.from_json(obj["model"])
        else:
            raise ValueError(f"unknown baseline kind {kind!r}")
        return cls(
            name=obj["name"],
            inner=inner,
            normalizer=Normalizer.from_json(obj["normalizer"]),
            label_index={str(k): int(v) for k, v in obj["label_index"].items()},
        )


def train_baseline(
    name: str,
    train_ds: Dataset,
    linear_hyper: LinearHyper | None = None,
    tree_hyper: TreeHyper | None = None,
    forest_hyper: ForestHyper | None = None,
) -> BaselineModel:
    """Fit one of the named baselines on a dataset (normalizer included)."""
    if name not in BASELINE_NAMES:
        raise ValueError(f"unknown baseline {name!r}; expected one of {BASELINE_NAMES}")
    imputed = Dataset(
        sessions=tuple(impute_missing(s) for s in train_ds.sessions),
        label_index=dict(train_ds.label_index),
    )
    nz = fit_normalizer(imputed)
    X = np.stack([featurize(s, nz) for s in imputed.sessions])
    y = imputed.labels()
    k = imputed.n_classes
    if name == "logreg":
        inner: LinearModel | DecisionTree | RandomForest = train_logreg(X, y, k, linear_hyper)
    elif name == "svm":
        inner = train_linear_svm(X, y, k, linear_hyper)
    elif name == "dtree":
        inner = train_decision_tree(X, y, k, tree_hyper)
    else:
        inner = train_random_forest(X, y, k, forest_hyper)
    return BaselineModel(name=name, inner=inner, normalizer=nz, label_index=dict(train_ds.label_index))
