"""Per-factor predictor families: ridge linear regression and binned
regression trees.

Both are deterministic: identical inputs always produce identical models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError, ValidationError


@dataclass(frozen=True)
class LinearRegressor:
    """w . a + b, fitted with an L2 penalty on w (intercept unpenalized)."""

    weights: np.ndarray
    intercept: float
    ridge: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if not np.all(np.isfinite(w)) or not np.isfinite(self.intercept):
            raise ValidationError("linear regressor coefficients must be finite")

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def predict(self, a: np.ndarray) -> float:
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (self.n_features,):
            raise ValidationError(
                f"attribute vector has length {a.shape}, expected {self.n_features}"
            )
        return float(self.weights @ a + self.intercept)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(
                f"attribute matrix has shape {X.shape}, expected (*, {self.n_features})"
            )
        return X @ self.weights + self.intercept


def fit_linear(X: np.ndarray, y: np.ndarray, ridge: float) -> LinearRegressor:
    """Minimize ||Xw + b - y||^2 + ridge*||w||^2 via the normal equations
    on the intercept-augmented system."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 1:
        raise ValidationError("X must be 2-d with one row per target value")
    if ridge < 0:
        raise ValidationError("ridge must be >= 0")
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    G = A.T @ A
    G[np.diag_indices(d)] += ridge  # intercept column left unpenalized
    c = A.T @ y
    try:
        z = np.linalg.solve(G, c)
    except np.linalg.LinAlgError:
        raise SolverError(
            "normal equations are singular; use ridge > 0 to regularize"
        ) from None
    return LinearRegressor(weights=z[:d], intercept=float(z[d]), ridge=float(ridge))


@dataclass(frozen=True)
class TreeParams:
    max_depth: int
    bins: int = 32
    min_leaf: int = 1

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        if self.bins < 2:
            raise ValidationError("bins must be >= 2")
        if self.min_leaf < 1:
            raise ValidationError("min_leaf must be >= 1")


@dataclass(frozen=True)
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (value)."""

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.value is not None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


@dataclass(frozen=True)
class RegressionTree:
    root: TreeNode
    params: TreeParams
    n_features: int

    def predict(self, a: np.ndarray) -> float:
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (self.n_features,):
            raise ValidationError(
                f"attribute vector has length {a.shape}, expected {self.n_features}"
            )
        node = self.root
        while not node.is_leaf:
            node = node.left if a[node.feature] <= node.threshold else node.right
        return float(node.value)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(
                f"attribute matrix has shape {X.shape}, expected (*, {self.n_features})"
            )
        out = np.empty(len(X), dtype=np.float64)
        self._fill(self.root, X, np.arange(len(X)), out)
        return out

    def _fill(self, node: TreeNode, X, idx, out):
        if node.is_leaf:
            out[idx] = node.value
            return
        go_left = X[idx, node.feature] <= node.threshold
        self._fill(node.left, X, idx[go_left], out)
        self._fill(node.right, X, idx[~go_left], out)


def _candidate_thresholds(x: np.ndarray, bins: int) -> np.ndarray:
    """Midpoints between adjacent distinct equal-frequency bin boundaries.

    Boundaries are actual order statistics (plus min and max), so binary
    columns always reduce to the single threshold 0.5 regardless of the
    bin count.
    """
    xs = np.sort(x)
    n = len(xs)
    positions = np.unique(
        np.concatenate(([0], (np.arange(1, bins) * n) // bins, [n - 1]))
    )
    boundaries = np.unique(xs[positions])
    if len(boundaries) < 2:
        return np.empty(0)
    return (boundaries[:-1] + boundaries[1:]) / 2.0


def _sse(y: np.ndarray) -> float:
    return float(np.sum((y - y.mean()) ** 2))


def _best_split(X, y, rows, params):
    """(feature, threshold) maximizing variance reduction, or None.

    Ties break to the lowest feature index, then the lowest threshold
    (guaranteed by ascending iteration with a strict improvement test).
    """
    n = len(rows)
    parent_sse = _sse(y[rows])
    best = None
    best_gain = -np.inf
    for feature in range(X.shape[1]):
        col = X[rows, feature]
        for threshold in _candidate_thresholds(col, params.bins):
            left = col <= threshold
            n_left = int(left.sum())
            if n_left < params.min_leaf or n - n_left < params.min_leaf:
                continue
            gain = parent_sse - _sse(y[rows[left]]) - _sse(y[rows[~left]])
            if gain > best_gain + 1e-15:
                best_gain = gain
                best = (feature, float(threshold))
    return best


def _grow(X, y, rows, depth, params) -> TreeNode:
    targets = y[rows]
    if depth >= params.max_depth or np.ptp(targets) == 0.0:
        return TreeNode(value=float(targets.mean()))
    split = _best_split(X, y, rows, params)
    if split is None:
        return TreeNode(value=float(targets.mean()))
    feature, threshold = split
    go_left = X[rows, feature] <= threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        left=_grow(X, y, rows[go_left], depth + 1, params),
        right=_grow(X, y, rows[~go_left], depth + 1, params),
    )


def fit_tree(X: np.ndarray, y: np.ndarray, params: TreeParams) -> RegressionTree:
    """Greedy CART regression: quantile-binned thresholds, variance-reduction
    splits, mean-valued leaves.

    Zero-gain splits are still taken while the target varies, so deeper
    trees can recover interactions (e.g. parity) that no single split
    improves on.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 1:
        raise ValidationError("X must be 2-d with one row per target value")
    root = _grow(X, y, np.arange(len(y)), 0, params)
    return RegressionTree(root=root, params=params, n_features=X.shape[1])


Regressor = LinearRegressor | RegressionTree


def predict(regressor: Regressor, a: np.ndarray) -> float:
    """Evaluate either regressor family on one attribute vector."""
    return regressor.predict(a)
