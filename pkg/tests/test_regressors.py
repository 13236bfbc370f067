import numpy as np
import pytest

from reclens.errors import SolverError, ValidationError
from reclens.regressors import (
    LinearRegressor,
    TreeParams,
    fit_linear,
    fit_tree,
    predict,
)


def best_tree_mae_oracle(X, y, depth: int) -> float:
    """Exhaustive search over axis-aligned binary trees up to ``depth``.

    Binary features admit a single meaningful threshold (0.5) per feature,
    so the search space is finite: every assignment of split features to a
    full tree of the given depth, with mean-valued leaves.
    """
    n_features = X.shape[1]

    def best_mae(rows, d):
        if len(rows) == 0:
            return 0.0, 0
        # leaf option
        leaf_err = float(np.abs(y[rows] - y[rows].mean()).sum())
        if d == 0:
            return leaf_err, len(rows)
        best = leaf_err
        for f in range(n_features):
            left = rows[X[rows, f] <= 0.5]
            right = rows[X[rows, f] > 0.5]
            if len(left) == 0 or len(right) == 0:
                continue
            le, _ = best_mae(left, d - 1)
            re, _ = best_mae(right, d - 1)
            best = min(best, le + re)
        return best, len(rows)

    total_abs, n = best_mae(np.arange(len(y)), depth)
    return total_abs / n


def tree_mae(tree, X, y) -> float:
    return float(np.abs(tree.predict_batch(X) - y).mean())


XOR_X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
XOR_Y = np.array([0.0, 1.0, 1.0, 0.0])


class TestFitLinear:
    def test_exact_interpolation(self, rng):
        X = rng.normal(size=(20, 4))
        w_true = rng.normal(size=4)
        y = X @ w_true + 1.7
        model = fit_linear(X, y, ridge=1e-12)
        residual = np.linalg.norm(model.predict_batch(X) - y)
        assert residual < 1e-8

    def test_zero_design_gives_mean_intercept(self):
        model = fit_linear(np.zeros((2, 1)), np.array([2.0, 4.0]), ridge=1e-9)
        assert model.weights[0] == 0.0
        assert model.intercept == pytest.approx(3.0, abs=1e-12)

    def test_simple_regression_closed_form(self):
        X = np.array([[0.0], [1.0], [2.0]])
        y = np.array([0.0, 1.0, 2.0])
        model = fit_linear(X, y, ridge=0.0)
        assert model.weights[0] == pytest.approx(1.0, abs=1e-12)
        assert model.intercept == pytest.approx(0.0, abs=1e-12)

    def test_singular_advises_ridge(self):
        with pytest.raises(SolverError, match="ridge > 0"):
            fit_linear(np.zeros((3, 2)), np.array([1.0, 2.0, 3.0]), ridge=0.0)

    def test_growing_ridge_shrinks_weights(self, rng):
        X = rng.normal(size=(30, 3))
        y = rng.normal(size=30)
        norms = [
            float(np.linalg.norm(fit_linear(X, y, ridge=r).weights))
            for r in (1e-3, 1e-1, 10.0, 1e3, 1e5)
        ]
        assert all(a >= b - 1e-12 for a, b in zip(norms, norms[1:]))
        assert norms[-1] < 1e-3

    def test_deterministic(self, rng):
        X = rng.normal(size=(10, 2))
        y = rng.normal(size=10)
        m1 = fit_linear(X, y, ridge=0.5)
        m2 = fit_linear(X, y, ridge=0.5)
        np.testing.assert_array_equal(m1.weights, m2.weights)
        assert m1.intercept == m2.intercept

    def test_dimension_mismatch(self):
        model = fit_linear(np.ones((2, 2)), np.ones(2), ridge=1.0)
        with pytest.raises(ValidationError):
            model.predict(np.ones(3))


class TestFitTree:
    def test_constant_target_is_single_leaf(self):
        X = np.array([[0.0], [1.0], [0.0]])
        tree = fit_tree(X, np.full(3, 2.5), TreeParams(max_depth=4))
        assert tree.root.is_leaf
        assert tree.root.value == 2.5

    def test_single_binary_feature_perfect_split(self):
        X = np.array([[0.0], [1.0], [0.0], [1.0]])
        y = np.array([0.0, 1.0, 0.0, 1.0])
        tree = fit_tree(X, y, TreeParams(max_depth=1))
        assert tree_mae(tree, X, y) == 0.0
        assert tree.root.depth() == 1

    def test_xor_against_enumeration_oracle(self):
        assert best_tree_mae_oracle(XOR_X, XOR_Y, 1) == pytest.approx(0.5)
        assert best_tree_mae_oracle(XOR_X, XOR_Y, 2) == 0.0
        shallow = fit_tree(XOR_X, XOR_Y, TreeParams(max_depth=1))
        deep = fit_tree(XOR_X, XOR_Y, TreeParams(max_depth=2))
        assert tree_mae(shallow, XOR_X, XOR_Y) == pytest.approx(0.5)
        assert tree_mae(deep, XOR_X, XOR_Y) == 0.0

    def test_greedy_matches_oracle_on_random_binary_data(self, rng):
        # greedy is not always optimal, but can never beat the oracle
        for _ in range(5):
            X = (rng.random((16, 3)) < 0.5).astype(float)
            y = rng.normal(size=16)
            for depth in (1, 2):
                fitted = fit_tree(X, y, TreeParams(max_depth=depth))
                assert (
                    tree_mae(fitted, X, y)
                    >= best_tree_mae_oracle(X, y, depth) - 1e-12
                )

    def test_depth_monotone_mae(self, rng):
        X = (rng.random((40, 4)) < 0.5).astype(float)
        y = rng.normal(size=40)
        maes = [
            tree_mae(fit_tree(X, y, TreeParams(max_depth=d)), X, y)
            for d in range(6)
        ]
        assert all(a >= b - 1e-12 for a, b in zip(maes, maes[1:]))

    def test_bins_irrelevant_for_binary_features(self, rng):
        X = (rng.random((30, 3)) < 0.4).astype(float)
        y = rng.normal(size=30)
        trees = [
            fit_tree(X, y, TreeParams(max_depth=3, bins=b)) for b in (2, 3, 8, 64)
        ]
        for other in trees[1:]:
            assert trees[0].root == other.root

    def test_min_leaf_respected(self, rng):
        X = (rng.random((12, 2)) < 0.5).astype(float)
        y = rng.normal(size=12)
        tree = fit_tree(X, y, TreeParams(max_depth=6, min_leaf=3))

        def check(node, rows):
            if node.is_leaf:
                assert len(rows) >= 3
                return
            left = rows[X[rows, node.feature] <= node.threshold]
            right = rows[X[rows, node.feature] > node.threshold]
            check(node.left, left)
            check(node.right, right)

        check(tree.root, np.arange(12))

    def test_leaf_values_are_training_means(self, rng):
        X = (rng.random((25, 3)) < 0.5).astype(float)
        y = rng.normal(size=25)
        tree = fit_tree(X, y, TreeParams(max_depth=2))

        def check(node, rows):
            if node.is_leaf:
                assert node.value == pytest.approx(y[rows].mean(), abs=1e-12)
                return
            mask = X[rows, node.feature] <= node.threshold
            check(node.left, rows[mask])
            check(node.right, rows[~mask])

        check(tree.root, np.arange(25))

    def test_tie_breaks_to_lowest_feature_then_threshold(self):
        # both features split y identically; feature 0 must win
        X = np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=float)
        y = np.array([0.0, 0.0, 1.0, 1.0])
        tree = fit_tree(X, y, TreeParams(max_depth=1))
        assert tree.root.feature == 0

    def test_deterministic(self, rng):
        X = (rng.random((20, 4)) < 0.5).astype(float)
        y = rng.normal(size=20)
        t1 = fit_tree(X, y, TreeParams(max_depth=3))
        t2 = fit_tree(X, y, TreeParams(max_depth=3))
        assert t1.root == t2.root

    def test_quantile_thresholds_on_numeric_feature(self):
        X = np.arange(100, dtype=float).reshape(-1, 1)
        y = (X[:, 0] >= 50).astype(float)
        tree = fit_tree(X, y, TreeParams(max_depth=1, bins=4))
        assert tree_mae(tree, X, y) <= 0.25


class TestPredict:
    def test_constant_tree(self):
        X = np.array([[0.0], [0.0]])
        tree = fit_tree(X, np.array([2.5, 2.5]), TreeParams(max_depth=3))
        assert predict(tree, np.array([123.0])) == 2.5

    def test_linear_hand_dot(self):
        model = LinearRegressor(
            weights=np.array([1.0, -1.0]), intercept=0.5, ridge=0.0
        )
        assert predict(model, np.array([1.0, 0.0])) == 1.5

    def test_fitted_xor_tree_routing(self):
        tree = fit_tree(XOR_X, XOR_Y, TreeParams(max_depth=2))
        assert predict(tree, np.array([1.0, 0.0])) == 1.0
        assert predict(tree, np.array([1.0, 1.0])) == 0.0

    def test_batch_matches_scalar(self, rng):
        X = (rng.random((15, 3)) < 0.5).astype(float)
        y = rng.normal(size=15)
        tree = fit_tree(X, y, TreeParams(max_depth=3))
        linear = fit_linear(X, y, ridge=0.1)
        for model in (tree, linear):
            np.testing.assert_allclose(
                model.predict_batch(X), [model.predict(row) for row in X]
            )

    def test_tree_dimension_error(self):
        tree = fit_tree(XOR_X, XOR_Y, TreeParams(max_depth=1))
        with pytest.raises(ValidationError):
            tree.predict(np.zeros(5))
