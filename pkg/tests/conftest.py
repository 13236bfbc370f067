"""Shared fixtures and oracle helpers."""

from __future__ import annotations

import json

import numpy as np
import pytest

from reclens.datamodel import MetadataMatrix, RatingsMatrix
from reclens.regressors import RegressionTree, TreeNode, TreeParams
from reclens.shadow import ShadowModel, TreeKind


def identity_meta(n_items: int) -> MetadataMatrix:
    """One exclusive feature per item: row i is the i-th unit vector."""
    width = len(str(n_items - 1))
    return MetadataMatrix(
        n_items=n_items,
        feature_names=tuple(f"id{i:0{width}d}" for i in range(n_items)),
        columns=tuple(frozenset([i]) for i in range(n_items)),
    )


def make_meta(n_items: int, columns: dict[str, set[int]]) -> MetadataMatrix:
    names = tuple(sorted(columns))
    return MetadataMatrix(
        n_items=n_items,
        feature_names=names,
        columns=tuple(frozenset(columns[n]) for n in names),
    )


def complete_low_rank_ratings(
    n_users: int,
    n_items: int,
    rank: int,
    rng: np.random.Generator,
    scale: tuple[float, float] = (1.0, 5.0),
) -> tuple[RatingsMatrix, np.ndarray]:
    """A complete ratings matrix of exact rank ``rank`` with every value
    inside the scale: one constant factor carries the midpoint, the rest
    perturb it by less than the half-width."""
    lo, hi = scale
    mid = (lo + hi) / 2
    half = (hi - lo) / 2
    U = np.empty((n_users, rank))
    V = np.empty((n_items, rank))
    U[:, 0] = 1.0
    V[:, 0] = mid
    if rank > 1:
        spread = 0.9 * half / (rank - 1)
        U[:, 1:] = rng.uniform(-1.0, 1.0, size=(n_users, rank - 1))
        V[:, 1:] = rng.uniform(-spread, spread, size=(n_items, rank - 1))
    R = U @ V.T
    assert R.min() >= lo and R.max() <= hi
    users, items = np.divmod(np.arange(n_users * n_items), n_items)
    return (
        RatingsMatrix(
            n_users=n_users,
            n_items=n_items,
            users=users,
            items=items,
            ratings=R.ravel(),
            scale=scale,
        ),
        R,
    )


def leaf_tree(value: float, n_features: int) -> RegressionTree:
    return RegressionTree(
        root=TreeNode(value=float(value)),
        params=TreeParams(max_depth=0),
        n_features=n_features,
    )


def manual_shadow(
    predictors,
    user_factors,
    meta: MetadataMatrix,
    item_indices=None,
) -> ShadowModel:
    """Assemble a ShadowModel directly (all items in both splits)."""
    if item_indices is None:
        item_indices = np.arange(meta.n_items)
    item_indices = np.asarray(item_indices, dtype=np.int64)
    return ShadowModel(
        factor_predictors=tuple(predictors),
        user_factors=np.asarray(user_factors, dtype=np.float64),
        feature_names=meta.feature_names,
        item_indices=item_indices,
        train_items=item_indices,
        eval_items=item_indices,
        kind=TreeKind(TreeParams(max_depth=0)),
        eval_is_train=True,
    )


def write_ratings_csv(path, rows, header="userId,movieId,rating,timestamp"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def write_metadata_jsonl(path, records: dict[str, dict[str, list[str]]]):
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, attrs in records.items():
            fh.write(json.dumps({"item_id": item_id, "attributes": attrs}))
            fh.write("\n")


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
