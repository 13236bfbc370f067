"""The composed shadow model: one regressor per item latent factor,
combined with the baseline's user factors, plus its agreement metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datamodel import FactorModel, MetadataMatrix
from .errors import InsufficientDataError, ValidationError
from .regressors import (
    LinearRegressor,
    RegressionTree,
    TreeNode,
    TreeParams,
    fit_linear,
    fit_tree,
)

SHADOW_FORMAT = "reclens-shadow-model"
SHADOW_VERSION = 1

FAITHFULNESS_EPS = 1e-12


@dataclass(frozen=True)
class LinearKind:
    ridge: float = 0.1


@dataclass(frozen=True)
class TreeKind:
    params: TreeParams


ShadowKind = LinearKind | TreeKind


@dataclass(frozen=True)
class ShadowModel:
    """k per-factor regressors plus the baseline user factors.

    ``item_indices[row]`` is the baseline item index behind metadata row
    ``row`` (the two coincide when no pruning happened).  ``train_items``
    and ``eval_items`` are baseline item index sets from the seeded split;
    when the split keeps everything, eval falls back to the training set
    and ``eval_is_train`` is flagged so reports can say so.
    """

    factor_predictors: tuple
    user_factors: np.ndarray
    feature_names: tuple[str, ...]
    item_indices: np.ndarray
    train_items: np.ndarray
    eval_items: np.ndarray
    kind: ShadowKind
    eval_is_train: bool = False
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("user_factors", "item_indices", "train_items", "eval_items"):
            arr = np.asarray(getattr(self, name))
            arr = arr.astype(np.float64 if name == "user_factors" else np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.factor_predictors) != self.rank:
            raise ValidationError("one predictor per latent factor required")
        row_of = {int(b): r for r, b in enumerate(self.item_indices)}
        object.__setattr__(self, "_row_of_item", row_of)

    @property
    def rank(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    def row_of_item(self, item: int) -> int:
        try:
            return self._row_of_item[int(item)]
        except KeyError:
            raise IndexError(
                f"item {item} is not in the shadow model's item universe"
            ) from None

    def predicted_factors(self, a: np.ndarray) -> np.ndarray:
        """f_1(a) .. f_k(a) as a vector."""
        return np.array([p.predict(a) for p in self.factor_predictors])

    def predicted_factors_batch(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([p.predict_batch(X) for p in self.factor_predictors])

    def predict(self, user: int, a: np.ndarray) -> float:
        """sum_j U[user][j] * f_j(a)."""
        if not 0 <= user < self.n_users:
            raise IndexError(f"user index {user} out of range [0, {self.n_users})")
        return float(self.user_factors[user] @ self.predicted_factors(a))


def shadow_predict(shadow: ShadowModel, user: int, a: np.ndarray) -> float:
    return shadow.predict(user, a)


def train_shadow(
    baseline: FactorModel,
    meta: MetadataMatrix,
    kind: ShadowKind,
    split: tuple[float, int] = (0.8, 0),
    item_indices: Sequence[int] | None = None,
) -> ShadowModel:
    """Fit one regressor per latent factor on the items' attribute rows.

    ``split`` = (train_fraction, seed) partitions items once; every factor
    is trained on the same rows.  ``item_indices`` maps metadata rows to
    baseline item indices after pruning; by default the metadata must span
    the baseline item set one to one.
    """
    if item_indices is None:
        if meta.n_items != baseline.n_items:
            raise ValidationError(
                f"metadata covers {meta.n_items} items but the baseline has "
                f"{baseline.n_items}; pass item_indices after pruning"
            )
        item_indices = np.arange(meta.n_items, dtype=np.int64)
    else:
        item_indices = np.asarray(item_indices, dtype=np.int64)
        if len(item_indices) != meta.n_items:
            raise ValidationError("item_indices must have one entry per metadata row")
        if len(item_indices) and (
            item_indices.min() < 0 or item_indices.max() >= baseline.n_items
        ):
            raise ValidationError("item_indices out of baseline range")
    train_fraction, seed = split
    if not 0.0 < train_fraction <= 1.0:
        raise ValidationError("train_fraction must be in (0, 1]")
    n = meta.n_items
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    train_rows = np.sort(perm[:n_train])
    eval_rows = np.sort(perm[n_train:])
    if len(train_rows) < 2:
        raise InsufficientDataError(
            f"only {len(train_rows)} training item(s); need at least 2"
        )
    eval_is_train = len(eval_rows) == 0
    if eval_is_train:
        eval_rows = train_rows
    X = meta.dense[train_rows]
    Y = baseline.item_factors[item_indices[train_rows]]
    predictors = []
    for j in range(baseline.rank):
        if isinstance(kind, LinearKind):
            predictors.append(fit_linear(X, Y[:, j], kind.ridge))
        else:
            predictors.append(fit_tree(X, Y[:, j], kind.params))
    return ShadowModel(
        factor_predictors=tuple(predictors),
        user_factors=baseline.user_factors,
        feature_names=meta.feature_names,
        item_indices=item_indices,
        train_items=item_indices[train_rows],
        eval_items=item_indices[eval_rows],
        kind=kind,
        eval_is_train=eval_is_train,
        user_ids=baseline.user_ids,
        item_ids=baseline.item_ids,
    )


def _rows_for_items(shadow: ShadowModel, items: Iterable[int]) -> np.ndarray:
    return np.array([shadow.row_of_item(i) for i in items], dtype=np.int64)


def latent_agreement(
    shadow: ShadowModel,
    baseline: FactorModel,
    meta: MetadataMatrix,
    items: Iterable[int],
) -> tuple[np.ndarray, float]:
    """Per-factor MAE of predicted vs baseline item factors, and its mean."""
    items = np.asarray(list(items), dtype=np.int64)
    if len(items) == 0:
        raise ValidationError("latent agreement over an empty item set is undefined")
    rows = _rows_for_items(shadow, items)
    predicted = shadow.predicted_factors_batch(meta.dense[rows])
    truth = baseline.item_factors[items]
    per_factor = np.abs(predicted - truth).mean(axis=0)
    return per_factor, float(per_factor.mean())


def _pair_predictions(shadow, baseline, meta, pairs):
    pairs = [(int(u), int(i)) for u, i in pairs]
    if not pairs:
        raise ValidationError("agreement over an empty pair set is undefined")
    users = np.array([u for u, _ in pairs], dtype=np.int64)
    items = np.array([i for _, i in pairs], dtype=np.int64)
    rows = _rows_for_items(shadow, items)
    factors = shadow.predicted_factors_batch(meta.dense[rows])
    shadow_pred = np.einsum("ij,ij->i", shadow.user_factors[users], factors)
    base_pred = np.einsum(
        "ij,ij->i", baseline.user_factors[users], baseline.item_factors[items]
    )
    return users, items, shadow_pred, base_pred


def observational_agreement(
    shadow: ShadowModel,
    baseline: FactorModel,
    meta: MetadataMatrix,
    pairs: Iterable[tuple[int, int]],
) -> tuple[float, float]:
    """MAE and MSE of (baseline rating - shadow rating) over the pairs.

    The comparison target is always the baseline model's prediction, never
    the ground-truth rating.
    """
    _, _, shadow_pred, base_pred = _pair_predictions(shadow, baseline, meta, pairs)
    resid = base_pred - shadow_pred
    return float(np.abs(resid).mean()), float(np.mean(resid**2))


def faithfulness(
    shadow: ShadowModel,
    baseline: FactorModel,
    meta: MetadataMatrix,
    pairs: Iterable[tuple[int, int]],
    seed: int = 0,
) -> float:
    """MSE with randomized latent predictions divided by the shadow's MSE.

    Each item's predicted latent vector is replaced by a per-factor uniform
    draw from that factor's empirical range across the shadow's items;
    values far above 1 mean the shadow captures real signal.
    """
    users, items, shadow_pred, base_pred = _pair_predictions(
        shadow, baseline, meta, pairs
    )
    mse_shadow = float(np.mean((base_pred - shadow_pred) ** 2))
    universe = baseline.item_factors[shadow.item_indices]
    lo = universe.min(axis=0)
    hi = universe.max(axis=0)
    rng = np.random.default_rng(seed)
    distinct = np.unique(items)
    random_factors = lo + rng.random((len(distinct), shadow.rank)) * (hi - lo)
    slot = {int(i): r for r, i in enumerate(distinct)}
    rand_rows = np.array([slot[int(i)] for i in items])
    rand_pred = np.einsum(
        "ij,ij->i", shadow.user_factors[users], random_factors[rand_rows]
    )
    mse_random = float(np.mean((base_pred - rand_pred) ** 2))
    return mse_random / max(mse_shadow, FAITHFULNESS_EPS)


@dataclass(frozen=True)
class AgreementReport:
    per_factor_mae: tuple[float, ...]
    mean_latent_mae: float
    observational_mae: float
    observational_mse: float
    faithfulness: float

    def __post_init__(self):
        if any(v < 0 for v in self.per_factor_mae) or min(
            self.mean_latent_mae,
            self.observational_mae,
            self.observational_mse,
            self.faithfulness,
        ) < 0:
            raise ValidationError("agreement metrics must be non-negative")

    def to_dict(self) -> dict:
        return {
            "per_factor_mae": list(self.per_factor_mae),
            "mean_latent_mae": self.mean_latent_mae,
            "observational_mae": self.observational_mae,
            "observational_mse": self.observational_mse,
            "faithfulness": self.faithfulness,
        }


def measure_agreement(
    shadow: ShadowModel,
    baseline: FactorModel,
    meta: MetadataMatrix,
    item_set: str = "eval",
    seed: int = 0,
) -> AgreementReport:
    """Bundle latent and observational agreement over a named item set
    ("eval", "train" or "all"); pairs are all users x those items."""
    if item_set == "eval":
        items = shadow.eval_items
    elif item_set == "train":
        items = shadow.train_items
    elif item_set == "all":
        items = shadow.item_indices
    else:
        raise ValidationError(f"unknown item set {item_set!r}")
    per_factor, mean_mae = latent_agreement(shadow, baseline, meta, items)
    users = np.arange(shadow.n_users, dtype=np.int64)
    pairs = [(u, i) for i in items for u in users]
    mae, mse = observational_agreement(shadow, baseline, meta, pairs)
    faith = faithfulness(shadow, baseline, meta, pairs, seed=seed)
    return AgreementReport(
        per_factor_mae=tuple(float(v) for v in per_factor),
        mean_latent_mae=mean_mae,
        observational_mae=mae,
        observational_mse=mse,
        faithfulness=faith,
    )


def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"value": node.value}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(doc: dict) -> TreeNode:
    if "value" in doc:
        return TreeNode(value=doc["value"])
    return TreeNode(
        feature=doc["feature"],
        threshold=doc["threshold"],
        left=_node_from_dict(doc["left"]),
        right=_node_from_dict(doc["right"]),
    )


def _predictor_to_dict(p) -> dict:
    if isinstance(p, LinearRegressor):
        return {
            "type": "linear",
            "weights": p.weights.tolist(),
            "intercept": p.intercept,
            "ridge": p.ridge,
        }
    return {
        "type": "tree",
        "max_depth": p.params.max_depth,
        "bins": p.params.bins,
        "min_leaf": p.params.min_leaf,
        "n_features": p.n_features,
        "root": _node_to_dict(p.root),
    }


def _predictor_from_dict(doc: dict):
    if doc["type"] == "linear":
        return LinearRegressor(
            weights=np.array(doc["weights"], dtype=np.float64),
            intercept=doc["intercept"],
            ridge=doc["ridge"],
        )
    return RegressionTree(
        root=_node_from_dict(doc["root"]),
        params=TreeParams(doc["max_depth"], doc["bins"], doc["min_leaf"]),
        n_features=doc["n_features"],
    )


def save_shadow(shadow: ShadowModel, path: str | Path) -> None:
    if isinstance(shadow.kind, LinearKind):
        kind_doc = {"type": "linear", "ridge": shadow.kind.ridge}
    else:
        p = shadow.kind.params
        kind_doc = {
            "type": "tree",
            "max_depth": p.max_depth,
            "bins": p.bins,
            "min_leaf": p.min_leaf,
        }
    doc = {
        "format": SHADOW_FORMAT,
        "version": SHADOW_VERSION,
        "kind": kind_doc,
        "feature_names": list(shadow.feature_names),
        "predictors": [_predictor_to_dict(p) for p in shadow.factor_predictors],
        "user_factors": shadow.user_factors.tolist(),
        "item_indices": shadow.item_indices.tolist(),
        "train_items": shadow.train_items.tolist(),
        "eval_items": shadow.eval_items.tolist(),
        "eval_is_train": shadow.eval_is_train,
        "user_ids": list(shadow.user_ids) if shadow.user_ids is not None else None,
        "item_ids": list(shadow.item_ids) if shadow.item_ids is not None else None,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_shadow(path: str | Path) -> ShadowModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != SHADOW_FORMAT:
        raise ValidationError(f"{path}: not a {SHADOW_FORMAT} file")
    if doc.get("version") != SHADOW_VERSION:
        raise ValidationError(f"{path}: unsupported version {doc.get('version')}")
    kind_doc = doc["kind"]
    if kind_doc["type"] == "linear":
        kind: ShadowKind = LinearKind(ridge=kind_doc["ridge"])
    else:
        kind = TreeKind(
            TreeParams(kind_doc["max_depth"], kind_doc["bins"], kind_doc["min_leaf"])
        )
    return ShadowModel(
        factor_predictors=tuple(
            _predictor_from_dict(p) for p in doc["predictors"]
        ),
        user_factors=np.array(doc["user_factors"], dtype=np.float64),
        feature_names=tuple(doc["feature_names"]),
        item_indices=np.array(doc["item_indices"], dtype=np.int64),
        train_items=np.array(doc["train_items"], dtype=np.int64),
        eval_items=np.array(doc["eval_items"], dtype=np.int64),
        kind=kind,
        eval_is_train=doc["eval_is_train"],
        user_ids=tuple(doc["user_ids"]) if doc.get("user_ids") is not None else None,
        item_ids=tuple(doc["item_ids"]) if doc.get("item_ids") is not None else None,
    )
