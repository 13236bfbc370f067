"""Core numeric containers shared by the whole pipeline.

All types are immutable after construction (arrays are marked read-only),
so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RatingsMatrix:
    """Sparse (user, item, rating) triplets: the ground-truth matrix.

    Indices are dense and 0-based; external identifiers, when known, live in
    ``user_ids`` / ``item_ids`` (position = dense index).
    """

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    scale: tuple[float, float] = (1.0, 5.0)
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "users", _frozen_array(self.users, np.int64))
        object.__setattr__(self, "items", _frozen_array(self.items, np.int64))
        object.__setattr__(self, "ratings", _frozen_array(self.ratings, np.float64))
        if not (len(self.users) == len(self.items) == len(self.ratings)):
            raise ValidationError("users, items and ratings must have equal length")
        lo, hi = self.scale
        if not lo < hi:
            raise ValidationError(f"rating scale {self.scale} must satisfy low < high")
        if self.nnz:
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise ValidationError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise ValidationError("item index out of range")
            if self.ratings.min() < lo or self.ratings.max() > hi:
                raise ValidationError(f"rating outside declared scale {self.scale}")
            pairs = self.users * self.n_items + self.items
            if len(np.unique(pairs)) != len(pairs):
                raise ValidationError("duplicate (user, item) pair")

    @property
    def nnz(self) -> int:
        return len(self.ratings)

    @classmethod
    def from_entries(
        cls,
        n_users: int,
        n_items: int,
        entries: Iterable[tuple[int, int, float]],
        scale: tuple[float, float] = (1.0, 5.0),
        user_ids: Sequence[str] | None = None,
        item_ids: Sequence[str] | None = None,
    ) -> "RatingsMatrix":
        entries = list(entries)
        users = [e[0] for e in entries]
        items = [e[1] for e in entries]
        ratings = [e[2] for e in entries]
        return cls(
            n_users,
            n_items,
            np.asarray(users, dtype=np.int64),
            np.asarray(items, dtype=np.int64),
            np.asarray(ratings, dtype=np.float64),
            scale=scale,
            user_ids=tuple(user_ids) if user_ids is not None else None,
            item_ids=tuple(item_ids) if item_ids is not None else None,
        )


@dataclass(frozen=True)
class FactorModel:
    """Dense user and item factor matrices of rank ``rank``.

    The predicted rating for a (user, item) pair is the dot product of the
    corresponding factor rows; predictions are never clamped to the rating
    scale.
    """

    rank: int
    lam: float
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "user_factors", _frozen_array(self.user_factors, np.float64)
        )
        object.__setattr__(
            self, "item_factors", _frozen_array(self.item_factors, np.float64)
        )
        if self.rank < 1:
            raise ValidationError(f"rank must be >= 1, got {self.rank}")
        if self.user_factors.ndim != 2 or self.user_factors.shape[1] != self.rank:
            raise ValidationError("user_factors must be n_users x rank")
        if self.item_factors.ndim != 2 or self.item_factors.shape[1] != self.rank:
            raise ValidationError("item_factors must be n_items x rank")
        if not np.all(np.isfinite(self.user_factors)) or not np.all(
            np.isfinite(self.item_factors)
        ):
            raise ValidationError("factor matrices must be finite")

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]


def predict_rating(model: FactorModel, user: int, item: int) -> float:
    """Raw model output u_user . i_item, without clamping."""
    if not 0 <= user < model.n_users:
        raise IndexError(f"user index {user} out of range [0, {model.n_users})")
    if not 0 <= item < model.n_items:
        raise IndexError(f"item index {item} out of range [0, {model.n_items})")
    return float(model.user_factors[user] @ model.item_factors[item])


@dataclass(frozen=True)
class MetadataMatrix:
    """Items x binary interpretable features, stored column-sparse.

    ``columns[j]`` is the set of item indices holding feature ``j``;
    ``marginals[j]`` caches the empirical probability |columns[j]| / n_items.
    """

    n_items: int
    feature_names: tuple[str, ...]
    columns: tuple[frozenset[int], ...]
    marginals: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(
            self, "columns", tuple(frozenset(c) for c in self.columns)
        )
        if len(self.feature_names) != len(self.columns):
            raise ValidationError("one column per feature name required")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValidationError("feature names must be unique")
        for name, col in zip(self.feature_names, self.columns):
            for i in col:
                if not 0 <= i < self.n_items:
                    raise ValidationError(
                        f"feature {name!r} references item {i} outside "
                        f"[0, {self.n_items})"
                    )
        if self.n_items > 0:
            marg = np.array(
                [len(c) / self.n_items for c in self.columns], dtype=np.float64
            )
        else:
            marg = np.zeros(len(self.columns))
        marg.setflags(write=False)
        object.__setattr__(self, "marginals", marg)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def supports(self) -> np.ndarray:
        return np.array([len(c) for c in self.columns], dtype=np.int64)

    @cached_property
    def dense(self) -> np.ndarray:
        """Dense items x features 0/1 matrix (built once, cached)."""
        mat = np.zeros((self.n_items, self.n_features), dtype=np.float64)
        for j, col in enumerate(self.columns):
            if col:
                mat[sorted(col), j] = 1.0
        mat.setflags(write=False)
        return mat

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}") from None


def dense_attribute_row(meta: MetadataMatrix, item: int) -> np.ndarray:
    """The item's attribute vector: 1.0 where the item holds a feature."""
    if not 0 <= item < meta.n_items:
        raise IndexError(f"item index {item} out of range [0, {meta.n_items})")
    row = np.zeros(meta.n_features, dtype=np.float64)
    for j, col in enumerate(meta.columns):
        if item in col:
            row[j] = 1.0
    return row
