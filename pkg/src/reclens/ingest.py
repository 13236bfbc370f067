"""Loading and preparing input data.

Ratings come from a comma-delimited text file (``userId,movieId,rating``
with an optional trailing timestamp); item metadata comes from a
line-delimited file of JSON records.  Nominal attributes are one-hot
encoded, features are filtered by entropy or support, and items with too
little metadata are pruned from the explanation universe.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datamodel import MetadataMatrix, RatingsMatrix
from .errors import InsufficientDataError, ParseError, ValidationError


@dataclass(frozen=True)
class RawItemRecord:
    """One item's raw metadata: attribute name -> set of string values."""

    item_id: str
    attributes: Mapping[str, frozenset[str]]

    def __post_init__(self):
        if not self.item_id:
            raise ValidationError("item_id must be non-empty")
        attrs = {}
        for name, values in self.attributes.items():
            if not name:
                raise ValidationError(f"empty attribute name on item {self.item_id!r}")
            attrs[name] = frozenset(str(v) for v in values)
        object.__setattr__(self, "attributes", attrs)


_FILTER_KINDS = ("entropy_threshold", "top_k_entropy", "min_support")


@dataclass(frozen=True)
class FeatureFilterSpec:
    """Which features survive: by entropy threshold, by top-k entropy, or by
    minimum support count."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in _FILTER_KINDS:
            raise ValidationError(f"unknown filter kind {self.kind!r}")
        if self.kind == "entropy_threshold":
            if self.value < 0:
                raise ValidationError("entropy threshold must be >= 0")
        else:
            if int(self.value) != self.value or self.value < 1:
                raise ValidationError(f"{self.kind} count must be an integer >= 1")

    @classmethod
    def entropy_threshold(cls, bits: float) -> "FeatureFilterSpec":
        return cls("entropy_threshold", float(bits))

    @classmethod
    def top_k_entropy(cls, k: int) -> "FeatureFilterSpec":
        return cls("top_k_entropy", int(k))

    @classmethod
    def min_support(cls, count: int) -> "FeatureFilterSpec":
        return cls("min_support", int(count))


def load_ratings(
    path: str | Path,
    scale: tuple[float, float] = (1.0, 5.0),
) -> RatingsMatrix:
    """Parse a ratings file into a dense-indexed matrix.

    The first line must be a header starting with ``userId``.  Duplicate
    (user, item) rows keep the last occurrence.  Users and items are
    re-indexed in order of first appearance; the external ids are kept on
    the returned matrix.
    """
    path = Path(path)
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    cells: dict[tuple[int, int], float] = {}
    lo, hi = scale
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.lower().lstrip("\ufeff").startswith("userid"):
            raise ParseError(f"{path}:1: expected a header line starting with userId")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) not in (3, 4):
                raise ParseError(
                    f"{path}:{lineno}: expected 3 or 4 comma-separated fields, "
                    f"got {len(parts)}"
                )
            uid, iid, rating_text = parts[0].strip(), parts[1].strip(), parts[2].strip()
            if not uid or not iid:
                raise ParseError(f"{path}:{lineno}: empty user or item id")
            try:
                rating = float(rating_text)
            except ValueError:
                raise ParseError(
                    f"{path}:{lineno}: rating {rating_text!r} is not a number"
                ) from None
            if not lo <= rating <= hi:
                raise ValidationError(
                    f"{path}:{lineno}: rating {rating} outside scale [{lo}, {hi}]"
                )
            u = user_index.setdefault(uid, len(user_index))
            i = item_index.setdefault(iid, len(item_index))
            cells[(u, i)] = rating
    users = np.fromiter((u for u, _ in cells), dtype=np.int64, count=len(cells))
    items = np.fromiter((i for _, i in cells), dtype=np.int64, count=len(cells))
    ratings = np.fromiter(cells.values(), dtype=np.float64, count=len(cells))
    return RatingsMatrix(
        n_users=len(user_index),
        n_items=len(item_index),
        users=users,
        items=items,
        ratings=ratings,
        scale=scale,
        user_ids=tuple(user_index),
        item_ids=tuple(item_index),
    )


def load_metadata(path: str | Path, source: str | None = None) -> list[RawItemRecord]:
    """Read line-delimited JSON item records.

    When ``source`` is given, attribute names are prefixed ``source:name``
    so that same-named attributes from different files stay distinct.
    """
    path = Path(path)
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "item_id" not in obj:
                raise ParseError(f"{path}:{lineno}: record must have an item_id field")
            raw_attrs = obj.get("attributes", {})
            if not isinstance(raw_attrs, dict):
                raise ParseError(f"{path}:{lineno}: attributes must be an object")
            attrs = {}
            for name, values in raw_attrs.items():
                if isinstance(values, (str, int, float, bool)):
                    values = [values]
                key = f"{source}:{name}" if source else str(name)
                attrs[key] = frozenset(str(v) for v in values)
            try:
                records.append(RawItemRecord(str(obj["item_id"]), attrs))
            except ValidationError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return records


def encode_one_hot(
    records: Sequence[RawItemRecord],
    item_index: Mapping[str, int] | None = None,
    n_items: int | None = None,
) -> MetadataMatrix:
    """One binary column per observed (attribute, value) pair.

    Columns are named ``attribute=value`` and ordered by sorted name.  By
    default items are indexed in order of first appearance; pass
    ``item_index`` (and ``n_items``) to align with an existing indexing,
    e.g. the one produced by :func:`load_ratings`.  Records whose item is
    missing from a supplied index are skipped (they cannot be rated).
    """
    if not records:
        raise ValidationError("cannot encode an empty record list")
    if item_index is None:
        item_index = {}
        for rec in records:
            item_index.setdefault(rec.item_id, len(item_index))
        total = len(item_index)
    elif n_items is not None:
        total = n_items
    elif item_index:
        total = max(item_index.values()) + 1
    else:
        raise ValidationError("item_index is empty and n_items was not given")
    columns: dict[str, set[int]] = {}
    for rec in records:
        idx = item_index.get(rec.item_id)
        if idx is None:
            continue
        for attr, values in rec.attributes.items():
            for value in values:
                columns.setdefault(f"{attr}={value}", set()).add(idx)
    names = tuple(sorted(columns))
    return MetadataMatrix(
        n_items=total,
        feature_names=names,
        columns=tuple(frozenset(columns[n]) for n in names),
    )


def feature_entropy(p: float) -> float:
    """Binary Shannon entropy of a marginal probability, in bits."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"marginal probability {p} outside [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def _entropies(meta: MetadataMatrix) -> np.ndarray:
    return np.array([feature_entropy(p) for p in meta.marginals])


def filter_features(meta: MetadataMatrix, spec: FeatureFilterSpec) -> MetadataMatrix:
    """Keep exactly the features passing the filter spec.

    ``top_k_entropy`` breaks entropy ties by ascending feature name; a k
    larger than the feature count keeps everything and warns.
    """
    if spec.kind == "entropy_threshold":
        ent = _entropies(meta)
        keep = [j for j in range(meta.n_features) if ent[j] >= spec.value]
    elif spec.kind == "min_support":
        supports = meta.supports()
        keep = [j for j in range(meta.n_features) if supports[j] >= spec.value]
    else:  # top_k_entropy
        k = int(spec.value)
        if k >= meta.n_features:
            if k > meta.n_features:
                warnings.warn(
                    f"top_k_entropy({k}) exceeds feature count "
                    f"{meta.n_features}; keeping all features"
                )
            keep = list(range(meta.n_features))
        else:
            ent = _entropies(meta)
            ranked = sorted(
                range(meta.n_features), key=lambda j: (-ent[j], meta.feature_names[j])
            )
            keep = sorted(ranked[:k])
    return MetadataMatrix(
        n_items=meta.n_items,
        feature_names=tuple(meta.feature_names[j] for j in keep),
        columns=tuple(meta.columns[j] for j in keep),
    )


def prune_items(
    meta: MetadataMatrix, min_features: int = 1
) -> tuple[MetadataMatrix, np.ndarray]:
    """Drop items holding fewer than ``min_features`` surviving features.

    Returns the compacted matrix (marginals now reflect the pruned
    population) plus a boolean mask over the original item indexing, so
    callers can map compacted rows back to the original items.
    """
    if min_features < 1:
        raise ValidationError("min_features must be >= 1")
    counts = np.zeros(meta.n_items, dtype=np.int64)
    for col in meta.columns:
        for i in col:
            counts[i] += 1
    mask = counts >= min_features
    if not mask.any():
        raise InsufficientDataError(
            "every item was pruned; no metadata-rich items remain"
        )
    new_of_old = {old: new for new, old in enumerate(np.flatnonzero(mask))}
    new_columns = tuple(
        frozenset(new_of_old[i] for i in col if mask[i]) for col in meta.columns
    )
    pruned = MetadataMatrix(
        n_items=int(mask.sum()),
        feature_names=meta.feature_names,
        columns=new_columns,
    )
    return pruned, mask


def select_features(meta: MetadataMatrix, names: Sequence[str]) -> MetadataMatrix:
    """Reorder/restrict the matrix to exactly the named features."""
    index = {n: j for j, n in enumerate(meta.feature_names)}
    missing = [n for n in names if n not in index]
    if missing:
        raise ValidationError(f"features {missing} not present in the metadata")
    return MetadataMatrix(
        n_items=meta.n_items,
        feature_names=tuple(names),
        columns=tuple(meta.columns[index[n]] for n in names),
    )


def restrict_items(meta: MetadataMatrix, item_indices: Sequence[int]) -> MetadataMatrix:
    """Compact the matrix so row j corresponds to original item
    item_indices[j]; marginals then reflect the restricted population."""
    item_indices = [int(i) for i in item_indices]
    for i in item_indices:
        if not 0 <= i < meta.n_items:
            raise ValidationError(f"item index {i} outside [0, {meta.n_items})")
    new_of_old = {old: new for new, old in enumerate(item_indices)}
    columns = tuple(
        frozenset(new_of_old[i] for i in col if i in new_of_old)
        for col in meta.columns
    )
    return MetadataMatrix(
        n_items=len(item_indices),
        feature_names=meta.feature_names,
        columns=columns,
    )
