"""Quantitative input influence of metadata features on shadow ratings.

The influence of a feature is the expected drop in the model's output when
that feature alone is resampled from its marginal distribution.  For binary
features the expectation has a closed form (``qii_exact_binary``); the
Monte-Carlo estimator exists for numeric metadata and for cross-checking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datamodel import FactorModel, MetadataMatrix, predict_rating
from .errors import EstimatorMismatchError, ValidationError
from .shadow import ShadowModel

RatingFn = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class SingleItem:
    item: int


@dataclass(frozen=True)
class ItemSet:
    items: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))
        if not self.items:
            raise ValidationError("item_set scope requires at least one item")


@dataclass(frozen=True)
class ExactBinary:
    pass


@dataclass(frozen=True)
class MonteCarlo:
    samples: int
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValidationError("samples must be >= 1")


@dataclass(frozen=True)
class InfluenceQuery:
    user: int
    scope: SingleItem | ItemSet
    estimator: ExactBinary | MonteCarlo = field(default_factory=ExactBinary)


@dataclass(frozen=True)
class InfluenceReport:
    """Every feature's influence for one query, sorted by descending
    magnitude (feature-name tie-break), truncated to the requested length.
    """

    query: InfluenceQuery
    influences: tuple[tuple[str, float], ...]
    shadow_rating: float
    baseline_rating: float | None = None
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        scope = self.query.scope
        est = self.query.estimator
        return {
            "user": self.query.user,
            "scope": (
                {"single_item": scope.item}
                if isinstance(scope, SingleItem)
                else {"item_set": list(scope.items)}
            ),
            "estimator": (
                "exact_binary"
                if isinstance(est, ExactBinary)
                else {"monte_carlo": {"samples": est.samples, "seed": est.seed}}
            ),
            "influences": [[name, value] for name, value in self.influences],
            "shadow_rating": self.shadow_rating,
            "baseline_rating": self.baseline_rating,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def qii_exact_binary(
    rating_fn: RatingFn, x: np.ndarray, feature: int, marginal: float
) -> float:
    """Exact influence for a Bernoulli-distributed binary feature:
    m(x) - [p * m(x|f=1) + (1-p) * m(x|f=0)]."""
    x = np.asarray(x, dtype=np.float64)
    if x[feature] not in (0.0, 1.0):
        raise EstimatorMismatchError(
            f"feature {feature} has non-binary value {x[feature]}; "
            "use the monte_carlo estimator"
        )
    if not 0.0 <= marginal <= 1.0:
        raise ValidationError(f"marginal {marginal} outside [0, 1]")
    x1 = x.copy()
    x1[feature] = 1.0
    x0 = x.copy()
    x0[feature] = 0.0
    return float(
        rating_fn(x) - (marginal * rating_fn(x1) + (1.0 - marginal) * rating_fn(x0))
    )


def qii_monte_carlo(
    rating_fn: RatingFn,
    x: np.ndarray,
    feature: int,
    column_values: Sequence[float],
    samples: int,
    seed: int = 0,
) -> float:
    """Average of m(x) - m(x|f=v) over seeded uniform draws of v from the
    feature's empirical value pool.

    Draws are grouped by value before evaluation, so the result equals the
    naive per-draw average while calling ``rating_fn`` once per distinct
    drawn value.
    """
    column_values = np.asarray(column_values, dtype=np.float64)
    if len(column_values) == 0:
        raise ValidationError("column_values must be non-empty")
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    draws = column_values[rng.integers(0, len(column_values), size=samples)]
    base = rating_fn(x)
    values, counts = np.unique(draws, return_counts=True)
    total = 0.0
    for v, c in zip(values, counts):
        xv = x.copy()
        xv[feature] = v
        total += c * (base - rating_fn(xv))
    return float(total / samples)


def _exact_influences(shadow, meta, user, rows):
    """Vectorized exact-binary influence of every feature, averaged over
    the given metadata rows (one row = single-item scope)."""
    X = meta.dense[rows]
    u = shadow.user_factors[user]
    base = shadow.predicted_factors_batch(X) @ u
    out = np.empty(meta.n_features)
    for f in range(meta.n_features):
        p = meta.marginals[f]
        x1 = X.copy()
        x1[:, f] = 1.0
        x0 = X.copy()
        x0[:, f] = 0.0
        r1 = shadow.predicted_factors_batch(x1) @ u
        r0 = shadow.predicted_factors_batch(x0) @ u
        out[f] = float(np.mean(base - (p * r1 + (1.0 - p) * r0)))
    return out, float(base.mean())


def _monte_carlo_influences(shadow, meta, user, rows, estimator):
    out = np.zeros(meta.n_features)
    ratings = []
    for row in rows:
        x = meta.dense[row]
        fn = lambda a: shadow.predict(user, a)
        ratings.append(fn(x))
        for f in range(meta.n_features):
            out[f] += qii_monte_carlo(
                fn,
                x,
                f,
                meta.dense[:, f],
                estimator.samples,
                seed=np.random.SeedSequence(
                    entropy=(estimator.seed, int(row), f)
                ).generate_state(1)[0],
            )
    out /= len(rows)
    return out, float(np.mean(ratings))


def explain(
    shadow: ShadowModel,
    meta: MetadataMatrix,
    query: InfluenceQuery,
    top_k: int = 10,
    baseline: FactorModel | None = None,
) -> InfluenceReport:
    """Rank every feature by its influence on the query's shadow rating.

    single_item answers "why this recommendation"; item_set averages the
    per-item influences, answering "what does the model think this user
    likes".  Features sort by descending |influence| with a name tie-break
    and the list is cut to ``top_k`` only after the full sort.
    """
    if top_k < 1:
        raise ValidationError("top_k must be >= 1")
    if tuple(meta.feature_names) != tuple(shadow.feature_names):
        raise ValidationError(
            "metadata feature names do not match the shadow model's features"
        )
    if not 0 <= query.user < shadow.n_users:
        raise IndexError(f"user index {query.user} out of range")
    if isinstance(query.scope, SingleItem):
        items = [query.scope.item]
    else:
        items = list(query.scope.items)
    rows = np.array([shadow.row_of_item(i) for i in items], dtype=np.int64)
    warnings = []
    eval_set = set(int(i) for i in shadow.eval_items)
    outside = [i for i in items if int(i) not in eval_set]
    if outside:
        warnings.append(
            f"{len(outside)} item(s) outside the evaluation split; "
            "the explanation may be unreliable"
        )
    if isinstance(query.estimator, ExactBinary):
        values, shadow_rating = _exact_influences(shadow, meta, query.user, rows)
    else:
        values, shadow_rating = _monte_carlo_influences(
            shadow, meta, query.user, rows, query.estimator
        )
    order = sorted(
        range(meta.n_features),
        key=lambda f: (-abs(values[f]), meta.feature_names[f]),
    )
    ranked = tuple(
        (meta.feature_names[f], float(values[f])) for f in order[:top_k]
    )
    baseline_rating = None
    if baseline is not None and isinstance(query.scope, SingleItem):
        baseline_rating = predict_rating(baseline, query.user, query.scope.item)
    return InfluenceReport(
        query=query,
        influences=ranked,
        shadow_rating=shadow_rating,
        baseline_rating=baseline_rating,
        warnings=tuple(warnings),
    )


def influence_report_svg(report: InfluenceReport, top: int = 10) -> str:
    """Horizontal bar chart of the report: features on the y axis,
    influence in stars on the x axis."""
    entries = list(report.influences[:top])
    if not entries:
        raise ValidationError("cannot chart an empty report")
    width, row_h, label_w, pad = 640, 24, 240, 8
    height = row_h * len(entries) + 2 * pad
    plot_w = width - label_w - 2 * pad
    biggest = max(abs(v) for _, v in entries) or 1.0
    mid = label_w + plot_w / 2
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="sans-serif" font-size="12">',
        f'<line x1="{mid}" y1="{pad}" x2="{mid}" y2="{height - pad}" '
        'stroke="#888"/>',
    ]
    for r, (name, value) in enumerate(entries):
        y = pad + r * row_h
        bar = abs(value) / biggest * (plot_w / 2)
        x = mid if value >= 0 else mid - bar
        color = "#2c7fb8" if value >= 0 else "#d95f0e"
        parts.append(
            f'<text x="{label_w - 4}" y="{y + row_h / 2 + 4}" '
            f'text-anchor="end">{_svg_escape(name)}</text>'
        )
        parts.append(
            f'<rect class="bar" x="{x:.2f}" y="{y + 4}" width="{bar:.2f}" '
            f'height="{row_h - 8}" fill="{color}"/>'
        )
        side = x + bar + 4 if value >= 0 else x - 4
        anchor = "start" if value >= 0 else "end"
        parts.append(
            f'<text x="{side:.2f}" y="{y + row_h / 2 + 4}" '
            f'text-anchor="{anchor}">{value:+.3f}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def _svg_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(report: InfluenceReport, path: str | Path, top: int = 10) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(influence_report_svg(report, top=top))
        fh.write("\n")
