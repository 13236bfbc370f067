"""Simulated users with known preferences, explanation scoring, and the
hypothesis tests that validate the whole pipeline end to end.

Each simulated user likes or dislikes a small set of metadata features;
their ratings follow a simple additive rule.  After training the
recommender and its shadow, the aggregate influence report for a user is
scored against the user's true feature set and against semi-random and
fully random control sets.  If the pipeline works, true beats semi-random
beats random.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import stdtr

from .datamodel import FactorModel, MetadataMatrix, RatingsMatrix
from .errors import ReclensError, StatsError, ValidationError
from .factorize import AlsConfig, train_als
from .influence import InfluenceQuery, InfluenceReport, ItemSet, explain
from .ingest import FeatureFilterSpec, filter_features
from .regressors import TreeParams
from .shadow import ShadowKind, TreeKind, train_shadow


@dataclass(frozen=True)
class PreferenceProfile:
    """Ground-truth liked and disliked feature index sets for one synthetic
    personality."""

    liked: frozenset[int]
    disliked: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "liked", frozenset(int(f) for f in self.liked))
        object.__setattr__(self, "disliked", frozenset(int(f) for f in self.disliked))
        if self.liked & self.disliked:
            raise ValidationError("a feature cannot be both liked and disliked")
        if not (self.liked | self.disliked):
            raise ValidationError("profile must reference at least one feature")

    @property
    def features(self) -> frozenset[int]:
        return self.liked | self.disliked


@dataclass(frozen=True)
class SimConfig:
    n_profiles: int
    features_per_profile: int
    n_users: int
    ratings_per_user: int
    base_rating: float = 3.0
    delta: float = 1.0
    scale_bounds: tuple[float, float] = (1.0, 5.0)
    feature_pool: FeatureFilterSpec = field(
        default_factory=lambda: FeatureFilterSpec.top_k_entropy(15)
    )
    seed: int = 0

    def __post_init__(self):
        for name in ("n_profiles", "features_per_profile", "n_users",
                     "ratings_per_user"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.n_users <= self.n_profiles:
            raise ValidationError("n_users must exceed n_profiles")
        lo, hi = self.scale_bounds
        if not lo < hi:
            raise ValidationError("scale_bounds must satisfy low < high")


@dataclass(frozen=True)
class ScoreSample:
    condition: str
    user: int
    score: float
    rep: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")


def generate_profiles(
    pool: Sequence[int], cfg: SimConfig, rng: np.random.Generator | None = None
) -> list[PreferenceProfile]:
    """Each profile picks ``features_per_profile`` distinct pool features
    (seeded) and signs each one liked/disliked with probability 1/2."""
    pool = [int(f) for f in pool]
    if len(pool) < cfg.features_per_profile:
        raise ValidationError(
            f"pool of {len(pool)} features cannot support "
            f"{cfg.features_per_profile} features per profile"
        )
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    profiles = []
    for _ in range(cfg.n_profiles):
        chosen = rng.choice(len(pool), size=cfg.features_per_profile, replace=False)
        signs = rng.random(cfg.features_per_profile) < 0.5
        liked = frozenset(pool[i] for i, s in zip(chosen, signs) if s)
        disliked = frozenset(pool[i] for i, s in zip(chosen, signs) if not s)
        profiles.append(PreferenceProfile(liked=liked, disliked=disliked))
    return profiles


def profile_rating(
    profile: PreferenceProfile, item_features: frozenset[int], cfg: SimConfig
) -> float:
    """The generative rule: base + delta per liked match - delta per
    disliked match, clamped to the scale bounds."""
    raw = (
        cfg.base_rating
        + cfg.delta * len(profile.liked & item_features)
        - cfg.delta * len(profile.disliked & item_features)
    )
    lo, hi = cfg.scale_bounds
    return min(max(raw, lo), hi)


def simulate_ratings(
    profiles: Sequence[PreferenceProfile],
    meta: MetadataMatrix,
    cfg: SimConfig,
    rng: np.random.Generator | None = None,
) -> tuple[RatingsMatrix, dict[int, int]]:
    """Assign profiles to users (round-robin first so every profile is
    used, uniform after) and rate a uniform sample of distinct items per
    user."""
    if meta.n_items < 1:
        raise ValidationError("metadata must contain at least one item")
    if cfg.ratings_per_user > meta.n_items:
        raise ValidationError(
            f"ratings_per_user {cfg.ratings_per_user} exceeds the "
            f"{meta.n_items}-item universe"
        )
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    item_features = [
        frozenset(j for j, col in enumerate(meta.columns) if i in col)
        for i in range(meta.n_items)
    ]
    assignment: dict[int, int] = {}
    users, items, values = [], [], []
    for user in range(cfg.n_users):
        if user < len(profiles):
            p_idx = user
        else:
            p_idx = int(rng.integers(0, len(profiles)))
        assignment[user] = p_idx
        rated = rng.choice(meta.n_items, size=cfg.ratings_per_user, replace=False)
        for item in sorted(int(i) for i in rated):
            users.append(user)
            items.append(item)
            values.append(profile_rating(profiles[p_idx], item_features[item], cfg))
    matrix = RatingsMatrix(
        n_users=cfg.n_users,
        n_items=meta.n_items,
        users=np.array(users, dtype=np.int64),
        items=np.array(items, dtype=np.int64),
        ratings=np.array(values, dtype=np.float64),
        scale=cfg.scale_bounds,
    )
    return matrix, assignment


def correctness_score(
    report: InfluenceReport,
    true_features: Iterable[str],
    by_magnitude: bool = True,
) -> float:
    """Mean influence of the true features over the mean of the top-n
    influences (n = number of true features).

    1.0 means the true features are exactly the most influential ones; 0
    means they carry no influence.  ``by_magnitude`` ranks (and values)
    features by |influence|; pass False to rank by signed influence.
    The report must be untruncated (it must cover every feature).
    """
    true_names = sorted(set(true_features))
    if not true_names:
        raise ValidationError("true feature set must be non-empty")
    values = {name: value for name, value in report.influences}
    if len(values) != len(report.influences):
        raise ValidationError("report lists a feature more than once")
    missing = [n for n in true_names if n not in values]
    if missing:
        raise ValidationError(f"true features {missing} absent from the report")
    vals = np.fromiter(values.values(), dtype=np.float64, count=len(values))
    if by_magnitude:
        vals = np.abs(vals)
        chosen = np.array([abs(values[n]) for n in true_names])
    else:
        chosen = np.array([values[n] for n in true_names])
    n = len(true_names)
    top = np.sort(vals)[::-1][:n]
    num = float(np.sort(chosen)[::-1].mean())
    denom = float(top.mean())
    if denom <= 0.0:
        return 0.0
    return max(0.0, min(1.0, num / denom))


def control_profiles(
    profile: PreferenceProfile,
    pool: Sequence[int],
    mode: str = "random",
    keep_fraction: float = 0.5,
    rng: np.random.Generator | None = None,
    seed: int = 0,
) -> PreferenceProfile:
    """Resampled control personalities.

    ``random`` redraws every feature and sign from the pool;
    ``semi_random`` keeps a seeded floor(keep_fraction * n) of the original
    features (at least one) with their signs and replaces the rest with
    features from outside the original profile, so exactly that many
    originals survive.
    """
    if mode not in ("random", "semi_random"):
        raise ValidationError(f"unknown control mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(seed)
    pool = [int(f) for f in pool]
    original = sorted(profile.features)
    n = len(original)
    if mode == "semi_random":
        n_keep = max(1, math.floor(keep_fraction * n)) if n else 0
        if keep_fraction >= 1.0:
            return profile
        kept_idx = rng.choice(n, size=n_keep, replace=False)
        kept = [original[i] for i in sorted(kept_idx)]
        candidates = [f for f in pool if f not in profile.features]
    else:
        kept = []
        candidates = pool
    n_new = n - len(kept)
    if len(candidates) < n_new:
        raise ValidationError("pool too small to resample the profile")
    drawn_idx = rng.choice(len(candidates), size=n_new, replace=False)
    drawn = [candidates[i] for i in sorted(drawn_idx)]
    signs = rng.random(n_new) < 0.5
    liked = {f for f in kept if f in profile.liked}
    disliked = {f for f in kept if f in profile.disliked}
    for f, s in zip(drawn, signs):
        (liked if s else disliked).add(f)
    return PreferenceProfile(liked=frozenset(liked), disliked=frozenset(disliked))


def direct_encode_model(
    profiles: Sequence[PreferenceProfile],
    assignment: Mapping[int, int],
    meta: MetadataMatrix,
    pool: Sequence[int],
    base_rating: float = 3.0,
    delta: float = 1.0,
) -> FactorModel:
    """A factor model that encodes the generative rule by construction.

    One latent factor per pool feature (item side: the 0/1 indicator)
    plus a constant factor carrying the base rating, so predictions equal
    the unclamped simulation rule exactly.
    """
    pool = [int(f) for f in pool]
    rank = len(pool) + 1
    n_users = max(assignment) + 1
    item_factors = np.zeros((meta.n_items, rank))
    for t, f in enumerate(pool):
        for i in meta.columns[f]:
            item_factors[i, t] = 1.0
    item_factors[:, -1] = 1.0
    user_factors = np.zeros((n_users, rank))
    slot = {f: t for t, f in enumerate(pool)}
    for user, p_idx in assignment.items():
        profile = profiles[p_idx]
        for f in profile.liked:
            if f in slot:
                user_factors[user, slot[f]] = delta
        for f in profile.disliked:
            if f in slot:
                user_factors[user, slot[f]] = -delta
        user_factors[user, -1] = base_rating
    return FactorModel(
        rank=rank, lam=0.0, user_factors=user_factors, item_factors=item_factors
    )


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value, with
    Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise StatsError("welch_t needs at least 2 values per sample")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise StatsError("welch_t needs nonzero variance in at least one sample")
    sa = va / len(a)
    sb = vb / len(b)
    t = (a.mean() - b.mean()) / math.sqrt(sa + sb)
    # scale-invariant Welch-Satterthwaite form: immune to underflow of
    # (sa + sb)^2 when the variances are extremely small
    ra = sa / (sa + sb)
    rb = sb / (sa + sb)
    df = 1.0 / (ra**2 / (len(a) - 1) + rb**2 / (len(b) - 1))
    p = 2.0 * float(stdtr(df, -abs(t)))
    return float(t), p


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Standardized mean difference with the (n-1)-weighted pooled
    standard deviation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise StatsError("cohens_d needs at least 2 values per sample")
    pooled_var = (
        (len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)
    ) / (len(a) + len(b) - 2)
    if pooled_var <= 0.0:
        raise StatsError("cohens_d is undefined for zero pooled deviation")
    return float((a.mean() - b.mean()) / math.sqrt(pooled_var))


def random_metadata(
    n_items: int,
    n_features: int,
    rng: np.random.Generator | int = 0,
    marginal_range: tuple[float, float] = (0.05, 0.95),
    prefix: str = "f",
) -> MetadataMatrix:
    """A synthetic item universe: independent binary columns whose
    marginals are drawn uniformly from ``marginal_range``."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    lo, hi = marginal_range
    width = len(str(n_features - 1)) if n_features > 1 else 1
    names, columns = [], []
    for j in range(n_features):
        p = lo + rng.random() * (hi - lo)
        held = rng.random(n_items) < p
        names.append(f"{prefix}{j:0{width}d}")
        columns.append(frozenset(np.flatnonzero(held).tolist()))
    return MetadataMatrix(
        n_items=n_items, feature_names=tuple(names), columns=tuple(columns)
    )


CONDITIONS = ("true", "semi_random", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig
    als: AlsConfig
    shadow_kind: ShadowKind = field(
        default_factory=lambda: TreeKind(TreeParams(max_depth=5, bins=32))
    )
    n_reps: int = 20
    users_per_rep: int = 1
    n_items: int = 200
    n_meta_features: int = 200
    keep_fraction: float = 0.5
    direct_encode: bool = False
    score_by_magnitude: bool = True
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_reps < 1 or self.users_per_rep < 1:
            raise ValidationError("n_reps and users_per_rep must be >= 1")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")


@dataclass(frozen=True)
class HypothesisResult:
    samples: tuple[ScoreSample, ...]
    means: dict[str, float]
    tests: dict[str, dict[str, float]]

    def condition_scores(self, condition: str) -> list[float]:
        return [s.score for s in self.samples if s.condition == condition]

    def to_dict(self) -> dict:
        return {
            "samples": [
                {
                    "condition": s.condition,
                    "rep": s.rep,
                    "user": s.user,
                    "score": s.score,
                }
                for s in self.samples
            ],
            "means": self.means,
            "tests": self.tests,
        }


def _run_repetition(cfg: ExperimentConfig, rep: int, meta: MetadataMatrix | None):
    seeds = np.random.SeedSequence(entropy=(cfg.seed, rep)).spawn(6)
    rngs = [np.random.default_rng(s) for s in seeds]
    if meta is None:
        meta = random_metadata(cfg.n_items, cfg.n_meta_features, rng=rngs[0])
    pool_meta = filter_features(meta, cfg.sim.feature_pool)
    pool = [meta.feature_index(name) for name in pool_meta.feature_names]
    profiles = generate_profiles(pool, cfg.sim, rng=rngs[1])
    ratings, assignment = simulate_ratings(profiles, meta, cfg.sim, rng=rngs[2])
    if cfg.direct_encode:
        model = direct_encode_model(
            profiles, assignment, meta, pool,
            base_rating=cfg.sim.base_rating, delta=cfg.sim.delta,
        )
    else:
        als_seed = int(seeds[3].generate_state(1)[0])
        model = train_als(ratings, replace(cfg.als, seed=als_seed))
    split_seed = int(seeds[4].generate_state(1)[0])
    shadow = train_shadow(model, meta, cfg.shadow_kind, split=(1.0, split_seed))
    control_pool = list(range(meta.n_features))
    eval_rng = rngs[5]
    chosen_users = eval_rng.choice(
        cfg.sim.n_users, size=min(cfg.users_per_rep, cfg.sim.n_users), replace=False
    )
    rated_by_user: dict[int, list[int]] = {}
    for u, i in zip(ratings.users, ratings.items):
        rated_by_user.setdefault(int(u), []).append(int(i))
    samples = []
    for user in sorted(int(u) for u in chosen_users):
        profile = profiles[assignment[user]]
        query = InfluenceQuery(
            user=user, scope=ItemSet(tuple(sorted(rated_by_user[user])))
        )
        report = explain(shadow, meta, query, top_k=meta.n_features)
        semi = control_profiles(
            profile, control_pool, mode="semi_random",
            keep_fraction=cfg.keep_fraction, rng=eval_rng,
        )
        rand = control_profiles(profile, control_pool, mode="random", rng=eval_rng)
        for condition, feats in (
            ("true", profile.features),
            ("semi_random", semi.features),
            ("random", rand.features),
        ):
            names = [meta.feature_names[f] for f in feats]
            score = correctness_score(
                report, names, by_magnitude=cfg.score_by_magnitude
            )
            samples.append(
                ScoreSample(condition=condition, user=user, score=score, rep=rep)
            )
    return samples


def run_hypothesis_experiment(
    cfg: ExperimentConfig, meta: MetadataMatrix | None = None
) -> HypothesisResult:
    """Full pipeline per repetition: simulate, factorize, shadow, explain,
    score against true / semi-random / random feature sets, then Welch
    tests with effect sizes on the condition pairs.

    Repetitions run independently (optionally in a thread pool) and are
    folded in repetition order, so results are reproducible for a fixed
    seed regardless of the thread count.
    """
    def one(rep: int):
        try:
            return _run_repetition(cfg, rep, meta)
        except ReclensError as exc:
            raise ReclensError(f"repetition {rep}: {exc}") from exc

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            per_rep = list(pool.map(one, range(cfg.n_reps)))
    else:
        per_rep = [one(rep) for rep in range(cfg.n_reps)]
    samples = tuple(s for rep_samples in per_rep for s in rep_samples)
    scores = {
        c: [s.score for s in samples if s.condition == c] for c in CONDITIONS
    }
    means = {c: float(np.mean(scores[c])) for c in CONDITIONS}
    tests = {}
    for hi, lo in (
        ("true", "semi_random"),
        ("semi_random", "random"),
        ("true", "random"),
    ):
        key = f"{hi}_vs_{lo}"
        try:
            t, p = welch_t(scores[hi], scores[lo])
            d = cohens_d(scores[hi], scores[lo])
            tests[key] = {"t": t, "p": p, "effect_size": d}
        except StatsError as exc:
            tests[key] = {"error": str(exc)}
    return HypothesisResult(samples=samples, means=means, tests=tests)
