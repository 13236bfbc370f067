"""Command-line entry point: train, shadow, explain, sweep, synth.

Every command is deterministic given its flags and seeds; data goes to
files and standard output, diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datamodel import FactorModel, MetadataMatrix
from .errors import ReclensError, ValidationError
from .factorize import AlsConfig, load_model, save_model, train_als
from .influence import InfluenceQuery, ItemSet, SingleItem, explain, write_svg
from .ingest import (
    FeatureFilterSpec,
    encode_one_hot,
    filter_features,
    load_metadata,
    load_ratings,
    prune_items,
    restrict_items,
    select_features,
)
from .regressors import TreeParams
from .shadow import (
    LinearKind,
    TreeKind,
    load_shadow,
    measure_agreement,
    save_shadow,
    train_shadow,
)
from .synth import ExperimentConfig, SimConfig, run_hypothesis_experiment


def _eprint(*args):
    print(*args, file=sys.stderr)


def _emit(record: dict):
    print(json.dumps(record, sort_keys=True))


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _write_jsonl(rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def _table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [
        max(len(h), *(len(r[c]) for r in rows)) if rows else len(h)
        for c, h in enumerate(headers)
    ]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([fmt(headers)] + [fmt(r) for r in rows])


def _lookup_id(kind: str, wanted: str, ids: tuple[str, ...] | None) -> int:
    """External id -> dense index, with nearest-id suggestions on miss."""
    if ids is None:
        try:
            return int(wanted)
        except ValueError:
            raise ValidationError(
                f"model carries no {kind} ids; pass a numeric index"
            ) from None
    try:
        return ids.index(wanted)
    except ValueError:
        near = difflib.get_close_matches(wanted, ids, n=5)
        hint = f"; nearest: {', '.join(near)}" if near else ""
        raise ValidationError(f"unknown {kind} id {wanted!r}{hint}") from None


def _prepare_metadata(model: FactorModel, args):
    """Load, encode, filter and prune the metadata against the model's item
    indexing; returns (meta, item_indices)."""
    if model.item_ids is None:
        raise ValidationError("model file carries no item ids")
    records = load_metadata(args.metadata)
    item_index = {iid: i for i, iid in enumerate(model.item_ids)}
    meta = encode_one_hot(records, item_index=item_index, n_items=model.n_items)
    meta = filter_features(
        meta, FeatureFilterSpec.entropy_threshold(args.entropy_threshold)
    )
    meta, mask = prune_items(meta, min_features=args.min_features)
    return meta, np.flatnonzero(mask)


def _shadow_kind(args):
    if args.kind == "linear":
        if args.depth is not None or args.bins is not None:
            _eprint("warning: --depth/--bins are tree-only flags; ignored for linear")
        return LinearKind(ridge=args.ridge)
    return TreeKind(
        TreeParams(
            max_depth=args.depth if args.depth is not None else 5,
            bins=args.bins if args.bins is not None else 32,
            min_leaf=args.min_leaf,
        )
    )


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    cfg = AlsConfig(
        rank=args.rank,
        lam=args.lam,
        max_iterations=args.iters,
        convergence_tol=args.tol,
        seed=args.seed,
    )
    ratings = load_ratings(args.ratings, scale=(args.scale_min, args.scale_max))
    last = {}

    def progress(iteration, rmse):
        last["iterations"] = iteration + 1
        last["rmse"] = rmse
        _eprint(f"iteration {iteration + 1}: training rmse {rmse:.6f}")

    model = train_als(ratings, cfg, on_iteration=progress)
    save_model(model, args.out)
    _emit(
        {
            "command": "train",
            "final_training_rmse": last["rmse"],
            "iterations": last["iterations"],
            "model": str(args.out),
        }
    )
    return 0


# --------------------------------------------------------------- shadow


def cmd_shadow(args) -> int:
    model = load_model(args.model)
    meta, item_indices = _prepare_metadata(model, args)
    kind = _shadow_kind(args)
    shadow = train_shadow(
        model, meta, kind, split=(args.split, args.seed), item_indices=item_indices
    )
    report = measure_agreement(
        shadow, model, meta, item_set=args.measure, seed=args.seed
    )
    save_shadow(shadow, args.out)
    label = args.measure
    if args.measure == "eval" and shadow.eval_is_train:
        label = "train-set"
    doc = {"command": "shadow", "measured_on": label, **report.to_dict()}
    _write_json(doc, str(args.out) + ".report.json")
    _emit(doc)
    return 0


# -------------------------------------------------------------- explain


def cmd_explain(args) -> int:
    shadow = load_shadow(args.shadow)
    records = load_metadata(args.metadata)
    if shadow.item_ids is None:
        raise ValidationError("shadow file carries no item ids")
    item_index = {iid: i for i, iid in enumerate(shadow.item_ids)}
    full = encode_one_hot(
        records, item_index=item_index, n_items=len(shadow.item_ids)
    )
    meta = restrict_items(
        select_features(full, shadow.feature_names), shadow.item_indices
    )
    user = _lookup_id("user", args.user, shadow.user_ids)
    if args.user_aggregate:
        scope = ItemSet(tuple(int(i) for i in shadow.item_indices))
    else:
        scope = SingleItem(_lookup_id("item", args.item, shadow.item_ids))
    query = InfluenceQuery(user=user, scope=scope)
    baseline = load_model(args.model) if args.model else None
    report = explain(shadow, meta, query, top_k=args.top_k, baseline=baseline)
    for w in report.warnings:
        _eprint(f"warning: {w}")
    print(report.to_json())
    if args.svg:
        write_svg(report, args.svg, top=min(args.top_k, 10))
    return 0


# ---------------------------------------------------------------- sweep


@dataclass(frozen=True)
class SweepGrid:
    """Axes of the parameter sweep; depth/bins apply to tree cells only."""

    ranks: tuple[int, ...] = (12, 20, 50)
    lambdas: tuple[float, ...] = (0.1,)
    kinds: tuple[str, ...] = ("linear", "tree")
    depths: tuple[int, ...] = (3, 5)
    bins: tuple[int, ...] = (8, 32)

    def __post_init__(self):
        for name in ("ranks", "lambdas", "kinds", "depths", "bins"):
            seq = tuple(getattr(self, name))
            if not seq:
                raise ValidationError(f"sweep grid axis {name} must be non-empty")
            object.__setattr__(self, name, seq)
        for kind in self.kinds:
            if kind not in ("linear", "tree"):
                raise ValidationError(f"unknown shadow kind {kind!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepGrid":
        kwargs = {}
        for key in ("ranks", "lambdas", "kinds", "depths", "bins"):
            if key in doc:
                kwargs[key] = tuple(doc[key])
        return cls(**kwargs)

    def cells(self, ridge: float) -> list[dict]:
        out = []
        for rank in self.ranks:
            for lam in self.lambdas:
                for kind in self.kinds:
                    if kind == "linear":
                        out.append(
                            {"rank": rank, "lambda": lam, "kind": "linear",
                             "ridge": ridge}
                        )
                    else:
                        for depth in self.depths:
                            for bins in self.bins:
                                out.append(
                                    {"rank": rank, "lambda": lam, "kind": "tree",
                                     "depth": depth, "bins": bins}
                                )
        return out


def run_sweep(
    ratings,
    meta: MetadataMatrix,
    item_indices,
    grid: SweepGrid,
    iters: int = 20,
    split: float = 0.8,
    measure: str = "eval",
    ridge: float = 0.1,
    seed: int = 0,
    threads: int = 1,
) -> list[dict]:
    """Train one baseline per (rank, lambda) and one shadow per grid cell;
    report latent and observational agreement for each cell.

    Per-cell failures are recorded in the row and the sweep continues.
    Rows come back in grid order regardless of the worker count.
    """
    cells = grid.cells(ridge)
    base_keys = sorted({(c["rank"], c["lambda"]) for c in cells})

    def train_base(key):
        rank, lam = key
        als_seed = int(
            np.random.SeedSequence(entropy=(seed, rank, hash(lam) & 0xFFFF)).
            generate_state(1)[0]
        )
        return train_als(
            ratings, AlsConfig(rank=rank, lam=lam, max_iterations=iters,
                               seed=als_seed)
        )

    def run_cell(cell):
        try:
            model = baselines[(cell["rank"], cell["lambda"])]
            if isinstance(model, Exception):
                raise model
            if cell["kind"] == "linear":
                kind = LinearKind(ridge=cell["ridge"])
            else:
                kind = TreeKind(TreeParams(cell["depth"], cell["bins"]))
            shadow = train_shadow(
                model, meta, kind, split=(split, seed), item_indices=item_indices
            )
            report = measure_agreement(shadow, model, meta, item_set=measure,
                                       seed=seed)
            return {
                "cell": cell,
                "mean_latent_mae": report.mean_latent_mae,
                "observational_mae": report.observational_mae,
                "error": None,
            }
        except (ReclensError, np.linalg.LinAlgError) as exc:
            return {"cell": cell, "mean_latent_mae": None,
                    "observational_mae": None, "error": str(exc)}

    def safe_base(key):
        try:
            return train_base(key)
        except ReclensError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trained = list(pool.map(safe_base, base_keys))
            baselines = dict(zip(base_keys, trained))
            rows = list(pool.map(run_cell, cells))
    else:
        baselines = {key: safe_base(key) for key in base_keys}
        rows = [run_cell(cell) for cell in cells]
    return rows


def _cell_label(cell: dict) -> str:
    if cell["kind"] == "linear":
        return f"rank {cell['rank']}, linear, lambda {cell['lambda']}"
    return (
        f"rank {cell['rank']}, tree, lambda {cell['lambda']}, "
        f"depth {cell['depth']}, bins {cell['bins']}"
    )


def cmd_sweep(args) -> int:
    ratings = load_ratings(args.ratings, scale=(args.scale_min, args.scale_max))
    records = load_metadata(args.metadata)
    item_index = {iid: i for i, iid in enumerate(ratings.item_ids)}
    meta = encode_one_hot(records, item_index=item_index, n_items=ratings.n_items)
    meta = filter_features(
        meta, FeatureFilterSpec.entropy_threshold(args.entropy_threshold)
    )
    meta, mask = prune_items(meta, min_features=args.min_features)
    if args.grid:
        with open(args.grid, "r", encoding="utf-8") as fh:
            grid = SweepGrid.from_dict(json.load(fh))
    else:
        grid = SweepGrid()
    rows = run_sweep(
        ratings,
        meta,
        np.flatnonzero(mask),
        grid,
        iters=args.iters,
        split=args.split,
        measure=args.measure,
        ridge=args.ridge,
        seed=args.seed,
        threads=args.threads,
    )
    if args.out:
        _write_jsonl(rows, args.out)
    table_rows = [
        [
            _cell_label(r["cell"]),
            "-" if r["mean_latent_mae"] is None else f"{r['mean_latent_mae']:.4f}",
            "-" if r["observational_mae"] is None
            else f"{r['observational_mae']:.4f}",
            r["error"] or "",
        ]
        for r in rows
    ]
    print(_table(["cell", "latent_mae", "observational_mae", "error"], table_rows))
    return 0


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = experiment_config_from_dict(
        doc,
        threads=args.threads,
        seed=args.seed,
        direct_encode=args.direct_encode,
    )
    result = run_hypothesis_experiment(cfg)
    if args.out:
        _write_json(
            {"config": doc, "direct_encode": cfg.direct_encode, **result.to_dict()},
            args.out,
        )
    cond_rows = [
        [c, f"{result.means[c]:.4f}", str(len(result.condition_scores(c)))]
        for c in ("true", "semi_random", "random")
    ]
    print(_table(["condition", "mean_score", "n"], cond_rows))
    test_rows = []
    for key, vals in result.tests.items():
        if "error" in vals:
            test_rows.append([key, "-", "-", vals["error"]])
        else:
            test_rows.append(
                [key, f"{vals['t']:.3f}", f"{vals['p']:.3g}",
                 f"{vals['effect_size']:.2f}"]
            )
    print()
    print(_table(["comparison", "t", "p", "effect_size"], test_rows))
    return 0


def experiment_config_from_dict(
    doc: dict,
    threads: int = 1,
    seed: int | None = None,
    direct_encode: bool | None = None,
) -> ExperimentConfig:
    sim_doc = dict(doc["sim"])
    pool_doc = sim_doc.pop("feature_pool", {"kind": "top_k_entropy", "value": 15})
    sim = SimConfig(
        feature_pool=FeatureFilterSpec(pool_doc["kind"], pool_doc["value"]),
        scale_bounds=tuple(sim_doc.pop("scale_bounds", (1.0, 5.0))),
        **sim_doc,
    )
    als_doc = dict(doc["als"])
    als = AlsConfig(
        rank=als_doc["rank"],
        lam=als_doc.get("lambda", als_doc.get("lam", 0.1)),
        max_iterations=als_doc.get("max_iterations", 20),
        convergence_tol=als_doc.get("convergence_tol", 1e-4),
        seed=als_doc.get("seed", 0),
    )
    shadow_doc = doc.get("shadow", {"kind": "tree"})
    if shadow_doc.get("kind") == "linear":
        kind = LinearKind(ridge=shadow_doc.get("ridge", 0.1))
    else:
        kind = TreeKind(
            TreeParams(
                max_depth=shadow_doc.get("max_depth", 5),
                bins=shadow_doc.get("bins", 32),
                min_leaf=shadow_doc.get("min_leaf", 1),
            )
        )
    return ExperimentConfig(
        sim=sim,
        als=als,
        shadow_kind=kind,
        n_reps=doc.get("n_reps", 20),
        users_per_rep=doc.get("users_per_rep", 1),
        n_items=doc.get("n_items", 200),
        n_meta_features=doc.get("n_meta_features", 200),
        keep_fraction=doc.get("keep_fraction", 0.5),
        direct_encode=(
            direct_encode
            if direct_encode
            else doc.get("direct_encode", False)
        ),
        score_by_magnitude=doc.get("score_by_magnitude", True),
        threads=threads,
        seed=seed if seed is not None else doc.get("seed", 0),
    )


# ----------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reclens",
        description="Interpret matrix-factorization recommenders through a "
        "metadata-driven shadow model and feature influence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the baseline factor model")
    p.add_argument("--ratings", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale-min", type=float, default=1.0)
    p.add_argument("--scale-max", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("shadow", help="train and score a shadow model")
    p.add_argument("--model", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--kind", choices=["linear", "tree"], default="tree")
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--ridge", type=float, default=0.1)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--measure", choices=["eval", "train", "all"], default="eval")
    p.add_argument("--entropy-threshold", type=float, default=0.01)
    p.add_argument("--min-features", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shadow)

    p = sub.add_parser("explain", help="influence report for a recommendation")
    p.add_argument("--shadow", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--item")
    p.add_argument("--user-aggregate", action="store_true")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--svg")
    p.add_argument("--model", help="optional baseline model for its rating")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("sweep", help="grid over model and shadow parameters")
    p.add_argument("--ratings", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--grid", help="JSON grid config; omit for the built-in grid")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--measure", choices=["eval", "train", "all"], default="eval")
    p.add_argument("--ridge", type=float, default=0.1)
    p.add_argument("--entropy-threshold", type=float, default=0.01)
    p.add_argument("--min-features", type=int, default=1)
    p.add_argument("--scale-min", type=float, default=1.0)
    p.add_argument("--scale-max", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="synthetic-preference hypothesis tests")
    p.add_argument("--config", required=True)
    p.add_argument("--direct-encode", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "explain":
        if not args.user_aggregate and not args.item:
            parser.error("explain requires --item or --user-aggregate")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _eprint(f"error: cannot read {exc.filename}")
        return 1
    except ReclensError as exc:
        _eprint(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
