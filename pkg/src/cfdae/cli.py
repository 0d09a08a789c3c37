"""Command-line workflow: ingest, train, evaluate, sweep, predict.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure during training.  Hyperparameter flags override the
optional key=value config file, which overrides the built-in defaults.
Every command that writes artifacts also writes a manifest listing its
inputs (with content digests), outputs, and full configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data import (DataError, SplitSpec, TagMatrix, RATING_FORMATS,
                   TAG_FORMATS, load_ratings, load_snapshot,
                   load_tag_snapshot, load_tags, save_snapshot,
                   save_tag_snapshot, split)
from .evaluate import (_write_rows, bias_baseline, build_report,
                       config_digest, improvement_pct, rmse,
                       summarize_ratio_sweep, sweep_dae,
                       sweep_training_ratio, write_cluster_csv)
from .preprocess import (build_side_info, fit_bias, fit_scaler, svd_embed)
from .train import (SIDE_MODES, TrainConfig, TrainingDiverged,
                    complete_matrix, load_checkpoint, save_checkpoint,
                    train, write_loss_curve)

log = logging.getLogger(__name__)

_CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))
_INT_KEYS = {"hidden", "epochs", "batch_size", "seed"}
_FLOAT_KEYS = {"prediction_weight", "reconstruction_weight", "mask_ratio",
               "lr0", "lr_decay"}
_ORIENT_ALIAS = {"u": "user", "i": "item"}


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures exiting 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _coerce_config_value(key: str, text: str):
    if key in _INT_KEYS:
        return int(text)
    if key in _FLOAT_KEYS:
        return float(text)
    if key == "weight_decay":
        return None if text.lower() in ("auto", "none") else float(text)
    if key in _CONFIG_KEYS:
        return text
    raise ValueError(f"unknown config key {key!r}")


def _read_config_file(path) -> dict:
    """Flat `key = value` lines; '#' starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, text = (part.strip() for part in line.split("=", 1))
            values[key] = _coerce_config_value(key, text)
    return values


def _merged_config(args) -> TrainConfig:
    merged = TrainConfig().to_dict()
    if getattr(args, "config", None):
        merged.update(_read_config_file(args.config))
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is None:
            continue
        if key == "weight_decay":
            value = _coerce_config_value(key, value)
        merged[key] = value
    merged["orientation"] = _ORIENT_ALIAS.get(merged["orientation"],
                                              merged["orientation"])
    return TrainConfig.from_dict(merged)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, args, config: dict,
                    inputs, outputs, started: str):
    manifest = {
        "command": command,
        "argv": list(args.raw_argv),
        "config": config,
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": _now(),
    }
    path = out_dir / f"manifest_{command}.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _build_side(cfg: TrainConfig, data_dir: Path, svd_dim: int,
                use_binary: bool):
    """Side-information table for the configured entity, or None."""
    if cfg.side_info == "none":
        return None
    tag_path = data_dir / "tags.npz"
    if not tag_path.exists():
        raise DataError(f"side information requested but {tag_path} is "
                        "missing; re-run ingest with --tags")
    tags, entity = load_tag_snapshot(tag_path)
    if entity != cfg.orientation:
        raise DataError(f"ingested tags describe each {entity}, but the "
                        f"model is {cfg.orientation}-oriented")
    svd_part = None
    if svd_dim > 0:
        limit = min(tags.n_entities, tags.n_tags)
        k = min(svd_dim, limit)
        if k < svd_dim:
            log.warning("reducing SVD dimension from %d to %d for a %dx%d "
                        "tag matrix", svd_dim, k, tags.n_entities, tags.n_tags)
        svd_part = svd_embed(tags, k)
    binary_part = None
    if use_binary:
        clipped = tags.counts.copy()
        clipped.data = np.minimum(clipped.data, 1.0)
        binary_part = TagMatrix(clipped, tags.tag_names)
    if svd_part is None and binary_part is None:
        raise ValueError("side information enabled but --side-svd-dim is 0 "
                         "and --side-binary is not set")
    return build_side_info(svd_part, binary_part)


def _load_data_dir(data_dir: Path):
    path = data_dir / "ratings.npz"
    if not path.exists():
        raise DataError(f"{path} not found; run ingest first")
    return load_snapshot(path), path


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    started = _now()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ratings, scale, ids = load_ratings(args.ratings, args.format)
    save_snapshot(out / "ratings.npz", ratings, scale, ids)
    outputs = [out / "ratings.npz"]
    inputs = [args.ratings]

    stats = {
        "n_users": ratings.n_users,
        "n_items": ratings.n_items,
        "n_ratings": ratings.n_entries,
        "density": ratings.density,
        "scale": {"min": scale.min_rating, "max": scale.max_rating,
                  "is_discrete": scale.is_discrete, "step": scale.step},
        "fingerprint": ratings.fingerprint(),
    }
    if args.tags:
        entity = args.tag_entity or (
            "user" if args.tag_format == "adjacency_csv" else "item")
        tags = load_tags(args.tags, args.tag_format, ids, entity)
        save_tag_snapshot(out / "tags.npz", tags, entity)
        outputs.append(out / "tags.npz")
        inputs.append(args.tags)
        stats["tags"] = {"entity": entity, "n_tags": tags.n_tags,
                         "nnz": int(tags.counts.nnz)}
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2)
        fh.write("\n")
    outputs.append(out / "stats.json")
    _write_manifest(out, "ingest", args,
                    {"format": args.format, "tag_format": args.tag_format,
                     "tag_entity": args.tag_entity},
                    inputs, outputs, started)
    print(f"ingested {ratings.n_entries} ratings: {ratings.n_users} users x "
          f"{ratings.n_items} items, density {ratings.density:.4%}")
    return 0


def cmd_train(args) -> int:
    started = _now()
    cfg = _merged_config(args)
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (ratings, scale, _ids), ratings_path = _load_data_dir(data_dir)

    split_spec = SplitSpec(args.train_fraction, args.split_seed)
    train_m, test_m = split(ratings, split_spec)
    bias = fit_bias(train_m, cfg.orientation)
    scaler = fit_scaler(scale, bias)
    side = _build_side(cfg, data_dir, args.side_svd_dim, args.side_binary)

    eval_hook = None
    if args.eval_each_epoch:
        def eval_hook(state):
            completer = complete_matrix(train_m, state, bias, scaler, side)
            return rmse(completer, test_m)

    checkpoint_dir = out / "epochs" if args.checkpoint_each_epoch else None
    state = train(train_m, cfg, bias, scaler, side=side, eval_hook=eval_hook,
                  checkpoint_dir=checkpoint_dir)

    ckpt_path = out / "checkpoint.npz"
    save_checkpoint(ckpt_path, state, bias, scaler, split_spec,
                    ratings.fingerprint(), side)
    curve_path = out / "loss_curve.csv"
    write_loss_curve(curve_path, state.history)
    outputs = [ckpt_path, curve_path]
    if checkpoint_dir is not None:
        outputs.extend(sorted(checkpoint_dir.iterdir()))
    inputs = [ratings_path]
    if side is not None:
        inputs.append(data_dir / "tags.npz")
    _write_manifest(out, "train", args,
                    {"train": cfg.to_dict(),
                     "split": {"train_fraction": split_spec.train_fraction,
                               "seed": split_spec.seed},
                     "side_svd_dim": args.side_svd_dim,
                     "side_binary": args.side_binary},
                    inputs, outputs, started)
    last = state.history[-1]
    tail = "" if last.rmse is None else f", test rmse {last.rmse:.4f}"
    print(f"trained {state.epoch} epochs ({cfg.orientation}-oriented); "
          f"final mean loss {last.mean_loss:.6f}{tail}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_evaluate(args) -> int:
    started = _now()
    model_dir = Path(args.model)
    ckpt_path = model_dir / "checkpoint.npz"
    if not ckpt_path.exists():
        raise DataError(f"{ckpt_path} not found")
    ckpt = load_checkpoint(ckpt_path)
    cfg = ckpt.state.config
    (ratings, scale, _ids), ratings_path = _load_data_dir(Path(args.data))
    if ckpt.data_fingerprint and ckpt.data_fingerprint != ratings.fingerprint():
        raise DataError("checkpoint was trained on different data than "
                        f"{ratings_path}")
    if ckpt.split is None:
        raise DataError("checkpoint records no train/test split")
    train_m, test_m = split(ratings, ckpt.split)

    completer = complete_matrix(train_m, ckpt.state, ckpt.bias, ckpt.scaler,
                                ckpt.side)
    by = args.clusters or cfg.orientation
    digest = config_digest(cfg, ckpt.split, ckpt.data_fingerprint)
    report = build_report(completer, test_m, train_m, by=by,
                          n_clusters=args.n_clusters, digest=digest,
                          seed=cfg.seed)
    baseline = bias_baseline(train_m, cfg.orientation, scale)
    base_rmse = rmse(baseline, test_m)

    out = Path(args.out) if args.out else model_dir
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    payload = report.to_dict()
    payload["baseline_rmse"] = base_rmse
    payload["improvement_pct_vs_baseline"] = improvement_pct(base_rmse,
                                                             report.rmse)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    clusters_path = out / "clusters.csv"
    write_cluster_csv(clusters_path, report)
    _write_manifest(out, "evaluate", args,
                    {"train": cfg.to_dict(), "clusters_by": by,
                     "n_clusters": args.n_clusters},
                    [ckpt_path, ratings_path],
                    [report_path, clusters_path], started)

    print(f"test rmse {report.rmse:.4f} on {report.n_test} entries "
          f"(bias baseline {base_rmse:.4f})")
    for c in report.per_cluster:
        shown = "n/a" if c.rmse is None else f"{c.rmse:.4f}"
        print(f"  {by}s by training-rating count {c.label}: rmse {shown} "
              f"({c.n_entries} entries)")
    return 0


def cmd_predict(args) -> int:
    model_dir = Path(args.model)
    ckpt_path = model_dir / "checkpoint.npz"
    if not ckpt_path.exists():
        raise DataError(f"{ckpt_path} not found")
    ckpt = load_checkpoint(ckpt_path)
    (ratings, scale, ids), _path = _load_data_dir(Path(args.data))
    if ckpt.data_fingerprint and ckpt.data_fingerprint != ratings.fingerprint():
        raise DataError("checkpoint was trained on different data")

    u = ids.user_index.get(args.user)
    i = ids.item_index.get(args.item)
    if u is None or i is None:
        which = "user" if u is None else "item"
        raw = args.user if u is None else args.item
        print(f"warning: unknown {which} id {raw!r}; falling back to the "
              "global training mean", file=sys.stderr)
        value = float(scale.clamp(ckpt.bias.global_mean))
    else:
        if ckpt.split is None:
            raise DataError("checkpoint records no train/test split")
        train_m, _test_m = split(ratings, ckpt.split)
        completer = complete_matrix(train_m, ckpt.state, ckpt.bias,
                                    ckpt.scaler, ckpt.side)
        value = completer.predict(u, i)
    print(f"{value:.4f}")
    return 0


def cmd_sweep(args) -> int:
    started = _now()
    cfg = _merged_config(args)
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (ratings, scale, _ids), ratings_path = _load_data_dir(data_dir)
    side = _build_side(cfg, data_dir, args.side_svd_dim, args.side_binary)

    outputs = []
    if args.kind == "ratio":
        ratios = _parse_floats(args.ratios)
        seeds = _parse_ints(args.seeds)
        csv_path = out / "sweep_ratio.csv"
        rows = sweep_training_ratio(ratings, scale, ratios, cfg, seeds,
                                    side=side, out_csv=csv_path,
                                    jobs=args.jobs)
        summary_path = out / "sweep_ratio_summary.csv"
        summary = summarize_ratio_sweep(rows)
        _write_rows(summary_path, ["ratio", "n_seeds", "mean_rmse",
                                   "plus_minus", "label"], summary)
        outputs.append(summary_path)
        grid = {"ratios": ratios, "seeds": seeds}
    else:
        recon = _parse_floats(args.recon_weights)
        masks = _parse_floats(args.mask_ratios)
        split_spec = SplitSpec(args.train_fraction, args.split_seed)
        csv_path = out / "sweep_dae.csv"
        rows = sweep_dae(ratings, scale, recon, masks, cfg, split_spec,
                         side=side, out_csv=csv_path, jobs=args.jobs)
        grid = {"recon_weights": recon, "mask_ratios": masks,
                "split": [split_spec.train_fraction, split_spec.seed]}

    inputs = [ratings_path]
    if side is not None:
        inputs.append(data_dir / "tags.npz")
    _write_manifest(out, "sweep", args,
                    {"kind": args.kind, "train": cfg.to_dict(), **grid},
                    inputs, [csv_path, *outputs], started)
    print(f"swept {len(rows)} cells -> {csv_path}")
    return 0


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


# ------------------------------------------------------------------ parser

def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("hyperparameters (defaults in parentheses)")
    g.add_argument("--config", metavar="FILE",
                   help="key=value config file; explicit flags override it")
    g.add_argument("--orientation", choices=["user", "item", "u", "i"],
                   help="feed user rows or item columns (item)")
    g.add_argument("--hidden", type=int, help="hidden-layer width (600)")
    g.add_argument("--prediction-weight", dest="prediction_weight", type=float,
                   help="loss weight on corrupted entries (1.0)")
    g.add_argument("--reconstruction-weight", dest="reconstruction_weight",
                   type=float, help="loss weight on intact entries (0.5)")
    g.add_argument("--mask-ratio", dest="mask_ratio", type=float,
                   help="fraction of known entries corrupted per sample (0.25)")
    g.add_argument("--weight-decay", dest="weight_decay", metavar="X|auto",
                   help="L2 coefficient; 'auto' = 0.5/input_width (auto)")
    g.add_argument("--lr0", type=float, help="initial learning rate (0.7)")
    g.add_argument("--lr-decay", dest="lr_decay", type=float,
                   help="hyperbolic learning-rate decay (0.3)")
    g.add_argument("--epochs", type=int, help="training epochs (20)")
    g.add_argument("--batch-size", dest="batch_size", type=int,
                   help="minibatch size (32)")
    g.add_argument("--seed", type=int, help="RNG seed (0)")
    g.add_argument("--side", dest="side_info", choices=list(SIDE_MODES),
                   help="where to inject side information (none)")
    p.add_argument("--side-svd-dim", dest="side_svd_dim", type=int, default=50,
                   help="SVD embedding dimension for tags; 0 disables (50)")
    p.add_argument("--side-binary", dest="side_binary", action="store_true",
                   help="append raw 0/1 tag columns to the side features")
    p.add_argument("--train-fraction", dest="train_fraction", type=float,
                   default=0.9, help="train split fraction (0.9)")
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0,
                   help="seed of the train/test shuffle (0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfdae",
                     description="Rating-matrix completion with a denoising "
                                 "autoencoder trained on incomplete vectors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a dataset into a snapshot dir")
    p.add_argument("--ratings", required=True, help="ratings file")
    p.add_argument("--format", choices=list(RATING_FORMATS), default="csv")
    p.add_argument("--tags", help="optional tag/attribute file")
    p.add_argument("--tag-format", dest="tag_format",
                   choices=list(TAG_FORMATS), default="genre_flags")
    p.add_argument("--tag-entity", dest="tag_entity",
                   choices=["user", "item"],
                   help="which entity the tags describe (format default)")
    p.add_argument("--out", required=True, help="snapshot directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="split, fit preprocessing, run SGD")
    p.add_argument("--data", required=True, help="ingested snapshot directory")
    p.add_argument("--out", required=True, help="model output directory")
    _add_config_flags(p)
    p.add_argument("--eval-each-epoch", dest="eval_each_epoch",
                   action="store_true",
                   help="record test RMSE on the loss curve after each epoch")
    p.add_argument("--checkpoint-each-epoch", dest="checkpoint_each_epoch",
                   action="store_true", help="write a checkpoint per epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on its test split")
    p.add_argument("--model", required=True, help="directory with checkpoint.npz")
    p.add_argument("--data", required=True, help="ingested snapshot directory")
    p.add_argument("--clusters", choices=["user", "item"],
                   help="cluster entities for the per-bucket table "
                        "(default: the model orientation)")
    p.add_argument("--n-clusters", dest="n_clusters", type=int, default=5)
    p.add_argument("--out", help="report directory (default: model dir)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict one rating by raw ids")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--user", required=True, help="raw user id")
    p.add_argument("--item", required=True, help="raw item id")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="grid of retrain-and-score runs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["ratio", "dae"], required=True)
    p.add_argument("--ratios", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
                   help="train fractions for --kind ratio")
    p.add_argument("--seeds", default="0,1,2",
                   help="repetition seeds for --kind ratio; the summary CSV "
                        "reports mean +/- 2*stddev across them")
    p.add_argument("--recon-weights", dest="recon_weights",
                   default="0,0.25,0.5,1",
                   help="reconstruction weights for --kind dae")
    p.add_argument("--mask-ratios", dest="mask_ratios", default="0,0.25,0.5",
                   help="mask ratios for --kind dae")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel training processes")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    args.raw_argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
