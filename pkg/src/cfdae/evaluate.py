"""RMSE evaluation, rating-count cluster analysis, and sweep harnesses.

A predictor is anything with ``predict_many(users, items) -> ratings``;
both the trained completer and the bias baseline qualify.  Sweeps retrain
from scratch per cell and emit flat CSV tables.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .data import RatingMatrix, RatingScale, SplitSpec, split
from .preprocess import BiasTable, fit_bias, fit_scaler
from .train import TrainConfig, complete_matrix, train


@dataclass(frozen=True)
class BiasPredictor:
    """Predicts every rating as the entity's training mean, clamped."""

    bias: BiasTable
    scale: RatingScale

    def predict(self, user: int, item: int) -> float:
        return float(self.predict_many([user], [item])[0])

    def predict_many(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        entities = users if self.bias.orientation == "user" else items
        if entities.size and (entities.min() < 0
                              or entities.max() >= self.bias.means.size):
            raise IndexError("entity index out of range")
        return self.scale.clamp(self.bias.means[entities])


def bias_baseline(train_data: RatingMatrix, orientation: str,
                  scale: RatingScale) -> BiasPredictor:
    return BiasPredictor(fit_bias(train_data, orientation), scale)


def rmse(predictor, test: RatingMatrix) -> float:
    """Root mean squared error over exactly the test entries."""
    if test.n_entries == 0:
        raise ValueError("cannot compute RMSE on an empty test set")
    pred = predictor.predict_many(test.users, test.items)
    return float(np.sqrt(np.mean((pred - test.ratings) ** 2)))


@dataclass(frozen=True)
class ClusterStat:
    """One rating-count bucket: label, RMSE (None if empty), entry count."""

    label: str
    rmse: float | None
    n_entries: int


def cluster_rmse(predictor, test: RatingMatrix, train_data: RatingMatrix,
                 by: str = "item", n_clusters: int = 5) -> list[ClusterStat]:
    """RMSE per bucket of entities sorted by training-rating count.

    Entities are ordered by ascending count (ties broken by index) and cut
    into n_clusters near-equal groups, so the first bucket holds the
    least-rated fifth.  Buckets with no test entries report n_entries=0.
    """
    if by == "item":
        counts = train_data.col_counts()
        test_entities = test.items
    elif by == "user":
        counts = train_data.row_counts()
        test_entities = test.users
    else:
        raise ValueError(f"unknown clustering entity {by!r}")
    if n_clusters < 1:
        raise ValueError("n_clusters must be at least 1")
    if test.n_entries == 0:
        raise ValueError("cannot cluster an empty test set")

    order = np.lexsort((np.arange(counts.size), counts))
    cluster_of = np.empty(counts.size, dtype=np.int64)
    for c, group in enumerate(np.array_split(order, n_clusters)):
        cluster_of[group] = c

    err2 = (predictor.predict_many(test.users, test.items) - test.ratings) ** 2
    labels = cluster_of[test_entities]
    stats = []
    for c in range(n_clusters):
        name = f"{100 * c // n_clusters}-{100 * (c + 1) // n_clusters}%"
        inside = labels == c
        n = int(inside.sum())
        value = float(np.sqrt(err2[inside].mean())) if n else None
        stats.append(ClusterStat(name, value, n))
    return stats


def improvement_pct(base_rmse: float, other_rmse: float) -> float:
    """Relative RMSE gain of `other` over `base`, in percent."""
    if base_rmse <= 0:
        raise ValueError("base RMSE must be positive")
    return 100.0 * (base_rmse - other_rmse) / base_rmse


def seed_summary(values) -> dict:
    """Mean and a 2-standard-deviation halfwidth over repeated seeds.

    The halfwidth is a rough 95% range; with a single value it is 0.
    """
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise ValueError("no values to summarize")
    stddev = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return {"mean": float(values.mean()), "stddev": stddev,
            "plus_minus": 2.0 * stddev, "n_seeds": int(values.size),
            "label": f"mean +/- 2*stddev over {values.size} seeds"}


def summarize_ratio_sweep(rows) -> list[dict]:
    """Collapse per-(ratio, seed) sweep rows into one labeled row per ratio."""
    by_ratio: dict = {}
    for row in rows:
        by_ratio.setdefault(row["ratio"], []).append(row["rmse"])
    out = []
    for ratio in sorted(by_ratio):
        stats = seed_summary(by_ratio[ratio])
        out.append({"ratio": ratio, "n_seeds": stats["n_seeds"],
                    "mean_rmse": stats["mean"],
                    "plus_minus": stats["plus_minus"],
                    "label": stats["label"]})
    return out


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    n_test: int
    per_cluster: tuple[ClusterStat, ...]
    config_digest: str
    seed: int

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "n_test": self.n_test,
                "per_cluster": [asdict(c) for c in self.per_cluster],
                "config_digest": self.config_digest, "seed": self.seed}

    def save_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def config_digest(cfg: TrainConfig, split_spec: SplitSpec | None = None,
                  data_fingerprint: str | None = None) -> str:
    """Short stable hash tying a report to its exact configuration."""
    payload = {"config": cfg.to_dict(),
               "split": None if split_spec is None else
               [split_spec.train_fraction, split_spec.seed],
               "data": data_fingerprint}
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_report(predictor, test: RatingMatrix, train_data: RatingMatrix,
                 by: str = "item", n_clusters: int = 5, digest: str = "",
                 seed: int = 0) -> EvalReport:
    clusters = cluster_rmse(predictor, test, train_data, by, n_clusters)
    return EvalReport(rmse(predictor, test), test.n_entries, tuple(clusters),
                      digest, seed)


def write_cluster_csv(path, report: EvalReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "rmse", "n_entries"])
        for c in report.per_cluster:
            writer.writerow([c.label, "" if c.rmse is None else repr(c.rmse),
                             c.n_entries])


def _fit_and_score(ratings: RatingMatrix, scale: RatingScale,
                   cfg: TrainConfig, split_spec: SplitSpec, side):
    """Fresh split, fit, and test RMSE for one sweep cell."""
    train_m, test_m = split(ratings, split_spec)
    bias = fit_bias(train_m, cfg.orientation)
    scaler = fit_scaler(scale, bias)
    state = train(train_m, cfg, bias, scaler, side=side)
    completer = complete_matrix(train_m, state, bias, scaler, side)
    return rmse(completer, test_m), train_m.n_entries, test_m.n_entries


def _run_cells(tasks, jobs):
    """Evaluate _fit_and_score over argument tuples, optionally in parallel."""
    if jobs <= 1 or len(tasks) <= 1:
        return [_fit_and_score(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_fit_and_score, *t) for t in tasks]
        return [f.result() for f in futures]


def sweep_training_ratio(ratings: RatingMatrix, scale: RatingScale,
                         ratios, cfg: TrainConfig, seeds,
                         side=None, out_csv=None, jobs: int = 1) -> list[dict]:
    """Retrain at several train fractions, one row per (ratio, seed)."""
    cells = [(ratio, seed) for ratio in ratios for seed in seeds]
    tasks = [(ratings, scale, cfg.replace(seed=seed), SplitSpec(ratio, seed), side)
             for ratio, seed in cells]
    results = _run_cells(tasks, jobs)
    rows = [{"ratio": ratio, "seed": seed, "rmse": value,
             "n_train": n_train, "n_test": n_test}
            for (ratio, seed), (value, n_train, n_test) in zip(cells, results)]
    if out_csv is not None:
        _write_rows(out_csv, ["ratio", "seed", "rmse", "n_train", "n_test"], rows)
    return rows


def sweep_dae(ratings: RatingMatrix, scale: RatingScale, recon_weights,
              mask_ratios, cfg: TrainConfig, split_spec: SplitSpec,
              side=None, out_csv=None, jobs: int = 1) -> list[dict]:
    """Grid over reconstruction weight x mask ratio on one fixed split.

    The prediction weight stays at 1.  The (0, 0) cell has no error signal
    at all (nothing corrupted, reconstruction ignored) and is emitted as
    invalid without running it.
    """
    if cfg.prediction_weight != 1.0:
        raise ValueError("the grid holds the prediction weight at 1")
    cells = [(rw, mr) for rw in recon_weights for mr in mask_ratios]
    valid = [(rw, mr) for rw, mr in cells if not (rw == 0 and mr == 0)]
    tasks = [(ratings, scale,
              cfg.replace(reconstruction_weight=rw, mask_ratio=mr),
              split_spec, side)
             for rw, mr in valid]
    results = dict(zip(valid, _run_cells(tasks, jobs)))
    rows = []
    for rw, mr in cells:
        ok = (rw, mr) in results
        rows.append({"reconstruction_weight": rw, "mask_ratio": mr,
                     "valid": ok,
                     "rmse": results[(rw, mr)][0] if ok else None,
                     "seed": split_spec.seed})
    if out_csv is not None:
        _write_rows(out_csv, ["reconstruction_weight", "mask_ratio", "valid",
                              "rmse", "seed"], rows)
    return rows


def _write_rows(path, fieldnames, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
