"""Minibatch SGD over user rows or item columns, and trained-model prediction.

Each training sample is one entity's incomplete rating vector (a user's row
or an item's column), centered and rescaled to [-1, 1].  Every epoch draws a
fresh corruption mask per sample, and the per-epoch RNG is derived from
(seed, epoch) so runs are bitwise reproducible and the schedule never
depends on how earlier epochs consumed randomness.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, RatingMatrix, RatingScale, SplitSpec
from .model import (AutoencoderParams, LossWeights, batch_loss_gradients,
                    forward_batch, init_params)
from .preprocess import (BiasTable, Scaler, SideInfoTable, inverse_transform,
                         transform)

log = logging.getLogger(__name__)

ORIENTATIONS = ("user", "item")
SIDE_MODES = ("none", "input_only", "hidden_only", "both")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Loss weights, network width, SGD schedule, and sampling seed.

    weight_decay=None resolves at train time to 0.5 / input_width, keeping
    the summed Frobenius penalty comparable to the data term regardless of
    the vector dimension.
    """

    orientation: str = "item"
    hidden: int = 600
    prediction_weight: float = 1.0
    reconstruction_weight: float = 0.5
    mask_ratio: float = 0.25
    weight_decay: float | None = None
    lr0: float = 0.7
    lr_decay: float = 0.3
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    side_info: str = "none"

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if self.side_info not in SIDE_MODES:
            raise ValueError(f"unknown side_info mode {self.side_info!r}")
        if self.hidden < 1:
            raise ValueError("hidden width must be at least 1")
        if self.prediction_weight < 0 or self.reconstruction_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.prediction_weight == 0 and self.reconstruction_weight == 0:
            raise ValueError("prediction and reconstruction weights are both zero")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in [0, 1)")
        if self.weight_decay is not None and self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.lr_decay < 0:
            raise ValueError("lr_decay must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def resolved_weight_decay(self, input_width: int) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return 0.5 / input_width

    def loss_weights(self, input_width: int) -> LossWeights:
        return LossWeights(self.prediction_weight, self.reconstruction_weight,
                           self.resolved_weight_decay(input_width))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Hyperbolically decayed rate for a zero-based epoch index."""
    return cfg.lr0 / (1.0 + cfg.lr_decay * epoch)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    rmse: float | None = None


@dataclass
class TrainState:
    """Parameters plus the per-epoch loss curve; epoch = len(history)."""

    params: AutoencoderParams
    config: TrainConfig
    history: list[EpochRecord]

    @property
    def epoch(self) -> int:
        return len(self.history)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, epoch: int, batch: int, grad_max: float):
        self.epoch = epoch
        self.batch = batch
        self.grad_max = grad_max
        super().__init__(
            f"non-finite training signal at epoch {epoch}, batch {batch} "
            f"(max |gradient| = {grad_max})")


def _entity_vectors(train: RatingMatrix, orientation: str, bias: BiasTable,
                    scaler: Scaler):
    """Per-entity (counterpart indices, unit values), read via row/col."""
    n_entities = train.n_users if orientation == "user" else train.n_items
    pull = train.row if orientation == "user" else train.col
    vectors = []
    for e in range(n_entities):
        idx, raw = pull(e)
        vectors.append((idx, np.atleast_1d(transform(raw, e, bias, scaler))))
    return vectors


def _side_features(cfg: TrainConfig, side: SideInfoTable | None,
                   n_entities: int):
    """Validated feature matrix and the (p_in, p_hidden) widths."""
    if cfg.side_info == "none":
        if side is not None:
            raise ValueError("side table given but side_info mode is 'none'")
        return None, 0, 0
    if side is None:
        raise ValueError(f"side_info mode {cfg.side_info!r} needs a side table")
    if side.n_entities != n_entities:
        raise ValueError(f"side table has {side.n_entities} rows, "
                         f"expected {n_entities}")
    p_in = side.dim if cfg.side_info in ("input_only", "both") else 0
    p_hidden = side.dim if cfg.side_info in ("hidden_only", "both") else 0
    return side.features, p_in, p_hidden


def train(train_data: RatingMatrix, cfg: TrainConfig, bias: BiasTable,
          scaler: Scaler, side: SideInfoTable | None = None,
          eval_hook=None, checkpoint_dir=None) -> TrainState:
    """Run the full SGD schedule and return the final state.

    Samples with no known entries are skipped.  eval_hook, if given, is
    called with the state after each epoch and may return an RMSE to
    record on that epoch's curve point.  checkpoint_dir, if given, gets
    one checkpoint file per epoch.
    """
    if bias.orientation != cfg.orientation:
        raise ValueError(f"bias table orientation {bias.orientation!r} does "
                         f"not match config orientation {cfg.orientation!r}")
    n = train_data.n_items if cfg.orientation == "user" else train_data.n_users
    n_entities = train_data.n_users if cfg.orientation == "user" else train_data.n_items
    features, p_in, p_hidden = _side_features(cfg, side, n_entities)
    vectors = _entity_vectors(train_data, cfg.orientation, bias, scaler)
    pool = np.array([e for e in range(n_entities) if vectors[e][0].size],
                    dtype=np.int64)
    if pool.size == 0:
        raise ValueError("no training vectors with known entries")

    params = init_params(n, cfg.hidden, p_in, p_hidden, seed=cfg.seed)
    weights = cfg.loss_weights(n + p_in)
    state = TrainState(params, cfg, [])
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(pool)
        lr = learning_rate(cfg, epoch)
        loss_sum = 0.0
        for batch, start in enumerate(range(0, order.size, cfg.batch_size)):
            sel = order[start:start + cfg.batch_size]
            m = sel.size
            x_tgt = np.zeros((m, n))
            known = np.zeros((m, n), dtype=bool)
            corrupted = np.zeros((m, n), dtype=bool)
            for r, e in enumerate(sel):
                idx, unit = vectors[e]
                x_tgt[r, idx] = unit
                known[r, idx] = True
                n_hit = int(round(cfg.mask_ratio * idx.size))
                if n_hit:
                    hit = rng.choice(idx.size, size=n_hit, replace=False)
                    corrupted[r, idx[hit]] = True
            x_in = np.where(known & ~corrupted, x_tgt, 0.0)
            batch_side = features[sel] if features is not None else None
            losses, grads = batch_loss_gradients(params, x_in, x_tgt, known,
                                                 corrupted, weights, batch_side)
            grad_max = grads.max_abs()
            if not (np.all(np.isfinite(losses)) and np.isfinite(grad_max)):
                raise TrainingDiverged(epoch, batch, grad_max)
            step = lr / m
            params.W1 -= step * grads.W1
            params.b1 -= step * grads.b1
            params.W2 -= step * grads.W2
            params.b2 -= step * grads.b2
            loss_sum += float(losses.sum())
        if not all(np.all(np.isfinite(a)) for a in
                   (params.W1, params.b1, params.W2, params.b2)):
            raise TrainingDiverged(epoch, batch, grad_max)

        record = EpochRecord(epoch, loss_sum / order.size)
        state.history.append(record)
        if eval_hook is not None:
            record.rmse = eval_hook(state)
        log.info("epoch %d: lr=%.5f mean_loss=%.6f%s", epoch, lr,
                 record.mean_loss,
                 "" if record.rmse is None else f" rmse={record.rmse:.4f}")
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir / f"epoch_{epoch:03d}.npz",
                            state, bias, scaler,
                            data_fingerprint=train_data.fingerprint())
    return state


class MatrixCompleter:
    """Predicts any (user, item) rating from a trained network.

    A prediction feeds the entity's training vector forward and reads the
    counterpart coordinate, then undoes centering/rescaling and clamps to
    the rating scale.  Entities with no training ratings fall back to the
    bias table (their mean is the global mean).
    """

    _CHUNK = 256

    def __init__(self, train_data: RatingMatrix, params: AutoencoderParams,
                 cfg: TrainConfig, bias: BiasTable, scaler: Scaler,
                 side: SideInfoTable | None = None):
        if bias.orientation != cfg.orientation:
            raise ValueError("bias table orientation does not match config")
        self.orientation = cfg.orientation
        self.params = params
        self.bias = bias
        self.scaler = scaler
        self.n_users = train_data.n_users
        self.n_items = train_data.n_items
        n_entities = self.n_users if self.orientation == "user" else self.n_items
        self._features, p_in, p_hidden = _side_features(cfg, side, n_entities)
        if params.p_in != p_in or params.p_hidden != p_hidden:
            raise ValueError("network side widths do not match side_info mode")
        self._vectors = _entity_vectors(train_data, self.orientation, bias, scaler)
        self._counts = np.array([idx.size for idx, _ in self._vectors])
        self._n_out = train_data.n_items if self.orientation == "user" else train_data.n_users
        if params.n != self._n_out:
            raise ValueError(f"network dim {params.n} does not match data "
                             f"dim {self._n_out}")

    def predict(self, user: int, item: int) -> float:
        return float(self.predict_many([user], [item])[0])

    def predict_many(self, users, items) -> np.ndarray:
        """Clamped rating predictions for aligned index arrays."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise ValueError("users and items must be aligned 1-D arrays")
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise IndexError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise IndexError("item index out of range")
        entities = users if self.orientation == "user" else items
        counterparts = items if self.orientation == "user" else users

        unit = np.zeros(entities.size)
        uniq, inverse = np.unique(entities, return_inverse=True)
        for lo in range(0, uniq.size, self._CHUNK):
            chunk = uniq[lo:lo + self._CHUNK]
            out = self._forward_entities(chunk)
            hit = (inverse >= lo) & (inverse < lo + chunk.size)
            unit[hit] = out[inverse[hit] - lo, counterparts[hit]]
        unit[self._counts[entities] == 0] = 0.0
        pred = inverse_transform(unit, entities, self.bias, self.scaler)
        return np.atleast_1d(pred)

    def _forward_entities(self, entity_idx: np.ndarray) -> np.ndarray:
        x = np.zeros((entity_idx.size, self._n_out))
        for r, e in enumerate(entity_idx):
            idx, vals = self._vectors[e]
            x[r, idx] = vals
        side = self._features[entity_idx] if self._features is not None else None
        return forward_batch(self.params, x, side)


def complete_matrix(train_data: RatingMatrix, state: TrainState,
                    bias: BiasTable, scaler: Scaler,
                    side: SideInfoTable | None = None) -> MatrixCompleter:
    return MatrixCompleter(train_data, state.params, state.config, bias,
                           scaler, side)


@dataclass
class Checkpoint:
    """Everything needed to rebuild predictions from a finished run."""

    state: TrainState
    bias: BiasTable
    scaler: Scaler
    split: SplitSpec | None = None
    data_fingerprint: str | None = None
    side: SideInfoTable | None = None


def save_checkpoint(path, state: TrainState, bias: BiasTable, scaler: Scaler,
                    split: SplitSpec | None = None,
                    data_fingerprint: str | None = None,
                    side: SideInfoTable | None = None):
    """Versioned .npz with params, config, preprocessing, and the curve."""
    arrays = {
        "format_version": CHECKPOINT_VERSION,
        "config_json": json.dumps(state.config.to_dict()),
        "w1": state.params.W1,
        "b1": state.params.b1,
        "w2": state.params.W2,
        "b2": state.params.b2,
        "bias_orientation": bias.orientation,
        "bias_means": bias.means,
        "bias_global": bias.global_mean,
        "scale": np.array([scaler.scale.min_rating, scaler.scale.max_rating,
                           float(scaler.scale.is_discrete), scaler.scale.step]),
        "centered_range": np.array([scaler.centered_low, scaler.centered_high]),
        "history_epoch": np.array([r.epoch for r in state.history], dtype=np.int64),
        "history_loss": np.array([r.mean_loss for r in state.history]),
        "history_rmse": np.array([np.nan if r.rmse is None else r.rmse
                                  for r in state.history]),
        "has_split": split is not None,
        "split": np.array([split.train_fraction, float(split.seed)]
                          if split is not None else [0.0, 0.0]),
        "data_fingerprint": data_fingerprint or "",
        "has_side": side is not None,
        "side_features": side.features if side is not None else np.zeros((0, 0)),
        "side_n_svd": side.n_svd if side is not None else 0,
    }
    np.savez_compressed(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    """Inverse of save_checkpoint; round-trips bit-exactly."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        cfg = TrainConfig.from_dict(json.loads(str(z["config_json"])))
        params = AutoencoderParams(z["w1"], z["b1"], z["w2"], z["b2"])
        smin, smax, sdisc, sstep = z["scale"]
        scale = RatingScale(float(smin), float(smax), bool(sdisc), float(sstep))
        lo, hi = z["centered_range"]
        scaler = Scaler(scale, float(lo), float(hi))
        means = z["bias_means"]
        means.setflags(write=False)
        bias = BiasTable(str(z["bias_orientation"]), means,
                         float(z["bias_global"]))
        rmses = z["history_rmse"]
        history = [EpochRecord(int(e), float(l),
                               None if np.isnan(r) else float(r))
                   for e, l, r in zip(z["history_epoch"], z["history_loss"], rmses)]
        split = None
        if bool(z["has_split"]):
            frac, seed = z["split"]
            split = SplitSpec(float(frac), int(seed))
        fingerprint = str(z["data_fingerprint"]) or None
        side = None
        if bool(z["has_side"]):
            side = SideInfoTable(z["side_features"], int(z["side_n_svd"]))
    return Checkpoint(TrainState(params, cfg, history), bias, scaler, split,
                      fingerprint, side)


def write_loss_curve(path, history: list[EpochRecord]):
    """CSV of the training curve: epoch,loss,rmse (rmse blank if absent)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,rmse\n")
        for rec in history:
            rmse = "" if rec.rmse is None else repr(rec.rmse)
            fh.write(f"{rec.epoch},{rec.mean_loss!r},{rmse}\n")
