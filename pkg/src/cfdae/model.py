"""One-hidden-layer tanh autoencoder over incomplete vectors.

Missing entries are fed as zeros and excluded from the loss.  Training
corrupts (zeroes) a random subset of the known entries; the squared error
on corrupted entries is weighted separately from the error on the entries
left intact, plus an L2 penalty on both weight matrices (never the biases).
An optional side-information vector can be appended to the input, to the
hidden layer, or to both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SparseVector:
    """Fixed-dimension vector with values known only at sorted indices."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        val = np.ascontiguousarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or val.ndim != 1 or idx.size != val.size:
            raise ValueError("indices and values must be aligned 1-D arrays")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("index out of range")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        if not np.all(np.isfinite(val)):
            raise ValueError("values must be finite")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def n_known(self) -> int:
        return self.indices.size

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim)
        dense[self.indices] = self.values
        return dense


@dataclass(frozen=True)
class CorruptionMask:
    """Indices zeroed in the corrupted input; a subset of the known set."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.unique(np.ascontiguousarray(self.indices, dtype=np.int64))
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)


@dataclass(frozen=True)
class LossWeights:
    """Error weights: corrupted entries vs intact known entries, plus L2."""

    prediction: float       # corrupted entries (errors stand in for predictions)
    reconstruction: float   # known entries left intact
    l2: float = 0.0

    def __post_init__(self):
        if self.prediction < 0 or self.reconstruction < 0 or self.l2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.prediction == 0 and self.reconstruction == 0:
            raise ValueError("prediction and reconstruction weights are both zero")


@dataclass
class AutoencoderParams:
    """Encoder/decoder weights; widths absorb optional side-info columns."""

    W1: np.ndarray  # (hidden, n + p_in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (n, hidden + p_hidden)
    b2: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return self.b2.size

    @property
    def hidden(self) -> int:
        return self.b1.size

    @property
    def p_in(self) -> int:
        return self.W1.shape[1] - self.n

    @property
    def p_hidden(self) -> int:
        return self.W2.shape[1] - self.hidden

    def validate(self):
        k, n = self.hidden, self.n
        if self.W1.ndim != 2 or self.W2.ndim != 2:
            raise ValueError("weight matrices must be 2-D")
        if self.W1.shape[0] != k or self.W2.shape[0] != n:
            raise ValueError("weight/bias shapes disagree")
        if self.p_in < 0 or self.p_hidden < 0:
            raise ValueError("weight matrices narrower than the data dimension")
        for arr in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("parameters must be finite")

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(self.W1.copy(), self.b1.copy(),
                                 self.W2.copy(), self.b2.copy())


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) if a.size else 0.0
                   for a in (self.W1, self.b1, self.W2, self.b2))


def init_params(n: int, hidden: int, p_in: int = 0, p_hidden: int = 0,
                seed: int = 0) -> AutoencoderParams:
    """Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)]; zero biases."""
    if n < 1 or hidden < 1:
        raise ValueError("n and hidden must be at least 1")
    if p_in < 0 or p_hidden < 0:
        raise ValueError("side-info widths must be nonnegative")
    rng = np.random.default_rng(seed)
    bound1 = 1.0 / np.sqrt(n + p_in)
    bound2 = 1.0 / np.sqrt(hidden + p_hidden)
    return AutoencoderParams(
        W1=rng.uniform(-bound1, bound1, size=(hidden, n + p_in)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-bound2, bound2, size=(n, hidden + p_hidden)),
        b2=np.zeros(n),
    )


def _check_side(params: AutoencoderParams, side) -> np.ndarray | None:
    needs = params.p_in > 0 or params.p_hidden > 0
    if not needs:
        if side is not None:
            raise ValueError("side_info given but the network has no side columns")
        return None
    if side is None:
        raise ValueError("network expects side_info")
    side = np.asarray(side, dtype=np.float64)
    p = side.shape[-1]
    if params.p_in not in (0, p) or params.p_hidden not in (0, p):
        raise ValueError(f"side_info dim {p} does not match the network widths")
    return side


def forward_batch(params: AutoencoderParams, x: np.ndarray,
                  side: np.ndarray | None = None) -> np.ndarray:
    """Outputs for a batch of dense rows (missing entries already zeroed)."""
    _, out = _affine_batch(params, np.atleast_2d(x), side)
    return out


def _affine_batch(params, x, side):
    if x.shape[1] != params.n:
        raise ValueError(f"input dim {x.shape[1]} != network dim {params.n}")
    xin = np.hstack([x, side]) if params.p_in else x
    h = np.tanh(xin @ params.W1.T + params.b1)
    hin = np.hstack([h, side]) if params.p_hidden else h
    out = np.tanh(hin @ params.W2.T + params.b2)
    return h, out


def forward(params: AutoencoderParams, x: SparseVector,
            side_info=None) -> np.ndarray:
    """Dense output vector for one incomplete input vector."""
    side = _check_side(params, side_info)
    if x.dim != params.n:
        raise ValueError(f"input dim {x.dim} != network dim {params.n}")
    batch_side = side[None, :] if side is not None else None
    return forward_batch(params, x.to_dense()[None, :], batch_side)[0]


def corrupt(x: SparseVector, mask_ratio: float, rng: np.random.Generator):
    """Zero out round(mask_ratio * n_known) known entries, chosen uniformly.

    Returns the corrupted vector (those entries removed from its known set)
    and the mask of corrupted indices.
    """
    if not 0.0 <= mask_ratio < 1.0:
        raise ValueError("mask_ratio must be in [0, 1)")
    n_corrupt = int(round(mask_ratio * x.n_known))
    if n_corrupt == 0:
        return x, CorruptionMask(np.empty(0, dtype=np.int64))
    hit = np.sort(rng.choice(x.n_known, size=n_corrupt, replace=False))
    keep = np.setdiff1d(np.arange(x.n_known), hit, assume_unique=True)
    corrupted = SparseVector(x.dim, x.indices[keep], x.values[keep])
    return corrupted, CorruptionMask(x.indices[hit])


def _check_mask(x: SparseVector, x_tilde: SparseVector, mask: CorruptionMask):
    if x_tilde.dim != x.dim:
        raise ValueError("corrupted vector has a different dimension")
    if not np.all(np.isin(mask.indices, x.indices)):
        raise ValueError("mask contains indices that are not known in x")
    if np.any(np.isin(mask.indices, x_tilde.indices)):
        raise ValueError("corrupted indices must be absent from x_tilde")


def _masks_row(x: SparseVector, mask: CorruptionMask):
    known = np.zeros(x.dim, dtype=bool)
    known[x.indices] = True
    corrupted = np.zeros(x.dim, dtype=bool)
    corrupted[mask.indices] = True
    return known[None, :], corrupted[None, :]


def batch_loss(params, x_in, x_target, known, corrupted, weights,
               side=None) -> np.ndarray:
    """Per-sample losses for a batch of dense rows.

    The two squared-error sums (over corrupted and over intact known
    entries) are accumulated separately and only then weighted, so the
    loss is exactly linear in the two weights.
    """
    _, out = _affine_batch(params, x_in, side)
    sq = (out - x_target) ** 2
    pred_sum = np.sum(sq, axis=1, where=corrupted)
    recon_sum = np.sum(sq, axis=1, where=known & ~corrupted)
    total = weights.prediction * pred_sum + weights.reconstruction * recon_sum
    if weights.l2:
        total = total + weights.l2 * (np.sum(params.W1 ** 2) + np.sum(params.W2 ** 2))
    return total


def batch_loss_gradients(params, x_in, x_target, known, corrupted, weights,
                         side=None):
    """Per-sample losses and the gradient summed over the batch."""
    xin = np.hstack([x_in, side]) if params.p_in else x_in
    h = np.tanh(xin @ params.W1.T + params.b1)
    hin = np.hstack([h, side]) if params.p_hidden else h
    out = np.tanh(hin @ params.W2.T + params.b2)

    sq = (out - x_target) ** 2
    pred_sum = np.sum(sq, axis=1, where=corrupted)
    recon_sum = np.sum(sq, axis=1, where=known & ~corrupted)
    losses = weights.prediction * pred_sum + weights.reconstruction * recon_sum

    w = np.where(corrupted, weights.prediction, 0.0)
    w = np.where(known & ~corrupted, weights.reconstruction, w)
    delta2 = 2.0 * w * (out - x_target) * (1.0 - out ** 2)
    g_w2 = delta2.T @ hin
    g_b2 = delta2.sum(axis=0)
    dh = delta2 @ params.W2[:, :params.hidden]
    delta1 = dh * (1.0 - h ** 2)
    g_w1 = delta1.T @ xin
    g_b1 = delta1.sum(axis=0)

    if weights.l2:
        n_samples = x_in.shape[0]
        losses = losses + weights.l2 * (np.sum(params.W1 ** 2) + np.sum(params.W2 ** 2))
        g_w1 += (2.0 * weights.l2 * n_samples) * params.W1
        g_w2 += (2.0 * weights.l2 * n_samples) * params.W2

    return losses, Gradients(g_w1, g_b1, g_w2, g_b2)


def loss(params: AutoencoderParams, x: SparseVector, x_tilde: SparseVector,
         mask: CorruptionMask, weights: LossWeights, side_info=None) -> float:
    """Weighted masked squared error of one corrupted vector, plus L2."""
    side = _check_side(params, side_info)
    _check_mask(x, x_tilde, mask)
    known, corrupted = _masks_row(x, mask)
    batch_side = side[None, :] if side is not None else None
    return float(batch_loss(params, x_tilde.to_dense()[None, :],
                            x.to_dense()[None, :], known, corrupted,
                            weights, batch_side)[0])


def loss_gradients(params: AutoencoderParams, x: SparseVector,
                   x_tilde: SparseVector, mask: CorruptionMask,
                   weights: LossWeights, side_info=None) -> Gradients:
    """Exact gradient of ``loss`` with respect to every parameter.

    No error flows from output units outside the known set; the L2 term
    contributes 2*l2*W to the weight matrices and nothing to the biases.
    """
    side = _check_side(params, side_info)
    _check_mask(x, x_tilde, mask)
    known, corrupted = _masks_row(x, mask)
    batch_side = side[None, :] if side is not None else None
    _, grads = batch_loss_gradients(params, x_tilde.to_dense()[None, :],
                                    x.to_dense()[None, :], known, corrupted,
                                    weights, batch_side)
    return grads


def decompose(params: AutoencoderParams, x: SparseVector):
    """Factor the forward pass as sigma(V u).

    u stacks the hidden activation over the output bias; V is the decoder
    matrix with an identity block appended, so sigma(V u) reproduces
    forward(x) entry for entry.  Requires a network without side columns.
    """
    if params.p_in or params.p_hidden:
        raise ValueError("decompose requires a network without side columns")
    if x.dim != params.n:
        raise ValueError(f"input dim {x.dim} != network dim {params.n}")
    h = np.tanh(params.W1 @ x.to_dense() + params.b1)
    u = np.concatenate([h, params.b2])
    v = np.hstack([params.W2, np.eye(params.n)])
    return u, v
