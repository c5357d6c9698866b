"""Training criteria.

All losses are composed from diffcore primitives, so they return graph
tensors and gradients flow to any differentiable input. Plain numpy
arrays are accepted and treated as constants. Batched inputs (leading
batch axis) are reduced by averaging the per-item loss.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc

__all__ = ["emd2", "td_mse", "joint_loss", "rank_loss"]


def _batch_mean(per_item: dc.Tensor) -> dc.Tensor:
    return per_item if per_item.values.shape == () else dc.mean(per_item)


def emd2(p_hat, p) -> dc.Tensor:
    """Squared earth mover's distance between distributions over ordered classes.

    Computed in closed form as the summed squared difference of the two
    cumulative distribution functions. For a batch, returns the mean over
    items.
    """
    p_hat, p = dc.as_tensor(p_hat), dc.as_tensor(p)
    if p_hat.values.shape != p.values.shape:
        raise ValueError(
            f"distribution shapes differ: {p_hat.values.shape} vs {p.values.shape}"
        )
    d = dc.sub(dc.cumsum(p_hat), dc.cumsum(p))
    per_item = dc.sum(dc.mul(d, d), axis=-1)
    return _batch_mean(per_item)


def td_mse(x_hat, x, weights=None, reduction: str = "sum") -> dc.Tensor:
    """Time-domain squared reconstruction error after zero-mean normalization.

    The per-item value is the squared l2 norm of the mean-removed
    difference. ``reduction="mean"`` divides each item by its length,
    which makes the term comparable across utterance durations when
    balancing against the distribution loss. ``weights`` (0/1 per batch
    item) masks items without a clean reference out of the average.
    """
    x_hat, x = dc.as_tensor(x_hat), dc.as_tensor(x)
    if x_hat.values.shape != x.values.shape:
        raise ValueError(f"waveform shapes differ: {x_hat.values.shape} vs {x.values.shape}")
    a = dc.sub(x_hat, dc.mean(x_hat, axis=-1, keepdims=True))
    b = dc.sub(x, dc.mean(x, axis=-1, keepdims=True))
    d = dc.sub(a, b)
    per_item = dc.sum(dc.mul(d, d), axis=-1)
    if reduction == "mean":
        per_item = dc.scale(per_item, 1.0 / x.values.shape[-1])
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    if weights is not None:
        w = np.asarray(weights, dtype=x_hat.values.dtype)
        if w.shape != per_item.values.shape:
            raise ValueError("weights must have one entry per batch item")
        total = float(np.sum(w))
        if total == 0.0:
            return dc.scale(dc.sum(dc.mul(per_item, dc.constant(w))), 0.0)
        return dc.scale(dc.sum(dc.mul(per_item, dc.constant(w))), 1.0 / total)
    return _batch_mean(per_item)


def joint_loss(x_hat, x, p_hat, p, recon_weight: float = 1.0) -> dc.Tensor:
    """Reconstruction plus distribution loss: recon_weight * td_mse + emd2."""
    return dc.add(dc.scale(td_mse(x_hat, x), recon_weight), emd2(p_hat, p))


def rank_loss(pred_scores, true_scores) -> dc.Tensor:
    """Pairwise ranking surrogate over a batch of scores (off by default in training).

    For every ordered pair with true_i > true_j the penalty is
    softplus(-(pred_i - pred_j)); the loss is the mean over such pairs.
    """
    pred = dc.as_tensor(pred_scores)
    truth = np.asarray(
        true_scores.values if isinstance(true_scores, dc.Tensor) else true_scores,
        dtype=np.float64,
    )
    if pred.values.ndim != 1 or truth.shape != pred.values.shape:
        raise ValueError("rank loss expects matching 1-D score vectors")
    n = truth.size
    if n < 2:
        raise ValueError("rank loss needs at least two items")
    pair_mask = (truth[:, None] > truth[None, :]).astype(pred.values.dtype)
    n_pairs = float(np.sum(pair_mask))
    if n_pairs == 0.0:
        return dc.scale(dc.sum(pred), 0.0)
    diffs = dc.sub(dc.reshape(pred, (n, 1)), dc.reshape(pred, (1, n)))
    penalties = dc.softplus(dc.scale(diffs, -1.0))
    return dc.scale(dc.sum(dc.mul(penalties, dc.constant(pair_mask))), 1.0 / n_pairs)
