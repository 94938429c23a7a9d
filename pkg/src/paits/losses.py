"""Pretext and supervised objectives.

The pretext losses sum over windows and positions and divide by ``count``
(the number of unlabeled series) unless ``reduction="mean"`` is requested,
in which case the divisor is the number of contributing elements.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

GRID_WEIGHTS = ((0, 0), (1, 0), (0, 1), (1, 1), (10, 1), (1, 10))


@dataclass(frozen=True)
class LossWeights:
    forecast: float = 1.0
    reconstruct: float = 0.0

    def __post_init__(self):
        if self.forecast < 0 or self.reconstruct < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def is_null(self) -> bool:
        return self.forecast == 0 and self.reconstruct == 0


def _t(x, like=None):
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if isinstance(like, torch.Tensor) else torch.float64
    return torch.as_tensor(x, dtype=dtype)


def _reduce(total, weight, count, reduction):
    if reduction == "verbatim":
        return total / count
    if reduction == "mean":
        denom = weight.sum()
        return total / denom if denom > 0 else total * 0.0
    raise ValueError(f"unknown reduction {reduction!r}")


def forecast_loss(pred, target, mask, count, *, kind: str = "mse", reduction: str = "verbatim"):
    """Masked squared error (or per-feature BCE on logits for ``kind="bce"``)."""
    pred = _t(pred)
    target, mask = _t(target, pred), _t(mask, pred)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)}, {tuple(target.shape)}, {tuple(mask.shape)}")
    if kind == "mse":
        err = (pred - target) ** 2
    elif kind == "bce":
        err = F.binary_cross_entropy_with_logits(pred, target, reduction="none")
    else:
        raise ValueError(f"unknown forecast loss kind {kind!r}")
    return _reduce((mask * err).sum(), mask, count, reduction)


def reconstruction_loss(pred, values, padding, recon_mask, count, *, reduction: str = "verbatim"):
    """Squared error gated by padding mask ``p`` and reconstruction mask ``c``.

    For the retail variant pass ``pred`` of shape (B, L, V) with logits and
    ``values`` holding the 1-based feature ids; the error per position is then
    the summed per-article BCE against the one-hot feature.
    """
    pred = _t(pred)
    values, padding, recon_mask = _t(values, pred), _t(padding, pred), _t(recon_mask, pred)
    if padding.shape != recon_mask.shape or values.shape != padding.shape:
        raise ValueError("values, padding and reconstruction mask must share a shape")
    if pred.dim() == values.dim():
        if pred.shape != values.shape:
            raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(values.shape)}")
        err = (pred - values) ** 2
    elif pred.dim() == values.dim() + 1 and pred.shape[:-1] == values.shape:
        n_feat = pred.shape[-1]
        ids = values.long().clamp(min=1, max=n_feat) - 1
        onehot = F.one_hot(ids, n_feat).to(pred.dtype)
        err = F.binary_cross_entropy_with_logits(pred, onehot, reduction="none").sum(-1)
    else:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(values.shape)}")
    w = padding * recon_mask
    # where() keeps padded garbage (even inf) out of the sum
    return _reduce(torch.where(w > 0, err, torch.zeros_like(err)).sum(), w, count, reduction)


def joint_loss(forecast_value, reconstruct_value, weights: LossWeights):
    return weights.forecast * forecast_value + weights.reconstruct * reconstruct_value


def supervised_loss(logits, labels):
    """Mean binary cross-entropy over samples (and articles in multilabel mode)."""
    logits = _t(logits)
    labels = _t(labels, logits)
    if logits.shape != labels.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(labels.shape)}")
    if not torch.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return F.binary_cross_entropy_with_logits(logits, labels, reduction="mean")


def info_nce_loss(anchor, positive, temperature: float = 0.1):
    """Cross-entropy of picking positive ``i`` for anchor ``i`` among the batch,
    with cosine similarities divided by the temperature."""
    anchor, positive = _t(anchor), _t(positive)
    if anchor.shape[0] < 2:
        raise ValueError("InfoNCE needs a batch of at least 2")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    na = anchor.norm(dim=-1, keepdim=True)
    npos = positive.norm(dim=-1, keepdim=True)
    if bool((na == 0).any()) or bool((npos == 0).any()):
        raise ValueError("zero-norm embedding")
    logits = (anchor / na) @ (positive / npos).T / temperature
    target = torch.arange(anchor.shape[0])
    return F.cross_entropy(logits, target)
