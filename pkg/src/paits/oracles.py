"""Reference implementations used to check the vectorized code.

Loss oracles are plain Python loops, the gradient check uses central finite
differences in double precision, and the mask statistics are computed by
walking the runs of sampled masks.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch

ORIGINS = ("hand", "oracle", "reference")


@dataclass
class OracleCase:
    description: str
    inputs: dict
    expected: Any
    tolerance: float = 1e-6
    origin: str = "oracle"  # hand-checked, loop oracle, or external reference value

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}")
        if isinstance(self.expected, (int, float)) and not self.tolerance > 0:
            raise ValueError("numeric cases need a positive tolerance")

    def to_dict(self) -> dict:
        return asdict(self)


def load_cases(path) -> list[OracleCase]:
    return [OracleCase(**d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


def dump_cases(cases: Sequence[OracleCase], path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cases], indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# losses


def _reduce(total: float, weight: float, count: float, reduction: str) -> float:
    if reduction == "verbatim":
        return total / count
    return total / weight if weight > 0 else 0.0


def forecast_loss_oracle(pred, target, mask, count, reduction: str = "verbatim") -> float:
    """sum_i sum_j m_ij (pred_ij - z_ij)^2 / count, one term at a time."""
    total, weight = 0.0, 0.0
    for i in range(len(pred)):
        for j in range(len(pred[i])):
            m = float(mask[i][j])
            total += m * (float(pred[i][j]) - float(target[i][j])) ** 2
            weight += m
    return _reduce(total, weight, count, reduction)


def reconstruction_loss_oracle(pred, values, padding, recon, count, reduction: str = "verbatim") -> float:
    """sum_i sum_k p_ik c_ik (vhat_ik - v_ik)^2 / count."""
    total, weight = 0.0, 0.0
    for i in range(len(pred)):
        for k in range(len(pred[i])):
            g = float(padding[i][k]) * float(recon[i][k])
            if g:
                total += g * (float(pred[i][k]) - float(values[i][k])) ** 2
            weight += g
    return _reduce(total, weight, count, reduction)


def info_nce_oracle(anchor, positive, temperature: float) -> float:
    a = [np.asarray(x, dtype=np.float64) for x in anchor]
    b = [np.asarray(x, dtype=np.float64) for x in positive]
    total = 0.0
    for i in range(len(a)):
        sims = [float(a[i] @ b[j]) / (np.linalg.norm(a[i]) * np.linalg.norm(b[j])) / temperature for j in range(len(b))]
        top = max(sims)
        lse = top + math.log(sum(math.exp(s - top) for s in sims))
        total += lse - sims[i]
    return total / len(a)


# --------------------------------------------------------------------------
# metrics


def auroc_pairs_oracle(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(pos) * len(neg))


def average_precision_oracle(scores, labels) -> float:
    """Mean over positives of the precision among all scores >= its score."""
    precisions = []
    for s, y in zip(scores, labels):
        if y != 1:
            continue
        above = [yy for ss, yy in zip(scores, labels) if ss >= s]
        precisions.append(sum(above) / len(above))
    return sum(precisions) / len(precisions)


# --------------------------------------------------------------------------
# gradients


def grad_check_errors(
    loss_fn: Callable[[], torch.Tensor],
    params: dict[str, torch.nn.Parameter],
    h: float = 1e-4,
) -> dict[str, float]:
    """Norm-wise relative error between autograd and central differences,
    per parameter tensor. Parameters should be float64."""
    names = list(params)
    tensors = [params[n] for n in names]
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    errors = {}
    with torch.no_grad():
        for name, p, g in zip(names, tensors, analytic):
            g = torch.zeros_like(p) if g is None else g
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                nflat[i] = (up - down) / (2 * h)
            if not (torch.isfinite(numeric).all() and torch.isfinite(g).all()):
                raise FloatingPointError(f"non-finite gradient for {name}")
            scale = max(g.norm().item(), numeric.norm().item())
            errors[name] = 0.0 if scale == 0 else (g - numeric).norm().item() / scale
    return errors


def grad_check(loss_fn, params, h: float = 1e-4) -> float:
    """Worst per-parameter relative gradient error."""
    errors = grad_check_errors(loss_fn, params, h)
    return max(errors.values()) if errors else 0.0


def model_loss_fn(model, batch: dict, path: str) -> Callable[[], torch.Tensor]:
    """Scalar loss through one head of a :class:`~paits.model.PaitsModel`.

    ``path`` is ``forecast``, ``reconstruct`` or ``supervised``. The model is
    put in eval mode so dropout is off.
    """
    from .losses import forecast_loss, reconstruction_loss, supervised_loss

    model.eval()
    statics = batch.get("statics") if model.cfg.static_dim else None

    def fn():
        enc = model.encode(batch["times"], batch["values"], batch["features"], batch["padding"], statics)
        if path == "forecast":
            return forecast_loss(model.forecast(enc), batch["target"], batch["target_mask"], len(batch["times"]))
        if path == "reconstruct":
            return reconstruction_loss(model.reconstruct(enc), batch["target_values"], batch["padding"],
                                       batch["recon"], len(batch["times"]))
        if path == "supervised":
            return supervised_loss(model.predict(enc), batch["label"])
        raise ValueError(f"unknown path {path!r}")

    return fn


# --------------------------------------------------------------------------
# masks


def _runs(row: np.ndarray):
    """(value, length, touches_edge) for each run in a 1-D 0/1 array."""
    change = np.flatnonzero(np.diff(row)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(row)]])
    for s, e in zip(starts, ends):
        yield int(row[s]), int(e - s), s == 0 or e == len(row)


def _mean_se(xs) -> tuple[float, float]:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        return math.nan, math.nan
    se = xs.std(ddof=1) / math.sqrt(xs.size) if xs.size > 1 else math.nan
    return float(xs.mean()), float(se)


@dataclass
class MaskStats:
    draws: int
    masked_fraction: float
    fraction_se: float
    masked_run_mean: float
    masked_run_se: float
    unmasked_run_mean: float
    unmasked_run_se: float


def mask_statistics(
    sampler: Callable[[np.random.Generator], np.ndarray] | np.ndarray,
    draws: int | None = None,
    seed: int = 0,
    *,
    complete_runs_only: bool = True,
) -> MaskStats:
    """Masked fraction and run-length means of keep-masks (0 = masked).

    ``sampler`` is either an array of masks (1-D or rows of a 2-D array) or
    a callable returning one mask per call, invoked until ``draws`` mask
    entries are collected. With ``complete_runs_only`` runs cut by either end
    of a mask are ignored, which keeps geometric run means unbiased.
    """
    if callable(sampler):
        if draws is None:
            raise ValueError("draws is required with a sampler callable")
        rng = np.random.default_rng(seed)
        rows, total = [], 0
        while total < draws:
            m = np.asarray(sampler(rng)).reshape(-1)
            rows.append(m)
            total += m.size
    else:
        arr = np.asarray(sampler)
        rows = [arr] if arr.ndim == 1 else list(arr)
    n = sum(r.size for r in rows)
    masked = sum(int((r == 0).sum()) for r in rows)
    frac = masked / n
    runs = {0: [], 1: []}
    for r in rows:
        for value, length, edge in _runs(np.asarray(r)):
            if not (complete_runs_only and edge):
                runs[value].append(length)
    mm, ms = _mean_se(runs[0])
    um, us = _mean_se(runs[1])
    if len(rows) > 1 and len({r.size for r in rows}) == 1:
        # entries within a mask are correlated; rows are independent
        se = _mean_se([float((r == 0).mean()) for r in rows])[1]
    else:
        se = math.sqrt(frac * (1 - frac) / n)
    return MaskStats(n, frac, se, mm, ms, um, us)


def bucket_consistency_violations(series, m: np.ndarray, start: float, width: float) -> int:
    """Pairs (same feature, same bucket) whose mask entries disagree."""
    buckets = np.floor((series.times - start) / width).astype(np.int64)
    seen: dict[tuple[int, int], int] = {}
    bad = 0
    for f, b, x in zip(series.features.tolist(), buckets.tolist(), np.asarray(m).tolist()):
        key = (f, b)
        if key in seen and seen[key] != x:
            bad += 1
        seen.setdefault(key, x)
    return bad
