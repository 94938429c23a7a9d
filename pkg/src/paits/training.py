"""Pretraining and finetuning loops with early stopping."""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from .augment import AugmentationSpec, MaskPool, augment, build_mask_pool, tstcc_augment
from .data import LabeledSample, PretrainWindow, pad_series, select_indices
from .losses import LossWeights, forecast_loss, info_nce_loss, reconstruction_loss, supervised_loss
from .model import EncoderConfig, PaitsModel, build_model
from .strategy import NULL_STRATEGY, PretrainPlan, Strategy

EVAL_SEED = 12345


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 32
    finetune_batch_size: int = 32
    max_epochs: int = 30
    finetune_max_epochs: int = 100
    patience: int = 5
    min_delta: float = 1e-5
    eval_every: int = 1
    seed: int = 0
    reduction: str = "verbatim"
    pool_size: int = 100_000
    pool_seed: int = 0
    mean_mask_length: float = 3.0
    temperature: float = 0.1
    contrastive_weight: float = 1.0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        for name in ("lr", "batch_size", "finetune_batch_size", "max_epochs", "finetune_max_epochs", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class DataContext:
    """What the loops need to know about the prepared data.

    ``bucket_start`` and ``bucket_width`` express the geometric-mask time
    buckets in the normalized time units of the series.
    """

    encoder: EncoderConfig
    bucket_start: float = 0.0
    bucket_width: float = 1.0
    interval_count: int = 32
    n_unlabeled_train: int = 1
    n_unlabeled_val: int = 1

    @property
    def n_features(self) -> int:
        return self.encoder.n_features

    @property
    def seqlen(self) -> int:
        return self.encoder.seqlen

    @property
    def forecast_kind(self) -> str:
        return "bce" if self.encoder.task == "multilabel" else "mse"


@dataclass
class History:
    skipped: bool = False
    initial_val_loss: float | None = None
    epochs: list = field(default_factory=list)
    best_val_loss: float | None = None
    best_epoch: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PretrainResult:
    model: PaitsModel
    history: History

    def encoder_state(self) -> dict:
        return self.model.group_state("encoder")


@dataclass
class FinetuneResult:
    model: PaitsModel
    val_loss: float
    history: History


_POOLS: dict = {}


def mask_pools(ctx: DataContext, cfg: TrainConfig, rates) -> dict[float, MaskPool]:
    """Geometric mask pools keyed by rate; built once per process and shared."""
    out = {}
    for r in rates:
        if not 0 < r < 1:
            continue
        key = (r, cfg.mean_mask_length, ctx.interval_count, cfg.pool_size, cfg.pool_seed)
        if key not in _POOLS:
            rng = np.random.default_rng([cfg.pool_seed, int(round(r * 1000))])
            _POOLS[key] = build_mask_pool(ctx.interval_count, r, cfg.mean_mask_length, cfg.pool_size, rng)
        out[r] = _POOLS[key]
    return out


# --------------------------------------------------------------------------
# batching


def _tensors(cols: dict) -> dict:
    out = {}
    for k, v in cols.items():
        arr = np.stack(v)
        out[k] = torch.as_tensor(arr, dtype=torch.long if k in ("features", "target_features") else torch.float32)
    return out


def make_batch(
    items: Sequence,
    ctx: DataContext,
    rng: np.random.Generator,
    spec: AugmentationSpec | None = None,
    pools=None,
    *,
    masked_only: bool = False,
) -> dict:
    """Subsample, augment and pad a list of windows or labeled samples.

    ``values``/``times``/``features`` are the (augmented) model inputs,
    ``target_values``/``target_features`` the originals at the same positions,
    ``recon`` the reconstruction mask ``c`` (all ones, or the masked positions
    when ``masked_only``).
    """
    cols = {k: [] for k in ("times", "values", "features", "padding", "target_values", "target_features", "recon", "statics")}
    for item in items:
        s = item.series
        orig = s.take(select_indices(len(s), ctx.seqlen, rng))
        if spec is not None and not spec.is_identity:
            aug, m = augment(orig, spec, ctx.bucket_start, pools, rng)
        else:
            aug, m = orig, np.ones(len(orig))
        t, v, f, p = pad_series(aug, ctx.seqlen)
        _, tv, tf, _ = pad_series(orig, ctx.seqlen)
        c = np.zeros(ctx.seqlen)
        c[: len(orig)] = (1 - m) if masked_only else 1.0
        cols["times"].append(t)
        cols["values"].append(v)
        cols["features"].append(f)
        cols["padding"].append(p)
        cols["target_values"].append(tv)
        cols["target_features"].append(tf)
        cols["recon"].append(c)
        cols["statics"].append(np.asarray(item.statics, dtype=np.float64))
    batch = _tensors(cols)
    first = items[0]
    if isinstance(first, PretrainWindow):
        batch["target"] = torch.as_tensor(np.stack([w.target for w in items]), dtype=torch.float32)
        batch["target_mask"] = torch.as_tensor(np.stack([w.target_mask for w in items]), dtype=torch.float32)
    elif isinstance(first, LabeledSample):
        batch["label"] = torch.as_tensor(np.stack([np.asarray(x.label, dtype=np.float64) for x in items]), dtype=torch.float32)
    return batch


def tstcc_views(items, ctx: DataContext, rng: np.random.Generator, cfg: TrainConfig) -> tuple[dict, dict]:
    """Strong and weak TS-TCC style views of the same batch."""
    views = []
    for strength in ("strong", "weak"):
        cols = {k: [] for k in ("times", "values", "features", "padding", "statics")}
        for item in items:
            s = item.series
            orig = s.take(select_indices(len(s), ctx.seqlen, rng))
            aug = tstcc_augment(orig, strength, rng)
            t, v, f, p = pad_series(aug, ctx.seqlen)
            for k, x in zip(("times", "values", "features", "padding"), (t, v, f, p)):
                cols[k].append(x)
            cols["statics"].append(np.asarray(item.statics, dtype=np.float64))
        views.append(_tensors(cols))
    return views[0], views[1]


def _encode(model: PaitsModel, batch: dict):
    statics = batch["statics"] if model.cfg.static_dim else None
    return model.encode(batch["times"], batch["values"], batch["features"], batch["padding"], statics)


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, size):
        yield order[i:i + size]


# --------------------------------------------------------------------------
# objectives per pretraining mode


class _PretrainObjective:
    def __init__(self, objective: str, strategy: Strategy, ctx: DataContext, cfg: TrainConfig):
        self.objective = objective
        self.strategy = strategy
        self.ctx = ctx
        self.cfg = cfg
        self.spec = strategy.augmentation(ctx.n_features, ctx.bucket_width, cfg.mean_mask_length)
        needs_pool = self.spec.sampling == "geometric" and self.spec.rate > 0
        self.pools = mask_pools(ctx, cfg, [self.spec.rate]) if needs_pool else None
        self.weights = strategy.loss_weights
        if objective == "masked_reconstruction":
            self.weights = LossWeights(0.0, 1.0)

    def loss(self, model: PaitsModel, items, rng, count: int):
        ctx, cfg = self.ctx, self.cfg
        if self.objective in ("paits", "masked_reconstruction"):
            batch = make_batch(items, ctx, rng, self.spec, self.pools, masked_only=self.objective == "masked_reconstruction")
            enc = _encode(model, batch)
            total = 0.0
            if self.weights.forecast:
                lf = forecast_loss(model.forecast(enc), batch["target"], batch["target_mask"], count,
                                   kind=ctx.forecast_kind, reduction=cfg.reduction)
                total = total + self.weights.forecast * lf
            if self.weights.reconstruct:
                target = batch["target_values"] if model.cfg.reconstruct_target == "value" else batch["target_features"]
                lr = reconstruction_loss(model.reconstruct(enc), target, batch["padding"], batch["recon"], count,
                                         reduction=cfg.reduction)
                total = total + self.weights.reconstruct * lr
            return total
        if self.objective == "tstcc":
            strong, weak = tstcc_views(items, ctx, rng, cfg)
            target = torch.as_tensor(np.stack([w.target for w in items]), dtype=torch.float32)
            mask = torch.as_tensor(np.stack([w.target_mask for w in items]), dtype=torch.float32)
            es, ew = _encode(model, strong), _encode(model, weak)
            lf = 0.5 * (
                forecast_loss(model.forecast(es), target, mask, count, kind=ctx.forecast_kind, reduction=cfg.reduction)
                + forecast_loss(model.forecast(ew), target, mask, count, kind=ctx.forecast_kind, reduction=cfg.reduction)
            )
            if len(items) < 2:
                return lf
            d = model.cfg.embed_dim
            # InfoNCE is a batch mean; rescale to the same per-series sum as L_F
            scale = len(items) / count if cfg.reduction == "verbatim" else 1.0
            lc = info_nce_loss(es.embedding[:, :d], ew.embedding[:, :d], cfg.temperature) * scale
            return lf + cfg.contrastive_weight * lc
        if self.objective == "contrastive":
            a = make_batch(items, ctx, rng, self.spec, self.pools)
            b = make_batch(items, ctx, rng, self.spec, self.pools)
            if len(items) < 2:
                return None
            d = model.cfg.embed_dim
            return info_nce_loss(_encode(model, a).embedding[:, :d], _encode(model, b).embedding[:, :d], cfg.temperature)
        raise ValueError(f"unknown pretraining objective {self.objective!r}")


def _evaluate(model, fn, items, batch_size: int) -> float:
    """Deterministic validation pass (eval mode, fixed augmentation stream)."""
    model.eval()
    rng = np.random.default_rng(EVAL_SEED)
    total = 0.0
    with torch.no_grad():
        for idx in _batches(len(items), batch_size, None):
            val = fn([items[i] for i in idx], rng)
            if val is not None:
                total += float(val)
    return total


def _early_stopping_loop(model, train_step, val_loss, max_epochs: int, cfg: TrainConfig, history: History):
    best = val_loss()
    history.initial_val_loss = best
    best_state = copy.deepcopy(model.state_dict())
    best_epoch, bad = 0, 0
    for epoch in range(1, max_epochs + 1):
        train_loss = train_step()
        if epoch % cfg.eval_every:
            continue
        v = val_loss()
        history.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_loss": v})
        if v < best - cfg.min_delta:
            best, best_state, best_epoch, bad = v, copy.deepcopy(model.state_dict()), epoch, 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    model.load_state_dict(best_state)
    history.best_val_loss = best
    history.best_epoch = best_epoch
    return best


def pretrain(
    model: PaitsModel,
    train: Sequence[PretrainWindow],
    val: Sequence[PretrainWindow],
    strategy: Strategy,
    cfg: TrainConfig,
    ctx: DataContext,
    *,
    objective: str = "paits",
    seed: int | None = None,
) -> PretrainResult:
    """Optimize the pretext objective until validation stops improving.

    A null weighting under the ``paits`` objective (or objective ``none``)
    skips training and returns ``model`` untouched.
    """
    if objective == "none" or (objective == "paits" and strategy.loss_weights.is_null):
        return PretrainResult(model, History(skipped=True))
    if not train:
        raise ValueError("empty pretraining set")
    seed = cfg.seed if seed is None else seed
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    obj = _PretrainObjective(objective, strategy, ctx, cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    n_train = max(ctx.n_unlabeled_train, 1)
    n_val = max(ctx.n_unlabeled_val, 1)

    def train_step():
        model.train()
        total = 0.0
        for idx in _batches(len(train), cfg.batch_size, rng):
            loss = obj.loss(model, [train[i] for i in idx], rng, n_train)
            if loss is None or not torch.is_tensor(loss) or not loss.requires_grad:
                continue
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        return total

    def val_loss():
        return _evaluate(model, lambda items, r: obj.loss(model, items, r, n_val), val, cfg.batch_size)

    history = History()
    _early_stopping_loop(model, train_step, val_loss, cfg.max_epochs, cfg, history)
    model.eval()
    return PretrainResult(model, history)


def supervised_val_loss(model: PaitsModel, samples: Sequence[LabeledSample], ctx: DataContext, batch_size: int = 256) -> float:
    """Mean BCE over ``samples`` with unaugmented inputs."""
    def fn(items, rng):
        batch = make_batch(items, ctx, rng)
        return supervised_loss(model.predict(_encode(model, batch)), batch["label"]) * len(items)

    return _evaluate(model, fn, samples, batch_size) / len(samples)


def finetune(
    encoder_state: dict | None,
    train: Sequence[LabeledSample],
    val: Sequence[LabeledSample],
    cfg: TrainConfig,
    ctx: DataContext,
    *,
    strategy: Strategy = NULL_STRATEGY,
    seed: int | None = None,
) -> FinetuneResult:
    """Fresh prediction head on top of the (optionally pretrained) encoder.

    Pretraining heads are not carried over. With ``strategy.finetune_aug ==
    "same"`` the training inputs get the strategy's augmentation each epoch;
    validation inputs are never augmented.
    """
    if not train:
        raise ValueError("empty labeled training set")
    if not val:
        raise ValueError("empty labeled validation set")
    seed = cfg.seed if seed is None else seed
    model = build_model(ctx.encoder, seed)
    if encoder_state is not None:
        model.encoder.load_state_dict(encoder_state)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    spec, pools = None, None
    if strategy.finetune_aug == "same":
        spec = strategy.augmentation(ctx.n_features, ctx.bucket_width, cfg.mean_mask_length)
        if spec.sampling == "geometric" and spec.rate > 0:
            pools = mask_pools(ctx, cfg, [spec.rate])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    def train_step():
        model.train()
        total = 0.0
        for idx in _batches(len(train), cfg.finetune_batch_size, rng):
            batch = make_batch([train[i] for i in idx], ctx, rng, spec, pools)
            loss = supervised_loss(model.predict(_encode(model, batch)), batch["label"])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        return total / len(train)

    history = History()
    best = _early_stopping_loop(
        model, train_step, lambda: supervised_val_loss(model, val, ctx), cfg.finetune_max_epochs, cfg, history
    )
    model.eval()
    return FinetuneResult(model, best, history)


def predict_proba(model: PaitsModel, samples: Sequence[LabeledSample], ctx: DataContext, batch_size: int = 256) -> np.ndarray:
    model.eval()
    rng = np.random.default_rng(EVAL_SEED)
    out = []
    with torch.no_grad():
        for idx in _batches(len(samples), batch_size, None):
            batch = make_batch([samples[i] for i in idx], ctx, rng)
            out.append(torch.sigmoid(model.predict(_encode(model, batch))).numpy())
    return np.concatenate(out).astype(np.float64)


def run_plan(
    plan: PretrainPlan,
    data,
    cfg: TrainConfig,
    *,
    seed: int,
    strategy: Strategy | None = None,
) -> tuple[PretrainResult, FinetuneResult]:
    """Pretrain per ``plan`` then finetune on the labeled training split."""
    strategy = plan.strategy if strategy is None else strategy
    model = build_model(data.ctx.encoder, seed)
    pre = pretrain(model, data.unlabeled_train, data.unlabeled_val, strategy, cfg, data.ctx,
                   objective=plan.objective, seed=seed)
    state = None if pre.history.skipped else pre.encoder_state()
    ft_strategy = strategy if plan.objective in ("paits", "masked_reconstruction", "contrastive") else NULL_STRATEGY
    ft = finetune(state, data.labeled_train, data.labeled_val, cfg, data.ctx, strategy=ft_strategy, seed=seed)
    return pre, ft


def bucket_interval_count(window_length: float, width: float) -> int:
    return int(math.ceil(window_length / width)) + 1
