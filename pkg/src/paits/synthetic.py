"""Synthetic irregular time series with a learnable forecasting signal.

A k-dimensional AR(1) latent state drives every feature through a fixed
linear readout, so the near future of each feature is predictable from the
recent past. Labels depend on the latent mean and its last value inside the
supervised window, which is what a good forecaster has to track anyway.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import TripletSeries


@dataclass
class SynthConfig:
    n_entities: int = 2000
    n_features: int = 10
    latent_dim: int = 3
    rho: float = 0.9
    readout_scale: float = 1.0
    obs_rate: float | list = 0.2  # events per time unit, scalar or per feature
    span: float = 48.0
    supervised_window: float = 24.0
    static_dim: int = 3
    label_weights: list | None = None  # length 2 * latent_dim: [mean part, last part]
    label_scale: float = 2.0
    label_bias: float = 0.0
    noise_std: float = 0.1
    static_noise: float = 1.0
    mode: str = "healthcare"  # or "retail"
    retail_horizon: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")
        rates = np.atleast_1d(np.asarray(self.obs_rate, dtype=float))
        if np.any(rates <= 0):
            raise ValueError("observation rates must be positive")
        if rates.size not in (1, self.n_features):
            raise ValueError("obs_rate must be a scalar or have one entry per feature")
        if self.mode not in ("healthcare", "retail"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.supervised_window > self.span:
            raise ValueError("supervised_window cannot exceed span")
        if self.label_weights is not None and len(self.label_weights) != 2 * self.latent_dim:
            raise ValueError("label_weights must have 2 * latent_dim entries")

    def rates(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.obs_rate, dtype=float), (self.n_features,)).copy()


@dataclass
class RawDataset:
    """Entities with full-length series in raw time units.

    ``labels`` holds a float per entity (binary mode) or a V-dim 0/1 vector
    (retail mode). The supervised input is the series restricted to
    ``[0, supervised_window)``.
    """

    ids: list[str]
    series: list[TripletSeries]
    statics: np.ndarray
    labels: list
    n_features: int
    supervised_window: float
    mode: str = "healthcare"
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def unlabeled(self) -> list[TripletSeries]:
        return self.series

    def labeled(self):
        from .data import LabeledSample

        return [
            LabeledSample(self.statics[i], s.between(0.0, self.supervised_window), self.labels[i], self.ids[i])
            for i, s in enumerate(self.series)
        ]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic(cfg: SynthConfig) -> RawDataset:
    rng = np.random.default_rng(cfg.seed)
    n, v, k = cfg.n_entities, cfg.n_features, cfg.latent_dim
    readout = rng.normal(0.0, cfg.readout_scale, (v, k))
    offsets = rng.normal(0.0, 3.0, v)
    scales = np.exp(rng.normal(0.0, 0.5, v))
    if cfg.label_weights is None:
        w = rng.normal(0.0, 1.0, 2 * k)
        w = cfg.label_scale * w / np.linalg.norm(w)
    else:
        w = np.asarray(cfg.label_weights, dtype=float)
    rates = cfg.rates()

    steps = int(math.ceil(cfg.span)) + 1
    innov = math.sqrt(1 - cfg.rho**2)
    latent = np.empty((n, steps, k))
    latent[:, 0] = rng.normal(0.0, 1.0, (n, k))
    for s in range(1, steps):
        latent[:, s] = cfg.rho * latent[:, s - 1] + innov * rng.normal(0.0, 1.0, (n, k))

    sup_steps = max(1, int(math.ceil(cfg.supervised_window)))
    summary = np.concatenate([latent[:, :sup_steps].mean(axis=1), latent[:, sup_steps - 1]], axis=1)

    statics = rng.normal(0.0, cfg.static_noise, (n, cfg.static_dim))
    d = min(k, cfg.static_dim)
    statics[:, :d] += latent[:, 0, :d]

    series, labels = [], []
    for i in range(n):
        ts, vs, fs = [], [], []
        for j in range(v):
            if cfg.mode == "retail":
                # thinning: intensity rate * 2 * sigmoid(readout . latent)
                cand = rng.poisson(2 * rates[j] * cfg.span)
                t = np.sort(rng.uniform(0.0, cfg.span, cand))
                inten = _sigmoid(latent[i, np.floor(t).astype(int)] @ readout[j])
                t = t[rng.random(cand) < inten]
                val = offsets[j] + scales[j] * rng.normal(0.0, cfg.noise_std, len(t))
            else:
                t = np.sort(rng.uniform(0.0, cfg.span, rng.poisson(rates[j] * cfg.span)))
                signal = latent[i, np.floor(t).astype(int)] @ readout[j]
                val = offsets[j] + scales[j] * (signal + rng.normal(0.0, cfg.noise_std, len(t)))
            ts.append(t)
            vs.append(val)
            fs.append(np.full(len(t), j + 1))
        s = TripletSeries.from_arrays(np.concatenate(ts), np.concatenate(vs), np.concatenate(fs))
        series.append(s)
        if cfg.mode == "retail":
            follow = s.between(cfg.supervised_window, cfg.supervised_window + cfg.retail_horizon)
            y = np.zeros(v)
            y[np.unique(follow.features) - 1] = 1.0
            labels.append(y)
        else:
            p = _sigmoid(summary[i] @ w + cfg.label_bias)
            labels.append(float(rng.random() < p))

    width = len(str(n - 1))
    ids = [f"e{i:0{width}d}" for i in range(n)]
    return RawDataset(ids, series, statics, labels, v, cfg.supervised_window, cfg.mode,
                      extra={"label_weights": w.tolist()})
