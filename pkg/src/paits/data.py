"""Triplet representation of irregular time series and the preprocessing around it.

A series is a variable-length sequence of ``(time, value, feature)`` events.
Feature ids are 1-based (``1..V``); id 0 is reserved for padding and ``V + 1``
for the mask token.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

EPS_STD = 1e-8


class ObservationTriplet(NamedTuple):
    t: float
    v: float
    f: int


@dataclass(frozen=True)
class TripletSeries:
    """Sorted triplet sequence backed by three parallel numpy arrays."""

    times: np.ndarray
    values: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if len(self.values) != n or len(self.features) != n:
            raise ValueError("times, values and features must have equal length")

    @classmethod
    def from_arrays(cls, times, values, features, *, sort: bool = True) -> "TripletSeries":
        t = np.asarray(times, dtype=np.float64).reshape(-1)
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        f = np.asarray(features, dtype=np.int64).reshape(-1)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("times and values must be finite")
        if sort and len(t) > 1:
            # t ascending, then feature id, then input order (lexsort is stable)
            order = np.lexsort((np.arange(len(t)), f, t))
            t, v, f = t[order], v[order], f[order]
        return cls(t, v, f)

    @classmethod
    def from_triplets(cls, triplets: Iterable[Sequence]) -> "TripletSeries":
        rows = [tuple(x) for x in triplets]
        if not rows:
            return cls.empty()
        t, v, f = zip(*rows)
        return cls.from_arrays(t, v, f)

    @classmethod
    def empty(cls) -> "TripletSeries":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        for t, v, f in zip(self.times, self.values, self.features):
            yield ObservationTriplet(float(t), float(v), int(f))

    def take(self, idx) -> "TripletSeries":
        return TripletSeries(self.times[idx], self.values[idx], self.features[idx])

    def between(self, start: float, stop: float) -> "TripletSeries":
        """Observations with ``start <= t < stop``."""
        keep = (self.times >= start) & (self.times < stop)
        return self.take(keep)

    def shift(self, offset: float) -> "TripletSeries":
        return TripletSeries(self.times - offset, self.values.copy(), self.features.copy())

    def equals(self, other: "TripletSeries") -> bool:
        return (
            len(self) == len(other)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.features, other.features)
        )


@dataclass
class LabeledSample:
    statics: np.ndarray
    series: TripletSeries
    label: float | np.ndarray
    sample_id: str = ""


@dataclass(frozen=True)
class WindowingConfig:
    obs_length: float = 24.0
    forecast_length: float = 2.0
    stride: float = 4.0
    start: float = 0.0

    def __post_init__(self):
        if not (self.obs_length > 0 and self.forecast_length > 0 and self.stride > 0):
            raise ValueError("obs_length, forecast_length and stride must be positive")


@dataclass
class PretrainWindow:
    statics: np.ndarray
    series: TripletSeries
    start: float
    target: np.ndarray  # z, length V
    target_mask: np.ndarray  # m, 1 where the feature was seen in the follow-up
    sample_id: str = ""


@dataclass
class PaddedBatch:
    times: np.ndarray
    values: np.ndarray
    features: np.ndarray
    padding: np.ndarray  # p: 1 = real observation
    statics: np.ndarray


# --------------------------------------------------------------------------
# normalization


@dataclass
class NormalizationStats:
    time_mean: float
    time_std: float
    value_mean: np.ndarray  # index j-1 for feature j
    value_std: np.ndarray
    degenerate: np.ndarray  # bool per feature, std was clamped
    static_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    static_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_features(self) -> int:
        return len(self.value_mean)

    def normalize_series(self, s: TripletSeries) -> TripletSeries:
        idx = s.features - 1
        t = (s.times - self.time_mean) / self.time_std
        v = (s.values - self.value_mean[idx]) / self.value_std[idx]
        return TripletSeries(t, v, s.features.copy())

    def denormalize_series(self, s: TripletSeries) -> TripletSeries:
        idx = s.features - 1
        t = s.times * self.time_std + self.time_mean
        v = s.values * self.value_std[idx] + self.value_mean[idx]
        return TripletSeries(t, v, s.features.copy())

    def normalize_time(self, t):
        return (np.asarray(t, dtype=np.float64) - self.time_mean) / self.time_std

    def time_scale(self, width: float) -> float:
        """A duration expressed in normalized time units."""
        return width / self.time_std

    def normalize_targets(self, z: np.ndarray, m: np.ndarray) -> np.ndarray:
        out = (z - self.value_mean) / self.value_std
        return np.where(m > 0, out, 0.0)

    def normalize_statics(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        if d.size == 0 or self.static_mean.size == 0:
            return d.copy()
        return (d - self.static_mean) / self.static_std

    def to_dict(self) -> dict:
        return {
            "time_mean": self.time_mean,
            "time_std": self.time_std,
            "value_mean": self.value_mean.tolist(),
            "value_std": self.value_std.tolist(),
            "degenerate": self.degenerate.tolist(),
            "static_mean": self.static_mean.tolist(),
            "static_std": self.static_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            time_mean=float(d["time_mean"]),
            time_std=float(d["time_std"]),
            value_mean=np.asarray(d["value_mean"], dtype=np.float64),
            value_std=np.asarray(d["value_std"], dtype=np.float64),
            degenerate=np.asarray(d["degenerate"], dtype=bool),
            static_mean=np.asarray(d.get("static_mean", []), dtype=np.float64),
            static_std=np.asarray(d.get("static_std", []), dtype=np.float64),
        )


def fit_normalization(
    series: Sequence[TripletSeries], n_features: int, statics: np.ndarray | None = None
) -> NormalizationStats:
    """Global time mean/std and per-feature value mean/std (population std)."""
    nonempty = [s for s in series if len(s)]
    if not nonempty:
        raise ValueError("cannot normalize an empty dataset")
    t = np.concatenate([s.times for s in nonempty])
    v = np.concatenate([s.values for s in nonempty])
    f = np.concatenate([s.features for s in nonempty])
    if f.min() < 1 or f.max() > n_features:
        raise ValueError(f"feature ids must lie in [1, {n_features}]")

    counts = np.bincount(f - 1, minlength=n_features).astype(np.float64)
    sums = np.bincount(f - 1, weights=v, minlength=n_features)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / counts, 0.0)
        sq = np.bincount(f - 1, weights=(v - mean[f - 1]) ** 2, minlength=n_features)
        std = np.where(counts > 0, np.sqrt(sq / np.maximum(counts, 1)), 0.0)
    degenerate = std < EPS_STD
    std = np.where(degenerate, EPS_STD, std)

    t_std = float(t.std())
    if t_std < EPS_STD:
        t_std = EPS_STD

    s_mean = s_std = np.zeros(0)
    if statics is not None and np.asarray(statics).size:
        st = np.asarray(statics, dtype=np.float64)
        s_mean = st.mean(axis=0)
        s_std = np.maximum(st.std(axis=0), EPS_STD)
    return NormalizationStats(float(t.mean()), t_std, mean, std, degenerate, s_mean, s_std)


def normalize_dataset(
    series: Sequence[TripletSeries],
    statics: np.ndarray | None,
    n_features: int,
    stats: NormalizationStats | None = None,
) -> tuple[list[TripletSeries], np.ndarray | None, NormalizationStats]:
    """Z-score a collection. Pass ``stats`` fitted on the training split to
    normalize validation/test data identically."""
    if stats is None:
        stats = fit_normalization(series, n_features, statics)
    out = [stats.normalize_series(s) for s in series]
    st = None if statics is None else stats.normalize_statics(statics)
    return out, st, stats


# --------------------------------------------------------------------------
# pretraining windows


def build_pretrain_windows(
    series: TripletSeries,
    statics: np.ndarray,
    cfg: WindowingConfig,
    n_features: int,
    *,
    binary_targets: bool = False,
    sample_id: str = "",
) -> list[PretrainWindow]:
    """Slide an observation window over ``series`` at stride intervals.

    Targets are the first value of each feature seen in the follow-up window
    ``[t_w + l_o, t_w + l_o + l_f)``. With ``binary_targets`` (retail mode) the
    target is a purchase indicator and every feature counts as observed.
    Windows without any observation are dropped.
    """
    if len(series) == 0:
        return []
    last = series.times[-1]
    windows = []
    k = 0
    while True:
        t_w = cfg.start + k * cfg.stride
        if t_w > last:
            break
        k += 1
        inp = series.between(t_w, t_w + cfg.obs_length)
        if len(inp) == 0:
            continue
        follow = series.between(t_w + cfg.obs_length, t_w + cfg.obs_length + cfg.forecast_length)
        z = np.zeros(n_features)
        m = np.zeros(n_features)
        # follow is sorted by time, so the first hit per feature is the earliest
        for t, v, f in zip(follow.times, follow.values, follow.features):
            if m[f - 1] == 0:
                m[f - 1] = 1.0
                z[f - 1] = 1.0 if binary_targets else v
        if binary_targets:
            m = np.ones(n_features)
        windows.append(
            PretrainWindow(np.asarray(statics, dtype=np.float64), inp, float(t_w), z, m, sample_id)
        )
    return windows


# --------------------------------------------------------------------------
# fixed-length arrays


def select_indices(n: int, seqlen: int, rng: np.random.Generator | None) -> np.ndarray:
    """Positions kept by :func:`pad_or_subsample` (sorted, so series order holds)."""
    if seqlen < 1:
        raise ValueError("seqlen must be >= 1")
    if n <= seqlen:
        return np.arange(n)
    if rng is None:
        raise ValueError("an rng is required to subsample a long series")
    return np.sort(rng.choice(n, size=seqlen, replace=False))


def pad_series(series: TripletSeries, seqlen: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = len(series)
    if n > seqlen:
        raise ValueError("series longer than seqlen; subsample first")
    t = np.zeros(seqlen)
    v = np.zeros(seqlen)
    f = np.zeros(seqlen, dtype=np.int64)
    p = np.zeros(seqlen)
    t[:n] = series.times
    v[:n] = series.values
    f[:n] = series.features
    p[:n] = 1.0
    return t, v, f, p


def pad_or_subsample(series: TripletSeries, seqlen: int, rng: np.random.Generator | None = None):
    """Return ``(times, values, features, p)`` of length ``seqlen``.

    Short series are zero-padded at the end; long ones are down-sampled
    uniformly without replacement and kept in series order.
    """
    idx = select_indices(len(series), seqlen, rng)
    return pad_series(series.take(idx), seqlen)


def default_seqlen(series: Sequence[TripletSeries], percentile: float = 99.0) -> int:
    lengths = np.array([len(s) for s in series])
    if lengths.size == 0:
        raise ValueError("no series")
    return max(1, int(math.ceil(np.percentile(lengths, percentile))))


# --------------------------------------------------------------------------
# labels


def subsample_labels(samples: Sequence[LabeledSample], fraction: float, seed: int) -> list[LabeledSample]:
    """Seeded, label-stratified subset. Multilabel samples are drawn uniformly."""
    if not (0 < fraction <= 1):
        raise ValueError("fraction must be in (0, 1]")
    samples = list(samples)
    if fraction == 1.0:
        return samples
    rng = np.random.default_rng(seed)
    n = len(samples)
    if n == 0:
        return []
    if np.ndim(samples[0].label) > 0:
        k = max(1, int(round(fraction * n)))
        keep = np.sort(rng.choice(n, size=k, replace=False))
        return [samples[i] for i in keep]

    labels = np.array([float(s.label) for s in samples])
    keep = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        k = int(round(fraction * len(members)))
        if k:
            keep.append(rng.choice(members, size=k, replace=False))
    if not keep:
        keep = [rng.choice(n, size=1)]
    keep = np.sort(np.concatenate(keep))
    return [samples[i] for i in keep]
