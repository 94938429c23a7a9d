"""Noise and masking augmentations for triplet sequences.

Mask convention throughout: ``m = 1`` keeps an observation, ``m = 0`` masks it.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TripletSeries

ELEMENTS = ("t", "v", "f")
POOL_MAGIC = b"PAITSMP1"


@dataclass(frozen=True)
class AugmentationSpec:
    sigma: float = 0.0
    rate: float = 0.0
    sampling: str = "random"  # or "geometric"
    values: tuple[float, float, int] = (0.0, 0.0, 0)  # (a_t, a_v, a_f)
    elements: tuple[str, ...] = ("t", "v", "f")
    interval_width: float = 1.0  # geometric bucket width, in the series' time units
    mean_mask_length: float = 3.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 <= self.rate <= 1:
            raise ValueError("mask rate must be in [0, 1]")
        if self.sampling not in ("random", "geometric"):
            raise ValueError(f"unknown mask sampling {self.sampling!r}")
        if not set(self.elements) <= set(ELEMENTS):
            raise ValueError(f"masked elements must be a subset of {ELEMENTS}")

    @property
    def is_identity(self) -> bool:
        return self.sigma == 0 and self.rate == 0


@dataclass(frozen=True)
class MaskPool:
    masks: np.ndarray  # (pool_size, interval_count) uint8, 1 = keep

    def __post_init__(self):
        if self.masks.ndim != 2 or self.masks.shape[0] < 1 or self.masks.shape[1] < 1:
            raise ValueError("mask pool must be a non-empty 2-d array")

    @property
    def pool_size(self) -> int:
        return self.masks.shape[0]

    @property
    def interval_count(self) -> int:
        return self.masks.shape[1]


# --------------------------------------------------------------------------
# noise


def add_noise(series: TripletSeries, sigma: float, rng: np.random.Generator) -> TripletSeries:
    """Independent N(0, sigma^2) perturbations of times and values."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0 or len(series) == 0:
        return TripletSeries(series.times.copy(), series.values.copy(), series.features.copy())
    n = len(series)
    t = series.times + rng.normal(0.0, sigma, n)
    v = series.values + rng.normal(0.0, sigma, n)
    return TripletSeries(t, v, series.features.copy())


# --------------------------------------------------------------------------
# mask sampling


def sample_mask_bernoulli(length: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= rate <= 1:
        raise ValueError("mask rate must be in [0, 1]")
    return (rng.random(length) >= rate).astype(np.uint8)


def geometric_run_means(rate: float, mean_mask_length: float) -> tuple[float, float]:
    """Mean lengths of masked and unmasked runs giving a stationary masked
    fraction of ``rate``. When the unmasked mean would fall below one
    interval it is pinned to 1 and the masked mean stretched instead."""
    lm_masked = float(mean_mask_length)
    lm_unmasked = lm_masked * (1 - rate) / rate
    if lm_unmasked < 1:
        lm_unmasked = 1.0
        lm_masked = rate / (1 - rate)
    return lm_masked, lm_unmasked


def build_mask_pool(
    interval_count: int,
    rate: float,
    mean_mask_length: float,
    pool_size: int,
    rng: np.random.Generator,
) -> MaskPool:
    """Pre-generate masks with geometric masked/unmasked run lengths.

    Runs are produced by a two-state Markov chain, which is exactly a sequence
    of alternating geometric run lengths. The initial state is masked with
    probability ``rate``.
    """
    if not 0 < rate < 1:
        raise ValueError("geometric masking needs 0 < rate < 1")
    if mean_mask_length < 1:
        raise ValueError("mean_mask_length must be >= 1")
    if interval_count < 1 or pool_size < 1:
        raise ValueError("interval_count and pool_size must be >= 1")
    lm_masked, lm_unmasked = geometric_run_means(rate, mean_mask_length)
    switch = np.array([1.0 / lm_masked, 1.0 / lm_unmasked])  # index by state: 0 masked, 1 kept

    masks = np.empty((pool_size, interval_count), dtype=np.uint8)
    state = (rng.random(pool_size) >= rate).astype(np.uint8)
    masks[:, 0] = state
    for k in range(1, interval_count):
        flip = rng.random(pool_size) < switch[state]
        state = np.where(flip, 1 - state, state).astype(np.uint8)
        masks[:, k] = state
    return MaskPool(masks)


def bucket_index(times: np.ndarray, start: float, interval_width: float) -> np.ndarray:
    return np.floor((np.asarray(times) - start) / interval_width).astype(np.int64)


def apply_geometric_mask(
    series: TripletSeries,
    pool: MaskPool,
    interval_width: float,
    start: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One pooled mask per feature, read off at each observation's time bucket."""
    n = len(series)
    if n == 0:
        return np.ones(0, dtype=np.uint8)
    buckets = bucket_index(series.times, start, interval_width)
    if buckets.min() < 0 or buckets.max() >= pool.interval_count:
        raise ValueError(
            f"observation outside the bucketed window [{start}, "
            f"{start + pool.interval_count * interval_width})"
        )
    feats, inverse = np.unique(series.features, return_inverse=True)
    rows = rng.integers(0, pool.pool_size, size=len(feats))
    return pool.masks[rows[inverse], buckets].astype(np.uint8)


def apply_mask(
    series: TripletSeries,
    m: np.ndarray,
    values: tuple[float, float, int],
    elements=ELEMENTS,
) -> TripletSeries:
    m = np.asarray(m)
    if len(m) != len(series):
        raise ValueError("mask length must match the series")
    a_t, a_v, a_f = values
    keep = m.astype(bool)
    t, v, f = series.times, series.values, series.features
    if "t" in elements:
        t = np.where(keep, t, a_t)
    if "v" in elements:
        v = np.where(keep, v, a_v)
    if "f" in elements:
        f = np.where(keep, f, int(a_f)).astype(np.int64)
    return TripletSeries(np.array(t, dtype=np.float64), np.array(v, dtype=np.float64), np.array(f))


def augment(
    series: TripletSeries,
    spec: AugmentationSpec,
    start: float,
    pools: dict | MaskPool | None,
    rng: np.random.Generator,
) -> tuple[TripletSeries, np.ndarray]:
    """Noise then masking. Returns the augmented series and the mask used.

    Geometric buckets are computed from the pre-noise times so noisy times
    cannot fall outside the window.
    """
    n = len(series)
    noisy = add_noise(series, spec.sigma, rng)
    if spec.rate == 0 or n == 0:
        return noisy, np.ones(n, dtype=np.uint8)
    if spec.sampling == "random":
        m = sample_mask_bernoulli(n, spec.rate, rng)
    else:
        pool = pools.get(spec.rate) if isinstance(pools, dict) else pools
        if pool is None:
            raise ValueError(f"no mask pool available for rate {spec.rate}")
        m = apply_geometric_mask(series, pool, spec.interval_width, start, rng)
    return apply_mask(noisy, m, spec.values, spec.elements), m


# --------------------------------------------------------------------------
# baseline augmentations (contrastive baseline)


def jitter(series: TripletSeries, sigma: float, rng: np.random.Generator) -> TripletSeries:
    if sigma == 0:
        return TripletSeries(series.times.copy(), series.values.copy(), series.features.copy())
    return TripletSeries(
        series.times.copy(), series.values + rng.normal(0.0, sigma, len(series)), series.features.copy()
    )


def scale_values(series: TripletSeries, sigma: float, rng: np.random.Generator) -> TripletSeries:
    if sigma == 0 or len(series) == 0:
        return TripletSeries(series.times.copy(), series.values.copy(), series.features.copy())
    feats, inverse = np.unique(series.features, return_inverse=True)
    factor = rng.normal(1.0, sigma, len(feats))
    return TripletSeries(series.times.copy(), series.values * factor[inverse], series.features.copy())


def permute_blocks(
    series: TripletSeries,
    max_blocks: int,
    rng: np.random.Generator,
    window: tuple[float, float] | None = None,
) -> TripletSeries:
    """Cut ``window = (start, length)`` into equal time blocks and shuffle them."""
    if len(series) == 0:
        return series
    if window is None:
        start = float(series.times.min())
        length = float(series.times.max()) - start
        length = length * (1 + 1e-9) + 1e-12
    else:
        start, length = window
    n_blocks = int(rng.integers(1, max_blocks + 1))
    if n_blocks == 1:
        return TripletSeries(series.times.copy(), series.values.copy(), series.features.copy())
    width = length / n_blocks
    block = np.clip(((series.times - start) // width).astype(np.int64), 0, n_blocks - 1)
    new_pos = rng.permutation(n_blocks)
    t = series.times + (new_pos[block] - block) * width
    return TripletSeries.from_arrays(t, series.values, series.features)


def tstcc_augment(
    series: TripletSeries,
    strength: str,
    rng: np.random.Generator,
    *,
    jitter_sigma: float = 0.1,
    scale_sigma: float = 0.1,
    max_blocks: int = 5,
    window: tuple[float, float] | None = None,
) -> TripletSeries:
    """Strong view: block permutation then jitter. Weak view: jitter then scaling."""
    if strength == "strong":
        return jitter(permute_blocks(series, max_blocks, rng, window), jitter_sigma, rng)
    if strength == "weak":
        return scale_values(jitter(series, jitter_sigma, rng), scale_sigma, rng)
    raise ValueError(f"strength must be 'strong' or 'weak', got {strength!r}")


# --------------------------------------------------------------------------
# pool persistence


def save_mask_pool(pool: MaskPool, path) -> None:
    """Header, two little-endian uint32 (interval_count, pool_size), then
    the masks bit-packed row-major (MSB first, final byte zero-padded)."""
    bits = np.packbits(pool.masks.reshape(-1).astype(np.uint8))
    with open(path, "wb") as fh:
        fh.write(POOL_MAGIC)
        fh.write(struct.pack("<II", pool.interval_count, pool.pool_size))
        fh.write(bits.tobytes())


def load_mask_pool(path) -> MaskPool:
    raw = Path(path).read_bytes()
    if raw[:8] != POOL_MAGIC:
        raise ValueError("not a mask pool file")
    interval_count, pool_size = struct.unpack("<II", raw[8:16])
    total = interval_count * pool_size
    need = math.ceil(total / 8)
    body = np.frombuffer(raw[16:], dtype=np.uint8)
    if body.size != need:
        raise ValueError("truncated mask pool file")
    masks = np.unpackbits(body)[:total].reshape(pool_size, interval_count)
    return MaskPool(masks.astype(np.uint8))
