"""Pretraining strategies: the option grid, sampling from it, and baselines."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationSpec
from .losses import GRID_WEIGHTS, LossWeights

GRID = {
    "weights": GRID_WEIGHTS,
    "sigma": (0.0, 0.1),
    "mask_rate": (0.0, 0.3, 0.5, 0.8),
    "sampling": ("random", "geometric"),
    "mask_values": ((0.0, 0.0), (-100.0, -100.0)),
    "elements": (("t", "v", "f"), ("v",)),
    "finetune_aug": ("same", "none"),
}


@dataclass(frozen=True)
class Strategy:
    """One point of the search space. ``mask_values`` holds ``(a_t, a_v)``;
    the feature replacement ``a_f`` is always the mask token ``V + 1``."""

    weights: tuple[float, float] = (1.0, 0.0)
    sigma: float = 0.0
    mask_rate: float = 0.0
    sampling: str = "random"
    mask_values: tuple[float, float] = (0.0, 0.0)
    elements: tuple[str, ...] = ("t", "v", "f")
    finetune_aug: str = "none"

    def __post_init__(self):
        if self.finetune_aug not in ("same", "none"):
            raise ValueError("finetune_aug must be 'same' or 'none'")
        LossWeights(*self.weights)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(*self.weights)

    def augmentation(self, n_features: int, interval_width: float = 1.0, mean_mask_length: float = 3.0) -> AugmentationSpec:
        a_t, a_v = self.mask_values
        return AugmentationSpec(
            sigma=self.sigma,
            rate=self.mask_rate,
            sampling=self.sampling,
            values=(a_t, a_v, n_features + 1),
            elements=tuple(self.elements),
            interval_width=interval_width,
            mean_mask_length=mean_mask_length,
        )

    @property
    def name(self) -> str:
        wf, wr = self.weights
        a = "0" if self.mask_values == (0.0, 0.0) else "neg100"
        return (
            f"w{wf:g}-{wr:g}_s{self.sigma:g}_r{self.mask_rate:g}_{self.sampling}"
            f"_a{a}_E{''.join(self.elements)}_fta-{self.finetune_aug}"
        )

    def to_dict(self) -> dict:
        return {
            "weights": [float(x) for x in self.weights],
            "sigma": float(self.sigma),
            "mask_rate": float(self.mask_rate),
            "sampling": self.sampling,
            "mask_values": [float(x) for x in self.mask_values],
            "elements": list(self.elements),
            "finetune_aug": self.finetune_aug,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Strategy":
        return cls(
            weights=tuple(float(x) for x in d["weights"]),
            sigma=float(d["sigma"]),
            mask_rate=float(d["mask_rate"]),
            sampling=d["sampling"],
            mask_values=tuple(float(x) for x in d["mask_values"]),
            elements=tuple(d["elements"]),
            finetune_aug=d["finetune_aug"],
        )


def strategy_grid() -> list[Strategy]:
    """All raw grid tuples in a fixed order (no collapsing of equivalent points)."""
    keys = list(GRID)
    return [Strategy(**dict(zip(keys, combo))) for combo in itertools.product(*GRID.values())]


def grid_size() -> int:
    return int(np.prod([len(v) for v in GRID.values()]))


def sample_strategies(n: int, seed: int) -> list[Strategy]:
    grid = strategy_grid()
    if n > len(grid):
        raise ValueError(f"only {len(grid)} distinct strategies exist, asked for {n}")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    return [grid[i] for i in rng.choice(len(grid), size=n, replace=False)]


NULL_STRATEGY = Strategy(weights=(0.0, 0.0))


@dataclass(frozen=True)
class PretrainPlan:
    """How a method pretrains.

    ``objective`` is one of ``paits`` (forecast + reconstruction),
    ``masked_reconstruction`` (reconstruct masked values only), ``tstcc``
    (forecasting plus contrast between strong/weak views), ``contrastive``
    (InfoNCE between two draws of the strategy augmentation) or ``none``.
    """

    name: str
    objective: str
    strategy: Strategy = field(default=NULL_STRATEGY)
    searched: bool = False


BASELINES = ("strats", "tst", "tstcc", "cl_paits", "none")


def baseline_strategy(name: str) -> PretrainPlan:
    if name == "strats":
        return PretrainPlan("strats", "paits", Strategy(weights=(1.0, 0.0), finetune_aug="none"))
    if name == "tst":
        tst = Strategy(
            weights=(0.0, 1.0),
            mask_rate=0.15,
            sampling="geometric",
            mask_values=(0.0, 0.0),
            elements=("v",),
            finetune_aug="none",
        )
        return PretrainPlan("tst", "masked_reconstruction", tst)
    if name == "tstcc":
        return PretrainPlan("tstcc", "tstcc", Strategy(weights=(1.0, 0.0), finetune_aug="none"))
    if name == "cl_paits":
        return PretrainPlan("cl_paits", "contrastive", Strategy(weights=(0.0, 0.0)), searched=True)
    if name == "none":
        return PretrainPlan("none", "none", NULL_STRATEGY)
    raise ValueError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")
