"""Curvature-tiered selection of the stage and terminal weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mpc_assembly import WeightSet
from .trajectory import ReferenceTrajectory


@dataclass(frozen=True)
class TuningTier:
    kappa_threshold: float
    Q: tuple
    S: tuple


@dataclass(frozen=True)
class TuningTable:
    """Weight tiers keyed by peak path curvature.

    ``fallback`` covers curvature below the first threshold and counts as
    tier 0; ``tiers[i]`` is tier ``i + 1`` and covers
    ``[tiers[i].kappa_threshold, tiers[i + 1].kappa_threshold)``.
    """

    fallback_Q: tuple = (1.0, 10.0, 50.0, 50.0)
    fallback_S: tuple = (5.0, 50.0, 250.0, 250.0)
    tiers: tuple = (
        TuningTier(0.5, (1.0, 20.0, 120.0, 120.0), (5.0, 100.0, 600.0, 600.0)),
        TuningTier(2.0, (0.5, 40.0, 250.0, 250.0), (2.5, 200.0, 1250.0, 1250.0)),
    )
    R: tuple = (5.0, 100.0)
    names: tuple = field(default=("straight", "moderate", "sharp"))

    def __post_init__(self):
        th = [t.kappa_threshold for t in self.tiers]
        if any(not (b > a) for a, b in zip(th, th[1:])) or any(t < 0 for t in th):
            raise ValueError("tier thresholds must be non-negative and strictly increasing")
        for Q, S in [(self.fallback_Q, self.fallback_S)] + [(t.Q, t.S) for t in self.tiers]:
            # WeightSet validates shapes and signs.
            WeightSet(Q=Q, S=S, R=self.R)

    @property
    def thresholds(self) -> tuple:
        return tuple(t.kappa_threshold for t in self.tiers)

    def tier_name(self, tier: int) -> str:
        if tier < len(self.names):
            return self.names[tier]
        return f"tier{tier}"

    def weights(self, tier: int) -> WeightSet:
        if tier == 0:
            return WeightSet(Q=self.fallback_Q, S=self.fallback_S, R=self.R)
        t = self.tiers[tier - 1]
        return WeightSet(Q=t.Q, S=t.S, R=self.R)


DEFAULT_TABLE = TuningTable()


def tier_of(kappa: float, table: TuningTable = DEFAULT_TABLE) -> int:
    """Tier index for a curvature value; a value on a threshold takes the sharper tier."""
    if kappa < 0:
        raise ValueError(f"curvature must be >= 0, got {kappa}")
    return int(np.searchsorted(np.asarray(table.thresholds), kappa, side="right"))


def select_weights(kappa_max: float, table: TuningTable = DEFAULT_TABLE) -> WeightSet:
    return table.weights(tier_of(kappa_max, table))


@dataclass(frozen=True)
class PathAnalysis:
    kappa_max: float
    total_curvature: float
    tier: int
    # (first index, last index, tier) runs of consecutive samples.
    segments: tuple


def analyze_path(traj: ReferenceTrajectory, table: TuningTable = DEFAULT_TABLE) -> PathAnalysis:
    tiers = [tier_of(abs(k), table) for k in traj.kappa]
    segments, start = [], 0
    for i in range(1, len(tiers) + 1):
        if i == len(tiers) or tiers[i] != tiers[start]:
            segments.append((start, i - 1, tiers[start]))
            start = i
    kmax = traj.kappa_max
    return PathAnalysis(
        kappa_max=kmax,
        total_curvature=traj.total_curvature,
        tier=tier_of(kmax, table),
        segments=tuple(segments),
    )
