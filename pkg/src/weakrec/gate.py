"""Weak/strong user classification."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .metrics import UserProfile

AUTO = "auto"


@dataclass(frozen=True)
class GateConfig:
    t_p: float = 0.5
    t_s: float | str = AUTO

    def __post_init__(self):
        if not 0.0 <= self.t_p <= 1.0:
            raise ValueError(f"t_p={self.t_p} outside [0, 1]")
        if self.t_s != AUTO and not (isinstance(self.t_s, (int, float)) and 0.0 <= self.t_s <= 1.0):
            raise ValueError(f"t_s must be 'auto' or a number in [0, 1], got {self.t_s!r}")


@dataclass(frozen=True)
class GateDecision:
    user: int
    below_perf: bool
    above_sparsity: bool

    @property
    def weak(self) -> bool:
        return self.below_perf and self.above_sparsity


def resolve_thresholds(cfg: GateConfig, profiles: Sequence[UserProfile]) -> tuple[float, float]:
    if not profiles:
        raise ValueError("cannot resolve thresholds without profiles")
    if cfg.t_s == AUTO:
        t_s = sum(p.sparsity for p in profiles) / len(profiles)
    else:
        t_s = float(cfg.t_s)
    return float(cfg.t_p), t_s


def classify(profile: UserProfile, t_p: float, t_s: float) -> GateDecision:
    # AUC bound is inclusive, sparsity bound is strict
    return GateDecision(profile.user, profile.auc <= t_p, profile.sparsity > t_s)


def partition(
    profiles: Sequence[UserProfile], cfg: GateConfig
) -> tuple[list[GateDecision], list[GateDecision]]:
    t_p, t_s = resolve_thresholds(cfg, profiles)
    weak, strong = [], []
    for p in profiles:
        d = classify(p, t_p, t_s)
        (weak if d.weak else strong).append(d)
    return weak, strong


GATE_HEADER = ["user", "weak", "auc", "sparsity"]


def write_gate(
    decisions: Iterable[GateDecision],
    profiles: Sequence[UserProfile],
    path: str | Path,
    user_ids: Sequence[str],
) -> None:
    by_user = {p.user: p for p in profiles}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(GATE_HEADER)
        for d in sorted(decisions, key=lambda d: d.user):
            p = by_user[d.user]
            w.writerow([user_ids[d.user], int(d.weak), repr(p.auc), repr(p.sparsity)])
