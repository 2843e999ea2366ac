"""Per-user ranking quality, sparsity index, NDCG and the paired t-test."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import SplitDataset


class DegenerateTestError(ValueError):
    """All paired differences are identical, so the t statistic is undefined."""


@dataclass(frozen=True)
class UserProfile:
    user: int
    sparsity: float
    auc: float
    train_count: int


@dataclass(frozen=True)
class EvalContext:
    relevant: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        if len(self.relevant) == 0 or len(self.negatives) == 0:
            raise ValueError("AUC needs at least one relevant and one negative item")
        if np.intersect1d(self.relevant, self.negatives).size:
            raise ValueError("relevant and negative items overlap")


def user_sparsity(train_count: int, n_items: int) -> float:
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    if not 0 <= train_count <= n_items:
        raise ValueError(f"train_count {train_count} outside [0, {n_items}]")
    return 1.0 - train_count / n_items


def user_auc(scores: np.ndarray, ctx: EvalContext) -> float:
    """Fraction of (relevant, negative) pairs ordered correctly; ties count half.

    ``scores`` is indexed by item. Runs in O((|R| + |neg|) log |neg|).
    """
    scores = np.asarray(scores, dtype=float)
    neg = np.sort(scores[ctx.negatives])
    pos = scores[ctx.relevant]
    below = np.searchsorted(neg, pos, side="left")
    below_or_tied = np.searchsorted(neg, pos, side="right")
    # integer and half-integer sums are exact, so this matches pair enumeration bit for bit
    wins = float(below.sum()) + 0.5 * float((below_or_tied - below).sum())
    return wins / (len(pos) * len(neg))


def list_auc(ranking: Sequence[int], relevant: Iterable[int]) -> float:
    """AUC of an ordered list: share of (relevant, other) pairs with the relevant item first."""
    relevant = set(relevant)
    n_rel = sum(1 for it in ranking if it in relevant)
    n_neg = len(ranking) - n_rel
    if n_rel == 0 or n_neg == 0:
        raise ValueError("list AUC needs at least one relevant and one other item in the list")
    wins = 0
    negs_seen = 0
    for it in ranking:
        if it in relevant:
            wins += n_neg - negs_seen
        else:
            negs_seen += 1
    return wins / (n_rel * n_neg)


def ndcg_at_k(ranking: Sequence[int], relevant: Iterable[int], k: int = 10) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    if not relevant:
        raise ValueError("NDCG needs a non-empty relevant set")
    dcg = sum(1.0 / math.log2(rank + 2) for rank, it in enumerate(ranking[:k]) if it in relevant)
    idcg = sum(1.0 / math.log2(rank + 2) for rank in range(min(len(relevant), k)))
    return dcg / idcg


# ---------------------------------------------------------------------------
# Student t distribution through the regularized incomplete beta function

_BETACF_MAX_ITER = 300
_BETACF_EPS = 1e-15
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, int]:
    """Paired t-test on ``a - b``; returns ``(t, two-sided p, df)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    if np.all(d == d[0]):
        raise DegenerateTestError("degenerate: constant difference")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    return t, t_sf_two_sided(t, df), df


# ---------------------------------------------------------------------------


def eval_context(split: SplitDataset, user: int, target: str = "test") -> EvalContext:
    """Relevant item is the held-out ``target`` item; negatives are all unseen items."""
    if target == "test":
        rel = split.test[user].item
    elif target == "valid":
        rel = split.valid[user].item
    else:
        raise ValueError(f"unknown evaluation target {target!r}")
    mask = np.ones(split.n_items, dtype=bool)
    mask[list(split.seen_items(user))] = False
    return EvalContext(np.array([rel]), np.flatnonzero(mask))


def profile_users(rec, split: SplitDataset, target: str = "test") -> list[UserProfile]:
    profiles = []
    for u in range(split.n_users):
        ctx = eval_context(split, u, target)
        count = len(split.train[u])
        profiles.append(
            UserProfile(u, user_sparsity(count, split.n_items), user_auc(rec.score(u), ctx), count)
        )
    return profiles


PROFILE_HEADER = ["user", "sparsity", "auc", "train_count"]


def write_profiles(profiles: Iterable[UserProfile], path: str | Path, user_ids: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_HEADER)
        for p in profiles:
            w.writerow([user_ids[p.user], repr(p.sparsity), repr(p.auc), p.train_count])


def read_profiles(path: str | Path, user_index: dict[str, int]) -> list[UserProfile]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            UserProfile(user_index[row["user"]], float(row["sparsity"]), float(row["auc"]), int(row["train_count"]))
            for row in csv.DictReader(fh)
        ]
