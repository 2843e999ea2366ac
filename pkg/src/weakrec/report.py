"""Evaluation report, comparison tables and plot-ready CSV data."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metrics import UserProfile

STRATA = ("all", "weak", "non_weak")
STRATUM_LABELS = {"all": "All", "weak": "Weak Users", "non_weak": "Non Weak"}
EMPTY_CELL = "—"


@dataclass(frozen=True)
class StratumStats:
    auc: float
    ndcg10: float
    users: int


def stratum_stats(auc: Sequence[float], ndcg: Sequence[float]) -> StratumStats | None:
    if len(auc) == 0:
        return None
    return StratumStats(float(np.mean(auc)), float(np.mean(ndcg)), len(auc))


def stratify(values: dict[str, np.ndarray], weak_mask: np.ndarray) -> dict[str, StratumStats | None]:
    """Mean AUC/NDCG per stratum from per-user arrays ``values['auc']``, ``values['ndcg10']``."""
    out = {}
    for name, mask in (("all", np.ones_like(weak_mask)), ("weak", weak_mask), ("non_weak", ~weak_mask)):
        out[name] = stratum_stats(values["auc"][mask], values["ndcg10"][mask])
    return out


@dataclass
class EvalReport:
    """Everything ``report.json`` holds.

    ``rs_only`` and ``hybrid`` are evaluated on the same candidate sets;
    ``rs_full_pool`` ranks every unseen item.
    """

    model: str
    backend: str
    guard: str
    candidates: int
    rs_only: dict[str, StratumStats | None]
    hybrid: dict[str, StratumStats | None]
    rs_full_pool: dict[str, StratumStats | None]
    ttest: dict
    tags: dict[str, int]
    gate: dict
    fingerprint: str
    llm: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        data = dict(data)
        for key in ("rs_only", "hybrid", "rs_full_pool"):
            data[key] = {k: (StratumStats(**v) if v is not None else None) for k, v in data[key].items()}
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------


def _cell(stats: StratumStats | None, attr: str) -> str:
    return EMPTY_CELL if stats is None else f"{getattr(stats, attr):.4f}"


def table_rows(reports: Iterable[EvalReport]) -> list[list[str]]:
    """RS rows (candidate and full pool) then the hybrid row, per report; RS rows deduplicated."""
    rows, seen = [], set()
    for rep in reports:
        pool = f"candidates (j={rep.candidates})"
        entries = [
            (rep.model, pool, rep.rs_only),
            (rep.model, "full", rep.rs_full_pool),
            (f"{rep.model}+{rep.backend}", pool, rep.hybrid),
        ]
        if rep.guard != "off":
            entries[2] = (f"{rep.model}+{rep.backend} (guarded)", pool, rep.hybrid)
        for label, p, strata in entries:
            row = [label, p] + [_cell(strata[s], "auc") for s in STRATA] + [_cell(strata[s], "ndcg10") for s in STRATA]
            key = tuple(row)
            if key not in seen:
                seen.add(key)
                rows.append(row)
    return rows


TABLE_HEADER = ["Model", "Pool"] + [f"AUC {STRATUM_LABELS[s]}" for s in STRATA] + [
    f"NDCG@10 {STRATUM_LABELS[s]}" for s in STRATA
]


def emit_table(reports: Iterable[EvalReport] | EvalReport, fmt: str = "markdown") -> str:
    if isinstance(reports, EvalReport):
        reports = [reports]
    rows = table_rows(reports)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        w.writerows(rows)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown table format {fmt!r}")
    lines = ["| " + " | ".join(TABLE_HEADER) + " |", "|" + "---|" * len(TABLE_HEADER)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def emit_markdown(report: EvalReport) -> str:
    """Human-readable summary: comparison table, significance test and routing counts."""
    t = report.ttest
    if t.get("status") == "ok":
        sig = f"t = {t['t']:.4f}, df = {t['df']}, p = {t['p']:.4g} (RS minus hybrid, weak users)"
    elif t.get("mean_difference") is not None:
        sig = f"{t['status']} (mean RS minus hybrid = {t['mean_difference']:.4f})"
    else:
        sig = f"{t.get('status')}"
    g = report.gate
    tags = ", ".join(f"{k}: {v}" for k, v in sorted(report.tags.items()))
    return (
        f"# Ranking quality: {report.model} + {report.backend}\n\n"
        + emit_table(report)
        + f"\nPaired t-test: {sig}\n\n"
        + f"Gate: t_p = {g['t_p']:.4f}, t_s = {g['t_s']:.6f}; "
        + f"{g['total']} users, {g['sparse']} sparse, {g['weak']} weak\n\n"
        + f"Sources: {tags}\n\nConfig fingerprint: {report.fingerprint}\n"
    )


def emit_scatter(profiles: Sequence[UserProfile], user_ids: Sequence[str] | None = None) -> str:
    if not profiles:
        raise ValueError("no profiles")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["user", "sparsity", "auc"])
    for p in profiles:
        w.writerow([user_ids[p.user] if user_ids is not None else p.user, repr(p.sparsity), repr(p.auc)])
    return buf.getvalue()


def histogram_csv(values: Sequence[float], bins: int = 50) -> str:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "count"])
    for k, c in enumerate(counts):
        w.writerow([repr(float(edges[k])), repr(float(edges[k + 1])), int(c)])
    return buf.getvalue()


def emit_histograms(profiles: Sequence[UserProfile], bins: int = 50) -> dict[str, str]:
    """Histograms of ratings per user (full history length) and of sparsity."""
    if not profiles:
        raise ValueError("no profiles")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    # train history plus the validation and test items
    ratings = [p.train_count + 2 for p in profiles]
    return {
        "ratings": histogram_csv(ratings, bins),
        "sparsity": histogram_csv([p.sparsity for p in profiles], bins),
    }


def funnel_rows(total: int, sparse: int, weak: int) -> list[tuple[str, int, float | None]]:
    if not total >= sparse >= weak >= 0:
        raise ValueError(f"funnel needs total >= sparse >= weak >= 0, got {total}, {sparse}, {weak}")

    def reduction(a: int, b: int) -> float | None:
        return None if a == 0 else 100.0 * (1.0 - b / a)

    return [("total", total, None), ("sparse", sparse, reduction(total, sparse)), ("weak", weak, reduction(sparse, weak))]


def emit_weak_funnel(total: int, sparse: int, weak: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "users", "reduction_pct"])
    for stage, n, red in funnel_rows(total, sparse, weak):
        w.writerow([stage, n, "" if red is None else f"{red:.2f}"])
    return buf.getvalue()


def write_figure_data(
    directory: str | Path, profiles: Sequence[UserProfile], user_ids: Sequence[str], gate: dict, bins: int = 50
) -> None:
    directory = Path(directory)
    (directory / "scatter.csv").write_text(emit_scatter(profiles, user_ids), encoding="utf-8")
    for name, text in emit_histograms(profiles, bins).items():
        (directory / f"hist_{name}.csv").write_text(text, encoding="utf-8")
    (directory / "funnel.csv").write_text(
        emit_weak_funnel(gate["total"], gate["sparse"], gate["weak"]), encoding="utf-8"
    )
