"""``weakrec`` command line: prepare, train, profile, gate, run, report.

Exit codes: 0 success, 1 usage, 2 data error, 3 backend error, 4 budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus, fixture, recsys
from .config import ConfigError, RunConfig, describe_keys
from .gate import GateConfig, classify, resolve_thresholds, write_gate
from .llm import BudgetExhausted, LlmError
from .metrics import UserProfile, profile_users, write_profiles
from .pipeline import PipelineError, run as run_pipeline
from .report import EvalReport, emit_markdown, emit_table, write_figure_data

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND, EXIT_BUDGET = 0, 1, 2, 3, 4

ITEMKNN_K_GRID = [10, 50, 100, 200, 250, 300, 400]
ITEMKNN_SHRINK_GRID = [0.0, 0.1, 0.5, 1.0, 2.0]
BPR_LR_GRID = [5e-5, 1e-4, 5e-4, 7e-4, 1e-3, 5e-3, 7e-3]

log = logging.getLogger("weakrec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    if args.format == "fixture":
        log_ = fixture.load_ratings()
        titles = fixture.load_titles()
    else:
        if not args.input:
            raise UsageError("--input is required for this format")
        fields = {}
        if args.format == "amazon":
            fields = dict(user_field=args.user_field, item_field=args.item_field,
                          rating_field=args.rating_field, time_field=args.time_field)
        log_ = corpus.load_log(args.input, args.format, **fields)
        titles = None
        if args.titles:
            with open(args.titles, "rb") as fh:
                if args.format == "movielens":
                    titles = corpus.parse_movielens_titles(fh)
                else:
                    titles = corpus.parse_amazon_titles(fh, args.title_item_field, args.title_field)
    filtered = corpus.kcore_filter(log_, args.kcore)
    ds = corpus.build_dataset(filtered)
    users, items, sparsity = corpus.dataset_stats(ds)
    split = corpus.loo_split(ds)
    out = Path(args.out)
    corpus.write_split(split, out)
    if titles is not None:
        corpus.write_titles({it: titles[it] for it in split.item_ids if it in titles}, out / "titles.csv")
    stats = {"users": users, "items": items, "interactions": ds.n_interactions, "sparsity": sparsity,
             "split_users": split.n_users, "dropped_users": split.dropped_users, "kcore": args.kcore}
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(f"users={users} items={items} interactions={ds.n_interactions} sparsity={sparsity:.4f}")
    return EXIT_OK


def _fit_args(args) -> dict:
    if args.model == "itemknn":
        return {"k": args.k, "shrink": args.shrink, "binarize": args.binarize}
    if args.model == "bpr":
        return {"dim": args.dim, "lr": args.lr, "reg": args.reg, "epochs": args.epochs, "seed": args.seed}
    return {}


def cmd_train(args) -> int:
    split = corpus.read_split(args.split)
    base = _fit_args(args)
    if args.grid and args.model == "itemknn":
        grid = [dict(base, k=k, shrink=s) for k, s in itertools.product(ITEMKNN_K_GRID, ITEMKNN_SHRINK_GRID)]
    elif args.grid and args.model == "bpr":
        grid = [dict(base, lr=lr) for lr in BPR_LR_GRID]
    else:
        grid = [base]
    best, best_auc, rows = None, -1.0, []
    for params in grid:
        rec = recsys.fit(split, args.model, **params)
        auc = float(np.mean([p.auc for p in profile_users(rec, split, "valid")]))
        rows.append({**params, "valid_auc": auc})
        print(" ".join(f"{k}={v}" for k, v in params.items()) + f" valid_auc={auc:.4f}")
        if auc > best_auc:
            best, best_auc = rec, auc
    out = Path(args.out)
    recsys.save_model(best, out, split)
    if len(grid) > 1:
        with open(out / "grid.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_profile(args) -> int:
    split = corpus.read_split(args.split)
    rec = recsys.load_model(args.checkpoint, split)
    profiles = profile_users(rec, split, args.target)
    write_profiles(profiles, args.out, split.user_ids)
    print(f"profiled {len(profiles)} users, mean AUC {np.mean([p.auc for p in profiles]):.4f}")
    return EXIT_OK


def _read_profile_rows(path) -> tuple[list[UserProfile], list[str]]:
    profiles, users = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for k, row in enumerate(csv.DictReader(fh)):
            users.append(row["user"])
            profiles.append(UserProfile(k, float(row["sparsity"]), float(row["auc"]), int(row["train_count"])))
    return profiles, users


def cmd_gate(args) -> int:
    profiles, users = _read_profile_rows(args.profiles)
    t_s = args.t_s if args.t_s == "auto" else float(args.t_s)
    t_p, t_s = resolve_thresholds(GateConfig(args.t_p, t_s), profiles)
    decisions = [classify(p, t_p, t_s) for p in profiles]
    write_gate(decisions, profiles, args.out, users)
    sparse = sum(d.above_sparsity for d in decisions)
    weak = sum(d.weak for d in decisions)
    print(f"t_p={t_p:.4f} t_s={t_s:.6f} users={len(decisions)} sparse={sparse} weak={weak}")
    return EXIT_OK


def build_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for assignment in args.set or []:
        cfg.override(assignment)
    if args.backend:
        cfg.backend.name = args.backend
    if args.guard:
        cfg.run.guard = args.guard
    if args.output:
        cfg.run.output = args.output
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = build_run_config(args)
    result = run_pipeline(cfg)
    sys.stdout.write(emit_table(result.report))
    print(f"run directory: {cfg.run.output}")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for run_dir in args.run:
        run_dir = Path(run_dir)
        rep = EvalReport.load(run_dir / "report.json")
        reports.append(rep)
        (run_dir / "report.md").write_text(emit_markdown(rep), encoding="utf-8")
        if (run_dir / "profiles.csv").exists():
            profiles, users = _read_profile_rows(run_dir / "profiles.csv")
            write_figure_data(run_dir, profiles, users, rep.gate, args.bins)
    out = Path(args.out) if args.out else Path(args.run[0])
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.md").write_text(emit_table(reports), encoding="utf-8")
    (out / "table.csv").write_text(emit_table(reports, "csv"), encoding="utf-8")
    sys.stdout.write(emit_table(reports))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="weakrec", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="parse, k-core filter and leave-one-out split a dataset")
    s.add_argument("--format", choices=["movielens", "amazon", "fixture"], required=True)
    s.add_argument("--input", help="ratings file")
    s.add_argument("--titles", help="movies.dat (movielens) or metadata JSONL (amazon)")
    s.add_argument("--kcore", type=int, default=5)
    s.add_argument("--out", required=True, help="output split directory")
    s.add_argument("--user-field", default="user")
    s.add_argument("--item-field", default="item")
    s.add_argument("--rating-field", default="rating")
    s.add_argument("--time-field", default="ts")
    s.add_argument("--title-item-field", default="parent_asin")
    s.add_argument("--title-field", default="title")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="fit a recommender on a prepared split")
    s.add_argument("--split", required=True)
    s.add_argument("--model", choices=["itemknn", "bpr", "mostpop"], required=True)
    s.add_argument("--k", type=int, default=100)
    s.add_argument("--shrink", type=float, default=0.5)
    s.add_argument("--binarize", action="store_true")
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--lr", type=float, default=7e-3)
    s.add_argument("--reg", type=float, default=0.01)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", action="store_true",
                   help="search k x shrink (itemknn) or lr (bpr) over the standard lists; "
                        "select on mean validation AUC")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("profile", help="per-user AUC and sparsity -> profiles.csv")
    s.add_argument("--split", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--target", choices=["test", "valid"], default="test")
    s.add_argument("--out", default="profiles.csv")
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("gate", help="classify profiled users -> gate.csv")
    s.add_argument("--profiles", required=True)
    s.add_argument("--t-p", type=float, default=0.5)
    s.add_argument("--t-s", default="auto")
    s.add_argument("--out", default="gate.csv")
    s.set_defaults(func=cmd_gate)

    s = sub.add_parser(
        "run",
        help="full hybrid run from a config file",
        epilog="config keys (INI sections; override with --set section.key=value):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    s.add_argument("--config", help="INI config file")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--backend", choices=["mock-oracle", "mock-identity", "mock-random", "http"])
    s.add_argument("--guard", choices=["on", "off"])
    s.add_argument("--output", help="run directory (run.output)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="tables and figure CSVs from run directories")
    s.add_argument("--run", action="append", required=True, help="run directory (repeatable)")
    s.add_argument("--out", help="where the combined table goes (default: first run)")
    s.add_argument("--bins", type=int, default=50)
    s.set_defaults(func=cmd_report)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        return _exit_code(exc.cause) if isinstance(exc.cause, (LlmError, ConfigError)) else EXIT_DATA
    if isinstance(exc, BudgetExhausted):
        return EXIT_BUDGET
    if isinstance(exc, LlmError):
        return EXIT_BACKEND
    if isinstance(exc, (ConfigError, UsageError)):
        return EXIT_USAGE
    return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, PipelineError, LlmError, ValueError, KeyError, OSError) as exc:
        print(f"weakrec: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
