"""End-to-end hybrid run: fit, profile, gate, prompt, re-rank, merge, evaluate."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import corpus, fixture, recsys
from .config import RunConfig
from .gate import GateConfig, GateDecision, classify, resolve_thresholds, write_gate
from .llm import (
    AuthError,
    BackendUnavailable,
    Budget,
    BudgetExhausted,
    ConfigurationError,
    Hints,
    LlmError,
    ManagedBackend,
    ResponseCache,
    make_backend,
)
from .metrics import (
    DegenerateTestError,
    UserProfile,
    eval_context,
    list_auc,
    ndcg_at_k,
    paired_ttest,
    profile_users,
    user_auc,
    write_profiles,
)
from .promptgen import PromptInstance, UnparseableResponse, make_prompt, parse_response, write_prompts
from .report import EvalReport, emit_markdown, stratify, write_figure_data

logger = logging.getLogger(__name__)

TAG_RS = "RS"
TAG_LLM = "LLM"
TAG_FALLBACK = "LLM-rejected-fallback-RS"

# errors that end the run instead of falling back to the RS list for one user
_FATAL = (AuthError, ConfigurationError, BackendUnavailable, BudgetExhausted)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class MergedRankings:
    """Final candidate ranking per user, with the RS ranking it replaced."""

    final: list[list[int]]
    rs: list[list[int]]
    tags: list[str]
    failures: int = 0

    def tag_counts(self) -> dict[str, int]:
        counts = {TAG_RS: 0, TAG_LLM: 0, TAG_FALLBACK: 0}
        for t in self.tags:
            counts[t] += 1
        return counts


@dataclass
class RunResult:
    merged: MergedRankings
    report: EvalReport
    profiles: list[UserProfile]
    decisions: list[GateDecision]
    prompts: dict[int, PromptInstance] = field(default_factory=dict)
    backend: ManagedBackend | None = None


def guarded_merge(
    rs_ranking: Sequence[int],
    llm_ranking: Sequence[int],
    quality: Callable[[Sequence[int]], float],
    guard: bool = True,
) -> tuple[list[int], str]:
    """Take the LLM list unless the guard is on and it is not strictly better."""
    if sorted(rs_ranking) != sorted(llm_ranking):
        raise ValueError("RS and LLM rankings cover different candidate sets")
    if not guard or quality(llm_ranking) > quality(rs_ranking):
        return list(llm_ranking), TAG_LLM
    return list(rs_ranking), TAG_FALLBACK


# ---------------------------------------------------------------------------
# loading


def load_split(cfg: RunConfig) -> corpus.SplitDataset:
    d = cfg.dataset
    if d.format == "split":
        return corpus.read_split(d.path)
    if d.format == "fixture":
        log = fixture.load_ratings()
    else:
        log = corpus.load_log(
            d.path,
            d.format,
            **(
                {"user_field": d.user_field, "item_field": d.item_field,
                 "rating_field": d.rating_field, "time_field": d.time_field}
                if d.format == "amazon" else {}
            ),
        )
    filtered = corpus.kcore_filter(log, d.kcore)
    return corpus.loo_split(corpus.build_dataset(filtered))


def load_titles(cfg: RunConfig, split: corpus.SplitDataset) -> dict[int, str]:
    """Titles keyed by item index."""
    d = cfg.dataset
    if d.titles:
        path = Path(d.titles)
        with open(path, "rb") as fh:
            head = fh.read(512)
        if path.suffix == ".csv" or head.startswith(b"item,title"):
            external = corpus.read_titles(path)
        elif head.lstrip().startswith(b"{"):
            with open(path, "rb") as fh:
                external = corpus.parse_amazon_titles(fh, d.title_item_field, d.title_field)
        else:
            with open(path, "rb") as fh:
                external = corpus.parse_movielens_titles(fh)
    elif d.format == "fixture":
        external = fixture.load_titles()
    else:
        external = {it: f"Item {it}" for it in split.item_ids}
    return {i: external[it] for i, it in enumerate(split.item_ids) if it in external}


def build_recommender(cfg: RunConfig, split: corpus.SplitDataset) -> recsys.Recommender:
    r = cfg.recommender
    if r.checkpoint:
        return recsys.load_model(r.checkpoint, split)
    if r.model == "import":
        return recsys.load_scores(r.scores, split)
    if r.model == "itemknn":
        return recsys.fit_itemknn(split, r.k, r.shrink, r.binarize)
    if r.model == "bpr":
        return recsys.fit_bpr(split, r.dim, r.lr, r.reg, r.epochs, cfg.run.seed)
    return recsys.fit_most_popular(split)


def build_backend(cfg: RunConfig, out_dir: Path | None) -> ManagedBackend:
    b = cfg.backend
    backend = make_backend(
        b.name,
        seed=b.seed,
        **(
            dict(base_url=b.url, model=b.model, api_key_env=b.api_key_env, temperature=b.temperature,
                 top_p=b.top_p, max_tokens=b.max_tokens, system_prompt=b.system_prompt or None,
                 attempts=b.attempts, backoff=b.backoff, timeout=b.timeout, max_in_flight=b.max_in_flight)
            if b.name == "http" else {}
        ),
    )
    if b.name != "http":
        backend.max_in_flight = b.max_in_flight
    cache = None
    if b.cache_dir != "none":
        if b.cache_dir:
            cache = ResponseCache(b.cache_dir)
        elif out_dir is not None:
            cache = ResponseCache(out_dir / "llm_cache")
    budget = Budget(b.max_requests or None, b.max_prompt_chars or None)
    return ManagedBackend(backend, cache, budget)


# ---------------------------------------------------------------------------
# stages


def unseen_pool(split: corpus.SplitDataset, user: int, target: str = "test") -> np.ndarray:
    """Items the RS may recommend: everything but train and the other held-out item."""
    mask = np.ones(split.n_items, dtype=bool)
    mask[[ev.item for ev in split.train[user]]] = False
    other = split.valid[user] if target == "test" else split.test[user]
    mask[other.item] = False
    return np.flatnonzero(mask)


def rs_candidate_rankings(rec, split, j: int, target: str = "test") -> list[list[int]]:
    """For each user: held-out item plus the top j-1 RS items, in RS order."""
    return [_candidate_window(recsys.rank(rec, u, unseen_pool(split, u, target)),
                              (split.test if target == "test" else split.valid)[u].item, j)
            for u in range(split.n_users)]


def _candidate_window(full: Sequence[int], held: int, j: int) -> list[int]:
    others = [it for it in full if it != held][: j - 1]
    chosen = set(others) | {held}
    return [it for it in full if it in chosen]


def rs_pass(rec, split, j: int) -> tuple[list[list[int]], dict[str, np.ndarray]]:
    """RS candidate rankings plus full-pool AUC and NDCG@10 against the test item."""
    rankings = []
    auc = np.empty(split.n_users)
    ndcg = np.empty(split.n_users)
    for u in range(split.n_users):
        test = split.test[u].item
        full = recsys.rank(rec, u, unseen_pool(split, u, "test"))
        rankings.append(_candidate_window(full, test, j))
        auc[u] = user_auc(rec.score(u), eval_context(split, u, "test"))
        ndcg[u] = ndcg_at_k(full, {test}, 10)
    return rankings, {"auc": auc, "ndcg10": ndcg}


def _candidate_metrics(rankings: Sequence[Sequence[int]], split) -> dict[str, np.ndarray]:
    auc = np.array([list_auc(r, {split.test[u].item}) for u, r in enumerate(rankings)])
    ndcg = np.array([ndcg_at_k(r, {split.test[u].item}, 10) for u, r in enumerate(rankings)])
    return {"auc": auc, "ndcg10": ndcg}


def weak_ttest(rs_auc: np.ndarray, hybrid_auc: np.ndarray) -> dict:
    """Paired t-test of RS minus hybrid on the weak users.

    Constant differences have no t statistic: all-zero ones are reported as
    ``no change``, others as ``constant difference`` with their sign in
    ``mean_difference``.
    """
    n = len(rs_auc)
    out = {"status": "ok", "t": None, "p": None, "df": None, "mean_difference": None}
    if n < 2:
        out["status"] = "insufficient"
        return out
    d = rs_auc - hybrid_auc
    out["mean_difference"] = float(d.mean())
    try:
        t, p, df = paired_ttest(rs_auc, hybrid_auc)
        out.update(t=t, p=p, df=df)
    except DegenerateTestError:
        out["status"] = "no change" if d[0] == 0 else "constant difference"
        out["df"] = n - 1
    return out


def evaluate(
    merged: MergedRankings,
    split: corpus.SplitDataset,
    decisions: Sequence[GateDecision],
    *,
    full_pool: dict[str, np.ndarray],
    gate_info: dict,
    meta: dict,
) -> EvalReport:
    weak = np.zeros(split.n_users, dtype=bool)
    for d in decisions:
        weak[d.user] = d.weak
    rs = _candidate_metrics(merged.rs, split)
    hybrid = _candidate_metrics(merged.final, split)

    ttest = weak_ttest(rs["auc"][weak], hybrid["auc"][weak])

    return EvalReport(
        model=meta["model"],
        backend=meta["backend"],
        guard=meta["guard"],
        candidates=meta["candidates"],
        rs_only=stratify(rs, weak),
        hybrid=stratify(hybrid, weak),
        rs_full_pool=stratify(full_pool, weak),
        ttest=ttest,
        tags=merged.tag_counts(),
        gate=gate_info,
        fingerprint=meta["fingerprint"],
        llm={"failures": merged.failures},
    )


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_responses(path: Path, responses: dict, split) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (u, kind) in sorted(responses):
            status, text = responses[(u, kind)]
            fh.write(json.dumps({"user": split.user_ids[u], "kind": kind, "status": status, "response": text},
                                ensure_ascii=False) + "\n")


def run_split(
    cfg: RunConfig,
    split: corpus.SplitDataset,
    rec: recsys.Recommender,
    titles: dict[int, str],
    backend: ManagedBackend,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Run every stage after data loading and model fitting."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.snapshot").write_text(cfg.to_ini(), encoding="utf-8")
    j = cfg.prompt.candidates
    guard = cfg.run.guard == "on"

    stage = "profile"
    try:
        profiles = profile_users(rec, split, cfg.gate.target)
        stage = "gate"
        t_p, t_s = resolve_thresholds(GateConfig(cfg.gate.t_p, cfg.gate_threshold_s()), profiles)
        decisions = [classify(p, t_p, t_s) for p in profiles]
        gate_info = {
            "t_p": t_p,
            "t_s": t_s,
            "total": len(decisions),
            "sparse": sum(d.above_sparsity for d in decisions),
            "weak": sum(d.weak for d in decisions),
        }
        if out is not None:
            write_profiles(profiles, out / "profiles.csv", split.user_ids)
            write_gate(decisions, profiles, out / "gate.csv", split.user_ids)
        stage = "candidates"
        rs_rankings, full_pool = rs_pass(rec, split, j)
        weak_users = [d.user for d in decisions if d.weak]
        valid_rankings = {}
        if guard and cfg.run.guard_target == "valid" and weak_users:
            all_valid = rs_candidate_rankings(rec, split, j, "valid")
            valid_rankings = {u: all_valid[u] for u in weak_users}

        stage = "prompt"
        prompts: dict[tuple[int, str], PromptInstance] = {}
        for u in weak_users:
            history = [ev.item for ev in split.train[u]]
            prompts[(u, "test")] = make_prompt(
                u, history, rs_rankings[u], split.test[u].item, titles, split.item_ids, split.user_ids[u],
                j, cfg.prompt.history_cap, cfg.run.seed, cfg.prompt.plural, cfg.prompt.singular,
            )
            if u in valid_rankings:
                prompts[(u, "valid")] = make_prompt(
                    u, history, valid_rankings[u], split.valid[u].item, titles, split.item_ids,
                    split.user_ids[u], j, cfg.prompt.history_cap, cfg.run.seed + 1,
                    cfg.prompt.plural, cfg.prompt.singular,
                )
        if out is not None:
            write_prompts((prompts[k] for k in sorted(prompts)), out / "prompts.jsonl",
                          split.user_ids, split.item_ids)
    except Exception as exc:
        raise PipelineError(stage, exc) from exc

    stage = "llm"
    responses: dict[tuple[int, str], tuple[str, str]] = {}
    parsed = {}

    def call(key):
        inst = prompts[key]
        u, kind = key
        held = split.test[u].item if kind == "test" else split.valid[u].item
        hints = Hints(target=inst.titles[held], rs_order=tuple(inst.titles[it] for it in inst.rs_order))
        return key, backend.complete(inst.text, hints)

    try:
        with ThreadPoolExecutor(max_workers=max(1, backend.max_in_flight)) as pool:
            futures = {pool.submit(call, k): k for k in sorted(prompts)}
            try:
                for fut in as_completed(futures):
                    try:
                        key, text = fut.result()
                    except _FATAL:
                        raise
                    except LlmError as exc:
                        # per-user backend failure: keep the RS list for this user
                        responses[futures[fut]] = ("error", str(exc))
                        continue
                    inst = prompts[key]
                    try:
                        parsed[key] = parse_response(
                            text, inst.candidates, inst.titles, inst.rs_order, key[0], cfg.prompt.fuzzy
                        )
                        responses[key] = ("ok", text)
                    except UnparseableResponse:
                        responses[key] = ("unparseable", text)
            except BaseException:
                for f in futures:
                    f.cancel()
                raise
    except Exception as exc:
        if out is not None:
            _write_responses(out / "responses.jsonl", responses, split)
        raise PipelineError(stage, exc) from exc
    if out is not None:
        _write_responses(out / "responses.jsonl", responses, split)

    stage = "merge"
    final = [list(r) for r in rs_rankings]
    tags = [TAG_RS] * split.n_users
    failures = 0
    for u in weak_users:
        res = parsed.get((u, "test"))
        if res is None:
            failures += 1
            tags[u] = TAG_FALLBACK
            continue
        if guard and cfg.run.guard_target == "valid":
            vres = parsed.get((u, "valid"))
            held = split.valid[u].item
            if vres is None:
                accept = False
            else:
                accept = list_auc(vres.ranking, {held}) > list_auc(valid_rankings[u], {held})
            final[u], tags[u] = (res.ranking, TAG_LLM) if accept else (list(rs_rankings[u]), TAG_FALLBACK)
        else:
            test_item = split.test[u].item
            final[u], tags[u] = guarded_merge(
                rs_rankings[u], res.ranking, lambda r, t=test_item: list_auc(r, {t}), guard
            )
    merged = MergedRankings(final, rs_rankings, tags, failures)

    stage = "evaluate"
    try:
        meta = {
            "model": rec.name,
            "backend": backend.name,
            "guard": "off" if not guard else ("on" if cfg.run.guard_target == "test" else "on-valid"),
            "candidates": j,
            "fingerprint": cfg.fingerprint(),
        }
        report = evaluate(merged, split, decisions, full_pool=full_pool, gate_info=gate_info, meta=meta)
        if out is not None:
            _write_csv(
                out / "merged.csv",
                ["user", "tag", "items"],
                ([split.user_ids[u], tags[u], " ".join(split.item_ids[it] for it in final[u])]
                 for u in range(split.n_users)),
            )
            (out / "report.json").write_text(report.to_json(), encoding="utf-8")
            (out / "report.md").write_text(emit_markdown(report), encoding="utf-8")
            write_figure_data(out, profiles, split.user_ids, gate_info)
    except Exception as exc:
        raise PipelineError(stage, exc) from exc
    return RunResult(merged, report, profiles, decisions,
                     {u: p for (u, kind), p in prompts.items() if kind == "test"}, backend)


def run(cfg: RunConfig, backend: ManagedBackend | None = None, out_dir: str | Path | None = None) -> RunResult:
    """Full run from a config. ``out_dir`` defaults to ``cfg.run.output``."""
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.run.output)
    try:
        split = load_split(cfg)
        titles = load_titles(cfg, split)
    except Exception as exc:
        raise PipelineError("load", exc) from exc
    try:
        rec = build_recommender(cfg, split)
    except Exception as exc:
        raise PipelineError("fit", exc) from exc
    if backend is None:
        try:
            backend = build_backend(cfg, out)
        except Exception as exc:
            raise PipelineError("backend", exc) from exc
    return run_split(cfg, split, rec, titles, backend, out)
