"""In-context ranking prompts for weak users and parsing of the model's answer."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "v1"
HISTORY_HEADER = "User {user} watched the following {plural} in order, with the most recent at the top:"
CANDIDATE_HEADER = "Now, rank the following items based on which {singular} the user would like to watch next:"
RESTRICTION = (
    "Only rank the candidate items listed above. Do not mention or recommend any {singular} "
    "that is not in the candidate list."
)
FORMAT_DIRECTIVE = (
    "Return a numbered list of the candidate titles only, one per line, "
    "from the {singular} the user is most likely to watch next to the least likely."
)
_CANDIDATE_MARK = "- "
_CANDIDATE_HEADER_RE = re.compile(r"^Now, rank the following items\b")


class UnparseableResponse(ValueError):
    pass


@dataclass
class PromptInstance:
    user: int
    history: list[int]
    candidates: list[int]
    shuffle_seed: int
    titles: dict[int, str]
    text: str = ""
    rs_order: list[int] = field(default_factory=list)


@dataclass
class RerankResult:
    user: int
    ranking: list[int]
    dropped_hallucinations: int
    appended_missing: int
    raw: str


def user_seed(seed: int, user: int) -> int:
    """Per-user shuffle seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, user]).generate_state(1)[0])


def build_candidates(
    rs_ranking: Sequence[int], test_item: int, j: int = 20, seed: int | None = 0
) -> tuple[list[int], list[int]]:
    """Held-out item plus the top ``j - 1`` other RS items.

    Returns ``(presentation order, RS order)``. The presentation order is a
    seeded permutation of the RS-ordered list; ``seed=None`` skips the shuffle.
    """
    if j < 1:
        raise ValueError("j must be >= 1")
    others = [it for it in rs_ranking if it != test_item][: j - 1]
    if len(others) < j - 1:
        logger.warning("only %d items available for a candidate set of %d", len(others) + 1, j)
    chosen = set(others)
    chosen.add(test_item)
    in_rs = [it for it in rs_ranking if it in chosen]
    if test_item not in in_rs:
        # held-out item missing from the RS pool: it goes last in RS order
        in_rs.append(test_item)
    if seed is None:
        return list(in_rs), in_rs
    perm = np.random.default_rng(seed).permutation(len(in_rs))
    return [in_rs[k] for k in perm], in_rs


def display_titles(items: Sequence[int], titles: Mapping[int, str], item_ids: Sequence[str]) -> dict[int, str]:
    """Titles for ``items``; duplicates among them get the external id appended."""
    out = {}
    for it in items:
        if it not in titles:
            raise KeyError(f"no title for item {item_ids[it]!r}")
        out[it] = " ".join(str(titles[it]).split())
    seen: dict[str, list[int]] = {}
    for it, t in out.items():
        seen.setdefault(normalize(t), []).append(it)
    for group in seen.values():
        if len(group) > 1:
            for it in group:
                out[it] = f"{out[it]} [{item_ids[it]}]"
    return out


def render_prompt(
    instance: PromptInstance,
    user_label: str,
    plural: str = "movies",
    singular: str = "movie",
) -> str:
    if not instance.history:
        raise ValueError(f"user {user_label} has an empty history")
    t = instance.titles
    lines = [HISTORY_HEADER.format(user=user_label, plural=plural)]
    lines += [f"{k}. {t[it]}" for k, it in enumerate(instance.history, start=1)]
    lines += ["", CANDIDATE_HEADER.format(singular=singular)]
    lines += [f"{_CANDIDATE_MARK}{t[it]}" for it in instance.candidates]
    lines += ["", RESTRICTION.format(singular=singular), FORMAT_DIRECTIVE.format(singular=singular)]
    return "\n".join(lines) + "\n"


def make_prompt(
    user: int,
    history: Sequence[int],
    rs_ranking: Sequence[int],
    test_item: int,
    titles: Mapping[int, str],
    item_ids: Sequence[str],
    user_label: str,
    j: int = 20,
    history_cap: int = 50,
    seed: int = 0,
    plural: str = "movies",
    singular: str = "movie",
) -> PromptInstance:
    """Assemble and render the prompt for one user.

    ``history`` is chronological (oldest first); the prompt shows the
    ``history_cap`` most recent items, newest first.
    """
    shown = list(reversed(history))[:history_cap]
    s = user_seed(seed, user)
    candidates, rs_order = build_candidates(rs_ranking, test_item, j, s)
    names = display_titles(candidates, titles, item_ids)
    for it in shown:
        if it not in titles:
            raise KeyError(f"no title for item {item_ids[it]!r}")
        names[it] = " ".join(str(titles[it]).split())
    inst = PromptInstance(user, shown, candidates, s, names, rs_order=rs_order)
    inst.text = render_prompt(inst, user_label, plural, singular)
    return inst


def extract_candidates(prompt: str) -> list[str]:
    """Candidate titles of a rendered prompt, in presentation order."""
    out: list[str] = []
    inside = False
    for line in prompt.splitlines():
        if _CANDIDATE_HEADER_RE.match(line):
            inside = True
            continue
        if inside:
            if not line.startswith(_CANDIDATE_MARK):
                break
            out.append(line[len(_CANDIDATE_MARK):])
    if not out:
        raise UnparseableResponse("prompt has no candidate block")
    return out


# ---------------------------------------------------------------------------
# response parsing

_MARKER_RE = re.compile(r"^\s*(?:[-*•]|\(?\d+[.):\]])\s*")
_DECOR_RE = re.compile(r"^[\s*_\"'`]+|[\s*_\"'`]+$")


def normalize(text: str) -> str:
    return " ".join(text.casefold().split())


def _strip_marker(line: str) -> tuple[str, bool]:
    m = _MARKER_RE.match(line)
    if m is None:
        return line, False
    return line[m.end():], True


def _clean(text: str) -> str:
    return normalize(_DECOR_RE.sub("", text))


def _levenshtein(a: str, b: str, limit: int) -> int:
    if abs(len(a) - len(b)) > limit:
        return limit + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for k, cb in enumerate(b, start=1):
            cur[k] = min(prev[k] + 1, cur[k - 1] + 1, prev[k - 1] + (ca != cb))
        if min(cur) > limit:
            return limit + 1
        prev = cur
    return prev[-1]


def _is_boundary(text: str, pos: int) -> bool:
    return pos < 0 or pos >= len(text) or not text[pos].isalnum()


def _scan(line: str, by_title: Mapping[str, int]) -> list[int]:
    """Candidate titles occurring in ``line``, left to right, longest match first."""
    hits = []
    for title, it in by_title.items():
        start = line.find(title)
        while start != -1:
            end = start + len(title)
            if _is_boundary(line, start - 1) and _is_boundary(line, end):
                hits.append((start, -len(title), end, it))
            start = line.find(title, start + 1)
    hits.sort()
    found, pos = [], 0
    for start, _, end, it in hits:
        if start >= pos:
            found.append(it)
            pos = end
    return found


def parse_response(
    raw: str,
    candidates: Sequence[int],
    titles: Mapping[int, str],
    rs_order: Sequence[int],
    user: int = -1,
    fuzzy: bool = False,
) -> RerankResult:
    """Map a free-text ranking back onto the candidate set.

    Lines naming no candidate are dropped (counted as hallucinations);
    candidates never mentioned are appended in RS order. The result is always
    a permutation of ``candidates``.
    """
    if not candidates:
        raise ValueError("empty candidate set")
    by_title = {normalize(titles[it]): it for it in candidates}
    lines = [ln for ln in raw.splitlines() if ln.strip()]
    marked = [_strip_marker(ln) for ln in lines]
    list_mode = any(has for _, has in marked)

    order: list[int] = []
    used: set[int] = set()
    dropped = 0
    for line, (body, has_marker) in zip(lines, marked):
        stripped = _clean(body)
        exact = next(
            (k for k in (normalize(line), _clean(line), normalize(body), stripped) if k in by_title), None
        )
        if exact is not None:
            hits = [by_title[exact]]
        else:
            hits = _scan(normalize(body), by_title)
            if not hits and fuzzy and stripped:
                dist, best = min(
                    ((_levenshtein(stripped, t, 2), k) for k, t in enumerate(by_title)), default=(3, -1)
                )
                if dist <= 2:
                    hits = [list(by_title.values())[best]]
        if not hits:
            if has_marker or not list_mode:
                dropped += 1
            continue
        for it in hits:
            if it not in used:
                used.add(it)
                order.append(it)
    if not order:
        raise UnparseableResponse("unparseable response: no candidate title found")
    missing = [it for it in rs_order if it not in used]
    missing += [it for it in candidates if it not in used and it not in set(missing)]
    return RerankResult(user, order + missing, dropped, len(missing), raw)


def write_prompts(instances: Iterable[PromptInstance], path: str | Path, user_ids, item_ids) -> None:
    """JSON-lines ``{user, prompt, candidates}`` for offline auditing."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {"user": user_ids[inst.user], "prompt": inst.text,
                   "candidates": [item_ids[it] for it in inst.candidates]}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
