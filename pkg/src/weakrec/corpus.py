"""Raw interaction ingestion, k-core filtering and leave-one-out splitting."""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, NamedTuple

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """A raw input line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class RatingRangeError(ParseError):
    pass


class Interaction(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int


class Event(NamedTuple):
    """One entry of a user's history, with the item as a contiguous index."""

    item: int
    rating: float
    timestamp: int


@dataclass
class InteractionLog:
    records: list[Interaction] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class Dataset:
    user_ids: list[str]
    item_ids: list[str]
    histories: list[list[Event]]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return sum(len(h) for h in self.histories)

    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.user_ids)}

    def item_index(self) -> dict[str, int]:
        return {it: i for i, it in enumerate(self.item_ids)}


@dataclass
class SplitDataset:
    """Leave-one-out partition.

    Users are renumbered contiguously over the survivors of the split; the item
    catalog is the full catalog of the source dataset.
    """

    user_ids: list[str]
    item_ids: list[str]
    train: list[list[Event]]
    valid: list[Event]
    test: list[Event]
    dropped_users: int = 0

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def seen_items(self, user: int) -> set[int]:
        """Train, valid and test items of ``user``."""
        seen = {e.item for e in self.train[user]}
        seen.add(self.valid[user].item)
        seen.add(self.test[user].item)
        return seen

    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.user_ids)}

    def item_index(self) -> dict[str, int]:
        return {it: i for i, it in enumerate(self.item_ids)}


def _lines(stream: IO[bytes] | IO[str] | bytes | str) -> Iterable[tuple[int, str]]:
    if isinstance(stream, bytes):
        stream = io.BytesIO(stream)
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    for line_no, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            # ML-1M ships latin-1 text
            raw = raw.decode("latin-1")
        line = raw.rstrip("\r\n")
        if line.strip():
            yield line_no, line


def _check_rating(line_no: int, rating: float) -> float:
    if not 1.0 <= rating <= 5.0:
        raise RatingRangeError(line_no, f"rating {rating} outside [1, 5]")
    return rating


def parse_movielens(stream, sep: str = "::") -> InteractionLog:
    """Parse ``user::item::rating::timestamp`` lines."""
    records = []
    for line_no, line in _lines(stream):
        parts = line.split(sep)
        if len(parts) != 4:
            raise ParseError(line_no, f"expected 4 fields, got {len(parts)}")
        user, item, rating, ts = parts
        try:
            r = float(rating)
            t = int(ts)
        except ValueError as exc:
            raise ParseError(line_no, f"non-numeric field ({exc})") from None
        records.append(Interaction(user.strip(), item.strip(), _check_rating(line_no, r), t))
    return InteractionLog(records)


def parse_amazon_jsonl(
    stream,
    user_field: str = "user",
    item_field: str = "item",
    rating_field: str = "rating",
    time_field: str = "ts",
) -> InteractionLog:
    """Parse one JSON review object per line.

    Field names default to the short form; the 2023 Amazon dumps use
    ``user_id``, ``parent_asin``, ``rating`` and ``timestamp`` (milliseconds,
    which are kept as-is since only their order matters).
    """
    records = []
    for line_no, line in _lines(stream):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(line_no, "expected a JSON object")
        missing = [f for f in (user_field, item_field, rating_field, time_field) if f not in obj]
        if missing:
            raise ParseError(line_no, f"missing field(s) {', '.join(missing)}")
        try:
            r = float(obj[rating_field])
            t = int(obj[time_field])
        except (TypeError, ValueError) as exc:
            raise ParseError(line_no, f"non-numeric field ({exc})") from None
        records.append(
            Interaction(str(obj[user_field]), str(obj[item_field]), _check_rating(line_no, r), t)
        )
    return InteractionLog(records)


def kcore_filter(log: InteractionLog, k: int) -> InteractionLog:
    """Iteratively drop users and items with fewer than ``k`` interactions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    records = list(log.records)
    while True:
        users = Counter(r.user for r in records)
        items = Counter(r.item for r in records)
        kept = [r for r in records if users[r.user] >= k and items[r.item] >= k]
        if len(kept) == len(records):
            return InteractionLog(kept)
        records = kept


def build_dataset(log: InteractionLog) -> Dataset:
    if not log.records:
        raise ValueError("cannot build a dataset from an empty log")
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    latest: dict[tuple[int, int], Event] = {}
    for rec in log.records:
        u = users.setdefault(rec.user, len(users))
        i = items.setdefault(rec.item, len(items))
        prev = latest.get((u, i))
        # later timestamp wins; on equal timestamps the later record wins
        if prev is None or rec.timestamp >= prev.timestamp:
            latest[(u, i)] = Event(i, rec.rating, rec.timestamp)

    histories: list[list[Event]] = [[] for _ in users]
    for (u, _), ev in latest.items():
        histories[u].append(ev)
    for h in histories:
        h.sort(key=lambda e: (e.timestamp, e.item))
    return Dataset(list(users), list(items), histories)


def dataset_stats(ds: Dataset | SplitDataset) -> tuple[int, int, float]:
    """Return ``(users, items, global sparsity)``."""
    if isinstance(ds, SplitDataset):
        total = sum(len(h) + 2 for h in ds.train)
    else:
        total = ds.n_interactions
    m, n = ds.n_users, ds.n_items
    return m, n, 1.0 - total / (m * n)


def loo_split(ds: Dataset) -> SplitDataset:
    """Hold out each user's most recent event as test and the one before as valid.

    Users with fewer than three events are dropped and counted.
    """
    user_ids, train, valid, test = [], [], [], []
    dropped = 0
    for u, hist in enumerate(ds.histories):
        if len(hist) < 3:
            dropped += 1
            continue
        user_ids.append(ds.user_ids[u])
        train.append(list(hist[:-2]))
        valid.append(hist[-2])
        test.append(hist[-1])
    if not user_ids:
        raise ValueError("no user has the 3 interactions needed for a leave-one-out split")
    if dropped:
        logger.warning("loo_split: dropped %d users with fewer than 3 interactions", dropped)
    return SplitDataset(user_ids, list(ds.item_ids), train, valid, test, dropped)


SPLIT_HEADER = ["user", "item", "rating", "timestamp"]


def _fmt_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def write_split(split: SplitDataset, directory: str | Path) -> None:
    """Write ``train.csv``, ``valid.csv``, ``test.csv`` and the ``items.csv`` catalog."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    item_ids = split.item_ids

    def dump(name: str, rows: Iterable[tuple[int, Event]]) -> None:
        with open(directory / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(SPLIT_HEADER)
            for u, ev in rows:
                w.writerow([split.user_ids[u], item_ids[ev.item], _fmt_rating(ev.rating), ev.timestamp])

    dump("train.csv", ((u, ev) for u, hist in enumerate(split.train) for ev in hist))
    dump("valid.csv", enumerate(split.valid))
    dump("test.csv", enumerate(split.test))
    with open(directory / "items.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "item"])
        w.writerows(enumerate(item_ids))


def read_split(directory: str | Path) -> SplitDataset:
    """Inverse of :func:`write_split`.

    Without ``items.csv`` the catalog is rebuilt from first appearance across the
    three files, which loses items that only occurred for dropped users.
    """
    directory = Path(directory)
    items: dict[str, int] = {}
    catalog = directory / "items.csv"
    if catalog.exists():
        with open(catalog, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                items.setdefault(row["item"], len(items))
    users: dict[str, int] = {}
    parts: dict[str, list[tuple[int, Event]]] = {}
    for name in ("train", "valid", "test"):
        rows = []
        with open(directory / f"{name}.csv", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != SPLIT_HEADER:
                raise ParseError(1, f"{name}.csv: expected header {','.join(SPLIT_HEADER)}")
            for line_no, row in enumerate(reader, start=2):
                if len(row) != 4:
                    raise ParseError(line_no, f"{name}.csv: expected 4 fields")
                try:
                    ev_r, ev_t = float(row[2]), int(row[3])
                except ValueError as exc:
                    raise ParseError(line_no, f"{name}.csv: non-numeric field ({exc})") from None
                u = users.setdefault(row[0], len(users))
                i = items.setdefault(row[1], len(items))
                rows.append((u, Event(i, ev_r, ev_t)))
        parts[name] = rows

    m = len(users)
    train: list[list[Event]] = [[] for _ in range(m)]
    for u, ev in parts["train"]:
        train[u].append(ev)
    for h in train:
        h.sort(key=lambda e: (e.timestamp, e.item))
    held = {}
    for name in ("valid", "test"):
        slot: list[Event | None] = [None] * m
        for u, ev in parts[name]:
            if slot[u] is not None:
                raise ParseError(0, f"{name}.csv: user {list(users)[u]} appears twice")
            slot[u] = ev
        if any(ev is None for ev in slot):
            raise ParseError(0, f"{name}.csv: not every user has a held-out item")
        held[name] = slot
    return SplitDataset(list(users), list(items), train, held["valid"], held["test"])


def read_titles(path: str | Path) -> dict[str, str]:
    """Read an ``item,title`` CSV keyed by external item id."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"item", "title"} <= set(reader.fieldnames):
            raise ParseError(1, "title table needs an 'item,title' header")
        return {row["item"]: row["title"] for row in reader}


def write_titles(titles: dict[str, str], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["item", "title"])
        w.writerows(titles.items())


def parse_movielens_titles(stream) -> dict[str, str]:
    """Titles from ML-1M ``movies.dat`` (``id::title::genres``)."""
    titles = {}
    for line_no, line in _lines(stream):
        parts = line.split("::")
        if len(parts) < 2:
            raise ParseError(line_no, "expected id::title::genres")
        titles[parts[0].strip()] = parts[1].strip()
    return titles


def parse_amazon_titles(stream, item_field: str = "parent_asin", title_field: str = "title") -> dict[str, str]:
    """Titles from an Amazon metadata JSON-lines dump."""
    titles = {}
    for line_no, line in _lines(stream):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON ({exc.msg})") from None
        if item_field in obj and obj.get(title_field):
            titles[str(obj[item_field])] = str(obj[title_field])
    return titles


def load_log(path: str | Path, fmt: str, **fields) -> InteractionLog:
    """Open ``path`` and dispatch on ``fmt`` (``movielens`` or ``amazon``)."""
    with open(path, "rb") as fh:
        if fmt == "movielens":
            return parse_movielens(fh)
        if fmt == "amazon":
            return parse_amazon_jsonl(fh, **fields)
    raise ValueError(f"unknown dataset format {fmt!r}")
