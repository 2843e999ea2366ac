"""Classical recommenders behind a common ``score(user) -> item scores`` interface."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import SplitDataset

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

CHECKPOINT_VERSION = 1
MISSING_SCORE = -np.inf


class Recommender:
    name = "base"

    def __init__(self, n_users: int, n_items: int):
        self.n_users = n_users
        self.n_items = n_items

    def score(self, user: int) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}


def interaction_matrix(split: SplitDataset, binarize: bool = False) -> sp.csr_matrix:
    """User x item matrix of train ratings (or ones when ``binarize``)."""
    rows, cols, vals = [], [], []
    for u, hist in enumerate(split.train):
        for ev in hist:
            rows.append(u)
            cols.append(ev.item)
            vals.append(1.0 if binarize else ev.rating)
    return sp.csr_matrix(
        (np.array(vals, dtype=float), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(split.n_users, split.n_items),
    )


def rank(rec: Recommender, user: int, pool: Sequence[int]) -> list[int]:
    """Sort ``pool`` by descending score; ties go to the lower item index."""
    pool = np.asarray(pool, dtype=np.int64)
    if pool.size == 0:
        raise ValueError("cannot rank an empty pool")
    scores = rec.score(user)[pool]
    return pool[np.lexsort((pool, -scores))].tolist()


# ---------------------------------------------------------------------------


class MostPopular(Recommender):
    name = "mostpop"

    def __init__(self, counts: np.ndarray, n_users: int):
        super().__init__(n_users, len(counts))
        self.counts = counts.astype(float)

    def score(self, user: int) -> np.ndarray:
        return self.counts.copy()


def fit_most_popular(split: SplitDataset) -> MostPopular:
    if not any(split.train):
        raise ValueError("empty train set")
    counts = np.zeros(split.n_items)
    for hist in split.train:
        for ev in hist:
            counts[ev.item] += 1
    return MostPopular(counts, split.n_users)


# ---------------------------------------------------------------------------


def cosine_similarity(X: sp.spmatrix, shrink: float = 0.0, rows: slice | None = None) -> np.ndarray:
    """Shrunk cosine between item columns of ``X``, diagonal zeroed.

    ``rows`` restricts the output to a block of items (rows of the item x item
    matrix) so large catalogs can be processed piecewise.
    """
    X = sp.csc_matrix(X, dtype=float)
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=0)).ravel())
    rows = rows or slice(0, X.shape[1])
    block = X[:, rows]
    dots = np.asarray((block.T @ X).todense())
    denom = norms[rows][:, None] * norms[None, :] + shrink
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    idx = np.arange(rows.start, rows.stop or X.shape[1])
    sim[np.arange(len(idx)), idx] = 0.0
    return sim


class ItemKnnModel(Recommender):
    name = "itemknn"

    def __init__(self, similarity: sp.csr_matrix, X: sp.csr_matrix, k: int, shrink: float, binarize: bool):
        super().__init__(X.shape[0], X.shape[1])
        self.similarity = similarity
        self.X = X
        self.k = k
        self.shrink = shrink
        self.binarize = binarize

    def score(self, user: int) -> np.ndarray:
        r_u = self.X.getrow(user).toarray().ravel()
        return np.asarray(self.similarity @ r_u).ravel()

    def params(self) -> dict:
        return {"k": self.k, "shrink": self.shrink, "binarize": self.binarize}


def _truncate_rows(sim: np.ndarray, k: int, row_offset: int):
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    r = np.repeat(np.arange(sim.shape[0]), order.shape[1])
    c = order.ravel()
    v = sim[r, c]
    keep = v > 0
    return r[keep] + row_offset, c[keep], v[keep]


def fit_itemknn(
    split: SplitDataset, k: int = 100, shrink: float = 0.0, binarize: bool = False, block: int = 1024
) -> ItemKnnModel:
    if k < 1:
        raise ValueError("k must be >= 1")
    if shrink < 0:
        raise ValueError("shrink must be >= 0")
    X = interaction_matrix(split, binarize)
    n = X.shape[1]
    rows, cols, vals = [], [], []
    for start in range(0, n, block):
        stop = min(start + block, n)
        r, c, v = _truncate_rows(cosine_similarity(X, shrink, slice(start, stop)), k, start)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    S = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return ItemKnnModel(S, X, k, shrink, binarize)


# ---------------------------------------------------------------------------


class BprModel(Recommender):
    name = "bpr"

    def __init__(self, P: np.ndarray, Q: np.ndarray, b: np.ndarray, lr: float, reg: float, epochs: int, seed: int):
        super().__init__(P.shape[0], Q.shape[0])
        self.P, self.Q, self.b = P, Q, b
        self.lr, self.reg, self.epochs, self.seed = lr, reg, epochs, seed

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    def score(self, user: int) -> np.ndarray:
        return self.Q @ self.P[user] + self.b

    def params(self) -> dict:
        return {"dim": self.dim, "lr": self.lr, "reg": self.reg, "epochs": self.epochs, "seed": self.seed}


def bpr_log_likelihood(p_u, q_i, q_j, b_i, b_j) -> float:
    """ln sigmoid(x_ui - x_uj) for one (user, positive, negative) triple."""
    x = float(np.dot(p_u, q_i - q_j) + b_i - b_j)
    return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))


def bpr_gradient(p_u, q_i, q_j, b_i, b_j) -> dict[str, np.ndarray | float]:
    """Gradient of :func:`bpr_log_likelihood` w.r.t. each parameter of the triple."""
    x = float(np.dot(p_u, q_i - q_j) + b_i - b_j)
    g = _sigmoid_neg(x)
    return {
        "p_u": g * (np.asarray(q_i) - np.asarray(q_j)),
        "q_i": g * np.asarray(p_u),
        "q_j": -g * np.asarray(p_u),
        "b_i": g,
        "b_j": -g,
    }


@njit(cache=True)
def _sigmoid_neg(x):
    # sigmoid(-x) without overflow
    if x >= 0:
        e = math.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(x))


@njit(cache=True)
def _bpr_epoch(P, Q, b, users, pos, neg, lr, reg):
    d = P.shape[1]
    for n in range(users.shape[0]):
        u, i, j = users[n], pos[n], neg[n]
        x = b[i] - b[j]
        for f in range(d):
            x += P[u, f] * (Q[i, f] - Q[j, f])
        g = _sigmoid_neg(x)
        for f in range(d):
            pu, qi, qj = P[u, f], Q[i, f], Q[j, f]
            P[u, f] = pu + lr * (g * (qi - qj) - reg * pu)
            Q[i, f] = qi + lr * (g * pu - reg * qi)
            Q[j, f] = qj + lr * (-g * pu - reg * qj)
        b[i] += lr * (g - reg * b[i])
        b[j] += lr * (-g - reg * b[j])


def sample_triples(
    users: np.ndarray, items: np.ndarray, n_items: int, rng: np.random.Generator, size: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (user, positive, negative) triples.

    Positives are drawn uniformly from the observed pairs; negatives uniformly
    from the items the user has not interacted with.
    """
    size = len(users) if size is None else size
    observed = np.unique(users.astype(np.int64) * n_items + items)
    pick = rng.integers(0, len(users), size)
    u, i = users[pick], items[pick]
    j = rng.integers(0, n_items, size)
    clash = np.isin(u.astype(np.int64) * n_items + j, observed)
    while clash.any():
        j[clash] = rng.integers(0, n_items, int(clash.sum()))
        clash = np.isin(u.astype(np.int64) * n_items + j, observed)
    return u, i, j


def fit_bpr(
    split: SplitDataset,
    dim: int = 64,
    lr: float = 7e-3,
    reg: float = 0.01,
    epochs: int = 30,
    seed: int = 0,
    init_std: float = 0.01,
) -> BprModel:
    """SGD on the pairwise log-sigmoid objective with uniform negative sampling.

    One epoch draws as many triples as there are train interactions.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if lr <= 0:
        raise ValueError("lr must be > 0")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    users = np.array([u for u, h in enumerate(split.train) for _ in h], dtype=np.int64)
    items = np.array([ev.item for h in split.train for ev in h], dtype=np.int64)
    if users.size == 0:
        raise ValueError("every user has an empty train history")
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, init_std, (split.n_users, dim))
    Q = rng.normal(0.0, init_std, (split.n_items, dim))
    b = np.zeros(split.n_items)
    for _ in range(epochs):
        u, i, j = sample_triples(users, items, split.n_items, rng)
        _bpr_epoch(P, Q, b, u, i, j, lr, reg)
    return BprModel(P, Q, b, lr, reg, epochs, seed)


# ---------------------------------------------------------------------------


class ScoreImport(Recommender):
    """Scores computed elsewhere; pairs absent from the file score ``-inf``."""

    def __init__(self, scores: np.ndarray, name: str = "import"):
        super().__init__(*scores.shape)
        self.scores = scores
        self.name = name

    def score(self, user: int) -> np.ndarray:
        return self.scores[user]


def load_scores(path: str | Path, split: SplitDataset, name: str | None = None) -> ScoreImport:
    users, items = split.user_index(), split.item_index()
    scores = np.full((split.n_users, split.n_items), MISSING_SCORE)
    seen = np.zeros_like(scores, dtype=bool)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user", "item", "score"]:
            raise ValueError("score file needs a 'user,item,score' header")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValueError(f"expected 3 fields at line {line_no}")
            if row[0] not in users:
                raise ValueError(f"unknown user {row[0]!r} at line {line_no}")
            if row[1] not in items:
                raise ValueError(f"unknown item {row[1]!r} at line {line_no}")
            u, i = users[row[0]], items[row[1]]
            if seen[u, i]:
                raise ValueError(f"duplicate score for ({row[0]}, {row[1]}) at line {line_no}")
            try:
                scores[u, i] = float(row[2])
            except ValueError:
                raise ValueError(f"non-numeric score at line {line_no}") from None
            seen[u, i] = True
    return ScoreImport(scores, name or Path(path).stem)


# ---------------------------------------------------------------------------


def fit(split: SplitDataset, model: str, **params) -> Recommender:
    """Fit a recommender by name (``mostpop``, ``itemknn``, ``bpr``)."""
    if model == "mostpop":
        return fit_most_popular(split)
    if model == "itemknn":
        return fit_itemknn(split, **params)
    if model == "bpr":
        return fit_bpr(split, **params)
    raise ValueError(f"unknown model {model!r}")


def save_model(rec: Recommender, directory: str | Path, split: SplitDataset) -> None:
    """Write a versioned checkpoint: ``meta.json`` plus model-specific files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"version": CHECKPOINT_VERSION, "model": rec.name, "params": rec.params(),
            "n_users": rec.n_users, "n_items": rec.n_items}
    if isinstance(rec, BprModel):
        with open(directory / "user_factors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user"] + [f"f{k}" for k in range(rec.dim)])
            for u, row in enumerate(rec.P):
                w.writerow([split.user_ids[u]] + [repr(float(x)) for x in row])
        with open(directory / "item_factors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["item", "bias"] + [f"f{k}" for k in range(rec.dim)])
            for i, row in enumerate(rec.Q):
                w.writerow([split.item_ids[i], repr(float(rec.b[i]))] + [repr(float(x)) for x in row])
    elif isinstance(rec, ItemKnnModel):
        sp.save_npz(directory / "similarity.npz", rec.similarity)
    elif not isinstance(rec, MostPopular):
        raise ValueError(f"cannot checkpoint a {rec.name} model")
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(directory: str | Path, split: SplitDataset) -> Recommender:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    if (meta["n_users"], meta["n_items"]) != (split.n_users, split.n_items):
        raise ValueError("checkpoint does not match the split's user/item counts")
    params = meta["params"]
    if meta["model"] == "mostpop":
        return fit_most_popular(split)
    if meta["model"] == "itemknn":
        S = sp.load_npz(directory / "similarity.npz").tocsr()
        X = interaction_matrix(split, params["binarize"])
        return ItemKnnModel(S, X, params["k"], params["shrink"], params["binarize"])
    if meta["model"] == "bpr":
        users, items = split.user_index(), split.item_index()
        P = np.zeros((split.n_users, params["dim"]))
        Q = np.zeros((split.n_items, params["dim"]))
        b = np.zeros(split.n_items)
        with open(directory / "user_factors.csv", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                P[users[row[0]]] = [float(x) for x in row[1:]]
        with open(directory / "item_factors.csv", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                i = items[row[0]]
                b[i] = float(row[1])
                Q[i] = [float(x) for x in row[2:]]
        return BprModel(P, Q, b, params["lr"], params["reg"], params["epochs"], params["seed"])
    raise ValueError(f"unknown checkpoint model {meta['model']!r}")
