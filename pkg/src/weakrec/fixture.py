"""Bundled 500-user synthetic dataset in MovieLens ``::`` format.

The generator mixes item popularity with per-user genre taste, so most users
are easy for item-to-item similarity. A share of users switch taste for their
last interactions, which leaves the held-out item outside what their history
predicts. These users supply the weak-user population.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import InteractionLog, parse_movielens, parse_movielens_titles

N_USERS = 500
N_ITEMS = 400
N_GENRES = 8
SEED = 20240611

_ADJ = ["Silent", "Crimson", "Last", "Hidden", "Broken", "Golden", "Midnight", "Lost", "Wild", "Frozen",
        "Secret", "Electric", "Distant", "Burning", "Paper", "Iron", "Velvet", "Hollow", "Bright", "Final"]
_NOUN = ["Harbor", "Garden", "Empire", "River", "Signal", "Mirror", "Kingdom", "Voyage", "Circuit", "Orchard",
         "Frontier", "Lantern", "Compass", "Station", "Horizon", "Cathedral", "Canyon", "Archive", "Meadow", "Tide"]
_GENRES = ["Drama", "Comedy", "Action", "Horror", "Romance", "Sci-Fi", "Animation", "Documentary"]


def generate(seed: int = SEED) -> tuple[str, str]:
    """Return ``(ratings.dat text, movies.dat text)``."""
    rng = np.random.default_rng(seed)
    genre = rng.integers(0, N_GENRES, N_ITEMS)
    popularity = rng.zipf(1.6, N_ITEMS).clip(1, 200).astype(float)

    titles = []
    pairs = [(a, n) for a in _ADJ for n in _NOUN]
    order = rng.permutation(len(pairs))[:N_ITEMS]
    for k, idx in enumerate(order):
        a, n = pairs[idx]
        year = 1960 + int(rng.integers(0, 60))
        titles.append(f"{a} {n} ({year})")

    lines = []
    t0 = 956_700_000
    for u in range(N_USERS):
        n = int(np.clip(6 + rng.lognormal(2.7, 0.8), 6, 180))
        taste = rng.dirichlet(np.full(N_GENRES, 0.3))
        drifter = rng.random() < 0.3
        w = popularity ** 0.5 * (taste[genre] + 1e-3)
        p = w / w.sum()
        items = list(rng.choice(N_ITEMS, size=n, replace=False, p=p))
        if drifter:
            # the last two interactions come from a genre the user barely touched
            other = int(np.argmin(taste))
            pool = np.flatnonzero((genre == other) & ~np.isin(np.arange(N_ITEMS), items))
            if len(pool) >= 2:
                tail = rng.choice(pool, size=2, replace=False)
                items = items[:-2] + list(tail)
        t = t0 + int(rng.integers(0, 5_000_000))
        for it in items:
            t += int(rng.integers(60, 200_000))
            like = taste[genre[it]]
            rating = int(np.clip(np.round(2.5 + 6 * like + rng.normal(0, 0.8)), 1, 5))
            lines.append(f"{u + 1}::{it + 1}::{rating}::{t}")
    movies = [f"{i + 1}::{titles[i]}::{_GENRES[genre[i]]}" for i in range(N_ITEMS)]
    return "\n".join(lines) + "\n", "\n".join(movies) + "\n"


def _data_dir():
    return resources.files("weakrec") / "data" / "fixture"


def load_ratings() -> InteractionLog:
    return parse_movielens((_data_dir() / "ratings.dat").read_bytes())


def load_titles() -> dict[str, str]:
    return parse_movielens_titles((_data_dir() / "movies.dat").read_bytes())


def ratings_path() -> Path:
    return Path(str(_data_dir() / "ratings.dat"))


def movies_path() -> Path:
    return Path(str(_data_dir() / "movies.dat"))


def write(directory: str | Path, seed: int = SEED) -> None:
    ratings, movies = generate(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "ratings.dat").write_text(ratings, encoding="latin-1")
    (directory / "movies.dat").write_text(movies, encoding="latin-1")
