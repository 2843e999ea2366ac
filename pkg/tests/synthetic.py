"""Planted-structure data for recommender learning checks."""

import numpy as np

from weakrec.corpus import Event, SplitDataset


def planted_rank2(m=200, n=100, frac=0.2, held_out=4, seed=7):
    """Rank-2 utilities; each user's top ``frac`` items are positives.

    Returns ``(split, held, positives)`` where ``held[u]`` are positives kept out
    of training and ``positives[u]`` is the full positive set.
    """
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(m, 2))
    V = rng.normal(size=(n, 2))
    util = U @ V.T
    k = int(round(frac * n))
    positives = [set(np.argsort(-util[u])[:k].tolist()) for u in range(m)]
    train, valid, test, held = [], [], [], []
    for u in range(m):
        pos = rng.permutation(sorted(positives[u])).tolist()
        held.append(pos[:held_out])
        rest = pos[held_out:]
        evs = [Event(it, 1.0, t) for t, it in enumerate(rest)]
        train.append(evs[:-2])
        valid.append(evs[-2])
        test.append(evs[-1])
    split = SplitDataset([f"u{u}" for u in range(m)], [f"i{i}" for i in range(n)], train, valid, test)
    return split, held, positives


def heldout_auc(rec, split, held, positives):
    """Mean AUC of held-out positives against the user's non-positive items."""
    from weakrec.metrics import EvalContext, user_auc

    n = split.n_items
    out = []
    for u in range(split.n_users):
        neg = np.array([i for i in range(n) if i not in positives[u]])
        out.append(user_auc(rec.score(u), EvalContext(np.array(held[u]), neg)))
    return float(np.mean(out))
