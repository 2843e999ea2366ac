import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_split
from synthetic import heldout_auc, planted_rank2
from weakrec import recsys
from weakrec.metrics import profile_users


# -- MostPopular -----------------------------------------------------------------


def test_mostpop_ranks_by_count():
    s = make_split([[0, 0, 5, 6], [0, 1, 5, 6]], 8)
    s.train[0] = s.train[0][:1]  # one event of item 0 for user 0
    rec = recsys.fit_most_popular(s)
    assert rec.score(0)[0] == 2 and rec.score(0)[1] == 1
    assert recsys.rank(rec, 0, range(8))[0] == 0
    assert recsys.rank(rec, 0, range(8)) == recsys.rank(rec, 1, range(8))


def test_mostpop_equal_counts_tie_on_index():
    s = make_split([[3, 1, 6, 7], [2, 0, 6, 7]], 8)
    rec = recsys.fit_most_popular(s)
    assert recsys.rank(rec, 0, [3, 2, 1, 0]) == [0, 1, 2, 3]
    # never-seen item scores zero and goes last
    assert rec.score(0)[5] == 0.0 and recsys.rank(rec, 0, [5, 3])[-1] == 5


# -- rank ------------------------------------------------------------------------


class _Fixed(recsys.Recommender):
    def __init__(self, scores):
        super().__init__(1, len(scores))
        self.s = np.asarray(scores, dtype=float)

    def score(self, user):
        return self.s


def test_rank_examples():
    assert recsys.rank(_Fixed([0.2, 0.9]), 0, [0, 1]) == [1, 0]
    assert recsys.rank(_Fixed([1.0, 1.0, 1.0]), 0, [2, 0, 1]) == [0, 1, 2]
    assert recsys.rank(_Fixed([0.3]), 0, [0]) == [0]
    with pytest.raises(ValueError):
        recsys.rank(_Fixed([0.3]), 0, [])


# -- ItemKNN ---------------------------------------------------------------------


def test_cosine_examples():
    X = sp.csr_matrix(np.array([[5.0, 5.0, 0.0], [0.0, 5.0, 0.0]]))
    S = recsys.cosine_similarity(X)
    assert S[0, 1] == pytest.approx(25 / (5 * math.sqrt(50)), abs=1e-12)
    assert S[0, 1] == pytest.approx(0.7071, abs=1e-4)
    assert recsys.cosine_similarity(X, shrink=1.0)[0, 1] == pytest.approx(0.6876, abs=1e-4)
    # zero-norm column: similarity 0 rather than a division error
    assert np.all(S[2] == 0) and np.all(S[:, 2] == 0)
    assert np.all(np.diag(S) == 0)


def test_cosine_identical_and_disjoint():
    X = sp.csr_matrix(np.array([[3.0, 3.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 2.0]]))
    S = recsys.cosine_similarity(X)
    assert S[0, 1] == pytest.approx(1.0)
    assert S[0, 2] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 2))
def test_cosine_symmetric_and_blockwise(seed, shrink):
    rng = np.random.default_rng(seed)
    X = sp.random(12, 9, density=0.3, random_state=rng, data_rvs=lambda k: rng.integers(1, 6, k))
    S = recsys.cosine_similarity(X, shrink)
    assert np.allclose(S, S.T, atol=1e-12)
    assert S.min() >= 0 and S.max() <= 1 + 1e-12
    top, bottom = recsys.cosine_similarity(X, shrink, slice(0, 4)), recsys.cosine_similarity(X, shrink, slice(4, 9))
    assert np.allclose(np.vstack([top, bottom]), S, atol=1e-12)


def test_itemknn_truncation_and_scores(fixture_split):
    rec = recsys.fit_itemknn(fixture_split, k=5, shrink=0.5, block=128)
    S = rec.similarity
    assert max(np.diff(S.indptr)) <= 5
    assert S.diagonal().sum() == 0
    dense = recsys.cosine_similarity(recsys.interaction_matrix(fixture_split), 0.5)
    row = 17
    kept = S.getrow(row).toarray().ravel()
    assert set(np.flatnonzero(kept)) <= set(np.argsort(-dense[row], kind="stable")[:5])
    # score(u)[i] = sum_j sim(i, j) r_uj
    r_u = np.zeros(fixture_split.n_items)
    for ev in fixture_split.train[3]:
        r_u[ev.item] = ev.rating
    assert np.allclose(rec.score(3), S @ r_u)


def test_itemknn_block_size_irrelevant(fixture_split):
    a = recsys.fit_itemknn(fixture_split, k=20, shrink=0.1, block=64)
    b = recsys.fit_itemknn(fixture_split, k=20, shrink=0.1, block=1024)
    assert (a.similarity != b.similarity).nnz == 0


def test_itemknn_validation(fixture_split):
    with pytest.raises(ValueError):
        recsys.fit_itemknn(fixture_split, k=0)
    with pytest.raises(ValueError):
        recsys.fit_itemknn(fixture_split, shrink=-1)


def test_itemknn_beats_chance(fixture_split, fixture_itemknn):
    aucs = [p.auc for p in profile_users(fixture_itemknn, fixture_split)]
    assert np.mean(aucs) > 0.6


# -- BPR ---------------------------------------------------------------------------


def test_bpr_epoch_zero_is_init(fixture_split):
    a = recsys.fit_bpr(fixture_split, dim=8, epochs=0, seed=3)
    b = recsys.fit_bpr(fixture_split, dim=8, epochs=0, seed=3)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)
    assert np.all(a.b == 0)
    assert abs(a.P.std() - 0.01) < 0.002
    aucs = [p.auc for p in profile_users(a, fixture_split)]
    assert abs(np.mean(aucs) - 0.5) < 0.05


def test_bpr_deterministic(fixture_split):
    a = recsys.fit_bpr(fixture_split, dim=8, epochs=2, seed=1)
    b = recsys.fit_bpr(fixture_split, dim=8, epochs=2, seed=1)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q) and np.array_equal(a.b, b.b)
    assert all(np.isfinite(a.score(u)).all() for u in range(5))


def test_bpr_validation(fixture_split):
    for bad in ({"dim": 0}, {"lr": 0.0}, {"epochs": -1}):
        with pytest.raises(ValueError):
            recsys.fit_bpr(fixture_split, **bad)


def _fd_check(rng):
    d = 6
    p, qi, qj = rng.normal(size=d), rng.normal(size=d), rng.normal(size=d)
    bi, bj = rng.normal(), rng.normal()
    grad = recsys.bpr_gradient(p, qi, qj, bi, bj)
    h = 1e-6
    params = {"p_u": p, "q_i": qi, "q_j": qj}
    worst = 0.0
    for name, vec in params.items():
        for f in range(d):
            up = {k: v.copy() for k, v in params.items()}
            dn = {k: v.copy() for k, v in params.items()}
            up[name][f] += h
            dn[name][f] -= h
            num = (recsys.bpr_log_likelihood(up["p_u"], up["q_i"], up["q_j"], bi, bj)
                   - recsys.bpr_log_likelihood(dn["p_u"], dn["q_i"], dn["q_j"], bi, bj)) / (2 * h)
            ana = grad[name][f]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-3))
    ll = recsys.bpr_log_likelihood
    num_bi = (ll(p, qi, qj, bi + h, bj) - ll(p, qi, qj, bi - h, bj)) / (2 * h)
    num_bj = (ll(p, qi, qj, bi, bj + h) - ll(p, qi, qj, bi, bj - h)) / (2 * h)
    for num, ana in ((num_bi, grad["b_i"]), (num_bj, grad["b_j"])):
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-3))
    return worst


def test_bpr_gradient_finite_differences():
    rng = np.random.default_rng(0)
    assert max(_fd_check(rng) for _ in range(20)) < 1e-4


def test_bpr_log_likelihood_stable():
    z = np.zeros(2)
    assert recsys.bpr_log_likelihood(z, z, z, 800.0, 0.0) == 0.0
    assert recsys.bpr_log_likelihood(z, z, z, -800.0, 0.0) == -800.0


def test_bpr_epoch_is_gradient_step():
    rng = np.random.default_rng(1)
    P, Q, b = rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
    g = recsys.bpr_gradient(P[1], Q[0], Q[2], b[0], b[2])
    P2, Q2, b2 = P.copy(), Q.copy(), b.copy()
    recsys._bpr_epoch(P2, Q2, b2, np.array([1]), np.array([0]), np.array([2]), 0.1, 0.0)
    assert np.allclose(P2[1], P[1] + 0.1 * g["p_u"])
    assert np.allclose(Q2[0], Q[0] + 0.1 * g["q_i"])
    assert np.allclose(Q2[2], Q[2] + 0.1 * g["q_j"])
    assert b2[0] == pytest.approx(b[0] + 0.1 * g["b_i"]) and b2[2] == pytest.approx(b[2] + 0.1 * g["b_j"])


def test_sample_triples_negatives_unseen():
    users = np.array([0, 0, 1, 1, 1])
    items = np.array([0, 1, 2, 3, 0])
    u, i, j = recsys.sample_triples(users, items, 5, np.random.default_rng(0), size=500)
    seen = {(a, c) for a, c in zip(users, items)}
    assert all((a, c) in seen for a, c in zip(u, i))
    assert not any((a, c) in seen for a, c in zip(u, j))


def test_bpr_learns_planted_structure():
    split, held, positives = planted_rank2()
    before = recsys.fit_bpr(split, dim=16, lr=0.05, reg=0.01, epochs=0, seed=0)
    after = recsys.fit_bpr(split, dim=16, lr=0.05, reg=0.01, epochs=50, seed=0)
    assert heldout_auc(after, split, held, positives) > 0.85

    # training-pair accuracy goes up
    rng = np.random.default_rng(5)
    users = np.array([u for u, h in enumerate(split.train) for _ in h])
    items = np.array([e.item for h in split.train for e in h])
    u, i, j = recsys.sample_triples(users, items, split.n_items, rng, size=5000)

    def acc(m):
        return np.mean(np.einsum("nd,nd->n", m.P[u], m.Q[i] - m.Q[j]) + m.b[i] - m.b[j] > 0)

    assert acc(after) > acc(before)


# -- import & checkpoints ----------------------------------------------------------------


def test_load_scores(tmp_path, tiny_split):
    path = tmp_path / "s.csv"
    path.write_text("user,item,score\nu0,i1,0.9\n")
    rec = recsys.load_scores(path, tiny_split)
    assert rec.score(0)[1] == 0.9
    assert np.isneginf(np.delete(rec.score(0), 1)).all()
    assert rec.name == "s"


@pytest.mark.parametrize(
    "body, message",
    [
        ("user,item,score\nu0,i1,0.9\nu0,zz,0.1\n", "unknown item 'zz' at line 3"),
        ("user,item,score\nnobody,i1,0.9\n", "unknown user 'nobody' at line 2"),
        ("user,item,score\nu0,i1,0.9\nu0,i1,0.8\n", "duplicate"),
        ("u,i,s\n", "header"),
    ],
)
def test_load_scores_errors(tmp_path, tiny_split, body, message):
    path = tmp_path / "s.csv"
    path.write_text(body)
    with pytest.raises(ValueError, match=message):
        recsys.load_scores(path, tiny_split)


@pytest.mark.parametrize("model, params", [
    ("itemknn", {"k": 10, "shrink": 0.5}),
    ("bpr", {"dim": 4, "epochs": 1}),
    ("mostpop", {}),
])
def test_checkpoint_round_trip(tmp_path, fixture_split, model, params):
    rec = recsys.fit(fixture_split, model, **params)
    recsys.save_model(rec, tmp_path, fixture_split)
    back = recsys.load_model(tmp_path, fixture_split)
    assert back.name == rec.name and back.params() == rec.params()
    for u in (0, 7, 499):
        assert np.array_equal(back.score(u), rec.score(u))
    if model == "bpr":
        header = (tmp_path / "item_factors.csv").read_text().splitlines()[0]
        assert header.startswith("item,bias,f0")
        assert (tmp_path / "user_factors.csv").exists()


def test_checkpoint_mismatch(tmp_path, fixture_split, tiny_split):
    recsys.save_model(recsys.fit_most_popular(fixture_split), tmp_path, fixture_split)
    with pytest.raises(ValueError):
        recsys.load_model(tmp_path, tiny_split)


def test_fit_unknown():
    with pytest.raises(ValueError):
        recsys.fit(None, "neumf")
