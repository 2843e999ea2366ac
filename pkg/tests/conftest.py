import pytest

from weakrec import corpus, fixture, recsys
from weakrec.corpus import Event, SplitDataset


@pytest.fixture(scope="session")
def fixture_split():
    log = corpus.kcore_filter(fixture.load_ratings(), 5)
    return corpus.loo_split(corpus.build_dataset(log))


@pytest.fixture(scope="session")
def fixture_titles(fixture_split):
    ext = fixture.load_titles()
    return {i: ext[it] for i, it in enumerate(fixture_split.item_ids)}


@pytest.fixture(scope="session")
def fixture_itemknn(fixture_split):
    return recsys.fit_itemknn(fixture_split, k=100, shrink=0.5)


def make_split(histories, n_items):
    """Split from chronological per-user item lists; the last two items are held out."""
    train, valid, test = [], [], []
    for items in histories:
        evs = [Event(it, 4.0, t) for t, it in enumerate(items)]
        train.append(evs[:-2])
        valid.append(evs[-2])
        test.append(evs[-1])
    return SplitDataset(
        [f"u{k}" for k in range(len(histories))], [f"i{k}" for k in range(n_items)], train, valid, test
    )


@pytest.fixture
def tiny_split():
    return make_split([[0, 1, 2, 3], [1, 2, 4], [0, 2, 3, 5, 1]], n_items=8)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split(":")[0].split()[1])):
        terminalreporter.write_line(line)
