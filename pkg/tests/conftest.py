import numpy as np
import pytest

from gatefuse import MultimodalDataset, S_STAR, generate


def smoothed_onehot(votes, C, eps=0.05):
    votes = np.asarray(votes)
    out = np.full((votes.size, C), eps / (C - 1))
    out[np.arange(votes.size), votes] = 1.0 - eps
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_dataset(rng):
    N, n, C = 40, 3, 4
    scores = rng.dirichlet(np.ones(C), size=(N, n))
    return MultimodalDataset(
        scores=scores,
        labels=rng.integers(0, C, N),
        modality_names=("rgb", "flow", "audio"),
        context=rng.normal(size=(N, 2)),
    )


@pytest.fixture
def oracle_dataset():
    """Expert 'good' always votes the label, expert 'bad' never does."""
    r = np.random.default_rng(0)
    N, C = 600, 4
    labels = r.integers(0, C, N)
    wrong = (labels + 1 + r.integers(0, C - 1, N)) % C
    scores = np.stack([smoothed_onehot(labels, C), smoothed_onehot(wrong, C)], axis=1)
    return MultimodalDataset(scores=scores, labels=labels, modality_names=("good", "bad"))


@pytest.fixture(scope="session")
def s_star():
    return generate(S_STAR)


# One summary line per acceptance criterion.
_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    _CRITERIA[number] = (title, call.excinfo is None)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}")
