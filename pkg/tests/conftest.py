import numpy as np
import pytest

from flatcl.model import Batch, MultiHeadClassifier


def random_mlp(seed, input_dim=4, hidden=(6,), classes=(3,), activation="tanh"):
    return MultiHeadClassifier(seed, input_dim, list(hidden), list(classes),
                               activation=activation)


def random_batch(seed, model, n=5, task_id=0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, model.input_dim))
    labels = rng.integers(0, model.head_classes[task_id], size=n)
    return Batch(feats, labels, task_id)


@pytest.fixture
def mlp_and_batch():
    model = random_mlp(7)
    return model, random_batch(11, model)


def pytest_terminal_summary(terminalreporter):
    """Echo one pass/fail line per acceptance criterion after the run."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
