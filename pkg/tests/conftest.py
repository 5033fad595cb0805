import numpy as np
import pytest

from jointspace import numcore as nc
from jointspace.alignment import ContrastiveConfig, anchor_digest, train
from jointspace.dataset import CorpusConfig, generate_corpus
from jointspace.encoders import AlignmentModel, ModelConfig

SMALL = CorpusConfig(categories=4, audio_categories=2, train_per_category=8, test_per_category=4,
                     num_points=32, num_templates=8)


def rel_err(analytic, numeric):
    """Norm-wise relative error of one gradient tensor."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if denom == 0 else float(np.linalg.norm(analytic - numeric) / denom)


def unit_rows(rng, n, c):
    x = rng.standard_normal((n, c))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SMALL, seed=7)


@pytest.fixture(scope="session")
def small_model(small_corpus):
    return AlignmentModel.init(ModelConfig(hidden=16, raw_dim=16), small_corpus.anchors, seed=3)


@pytest.fixture(scope="session")
def default_corpus():
    return generate_corpus(CorpusConfig(), seed=0)


@pytest.fixture(scope="session")
def default_run(default_corpus):
    """Default desk model trained on the default corpus; shared by the slow tests."""
    model = AlignmentModel.init(ModelConfig(), default_corpus.anchors, seed=0)
    untrained = AlignmentModel.init(ModelConfig(), default_corpus.anchors, seed=0)
    anchors_before = anchor_digest(model)
    report = train(default_corpus, model, ContrastiveConfig(), seed=0)
    return {"model": model, "untrained": untrained, "report": report, "anchors_before": anchors_before}


def point_grad_check(model, loss_fn, h=1e-6):
    params = model.parameters()
    analytic = nc.backward(loss_fn(), params)
    numeric = nc.finite_diff_grad(lambda: loss_fn().item(), [p.data for p in params], h)
    return {name: rel_err(a, n) for (name, _), a, n in zip(model.named_parameters(), analytic, numeric)}


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE.values():
            terminalreporter.write_line(line)
