import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from paralab import tensor as T
from paralab.corpus import build_chunks, split, tokenize
from paralab.model import preset
from paralab.storygen import make_corpus

settings.register_profile(
    "default", deadline=None, max_examples=60, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

TINY = dict(d_model=16, n_layers=2, n_heads=2, ffn_dim=32, seq_len=16)


@pytest.fixture(autouse=True)
def _float32_default():
    T.set_precision(32)
    yield
    T.set_precision(32)


@pytest.fixture(scope="session")
def story_text() -> str:
    return make_corpus(30_000, seed=3)


@pytest.fixture(scope="session")
def tiny_split(story_text):
    return split(build_chunks(tokenize(story_text.encode()), TINY["seq_len"]), 0.1)


@pytest.fixture
def tiny_cfg():
    return {p: preset(p, **TINY) for p in ("ar", "mdlm")}


def rand(rng, *shape):
    return rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
