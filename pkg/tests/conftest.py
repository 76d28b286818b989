import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from spclmerc.dataset import SynthConfig, generate  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = SynthConfig(
        class_count=3,
        modality_dims={"audio": 4, "text": 5, "visual": 3},
        conversation_count=12,
        valid_count=4,
        test_count=4,
        length_range=(2, 5),
        seed=7,
    )
    return generate(cfg)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(LINES.items()):
            terminalreporter.write_line(line)
