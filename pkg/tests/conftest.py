import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from ckge.kg import build_sequence  # noqa: E402

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by the acceptance tests, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def toy_raw():
    """Two snapshots: three facts, then two new facts that bring in entity ``d``."""
    return [
        {
            "train": [("a", "likes", "b"), ("b", "likes", "c"), ("c", "knows", "a")],
            "valid": [],
            "test": [],
        },
        {
            "train": [("d", "likes", "a"), ("c", "knows", "d")],
            "valid": [],
            "test": [],
        },
    ]


@pytest.fixture
def toy_seq(toy_raw):
    return build_sequence(toy_raw)


def write_raw(root: Path, raw) -> Path:
    for t, splits in enumerate(raw):
        d = root / f"snapshot_{t}"
        d.mkdir(parents=True, exist_ok=True)
        for name in ("train", "valid", "test"):
            (d / f"{name}.txt").write_text("".join(f"{h}\t{r}\t{x}\n" for h, r, x in splits.get(name, [])))
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
