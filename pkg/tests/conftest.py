import importlib
import os

import numpy as np
import pytest

from egohoi import _kernels
from egohoi._kernels import fallback

BACKENDS = ["numpy"] + (["cython"] if _kernels.native is not None else [])


@pytest.fixture(params=BACKENDS)
def kernels(request, monkeypatch):
    """Run a test once per kernel backend by swapping the dispatch table."""
    impl = fallback if request.param == "numpy" else _kernels.native
    for name in ("triangulate_points", "window_majority", "chroma_key"):
        monkeypatch.setattr(_kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
