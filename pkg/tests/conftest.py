from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stitchplan import fixture_path  # noqa: E402
from stitchplan.device_model import load_config  # noqa: E402
from stitchplan.graph_text import parse_graph  # noqa: E402


@pytest.fixture(scope="session")
def config():
    return load_config(None)


@pytest.fixture(scope="session")
def dev(config):
    return config[0]


@pytest.fixture(scope="session")
def models(config):
    return config[1]


def load_fixture(name: str):
    return parse_graph(fixture_path(name).read_text())
