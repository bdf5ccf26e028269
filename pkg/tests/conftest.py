import sys

import pytest

from pgasrt import RuntimeConfig
from pgasrt.engine import AmEngine
from pgasrt.transport import make_transport


@pytest.fixture
def fresh_engine():
    """An unwired 1-rank engine for registry-level tests."""
    cfg = RuntimeConfig(nranks=1, my_rank=0, transport="inproc",
                        auto_progress=False)
    transport = make_transport(cfg)
    engine = AmEngine(cfg, transport)
    yield engine
    transport.close()


@pytest.fixture
def python_exe():
    return sys.executable
