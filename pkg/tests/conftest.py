import numpy as np
import pytest

from fgsa.adapter import AdapterConfig
from fgsa.backbone import BackboneConfig
from fgsa.model import FGSANet
from fgsa.suite import MICRO_ADAPTER, MICRO_BACKBONE


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_model():
    return FGSANet(BackboneConfig(), AdapterConfig(), seed=0)


@pytest.fixture
def micro_model():
    return FGSANet(MICRO_BACKBONE, MICRO_ADAPTER, seed=3)


def disk(size, radius, cy=None, cx=None):
    cy = size / 2 if cy is None else cy
    cx = size / 2 if cx is None else cx
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2).astype(np.float64)


ACCEPTANCE: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if needed."""
    line = f"AC{number} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
