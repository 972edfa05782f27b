import numpy as np
import pytest

from gridcert import grids
from gridcert.constraints import SecuritySpec
from gridcert.uncertainty import KappaTemplate, UncertaintySet

# lines printed by the acceptance suite, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def emit(criterion: int, ok: bool | None, detail: str) -> None:
    tag = "PASS" if ok else ("WARN" if ok is None else "FAIL")
    line = f"criterion {criterion}: {tag} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def two_bus():
    return grids.two_bus()


@pytest.fixture
def two_bus_security(two_bus):
    return SecuritySpec.uniform(two_bus, 0.9, 1.1, 10.0)


@pytest.fixture
def chain3():
    return grids.chain(3)


@pytest.fixture
def load_template():
    # s in [-kappa, 0] x {0} on the single PQ bus
    return KappaTemplate.box([-1.0], [0.0], [0.0], [0.0])


@pytest.fixture
def zero_injection():
    return UncertaintySet.singleton([0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
