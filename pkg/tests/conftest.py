import numpy as np
import pytest
from hypothesis import settings

from eulalign.kernels import CommWeight, Domain, InteractionKernel
from eulalign.particles import SimConfig

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_cfg(N=8, dim=1, kernel="gaussian", comm=("cucker_smale", 1.0, 1.0), **kw):
    kw.setdefault("epsilon", 0.1)
    kw.setdefault("gamma", 5.0)
    kernel = kernel if isinstance(kernel, InteractionKernel) else InteractionKernel(kernel)
    domain = kw.pop("domain", Domain("euclidean", dim))
    return SimConfig(N=N, domain=domain, kernel=kernel, comm=CommWeight(*comm), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are echoed in the terminal summary."""
    def add(criterion, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
