import math

import numpy as np
import pytest
from hypothesis import strategies as st

from msflow import curve as cv

L = 2 * math.pi

_ACCEPTANCE = []


def acceptance_line(number, passed, detail):
    """Record one acceptance criterion; printed in the terminal summary."""
    _ACCEPTANCE.append((number, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def single_mode(a, n=256, m=1, phase=0.0, period=L):
    return cv.PeriodicGraph.from_modes(period, n, [(m, a, phase)])


@st.composite
def small_graphs(draw, n=64, max_slope=0.6):
    """Random bandlimited mean-zero graphs with slope safely inside the graph regime."""
    count = draw(st.integers(1, 6))
    modes = []
    for _ in range(count):
        m = draw(st.integers(1, 8))
        a = draw(st.floats(1e-4, 1.0))
        phase = draw(st.floats(0.0, 2 * math.pi))
        modes.append((m, a, phase))
    x = np.arange(n) * L / n
    hp = sum(a * m * np.cos(m * x + p) for m, a, p in modes)
    scale = draw(st.floats(1e-3, max_slope)) / max(np.max(np.abs(hp)), 1e-12)
    return cv.PeriodicGraph.from_modes(L, n, [(m, a * scale, p) for m, a, p in modes])


@pytest.fixture(scope="session")
def flat256():
    from msflow import potentials

    c = cv.graph_to_curve(cv.PeriodicGraph(L, np.zeros(256)))
    return c, potentials.assemble(c)


@pytest.fixture(scope="session")
def flat64():
    from msflow import potentials

    c = cv.graph_to_curve(cv.PeriodicGraph(L, np.zeros(64)))
    return c, potentials.assemble(c)
