import numpy as np
import pytest

from ccadmm.graph import new_graph
from ccadmm.problem import QuadraticCost, make_problem, random_quadratic_instance

_ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion():
    """Log one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


@pytest.fixture
def scalar_one_agent():
    """f = x^2/2 subject to x = 1; saddle point (1, -1)."""
    g = new_graph(1, [])
    return make_problem(g, [QuadraticCost([[1.0]], [0.0])], [[[1.0]]], [1.0])


@pytest.fixture
def two_agent_symmetric():
    """f_i = x_i^2/2 subject to x_1 + x_2 = 2; saddle point ((1, 1), -1)."""
    g = new_graph(2, [(0, 1)])
    costs = [QuadraticCost([[1.0]], [0.0]), QuadraticCost([[1.0]], [0.0])]
    return make_problem(g, costs, [[[1.0]], [[1.0]]], [2.0])


@pytest.fixture
def random_instance():
    return random_quadratic_instance(5, 3, 2, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
