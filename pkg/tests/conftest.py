import numpy as np
import pytest

from ddq.mdp import Mdp


def random_mdp(rng: np.random.Generator, S: int, A: int, gamma: float) -> Mdp:
    t = rng.random((S, A, S)) ** 3
    t /= t.sum(axis=2, keepdims=True)
    return Mdp(S, A, t, rng.random((S, A)), gamma)


def chain_mdp(gamma: float = 0.8) -> Mdp:
    """s0 -> s1 deterministically; s1 loops; reward only at s1."""
    t = np.zeros((2, 1, 2))
    t[0, 0, 1] = 1.0
    t[1, 0, 1] = 1.0
    return Mdp(2, 1, t, np.array([[0.0], [1.0]]), gamma)


def loop_mdp(reward: float, gamma: float = 0.8) -> Mdp:
    return Mdp(1, 1, np.ones((1, 1, 1)), np.array([[reward]]), gamma)


@pytest.fixture
def chain():
    return chain_mdp()


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL verdict shown in the terminal summary."""

    def record(label: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
