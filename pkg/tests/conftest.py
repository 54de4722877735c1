import numpy as np
import pytest

from fairmdp.mdp import TabularMdp

ACCEPTANCE_RESULTS: dict = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[k])


def random_separable_mdp(rng: np.random.Generator, n_maj: int, n_min: int, n_actions: int,
                         discount: float = 0.9, sparsity: float = 0.0) -> TabularMdp:
    """Random two-group MDP whose transitions never leave the starting group."""
    S = n_maj + n_min
    group_of = np.array([0] * n_maj + [1] * n_min)
    P = np.zeros((S, n_actions, S))
    for s in range(S):
        block = np.flatnonzero(group_of == group_of[s])
        for a in range(n_actions):
            w = rng.random(block.size) * (rng.random(block.size) >= sparsity)
            if w.sum() == 0:
                w[rng.integers(block.size)] = 1.0
            P[s, a, block] = w / w.sum()
    D = rng.random(S) + 0.05
    return TabularMdp(D / D.sum(), P, rng.normal(size=(S, n_actions)), rng.random((S, n_actions)),
                      discount, group_of)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, discount: float = 0.9) -> TabularMdp:
    """Random MDP with both groups present; not necessarily separable."""
    P = rng.random((n_states, n_actions, n_states)) ** 3
    P /= P.sum(axis=2, keepdims=True)
    D = rng.random(n_states) + 0.05
    group_of = np.arange(n_states) % 2
    return TabularMdp(D / D.sum(), P, rng.normal(size=(n_states, n_actions)),
                      rng.random((n_states, n_actions)), discount, group_of)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    pi = rng.random((n_states, n_actions)) ** 2 + 1e-3
    return pi / pi.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20241019)
