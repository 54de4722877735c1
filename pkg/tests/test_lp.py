import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairmdp.lp import LinearProgram, LpStatus, solve


def basis_enumeration(c, A, b):
    """Best basic feasible solution by brute force (bounded problems only)."""
    m, n = A.shape
    best = -np.inf
    rank = np.linalg.matrix_rank(A)
    for cols in itertools.combinations(range(n), rank):
        B = A[:, cols]
        if np.linalg.matrix_rank(B) < rank:
            continue
        xB, *_ = np.linalg.lstsq(B, b, rcond=None)
        x = np.zeros(n)
        x[list(cols)] = xB
        if np.all(x >= -1e-9) and np.allclose(A @ x, b, atol=1e-9):
            best = max(best, c @ x)
    return best


def test_single_equality_optimal():
    sol = solve(LinearProgram([1.0], [[1.0]], [1.0]))
    assert sol.status is LpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.objective == pytest.approx(1.0)


def test_negative_rhs_infeasible():
    assert solve(LinearProgram([0.0], [[1.0]], [-1.0])).status is LpStatus.INFEASIBLE


def test_unbounded():
    # maximize x0 subject to x0 - x1 = 0
    sol = solve(LinearProgram([1.0, 0.0], [[1.0, -1.0]], [0.0]))
    assert sol.status is LpStatus.UNBOUNDED


def test_free_variable():
    # maximize -|...|: x free with x = -3
    sol = solve(LinearProgram([1.0], [[1.0]], [-3.0], free=[True]))
    assert sol.optimal
    assert sol.x[0] == pytest.approx(-3.0)


def test_beale_cycling_example_terminates():
    A = np.array([[0.25, -8, -1, 9], [0.5, -12, -0.5, 3], [0, 0, 1, 0]])
    A = np.hstack([A, np.eye(3)])
    c = np.array([0.75, -20, 0.5, -6, 0, 0, 0])
    sol = solve(LinearProgram(c, A, [0, 0, 1]))
    assert sol.optimal
    assert sol.objective == pytest.approx(1.25)


def test_redundant_rows():
    A = np.array([[1.0, 1.0], [2.0, 2.0]])
    sol = solve(LinearProgram([1.0, 2.0], A, [1.0, 2.0]))
    assert sol.optimal
    assert sol.objective == pytest.approx(2.0)


def test_shape_validation():
    with pytest.raises(ValueError):
        LinearProgram([1.0, 2.0], [[1.0]], [1.0])
    with pytest.raises(ValueError):
        LinearProgram([np.nan], [[1.0]], [1.0])


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 5), extra=st.integers(0, 3))
def test_matches_basis_enumeration(seed, m, extra):
    rng = np.random.default_rng(seed)
    n = m + extra
    A = rng.normal(size=(m, n))
    x0 = rng.random(n) * (rng.random(n) < 0.7)
    b = A @ x0
    # a budget row with a slack keeps the feasible region bounded
    A = np.vstack([np.hstack([A, np.zeros((m, 1))]), np.ones((1, n + 1))])
    b = np.append(b, x0.sum() + 1.0)
    c = rng.normal(size=n + 1)
    sol = solve(LinearProgram(c, A, b))
    assert sol.optimal
    assert sol.objective == pytest.approx(basis_enumeration(c, A, b), abs=1e-7)
    assert np.all(sol.x >= 0)
    assert np.allclose(A @ sol.x, b, atol=1e-7)
