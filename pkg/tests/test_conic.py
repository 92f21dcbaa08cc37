import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from quadsynth.conic import INFEASIBLE, OPTIMAL, LpProblem, SdpProblem, solve_lp, solve_sdp


def _E(n, i, j):
    E = np.zeros((n, n))
    E[i, j] = E[j, i] = 1.0 if i == j else 0.5
    return E


def test_sdp_forced_entry():
    prob = SdpProblem([2], [np.eye(2)], [[_E(2, 0, 0)]], [1.0])
    sol = solve_sdp(prob)
    assert sol.status == OPTIMAL
    assert sol.primal_objective == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(sol.primal[0], np.diag([1.0, 0.0]), atol=1e-6)


def test_sdp_boundary_optimum():
    # minimize X11 s.t. X11 + X22 = 2, X12 = 0.5; the scalar problem min a s.t. a(2-a) >= 1/4
    C = _E(2, 0, 0)
    prob = SdpProblem([2], [C], [[np.eye(2)], [_E(2, 0, 1)]], [2.0, 0.5])
    sol = solve_sdp(prob)
    assert sol.status == OPTIMAL
    a = 1 - math.sqrt(3) / 2
    assert sol.primal_objective == pytest.approx(a, abs=1e-8)
    assert np.linalg.det(sol.primal[0]) == pytest.approx(0.0, abs=1e-7)


def test_sdp_infeasible():
    prob = SdpProblem([1], [np.eye(1)], [[np.eye(1)]], [-1.0])
    assert solve_sdp(prob).status == INFEASIBLE


def test_sdp_rejects_bad_shapes():
    with pytest.raises(ValueError):
        SdpProblem([2], [np.eye(3)], [[np.eye(2)]], [1.0])
    with pytest.raises(ValueError):
        SdpProblem([2], [np.eye(2)], [[np.array([[0.0, 1.0], [0.0, 0.0]])]], [1.0])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
def test_sdp_min_eigenvalue(seed, n):
    # min <C, X> over trace-one PSD matrices is the smallest eigenvalue of C
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    C = 0.5 * (B + B.T)
    sol = solve_sdp(SdpProblem([n], [C], [[np.eye(n)]], [1.0]))
    assert sol.status == OPTIMAL
    lam = np.linalg.eigvalsh(C)[0]
    assert sol.primal_objective == pytest.approx(lam, abs=1e-7 * (1 + abs(lam)))
    # weak duality and PSD-ness at the optimum
    assert sol.dual_objective <= sol.primal_objective + 1e-8 * (1 + abs(sol.primal_objective))
    X = sol.primal[0]
    assert np.linalg.eigvalsh(X)[0] >= -1e-9 * np.linalg.norm(X)


def test_sdp_two_blocks_deterministic(rng):
    A1 = [np.eye(2), np.zeros((3, 3))]
    A2 = [np.zeros((2, 2)), np.eye(3)]
    C = [np.diag([1.0, 2.0]), np.diag([3.0, -1.0, 0.5])]
    prob = SdpProblem([2, 3], C, [A1, A2], [1.0, 2.0])
    s1, s2 = solve_sdp(prob), solve_sdp(prob)
    assert s1.primal_objective == pytest.approx(1.0 - 2.0, abs=1e-8)
    assert s1.primal_objective == s2.primal_objective
    for a, b in zip(s1.primal, s2.primal):
        np.testing.assert_array_equal(a, b)


def test_lp_examples():
    sol = solve_lp(LpProblem([[1.0, 1.0]], [1.0], [1.0, 1.0]))
    assert sol.status == OPTIMAL and sol.primal_objective == pytest.approx(1.0)
    assert np.count_nonzero(sol.primal) == 1
    sol = solve_lp(LpProblem([[1.0, 1.0]], [1.0], [2.0, 1.0]))
    np.testing.assert_allclose(sol.primal, [0.0, 1.0], atol=1e-12)
    assert sol.primal_objective == pytest.approx(1.0)
    sol = solve_lp(LpProblem([[1.0, 1.0]], [1.0], [0.0, 0.0]))
    assert sol.status == OPTIMAL and np.count_nonzero(sol.primal) <= 1


def test_lp_infeasible():
    sol = solve_lp(LpProblem([[1.0, 1.0]], [-1.0], [1.0, 1.0]))
    assert sol.status == INFEASIBLE
    sol = solve_lp(LpProblem([[1.0, 1.0], [1.0, 1.0]], [1.0, 2.0], [1.0, 1.0]))
    assert sol.status == INFEASIBLE


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), extra=st.integers(0, 40))
def test_lp_against_highs(seed, m, extra):
    rng = np.random.default_rng(seed)
    N = m + extra + 1
    A = rng.normal(size=(m, N))
    b = A @ rng.uniform(0, 1, size=N)  # feasible by construction
    c = rng.uniform(0.1, 2.0, size=N)  # positive cost keeps it bounded
    sol = solve_lp(LpProblem(A, b, c))
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert sol.status == OPTIMAL
    assert sol.primal_objective == pytest.approx(ref.fun, rel=1e-7, abs=1e-9)
    w = sol.primal
    assert np.all(w >= -1e-12)
    np.testing.assert_allclose(A @ w, b, atol=1e-8 * (1 + np.abs(b).max()))
    # vertex property
    assert np.count_nonzero(w > 1e-12) <= np.linalg.matrix_rank(A)
    assert sol.dual_objective <= sol.primal_objective + 1e-8 * (1 + abs(sol.primal_objective))


def test_lp_rank_deficient_rows():
    A = np.array([[1.0, 2.0, 3.0, 1.0], [2.0, 4.0, 6.0, 2.0], [0.0, 1.0, 1.0, 3.0]])
    b = A @ np.array([0.2, 0.3, 0.1, 0.4])
    sol = solve_lp(LpProblem(A, b, [1.0, 1.0, 1.0, 1.0]))
    ref = linprog(np.ones(4), A_eq=A, b_eq=b, method="highs")
    assert sol.primal_objective == pytest.approx(ref.fun, rel=1e-9)
    assert np.count_nonzero(sol.primal > 1e-12) <= 2
