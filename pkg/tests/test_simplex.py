from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdeo_lab.cdeo import LpInstance, SupportGrid, solve_lp
from cdeo_lab.simplex import (INFEASIBLE, OPTIMAL, UNBOUNDED, DualColumnGeneration, RevisedSimplex,
                              solve_inequality_lp)

_COMBOS = {}


def dual_vertex_optimum(M: np.ndarray, g: np.ndarray, c: np.ndarray) -> float:
    """``max g.y  s.t.  M^T y <= c, y >= 0`` by enumerating every vertex.

    Each vertex has ``m`` active constraints out of the ``n + m`` rows of
    ``[M^T; -I] y <= [c; 0]``; all candidate bases are solved in one batch.
    """
    m, n = M.shape
    G = np.vstack([M.T, -np.eye(m)])
    h = np.concatenate([c, np.zeros(m)])
    key = (n + m, m)
    if key not in _COMBOS:
        _COMBOS[key] = np.array(list(itertools.combinations(range(n + m), m)))
    idx = _COMBOS[key]
    A = G[idx]
    b = h[idx]
    det = np.linalg.det(A)
    ok = np.abs(det) > 1e-10
    y = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    feas = np.all(y @ G.T <= h + 1e-9, axis=1)
    return float(np.max(y[feas] @ g))


def random_lp(seed: int, m: int = 8, n: int = 12):
    rng = np.random.default_rng(seed)
    M = rng.uniform(0.0, 1.0, (m, n)) * (rng.random((m, n)) < 0.7)
    M[np.arange(m), rng.integers(0, n, m)] += 0.5       # every row can be met
    g = rng.uniform(0.0, 2.0, m)
    c = rng.uniform(0.1, 3.0, n)
    return M, g, c


def as_instance(M, g, c):
    n = c.size
    return LpInstance(c, M, g, np.ones(n), np.ones(g.size), np.zeros(g.size),
                      SupportGrid(np.arange(n, dtype=float), "atoms"))


# ----------------------------------------------------------------- examples

def test_two_variable_example():
    w, y, status = solve_lp(as_instance(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1.0, 0.0]),
                                        np.array([1.0, 1.0])))
    assert status == OPTIMAL
    assert np.allclose(w, [1.0, 0.0]) and np.allclose(y, [1.0, 0.0])


def test_inconsistent_row_is_infeasible():
    _, _, status = solve_lp(as_instance(np.array([[0.0]]), np.array([1.0]), np.array([1.0])))
    assert status == INFEASIBLE


def test_two_phase_infeasible_and_unbounded():
    assert solve_inequality_lp([[0.0]], [1.0], [-1.0]).status == INFEASIBLE
    assert solve_inequality_lp([[1.0]], [1.0], [-1.0]).status == UNBOUNDED


def test_two_phase_optimum():
    # negative costs force the general route; optimum at w = (2, 0)
    sol = solve_inequality_lp([[1.0, 1.0], [-1.0, 0.0]], [1.0, -2.0], [-1.0, 0.5])
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-2.0)
    assert np.allclose(sol.primal, [2.0, 0.0])


def test_nonfinite_data_rejected():
    with pytest.raises(ValueError):
        solve_inequality_lp([[np.nan]], [1.0], [1.0])


# ------------------------------------------------------ vertex enumeration

@pytest.mark.parametrize("rule", ["dantzig", "bland", "steepest"])
@pytest.mark.parametrize("seed", range(8))
def test_random_8x12_against_vertex_enumeration(seed, rule):
    M, g, c = random_lp(seed)
    w, y, status = solve_lp(as_instance(M, g, c), rule=rule)
    assert status == OPTIMAL
    ref = dual_vertex_optimum(M, g, c)
    assert abs(c @ w - ref) <= 1e-8 * (1 + abs(ref))
    assert np.all(M @ w >= g - 1e-9) and np.all(w >= 0)
    # dual feasibility and complementary slackness
    assert np.all(y >= 0) and np.all(M.T @ y <= c + 1e-9)
    assert abs(g @ y - ref) <= 1e-8 * (1 + abs(ref))
    assert np.max(np.abs(y * (M @ w - g))) <= 1e-7
    assert np.max(np.abs(w * (c - M.T @ y))) <= 1e-7


@settings(max_examples=25)
@given(st.integers(0, 2 ** 31 - 1))
def test_random_lps_property(seed):
    M, g, c = random_lp(seed)
    sol = solve_inequality_lp(M, g, c)
    assert sol.status == OPTIMAL
    assert abs(sol.objective - dual_vertex_optimum(M, g, c)) <= 1e-8 * (1 + abs(sol.objective))


@settings(max_examples=15)
@given(st.integers(0, 2 ** 31 - 1))
def test_degenerate_lps(seed):
    # integer data with repeated rows produce ties in both ratio test and pricing
    rng = np.random.default_rng(seed)
    M = rng.integers(0, 3, (8, 12)).astype(float)
    M[np.arange(8), rng.integers(0, 12, 8)] += 1.0
    M[4:] = M[:4]
    g = rng.integers(0, 3, 8).astype(float)
    g[4:] = g[:4]
    c = rng.integers(1, 4, 12).astype(float)
    for rule in ("bland", "dantzig"):
        sol = solve_inequality_lp(M, g, c, rule=rule)
        assert sol.status == OPTIMAL
        assert abs(sol.objective - dual_vertex_optimum(M, g, c)) <= 1e-8 * (1 + abs(sol.objective))


# ---------------------------------------------------------- engine pieces

def test_column_generation_rows_added():
    M, g, c = random_lp(11)
    cg = DualColumnGeneration(M[:4], g[:4], c)
    first = cg.solve()
    cg.add_rows(M[4:], g[4:])
    second = cg.solve()
    assert second.objective >= first.objective - 1e-12
    assert second.objective == pytest.approx(dual_vertex_optimum(M, g, c), rel=1e-8)
    assert cg.n_rows == 8
    assert second.dual_objective <= second.objective + 1e-9 * (1 + second.objective)


def test_revised_simplex_equality_form():
    # min -x1 - x2  s.t.  x1 + 2 x2 + s1 = 4, 3 x1 + x2 + s2 = 6
    A = np.array([[1.0, 2.0, 1.0, 0.0], [3.0, 1.0, 0.0, 1.0]])
    lp = RevisedSimplex(A, np.array([4.0, 6.0]), np.array([-1.0, -1.0, 0.0, 0.0]), np.array([2, 3]))
    assert lp.solve() == OPTIMAL
    assert np.allclose(lp.x()[:2], [1.6, 1.2]) and lp.objective() == pytest.approx(-2.8)
    assert np.all(lp.reduced_costs() >= -1e-12)


def test_revised_simplex_add_columns():
    A = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    lp = RevisedSimplex(A, np.array([1.0, 1.0]), np.array([0.0, 0.0, 0.0]), np.array([0, 2]))
    lp.solve()
    lp.add_columns(np.array([[1.0], [1.0]]), np.array([-5.0]))
    assert lp.solve() == OPTIMAL
    assert lp.objective() == pytest.approx(-5.0)


def test_near_free_variables_stay_feasible():
    # a row met only by a variable costing 1e-27 contributes nothing visible to the
    # objective; the recovered primal must still satisfy it
    M = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    sol = solve_inequality_lp(M, [1.0, 95.0, 2.0], [1.0, 1e-27])
    assert sol.status == OPTIMAL
    assert np.all(M @ sol.primal >= np.array([1.0, 95.0, 2.0]) - 1e-12)
    assert sol.primal[0] == pytest.approx(1.0)
