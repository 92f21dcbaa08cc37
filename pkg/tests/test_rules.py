import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import legendre

from quadsynth.curve import szego_rule
from quadsynth.gauss import gauss_rule
from quadsynth.moments import MeasureSpec, MomentVector, standard_moments
from quadsynth.poly import monomial_basis, monomial_matrix
from quadsynth.rules import (
    NumericalFailure,
    QuadratureRule,
    bound_table,
    caratheodory_prune,
    grid_lp_rule,
    merge_nodes,
    polish_rule,
    verify_exactness,
    weights_nnls,
)

# rows of the published planar node-count table: d, 2d-1, Moller, (d-1)^2, d^2, Petrovsky
TABLE = [
    (1, 1, 1, 0, 1, 1),
    (2, 3, 4, 1, 4, 4),
    (3, 5, 7, 4, 9, 10),
    (4, 7, 12, 9, 16, 19),
    (5, 9, 17, 16, 25, 31),
    (6, 11, 24, 25, 36, 46),
    (7, 13, 31, 36, 49, 64),
    (8, 15, 40, 49, 64, 85),
    (9, 17, 49, 64, 81, 109),
    (10, 19, 60, 81, 100, 136),
]


@pytest.mark.parametrize("row", TABLE)
def test_bound_table(row):
    d, *vals = row
    got = bound_table(d)
    assert [got[k] for k in ("degree", "moller", "lower", "d_squared", "petrovsky")] == vals
    assert "extrapolated" not in got


def test_bound_table_extrapolated():
    assert bound_table(11)["extrapolated"] is True


def test_verify_gauss_rule():
    L = standard_moments(MeasureSpec("uniform-interval", (-1.0, 1.0)), 5)
    rep = verify_exactness(gauss_rule(L, 3), L)
    assert rep.max_residual <= 1e-9
    assert rep.node_count == 3 and rep.weight_margin > 0
    assert rep.bounds["gauss"] == {"value": 3, "status": "pass"}
    assert rep.bounds["petrovsky"]["status"] == "not-applicable"


def test_verify_perturbed_weight():
    x, w = legendre.leggauss(3)
    L = MomentVector.from_rule(x[:, None], w, 5)
    w2 = w.copy()
    w2[0] += 1e-3
    assert verify_exactness(QuadratureRule(x, w2), L).max_residual >= 1e-4


def test_verify_empty_rule():
    rep = verify_exactness(QuadratureRule.empty(2), MomentVector(2, 3, np.zeros(10)))
    assert rep.max_residual == 0.0 and rep.node_count == 0


def test_verify_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        verify_exactness(QuadratureRule([[0.0, 0.0]], [1.0]), MomentVector(1, 1, [1.0, 0.0]))


def test_rule_rejects_nonpositive_weights():
    with pytest.raises(ValueError):
        QuadratureRule([[0.0], [1.0]], [1.0, 0.0])


def test_weights_nnls_examples():
    nodes, w = weights_nnls([[0.0]], standard_moments(MeasureSpec.dirac([[0.0]], [3.0]), 3))
    assert w == pytest.approx([3.0])
    s = 1 / math.sqrt(3)
    nodes, w = weights_nnls([[-s], [s]], standard_moments(MeasureSpec("uniform-interval", (-1.0, 1.0)), 3))
    np.testing.assert_allclose(w, [1.0, 1.0], rtol=1e-13)
    grid = [[1.0, 1.0], [1.0, 2.0], [2.0, 1.0], [2.0, 2.0]]
    L = standard_moments(MeasureSpec.dirac(grid, [1.0] * 4), 5)
    nodes, w = weights_nnls(grid, L)
    np.testing.assert_allclose(w, 1.0, rtol=1e-12)
    assert verify_exactness(QuadratureRule(nodes, w), L).max_residual <= 1e-14


def test_weights_nnls_drops_useless_nodes():
    L = standard_moments(MeasureSpec.dirac([[0.0], [1.0]], [1.0, 2.0]), 3)
    nodes, w = weights_nnls([[0.0], [0.5], [1.0]], L)
    np.testing.assert_allclose(nodes[:, 0], [0.0, 1.0])
    np.testing.assert_allclose(w, [1.0, 2.0], rtol=1e-12)


def test_weights_nnls_infeasible():
    with pytest.raises(NumericalFailure, match="weights infeasible"):
        weights_nnls([[0.3]], standard_moments(MeasureSpec("uniform-interval", (-1.0, 1.0)), 3))


def test_prune_random_planar_rule(rng):
    nodes = rng.uniform(-1, 1, size=(100, 2))
    rule = QuadratureRule(nodes, rng.uniform(0.1, 1.0, size=100))
    out = caratheodory_prune(rule, 5)
    assert len(out) <= 21
    _assert_same_moments(rule, out, 5, 1e-10)


def test_prune_minimal_rule_unchanged():
    x, w = legendre.leggauss(3)
    rule = QuadratureRule(x, w)
    out = caratheodory_prune(rule, 5)
    np.testing.assert_array_equal(out.nodes, rule.nodes)
    np.testing.assert_allclose(out.weights, rule.weights, rtol=1e-15)


def test_prune_square_on_circle_degree_one():
    nodes = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
    rule = QuadratureRule(nodes, [1.0] * 4)
    out = caratheodory_prune(rule, 1)
    assert len(out) <= 3
    # direct computation: mass 4, centroid at the origin
    assert out.weights.sum() == pytest.approx(4.0)
    np.testing.assert_allclose(out.weights @ out.nodes, [0.0, 0.0], atol=1e-14)


def _assert_same_moments(rule, out, degree, rtol):
    basis = monomial_basis(rule.n, degree)
    a = monomial_matrix(rule.nodes, basis) @ rule.weights
    b = monomial_matrix(out.nodes, basis) @ out.weights
    assert np.max(np.abs(a - b) / (1 + np.abs(a))) <= rtol


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([1, 2]), degree=st.sampled_from([3, 5, 7]))
def test_prune_property(seed, n, degree):
    rng = np.random.default_rng(seed)
    N = 60
    nodes = rng.uniform(-1, 1, size=(N, n))
    rule = QuadratureRule(nodes, rng.uniform(0.05, 1.0, size=N))
    out = caratheodory_prune(rule, degree)
    assert len(out) <= math.comb(n + degree, n)
    assert np.all(out.weights > 0)
    # subset of the input nodes
    assert all(np.any(np.all(rule.nodes == x, axis=1)) for x in out.nodes)
    _assert_same_moments(rule, out, degree, 1e-10)


def test_merge_two_close_nodes():
    rule = QuadratureRule([[0.0], [1e-9]], [1.0, 1.0])
    L = standard_moments(MeasureSpec.dirac([[0.5e-9]], [2.0]), 3)
    merged, ok = merge_nodes(rule, 1e-6, L)
    assert ok and len(merged) == 1
    assert merged.weights[0] == pytest.approx(2.0)


def test_merge_radius_zero_is_identity():
    rule = QuadratureRule([[0.0], [1e-9]], [1.0, 1.0])
    merged, ok = merge_nodes(rule, 0.0, rule.moments(3))
    assert ok and merged is rule


def test_merge_refuses_inexact_result():
    rule = QuadratureRule([[0.0], [0.5]], [1.0, 1.0])
    merged, ok = merge_nodes(rule, 1.0, rule.moments(3))
    assert not ok and merged is rule


def test_merge_split_circle_clusters_matches_szego():
    angles = np.array([0.3, 2.2, 4.4])
    pts = np.column_stack([np.cos(angles), np.sin(angles)])
    wts = np.array([1.0, 2.0, 1.5])
    L = MomentVector.from_rule(pts, wts, 3)
    # each atom split into two neighbours on the circle, as a grid LP vertex tends to return
    delta = 1e-4
    split_t = np.concatenate([angles - delta, angles + delta])
    split = QuadratureRule(np.column_stack([np.cos(split_t), np.sin(split_t)]), np.concatenate([wts, wts]) / 2)
    merged, ok = merge_nodes(split, 1e-3, L)
    assert ok and len(merged) == 3
    ref = szego_rule(L, 2).sorted()
    got = merged.sorted()
    np.testing.assert_allclose(got.nodes, ref.nodes, atol=1e-7)
    np.testing.assert_allclose(got.weights, ref.weights, rtol=1e-6)


def test_polish_recovers_perturbed_gauss_rule():
    x, w = legendre.leggauss(4)
    L = MomentVector.from_rule(x[:, None], w, 7)
    nodes, weights = polish_rule((x + 1e-4)[:, None], w * 1.001, L)
    np.testing.assert_allclose(np.sort(nodes[:, 0]), x, atol=1e-12)


def test_grid_lp_rule_vertex_and_exact(rng):
    L = standard_moments(MeasureSpec("uniform-interval", (-1.0, 1.0)), 5)
    pts = np.linspace(-1, 1, 201)[:, None]
    res = grid_lp_rule(pts, L, rng.uniform(0.5, 1.5, size=201))
    assert res.exact
    assert len(res.rule) <= 6
    assert verify_exactness(res.rule, L).max_residual <= 1e-10
