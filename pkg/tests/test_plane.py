import itertools

import numpy as np
import pytest
from scipy import integrate

from quadsynth.moments import MeasureSpec, MomentError, MomentVector, riesz_apply, standard_moments
from quadsynth.plane import (
    CertificatePolynomial,
    certificate_sdp,
    cubature_rule,
    degree3_rule,
    gradient_ideal_roots,
    grid_lower_bound_instance,
    quotient_algebra,
    solve_cubature,
)
from quadsynth.poly import Polynomial, monomial_basis, parse_polynomial
from quadsynth.rules import bound_table, verify_exactness

SQUARE = MeasureSpec("uniform-square", (-1.0, 1.0))


def _grid_nodes(d):
    g = np.arange(1, d, dtype=float)
    return np.array(list(itertools.product(g, g)))


def _match_nodes(rule, nodes, atol):
    got = rule.sorted().nodes
    ref = nodes[np.lexsort(nodes.T[::-1])]
    assert got.shape == ref.shape
    np.testing.assert_allclose(got, ref, atol=atol)


def test_critical_points_of_quartic_form():
    crit = gradient_ideal_roots(parse_polynomial("X^4 + Y^4"), d=2)
    assert len(crit) == 1
    np.testing.assert_allclose(crit.points[0], [0.0, 0.0], atol=1e-8)


def test_critical_points_double_well():
    h = parse_polynomial("(X^2 - 1)^2 + (Y^2 - 1)^2")
    crit = gradient_ideal_roots(h, d=2)
    ref = np.array(list(itertools.product([-1.0, 0.0, 1.0], repeat=2)))
    _match_points(crit.points, ref)
    zeros = crit.points[np.abs(crit.h_values) < 1e-12]
    _match_points(zeros, np.array(list(itertools.product([-1.0, 1.0], repeat=2))))
    assert crit.quotient_dim == 9


def _match_points(got, ref, atol=1e-10):
    got = got[np.lexsort(got.T[::-1])]
    ref = ref[np.lexsort(ref.T[::-1])]
    np.testing.assert_allclose(got, ref, atol=atol)


def test_quotient_algebra_commutes():
    h = parse_polynomial("X^6 + Y^6 - 3*X^2*Y + X*Y - 2*Y^3 + 1")
    Z = quotient_algebra(h, 3)
    assert Z.dim == 25
    assert Z.commutation_defect() <= 1e-10


def test_gradient_ideal_roots_leading_form_required():
    with pytest.raises(ValueError):
        gradient_ideal_roots(parse_polynomial("X^5 + Y^4"))


def test_square_d2_four_nodes():
    L = standard_moments(SQUARE, 3)
    res = solve_cubature(L, 2)
    assert res.path == "sos" and res.sos_exact
    assert len(res.rule) <= 4 and np.all(res.rule.weights > 0)
    assert verify_exactness(res.rule, L).max_residual <= 1e-8
    # the certificate roots coincide with the returned nodes
    crit = gradient_ideal_roots(res.certificate)
    assert len(crit) <= 9
    h = res.certificate.h
    for x in res.rule.nodes:
        assert abs(h.eval(x)) <= 1e-7 * (1 + h.max_abs_coeff())
        assert min(np.linalg.norm(crit.points - x, axis=1)) <= 1e-6


def test_square_d2_integrates_against_scipy():
    rule = cubature_rule(standard_moments(SQUARE, 3), 2)
    f = lambda x, y: 1 + x - 2 * y + x * y + 3 * x**2 * y - y**3 + x**2
    ref = integrate.dblquad(lambda y, x: f(x, y), -1, 1, -1, 1)[0]
    assert rule.integrate(lambda p: f(*p)) == pytest.approx(ref, rel=1e-10)


def test_grid_dirac_d3_recovers_nodes():
    nodes = _grid_nodes(3)
    L = standard_moments(MeasureSpec.dirac(nodes, [1.0] * 4), 5)
    rule = cubature_rule(L, 3)
    _match_nodes(rule, nodes, 1e-8)
    np.testing.assert_allclose(rule.weights, 1.0, atol=1e-8)


def test_square_d3_within_bound():
    L = standard_moments(SQUARE, 5)
    res = solve_cubature(L, 3)
    assert verify_exactness(res.rule, L).max_residual <= 1e-7
    if res.sos_exact:
        assert len(res.rule) <= 10
    assert len(res.rule) <= 21


@pytest.mark.parametrize("spec", [MeasureSpec("uniform-disk", (0.3, -0.2, 1.0)),
                                  MeasureSpec("uniform-square", (0.0, 3.0, -1.0, 0.5))])
def test_other_planar_measures(spec):
    for d in (2, 3):
        L = standard_moments(spec, 2 * d - 1)
        res = solve_cubature(L, d)
        assert verify_exactness(res.rule, L).max_residual <= 1e-7
        assert len(res.rule) <= (bound_table(d)["petrovsky"] if res.sos_exact else d * (2 * d + 1))


def test_circle_measure_uses_degenerate_path():
    L = standard_moments(MeasureSpec("uniform-circle", (0.0, 0.0, 1.0)), 5)
    res = solve_cubature(L, 3)
    assert res.path != "sos"
    assert verify_exactness(res.rule, L).max_residual <= 1e-7
    assert len(res.rule) <= 6


def test_collinear_measure_uses_line():
    nodes = np.array([[t, 2 * t - 1] for t in (-1.0, 0.0, 0.5, 2.0)])
    L = standard_moments(MeasureSpec.dirac(nodes, [1.0, 2.0, 1.0, 0.5]), 5)
    res = solve_cubature(L, 3)
    assert verify_exactness(res.rule, L).max_residual <= 1e-7
    assert len(res.rule) <= 3
    np.testing.assert_allclose(res.rule.nodes[:, 1], 2 * res.rule.nodes[:, 0] - 1, atol=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_random_dirac_measures(seed):
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(-1, 1, size=(8, 2))
    L = MomentVector.from_rule(nodes, rng.uniform(0.5, 2, size=8), 3)
    res = solve_cubature(L, 2)
    assert verify_exactness(res.rule, L).max_residual <= 1e-7
    assert len(res.rule) <= 6


def test_certificate_sdp_invariants():
    L = standard_moments(SQUARE, 5)
    sdp = certificate_sdp(L, 3)
    cert = sdp.certificate
    assert cert.leading_form_error() <= 1e-9
    assert cert.min_gram_eigenvalue() >= -1e-9 * np.abs(cert.gram).max()
    assert abs(sdp.complementarity) <= 1e-8 * (1 + np.abs(sdp.extension.values).max())


def test_certificate_from_gram():
    gram = np.diag([1.0, 0.0, 0.0, 1.0, 0.0, 1.0])  # basis 1, X, Y, X^2, XY, Y^2
    cert = CertificatePolynomial.from_gram(gram, 2, 2)
    assert cert.h == parse_polynomial("1 + X^4 + Y^4")
    assert cert.leading_form_error() == 0.0


def test_cubature_input_errors():
    with pytest.raises(MomentError):
        solve_cubature(standard_moments(MeasureSpec("uniform-interval", (-1.0, 1.0)), 3), 2)
    with pytest.raises(MomentError):
        solve_cubature(standard_moments(SQUARE, 2), 2)
    bad = MomentVector(2, 3, [1.0, 0, 0, -1.0, 0, 1.0, 0, 0, 0, 0])
    with pytest.raises(MomentError):
        solve_cubature(bad, 2)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_grid_lower_bound_instances(d):
    f, L = grid_lower_bound_instance(d)
    nodes = _grid_nodes(d)
    assert L.mass == pytest.approx((d - 1) ** 2)
    assert all(f.eval(x) == 0.0 for x in nodes)
    assert riesz_apply(L.truncate(2 * d - 2), f) == pytest.approx(0.0, abs=1e-9)
    rule = cubature_rule(L, d)
    _match_nodes(rule, nodes, 1e-8)
    np.testing.assert_allclose(rule.weights, 1.0, atol=1e-8)


def test_grid_lower_bound_d2_is_single_dirac():
    f, L = grid_lower_bound_instance(2)
    assert f == parse_polynomial("(X-1)^2 + (Y-1)^2")
    np.testing.assert_allclose(L.values, MomentVector.from_rule([[1.0, 1.0]], [1.0], 3).values)


def test_degree3_cube():
    L = standard_moments(MeasureSpec("uniform-box", (-1.0, 1.0, 3)), 3)
    rule = degree3_rule(L, 3)
    assert len(rule) <= 10
    assert verify_exactness(rule, L).max_residual <= 1e-7


def test_degree3_flat_square_in_space():
    L2 = standard_moments(SQUARE, 3)
    # embed: moments with any positive z exponent vanish
    vals = {a: (L2[a[:2]] if a[2] == 0 else 0.0) for a in monomial_basis(3, 3)}
    L = MomentVector.from_dict(3, 3, vals)
    rule = degree3_rule(L, 3)
    assert len(rule) <= 4
    assert np.abs(rule.nodes[:, 2]).max() <= 1e-8
    assert verify_exactness(rule, L).max_residual <= 1e-7


def test_degree3_dirac():
    L = standard_moments(MeasureSpec.dirac([[1.0, 2.0, 3.0]], [1.0]), 3)
    rule = degree3_rule(L, 3)
    assert len(rule) == 1
    np.testing.assert_allclose(rule.nodes[0], [1.0, 2.0, 3.0], atol=1e-8)


def test_degree3_dimension_mismatch():
    with pytest.raises(MomentError, match="dimension mismatch"):
        degree3_rule(standard_moments(SQUARE, 3), 3)
