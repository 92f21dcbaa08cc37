import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from quadsynth.moments import (
    MeasureSpec,
    MomentError,
    MomentVector,
    localizing_matrix,
    moment_matrix,
    normalization_for,
    normalize_moments,
    parse_measure_spec,
    parse_moments,
    psd_rank,
    riesz_apply,
    serialize_moments,
    standard_moments,
)
from quadsynth.poly import Polynomial, monomial_basis, parse_polynomial

UNIFORM = MeasureSpec("uniform-interval", (-1.0, 1.0))


def test_riesz_apply_examples():
    L = standard_moments(UNIFORM, 4)
    assert riesz_apply(L, Polynomial.constant(1, 1.0)) == pytest.approx(2.0)
    assert riesz_apply(L, parse_polynomial("X")) == pytest.approx(0.0, abs=1e-15)
    D = standard_moments(MeasureSpec.dirac([[2.0]], [3.0]), 2)
    assert riesz_apply(D, parse_polynomial("X^2")) == pytest.approx(12.0)


def test_riesz_apply_degree_too_high():
    with pytest.raises(MomentError):
        riesz_apply(standard_moments(UNIFORM, 2), parse_polynomial("X^3"))


def test_standard_moments_against_quadrature():
    L = standard_moments(UNIFORM, 6)
    assert L[(2,)] == pytest.approx(2 / 3, rel=1e-15)
    for k in range(7):
        ref = integrate.quad(lambda x: x**k, -1, 1)[0]
        assert L[(k,)] == pytest.approx(ref, rel=1e-12, abs=1e-14)


def test_circle_moments_against_arc_length_integral():
    L = standard_moments(MeasureSpec("uniform-circle", (0.0, 0.0, 1.0)), 6)
    assert L[(2, 0)] == pytest.approx(math.pi, rel=1e-14)
    for a, b in monomial_basis(2, 6):
        ref = integrate.quad(lambda t: math.cos(t) ** a * math.sin(t) ** b, 0, 2 * math.pi, limit=200)[0]
        assert L[(a, b)] == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_gaussian_moments_double_factorial():
    L = standard_moments(MeasureSpec("gaussian-line", (0.0, 1.0)), 10)
    assert L[(4,)] == pytest.approx(3.0)
    for k in range(1, 6):
        assert L[(2 * k,)] == pytest.approx(math.prod(range(1, 2 * k, 2)), rel=1e-14)
        assert L[(2 * k - 1,)] == pytest.approx(0.0, abs=1e-14)


def test_shifted_disk_and_square_against_dblquad():
    disk = standard_moments(MeasureSpec("uniform-disk", (0.5, -0.25, 1.5)), 4)
    sq = standard_moments(MeasureSpec("uniform-square", (-1.0, 2.0, 0.0, 1.0)), 4)
    for a, b in [(0, 0), (1, 0), (0, 1), (2, 1), (0, 4), (3, 1)]:
        rd = integrate.dblquad(lambda y, x: x**a * y**b, -1.0, 2.0, 0.0, 1.0)[0]
        assert sq[(a, b)] == pytest.approx(rd, rel=1e-10, abs=1e-12)
        rp = integrate.dblquad(lambda r, t: (0.5 + r * math.cos(t)) ** a * (-0.25 + r * math.sin(t)) ** b * r,
                               0, 2 * math.pi, 0, 1.5)[0]
        assert disk[(a, b)] == pytest.approx(rp, rel=1e-9, abs=1e-10)


def test_moment_matrix_examples():
    L = standard_moments(UNIFORM, 4)
    np.testing.assert_allclose(moment_matrix(L, 1).entries, [[2, 0], [0, 2 / 3]], atol=1e-15)
    m = [2, 0, 2 / 3, 0, 2 / 5]
    np.testing.assert_allclose(moment_matrix(L, 2).entries, [[m[i + j] for j in range(3)] for i in range(3)],
                               atol=1e-15)
    D = standard_moments(MeasureSpec.dirac([[0.0]], [1.0]), 4)
    M = moment_matrix(D, 2).entries
    assert M[0, 0] == 1.0 and np.count_nonzero(M) == 1


def test_moment_matrix_needs_degree():
    with pytest.raises(MomentError):
        moment_matrix(standard_moments(UNIFORM, 3), 2)


def test_localizing_matrix_is_shifted_hankel():
    L = standard_moments(UNIFORM, 5)
    np.testing.assert_allclose(localizing_matrix(L, 2, (1,)), [[L[(i + j + 1,)] for j in range(3)] for i in range(3)])


def test_psd_rank_examples():
    r = psd_rank(np.eye(3), rel_tol=1e-9)
    assert r.rank == 3 and r.kernel.shape[1] == 0 and r.is_psd
    r = psd_rank(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert r.rank == 1
    k = r.kernel[:, 0]
    assert abs(abs(k @ np.array([1, -1])) / math.sqrt(2) - 1) < 1e-12
    D = standard_moments(MeasureSpec.dirac([[0.0]], [1.0]), 4)
    assert psd_rank(moment_matrix(D, 2)).rank == 1
    assert not psd_rank(np.diag([1.0, -1.0])).is_psd


def test_parse_moments_examples():
    doc = '{"n":1,"degree":1,"moments":[{"alpha":[0],"value":1},{"alpha":[1],"value":0}]}'
    L = parse_moments(doc)
    assert L.n == 1 and L.degree == 1 and list(L.values) == [1.0, 0.0]
    bad = json.loads(doc)
    bad["moments"].append({"alpha": [2], "value": 1})
    with pytest.raises(MomentError, match="degree mismatch"):
        parse_moments(json.dumps(bad))
    full = {"n": 2, "degree": 3, "moments": [{"alpha": list(a), "value": 1.0} for a in monomial_basis(2, 3)]}
    assert parse_moments(json.dumps(full)).values.size == 10


@pytest.mark.parametrize("doc", [
    "not json",
    "[]",
    '{"n":1,"degree":1}',
    '{"n":1,"degree":1,"moments":[{"alpha":[0],"value":1}]}',
    '{"n":1,"degree":0,"moments":[{"alpha":[0,0],"value":1}]}',
    '{"n":1,"degree":0,"moments":[{"alpha":[0],"value":1},{"alpha":[0],"value":2}]}',
])
def test_parse_moments_errors(doc):
    with pytest.raises(MomentError):
        parse_moments(doc)


@pytest.mark.parametrize("text,kind", [
    ("uniform:-1:1", "uniform-interval"),
    ("gaussian:0:1", "gaussian-line"),
    ("square:-1:1", "uniform-square"),
    ("circle:0:0:1", "uniform-circle"),
    ("disk:0:0:2", "uniform-disk"),
    ("box:-1:1:3", "uniform-box"),
    ("dirac:1,2@1;3,4@2", "dirac-combination"),
])
def test_parse_measure_spec(text, kind):
    assert parse_measure_spec(text).kind == kind


@pytest.mark.parametrize("text", ["uniform:1:-1", "gaussian:0:-1", "weird:1", "circle:0:0", "dirac:1@-1"])
def test_parse_measure_spec_errors(text):
    with pytest.raises(MomentError):
        parse_measure_spec(text)


def test_normalization_roundtrip():
    L = standard_moments(MeasureSpec("uniform-square", (3.0, 7.0, -2.0, 0.0)), 5)
    nz = normalization_for(L)
    Ln = normalize_moments(L, nz)
    # pushing the normalized moments back recovers the original ones
    back = normalize_moments(Ln, type(nz)(-nz.center / nz.scale, 1.0 / nz.scale))
    np.testing.assert_allclose(back.values, L.values, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), deg=st.integers(1, 5))
def test_riesz_apply_linear(seed, n, deg):
    rng = np.random.default_rng(seed)
    basis = monomial_basis(n, deg)
    L = MomentVector(n, deg, rng.normal(size=len(basis)))
    p = Polynomial.from_vector(n, rng.normal(size=len(basis)), basis)
    q = Polynomial.from_vector(n, rng.normal(size=len(basis)), basis)
    a, b = rng.normal(size=2)
    lhs = riesz_apply(L, a * p + b * q)
    rhs = a * riesz_apply(L, p) + b * riesz_apply(L, q)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(rhs) + abs(a * riesz_apply(L, p)) + abs(b * riesz_apply(L, q)))


@pytest.mark.parametrize("spec,deg", [
    (UNIFORM, 8), (MeasureSpec("gaussian-line", (1.0, 2.0)), 8),
    (MeasureSpec("uniform-square", (-1.0, 1.0)), 6), (MeasureSpec("uniform-circle", (0.0, 0.0, 1.0)), 6),
    (MeasureSpec("uniform-disk", (1.0, 1.0, 0.5)), 6), (MeasureSpec("uniform-box", (-1.0, 1.0, 3)), 4),
])
def test_standard_moments_psd(spec, deg):
    assert psd_rank(moment_matrix(standard_moments(spec, deg), deg // 2)).is_psd


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8))
def test_dirac_rank(seed, m):
    rng = np.random.default_rng(seed)
    nodes = rng.uniform(-1, 1, size=(m, 2))
    L = MomentVector.from_rule(nodes, rng.uniform(0.5, 2, size=m), 8)
    r = psd_rank(moment_matrix(L, 4), rel_tol=1e-12)
    assert r.rank == min(m, 15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 3), deg=st.integers(0, 5))
def test_serialize_roundtrip(seed, n, deg):
    rng = np.random.default_rng(seed)
    L = MomentVector(n, deg, rng.normal(size=math.comb(n + deg, n)))
    back = parse_moments(serialize_moments(L))
    assert back.n == n and back.degree == deg
    np.testing.assert_array_equal(back.values, L.values)
