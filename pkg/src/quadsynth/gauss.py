"""Gaussian quadrature on the real line.

Three independent routes to the same rule:

* :func:`gauss_rule` minimizes the degree-``2d`` moment of a moment extension
  (a one-variable SDP on a Hankel-type matrix), reads the kernel polynomial off
  the singular optimum and recovers nodes as its roots.
* :func:`golub_welsch` builds the Jacobi matrix from a Cholesky factor of the
  Hankel matrix and diagonalizes it.
* :func:`penalty_optimize` solves the nonconvex amplitude/node program with a
  penalty on node positions.

Internally the first route works in a Chebyshev basis on affinely normalized
coordinates.  The basis change is done in exact rational arithmetic and the
final kernel/root/weight computations in extended precision, so that the
conditioning of raw Hankel matrices never enters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import mpmath
import numpy as np
from numpy.polynomial import chebyshev as npcheb
from scipy.optimize import minimize

from .conic import OPTIMAL, SdpProblem, solve_sdp
from .moments import MomentError, MomentVector, Normalization, normalization_for, psd_rank
from .poly import Polynomial
from .rules import NumericalFailure, QuadratureRule, moment_residuals

log = logging.getLogger(__name__)

MP_DPS = 60


# ---------------------------------------------------------------------------
# exact basis conversions

def _cheb_poly_coeffs(K: int) -> list[list[Fraction]]:
    """Monomial coefficients of T_0..T_K."""
    T = [[Fraction(1)], [Fraction(0), Fraction(1)]]
    for k in range(2, K + 1):
        nxt = [Fraction(0)] * (k + 1)
        for i, c in enumerate(T[k - 1]):
            nxt[i + 1] += 2 * c
        for i, c in enumerate(T[k - 2]):
            nxt[i] -= c
        T.append(nxt)
    return T[: K + 1]


def _normalized_raw_moments(m: list[Fraction], center: Fraction, scale: Fraction) -> list[Fraction]:
    """Moments of ``t = (x - center) / scale`` from raw moments of ``x``."""
    out = []
    for k in range(len(m)):
        s = sum(comb(k, j) * (-center) ** (k - j) * m[j] for j in range(k + 1))
        out.append(s / scale**k)
    return out


def chebyshev_moments(L: MomentVector, nz: Normalization) -> list[Fraction]:
    """Exact ``L(T_k((x - c)/s))`` for ``k <= L.degree`` treating the float moments as exact."""
    m = [Fraction(float(v)) for v in L.values]
    t = _normalized_raw_moments(m, Fraction(float(nz.center[0])), Fraction(float(nz.scale)))
    T = _cheb_poly_coeffs(L.degree)
    return [sum(c * t[i] for i, c in enumerate(T[k])) for k in range(L.degree + 1)]


def _monomial_in_chebyshev(K: int) -> list[list[Fraction]]:
    """Chebyshev coefficients of t^0..t^K (inverse of the table above)."""
    out = [[Fraction(1)]]
    for k in range(1, K + 1):
        prev = out[-1]
        nxt = [Fraction(0)] * (k + 1)
        # t * T_j = (T_{j+1} + T_{|j-1|}) / 2
        for j, c in enumerate(prev):
            nxt[j + 1] += c / 2
            nxt[abs(j - 1)] += c / 2
        out.append(nxt)
    return out


def raw_moment_from_chebyshev(cheb: list, nz: Normalization, k: int) -> float:
    """``Lambda(x^k)`` from Chebyshev moments of the normalized variable (entries may be mpf)."""
    tinv = _monomial_in_chebyshev(k)
    c, s = mpmath.mpf(float(nz.center[0])), mpmath.mpf(float(nz.scale))
    total = mpmath.mpf(0)
    for j in range(k + 1):
        tj = sum(_mpf(a) * _mpf(cheb[i]) for i, a in enumerate(tinv[j]))
        total += comb(k, j) * c ** (k - j) * s**j * tj
    return float(total)


def _mpf(x) -> mpmath.mpf:
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


def _cheb_gram(c: list, order: int) -> mpmath.matrix:
    """``G[i, j] = L(T_i T_j) = (c_{i+j} + c_{|i-j|}) / 2`` for ``i, j <= order``."""
    G = mpmath.matrix(order + 1, order + 1)
    for i in range(order + 1):
        for j in range(order + 1):
            G[i, j] = (_mpf(c[i + j]) + _mpf(c[abs(i - j)])) / 2
    return G


def _clenshaw(coeffs, t):
    """Value and derivative of ``sum coeffs[k] T_k(t)`` (mpf arithmetic)."""
    b1 = b2 = mpmath.mpf(0)
    d1 = d2 = mpmath.mpf(0)
    for ck in reversed(coeffs[1:]):
        b1, b2, d1, d2 = 2 * t * b1 - b2 + ck, b1, 2 * b1 + 2 * t * d1 - d2, d1
    val = t * b1 - b2 + coeffs[0]
    der = b1 + t * d1 - d2
    return val, der


def _cheb_roots(coeffs: list) -> list:
    """Real roots of a Chebyshev series, colleague-matrix estimate then mp Newton."""
    cf = np.array([float(c) for c in coeffs])
    est = npcheb.chebroots(cf)
    scale = max(abs(float(c)) for c in coeffs)
    roots = []
    for r in est:
        if abs(r.imag) > 1e-5 * max(1.0, abs(r.real)):
            continue
        t = mpmath.mpf(r.real)
        for _ in range(60):
            v, dv = _clenshaw(coeffs, t)
            if dv == 0:
                break
            step = v / dv
            t -= step
            if abs(step) <= mpmath.mpf(10) ** (-(MP_DPS - 10)) * (1 + abs(t)):
                break
        v, _ = _clenshaw(coeffs, t)
        if abs(v) <= mpmath.mpf(10) ** (-20) * scale * (1 + abs(t)) ** len(coeffs):
            roots.append(t)
    roots.sort()
    return roots


def _cheb_weights(roots: list, c: list) -> list:
    """Solve ``sum_i w_i T_j(t_i) = c_j`` for ``j < len(roots)``."""
    ell = len(roots)
    A = mpmath.matrix(ell, ell)
    rhs = mpmath.matrix(ell, 1)
    for j in range(ell):
        rhs[j] = _mpf(c[j])
    for i, t in enumerate(roots):
        prev, cur = mpmath.mpf(1), t
        for j in range(ell):
            A[j, i] = prev
            prev, cur = cur, 2 * t * cur - prev
    w = mpmath.lu_solve(A, rhs)
    return [w[i] for i in range(ell)]


# ---------------------------------------------------------------------------
# SDP route

@dataclass
class GaussResult:
    """Everything the SDP route learned: the rule plus its optimality certificate."""

    rule: QuadratureRule
    d: int
    degenerate: bool
    extension_value: float  # Lambda*(X^{2d}) in original coordinates
    certificate: Polynomial | None  # h = p^2 with Lambda*(h) = 0
    kernel_poly: Polynomial | None
    sdp_status: str | None
    sdp_gap: float | None
    residual: float
    info: dict = field(default_factory=dict)


def _check_1d(L: MomentVector, d: int) -> MomentVector:
    if L.n != 1:
        raise MomentError(f"expected a univariate moment vector, got n={L.n}")
    if d < 1:
        raise MomentError("d must be a positive integer")
    if L.degree < 2 * d - 1:
        raise MomentError(f"need moments up to degree {2 * d - 1}, have {L.degree}")
    if L.mass <= 0:
        raise MomentError("not a moment vector: nonpositive mass")
    return L.truncate(2 * d - 1)


def _cheb_to_poly(coeffs: list, nz: Normalization) -> Polynomial:
    """Polynomial in the original variable x for ``sum coeffs[k] T_k((x - c)/s)``."""
    mono = npcheb.cheb2poly(np.array([float(c) for c in coeffs]))
    p = Polynomial(1, [((k,), v) for k, v in enumerate(mono)])
    return p.compose_affine(np.array([[1.0 / nz.scale]]), np.array([-nz.center[0] / nz.scale]))


def solve_gauss(L: MomentVector, d: int, rel_tol: float = 1e-10) -> GaussResult:
    """Gaussian rule by minimal moment extension; see :func:`gauss_rule`."""
    L = _check_1d(L, d)
    nz = normalization_for(L)
    c = chebyshev_moments(L, nz)
    with mpmath.workdps(MP_DPS):
        # rank of the order-(d-1) moment matrix decides the degenerate branch
        G0 = _cheb_gram(c, d - 1)
        G0f = np.array(G0.tolist(), dtype=float)
        pr = psd_rank(G0f, rel_tol)
        if not pr.is_psd:
            raise MomentError("not a moment vector: moment matrix is not positive semidefinite")
        r = pr.rank
        sdp_status = sdp_gap = None
        if r < d:
            # support has r points: the order-r section is singular with a one-dimensional kernel
            if r == 0:
                raise MomentError("not a moment vector: zero moment matrix")
            G = _cheb_gram(c, r)
            A = G[:r, :r]
            g = G[:r, r]
            a = mpmath.lu_solve(A, -g)
            kern = [a[i] for i in range(r)] + [mpmath.mpf(1)]
            c_ext = None
            degenerate = True
        else:
            # SDP over the Chebyshev-basis moment matrix with free entry c_{2d}
            C = np.array(_cheb_gram(list(c) + [Fraction(0)], d).tolist(), dtype=float)
            C[d, d] = float(c[0]) / 2
            E = np.zeros((d + 1, d + 1))
            E[d, d] = 1.0
            sol = solve_sdp(SdpProblem([d + 1], [C], [[E]], [1.0]))
            sdp_status, sdp_gap = sol.status, sol.gap
            if sol.status != OPTIMAL:
                raise NumericalFailure(f"moment extension SDP ended with status {sol.status}", gap=sol.gap)
            y_sdp = float(sol.dual[0])
            # exact boundary point of the PSD segment, i.e. the optimality condition solved in mp
            G = _cheb_gram(list(c) + [mpmath.mpf(0)], d)
            A = G[:d, :d]
            g = G[:d, d]
            sol_a = mpmath.lu_solve(A, g)
            y_exact = _mpf(c[0]) / 2 - (g.T * sol_a)[0]
            kern = [-sol_a[i] for i in range(d)] + [mpmath.mpf(1)]
            c_ext = -2 * y_exact
            scale_y = 1 + abs(float(y_exact))
            if abs(float(y_exact) - y_sdp) > 1e-5 * scale_y:
                raise NumericalFailure("SDP optimum disagrees with the boundary condition",
                                       sdp=y_sdp, exact=float(y_exact))
            degenerate = False
        roots = _cheb_roots(kern)
        if len(roots) != len(kern) - 1:
            raise NumericalFailure("kernel polynomial does not split over the reals",
                                   expected=len(kern) - 1, found=len(roots))
        w = _cheb_weights(roots, c)
        if any(wi <= 0 for wi in w):
            raise NumericalFailure("negative weight in recovered rule", weights=[float(v) for v in w])
        nodes = np.array([float(nz.center[0] + nz.scale * t) for t in roots])
        weights = np.array([float(v) for v in w])
        if c_ext is None:
            # degenerate: the extension is forced, read it from the rule
            ext_value = float(mpmath.fsum(_mpf(wi) * (nz.center[0] + nz.scale * t) ** (2 * d) for wi, t in zip(w, roots)))
        else:
            ext_value = raw_moment_from_chebyshev(list(c) + [c_ext], nz, 2 * d)
    rule = QuadratureRule(nodes.reshape(-1, 1), weights)
    res = float(moment_residuals(rule.nodes, rule.weights, L).max())
    p = _cheb_to_poly(kern, nz)
    return GaussResult(rule, d, degenerate, ext_value, p * p, p, sdp_status, sdp_gap, res,
                       info={"rank": r, "normalization": (float(nz.center[0]), nz.scale)})


def gauss_rule(L: MomentVector, d: int) -> QuadratureRule:
    """The unique positive rule with at most ``d`` nodes exact up to degree ``2d-1``.

    Raises ``MomentError`` if ``L`` is not a moment vector and
    ``NumericalFailure`` if the extracted rule cannot be certified.
    """
    return solve_gauss(L, d).rule


# ---------------------------------------------------------------------------
# Golub-Welsch oracle

class DegenerateMoments(MomentError):
    pass


def golub_welsch(L: MomentVector, d: int) -> QuadratureRule:
    """Classical Gaussian rule from the Jacobi matrix of the orthonormal polynomials."""
    L = _check_1d(L, d)
    with mpmath.workdps(MP_DPS):
        m = [_mpf(Fraction(float(v))) for v in L.values]
        # R^T R = H_{d-1}, plus the extra column r_{., d} = R^{-T} h_{., d}
        R = mpmath.matrix(d, d + 1)
        for i in range(d):
            s = m[2 * i] - mpmath.fsum(R[k, i] ** 2 for k in range(i))
            if s <= 0:
                raise DegenerateMoments(f"Hankel matrix of order {d - 1} is not positive definite")
            R[i, i] = mpmath.sqrt(s)
            for j in range(i + 1, d + 1):
                R[i, j] = (m[i + j] - mpmath.fsum(R[k, i] * R[k, j] for k in range(i))) / R[i, i]
        alpha, beta = [], []
        for j in range(d):
            a = R[j, j + 1] / R[j, j]
            if j > 0:
                a -= R[j - 1, j] / R[j - 1, j - 1]
            alpha.append(a)
            if j < d - 1:
                beta.append(R[j + 1, j + 1] / R[j, j])
        J = mpmath.matrix(d, d)
        for j in range(d):
            J[j, j] = alpha[j]
            if j < d - 1:
                J[j, j + 1] = J[j + 1, j] = beta[j]
        ev, Q = mpmath.eigsy(J)
        nodes = [ev[i] for i in range(d)]
        weights = [m[0] * Q[0, i] ** 2 for i in range(d)]
        order = sorted(range(d), key=lambda i: nodes[i])
        return QuadratureRule(np.array([[float(nodes[i])] for i in order]), np.array([float(weights[i]) for i in order]))


# ---------------------------------------------------------------------------
# penalty route

PENALTY_KINDS = ("sum-abs", "max-abs", "sum-power", "sum-squares")


@dataclass(frozen=True)
class PenaltySpec:
    kind: str
    xi: float = 0.0
    alpha: float = 2.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty {self.kind!r}; expected one of {PENALTY_KINDS}")
        if self.kind == "sum-power" and not self.alpha > 1:
            raise ValueError("sum-power penalty needs alpha > 1")

    def __call__(self, x) -> float:
        r = np.abs(np.asarray(x, dtype=float).reshape(-1) - self.xi)
        if self.kind == "sum-abs":
            return float(r.sum())
        if self.kind == "max-abs":
            return float(r.max()) if r.size else 0.0
        if self.kind == "sum-power":
            return float((r**self.alpha).sum())
        return float((r**2).sum())


def _cheb_vander(t: np.ndarray, K: int) -> np.ndarray:
    return npcheb.chebvander(t, K).T  # (K+1, m)


def _cheb_vander_deriv(t: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((K + 1, t.size))
    for k in range(1, K + 1):
        e = np.zeros(k + 1)
        e[k] = 1.0
        out[k] = npcheb.chebval(t, npcheb.chebder(e))
    return out


def _newton_polish(t: np.ndarray, u: np.ndarray, target: np.ndarray, K: int, iters: int = 50):
    """Gauss-Newton on ``sum_i u_i T_j(t_i) = target_j`` (least-norm steps)."""
    for _ in range(iters):
        V = _cheb_vander(t, K)
        res = V @ u - target
        if np.abs(res).max() <= 1e-15:
            break
        J = np.hstack([V, _cheb_vander_deriv(t, K) * u])
        step = np.linalg.lstsq(J, -res, rcond=None)[0]
        u = u + step[: u.size]
        t = t + step[u.size:]
        if np.abs(step).max() <= 1e-16:
            break
    return t, u


def penalty_optimize(L: MomentVector, m: int, f: PenaltySpec, d: int | None = None,
                     n_starts: int = 5, collapse_tol: float = 1e-4) -> QuadratureRule:
    """Minimize a node penalty over rules written as ``m`` squared amplitudes and positions.

    The optimal collapsed rule is the Gaussian rule; the result is checked
    against that and raised as ``NumericalFailure`` if it has more than ``d``
    nodes.
    """
    if d is None:
        d = (L.degree + 1) // 2
    L = _check_1d(L, d)
    if m < d:
        raise MomentError(f"node budget m={m} is below d={d}")
    gauss = solve_gauss(L, d)
    if len(gauss.rule) > m:
        raise MomentError(f"L needs {len(gauss.rule)} nodes but the budget is {m}")
    nz = normalization_for(L)
    K = 2 * d - 1
    c = np.array([float(v) for v in chebyshev_moments(L, nz)])
    mass = c[0]
    target = c / mass
    tau = (f.xi - nz.center[0]) / nz.scale
    kind = f.kind

    nv = 2 * m + (m if kind == "sum-abs" else 1 if kind == "max-abs" else 0)

    def split(z):
        return z[:m], z[m:2 * m], z[2 * m:]

    def objective(z):
        a, t, e = split(z)
        if kind == "sum-abs":
            return e.sum()
        if kind == "max-abs":
            return e[0]
        if kind == "sum-power":
            return (np.abs(t - tau) ** f.alpha).sum()
        return ((t - tau) ** 2).sum()

    def objective_grad(z):
        a, t, e = split(z)
        g = np.zeros_like(z)
        if kind in ("sum-abs", "max-abs"):
            g[2 * m:] = 1.0
        elif kind == "sum-power":
            r = t - tau
            g[m:2 * m] = f.alpha * np.sign(r) * np.abs(r) ** (f.alpha - 1)
        else:
            g[m:2 * m] = 2 * (t - tau)
        return g

    def eq(z):
        a, t, _ = split(z)
        return _cheb_vander(t, K) @ (a**2) - target

    def eq_jac(z):
        a, t, _ = split(z)
        J = np.zeros((K + 1, nv))
        J[:, :m] = _cheb_vander(t, K) * (2 * a)
        J[:, m:2 * m] = _cheb_vander_deriv(t, K) * (a**2)
        return J

    cons = [{"type": "eq", "fun": eq, "jac": eq_jac}]
    if kind == "sum-abs":
        def ineq(z):
            _, t, e = split(z)
            return np.concatenate([e - (t - tau), e + (t - tau)])

        def ineq_jac(z):
            J = np.zeros((2 * m, nv))
            J[:m, m:2 * m] = -np.eye(m)
            J[m:, m:2 * m] = np.eye(m)
            J[:m, 2 * m:] = np.eye(m)
            J[m:, 2 * m:] = np.eye(m)
            return J
        cons.append({"type": "ineq", "fun": ineq, "jac": ineq_jac})
    elif kind == "max-abs":
        def ineq(z):
            _, t, e = split(z)
            return np.concatenate([e[0] - (t - tau), e[0] + (t - tau)])

        def ineq_jac(z):
            J = np.zeros((2 * m, nv))
            J[:m, m:2 * m] = -np.eye(m)
            J[m:, m:2 * m] = np.eye(m)
            J[:, 2 * m] = 1.0
            return J
        cons.append({"type": "ineq", "fun": ineq, "jac": ineq_jac})

    best = None
    cheb_nodes = np.cos(np.pi * (2 * np.arange(m) + 1) / (2 * m))
    for k in range(n_starts):
        spread = (1.0, 0.8, 1.2, 0.6, 1.4)[k % 5]
        t0 = np.sort(spread * cheb_nodes + 0.05 * k / max(n_starts, 1))
        a0 = np.full(m, math.sqrt(1.0 / m))
        e0 = np.abs(t0 - tau) if kind == "sum-abs" else (np.array([np.abs(t0 - tau).max()]) if kind == "max-abs" else np.zeros(0))
        z0 = np.concatenate([a0, t0, e0])
        res = minimize(objective, z0, jac=objective_grad, constraints=cons, method="SLSQP",
                       options={"maxiter": 1000, "ftol": 1e-14})
        viol = np.abs(eq(res.x)).max()
        score = (viol > 1e-7, objective(res.x))
        if best is None or score < best[0]:
            best = (score, res)
    (_, _), res = best
    a, t, _ = split(res.x)
    u = a**2
    keep = u > 1e-7
    t, u = t[keep], u[keep]
    order = np.argsort(t)
    t, u = t[order], u[order]
    # merge coincident positions
    groups: list[list[int]] = []
    for i in range(t.size):
        if groups and abs(t[i] - t[groups[-1][-1]]) <= collapse_tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    tc = np.array([np.average(t[g], weights=u[g]) for g in groups])
    uc = np.array([u[g].sum() for g in groups])
    if tc.size > d:
        raise NumericalFailure(f"penalty optimizer left {tc.size} nodes, more than d={d}",
                               nodes=(nz.center[0] + nz.scale * tc).tolist(), weights=(mass * uc).tolist())
    tc, uc = _newton_polish(tc, uc, target, K)
    if np.any(uc <= 0) or np.abs(_cheb_vander(tc, K) @ uc - target).max() > 1e-9:
        raise NumericalFailure("penalty optimizer result is not an exact rule",
                               nodes=(nz.center[0] + nz.scale * tc).tolist())
    nodes = nz.center[0] + nz.scale * tc
    return QuadratureRule(nodes.reshape(-1, 1), mass * uc)


# ---------------------------------------------------------------------------
# root-count lemma harness

def sign_condition_root_bound_check(h: Polynomial, roots, xi: float, d: int | None = None, tol: float = 1e-9) -> bool:
    """Check the root-count bound for a polynomial of degree ``<= 2d-1`` with sign-constrained derivative.

    Preconditions: every listed root is a root of ``h``; ``h' <= 0`` at roots
    left of ``xi`` and ``h' >= 0`` at roots right of ``xi``.  Returns whether
    the number of roots is at most ``d`` (default: smallest admissible ``d``).
    """
    if h.n != 1 or h.is_zero():
        raise ValueError("h must be a nonzero univariate polynomial")
    deg = int(h.degree)
    if d is None:
        d = max(1, (deg + 2) // 2)
    if deg > 2 * d - 1:
        raise ValueError(f"degree of h is {deg}, exceeds 2d-1 = {2 * d - 1}")
    dh = h.derivative(0)
    for x in roots:
        x = float(x)
        if abs(h.eval([x])) > tol * (1 + h.max_abs_coeff() * (1 + abs(x)) ** deg):
            raise ValueError(f"{x} is not a root of h")
        slope = dh.eval([x])
        if x < xi and slope > tol:
            raise ValueError(f"h'({x}) = {slope} > 0 at a root left of xi={xi}")
        if x > xi and slope < -tol:
            raise ValueError(f"h'({x}) = {slope} < 0 at a root right of xi={xi}")
    return len(set(map(float, roots))) <= d
