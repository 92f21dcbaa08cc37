"""Quadrature for measures supported on a plane algebraic curve.

Lines reduce to the univariate Gaussian rule through an affine
parametrization, the unit circle goes through trigonometric moments and a
Toeplitz kernel, and general curves are handled by a linear program over
points sampled on the curve followed by cluster merging and a constrained
Gauss-Newton polish.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .gauss import gauss_rule
from .moments import MomentError, MomentVector, Normalization, normalize_moments, riesz_apply
from .poly import Polynomial, monomial_basis
from .rules import (NumericalFailure, QuadratureRule, grid_lp_rule, merge_nodes, moment_residuals, polish_rule,
                    weights_nnls)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AffineMap:
    """``x -> A x + b`` with ``A`` of shape ``(m, n)``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"matrix has {A.shape[0]} rows but offset has {b.size} entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim_in(self) -> int:
        return self.A.shape[1]

    @property
    def dim_out(self) -> int:
        return self.A.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.b

    def then(self, other: AffineMap) -> AffineMap:
        """``other o self``."""
        return AffineMap(other.A @ self.A, other.A @ self.b + other.b)

    @classmethod
    def identity(cls, n: int) -> AffineMap:
        return cls(np.eye(n), np.zeros(n))


def pushforward(L: MomentVector, phi: AffineMap, degree: int | None = None) -> MomentVector:
    """Moments of the image functional ``p -> L(p o phi)``."""
    if phi.dim_in != L.n:
        raise MomentError(f"dimension mismatch: map takes R^{phi.dim_in}, moments live in R^{L.n}")
    degree = L.degree if degree is None else degree
    if degree > L.degree:
        raise MomentError(f"requested degree {degree} exceeds available {L.degree}")
    out = [riesz_apply(L, Polynomial.monomial(beta).compose_affine(phi.A, phi.b))
           for beta in monomial_basis(phi.dim_out, degree)]
    return MomentVector(phi.dim_out, degree, out)


@dataclass(frozen=True)
class CurveSpec:
    g: Polynomial

    def __post_init__(self):
        if self.g.n != 2:
            raise ValueError("curves live in the plane: g must have 2 variables")
        if self.g.is_zero() or self.g.degree < 1:
            raise ValueError("curve polynomial must be nonconstant")

    @property
    def k(self) -> int:
        return int(self.g.degree)

    @classmethod
    def parse(cls, text: str) -> CurveSpec:
        from .poly import parse_polynomial
        return cls(parse_polynomial(text, n=2))


def curve_residual(L: MomentVector, g: Polynomial) -> float:
    """Largest ``|L(g m)|`` over monomials ``m`` with ``deg(g m) <= L.degree``, relative to the moment scale."""
    k = int(g.degree)
    if L.degree < k:
        return 0.0
    worst = 0.0
    scale = 1.0 + np.abs(L.values).max() * sum(abs(c) for _, c in g.terms)
    for alpha in monomial_basis(2, L.degree - k):
        worst = max(worst, abs(riesz_apply(L, g * Polynomial.monomial(alpha))))
    return worst / scale


def _check_support(L: MomentVector, g: Polynomial, tol: float) -> None:
    res = curve_residual(L, g)
    if res > tol:
        raise MomentError(f"moments not supported on curve (residual {res:.3e})")


# ---------------------------------------------------------------------------
# lines

def line_parametrization(g: Polynomial) -> tuple[AffineMap, AffineMap]:
    """For a line ``g = a X + b Y + c``: ``(phi: R -> line, psi: R^2 -> R)`` with ``psi o phi = id``."""
    a, b, c = g.coeff((1, 0)), g.coeff((0, 1)), g.coeff((0, 0))
    nrm = math.hypot(a, b)
    if g.degree != 1 or nrm == 0:
        raise ValueError("not a line")
    u = np.array([-b, a]) / nrm
    x0 = -c * np.array([a, b]) / nrm**2
    phi = AffineMap(u.reshape(2, 1), x0)
    psi = AffineMap(u.reshape(1, 2), np.array([-u @ x0]))
    return phi, psi


def line_quadrature(L: MomentVector, line: CurveSpec, d: int, tol: float = 1e-8) -> QuadratureRule:
    """At most ``d`` nodes on the line, exact up to degree ``2d-1``."""
    if L.n != 2:
        raise MomentError("line quadrature needs bivariate moments")
    if line.k != 1:
        raise ValueError("curve is not a line")
    L = L.truncate(2 * d - 1)
    _check_support(L, line.g, tol)
    phi, psi = line_parametrization(line.g)
    rule1 = gauss_rule(pushforward(L, psi), d)
    return QuadratureRule(phi(rule1.nodes), rule1.weights)


# ---------------------------------------------------------------------------
# unit circle

def trigonometric_moments(L: MomentVector, K: int) -> np.ndarray:
    """``c_j = L((X + iY)^j)`` for ``j = 0..K`` by binomial expansion."""
    if L.n != 2 or K > L.degree:
        raise MomentError("need bivariate moments of degree >= K")
    out = np.zeros(K + 1, dtype=complex)
    for j in range(K + 1):
        out[j] = sum(comb(j, k) * (1j) ** k * L[(j - k, k)] for k in range(j + 1))
    return out


def _toeplitz(c: np.ndarray, size: int) -> np.ndarray:
    T = np.empty((size, size), dtype=complex)
    for j in range(size):
        for k in range(size):
            T[j, k] = c[k - j] if k >= j else np.conj(c[j - k])
    return T


def szego_rule(L: MomentVector, d: int, rel_tol: float = 1e-10, support_tol: float = 1e-8) -> QuadratureRule:
    """At most ``2d`` nodes on the unit circle, exact up to degree ``2d-1``.

    Among the one-parameter family of such rules, the one minimizing the real
    part of the extended moment ``L((X+iY)^{2d})`` is returned.
    """
    if L.n != 2:
        raise MomentError("circle quadrature needs bivariate moments")
    L = L.truncate(2 * d - 1)
    _check_support(L, Polynomial(2, {(2, 0): 1.0, (0, 2): 1.0, (0, 0): -1.0}), support_tol)
    K = 2 * d
    c = np.zeros(K + 1, dtype=complex)
    c[:K] = trigonometric_moments(L, K - 1)
    Tk = _toeplitz(c, K)
    w = np.linalg.eigvalsh(Tk)
    if w[-1] <= 0 or w[0] < -1e-9 * w[-1]:
        raise MomentError("not circle moments: Toeplitz matrix is not positive semidefinite")
    rank = int((w > rel_tol * w[-1]).sum())
    if rank < K:
        # support has `rank` points: the leading section of that size plus one is singular
        size = rank + 1
        T = _toeplitz(c, size)
    else:
        M = Tk[1:, 1:]
        u = Tk[0, 1:]
        v = np.array([c[K - j] for j in range(1, K)])
        Minv_v = np.linalg.solve(M, v)
        center = u @ Minv_v
        r2 = (c[0].real - (u @ np.linalg.solve(M, u.conj())).real) * (c[0].real - (v.conj() @ Minv_v).real)
        c[K] = center - math.sqrt(max(r2, 0.0))
        T = _toeplitz(c, K + 1)
        size = K + 1
    _, _, vh = np.linalg.svd(T)
    a = vh[-1].conj()  # T a = 0
    roots = np.roots(a[::-1])
    if roots.size != size - 1:
        raise NumericalFailure("kernel polynomial lost degree", expected=size - 1, found=roots.size)
    dev = np.abs(np.abs(roots) - 1.0)
    if dev.max() > 1e-6:
        raise NumericalFailure("kernel roots are off the unit circle", deviation=float(dev.max()))
    z = roots / np.abs(roots)
    # weights from the trigonometric Vandermonde system, real and imaginary parts stacked
    Vz = np.vander(z, K, increasing=True).T
    A = np.vstack([Vz.real, Vz.imag])
    rhs = np.concatenate([c[:K].real, c[:K].imag])
    wts = np.linalg.lstsq(A, rhs, rcond=None)[0]
    if np.any(wts <= 0):
        raise NumericalFailure("nonpositive Szego weight", weights=wts.tolist())
    nodes = np.column_stack([z.real, z.imag])
    nodes, wts = polish_rule(nodes, wts, L, constraints=[Polynomial(2, {(2, 0): 1.0, (0, 2): 1.0, (0, 0): -1.0})])
    nodes = nodes / np.linalg.norm(nodes, axis=1, keepdims=True)
    order = np.argsort(np.arctan2(nodes[:, 1], nodes[:, 0]))
    return QuadratureRule(nodes[order], wts[order])


# ---------------------------------------------------------------------------
# general curves

@dataclass
class CurveGridResult:
    rule: QuadratureRule
    lp_value: float
    lp_exact: bool
    samples: int
    pre_merge_nodes: int
    target: int
    certified: bool
    residual: float
    info: dict = field(default_factory=dict)

    @property
    def certified_bound(self) -> dict:
        return {"target": self.target, "achieved": len(self.rule), "certified": self.certified}


def moment_box(L: MomentVector, width: float = 6.0) -> tuple[np.ndarray, float]:
    """Center and isotropic half-width ``width * sigma`` inferred from degree-2 moments."""
    m0 = L.mass
    mean = np.array([L[(1, 0)], L[(0, 1)]]) / m0
    var = np.array([L[(2, 0)], L[(0, 2)]]) / m0 - mean**2
    sigma = math.sqrt(max(float(var.max()), 0.0))
    half = width * sigma if sigma > 0 else 1.0
    return mean, half


def sample_curve(g: Polynomial, center, half: float, level: int, min_level: int = 3) -> np.ndarray:
    """Points of ``Z(g)`` in the box, from nested dyadic grids of ``2^min_level .. 2^level`` cells per side.

    The coarsest grid is scanned in full; finer levels only subdivide cells
    that may meet the curve, so the cost tracks the curve length rather than
    the box area. Each level's grid contains the previous one, hence the
    sample sets are nested.
    """
    center = np.asarray(center, dtype=float)
    grad = g.gradient()
    lo = center - half
    m0 = 2**min_level
    ii, jj = np.meshgrid(np.arange(m0), np.arange(m0), indexing="ij")
    cells = np.column_stack([ii.ravel(), jj.ravel()])
    pts = []
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
    for lev in range(min_level, level + 1):
        if cells.size == 0:
            break
        h = 2.0 * half / 2**lev
        # corner values, shape (cells, 4)
        C = (cells[:, None, :] + corners[None, :, :]).reshape(-1, 2)
        G = g.eval_many(lo + h * C).reshape(-1, 4)
        P = lo + h * cells
        gscale = np.abs(G).max() + 1e-300
        zero = np.abs(G) <= 1e-14 * gscale
        if zero.any():
            pts.append((lo + h * C.reshape(-1, 4, 2))[zero])
        # sign changes on the bottom/left/top/right edges of each cell
        for a, b, base, axis in ((0, 1, (0, 0), 0), (0, 2, (0, 0), 1), (2, 3, (0, 1), 0), (1, 3, (1, 0), 1)):
            ga, gb = G[:, a], G[:, b]
            mask = ga * gb < 0
            if not mask.any():
                continue
            t = ga[mask] / (ga[mask] - gb[mask])
            q = P[mask] + h * np.asarray(base, dtype=float)
            q[:, axis] += t * h
            pts.append(q)
        if lev == level:
            break
        # keep cells the curve may cross: a sign change, or |g| small compared
        # with the gradient times the cell diagonal
        mid = g.eval_many(P + 0.5 * h)
        gx = grad[0].eval_many(P + 0.5 * h)
        gy = grad[1].eval_many(P + 0.5 * h)
        slope = np.hypot(gx, gy) + np.abs(G - mid[:, None]).max(axis=1) / h
        keep = (G.min(axis=1) <= 0) & (G.max(axis=1) >= 0)
        keep |= np.abs(mid) <= 2.0 * h * slope
        cells = cells[keep]
        cells = (2 * cells[:, None, :] + corners[None, :, :]).reshape(-1, 2)
    P = np.vstack(pts) if pts else np.zeros((0, 2))
    # project onto the curve along the gradient
    for _ in range(8):
        gv = g.eval_many(P)
        gx, gy = grad[0].eval_many(P), grad[1].eval_many(P)
        nrm2 = gx**2 + gy**2
        ok = nrm2 > 1e-24
        step = np.where(ok, gv / np.where(ok, nrm2, 1.0), 0.0)
        P = P - step[:, None] * np.column_stack([gx, gy])
    inside = np.all(np.abs(P - center) <= half * (1 + 1e-9), axis=1)
    P = P[inside]
    if P.size:
        P = np.unique(np.round(P, 13), axis=0)
    return P


def _normalized(L: MomentVector, center, half) -> tuple[Normalization, MomentVector]:
    nz = Normalization(np.asarray(center, dtype=float), 2.0 ** round(math.log2(half)) if half > 0 else 1.0)
    return nz, normalize_moments(L, nz)


def solve_curve_grid(L: MomentVector, curve: CurveSpec, d: int, f: Polynomial | None = None,
                     grid_res: int = 1024, box: tuple | None = None, merge_radius: float | None = None,
                     tol: float = 1e-7) -> CurveGridResult:
    """Grid LP over curve samples, merge, polish on the curve."""
    if L.n != 2:
        raise MomentError("curve quadrature needs bivariate moments")
    L = L.truncate(2 * d - 1)
    g = curve.g
    _check_support(L, g, 1e-8)
    if f is None:
        # unequal coefficients: X^2d + Y^2d is constant-plus-lower-degree on some
        # symmetric curves (circles), which makes every feasible rule optimal
        f = Polynomial(2, {(2 * d, 0): 1.0, (0, 2 * d): 2.0})
    if box is None:
        center, half = moment_box(L)
        log.info("curve grid: box inferred from second moments, center %s half-width %.3g", center, half)
    else:
        center, half = np.asarray(box[0], dtype=float), float(box[1])
    level = max(3, int(math.ceil(math.log2(max(grid_res, 8)))))
    P = sample_curve(g, center, half, level)
    if P.shape[0] == 0:
        raise NumericalFailure("no curve points found in the sampling box; enlarge the box")
    nz, Lt = _normalized(L, center, half)
    Pt = nz.to_normalized(P)
    lp = grid_lp_rule(Pt, Lt, f.eval_many(P))
    exact = lp.exact
    pre = QuadratureRule(nz.to_original(lp.rule.nodes), lp.rule.weights)
    lp_value = float(f.eval_many(pre.nodes) @ pre.weights)

    gt = g.compose_affine(np.eye(2) * nz.scale, nz.center)
    gt = gt * (1.0 / max(gt.max_abs_coeff(), 1e-300))

    def finish(rule_nodes, rule_weights):
        tn, tw = polish_rule(nz.to_normalized(rule_nodes), rule_weights, Lt, constraints=[gt])
        if np.any(tw <= 0):
            raise NumericalFailure("polish produced nonpositive weights")
        xn = nz.to_original(tn)
        kept, ww = weights_nnls(xn, L, tol=tol)
        kept, ww = polish_rule(nz.to_normalized(kept), ww, Lt, constraints=[gt])
        kept = nz.to_original(kept)
        return QuadratureRule(kept, ww)

    spacing = 2 * half / 2**level
    radius = merge_radius if merge_radius is not None else max(1e-3 * (2 * math.sqrt(2) * half), 3 * spacing)
    target = d * curve.k
    merged_rule, ok = merge_nodes(pre, radius, L, tol=np.inf)
    rule = None
    for cand in ([merged_rule] if ok else []) + [pre]:
        try:
            r = finish(cand.nodes, cand.weights)
        except NumericalFailure:
            continue
        res = float(moment_residuals(r.nodes, r.weights, L).max())
        if res <= tol:
            rule = r
            break
    if rule is None:
        if not exact:
            raise NumericalFailure("grid LP infeasible and polishing failed; refine the grid", samples=int(P.shape[0]))
        rule, residual, certified = pre, float(moment_residuals(pre.nodes, pre.weights, L).max()), False
    else:
        residual = float(moment_residuals(rule.nodes, rule.weights, L).max())
        certified = len(rule) <= target
    if not certified:
        log.warning("curve grid: %d nodes, bound %d not certified", len(rule), target)
    on_curve = float(np.max(np.abs(g.eval_many(rule.nodes)) / (1 + np.linalg.norm(rule.nodes, axis=1) ** curve.k)))
    return CurveGridResult(rule, lp_value, exact, int(P.shape[0]), len(pre), target, certified, residual,
                           info={"on_curve": on_curve, "merge_radius": radius, "lp_iterations": lp.iterations})


def curve_grid_rule(L: MomentVector, curve: CurveSpec, d: int, f: Polynomial | None = None,
                    grid_res: int = 1024) -> QuadratureRule:
    return solve_curve_grid(L, curve, d, f, grid_res).rule
