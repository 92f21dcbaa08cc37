"""Cubature in the plane (and the degree-3 case in any dimension).

The nondegenerate path solves the moment-extension SDP with penalty
``X^{2d} + Y^{2d}``.  Its dual Gram matrix gives a nonnegative certificate
``h`` with ``Lambda(h) = 0``, so every node is a real critical point of ``h``.
Those are found from the multiplication matrices of the quotient by the
gradient ideal, which is zero-dimensional because the leading form of ``h``
is a sum of pure powers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .conic import OPTIMAL, SdpProblem, solve_sdp
from .curve import AffineMap, CurveSpec, line_quadrature, moment_box, pushforward, solve_curve_grid
from .gauss import gauss_rule
from .moments import (MomentError, MomentVector, Normalization, localizing_matrix, moment_matrix, normalization_for, normalize_moments,
                      psd_rank)
from .poly import Polynomial, basis_index, monomial_basis, monomial_matrix
from .rules import (NumericalFailure, QuadratureRule, bound_table, caratheodory_prune, grid_lp_rule, merge_nodes,
                    moment_residuals, polish_rule, weights_nnls)

log = logging.getLogger(__name__)

__all__ = [
    "CertificatePolynomial", "ZeroDimSystem", "CubatureResult", "certificate_sdp", "quotient_algebra",
    "gradient_ideal_roots", "refine_certificate", "solve_cubature", "cubature_rule", "planar_grid_rule", "degree3_rule",
    "grid_lower_bound_instance", "weights_nnls",
]


def pure_power_form(n: int, k: int) -> Polynomial:
    """``X1^k + ... + Xn^k``."""
    return Polynomial(n, {tuple(k if j == i else 0 for j in range(n)): 1.0 for i in range(n)})


# ---------------------------------------------------------------------------
# certificate

@dataclass(frozen=True)
class CertificatePolynomial:
    """``h = v^T gram v`` over the order-``d`` monomials ``v``; leading form ``sum X_i^{2d}``."""

    h: Polynomial
    gram: np.ndarray
    d: int

    @property
    def n(self) -> int:
        return self.h.n

    @classmethod
    def from_gram(cls, gram: np.ndarray, n: int, d: int) -> CertificatePolynomial:
        basis = monomial_basis(n, d)
        terms: dict = {}
        for i, a in enumerate(basis):
            for j, b in enumerate(basis):
                g = tuple(x + y for x, y in zip(a, b))
                terms[g] = terms.get(g, 0.0) + gram[i, j]
        return cls(Polynomial(n, terms), np.array(gram, dtype=float), d)

    def leading_form_error(self) -> float:
        diff = self.h.homogeneous_part(2 * self.d) - pure_power_form(self.n, 2 * self.d)
        return diff.max_abs_coeff() if not diff.is_zero() else 0.0

    def min_gram_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.gram + self.gram.T))[0])

    def to_original(self, nz: Normalization) -> CertificatePolynomial:
        """Certificate ``s^{2d} h((x - c)/s)`` in the coordinates before normalization."""
        n, d, s = self.n, self.d, nz.scale
        A, b = np.eye(n) / s, -np.asarray(nz.center, dtype=float) / s
        basis = monomial_basis(n, d)
        T = np.array([Polynomial.monomial(a).compose_affine(A, b).to_vector(basis) for a in basis])
        gram = s ** (2 * d) * T.T @ self.gram @ T
        h = self.h.compose_affine(A, b) * s ** (2 * d)
        return CertificatePolynomial(h, 0.5 * (gram + gram.T), d)


@dataclass
class CertificateSdp:
    certificate: CertificatePolynomial
    extension: MomentVector  # degree 2d, top-degree part from the dual
    status: str
    gap: float
    primal_value: float  # L(h) over the lower-degree part of h
    dual_value: float  # -Lambda(f)
    iterations: int

    @property
    def complementarity(self) -> float:
        """``Lambda(h)`` for the returned extension."""
        from .moments import riesz_apply
        return riesz_apply(self.extension, self.certificate.h)


def certificate_sdp(L: MomentVector, d: int) -> CertificateSdp:
    """Minimal extension of ``L`` (degree ``2d-1``) with penalty ``sum X_i^{2d}`` and its SOS certificate.

    The primal variable is the Gram matrix of ``h`` with its top-degree
    coefficients pinned to the pure powers; the dual variable carries the new
    moments of degree ``2d`` with a sign flip.
    """
    n = L.n
    if L.degree < 2 * d - 1:
        raise MomentError(f"need moments up to degree {2 * d - 1}, have {L.degree}")
    L = L.truncate(2 * d - 1)
    basis = monomial_basis(n, d)
    N = len(basis)
    top = [g for g in monomial_basis(n, 2 * d) if sum(g) == 2 * d]
    top_idx = {g: k for k, g in enumerate(top)}
    lidx = basis_index(n, 2 * d - 1)
    C = np.zeros((N, N))
    A = [np.zeros((N, N)) for _ in top]
    for i, a in enumerate(basis):
        for j, b in enumerate(basis):
            g = tuple(x + y for x, y in zip(a, b))
            if sum(g) == 2 * d:
                A[top_idx[g]][i, j] = 1.0
            else:
                C[i, j] = L.values[lidx[g]]
    f = pure_power_form(n, 2 * d)
    rhs = np.array([f.coeff(g) for g in top])
    sol = solve_sdp(SdpProblem([N], [C], [[a] for a in A], rhs))
    if sol.primal is None:
        raise NumericalFailure(f"certificate SDP ended with status {sol.status}")
    G = sol.primal[0]
    ext_vals = []
    for g in monomial_basis(n, 2 * d):
        ext_vals.append(-sol.dual[top_idx[g]] if sum(g) == 2 * d else L.values[lidx[g]])
    cert = CertificatePolynomial.from_gram(G, n, d)
    return CertificateSdp(cert, MomentVector(n, 2 * d, ext_vals), sol.status, sol.gap,
                          sol.primal_objective, sol.dual_objective, sol.iterations)


def _monomial_jets(x: np.ndarray, E: np.ndarray):
    """Values, gradients ``(n, M)`` and Hessians ``(n, n, M)`` of the monomials ``x^E`` at one point."""
    n = E.shape[1]

    def mono(shift):
        e = E - shift
        ok = np.all(e >= 0, axis=1)
        return np.where(ok, np.prod(x ** np.maximum(e, 0), axis=1), 0.0)

    val = mono(np.zeros(n, dtype=int))
    grad = np.zeros((n, E.shape[0]))
    hess = np.zeros((n, n, E.shape[0]))
    eye = np.eye(n, dtype=int)
    for k in range(n):
        grad[k] = E[:, k] * mono(eye[k])
        for l in range(n):
            c = E[:, k] * (E[:, l] - (k == l))
            hess[k, l] = c * mono(eye[k] + eye[l])
    return val, grad, hess


def kkt_polish(nodes, weights, h: Polynomial, L: MomentVector, d: int, iters: int = 30):
    """Newton on the optimality system of the minimal extension.

    Unknowns are the nodes, the weights and the coefficients of ``h`` below
    degree ``2d`` (its leading form stays ``sum X_i^{2d}``); the equations are
    exactness for ``L`` together with ``h = 0`` and ``grad h = 0`` at every
    node.  The system is square.  Returns ``(nodes, weights, h)`` or ``None``
    if Newton does not converge to a positive rule.
    """
    n = L.n
    x = np.array(nodes, dtype=float)
    w = np.array(weights, dtype=float)
    N = len(w)
    low = monomial_basis(n, 2 * d - 1)
    El = np.array(low, dtype=int)
    top = pure_power_form(n, 2 * d)
    Et = np.array(list(top.as_dict()), dtype=int)
    q = (h - h.homogeneous_part(2 * d)).to_vector(low)
    mscale = 1.0 + np.abs(L.values)
    hscale = 1.0 + np.abs(q).max()
    best = None
    for _ in range(iters):
        jets = [_monomial_jets(xi, El) for xi in x]
        tjets = [_monomial_jets(xi, Et) for xi in x]
        V = np.array([j[0] for j in jets]).T  # (M, N)
        r_mom = (V @ w - L.values) / mscale
        r_h, r_g = [], []
        for (v, g, _), (tv, tg, _) in zip(jets, tjets):
            r_h.append(tv.sum() + v @ q)
            r_g.extend(tg.sum(axis=1) + g @ q)
        r = np.concatenate([r_mom, np.array(r_h) / hscale, np.array(r_g) / hscale])
        nr = np.linalg.norm(r)
        if best is None or nr < best[0]:
            best = (nr, x.copy(), w.copy(), q.copy())
        if nr <= 1e-15:
            break
        M = len(low)
        J = np.zeros((r.size, n * N + N + M))
        for i, ((v, g, H), (tv, tg, tH)) in enumerate(zip(jets, tjets)):
            cols = slice(n * i, n * i + n)
            J[:M, cols] = (w[i] * g.T) / mscale[:, None]
            J[:M, n * N + i] = v / mscale
            J[M + i, cols] = (tg.sum(axis=1) + g @ q) / hscale
            J[M + i, n * N + N:] = v / hscale
            rows = slice(M + N + n * i, M + N + n * i + n)
            J[rows, cols] = (tH.sum(axis=2) + H @ q) / hscale
            J[rows, n * N + N:] = g / hscale
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        x = x + step[: n * N].reshape(N, n)
        w = w + step[n * N: n * N + N]
        q = q + step[n * N + N:]
    nr, x, w, q = best
    if nr > 1e-12 or np.any(w <= 0):
        return None
    return x, w, top + Polynomial.from_vector(n, q, low)


def refine_certificate(cert: CertificatePolynomial, nodes: np.ndarray, target: Polynomial | None = None,
                       psd_tol: float = 1e-12) -> CertificatePolynomial | None:
    """Gram matrix for ``target`` (default ``cert.h``) that annihilates the node vectors.

    The Gram matrix of a nonnegative ``h`` vanishing at ``x`` annihilates the
    monomial vector ``v(x)``.  The solver's matrix only does so to its own
    accuracy, so it is compressed onto the complement ``P`` of the node
    vectors and given the least-norm correction matching ``target``:
    ``G' = P (G + D) P``.  Returns ``None`` if no PSD matrix of that form is
    found.
    """
    n, d = cert.n, cert.d
    target = cert.h if target is None else target
    basis = monomial_basis(n, d)
    V = monomial_matrix(np.atleast_2d(nodes), basis)  # (len(basis), N)
    U, sv, _ = np.linalg.svd(V, full_matrices=False)
    Q = U[:, sv > 1e-12 * sv[0]] if sv.size else U[:, :0]
    P = np.eye(len(basis)) - Q @ Q.T
    G0 = P @ cert.gram @ P
    # coefficient map S -> v^T S v, one row per exponent of degree <= 2d
    full = monomial_basis(n, 2 * d)
    idx = basis_index(n, 2 * d)
    E = np.zeros((len(full), len(basis), len(basis)))
    for i, a in enumerate(basis):
        for j, b in enumerate(basis):
            E[idx[tuple(x + y for x, y in zip(a, b))], i, j] = 1.0
    R = np.einsum("ij,gjk,kl->gil", P, E, P).reshape(len(full), -1)
    rhs = target.to_vector(full) - np.einsum("gij,ij->g", E, G0)
    D = np.linalg.lstsq(R, rhs, rcond=None)[0].reshape(G0.shape)
    G = G0 + P @ (0.5 * (D + D.T)) @ P
    refined = CertificatePolynomial.from_gram(G, n, d)
    err = refined.h - target
    if not err.is_zero() and err.max_abs_coeff() > 1e-12 * (1.0 + target.max_abs_coeff()):
        return None
    if np.linalg.eigvalsh(G)[0] < -psd_tol * max(np.abs(G).max(), 1.0):
        return None
    return CertificatePolynomial(target, G, d)


# ---------------------------------------------------------------------------
# gradient ideal

@dataclass
class ZeroDimSystem:
    """Quotient of ``R[x]`` by the gradient ideal of ``h``."""

    generators: list[Polynomial]
    basis: tuple
    mult: list[np.ndarray]  # mult[k][:, j] = normal form of X_k * basis[j]

    @property
    def dim(self) -> int:
        return len(self.basis)

    def commutation_defect(self) -> float:
        worst = 0.0
        scale = max(np.abs(M).max() for M in self.mult) if self.mult else 1.0
        for i in range(len(self.mult)):
            for j in range(i + 1, len(self.mult)):
                D = self.mult[i] @ self.mult[j] - self.mult[j] @ self.mult[i]
                worst = max(worst, float(np.abs(D).max()))
        return worst / max(scale, 1e-300) ** 2


def quotient_algebra(h: Polynomial, d: int, max_steps: int = 10**6) -> ZeroDimSystem:
    """Multiplication matrices modulo ``(dh/dX_1, ..., dh/dX_n)``.

    Requires the leading form of ``h`` to be ``sum X_i^{2d}``; then the
    partials have leading monomials ``X_i^{2d-1}``, which are pairwise coprime,
    so they form a Groebner basis and the normal forms are spanned by the
    exponents with every entry at most ``2d - 2``.
    """
    n = h.n
    k = 2 * d - 1
    lead = h.homogeneous_part(2 * d) - pure_power_form(n, 2 * d)
    if not lead.is_zero() and lead.max_abs_coeff() > 1e-9:
        raise ValueError("leading form must be the sum of pure powers of degree 2d")
    if h.degree > 2 * d:
        raise ValueError("certificate has degree above 2d")
    # pin the leading form exactly; solver noise there would break termination
    h = h - h.homogeneous_part(2 * d) + pure_power_form(n, 2 * d)
    grads = h.gradient()
    # X_i^{2d-1} -> tail_i, with tail_i of degree <= 2d-2
    tails = []
    for i in range(n):
        ei = tuple(k if j == i else 0 for j in range(n))
        lc = grads[i].coeff(ei)
        tails.append([(g, -c / lc) for g, c in grads[i].terms if g != ei])
    qbasis = tuple(sorted((a for a in _box_exponents(n, k - 1)), key=lambda a: (sum(a), tuple(-x for x in a))))
    qidx = {a: i for i, a in enumerate(qbasis)}
    steps = [0]

    @lru_cache(maxsize=None)
    def normal_form(alpha: tuple) -> tuple:
        steps[0] += 1
        if steps[0] > max_steps:
            raise NumericalFailure("normal form reduction did not terminate")
        i = next((j for j in range(n) if alpha[j] >= k), None)
        if i is None:
            return ((alpha, 1.0),)
        rest = tuple(a - (k if j == i else 0) for j, a in enumerate(alpha))
        out: dict = {}
        for g, c in tails[i]:
            for m, cm in normal_form(tuple(x + y for x, y in zip(rest, g))):
                out[m] = out.get(m, 0.0) + c * cm
        return tuple(out.items())

    dim = len(qbasis)
    mult = []
    for var in range(n):
        M = np.zeros((dim, dim))
        for j, a in enumerate(qbasis):
            shifted = tuple(x + (1 if t == var else 0) for t, x in enumerate(a))
            for m, c in normal_form(shifted):
                M[qidx[m], j] += c
        mult.append(M)
    return ZeroDimSystem(grads, qbasis, mult)


def _box_exponents(n: int, m: int):
    if n == 0:
        yield ()
        return
    for a in range(m + 1):
        for rest in _box_exponents(n - 1, m):
            yield (a,) + rest


def _newton_critical(h: Polynomial, x0: np.ndarray, iters: int = 30) -> tuple[np.ndarray, float]:
    grads = h.gradient()
    hess = [[g.derivative(j) for j in range(h.n)] for g in grads]
    x = np.array(x0, dtype=float)
    gn = np.inf
    for _ in range(iters):
        gv = np.array([g.eval(x) for g in grads])
        gn = float(np.linalg.norm(gv))
        if gn <= 1e-15:
            break
        H = np.array([[p.eval(x) for p in row] for row in hess])
        step = np.linalg.lstsq(H, -gv, rcond=None)[0]
        x_new = x + step
        if not np.all(np.isfinite(x_new)):
            break
        gv_new = np.array([g.eval(x_new) for g in grads])
        if np.linalg.norm(gv_new) >= gn and np.linalg.norm(step) < 1e-14 * (1 + np.linalg.norm(x)):
            break
        x = x_new
    gv = np.array([g.eval(x) for g in grads])
    return x, float(np.linalg.norm(gv))


@dataclass
class CriticalPoints:
    points: np.ndarray  # (k, n) real critical points
    h_values: np.ndarray
    grad_norms: np.ndarray
    quotient_dim: int
    commutation_defect: float
    ambiguous: bool

    def __len__(self):
        return self.points.shape[0]


def gradient_ideal_roots(h, d: int | None = None, seed: int = 0, imag_tol: float = 1e-6,
                         defect_tol: float = 1e-6) -> CriticalPoints:
    """Real critical points of ``h`` through the eigenvalues of the quotient algebra.

    ``h`` is a ``CertificatePolynomial`` or a polynomial whose leading form is
    ``sum X_i^{2d}``.  Eigenvectors of three random combinations of the
    multiplication matrices are matched; a point is kept when at least two of
    them agree on it.
    """
    if isinstance(h, CertificatePolynomial):
        d = h.d
        h = h.h
    if d is None:
        if h.degree % 2:
            raise ValueError("certificate degree must be even")
        d = int(h.degree) // 2
    Z = quotient_algebra(h, d)
    defect = Z.commutation_defect()
    if defect > defect_tol:
        raise NumericalFailure("multiplication matrices do not commute", defect=defect)
    n = h.n
    rng = np.random.default_rng(seed)
    found: list[list[np.ndarray]] = []
    for _ in range(3):
        c = rng.standard_normal(n)
        M = sum(ci * Mi for ci, Mi in zip(c, Z.mult))
        _, V = np.linalg.eig(M.T)
        pts = []
        for v in V.T:
            vv = np.vdot(v, v)
            p = np.array([np.vdot(v, Mi.T @ v) / vv for Mi in Z.mult])
            if np.all(np.abs(p.imag) <= imag_tol * (1 + np.abs(p.real))):
                pts.append(p.real)
        found.append(pts)
    # Newton polish, then consensus
    polished = []
    for s, pts in enumerate(found):
        for p in pts:
            x, gn = _newton_critical(h, p)
            if np.all(np.isfinite(x)):
                polished.append((s, x, gn))
    scale = 1.0 + max((np.linalg.norm(x) for _, x, _ in polished), default=0.0)
    clusters: list[dict] = []
    for s, x, gn in polished:
        for cl in clusters:
            if np.linalg.norm(cl["x"] - x) <= 1e-6 * scale:
                cl["seeds"].add(s)
                if gn < cl["gn"]:
                    cl["x"], cl["gn"] = x, gn
                break
        else:
            clusters.append({"x": x, "gn": gn, "seeds": {s}})
    gtol = 1e-8 * (1.0 + h.max_abs_coeff()) * scale ** (2 * d)
    keep = [cl for cl in clusters if len(cl["seeds"]) >= 2 and cl["gn"] <= gtol]
    ambiguous = any(len(cl["seeds"]) == 1 and cl["gn"] <= gtol for cl in clusters)
    if len(keep) > Z.dim:
        raise NumericalFailure("more critical points than the quotient dimension", found=len(keep), dim=Z.dim)
    pts = np.array([cl["x"] for cl in keep]).reshape(-1, n)
    order = np.lexsort(pts.T[::-1]) if len(pts) else np.arange(0)
    pts = pts[order]
    return CriticalPoints(pts, h.eval_many(pts) if len(pts) else np.zeros(0),
                          np.array([keep[i]["gn"] for i in order]), Z.dim, defect, ambiguous)


# ---------------------------------------------------------------------------
# cubature pipeline

@dataclass
class CubatureResult:
    rule: QuadratureRule
    d: int
    path: str  # "sos", "pencil", "kernel-points", "line", "curve", "grid"
    sos_exact: bool
    residual: float
    certificate: CertificatePolynomial | None = None
    extension: MomentVector | None = None
    sdp_status: str | None = None
    sdp_gap: float | None = None
    critical_points: CriticalPoints | None = None
    info: dict = field(default_factory=dict)

    @property
    def bound(self) -> dict:
        return {"petrovsky": bound_table(self.d)["petrovsky"], "achieved": len(self.rule), "sos_exact": self.sos_exact}


def _finish(nodes_t, weights, Lt: MomentVector, nz: Normalization, L: MomentVector, tol: float) -> QuadratureRule:
    x, w = polish_rule(nodes_t, weights, Lt)
    if np.any(w <= 0):
        x, w = np.asarray(nodes_t, dtype=float), np.asarray(weights, dtype=float)
    rule = QuadratureRule(nz.to_original(x), w)
    res = float(moment_residuals(rule.nodes, rule.weights, L).max())
    if res > tol:
        raise NumericalFailure("recovered rule misses exactness", residual=res)
    return rule


def _sos_path(L, Lt, nz, d, seed, tol):
    sdp = certificate_sdp(Lt, d)
    if sdp.status != OPTIMAL:
        raise NumericalFailure(f"certificate SDP ended with status {sdp.status}", gap=sdp.gap)
    crit = gradient_ideal_roots(sdp.certificate, seed=seed)
    htol = 1e-5 * (1.0 + sdp.certificate.h.max_abs_coeff())
    cand = crit.points[np.abs(crit.h_values) <= htol]
    last = None
    for pts in (cand, crit.points):
        if len(pts) == 0:
            continue
        try:
            # node positions inherit the solver accuracy; the polish below restores exactness
            nodes, w = weights_nnls(pts, Lt, tol=np.inf)
            return _finish(nodes, w, Lt, nz, L, tol), sdp, crit
        except NumericalFailure as exc:
            last = exc
    raise NumericalFailure("certificate roots do not carry a rule", gap=sdp.gap,
                           candidates=crit.points.tolist(), cause=str(last))


def _pencil_points(L, Lt, nz, d, pr, seed, tol):
    """Atoms from the shifted moment matrices restricted to the range of the order-(d-1) matrix.

    Exact when the support has as many points as the rank and their
    evaluation vectors are independent.
    """
    n = Lt.n
    M = moment_matrix(Lt, d - 1).entries
    w, U = np.linalg.eigh(M)
    keep = w > w[-1] * 1e-8
    Ur = U[:, keep] / np.sqrt(w[keep])
    Ns = []
    for k in range(n):
        Mk = localizing_matrix(Lt, d - 1, tuple(1 if j == k else 0 for j in range(n)))
        Nk = Ur.T @ Mk @ Ur
        Ns.append(0.5 * (Nk + Nk.T))
    c = np.random.default_rng(seed).standard_normal(n)
    _, Q = np.linalg.eigh(sum(ci * Ni for ci, Ni in zip(c, Ns)))
    pts = np.column_stack([np.diag(Q.T @ Nk @ Q) for Nk in Ns])
    nodes, wts = weights_nnls(pts, Lt, tol=np.inf)
    return _finish(nodes, wts, Lt, nz, L, tol)


def _kernel_points(L, Lt, nz, d, kernel, seed, tol):
    """Support inside the common zeros of the kernel polynomials of the order-(d-1) moment matrix."""
    n = Lt.n
    basis = monomial_basis(n, d - 1)
    h = Polynomial.zero(n)
    for v in kernel.T:
        p = Polynomial.from_vector(n, v, basis)
        h = h + p * p
    # perturb by a small pure-power form so that the critical points are isolated and computable
    eps = 1e-3 * max(h.max_abs_coeff(), 1e-300)
    H = h * (1.0 / eps) + pure_power_form(n, 2 * d)
    crit = gradient_ideal_roots(H, d=d, seed=seed)
    kernel_polys = [Polynomial.from_vector(n, v, basis) for v in kernel.T]
    pts = []
    for x in crit.points:
        y = _gauss_newton_zero(kernel_polys, x)
        if y is not None and not any(np.linalg.norm(y - q) <= 1e-8 * (1 + np.linalg.norm(y)) for q in pts):
            pts.append(y)
    if not pts:
        raise NumericalFailure("kernel polynomials have no real common zeros near the critical points")
    nodes, w = weights_nnls(np.array(pts), Lt, tol=np.inf)
    return _finish(nodes, w, Lt, nz, L, tol)


def _gauss_newton_zero(polys, x0, iters: int = 40, tol: float = 1e-11):
    x = np.array(x0, dtype=float)
    grads = [p.gradient() for p in polys]
    for _ in range(iters):
        r = np.array([p.eval(x) for p in polys])
        if np.abs(r).max() <= 1e-15:
            break
        J = np.array([[g.eval(x) for g in gr] for gr in grads])
        x = x + np.linalg.lstsq(J, -r, rcond=None)[0]
    r = np.array([p.eval(x) for p in polys])
    return x if np.abs(r).max() <= tol else None


def planar_grid_rule(L: MomentVector, d: int, grid_res: int = 64, tol: float = 1e-7,
                     max_grid_res: int = 256) -> QuadratureRule:
    """Grid LP over a square grid with penalty ``X^{2d}+Y^{2d}``, then merge, polish and prune.

    The grid is doubled (nested refinement) up to ``max_grid_res`` cells per
    side while the LP cannot represent the moments.
    """
    res = int(grid_res)
    while True:
        try:
            return _planar_grid_once(L, d, res, tol)
        except NumericalFailure:
            if 2 * res > max(max_grid_res, grid_res):
                raise
            res *= 2
            log.warning("planar grid: refining to %d cells per side", res)


def _planar_grid_once(L: MomentVector, d: int, grid_res: int, tol: float) -> QuadratureRule:
    if L.n != 2:
        raise MomentError("planar grid rule needs bivariate moments")
    L = L.truncate(2 * d - 1)
    center, half = moment_box(L)
    log.warning("planar grid: box inferred from second moments, center %s half-width %.3g", center, half)
    m = max(4, int(grid_res))
    ax = np.linspace(-half, half, m + 1)
    X, Y = np.meshgrid(center[0] + ax, center[1] + ax, indexing="ij")
    P = np.column_stack([X.ravel(), Y.ravel()])
    nz = Normalization(np.asarray(center, dtype=float), 2.0 ** round(math.log2(half)))
    Lt = normalize_moments(L, nz)
    Pt = nz.to_normalized(P)
    lp = grid_lp_rule(Pt, Lt, pure_power_form(2, 2 * d).eval_many(Pt))
    pre = lp.rule
    radius = 3 * (2 * half / m) / nz.scale
    merged, ok = merge_nodes(pre, radius, Lt, tol=np.inf)
    for cand in ([merged] if ok else []) + [pre]:
        x, w = polish_rule(cand.nodes, cand.weights, Lt)
        if np.any(w <= 0):
            continue
        rule = caratheodory_prune(QuadratureRule(x, w), 2 * d - 1)
        x, w = polish_rule(rule.nodes, rule.weights, Lt)
        if np.any(w <= 0):
            continue
        out = QuadratureRule(nz.to_original(x), w)
        if moment_residuals(out.nodes, out.weights, L).max() <= tol:
            return out
    if not lp.exact:
        raise NumericalFailure("planar grid LP cannot represent the moments; refine the grid")
    rule = caratheodory_prune(QuadratureRule(nz.to_original(pre.nodes), pre.weights), 2 * d - 1)
    res = moment_residuals(rule.nodes, rule.weights, L).max()
    if res > tol:
        raise NumericalFailure("planar grid rule misses exactness", residual=float(res))
    return rule


def solve_cubature(L: MomentVector, d: int, seed: int = 0, tol: float = 1e-7, fallback_grid_res: int = 64,
                   rank_tol: float = 1e-8) -> CubatureResult:
    """Planar cubature with at most ``3d(d-1)/2 + 1`` nodes when the SOS certificate is exact."""
    if L.n != 2:
        raise MomentError(f"dimension mismatch: plane cubature needs n=2, got n={L.n}")
    if d < 1:
        raise ValueError("d must be positive")
    if L.degree < 2 * d - 1:
        raise MomentError(f"need moments up to degree {2 * d - 1}, have {L.degree}")
    L = L.truncate(2 * d - 1)
    if L.mass <= 0:
        raise MomentError("not a moment vector: nonpositive mass")
    nz = normalization_for(L)
    Lt = normalize_moments(L, nz)
    pr = psd_rank(moment_matrix(Lt, d - 1), rank_tol)
    if not pr.is_psd:
        raise MomentError("not a moment vector: moment matrix is not positive semidefinite")
    diagnostics: dict = {"rank": pr.rank, "order": d - 1}
    if pr.rank < len(monomial_basis(2, d - 1)):
        return _degenerate(L, Lt, nz, d, pr, seed, tol, fallback_grid_res, diagnostics)
    try:
        rule, sdp, crit = _sos_path(L, Lt, nz, d, seed, tol)
    except NumericalFailure as exc:
        log.warning("SOS path failed (%s); falling back to the planar grid", exc)
        diagnostics["sos_failure"] = str(exc)
        diagnostics.update({k: v for k, v in exc.diagnostics.items() if k in ("gap", "residual")})
        try:
            rule = planar_grid_rule(L, d, fallback_grid_res, tol)
        except NumericalFailure as exc2:
            raise NumericalFailure("cubature failed on both paths", sos=str(exc), grid=str(exc2),
                                   **exc.diagnostics) from exc2
        res = float(moment_residuals(rule.nodes, rule.weights, L).max())
        return CubatureResult(rule, d, "grid", False, res, info=diagnostics)
    res = float(moment_residuals(rule.nodes, rule.weights, L).max())
    penalty = pure_power_form(2, 2 * d)
    cert_t, ext_t = sdp.certificate, sdp.extension
    diagnostics["sdp_penalty_value"] = float(penalty.to_vector(ext_t.basis) @ ext_t.values) * nz.scale ** (2 * d)
    # sharpen the solver output: exact optimality system, then a Gram matrix for the sharpened h
    refined = None
    kkt = kkt_polish(nz.to_normalized(rule.nodes), rule.weights, cert_t.h, Lt, d)
    if kkt is not None:
        nodes_t, w_t, h_t = kkt
        refined = refine_certificate(cert_t, nodes_t, h_t)
        cand = QuadratureRule(nz.to_original(nodes_t), w_t)
        cand_res = float(moment_residuals(cand.nodes, cand.weights, L).max())
        if refined is not None and cand_res <= max(res, tol):
            rule, res = cand, cand_res
            # the optimal extension is carried by the recovered rule
            top = MomentVector.from_rule(nodes_t, w_t, 2 * d)
            cert_t = refined
            ext_t = MomentVector(2, 2 * d, [top[g] if sum(g) == 2 * d else Lt[g] for g in top.basis])
        else:
            refined = None
    diagnostics["certificate_refined"] = refined is not None
    cert = cert_t.to_original(nz)
    ext = normalize_moments(ext_t, Normalization(-nz.center / nz.scale, 1.0 / nz.scale))
    sos_exact = len(rule) <= bound_table(d)["petrovsky"]
    diagnostics.update({"penalty_value": float(penalty.to_vector(ext.basis) @ ext.values),
                        "sdp_iterations": sdp.iterations, "quotient_dim": crit.quotient_dim,
                        "commutation_defect": crit.commutation_defect})
    return CubatureResult(rule.sorted(), d, "sos", sos_exact, res, cert, ext, sdp.status, sdp.gap, crit,
                          info=diagnostics)


def _degenerate(L, Lt, nz, d, pr, seed, tol, grid_res, diagnostics) -> CubatureResult:
    failures = {}

    def attempt(path, fn, errors):
        try:
            rule = fn()
        except errors as exc:
            failures[path] = str(exc)
            return None
        res = float(moment_residuals(rule.nodes, rule.weights, L).max())
        if res > tol:
            failures[path] = f"residual {res:.3e}"
            return None
        return CubatureResult(rule.sorted(), d, path, True, res, info=diagnostics)

    def on_curve():
        if g.degree == 1:
            return line_quadrature(L, CurveSpec(g_orig), d, tol=1e-6)
        return solve_curve_grid(L, CurveSpec(g_orig), d, tol=tol).rule

    out = attempt("pencil", lambda: _pencil_points(L, Lt, nz, d, pr, seed, tol),
                  (NumericalFailure, np.linalg.LinAlgError))
    if out is not None:
        return out
    # lowest-degree kernel polynomial: the support lies on its zero curve
    g = _lowest_kernel_polynomial(Lt, d)
    steps = [("kernel-points", lambda: _kernel_points(L, Lt, nz, d, pr.kernel, seed, tol),
              (NumericalFailure, ValueError))]
    if g is not None:
        g_orig = g.compose_affine(np.eye(2) / nz.scale, -nz.center / nz.scale)
        g_orig = g_orig * (1.0 / g_orig.max_abs_coeff())
        diagnostics["curve"] = str(g_orig)
        curve_step = ("line" if g.degree == 1 else "curve", on_curve, (NumericalFailure, MomentError, ValueError))
        # a kernel made only of multiples of g means the support is all of Z(g), not finitely many points
        multiples = math.comb(d - 1 - int(g.degree) + 2, 2)
        if pr.kernel.shape[1] == multiples:
            steps.insert(0, curve_step)
        else:
            steps.append(curve_step)
    for path, fn, errors in steps:
        out = attempt(path, fn, errors)
        if out is not None:
            return out
    diagnostics["degenerate_failures"] = failures
    try:
        rule = planar_grid_rule(L, d, grid_res, tol)
    except NumericalFailure as exc:
        raise NumericalFailure("degenerate cubature failed", **failures) from exc
    res = float(moment_residuals(rule.nodes, rule.weights, L).max())
    return CubatureResult(rule.sorted(), d, "grid", False, res, info=diagnostics)


def _lowest_kernel_polynomial(Lt: MomentVector, d: int, rank_tol: float = 1e-8) -> Polynomial | None:
    for k in range(1, d):
        pr = psd_rank(moment_matrix(Lt, k), rank_tol)
        if pr.kernel.shape[1]:
            return Polynomial.from_vector(Lt.n, pr.kernel[:, 0], monomial_basis(Lt.n, k))
    return None


def cubature_rule(L: MomentVector, d: int, seed: int = 0) -> QuadratureRule:
    """Positive cubature rule for planar moments ``L``, exact up to degree ``2d-1``."""
    return solve_cubature(L, d, seed=seed).rule


# ---------------------------------------------------------------------------
# degree 3 in any dimension

def _hyperplane_maps(ell: np.ndarray) -> tuple[AffineMap, AffineMap]:
    """``phi: R^{n-1} -> {a0 + a.x = 0}`` and a left inverse ``psi``."""
    a0, a = ell[0], np.asarray(ell[1:], dtype=float)
    n = a.size
    nrm2 = float(a @ a)
    x0 = -a0 * a / nrm2
    # orthonormal complement of a
    Q, _ = np.linalg.qr(np.column_stack([a, np.eye(n)]))
    B = Q[:, 1:n]
    return AffineMap(B, x0), AffineMap(B.T, -B.T @ x0)


def degree3_rule(L: MomentVector, n: int | None = None, seed: int = 0, tol: float = 1e-7,
                 rank_tol: float = 1e-8) -> QuadratureRule:
    """Positive rule exact up to degree 3 for moments in ``R^n``.

    If the order-1 moment matrix is singular, the mass lives on a hyperplane
    and the problem is restricted to it; otherwise the full-dimensional
    construction runs (Gaussian rule on the line, planar cubature, or the
    quartic certificate in higher dimensions).
    """
    n = L.n if n is None else n
    if n != L.n:
        raise MomentError(f"dimension mismatch: n={n} but moments live in R^{L.n}")
    if L.degree < 3:
        raise MomentError("degree-3 rule needs moments up to degree 3")
    L = L.truncate(3)
    if L.mass <= 0:
        raise MomentError("not a moment vector: nonpositive mass")
    if n == 1:
        return gauss_rule(L, 2)
    nz = normalization_for(L)
    Lt = normalize_moments(L, nz)
    pr = psd_rank(moment_matrix(Lt, 1), rank_tol)
    if not pr.is_psd:
        raise MomentError("not a moment vector: moment matrix is not positive semidefinite")
    if pr.rank < n + 1:
        ell = pr.kernel[:, 0]
        if np.linalg.norm(ell[1:]) <= 1e-12 * np.abs(ell).max():
            raise NumericalFailure("singular moment matrix without a supporting hyperplane")
        ell_orig = Polynomial.from_vector(n, ell, monomial_basis(n, 1)).compose_affine(
            np.eye(n) / nz.scale, -nz.center / nz.scale)
        phi, psi = _hyperplane_maps(ell_orig.to_vector(monomial_basis(n, 1)))
        sub = degree3_rule(pushforward(L, psi), n - 1, seed=seed, tol=tol, rank_tol=rank_tol)
        rule = QuadratureRule(phi(sub.nodes), sub.weights)
    elif n == 2:
        rule = cubature_rule(L, 2, seed=seed)
    else:
        rule, _, _ = _sos_path(L, Lt, nz, 2, seed, tol)
    res = float(moment_residuals(rule.nodes, rule.weights, L).max())
    if res > tol:
        raise NumericalFailure("degree-3 rule misses exactness", residual=res)
    return rule


# ---------------------------------------------------------------------------
# lower-bound instances

def grid_lower_bound_instance(d: int) -> tuple[Polynomial, MomentVector]:
    """``f = prod (X-i)^2 + prod (Y-i)^2`` over ``i = 1..d-1`` and unit masses on its zeros ``{1..d-1}^2``."""
    if d < 2:
        raise ValueError("d must be at least 2")
    fx = Polynomial.constant(2, 1.0)
    fy = Polynomial.constant(2, 1.0)
    X, Y = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
    for i in range(1, d):
        fx = fx * (X - i) ** 2
        fy = fy * (Y - i) ** 2
    g = np.arange(1, d, dtype=float)
    GX, GY = np.meshgrid(g, g, indexing="ij")
    nodes = np.column_stack([GX.ravel(), GY.ravel()])
    return fx + fy, MomentVector.from_rule(nodes, np.ones(len(nodes)), 2 * d - 1)

