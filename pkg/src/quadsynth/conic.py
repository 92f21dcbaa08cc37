"""Dense conic solvers: a primal-dual interior-point method for SDP and a simplex method for LP.

SDP standard form (block diagonal variable)::

    minimize    <C, X>
    subject to  <A_i, X> = b_i,  i = 1..m
                X >= 0 (PSD, per block)

with dual ``maximize b.y  s.t.  S = C - sum_i y_i A_i >= 0``.

LP standard form::

    minimize c.w  subject to  A w = b,  w >= 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


@dataclass
class SdpProblem:
    """Block-diagonal SDP in standard primal form.

    ``C[k]`` and ``A[i][k]`` are symmetric ``(blocks[k], blocks[k])`` arrays.
    """

    blocks: list[int]
    C: list[np.ndarray]
    A: list[list[np.ndarray]]
    b: np.ndarray

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.C = [np.asarray(c, dtype=float) for c in self.C]
        self.A = [[np.asarray(a, dtype=float) for a in row] for row in self.A]
        if len(self.A) != self.b.size:
            raise ValueError(f"{len(self.A)} constraint matrices but {self.b.size} right-hand sides")
        for k, n in enumerate(self.blocks):
            if self.C[k].shape != (n, n):
                raise ValueError(f"objective block {k} has shape {self.C[k].shape}, expected {(n, n)}")
        for i, row in enumerate(self.A):
            if len(row) != len(self.blocks):
                raise ValueError(f"constraint {i} has {len(row)} blocks, expected {len(self.blocks)}")
            for k, (a, n) in enumerate(zip(row, self.blocks)):
                if a.shape != (n, n):
                    raise ValueError(f"constraint {i} block {k} has shape {a.shape}, expected {(n, n)}")
                if not np.allclose(a, a.T, atol=1e-12 * (1 + np.abs(a).max())):
                    raise ValueError(f"constraint {i} block {k} is not symmetric")

    @property
    def m(self) -> int:
        return self.b.size


@dataclass
class LpProblem:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        if self.A.shape != (self.b.size, self.c.size):
            raise ValueError(f"A has shape {self.A.shape}, expected {(self.b.size, self.c.size)}")


@dataclass
class ConicSolution:
    status: str
    primal: object
    dual: object
    primal_objective: float
    dual_objective: float
    iterations: int
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    slack: object = None
    info: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective) / (1.0 + abs(self.primal_objective))

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# SDP

def _sym(M):
    return 0.5 * (M + M.T)


def _inner(Xs, Ys) -> float:
    return float(sum(np.vdot(x, y) for x, y in zip(Xs, Ys)))


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest t <= 1 with X + t dX PSD, for X positive definite."""
    Lc = np.linalg.cholesky(X)
    Li = np.linalg.inv(Lc)
    lam_min = np.linalg.eigvalsh(_sym(Li @ dX @ Li.T))[0]
    return 1.0 if lam_min >= -1.0 else -1.0 / lam_min


def _sqrt_and_inv_sqrt(M):
    w, Q = np.linalg.eigh(_sym(M))
    w = np.maximum(w, 1e-300)
    s = np.sqrt(w)
    return (Q * s) @ Q.T, (Q / s) @ Q.T


def _nt_scaling(X, S):
    """NT scaling point W with W S W = X, and its symmetric square root."""
    Xh, _ = _sqrt_and_inv_sqrt(X)
    _, Mih = _sqrt_and_inv_sqrt(Xh @ S @ Xh)
    W = _sym(Xh @ Mih @ Xh)
    Wh, Wih = _sqrt_and_inv_sqrt(W)
    return W, Wh, Wih


def solve_sdp(prob: SdpProblem, gap_tol: float = 1e-9, feas_tol: float = 1e-9, max_iter: int = 200) -> ConicSolution:
    """Infeasible-start primal-dual path following with NT scaling and Mehrotra correction."""
    nb = len(prob.blocks)
    m = prob.m
    b, C, A = prob.b, prob.C, prob.A
    normA = max((max(np.linalg.norm(a) for a in row) for row in A), default=1.0)
    normC = max(np.linalg.norm(c) for c in C)
    normb = np.abs(b).max() if m else 0.0
    ntot = sum(prob.blocks)

    xi = max(10.0, np.sqrt(ntot), max(((1 + abs(b[i])) / (1 + max(np.linalg.norm(a) for a in A[i])) for i in range(m)), default=1.0))
    eta = max(10.0, np.sqrt(ntot), normA, normC)
    X = [xi * np.eye(n) for n in prob.blocks]
    S = [eta * np.eye(n) for n in prob.blocks]
    y = np.zeros(m)

    def AX(Xs):
        return np.array([_inner(A[i], Xs) for i in range(m)])

    def ATy(v):
        return [sum(v[i] * A[i][k] for i in range(m)) if m else np.zeros_like(C[k]) for k in range(nb)]

    best = None
    status = NUMERICAL_FAILURE
    it = 0
    for it in range(1, max_iter + 1):
        rp = b - AX(X)
        Aty = ATy(y)
        Rd = [C[k] - Aty[k] - S[k] for k in range(nb)]
        pobj = _inner(C, X)
        dobj = float(b @ y)
        mu = _inner(X, S) / ntot
        pres = np.abs(rp).max() / (1 + normb) if m else 0.0
        dres = max(np.abs(r).max() for r in Rd) / (1 + normC)
        gap = abs(pobj - dobj) / (1 + abs(pobj))
        best = (X, y, S, pobj, dobj, pres, dres)
        if pres <= feas_tol and dres <= feas_tol and gap <= gap_tol:
            status = OPTIMAL
            break
        # Farkas-type certificates on the scaled iterate
        if dobj > 0 and m:
            yhat = y / dobj
            ray = ATy(yhat)
            if max(np.linalg.eigvalsh(_sym(r))[-1] for r in ray) <= 1e-8 * (1 + np.linalg.norm(yhat)) and dobj > 1e8 * (1 + abs(pobj)):
                status = INFEASIBLE
                break
        if pobj < 0:
            rayX = [x / -pobj for x in X]
            if m == 0 or np.abs(AX(rayX)).max() <= 1e-8:
                if -pobj > 1e8 * (1 + abs(dobj)):
                    status = UNBOUNDED
                    break

        scal = [_nt_scaling(X[k], S[k]) for k in range(nb)]
        # Schur complement M_ij = <A_i, W A_j W>
        WAW = [[scal[k][0] @ A[j][k] @ scal[k][0] for k in range(nb)] for j in range(m)]
        M = np.array([[_inner(A[i], WAW[j]) for j in range(m)] for i in range(m)]) if m else np.zeros((0, 0))
        M = _sym(M)
        # scaled iterate V = W^{-1/2} X W^{-1/2} = W^{1/2} S W^{1/2}
        Vs = []
        for k in range(nb):
            W, Wh, Wih = scal[k]
            V = _sym(Wih @ X[k] @ Wih)
            lam, Q = np.linalg.eigh(V)
            Vs.append((lam, Q))

        def direction(sigma, corr):
            # RHS of V o (dX~ + dS~) = sigma mu I - V^2 - corr, solved in the eigenbasis of V
            R = []
            for k in range(nb):
                lam, Q = Vs[k]
                W, Wh, Wih = scal[k]
                rhs = sigma * mu * np.eye(len(lam)) - np.diag(lam**2)
                if corr is not None:
                    rhs = rhs - Q.T @ corr[k] @ Q
                T = 2.0 * rhs / (lam[:, None] + lam[None, :])
                Rk = Wh @ (Q @ T @ Q.T) @ Wh  # = dX + W dS W
                R.append(_sym(Rk))
            rhs_y = rp - AX(R) + AX([scal[k][0] @ Rd[k] @ scal[k][0] for k in range(nb)])
            if m:
                try:
                    cf = np.linalg.cholesky(M)
                    dy = np.linalg.solve(cf.T, np.linalg.solve(cf, rhs_y))
                except np.linalg.LinAlgError:
                    dy = np.linalg.lstsq(M, rhs_y, rcond=None)[0]
            else:
                dy = np.zeros(0)
            Atdy = ATy(dy)
            dS = [_sym(Rd[k] - Atdy[k]) for k in range(nb)]
            dX = [_sym(R[k] - scal[k][0] @ dS[k] @ scal[k][0]) for k in range(nb)]
            return dX, dy, dS

        try:
            dXa, dya, dSa = direction(0.0, None)
            ap = min(1.0, min(_max_step(X[k], dXa[k]) for k in range(nb)))
            ad = min(1.0, min(_max_step(S[k], dSa[k]) for k in range(nb)))
            mu_aff = _inner([X[k] + ap * dXa[k] for k in range(nb)], [S[k] + ad * dSa[k] for k in range(nb)]) / ntot
            sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
            corr = []
            for k in range(nb):
                W, Wh, Wih = scal[k]
                dXt = Wih @ dXa[k] @ Wih
                dSt = Wh @ dSa[k] @ Wh
                corr.append(_sym(dXt @ dSt))
            dX, dy, dS = direction(sigma, corr)
            ap = min(1.0, 0.98 * min(_max_step(X[k], dX[k]) for k in range(nb)))
            ad = min(1.0, 0.98 * min(_max_step(S[k], dS[k]) for k in range(nb)))
        except np.linalg.LinAlgError:
            log.debug("SDP: linear algebra failure at iteration %d", it)
            break
        X = [_sym(X[k] + ap * dX[k]) for k in range(nb)]
        S = [_sym(S[k] + ad * dS[k]) for k in range(nb)]
        y = y + ad * dy
        if not all(np.all(np.isfinite(x)) for x in X) or not np.all(np.isfinite(y)):
            break

    X, y, S, pobj, dobj, pres, dres = best
    return ConicSolution(status, X, y, pobj, dobj, it, pres, dres, slack=S)


# ---------------------------------------------------------------------------
# LP

def _pivot_tol(A):
    return 1e-11 * max(1.0, np.abs(A).max())


def _simplex_phase(A, b, c, basis, max_iter, bland_after: int = 50):
    """Revised simplex on ``min c.w, A w = b, w >= 0`` from a feasible basis.

    Dantzig pricing while the objective makes progress; after ``bland_after``
    consecutive degenerate pivots it switches to Bland's rule, which cannot cycle.
    """
    m, N = A.shape
    tol = _pivot_tol(A)
    ctol = 1e-11 * max(1.0, np.abs(c).max())
    stalled = 0
    for it in range(max_iter):
        B = A[:, basis]
        lu = scipy.linalg.lu_factor(B)
        xB = scipy.linalg.lu_solve(lu, b)
        lam = scipy.linalg.lu_solve(lu, c[basis], trans=1)
        red = c - A.T @ lam
        red[basis] = 0.0
        cand = np.flatnonzero(red < -ctol)
        if cand.size == 0:
            return "optimal", basis, xB, lam, it
        j = int(cand[0]) if stalled >= bland_after else int(cand[np.argmin(red[cand])])
        d = scipy.linalg.lu_solve(lu, A[:, j])
        pos = d > tol
        if not pos.any():
            return "unbounded", basis, xB, lam, it
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / d[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + 1e-12 * max(1.0, rmin))
        leave = min(ties, key=lambda r: basis[r])
        stalled = stalled + 1 if rmin * abs(red[j]) <= ctol * 1e-3 else 0
        basis = list(basis)
        basis[leave] = j
    return "iteration-limit", basis, np.linalg.solve(A[:, basis], b), None, max_iter


def solve_lp(prob: LpProblem, feas_tol: float = 1e-9, max_iter: int = 50000) -> ConicSolution:
    """Two-phase revised simplex (Dantzig pricing, Bland fallback); returns a basic (vertex) solution."""
    A, b, c = prob.A.copy(), prob.b.copy(), prob.c
    m0, N = A.shape
    # compress to an orthonormal row basis: removes redundant rows and conditions the rest
    U, sv, _ = np.linalg.svd(A, full_matrices=False)
    r = int((sv > 1e-12 * max(sv[0], 1e-300)).sum()) if sv.size else 0
    U = U[:, :r]
    resid = b - U @ (U.T @ b)
    if np.abs(resid).max(initial=0.0) > feas_tol * 1e3 * (1 + np.abs(b).max(initial=0.0)):
        return ConicSolution(INFEASIBLE, None, None, np.nan, np.nan, 0,
                             primal_residual=float(np.abs(resid).max()))
    A, b = U.T @ A, U.T @ b
    m = r
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    scale = np.maximum(np.abs(A).max(axis=1), 1e-300)
    A /= scale[:, None]
    b /= scale

    # phase 1 with artificial columns N..N+m-1
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(N), np.ones(m)])
    st, basis, xB, _, it1 = _simplex_phase(A1, b, c1, list(range(N, N + m)), max_iter)
    if st != "optimal":
        return ConicSolution(NUMERICAL_FAILURE, None, None, np.nan, np.nan, it1)
    infeas = float(c1[basis] @ xB)
    if infeas > feas_tol * (1 + np.abs(b).max()):
        return ConicSolution(INFEASIBLE, None, None, np.nan, np.nan, it1, primal_residual=infeas)

    # drive artificials out of the basis; drop redundant rows
    basis = list(basis)
    tol = _pivot_tol(A)
    for r in range(m):
        if basis[r] < N:
            continue
        Binv_row = np.linalg.solve(A1[:, basis].T, np.eye(m)[r])
        alpha = Binv_row @ A
        alpha[[j for j in basis if j < N]] = 0.0
        cand = np.flatnonzero(np.abs(alpha) > 1e3 * tol)
        if cand.size:
            basis[r] = int(cand[0])
    keep = [r for r in range(m) if basis[r] < N]
    rows = keep
    A2, b2, basis2 = A[keep], b[keep], [basis[r] for r in keep]
    st, basis2, xB, lam, it2 = _simplex_phase(A2, b2, c, basis2, max_iter)
    its = it1 + it2
    if st == "unbounded":
        return ConicSolution(UNBOUNDED, None, None, -np.inf, np.nan, its)
    if st != "optimal":
        return ConicSolution(NUMERICAL_FAILURE, None, None, np.nan, np.nan, its)
    w = np.zeros(N)
    w[basis2] = np.maximum(xB, 0.0)
    y = np.zeros(m)
    y[rows] = lam
    y = y / scale
    y[neg] *= -1
    y = U @ y
    pobj = float(c @ w)
    dobj = float(prob.b @ y)
    pres = float(np.abs(prob.A @ w - prob.b).max() / (1 + np.abs(prob.b).max()))
    red = c - prob.A.T @ y
    dres = float(max(0.0, -red.min()) / (1 + np.abs(c).max()))
    return ConicSolution(OPTIMAL, w, y, pobj, dobj, its, pres, dres, slack=red, info={"basis": sorted(basis2)})
