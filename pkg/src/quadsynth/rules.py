"""Quadrature rules: exactness checks, Caratheodory pruning, node merging and the node-count bound table."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import nnls

from .moments import MomentVector
from .poly import monomial_basis, monomial_matrix


class NumericalFailure(RuntimeError):
    """A numerical pipeline could not certify its result.

    ``diagnostics`` carries whatever was learned before giving up.
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class QuadratureRule:
    """Distinct nodes in R^n with strictly positive weights."""

    nodes: np.ndarray  # shape (N, n)
    weights: np.ndarray  # shape (N,)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes.reshape(-1, 1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if nodes.shape[0] != weights.size:
            raise ValueError(f"{nodes.shape[0]} nodes but {weights.size} weights")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be strictly positive")
        nodes.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls, n: int) -> QuadratureRule:
        return cls(np.zeros((0, n)), np.zeros(0))

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.weights.size

    def moments(self, degree: int) -> MomentVector:
        return MomentVector.from_rule(self.nodes, self.weights, degree) if len(self) else MomentVector(
            self.n, degree, np.zeros(comb(self.n + degree, self.n)))

    def integrate(self, f) -> float:
        return float(sum(w * f(x) for x, w in zip(self.nodes, self.weights)))

    def sorted(self) -> QuadratureRule:
        """Lexicographic node order; coordinates agreeing to ~1e-9 relative count as ties."""
        scale = 1.0 + (np.abs(self.nodes).max() if len(self) else 0.0)
        keys = np.round(self.nodes / scale, 9)
        order = np.lexsort(keys.T[::-1])
        return QuadratureRule(self.nodes[order], self.weights[order])


# ---------------------------------------------------------------------------
# verification

@dataclass
class VerificationReport:
    max_residual: float
    residuals: dict
    weight_margin: float
    node_count: int
    bounds: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "residuals": {",".join(map(str, k)): v for k, v in self.residuals.items()},
            "weight_margin": self.weight_margin,
            "node_count": self.node_count,
            "bounds": self.bounds,
        }


def moment_residuals(nodes: np.ndarray, weights: np.ndarray, L: MomentVector) -> np.ndarray:
    """Per-monomial ``|sum w x^a - L(x^a)| / (1 + |L(x^a)|)`` with compensated sums."""
    basis = L.basis
    if len(weights) == 0:
        return np.abs(L.values) / (1 + np.abs(L.values))
    V = monomial_matrix(nodes, basis)
    sums = np.array([math.fsum(row * weights) for row in V])
    return np.abs(sums - L.values) / (1 + np.abs(L.values))


def _bound_status(count: int, bound: int | None) -> dict:
    if bound is None:
        return {"value": None, "status": "not-applicable"}
    return {"value": int(bound), "status": "pass" if count <= bound else "fail"}


def applicable_bounds(n: int, degree: int, count: int, curve_degree: int | None = None) -> dict:
    """Node-count bounds relevant to a rule of exactness ``degree`` in ``n`` variables."""
    odd = degree % 2 == 1
    d = (degree + 1) // 2
    out = {"caratheodory": _bound_status(count, comb(n + degree, n))}
    out["gauss"] = _bound_status(count, d if (n == 1 and odd) else None)
    out["szego"] = _bound_status(count, 2 * d if (n == 2 and odd and curve_degree == 2) else None)
    out["curve"] = _bound_status(count, d * curve_degree if (n == 2 and odd and curve_degree) else None)
    out["petrovsky"] = _bound_status(count, 3 * d * (d - 1) // 2 + 1 if (n == 2 and odd) else None)
    # the lower bound is informational: some instances need at least this many nodes
    lower = (d - 1) ** 2 if (n == 2 and odd) else None
    out["lower"] = {"value": lower, "status": "not-applicable" if lower is None else "informational"}
    return out


def verify_exactness(rule: QuadratureRule, L: MomentVector, curve_degree: int | None = None) -> VerificationReport:
    if rule.n != L.n:
        raise ValueError(f"dimension mismatch: rule in R^{rule.n}, moments in R^{L.n}")
    res = moment_residuals(rule.nodes, rule.weights, L)
    margin = float(rule.weights.min()) if len(rule) else math.inf
    return VerificationReport(
        max_residual=float(res.max()) if res.size else 0.0,
        residuals=dict(zip(L.basis, map(float, res))),
        weight_margin=margin,
        node_count=len(rule),
        bounds=applicable_bounds(L.n, L.degree, len(rule), curve_degree),
    )


# ---------------------------------------------------------------------------
# weights

def weights_nnls(nodes, L: MomentVector, drop_tol: float = 1e-10, tol: float = 1e-7) -> tuple[np.ndarray, np.ndarray]:
    """Nonnegative least-squares weights for ``nodes`` against ``L``.

    Nodes whose weight falls to ``drop_tol * mass`` are removed and the fit is
    redone.  Returns ``(kept_nodes, weights)``; raises ``NumericalFailure`` if
    the relative residual stays above ``tol``.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if nodes.shape[1] != L.n:
        raise ValueError(f"dimension mismatch: nodes in R^{nodes.shape[1]}, moments in R^{L.n}")
    scale = 1.0 + np.abs(L.values)
    while True:
        V = monomial_matrix(nodes, L.basis) / scale[:, None]
        w, _ = nnls(V, L.values / scale, maxiter=50 * max(1, V.shape[1]))
        keep = w > drop_tol * max(L.mass, 1e-300)
        if keep.all() or not keep.any():
            break
        nodes = nodes[keep]
    # one refinement on the active set
    if keep.any():
        V = monomial_matrix(nodes, L.basis) / scale[:, None]
        wl = np.linalg.lstsq(V, L.values / scale, rcond=None)[0]
        if np.all(wl > 0) and np.linalg.norm(V @ wl - L.values / scale) <= np.linalg.norm(V @ w - L.values / scale):
            w = wl
    res = moment_residuals(nodes, w, L).max() if w.size else np.inf
    if not np.isfinite(res) or res > tol or not np.all(w > 0):
        raise NumericalFailure("weights infeasible", residual=float(res), nodes=nodes)
    return nodes, w


# ---------------------------------------------------------------------------
# Caratheodory pruning

def caratheodory_prune(rule: QuadratureRule, degree: int, sv_tol: float = 1e-10) -> QuadratureRule:
    """Reduce ``rule`` to at most ``dim R[x]_degree`` nodes without changing its moments up to ``degree``."""
    if len(rule) == 0:
        return rule
    basis = monomial_basis(rule.n, degree)
    nodes = np.array(rule.nodes)
    w = np.array(rule.weights, dtype=float)
    V = monomial_matrix(nodes, basis)
    target = V @ w
    rownorm = 1.0 + np.abs(target)
    Vs = V / rownorm[:, None]
    alive = np.arange(len(w))
    while True:
        Va = Vs[:, alive]
        k = alive.size
        _, s, vt = np.linalg.svd(Va, full_matrices=True)
        smax = s[0] if s.size else 0.0
        if k > Va.shape[0]:
            v = vt[-1]
        elif s.size and s[-1] <= sv_tol * smax:
            v = vt[k - 1]
        else:
            break
        wa = w[alive]
        best = None
        for sign in (1.0, -1.0):
            dv = sign * v
            pos = dv > 0
            if not pos.any():
                continue
            ratios = np.full(k, np.inf)
            ratios[pos] = wa[pos] / dv[pos]
            j = int(np.argmin(ratios))
            cand = (ratios[j], alive[j], sign, j)
            if best is None or cand[:2] < best[:2]:
                best = cand
        t, _, sign, j = best
        wa = wa - t * sign * v
        wa[j] = 0.0
        w[alive] = wa
        alive = alive[wa > 0]
        w[np.setdiff1d(np.arange(len(w)), alive)] = 0.0
    # restore the moments lost to rounding on the final support
    Va = Vs[:, alive]
    corr = np.linalg.lstsq(Va, target / rownorm - Va @ w[alive], rcond=None)[0]
    wa = w[alive] + corr
    if np.all(wa > 0):
        w[alive] = wa
    return QuadratureRule(nodes[alive], w[alive])


# ---------------------------------------------------------------------------
# merging

def merge_nodes(rule: QuadratureRule, radius: float, L: MomentVector, tol: float = 1e-7) -> tuple[QuadratureRule, bool]:
    """Single-linkage merge at ``radius`` followed by a weight re-fit.

    Returns ``(rule, merged)``; when the merged rule misses ``tol`` exactness the
    input comes back unchanged with ``merged=False``.
    """
    if radius <= 0 or len(rule) < 2:
        return rule, True
    labels = fcluster(linkage(rule.nodes, method="single"), t=radius, criterion="distance")
    if np.unique(labels).size == len(rule):
        return rule, True
    centers = []
    for lab in np.unique(labels):
        sel = labels == lab
        ww = rule.weights[sel]
        centers.append((ww[:, None] * rule.nodes[sel]).sum(axis=0) / ww.sum())
    try:
        nodes, w = weights_nnls(np.array(centers), L, tol=tol)
    except NumericalFailure:
        return rule, False
    return QuadratureRule(nodes, w), True


# ---------------------------------------------------------------------------
# bound table

def bound_table(d: int) -> dict:
    """Node-count bounds for planar cubature of exactness degree ``2d-1``."""
    row = {
        "degree": 2 * d - 1,
        "moller": d * (d + 1) // 2 + d // 2,
        "lower": (d - 1) ** 2,
        "d_squared": d * d,
        "petrovsky": 3 * d * (d - 1) // 2 + 1,
    }
    if not 1 <= d <= 10:
        row["extrapolated"] = True
    return row


# ---------------------------------------------------------------------------
# Gauss-Newton polishing

def _monomial_jacobians(nodes: np.ndarray, basis) -> list[np.ndarray]:
    """``out[k][r, i] = d/dx_k (x^basis[r])`` at node i."""
    n = nodes.shape[1]
    out = []
    for k in range(n):
        reduced, factor = [], []
        for alpha in basis:
            if alpha[k]:
                b = list(alpha)
                b[k] -= 1
                reduced.append(tuple(b))
                factor.append(alpha[k])
            else:
                reduced.append(alpha)
                factor.append(0)
        out.append(monomial_matrix(nodes, reduced) * np.array(factor, dtype=float)[:, None])
    return out


def polish_rule(nodes, weights, L: MomentVector, constraints=(), iters: int = 60, tol: float = 1e-14):
    """Gauss-Newton with least-norm steps on the moment equations of ``L``.

    ``constraints`` are polynomials that every node must annihilate (e.g. a
    curve equation).  Works in the caller's coordinates; callers normalize.
    Returns ``(nodes, weights)``.
    """
    x = np.array(nodes, dtype=float)
    w = np.array(weights, dtype=float)
    N, n = x.shape
    basis = L.basis
    scale = 1.0 + np.abs(L.values)
    grads = [[c.derivative(k) for k in range(n)] for c in constraints]

    def residual(x, w):
        r = (monomial_matrix(x, basis) @ w - L.values) / scale
        cons = [c.eval_many(x) for c in constraints]
        return np.concatenate([r] + cons)

    r = residual(x, w)
    for _ in range(iters):
        if np.abs(r).max() <= tol:
            break
        V = monomial_matrix(x, basis) / scale[:, None]
        dV = _monomial_jacobians(x, basis)
        J_moments = np.hstack([V] + [dV[k] / scale[:, None] * w for k in range(n)])
        blocks = [J_moments]
        for ci, c in enumerate(constraints):
            Jc = np.zeros((N, N * (n + 1)))
            for k in range(n):
                Jc[np.arange(N), N * (k + 1) + np.arange(N)] = grads[ci][k].eval_many(x)
            blocks.append(Jc)
        J = np.vstack(blocks)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        w_new = w + step[:N]
        x_new = x + step[N:].reshape(n, N).T
        r_new = residual(x_new, w_new)
        if np.linalg.norm(r_new) >= np.linalg.norm(r):
            # damped retry
            t = 0.5
            while t > 1e-4:
                w_try, x_try = w + t * step[:N], x + t * step[N:].reshape(n, N).T
                r_try = residual(x_try, w_try)
                if np.linalg.norm(r_try) < np.linalg.norm(r):
                    w_new, x_new, r_new = w_try, x_try, r_try
                    break
                t *= 0.5
            else:
                break
        x, w, r = x_new, w_new, r_new
    return x, w


# ---------------------------------------------------------------------------
# grid LP

@dataclass
class GridLpResult:
    rule: QuadratureRule
    value: float
    exact: bool
    iterations: int


def grid_lp_rule(points, L: MomentVector, cost) -> GridLpResult:
    """Vertex of ``min sum w_i cost_i`` over nonnegative weights on ``points`` reproducing ``L``.

    The vertex has at most ``len(L.values)`` atoms.  When no exact rule is
    supported on the points, the l1 moment mismatch is minimized instead and
    ``exact`` is False.
    """
    from .conic import INFEASIBLE, OPTIMAL, LpProblem, solve_lp

    P = np.atleast_2d(np.asarray(points, dtype=float))
    cost = np.asarray(cost, dtype=float)
    scale = 1.0 + np.abs(L.values)
    V = monomial_matrix(P, L.basis) / scale[:, None]
    b = L.values / scale
    c = cost / max(np.abs(cost).max(initial=0.0), 1e-300)
    sol = solve_lp(LpProblem(V, b, c))
    exact = True
    if sol.status == INFEASIBLE:
        m = V.shape[0]
        sol = solve_lp(LpProblem(np.hstack([V, np.eye(m), -np.eye(m)]), b,
                                 np.concatenate([1e-6 * c, np.ones(2 * m)])))
        exact = False
    if sol.status != OPTIMAL:
        raise NumericalFailure(f"grid LP ended with status {sol.status}")
    w = sol.primal[: P.shape[0]]
    keep = w > 1e-13 * max(w.max(initial=0.0), 1e-300)
    rule = QuadratureRule(P[keep], w[keep])
    return GridLpResult(rule, float(cost[keep] @ w[keep]), exact, sol.iterations)
