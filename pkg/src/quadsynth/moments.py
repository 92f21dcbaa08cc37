"""Truncated moment vectors (Riesz functionals), standard measures and moment matrices."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .poly import Exponent, Polynomial, basis_index, basis_size, monomial_basis, monomial_matrix


class MomentError(ValueError):
    """Malformed or inconsistent moment data."""


class MomentVector:
    """Values ``L(x^alpha)`` for every exponent with ``|alpha| <= degree``.

    Values are held in an array aligned with ``monomial_basis(n, degree)``.
    """

    __slots__ = ("n", "degree", "values")

    def __init__(self, n: int, degree: int, values: Sequence[float]):
        values = np.array(values, dtype=float).reshape(-1)
        if values.size != basis_size(n, degree):
            raise MomentError(f"expected {basis_size(n, degree)} moments for n={n}, degree={degree}, got {values.size}")
        values.flags.writeable = False
        self.n = n
        self.degree = degree
        self.values = values

    @classmethod
    def from_dict(cls, n: int, degree: int, moments: dict[Exponent, float]) -> MomentVector:
        basis = monomial_basis(n, degree)
        missing = [a for a in basis if a not in moments]
        if missing:
            raise MomentError(f"missing moment for alpha={list(missing[0])}")
        return cls(n, degree, [moments[a] for a in basis])

    @classmethod
    def from_rule(cls, nodes, weights, degree: int) -> MomentVector:
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        n = nodes.shape[1]
        V = monomial_matrix(nodes, monomial_basis(n, degree))
        return cls(n, degree, V @ np.asarray(weights, dtype=float))

    @property
    def basis(self) -> tuple[Exponent, ...]:
        return monomial_basis(self.n, self.degree)

    @property
    def mass(self) -> float:
        return float(self.values[0])

    def __getitem__(self, alpha: Sequence[int]) -> float:
        alpha = tuple(alpha)
        if len(alpha) != self.n:
            raise MomentError(f"exponent {alpha} has wrong length for n={self.n}")
        if sum(alpha) > self.degree:
            raise MomentError(f"degree of {alpha} exceeds moment degree {self.degree}")
        return float(self.values[basis_index(self.n, self.degree)[alpha]])

    def as_dict(self) -> dict[Exponent, float]:
        return dict(zip(self.basis, map(float, self.values)))

    def truncate(self, degree: int) -> MomentVector:
        if degree > self.degree:
            raise MomentError(f"cannot truncate degree {self.degree} vector to {degree}")
        return MomentVector(self.n, degree, self.values[: basis_size(self.n, degree)])

    def __add__(self, other: MomentVector) -> MomentVector:
        if (other.n, other.degree) != (self.n, self.degree):
            raise MomentError("moment vectors of different shape")
        return MomentVector(self.n, self.degree, self.values + other.values)

    def __mul__(self, c: float) -> MomentVector:
        return MomentVector(self.n, self.degree, self.values * float(c))

    __rmul__ = __mul__

    def __repr__(self):
        return f"MomentVector(n={self.n}, degree={self.degree}, mass={self.mass:.6g})"


def riesz_apply(L: MomentVector, p: Polynomial) -> float:
    """Apply the functional to a polynomial: ``sum_alpha p_alpha L(x^alpha)``."""
    if p.n != L.n:
        raise MomentError(f"dimension mismatch: polynomial in {p.n} variables, moments in {L.n}")
    if p.degree > L.degree:
        raise MomentError(f"polynomial degree {p.degree} exceeds moment degree {L.degree}")
    idx = basis_index(L.n, L.degree)
    return math.fsum(c * L.values[idx[a]] for a, c in p.terms)


# ---------------------------------------------------------------------------
# standard measures

MEASURE_KINDS = ("uniform-interval", "gaussian-line", "uniform-square", "uniform-box",
                 "uniform-disk", "uniform-circle", "dirac-combination")


@dataclass(frozen=True)
class MeasureSpec:
    """A concrete measure with closed-form moments.

    ``uniform-*`` kinds are Lebesgue (length/area/arc-length), not normalized;
    ``gaussian-line`` is the normal probability measure.
    """

    kind: str
    params: tuple = ()
    nodes: tuple = field(default=())
    weights: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise MomentError(f"unsupported measure kind {self.kind!r}")
        p = self.params
        if self.kind in ("uniform-interval", "uniform-square", "uniform-box"):
            if len(p) < 2 or not p[0] < p[1]:
                raise MomentError(f"{self.kind} needs bounds a < b, got {p}")
            if self.kind == "uniform-square" and len(p) == 4 and not p[2] < p[3]:
                raise MomentError(f"uniform-square needs c < d, got {p}")
        elif self.kind == "gaussian-line":
            if len(p) != 2 or p[1] <= 0:
                raise MomentError("gaussian-line needs (mean, sigma) with sigma > 0")
        elif self.kind in ("uniform-disk", "uniform-circle"):
            if len(p) != 3 or p[2] <= 0:
                raise MomentError(f"{self.kind} needs (cx, cy, r) with r > 0")
        elif self.kind == "dirac-combination":
            if len(self.nodes) != len(self.weights) or not self.nodes:
                raise MomentError("dirac-combination needs matching nonempty nodes and weights")
            if any(w <= 0 for w in self.weights):
                raise MomentError("dirac weights must be positive")

    @property
    def n(self) -> int:
        if self.kind in ("uniform-interval", "gaussian-line"):
            return 1
        if self.kind == "uniform-box":
            return int(self.params[2]) if len(self.params) > 2 else 2
        if self.kind == "dirac-combination":
            return len(np.atleast_1d(self.nodes[0]))
        return 2

    @classmethod
    def dirac(cls, nodes, weights) -> MeasureSpec:
        nodes = tuple(tuple(float(c) for c in np.atleast_1d(x)) for x in nodes)
        return cls("dirac-combination", (), nodes, tuple(float(w) for w in weights))


def _interval_moments(a: float, b: float, D: int) -> np.ndarray:
    return np.array([(b ** (k + 1) - a ** (k + 1)) / (k + 1) for k in range(D + 1)])


def _gauss_moments(mean: float, sigma: float, D: int) -> np.ndarray:
    central = np.zeros(D + 1)
    central[0] = 1.0
    for k in range(2, D + 1, 2):
        central[k] = central[k - 2] * (k - 1) * sigma**2
    return np.array([sum(comb(k, j) * mean ** (k - j) * central[j] for j in range(k + 1)) for k in range(D + 1)])


def _shift_2d(centered: dict[Exponent, float], cx: float, cy: float, D: int) -> dict[Exponent, float]:
    out = {}
    for a, b in monomial_basis(2, D):
        s = 0.0
        for i in range(a + 1):
            for j in range(b + 1):
                s += comb(a, i) * comb(b, j) * cx ** (a - i) * cy ** (b - j) * centered[(i, j)]
        out[(a, b)] = s
    return out


def _half_gamma_ratio(p: int, q: int, extra: float) -> float:
    # 2 Gamma((p+1)/2) Gamma((q+1)/2) / Gamma((p+q+2)/2 + extra) for even p, q
    return 2.0 * math.exp(gammaln((p + 1) / 2) + gammaln((q + 1) / 2) - gammaln((p + q + 2) / 2 + extra))


def standard_moments(spec: MeasureSpec, degree: int) -> MomentVector:
    """Closed-form moments of ``spec`` up to total degree ``degree``."""
    if degree < 0:
        raise MomentError("degree must be nonnegative")
    D = degree
    k = spec.kind
    if k == "uniform-interval":
        return MomentVector(1, D, _interval_moments(spec.params[0], spec.params[1], D))
    if k == "gaussian-line":
        return MomentVector(1, D, _gauss_moments(spec.params[0], spec.params[1], D))
    if k in ("uniform-square", "uniform-box"):
        n = spec.n
        if k == "uniform-square" and len(spec.params) == 4:
            per_axis = [_interval_moments(*spec.params[:2], D), _interval_moments(*spec.params[2:4], D)]
        else:
            per_axis = [_interval_moments(spec.params[0], spec.params[1], D)] * n
        vals = [math.prod(per_axis[i][a] for i, a in enumerate(alpha)) for alpha in monomial_basis(n, D)]
        return MomentVector(n, D, vals)
    if k in ("uniform-disk", "uniform-circle"):
        cx, cy, r = spec.params
        centered = {}
        for p, q in monomial_basis(2, D):
            if p % 2 or q % 2:
                centered[(p, q)] = 0.0
            elif k == "uniform-disk":
                # integral over the disk of radius r: r^(p+q+2) * 2 G G / ((p+q+2) G)
                centered[(p, q)] = r ** (p + q + 2) * _half_gamma_ratio(p, q, 0.0) / (p + q + 2)
            else:
                centered[(p, q)] = r ** (p + q + 1) * _half_gamma_ratio(p, q, 0.0)
        return MomentVector.from_dict(2, D, _shift_2d(centered, cx, cy, D))
    if k == "dirac-combination":
        return MomentVector.from_rule(np.array(spec.nodes), np.array(spec.weights), D)
    raise MomentError(f"unsupported measure kind {k!r}")


_SPEC_SYNTAX = {
    "uniform": ("uniform-interval", 2),
    "interval": ("uniform-interval", 2),
    "gauss": ("gaussian-line", 2),
    "gaussian": ("gaussian-line", 2),
    "square": ("uniform-square", (2, 4)),
    "box": ("uniform-box", 3),
    "disk": ("uniform-disk", 3),
    "circle": ("uniform-circle", 3),
}


def parse_measure_spec(text: str) -> MeasureSpec:
    """Parse CLI measure strings like ``uniform:-1:1``, ``circle:0:0:1`` or ``box:-1:1:3``.

    Dirac combinations: ``dirac:x,y@w;x,y@w``.
    """
    head, _, rest = text.partition(":")
    head = head.strip().lower()
    if head == "dirac":
        nodes, weights = [], []
        for item in filter(None, rest.split(";")):
            pt, _, w = item.partition("@")
            nodes.append([float(c) for c in pt.split(",")])
            weights.append(float(w) if w else 1.0)
        return MeasureSpec.dirac(nodes, weights)
    if head not in _SPEC_SYNTAX:
        raise MomentError(f"unknown measure {head!r}; expected one of {sorted(_SPEC_SYNTAX) + ['dirac']}")
    kind, arity = _SPEC_SYNTAX[head]
    try:
        params = tuple(float(v) for v in rest.split(":")) if rest else ()
    except ValueError as exc:
        raise MomentError(f"bad measure parameters in {text!r}") from exc
    allowed = arity if isinstance(arity, tuple) else (arity,)
    if len(params) not in allowed:
        raise MomentError(f"measure {head!r} takes {' or '.join(map(str, allowed))} parameters, got {len(params)}")
    if kind == "uniform-box":
        params = (params[0], params[1], int(params[2]))
    return MeasureSpec(kind, params)


# ---------------------------------------------------------------------------
# moment matrices

@dataclass(frozen=True)
class MomentMatrix:
    order: int
    index: tuple[Exponent, ...]
    entries: np.ndarray


def hankel_index(n: int, d: int, degree: int) -> np.ndarray:
    """Positions in ``monomial_basis(n, degree)`` of ``alpha+beta`` for the order-``d`` basis."""
    basis = monomial_basis(n, d)
    idx = basis_index(n, degree)
    return np.array([[idx[tuple(a + b for a, b in zip(al, be))] for be in basis] for al in basis], dtype=int)


def moment_matrix(L: MomentVector, d: int) -> MomentMatrix:
    """``M[alpha, beta] = L(x^(alpha+beta))`` over ``monomial_basis(L.n, d)``."""
    if 2 * d > L.degree:
        raise MomentError(f"order {d} moment matrix needs degree {2 * d}, have {L.degree}")
    M = L.values[hankel_index(L.n, d, L.degree)]
    return MomentMatrix(d, monomial_basis(L.n, d), 0.5 * (M + M.T))


def localizing_matrix(L: MomentVector, d: int, shift: Exponent) -> np.ndarray:
    """``M[alpha, beta] = L(x^shift x^(alpha+beta))`` over the order-``d`` basis."""
    basis = monomial_basis(L.n, d)
    if 2 * d + sum(shift) > L.degree:
        raise MomentError("localizing matrix exceeds available degree")
    idx = basis_index(L.n, L.degree)
    return np.array([[L.values[idx[tuple(a + b + s for a, b, s in zip(al, be, shift))]] for be in basis] for al in basis])


@dataclass(frozen=True)
class PsdRank:
    rank: int
    kernel: np.ndarray  # columns span the numerical kernel
    is_psd: bool
    eigenvalues: np.ndarray


def psd_rank(M, rel_tol: float = 1e-8) -> PsdRank:
    """Numerical rank, kernel and PSD flag of a symmetric matrix relative to its largest eigenvalue."""
    A = M.entries if isinstance(M, MomentMatrix) else np.asarray(M, dtype=float)
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    lam_max = w[-1] if w.size else 0.0
    if lam_max <= 0:
        return PsdRank(0, V, bool(np.all(w >= 0)), w)
    thresh = rel_tol * lam_max
    keep = w > thresh
    return PsdRank(int(keep.sum()), V[:, ~keep], bool(w[0] >= -thresh), w)


# ---------------------------------------------------------------------------
# file format

def serialize_moments(L: MomentVector) -> str:
    doc = {
        "n": L.n,
        "degree": L.degree,
        "moments": [{"alpha": list(a), "value": float(v)} for a, v in zip(L.basis, L.values)],
    }
    return json.dumps(doc, indent=1)


def parse_moments(content: bytes | str) -> MomentVector:
    """Decode a moment file ``{"n", "degree", "moments": [{"alpha", "value"}, ...]}``."""
    try:
        doc = json.loads(content)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MomentError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MomentError("moment file must be a JSON object")
    for key in ("n", "degree", "moments"):
        if key not in doc:
            raise MomentError(f"missing key {key!r}")
    n, degree = doc["n"], doc["degree"]
    if not isinstance(n, int) or n < 1 or not isinstance(degree, int) or degree < 0:
        raise MomentError("n must be a positive integer and degree a nonnegative integer")
    values: dict[Exponent, float] = {}
    for entry in doc["moments"]:
        try:
            alpha = tuple(int(a) for a in entry["alpha"])
            value = float(entry["value"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MomentError(f"bad moment entry {entry!r}") from exc
        if len(alpha) != n:
            raise MomentError(f"alpha {list(alpha)} has length {len(alpha)}, expected {n}")
        if any(a < 0 for a in alpha):
            raise MomentError(f"negative exponent in alpha {list(alpha)}")
        if sum(alpha) > degree:
            raise MomentError(f"degree mismatch: alpha {list(alpha)} exceeds declared degree {degree}")
        if alpha in values:
            raise MomentError(f"duplicate alpha {list(alpha)}")
        values[alpha] = value
    return MomentVector.from_dict(n, degree, values)


# ---------------------------------------------------------------------------
# affine normalization

@dataclass(frozen=True)
class Normalization:
    """Isotropic affine change of variables ``x = center + scale * t``.

    The scale is a power of two so that the map and its inverse are exact in
    floating point.
    """

    center: np.ndarray
    scale: float

    def to_normalized(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def to_original(self, t: np.ndarray) -> np.ndarray:
        return self.center + self.scale * np.asarray(t, dtype=float)


def normalization_for(L: MomentVector, spread: float = math.sqrt(3.0)) -> Normalization:
    """Center at the mean and scale so that ``spread`` standard deviations map to about one."""
    m0 = L.mass
    n = L.n
    if m0 <= 0 or L.degree < 1:
        return Normalization(np.zeros(n), 1.0)
    e = np.eye(n, dtype=int)
    mean = np.array([L[tuple(e[i])] for i in range(n)]) / m0
    if L.degree >= 2:
        var = np.array([L[tuple(2 * e[i])] / m0 - mean[i] ** 2 for i in range(n)])
        sigma = math.sqrt(max(float(var.max()), 0.0))
    else:
        sigma = 0.0
    ref = 1.0 + float(np.abs(mean).max())
    if sigma <= 1e-12 * ref:
        scale = 1.0
    else:
        scale = 2.0 ** round(math.log2(spread * sigma))
    return Normalization(mean, scale)


def normalize_moments(L: MomentVector, nz: Normalization) -> MomentVector:
    """Moments of the pushforward under ``t = (x - center) / scale``."""
    n, D = L.n, L.degree
    out = []
    for alpha in monomial_basis(n, D):
        p = Polynomial.monomial(alpha).compose_affine(np.eye(n) / nz.scale, -nz.center / nz.scale)
        out.append(riesz_apply(L, p))
    return MomentVector(n, D, out)
