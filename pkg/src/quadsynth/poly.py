"""Sparse multivariate polynomials with real coefficients.

Terms are stored canonically as a tuple of ``(exponent, coefficient)`` pairs
sorted by the graded order (total degree first, then lexicographic on the
exponent tuple).  Coefficients with absolute value below ``PRUNE_TOL`` are
dropped, so two polynomials are equal iff their term tuples are equal.
"""

from __future__ import annotations

import math
import re
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-14

Exponent = tuple[int, ...]


def graded_key(alpha: Sequence[int]) -> tuple:
    """Sort key of the graded order: total degree, then reverse-lex so X1 first."""
    return (sum(alpha), tuple(-a for a in alpha))


@lru_cache(maxsize=None)
def monomial_basis(n: int, d: int) -> tuple[Exponent, ...]:
    """All exponents in ``n`` variables with total degree ``<= d``, graded order.

    For ``n=2, d=2`` this is ``1, X1, X2, X1^2, X1 X2, X2^2``.
    """
    if n < 1:
        raise ValueError("need at least one variable")
    if d < 0:
        return ()
    out: list[Exponent] = []
    for k in range(d + 1):
        out.extend(_homogeneous_exponents(n, k))
    return tuple(out)


def _homogeneous_exponents(n: int, k: int) -> list[Exponent]:
    res = []
    for combo in combinations_with_replacement(range(n), k):
        alpha = [0] * n
        for i in combo:
            alpha[i] += 1
        res.append(tuple(alpha))
    res.sort(key=graded_key)
    return res


def basis_size(n: int, d: int) -> int:
    return comb(n + d, n) if d >= 0 else 0


@lru_cache(maxsize=None)
def basis_index(n: int, d: int) -> dict[Exponent, int]:
    return {a: i for i, a in enumerate(monomial_basis(n, d))}


def monomial_matrix(points: np.ndarray, basis: Sequence[Exponent]) -> np.ndarray:
    """Evaluate every monomial of ``basis`` at every point.

    Returns an array of shape ``(len(basis), len(points))``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        return np.zeros((len(basis), 0))
    n = pts.shape[1]
    maxdeg = max((max(a) for a in basis), default=0)
    powers = np.ones((n, maxdeg + 1, pts.shape[0]))
    for k in range(1, maxdeg + 1):
        powers[:, k, :] = powers[:, k - 1, :] * pts.T
    out = np.ones((len(basis), pts.shape[0]))
    for r, alpha in enumerate(basis):
        for i, a in enumerate(alpha):
            if a:
                out[r] *= powers[i, a]
    return out


class Polynomial:
    """Immutable sparse polynomial in ``n`` variables."""

    __slots__ = ("n", "terms", "_dict")

    def __init__(self, n: int, terms: Mapping[Exponent, float] | Iterable[tuple[Exponent, float]] = ()):
        if n < 1:
            raise ValueError("polynomial needs n >= 1 variables")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[Exponent, float] = {}
        for alpha, c in items:
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != n:
                raise ValueError(f"exponent {alpha} does not have {n} entries")
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            acc[alpha] = acc.get(alpha, 0.0) + float(c)
        kept = {a: c for a, c in acc.items() if abs(c) > PRUNE_TOL}
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "terms", tuple(sorted(kept.items(), key=lambda t: graded_key(t[0]))))
        object.__setattr__(self, "_dict", kept)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # construction helpers
    @classmethod
    def zero(cls, n: int) -> Polynomial:
        return cls(n)

    @classmethod
    def constant(cls, n: int, c: float) -> Polynomial:
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, i: int) -> Polynomial:
        alpha = [0] * n
        alpha[i] = 1
        return cls(n, {tuple(alpha): 1.0})

    @classmethod
    def monomial(cls, alpha: Sequence[int], c: float = 1.0) -> Polynomial:
        return cls(len(alpha), {tuple(alpha): c})

    @classmethod
    def from_vector(cls, n: int, coeffs: Sequence[float], basis: Sequence[Exponent] | None = None) -> Polynomial:
        """Build from a coefficient vector aligned with ``basis`` (default: graded basis)."""
        coeffs = list(coeffs)
        if basis is None:
            d = 0
            while basis_size(n, d) < len(coeffs):
                d += 1
            basis = monomial_basis(n, d)[: len(coeffs)]
        return cls(n, zip(basis, coeffs))

    def to_vector(self, basis: Sequence[Exponent]) -> np.ndarray:
        idx = {a: i for i, a in enumerate(basis)}
        v = np.zeros(len(basis))
        for a, c in self.terms:
            if a not in idx:
                raise ValueError(f"term {a} is outside the given basis")
            v[idx[a]] = c
        return v

    # basic queries
    @property
    def degree(self) -> float:
        """Total degree; ``-math.inf`` for the zero polynomial."""
        if not self.terms:
            return -math.inf
        return max(sum(a) for a, _ in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, alpha: Sequence[int]) -> float:
        return self._dict.get(tuple(alpha), 0.0)

    def as_dict(self) -> dict[Exponent, float]:
        return dict(self._dict)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for _, c in self.terms), default=0.0)

    # evaluation
    def __call__(self, x) -> float:
        return self.eval(x)

    def eval(self, x: Sequence[float]) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.n,):
            raise ValueError(f"dimension mismatch: point has {x.size} coordinates, polynomial has {self.n}")
        parts = []
        for alpha, c in self.terms:
            v = c
            for xi, a in zip(x, alpha):
                if a:
                    v *= xi**a
            parts.append(v)
        return math.fsum(parts)

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Vectorized evaluation at an ``(N, n)`` array of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.n:
            raise ValueError(f"dimension mismatch: points have {pts.shape[1]} coordinates, polynomial has {self.n}")
        if not self.terms:
            return np.zeros(pts.shape[0])
        basis = [a for a, _ in self.terms]
        coef = np.array([c for _, c in self.terms])
        return coef @ monomial_matrix(pts, basis)

    # structure
    def homogeneous_part(self, k: int) -> Polynomial:
        if k < 0:
            raise ValueError("degree must be nonnegative")
        return Polynomial(self.n, [(a, c) for a, c in self.terms if sum(a) == k])

    def homogenize(self, d: int) -> Polynomial:
        """Return the ``d``-homogenization in ``n+1`` variables; the new variable comes first."""
        if self.degree > d:
            raise ValueError(f"degree {self.degree} exceeds homogenization degree {d}")
        return Polynomial(self.n + 1, [((d - sum(a),) + a, c) for a, c in self.terms])

    def derivative(self, i: int) -> Polynomial:
        out = []
        for a, c in self.terms:
            if a[i]:
                b = list(a)
                b[i] -= 1
                out.append((tuple(b), c * a[i]))
        return Polynomial(self.n, out)

    def gradient(self) -> list[Polynomial]:
        return [self.derivative(i) for i in range(self.n)]

    def compose_affine(self, A: np.ndarray, b: np.ndarray) -> Polynomial:
        """Return ``x -> p(A x + b)``; ``A`` has shape ``(self.n, m)``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != self.n or b.shape[0] != self.n:
            raise ValueError("dimension mismatch in affine composition")
        m = A.shape[1]
        lin = [Polynomial(m, [(tuple(int(j == k) for j in range(m)), A[i, k]) for k in range(m)] + [((0,) * m, b[i])])
               for i in range(self.n)]
        out = Polynomial.zero(m)
        powers: dict[tuple[int, int], Polynomial] = {}
        for alpha, c in self.terms:
            term = Polynomial.constant(m, c)
            for i, a in enumerate(alpha):
                if a:
                    key = (i, a)
                    if key not in powers:
                        powers[key] = lin[i] ** a
                    term = term * powers[key]
            out = out + term
        return out

    # arithmetic
    def _check(self, other: Polynomial) -> None:
        if other.n != self.n:
            raise ValueError(f"variable count mismatch: {self.n} vs {other.n}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        self._check(other)
        return Polynomial(self.n, list(self.terms) + list(other.terms))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, [(a, -c) for a, c in self.terms])

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.n, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(self.n, [(a, c * other) for a, c in self.terms])
        self._check(other)
        acc: dict[Exponent, float] = {}
        for a, c in self.terms:
            for b, e in other.terms:
                key = tuple(x + y for x, y in zip(a, b))
                acc[key] = acc.get(key, 0.0) + c * e
        return Polynomial(self.n, acc)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        result = Polynomial.constant(self.n, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, self.terms))

    def allclose(self, other: Polynomial, atol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self._dict) | set(other._dict)
        return all(abs(self.coeff(k) - other.coeff(k)) <= atol for k in keys)

    def __repr__(self):
        return f"Polynomial({self.n}, {format_polynomial(self)!r})"

    def __str__(self):
        return format_polynomial(self)


# ---------------------------------------------------------------------------
# text format

def _format_monomial(alpha: Exponent) -> str:
    parts = []
    for i, a in enumerate(alpha):
        if a == 1:
            parts.append(f"X{i + 1}")
        elif a > 1:
            parts.append(f"X{i + 1}^{a}")
    return " ".join(parts)


def format_polynomial(p: Polynomial) -> str:
    """Canonical text: ``coeff * X1^a X2^b`` terms joined by `` + `` in graded order."""
    if p.is_zero():
        return "0"
    out = []
    for alpha, c in p.terms:
        mono = _format_monomial(alpha)
        out.append(f"{c!r} * {mono}" if mono else repr(c))
    return " + ".join(out)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|inf|nan)|(?P<var>[A-Za-z]\d*)|(?P<op>[-+*^()]))"
)
_ALIASES = {"X": 1, "Y": 2, "Z": 3, "W": 4}


class PolynomialSyntaxError(ValueError):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos, toks = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolynomialSyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        toks.append((kind, m.group(kind)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return toks


def _var_index(name: str) -> int:
    head, tail = name[0].upper(), name[1:]
    if tail:
        if head != "X":
            raise PolynomialSyntaxError(f"unknown variable {name!r}")
        return int(tail)
    if head not in _ALIASES:
        raise PolynomialSyntaxError(f"unknown variable {name!r}")
    return _ALIASES[head]


def parse_polynomial(text: str, n: int | None = None) -> Polynomial:
    """Parse polynomial text.

    Accepts the canonical output of :func:`format_polynomial` as well as the
    usual infix notation with ``+ - * ^`` and parentheses.  Variables are
    ``X1, X2, ...`` with aliases ``X, Y, Z`` (case-insensitive).  Juxtaposed
    factors multiply, so ``2 * X1^2 X2`` is accepted.
    """
    toks = _tokenize(text)
    if not toks:
        raise PolynomialSyntaxError("empty polynomial")
    used = [_var_index(v) for k, v in toks if k == "var"]
    nvar = max(used, default=1)
    if n is None:
        n = nvar
    elif nvar > n:
        raise PolynomialSyntaxError(f"variable index {nvar} exceeds n={n}")
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else (None, None)

    def take():
        nonlocal pos
        if pos >= len(toks):
            raise PolynomialSyntaxError(f"unexpected end of input in {text!r}")
        tok = toks[pos]
        pos += 1
        return tok

    def expr():
        sign = 1.0
        k, v = peek()
        if k == "op" and v in "+-":
            take()
            sign = -1.0 if v == "-" else 1.0
        acc = term() * sign
        while True:
            k, v = peek()
            if k == "op" and v in "+-":
                take()
                rhs = term()
                acc = acc + rhs if v == "+" else acc - rhs
            else:
                return acc

    def term():
        acc = power()
        while True:
            k, v = peek()
            if k == "op" and v == "*":
                take()
                acc = acc * power()
            elif k in ("num", "var") or (k == "op" and v == "("):
                acc = acc * power()
            else:
                return acc

    def power():
        base = atom()
        k, v = peek()
        if k == "op" and v == "^":
            take()
            k2, v2 = take()
            if k2 != "num" or not v2.isdigit():
                raise PolynomialSyntaxError(f"exponent must be a nonnegative integer, got {v2!r}")
            base = base ** int(v2)
        return base

    def atom():
        if pos >= len(toks):
            raise PolynomialSyntaxError("unexpected end of input")
        k, v = take()
        if k == "num":
            return Polynomial.constant(n, float(v))
        if k == "var":
            return Polynomial.variable(n, _var_index(v) - 1)
        if v == "(":
            inner = expr()
            k2, v2 = take() if pos < len(toks) else (None, None)
            if v2 != ")":
                raise PolynomialSyntaxError("missing closing parenthesis")
            return inner
        if v == "-":
            return -power()
        raise PolynomialSyntaxError(f"unexpected token {v!r}")

    result = expr()
    if pos != len(toks):
        raise PolynomialSyntaxError(f"trailing input near token {toks[pos][1]!r}")
    return result
