"""Sparse multivariate polynomials with real coefficients.

Terms are stored as ``{exponent tuple: coefficient}``; zero coefficients are
never kept. Monomial lists use graded lexicographic order (lower total degree
first, then ``x_1 > x_2 > ...`` within a degree).
"""
from __future__ import annotations

import itertools
import math
from typing import Iterable, Mapping

import numpy as np

from .constraints import QuadraticForm


def grlex_key(alpha: tuple[int, ...]):
    return (sum(alpha), tuple(-a for a in alpha))


def monomial_basis(variables: Iterable[int], degree: int, nvars: int) -> list[tuple[int, ...]]:
    """All exponents supported on ``variables`` with total degree <= ``degree``."""
    variables = sorted(variables)
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(variables, d):
            alpha = [0] * nvars
            for i in combo:
                alpha[i] += 1
            out.append(tuple(alpha))
    return sorted(out, key=grlex_key)


def basis_size(n_vars_in_clique: int, degree: int) -> int:
    return math.comb(n_vars_in_clique + degree, degree)


def add_exponents(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(x + y for x, y in zip(a, b))


class SparsePolynomial:
    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[tuple[int, ...], float] | None = None):
        self.nvars = nvars
        self.terms: dict[tuple[int, ...], float] = {}
        for alpha, coeff in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != nvars:
                raise ValueError("exponent length does not match nvars")
            if coeff != 0:
                self.terms[alpha] = self.terms.get(alpha, 0.0) + float(coeff)
        self.terms = {a: c for a, c in self.terms.items() if c != 0}

    # construction
    @classmethod
    def constant(cls, nvars: int, value: float) -> "SparsePolynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int) -> "SparsePolynomial":
        alpha = [0] * nvars
        alpha[index] = 1
        return cls(nvars, {tuple(alpha): 1.0})

    @classmethod
    def from_quadratic_form(cls, form: QuadraticForm, drop_tol: float = 0.0) -> "SparsePolynomial":
        n = form.dim
        terms: dict = {}
        zero = (0,) * n

        def put(alpha, c):
            if abs(c) > drop_tol:
                terms[alpha] = terms.get(alpha, 0.0) + c

        put(zero, form.constant)
        eye = np.eye(n, dtype=int)
        for i in range(n):
            put(tuple(eye[i]), form.linear[i])
        Q = form.quadratic
        for i in range(n):
            put(tuple(2 * eye[i]), Q[i, i])
            for j in range(i + 1, n):
                put(tuple(eye[i] + eye[j]), 2.0 * Q[i, j])
        return cls(n, terms)

    # algebra
    def __add__(self, other):
        if not isinstance(other, SparsePolynomial):
            other = SparsePolynomial.constant(self.nvars, float(other))
        terms = dict(self.terms)
        for a, c in other.terms.items():
            terms[a] = terms.get(a, 0.0) + c
        return SparsePolynomial(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self):
        return SparsePolynomial(self.nvars, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, SparsePolynomial):
            return SparsePolynomial(self.nvars, {a: c * float(other) for a, c in self.terms.items()})
        terms: dict = {}
        for a, c in self.terms.items():
            for b, d in other.terms.items():
                k = add_exponents(a, b)
                terms[k] = terms.get(k, 0.0) + c * d
        return SparsePolynomial(self.nvars, terms)

    __rmul__ = __mul__

    def __eq__(self, other):
        return isinstance(other, SparsePolynomial) and self.nvars == other.nvars and self.terms == other.terms

    def __repr__(self):
        return f"SparsePolynomial(nvars={self.nvars}, terms={len(self.terms)}, degree={self.degree})"

    # inspection
    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    @property
    def half_degree(self) -> int:
        return math.ceil(self.degree / 2)

    def support(self) -> frozenset[int]:
        """Variables that appear with a nonzero coefficient."""
        return frozenset(i for a in self.terms for i, e in enumerate(a) if e > 0)

    def cross_pairs(self) -> set[tuple[int, int]]:
        """Pairs of variables sharing a monomial."""
        out = set()
        for a in self.terms:
            idx = [i for i, e in enumerate(a) if e > 0]
            out.update(itertools.combinations(idx, 2))
        return out

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        total = 0.0
        for a, c in self.terms.items():
            total += c * float(np.prod(x ** np.array(a)))
        return total
