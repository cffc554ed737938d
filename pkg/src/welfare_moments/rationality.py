"""Stochastic-rationalizability tests on moment surfaces.

A population of utility maximizers satisfies pointwise Slutsky
negativity, so the population average of (dq/dp + q dq/dy) weighted by
any polynomial in demand that is nonnegative on the demand support must
be nonpositive.  Those weighted averages ("translations") are observable
from consecutive moment derivatives; the tests below check the
degree-one cone generators directly and search higher degrees with a
small dense-simplex linear program.  A passing verdict means no
violation was found, not a certificate of rationalizability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import OrderError


class SimplexError(RuntimeError):
    """The LP solver hit a state that the problem structure rules out."""


@dataclass(frozen=True)
class Translation:
    """Value of the Slutsky functional against one monomial in demand."""

    degree: int
    value: float


@dataclass(frozen=True)
class SupportBox:
    """Bounds on quantity demanded at the tested budget."""

    q_min: float
    q_max: float

    def __post_init__(self):
        if self.q_min > self.q_max:
            raise ValueError("q_min exceeds q_max")


@dataclass(frozen=True)
class RationalityVerdict:
    passed: bool
    worst_margin: float
    witness: tuple = None
    tolerance: float = 1e-8

    def to_dict(self):
        return {
            "pass": bool(self.passed),
            "worst_margin": float(self.worst_margin),
            "witness_coeffs": list(self.witness) if self.witness is not None else [],
        }


def _verdict(worst, witness=None, tol=1e-8):
    return RationalityVerdict(passed=worst <= tol, worst_margin=float(worst),
                              witness=witness, tolerance=tol)


def monomial_translation(surface, degree, b):
    """Translation of x^degree: population mean of (dq/dp + q dq/dy) q^degree."""
    if degree + 2 > surface.max_order:
        raise OrderError("degree %d needs moment order %d, surface has %d"
                         % (degree, degree + 2, surface.max_order))
    n = degree + 1
    return Translation(degree, surface.d_price(n, b) / n
                       + surface.d_income(n + 1, b) / (n + 1))


def slutsky_moment_inequality(surface, n, b):
    """Left side of the n-th Slutsky moment inequality; <= 0 is necessary.

    Identical to the translation of the degree (n-1) monomial.
    """
    if n + 1 > surface.max_order:
        raise OrderError("needs moment order %d, surface has %d" % (n + 1, surface.max_order))
    return surface.d_price(n, b) / n + surface.d_income(n + 1, b) / (n + 1)


def translate_polynomial(coeffs, surface, b):
    """Translation of a polynomial sum a_i x^i, by linearity over monomials."""
    coeffs = list(coeffs)
    if len(coeffs) - 1 + 2 > surface.max_order:
        raise OrderError("polynomial degree %d needs moment order %d"
                         % (len(coeffs) - 1, len(coeffs) + 1))
    return float(sum(a * monomial_translation(surface, i, b).value
                     for i, a in enumerate(coeffs)))


def degree1_cone_test(surface, b, box, tol=1e-8):
    """Check the cone generators of degree <= 1 polynomials nonnegative on the box.

    Generators: 1, (x - q_min), (q_max - x), and x itself when the
    support is nonnegative.  All translations must be nonpositive.
    """
    if surface.max_order < 3:
        raise OrderError("degree-1 cone test needs moment orders up to 3")
    g0 = monomial_translation(surface, 0, b).value
    g1 = monomial_translation(surface, 1, b).value
    margins = [g0, g1 - box.q_min * g0, box.q_max * g0 - g1]
    if box.q_min >= 0.0:
        margins.append(g1)
    return _verdict(max(margins), tol=tol)


def _chebyshev_lobatto(lo, hi, n):
    """Chebyshev-spaced grid including both endpoints."""
    if hi <= lo:
        return np.array([lo])
    j = np.arange(n)
    x = np.cos(np.pi * j / (n - 1))
    return (lo + hi) / 2.0 + (hi - lo) / 2.0 * x[::-1]


def simplex_max(c, a_ub, b_ub, max_iter=20000, tol=1e-11):
    """Maximize c.x subject to a_ub x <= b_ub, x >= 0, with b_ub >= 0.

    Dense tableau simplex starting from the slack basis, with Bland's
    anti-cycling rule.  Returns (objective value, solution vector).
    """
    a_ub = np.asarray(a_ub, dtype=float)
    b_ub = np.asarray(b_ub, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = a_ub.shape
    if np.any(b_ub < -tol):
        raise SimplexError("slack basis start requires nonnegative right-hand sides")

    # tableau: [A | I | b], objective row holds reduced costs for max
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = a_ub
    tab[:m, n:n + m] = np.eye(m)
    tab[:m, -1] = b_ub
    tab[m, :n] = -c
    basis = list(range(n, n + m))

    for _ in range(max_iter):
        reduced = tab[m, :-1]
        candidates = np.nonzero(reduced < -tol)[0]
        if candidates.size == 0:
            x = np.zeros(n + m)
            for row, col in enumerate(basis):
                x[col] = tab[row, -1]
            return float(tab[m, -1]), x[:n]
        enter = int(candidates[0])  # Bland: smallest index
        col = tab[:m, enter]
        rows = np.nonzero(col > tol)[0]
        if rows.size == 0:
            raise SimplexError("LP unbounded; normalization constraint missing")
        ratios = tab[rows, -1] / col[rows]
        best = np.min(ratios)
        tied = rows[ratios <= best + tol]
        leave = int(min(tied, key=lambda r: basis[r]))  # Bland on ties
        tab[leave, :] /= tab[leave, enter]
        factors = tab[:, enter].copy()
        factors[leave] = 0.0
        tab -= np.outer(factors, tab[leave, :])
        basis[leave] = enter
    raise SimplexError("simplex failed to converge in %d pivots" % max_iter)


def lp_violation_search(surface, b, degree, box, grid_size=None, tol=1e-8):
    """Search for a polynomial nonnegative on the support with positive translation.

    Maximizes the translation over polynomials of the given degree,
    constrained to be nonnegative at Chebyshev-spaced grid points in the
    support box and normalized by the l1 norm of the coefficients.  A
    positive optimum beyond tolerance is a rationalizability violation
    and the maximizing coefficients are returned as a witness.
    """
    if degree + 2 > surface.max_order:
        raise OrderError("degree %d needs moment order %d, surface has %d"
                         % (degree, degree + 2, surface.max_order))
    if grid_size is None:
        grid_size = 10 * (degree + 1)
    if grid_size < 10 * (degree + 1):
        raise ValueError("grid must have at least 10 * (degree + 1) points")

    gammas = np.array([monomial_translation(surface, i, b).value
                       for i in range(degree + 1)])
    grid = _chebyshev_lobatto(box.q_min, box.q_max, grid_size)
    vand = np.vander(grid, degree + 1, increasing=True)  # rows: [1, x, x^2, ...]

    # variables: positive and negative parts of each coefficient
    n_var = degree + 1
    c = np.concatenate([gammas, -gammas])
    a_pos = np.hstack([-vand, vand])          # -(sum a_i x^i) <= 0
    a_norm = np.ones((1, 2 * n_var))          # l1 normalization
    a_ub = np.vstack([a_pos, a_norm])
    b_ub = np.concatenate([np.zeros(len(grid)), [1.0]])

    value, x = simplex_max(c, a_ub, b_ub)
    coeffs = tuple(x[:n_var] - x[n_var:])
    witness = coeffs if value > tol else None
    return _verdict(value, witness=witness, tol=tol)
