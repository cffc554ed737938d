"""Shared domain types: budgets, price changes, moment surfaces, numeric derivatives.

A moment surface is the central abstraction: an evaluatable map
``(n, budget) -> E[q^n | budget]`` together with its price and income
partials.  Surfaces are built either analytically from synthetic
populations (see :mod:`welfare_moments.oracle`) or from fitted series
regressions (see :mod:`welfare_moments.estimation`); every welfare
formula consumes only this interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """A budget (or a perturbation of one) left the positive price/income domain."""


class OrderError(ValueError):
    """A moment of higher order than the surface carries was requested."""


class ShapeError(ValueError):
    """Vector dimensions do not line up, or multigood data is missing."""


@dataclass(frozen=True)
class Budget:
    """A price vector and an income level; the conditioning point for all moments."""

    prices: tuple
    income: float

    def __post_init__(self):
        prices = tuple(float(p) for p in np.atleast_1d(self.prices))
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "income", float(self.income))
        if len(prices) < 1:
            raise ShapeError("budget needs at least one price")
        if any(not math.isfinite(p) or p <= 0.0 for p in prices):
            raise DomainError("prices must be strictly positive and finite")
        if not math.isfinite(self.income) or self.income <= 0.0:
            raise DomainError("income must be strictly positive and finite")

    @property
    def k(self):
        return len(self.prices)

    def price(self, j=0):
        return self.prices[j]

    def with_price(self, j, value):
        prices = list(self.prices)
        prices[j] = value
        return Budget(tuple(prices), self.income)

    def with_income(self, value):
        return Budget(self.prices, value)


@dataclass(frozen=True)
class PriceChange:
    """An ordered pair of budgets with common income; delta = to.prices - from.prices."""

    start: Budget
    end: Budget

    def __post_init__(self):
        if self.start.k != self.end.k:
            raise ShapeError("price change endpoints differ in dimension")
        if abs(self.start.income - self.end.income) > 1e-12 * max(1.0, self.start.income):
            raise ValueError("price change must hold income fixed")

    @classmethod
    def scalar(cls, p0, p1, y):
        return cls(Budget((p0,), y), Budget((p1,), y))

    @property
    def delta(self):
        return np.asarray(self.end.prices) - np.asarray(self.start.prices)

    @property
    def income(self):
        return self.start.income

    def scalar_delta(self, j=0):
        """Return delta for coordinate j, requiring every other coordinate fixed."""
        d = self.delta
        others = np.delete(d, j)
        if others.size and np.max(np.abs(others)) > 1e-12:
            raise ShapeError("only coordinate %d may move for a scalar operation" % j)
        return float(d[j])

    def path_budget(self, t):
        """Budget on the linear path p(t) = p0 + t * delta."""
        p = np.asarray(self.start.prices) + t * self.delta
        if np.any(p <= 0.0):
            raise DomainError("price path leaves the positive domain at t=%g" % t)
        return Budget(tuple(p), self.income)


@dataclass(frozen=True)
class DerivativeScheme:
    """Configuration for central-difference partials with optional Richardson step."""

    mode: str = "central-difference"
    step: float = 1e-5
    richardson: bool = True

    def __post_init__(self):
        if self.mode not in ("analytic", "central-difference"):
            raise ValueError("unknown derivative mode %r" % (self.mode,))
        if not (1e-12 < self.step < 1e-2):
            raise ValueError("step must lie in (1e-12, 1e-2)")


DEFAULT_SCHEME = DerivativeScheme()


@dataclass(frozen=True)
class MultigoodMoments:
    """Vector/matrix moment callables for many-good analyses.

    mean_vector(b) -> (k,), jacobian(b) -> (k, k) price Jacobian of the mean,
    second_matrix(b) -> (k, k) second raw moment E[q q^T], and
    d_income_second(b) -> (k, k) its income derivative.
    """

    mean_vector: object
    jacobian: object
    second_matrix: object
    d_income_second: object


class MomentSurface:
    """Evaluatable conditional moments of demand for one modeled good.

    ``moment(n, b)`` returns the n-th raw moment of quantity demanded at
    budget ``b``; ``d_price`` and ``d_income`` return its partials.  When
    no analytic partials are supplied they are computed by Richardson
    central differences on ``moment``.
    """

    def __init__(self, max_order, moment_fn, d_price_fn=None, d_income_fn=None,
                 good=0, scheme=None, multigood=None):
        if max_order < 1:
            raise OrderError("max_order must be >= 1")
        self.max_order = int(max_order)
        self.good = int(good)
        self._moment = moment_fn
        self._d_price = d_price_fn
        self._d_income = d_income_fn
        self.scheme = scheme or DEFAULT_SCHEME
        self.multigood = multigood

    def _check_order(self, n):
        if not 1 <= n <= self.max_order:
            raise OrderError("order %d outside 1..%d" % (n, self.max_order))

    def moment(self, n, b):
        self._check_order(n)
        return float(self._moment(n, b))

    def d_price(self, n, b, j=None):
        self._check_order(n)
        j = self.good if j is None else j
        if self._d_price is not None:
            return float(self._d_price(n, b, j))
        return numeric_partial(self, n, b, "price", self.scheme, j=j)

    def d_income(self, n, b):
        self._check_order(n)
        if self._d_income is not None:
            return float(self._d_income(n, b))
        return numeric_partial(self, n, b, "income", self.scheme)

    @property
    def has_multigood(self):
        return self.multigood is not None

    def _mg(self):
        if self.multigood is None:
            raise ShapeError("surface carries no multigood moments")
        return self.multigood

    def mean_vector(self, b):
        return np.asarray(self._mg().mean_vector(b), dtype=float)

    def jacobian(self, b):
        return np.asarray(self._mg().jacobian(b), dtype=float)

    def second_matrix(self, b):
        return np.asarray(self._mg().second_matrix(b), dtype=float)

    def d_income_second(self, b):
        return np.asarray(self._mg().d_income_second(b), dtype=float)


class ShareMomentSurface:
    """Budget-share analogue of :class:`MomentSurface`, in log-price/log-income space.

    ``moment(n, b)`` is the n-th raw moment of the budget share of the
    modeled good; ``d_logp``/``d_logy`` are derivatives in the log of the
    own price and of income.
    """

    def __init__(self, max_order, moment_fn, d_logp_fn=None, d_logy_fn=None,
                 good=0, scheme=None):
        self.max_order = int(max_order)
        self.good = int(good)
        self._moment = moment_fn
        self._d_logp = d_logp_fn
        self._d_logy = d_logy_fn
        self.scheme = scheme or DEFAULT_SCHEME

    def _check_order(self, n):
        if not 1 <= n <= self.max_order:
            raise OrderError("order %d outside 1..%d" % (n, self.max_order))

    def moment(self, n, b):
        self._check_order(n)
        return float(self._moment(n, b))

    def d_logp(self, n, b, j=None):
        self._check_order(n)
        j = self.good if j is None else j
        if self._d_logp is not None:
            return float(self._d_logp(n, b, j))
        p = b.price(j)
        return p * _central(lambda x: self._moment(n, b.with_price(j, x)), p, self.scheme)

    def d_logy(self, n, b):
        self._check_order(n)
        if self._d_logy is not None:
            return float(self._d_logy(n, b))
        y = b.income
        return y * _central(lambda x: self._moment(n, b.with_income(x)), y, self.scheme)


def _central(f, x, scheme):
    """Central difference with relative step; Richardson-combined when enabled."""
    h = scheme.step * max(1.0, abs(x))
    if x - h <= 0.0:
        raise DomainError("perturbation leaves the positive domain at %g" % x)

    def diff(step):
        return (f(x + step) - f(x - step)) / (2.0 * step)

    d1 = diff(h)
    if not scheme.richardson:
        return float(d1)
    d2 = diff(h / 2.0)
    return float((4.0 * d2 - d1) / 3.0)


def numeric_partial(surface, n, b, var, scheme=None, j=0):
    """Central-difference partial of a moment surface in one price or in income."""
    scheme = scheme or DEFAULT_SCHEME
    if n > surface.max_order:
        raise OrderError("order %d exceeds surface max_order %d" % (n, surface.max_order))
    if var == "income":
        return _central(lambda y: surface.moment(n, b.with_income(y)), b.income, scheme)
    if var == "price":
        return _central(lambda p: surface.moment(n, b.with_price(j, p)), b.price(j), scheme)
    raise ValueError("var must be 'price' or 'income', got %r" % (var,))


def shares_to_quantities(share_surface, b):
    """Convert share-moment values and log-derivatives into quantity moments.

    The modeled good's quantity moment is M_n = (y/p)^n W_n; the partials
    follow from the chain rule.  The income derivative of the mean is the
    direct differentiation of M1 = y W1 / p, i.e. (1/p)(W1 + dW1/dlogy);
    this is the only form with the dimensions of quantity per unit income.
    Requires share orders up to 3.
    """
    j = share_surface.good
    p = b.price(j)
    y = b.income
    if p <= 0.0 or y <= 0.0:
        raise DomainError("share conversion needs positive own price and income")
    w1 = share_surface.moment(1, b)
    w2 = share_surface.moment(2, b)
    w3 = share_surface.moment(3, b)
    dlp_w1 = share_surface.d_logp(1, b)
    dlp_w2 = share_surface.d_logp(2, b)
    dly_w1 = share_surface.d_logy(1, b)
    dly_w2 = share_surface.d_logy(2, b)
    dly_w3 = share_surface.d_logy(3, b)
    r = y / p
    return {
        "M1": r * w1,
        "M2": r ** 2 * w2,
        "M3": r ** 3 * w3,
        "D_p_M1": (y / p ** 2) * (dlp_w1 - w1),
        "D_y_M1": (1.0 / p) * (w1 + dly_w1),
        "D_p_M2": (y ** 2 / p ** 3) * (dlp_w2 - 2.0 * w2),
        "D_y_M2": (y / p ** 2) * (dly_w2 + 2.0 * w2),
        "D_y_M3": (y ** 2 / p ** 3) * (dly_w3 + 3.0 * w3),
    }


def quantity_surface_from_shares(share_surface, scheme=None):
    """Wrap a share surface as a quantity-space :class:`MomentSurface`.

    Partials in the own price and income are exact images of the share
    surface's log-derivatives; cross-price partials fall back to the
    share surface's own cross log-derivatives.
    """
    j = share_surface.good

    def mom(n, b):
        return (b.income / b.price(j)) ** n * share_surface.moment(n, b)

    def d_price(n, b, jj):
        p = b.price(j)
        y = b.income
        if jj == j:
            return (y ** n / p ** (n + 1)) * (share_surface.d_logp(n, b, jj) - n * share_surface.moment(n, b))
        return (y / p) ** n * share_surface.d_logp(n, b, jj) / b.price(jj)

    def d_income(n, b):
        p = b.price(j)
        y = b.income
        return (y ** (n - 1) / p ** n) * (share_surface.d_logy(n, b) + n * share_surface.moment(n, b))

    return MomentSurface(share_surface.max_order, mom, d_price, d_income,
                         good=j, scheme=scheme)
