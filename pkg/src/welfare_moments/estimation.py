"""Semiparametric estimation of budget-share moments from cross-sections.

The pipeline mirrors standard practice for household budget surveys:
an OLS first stage regresses log expenditure on a log income instrument
and log prices (control function for endogenous expenditure), then each
share moment E[w^n | b] is fitted as the exponential of a polynomial in
log prices and log expenditure by nonlinear least squares, which keeps
fitted moments positive by construction.  Analytic derivatives of the
exponential-polynomial give the moment partials consumed by the welfare
formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    MomentSurface,
    OrderError,
    ShareMomentSurface,
    quantity_surface_from_shares,
)


class SingularDesignError(ValueError):
    """The regression design matrix is rank deficient."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("collinear design columns: %s" % ", ".join(self.columns))


class DegenerateDataError(ValueError):
    """Share data cannot support the requested fit."""


class FitError(RuntimeError):
    """Gauss-Newton failed to converge; carries the last iterate."""

    def __init__(self, message, theta=None, gradient_norm=None):
        super().__init__(message)
        self.theta = theta
        self.gradient_norm = gradient_norm


class BootstrapInstabilityError(RuntimeError):
    def __init__(self, failures, total):
        self.failures = failures
        super().__init__("statistic failed on %d of %d resamples" % (failures, total))


@dataclass(frozen=True)
class Dataset:
    """Cross-section of budget shares, log prices, log expenditure, log instrument."""

    goods: tuple
    shares: np.ndarray
    log_prices: np.ndarray
    log_y: np.ndarray
    log_z: np.ndarray

    def __post_init__(self):
        n = len(self.log_y)
        if self.shares.shape != (n, len(self.goods)):
            raise ValueError("share matrix shape mismatch")
        if self.log_prices.shape != (n, len(self.goods)):
            raise ValueError("log price matrix shape mismatch")
        if len(self.log_z) != n:
            raise ValueError("instrument length mismatch")

    @property
    def n(self):
        return len(self.log_y)

    def good_index(self, good):
        if isinstance(good, str):
            return self.goods.index(good)
        return int(good)

    def take(self, indices):
        idx = np.asarray(indices)
        return Dataset(self.goods, self.shares[idx], self.log_prices[idx],
                       self.log_y[idx], self.log_z[idx])


@dataclass(frozen=True)
class BasisSpec:
    price_degree: int = 3
    income_degree: int = 3
    include_control: bool = True

    def __post_init__(self):
        if self.price_degree < 1 or self.income_degree < 1:
            raise ValueError("polynomial degrees must be >= 1")


@dataclass(frozen=True)
class FirstStageFit:
    coefficients: dict
    residuals: np.ndarray
    dropped: tuple = ()


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 200
    level: float = 0.90
    seed: int = 0

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("need at least 2 bootstrap replications")
        if not 0.0 < self.level < 1.0:
            raise ValueError("confidence level must lie in (0, 1)")


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    lower: float
    upper: float


@dataclass
class MomentFit:
    """Fitted exponential-polynomial for one good and moment order."""

    good: str
    good_index: int
    order: int
    basis: BasisSpec
    n_goods: int
    theta: np.ndarray
    rss: float
    iters: int

    @property
    def alpha(self):
        return float(self.theta[0])

    @property
    def beta(self):
        p = self.basis.price_degree
        out = []
        for j in range(self.n_goods):
            start = 1 + j * p
            out.append([float(v) for v in self.theta[start:start + p]])
        return out

    @property
    def gamma(self):
        start = 1 + self.n_goods * self.basis.price_degree
        return [float(v) for v in self.theta[start:start + self.basis.income_degree]]

    @property
    def control(self):
        if not self.basis.include_control:
            return None
        return float(self.theta[-1])

    def to_dict(self):
        return {
            "good": self.good,
            "order": self.order,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "control": self.control,
            "rss": self.rss,
            "iters": self.iters,
        }


def _basis_labels(goods, spec):
    labels = ["const"]
    for g in goods:
        labels += ["log_p_%s^%d" % (g, s) for s in range(1, spec.price_degree + 1)]
    labels += ["log_y^%d" % s for s in range(1, spec.income_degree + 1)]
    if spec.include_control:
        labels.append("control")
    return labels


def _basis_matrix(log_prices, log_y, control, spec):
    n = len(log_y)
    cols = [np.ones(n)]
    for j in range(log_prices.shape[1]):
        for s in range(1, spec.price_degree + 1):
            cols.append(log_prices[:, j] ** s)
    for s in range(1, spec.income_degree + 1):
        cols.append(log_y ** s)
    if spec.include_control:
        cols.append(control if control is not None else np.zeros(n))
    return np.column_stack(cols)


def _collinear_columns(x, labels):
    """Name columns that do not add rank, scanning left to right."""
    bad = []
    kept = np.empty((x.shape[0], 0))
    for i in range(x.shape[1]):
        cand = np.column_stack([kept, x[:, i]])
        if np.linalg.matrix_rank(cand) > kept.shape[1]:
            kept = cand
        else:
            bad.append(labels[i])
    return bad


def first_stage(ds):
    """OLS of log expenditure on intercept, log instrument, and log prices.

    Zero-variance price columns are dropped with coefficient zero; a rank
    deficient design raises SingularDesignError naming the columns.
    """
    labels = ["const", "log_z"] + ["log_p_%s" % g for g in ds.goods]
    x = np.column_stack([np.ones(ds.n), ds.log_z, ds.log_prices])
    keep, dropped = [0], []
    for i in range(1, x.shape[1]):
        if np.std(x[:, i]) < 1e-12:
            dropped.append(labels[i])
        else:
            keep.append(i)
    design = x[:, keep]
    if ds.n <= design.shape[1] or np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularDesignError(_collinear_columns(x, labels) or labels[1:])
    coef, *_ = np.linalg.lstsq(design, ds.log_y, rcond=None)
    residuals = ds.log_y - design @ coef
    full = dict.fromkeys(labels, 0.0)
    for pos, i in enumerate(keep):
        full[labels[i]] = float(coef[pos])
    return FirstStageFit(coefficients=full, residuals=residuals, dropped=tuple(dropped))


def fit_moment_surface(ds, good, order, basis=None, fs=None,
                       max_iter=200, rel_tol=1e-10):
    """Fit E[w^n | b] = exp(basis . theta) by Gauss-Newton with line search.

    Initialization comes from OLS of log(w^n + 1e-6) on the basis over
    rows with positive shares; zero-share rows stay in the nonlinear fit.
    """
    basis = basis or BasisSpec()
    k = ds.good_index(good)
    w = ds.shares[:, k]
    if np.all(w == 0.0):
        raise DegenerateDataError("all shares are zero for good %r" % (good,))
    pos_rate = float(np.mean(w > 0.0))
    if pos_rate < 0.95:
        raise DegenerateDataError(
            "only %.1f%% of shares are strictly positive for good %r" % (100 * pos_rate, good))
    control = None
    if basis.include_control:
        if fs is None:
            raise ValueError("control-function basis needs a first-stage fit")
        control = fs.residuals
    x_full = _basis_matrix(ds.log_prices, ds.log_y, control, basis)
    labels = _basis_labels(ds.goods, basis)

    # fixed (zero-variance) columns are pinned at coefficient zero
    active = [0] + [i for i in range(1, x_full.shape[1]) if np.std(x_full[:, i]) >= 1e-12]
    x = x_full[:, active]
    target = w ** order

    pos = w > 0.0
    theta_active, *_ = np.linalg.lstsq(x[pos], np.log(target[pos] + 1e-6), rcond=None)

    def predict(th):
        return np.exp(np.clip(x @ th, -700.0, 700.0))

    pred = predict(theta_active)
    rss = float(np.sum((target - pred) ** 2))
    iters = 0
    for iters in range(1, max_iter + 1):
        jac = pred[:, None] * x
        resid = target - pred
        grad_norm = float(np.linalg.norm(jac.T @ resid))
        step, *_ = np.linalg.lstsq(jac, resid, rcond=None)
        scale = 1.0
        improved = False
        for _ in range(40):
            cand = theta_active + scale * step
            cand_pred = predict(cand)
            cand_rss = float(np.sum((target - cand_pred) ** 2))
            if np.isfinite(cand_rss) and cand_rss <= rss:
                improved = True
                break
            scale /= 2.0
        if not improved:
            break
        rel_change = (rss - cand_rss) / max(rss, 1e-300)
        theta_active, pred, rss = cand, cand_pred, cand_rss
        if rel_change < rel_tol:
            break
    else:
        raise FitError("Gauss-Newton did not converge in %d iterations" % max_iter,
                       theta=theta_active, gradient_norm=grad_norm)

    theta = np.zeros(x_full.shape[1])
    theta[active] = theta_active
    name = good if isinstance(good, str) else ds.goods[k]
    return MomentFit(good=name, good_index=k, order=order, basis=basis,
                     n_goods=len(ds.goods), theta=theta, rss=rss, iters=iters)


@dataclass(frozen=True)
class FittedSurface:
    """Share- and quantity-space views of a set of fitted moment equations."""

    share_surface: ShareMomentSurface
    moment_surface: MomentSurface
    fits: tuple


def fitted_surface(fits, scheme=None):
    """Assemble fitted moment equations (orders 1..max) into moment surfaces.

    Counterfactual budgets evaluate the control residual at zero, its
    conditional mean.  Derivatives are analytic from the
    exponential-polynomial form.
    """
    fits = sorted(fits, key=lambda f: f.order)
    if not fits:
        raise OrderError("no fits supplied")
    orders = [f.order for f in fits]
    if orders != list(range(1, len(fits) + 1)):
        raise OrderError("need consecutive moment orders starting at 1, got %s" % orders)
    good_idx = fits[0].good_index
    if any(f.good_index != good_idx for f in fits):
        raise ValueError("fits mix different goods")
    by_order = {f.order: f for f in fits}
    max_order = len(fits)
    spec = fits[0].basis
    n_goods = fits[0].n_goods

    def _row(b):
        if b.k != n_goods:
            raise ValueError("budget has %d prices, basis expects %d" % (b.k, n_goods))
        lp = np.log(np.asarray(b.prices, dtype=float)).reshape(1, -1)
        ly = np.array([np.log(b.income)])
        return _basis_matrix(lp, ly, np.zeros(1), spec)[0]

    def w_mom(n, b):
        fit = by_order.get(n)
        if fit is None:
            raise OrderError("no fit for order %d" % n)
        return float(np.exp(np.dot(_row(b), fit.theta)))

    def d_logp(n, b, j):
        fit = by_order[n]
        lp = np.log(b.price(j))
        beta = fit.beta[j]
        slope = sum((s + 1) * beta[s] * lp ** s for s in range(len(beta)))
        return w_mom(n, b) * slope

    def d_logy(n, b):
        fit = by_order[n]
        ly = np.log(b.income)
        gamma = fit.gamma
        slope = sum((s + 1) * gamma[s] * ly ** s for s in range(len(gamma)))
        return w_mom(n, b) * slope

    share = ShareMomentSurface(max_order, w_mom, d_logp, d_logy, good=good_idx)
    quantity = quantity_surface_from_shares(share, scheme=scheme)
    return FittedSurface(share_surface=share, moment_surface=quantity,
                         fits=tuple(fits))


def bootstrap(ds, statistic, cfg):
    """Percentile bootstrap over row resamples; deterministic given the seed.

    Each replicate derives its RNG stream from (seed, replicate index),
    so parallel and serial evaluation orders agree.
    """
    point = float(statistic(ds))
    values, failures = [], 0
    for rep in range(cfg.replications):
        rng = np.random.default_rng([cfg.seed, rep])
        idx = rng.integers(0, ds.n, size=ds.n)
        try:
            values.append(float(statistic(ds.take(idx))))
        except Exception:
            failures += 1
    if failures > 0.10 * cfg.replications:
        raise BootstrapInstabilityError(failures, cfg.replications)
    tail = (1.0 - cfg.level) / 2.0
    lower, upper = np.quantile(values, [tail, 1.0 - tail])
    return BootstrapResult(point=point, lower=float(lower), upper=float(upper))
