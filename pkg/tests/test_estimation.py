import numpy as np
import pytest

from welfare_moments import (
    BasisSpec,
    BootstrapConfig,
    Budget,
    Dataset,
    L0,
    PriceChange,
    bootstrap,
    cv_moment_local,
    first_stage,
    fit_moment_surface,
    fitted_surface,
    population_cv,
    shares_to_quantities,
)
from welfare_moments.estimation import (
    BootstrapInstabilityError,
    DegenerateDataError,
    SingularDesignError,
)
from welfare_moments.synthetic import default_planted_model, population_cross_section

NO_CONTROL = BasisSpec(include_control=False)


def constant_dataset(n=400, w=0.4, seed=0):
    rng = np.random.default_rng(seed)
    lz = rng.uniform(0.0, 1.0, n)
    return Dataset(("q",), np.full((n, 1), w), np.zeros((n, 1)), 1.0 + 0.5 * lz, lz)


def test_first_stage_exact_relation():
    ds = constant_dataset()
    fs = first_stage(ds)
    assert fs.coefficients["const"] == pytest.approx(1.0, abs=1e-10)
    assert fs.coefficients["log_z"] == pytest.approx(0.5, abs=1e-10)
    assert fs.coefficients["log_p_q"] == 0.0
    assert "log_p_q" in fs.dropped
    assert np.max(np.abs(fs.residuals)) < 1e-10


def test_first_stage_noise_consistency():
    rng = np.random.default_rng(8)
    n = 10000
    lz = rng.uniform(0.0, 2.0, n)
    lp = rng.uniform(-0.3, 0.3, (n, 1))
    noise = rng.normal(0.0, 0.1, n)
    ly = 0.7 + 0.5 * lz + 0.2 * lp[:, 0] + noise
    ds = Dataset(("q",), np.full((n, 1), 0.4), lp, ly, lz)
    fs = first_stage(ds)
    assert fs.coefficients["log_z"] == pytest.approx(0.5, abs=0.01)
    # oracle: direct normal-equation solve
    x = np.column_stack([np.ones(n), lz, lp[:, 0]])
    direct = np.linalg.solve(x.T @ x, x.T @ ly)
    assert fs.coefficients["log_z"] == pytest.approx(direct[1], abs=1e-10)
    assert abs(np.mean(fs.residuals)) < 1e-10


def test_first_stage_singular_design():
    ds = Dataset(("a", "b", "c"), np.full((2, 3), 0.2),
                 np.arange(6, dtype=float).reshape(2, 3),
                 np.array([1.0, 2.0]), np.array([0.5, 1.5]))
    with pytest.raises(SingularDesignError):
        first_stage(ds)


def test_fit_constant_shares():
    ds = constant_dataset()
    fit1 = fit_moment_surface(ds, "q", 1, NO_CONTROL)
    assert fit1.alpha == pytest.approx(np.log(0.4), abs=1e-8)
    slopes = [abs(v) for row in fit1.beta for v in row] + [abs(v) for v in fit1.gamma]
    assert max(slopes) < 1e-8
    fit2 = fit_moment_surface(ds, "q", 2, NO_CONTROL)
    assert fit2.alpha == pytest.approx(np.log(0.16), abs=1e-8)


def test_fit_degenerate_shares():
    ds = constant_dataset(w=0.0)
    with pytest.raises(DegenerateDataError):
        fit_moment_surface(ds, "q", 1, NO_CONTROL)


def test_fit_mostly_zero_shares():
    rng = np.random.default_rng(4)
    n = 400
    w = np.where(rng.uniform(size=n) < 0.5, 0.0, 0.4)
    ds = Dataset(("q",), w.reshape(-1, 1), np.zeros((n, 1)),
                 rng.uniform(0.5, 1.5, n), rng.uniform(0.5, 1.5, n))
    with pytest.raises(DegenerateDataError):
        fit_moment_surface(ds, "q", 1, NO_CONTROL)


def test_fit_planted_recovery():
    model = default_planted_model()
    ds = model.sample(20000, seed=7)
    fit = fit_moment_surface(ds, "q", 1, model.basis)
    assert np.max(np.abs(fit.theta - model.order_theta(1))) < 0.05


def test_fit_to_dict_fields():
    fit = fit_moment_surface(constant_dataset(), "q", 1, NO_CONTROL)
    payload = fit.to_dict()
    assert sorted(payload) == ["alpha", "beta", "control", "gamma", "good",
                               "iters", "order", "rss"]
    assert payload["control"] is None
    assert payload["good"] == "q"


def test_fitted_surface_constant_derivatives():
    ds = constant_dataset()
    fits = [fit_moment_surface(ds, "q", n, NO_CONTROL) for n in (1, 2, 3)]
    fs = fitted_surface(fits)
    b = Budget((1.0,), 2.7)
    assert fs.share_surface.d_logp(1, b) == pytest.approx(0.0, abs=1e-8)
    assert fs.share_surface.d_logy(1, b) == pytest.approx(0.0, abs=1e-8)
    assert fs.share_surface.moment(1, b) == pytest.approx(0.4, abs=1e-6)


def test_fitted_surface_missing_order():
    ds = constant_dataset()
    fit1 = fit_moment_surface(ds, "q", 1, NO_CONTROL)
    fit3 = fit_moment_surface(ds, "q", 3, NO_CONTROL)
    from welfare_moments import OrderError
    with pytest.raises(OrderError):
        fitted_surface([fit1, fit3])


def test_fitted_surface_order_overflow():
    ds = constant_dataset()
    fits = [fit_moment_surface(ds, "q", n, NO_CONTROL) for n in (1, 2, 3)]
    fs = fitted_surface(fits)
    from welfare_moments import OrderError
    with pytest.raises(OrderError):
        fs.share_surface.moment(4, Budget((1.0,), 2.0))


def test_fitted_surface_partials_within_one_percent():
    model = default_planted_model()
    ds = model.sample(20000, seed=7)
    fits = [fit_moment_surface(ds, "q", n, model.basis) for n in (1, 2, 3)]
    fs = fitted_surface(fits)
    b_med = Budget((float(np.exp(np.median(ds.log_prices))),),
                   float(np.exp(np.median(ds.log_y))))
    got = shares_to_quantities(fs.share_surface, b_med)
    want = shares_to_quantities(model.share_surface(), b_med)
    for key, value in want.items():
        assert got[key] == pytest.approx(value, rel=0.01)


def test_fitted_surface_positivity():
    model = default_planted_model()
    ds = model.sample(5000, seed=19)
    fits = [fit_moment_surface(ds, "q", n, model.basis) for n in (1, 2, 3)]
    fs = fitted_surface(fits)
    rng = np.random.default_rng(2)
    for _ in range(50):
        b = Budget((rng.uniform(0.7, 1.5),), rng.uniform(1.6, 6.0))
        for n in (1, 2, 3):
            assert fs.share_surface.moment(n, b) > 0.0


def test_control_function_reduces_income_derivative_bias():
    model = default_planted_model()
    ds = model.sample(20000, seed=11, endogeneity=0.6, z_lo=2.0, z_hi=4.5,
                      income_shock=0.2)
    b_med = Budget((float(np.exp(np.median(ds.log_prices))),),
                   float(np.exp(np.median(ds.log_y))))
    truth = model.share_surface().d_logy(1, b_med)
    fs = first_stage(ds)
    with_control = fitted_surface(
        [fit_moment_surface(ds, "q", n, BasisSpec(3, 3, True), fs) for n in (1, 2, 3)])
    without = fitted_surface(
        [fit_moment_surface(ds, "q", n, BasisSpec(3, 3, False)) for n in (1, 2, 3)])
    bias_with = abs(with_control.share_surface.d_logy(1, b_med) - truth)
    bias_without = abs(without.share_surface.d_logy(1, b_med) - truth)
    assert bias_with <= 0.5 * bias_without


def test_plant_and_recover_cv():
    model = default_planted_model()
    ds = model.sample(20000, seed=7)
    fits = [fit_moment_surface(ds, "q", n, model.basis) for n in (1, 2, 3)]
    fs = fitted_surface(fits)
    pc = PriceChange.scalar(1.0, 1.05, 3.0)
    recovered = cv_moment_local(fs.moment_surface, 1, pc)
    truth = cv_moment_local(model.moment_surface(), 1, pc)
    assert recovered == pytest.approx(truth, rel=0.01)


def test_l0_pipeline_recovers_exact_cv():
    ds = population_cross_section(L0, 20000, seed=3)
    fs0 = first_stage(ds)
    fits = [fit_moment_surface(ds, "q", n, BasisSpec(), fs0) for n in (1, 2, 3)]
    surface = fitted_surface(fits).moment_surface
    pc = PriceChange.scalar(1.0, 1.05, 4.0)
    exact = population_cv(L0, pc).mean
    assert cv_moment_local(surface, 1, pc) == pytest.approx(exact, rel=0.01)


def test_bootstrap_constant_statistic():
    ds = constant_dataset()
    res = bootstrap(ds, lambda d: 3.0, BootstrapConfig(50, 0.90, seed=1))
    assert (res.point, res.lower, res.upper) == (3.0, 3.0, 3.0)


def test_bootstrap_mean_interval_width():
    rng = np.random.default_rng(5)
    n = 10000
    col = rng.uniform(0.0, 1.0, n)
    ds = Dataset(("q",), np.full((n, 1), 0.5), np.zeros((n, 1)), col, col)
    res = bootstrap(ds, lambda d: float(np.mean(d.log_y)),
                    BootstrapConfig(200, 0.90, seed=42))
    width = res.upper - res.lower
    assert 0.008 < width < 0.011


def test_bootstrap_deterministic():
    ds = constant_dataset(seed=3)
    cfg = BootstrapConfig(100, 0.90, seed=123)
    stat = lambda d: float(np.mean(d.log_z))
    first = bootstrap(ds, stat, cfg)
    second = bootstrap(ds, stat, cfg)
    assert first == second


def test_bootstrap_instability():
    ds = constant_dataset()

    def fragile(d):
        # resamples contain duplicated rows almost surely; the full sample not
        if len(np.unique(d.log_z)) < d.n:
            raise RuntimeError("duplicate rows")
        return 1.0

    with pytest.raises(BootstrapInstabilityError):
        bootstrap(ds, fragile, BootstrapConfig(20, 0.90, seed=0))


def test_basis_and_bootstrap_validation():
    with pytest.raises(ValueError):
        BasisSpec(price_degree=0)
    with pytest.raises(ValueError):
        BootstrapConfig(replications=1)
    with pytest.raises(ValueError):
        BootstrapConfig(level=1.5)
