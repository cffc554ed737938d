"""Robust welfare effects of price changes from cross-sectional demand moments."""

from .core import (
    Budget,
    DerivativeScheme,
    DomainError,
    MomentSurface,
    MultigoodMoments,
    OrderError,
    PriceChange,
    ShapeError,
    ShareMomentSurface,
    numeric_partial,
    quantity_surface_from_shares,
    shares_to_quantities,
)
from .oracle import (
    B_STAR,
    CobbDouglasPopulation,
    DemandClosure,
    L0,
    LinearHeteroPopulation,
    LinearTypeMixture,
    OdeConfig,
    Q0,
    QuantileCounterexamplePopulation,
    aggregate_expenditure,
    counterexample_discrepancy,
    cv_constant_income_effect,
    demand_support,
    exact_cv_type,
    exact_moment,
    income_effect_moment,
    population_cv,
    share_surface_from_population,
    surface_from_population,
)
from .welfare import (
    ChebyshevBounds,
    QuadratureRule,
    WelfareReport,
    build_report,
    chebyshev_bounds,
    compensated_jacobian_multigood,
    compensated_moment_fo,
    compensated_share_moment,
    cv_decompose,
    cv_first_order,
    cv_mean_multigood,
    cv_moment_local,
    cv_path,
    cv_ra,
    cv_variance,
    hn_bounds_local,
    hn_bounds_path,
    price_index,
    price_index_decompose,
    tax_deadweight,
)
from .rationality import (
    RationalityVerdict,
    SupportBox,
    degree1_cone_test,
    lp_violation_search,
    monomial_translation,
    slutsky_moment_inequality,
    translate_polynomial,
)
from .estimation import (
    BasisSpec,
    BootstrapConfig,
    Dataset,
    FirstStageFit,
    MomentFit,
    bootstrap,
    first_stage,
    fit_moment_surface,
    fitted_surface,
)

__version__ = "0.1.0"
