"""Poisson approximation toolkit for functionals of Poisson point processes.

The package combines exact Chen-Stein arithmetic on the integers with
Malliavin-type difference operators on configuration space.  The flagship
application is the Poisson limit of edge counts in sparse stationary
geometric graphs, where every term of the explicit total-variation bound
is estimated by reproducible Monte Carlo.
"""

from .stein import (
    IntegerPmf,
    SteinSolution,
    magic_factors,
    poisson_pmf,
    stein_magic_bounds,
    stein_solve,
    truncate_poisson,
    tv_exact,
    tv_empirical,
)
from .points import (
    PointConfiguration,
    RngStream,
    Window,
    add_point,
    count_in,
    sample_process,
)
from .graphs import (
    CalibrationError,
    ConnectionRule,
    OccupationReport,
    annulus,
    calibrate_delta,
    campbell_mean,
    custom_rule,
    degree,
    edge_count,
    edge_count_chaos,
    gilbert,
    occupation,
    scaled_rule,
)
from .chaos import (
    DiscretizedKernel,
    DiscretizedSpace,
    FiniteChaosFunctional,
    FirstOrderKernel,
    SecondOrderKernel,
    contract,
    eval_I1,
    eval_I2,
    fubini_check,
    perturbation_diagnostics,
    poisson_limit_conditions,
    product_formula_terms,
    symmetrize,
)
from .malliavin import (
    Functional,
    carre_du_champ,
    count_functional,
    diff,
    diff_chaos,
    edge_functional,
    neg_dlinv,
)
from .bounds import (
    BoundReport,
    RateRow,
    XiReport,
    estimate_bound,
    rate_experiment,
    variance_check,
    xi_estimates,
)

__version__ = "0.1.0"
