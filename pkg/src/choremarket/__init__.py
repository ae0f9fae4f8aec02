"""Tatonnement price dynamics and equilibrium analysis for chore markets."""

from .demand import (
    MPBSet,
    TieRule,
    demand,
    disutility,
    gauge_dual,
    gauge_dual_gradient,
    mpb_set,
)
from .dynamics import (
    Mode,
    PriceVector,
    StepSchedule,
    StopReason,
    Trajectory,
    run,
    step_naive,
    step_relative,
)
from .equilibrium import (
    CEReport,
    ClassificationTable,
    MPBGraph,
    StabilityVerdict,
    check_ce,
    classify_all,
    classify_stability_combinatorial,
    classify_stability_variational,
    find_ce_grid,
    nash_welfare,
)
from .excess import (
    StationarityCertificate,
    excess_demand,
    min_norm_certificate,
    relative_excess_demand,
)
from .grids import barycentric_grid, grid_rows
from .model import (
    DisutilityKind,
    DisutilitySpec,
    Market,
    Moduli,
    compute_moduli,
    compute_nu,
    dump_market,
    load_market,
    market_from_dict,
    validate,
)
from .potential import (
    PotentialValue,
    SmoothnessCertificate,
    potential_bounds,
    potential_f,
    restricted_fd_gradient,
    smoothness_certificate,
    subgradient_restricted,
)

__version__ = "0.1.0"
