"""Descent potential for the relative dynamics, with bounds and smoothness.

f(p) = -sum_j p_j + sum_i B_i log d_i^o(p) restricted to the budget hyperplane
is a Lyapunov function for the relative dynamics: its generalized gradient at
simplex prices is exactly the mean-centered excess-demand correspondence, so
stationary points are competitive equilibria. For all-CES markets the gauge
duals are smooth (globally for rho <= 2, on the prices-above-ell0/2 region for
rho > 2) and the resulting Lipschitz constant of grad f fixes the constant
step size of the fast schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .demand import DEFAULT_TIE_TOL, UNIFORM, TieRule, log_gauge_dual
from .errors import LinearUnsupported, ZeroPriceVector
from .excess import relative_excess_demand
from .model import Market, Moduli, compute_moduli


@dataclass(frozen=True)
class PotentialValue:
    """f split into its price mass and per-agent earning-log terms."""

    f: float
    per_agent_log_terms: np.ndarray
    linear_term: float


def potential_f(market: Market, p) -> PotentialValue:
    """Evaluate f(p) via the closed-form gauge duals."""
    p = np.asarray(p, dtype=float)
    if not np.any(p > 0):
        raise ZeroPriceVector("potential undefined at the zero price vector")
    terms = np.array([
        b * log_gauge_dual(s, p)
        for b, s in zip(market.budgets, market.disutilities)
    ])
    lin = -float(math.fsum(p))
    return PotentialValue(f=lin + float(math.fsum(terms)),
                          per_agent_log_terms=terms, linear_term=lin)


def potential_bounds(market: Market, moduli: Moduli | None = None) -> tuple[float, float]:
    """Analytic [lower, upper] range of f over the price simplex.

    lower = -||B||_1 + sum_i B_i log(delta_lb_i ||B||_1),
    upper = -||B||_1 + sum_i B_i log(r_inf_i ||B||_1).
    """
    if moduli is None:
        moduli = compute_moduli(market)
    bs = market.budget_sum
    lower = -bs + float(np.sum(market.budgets * np.log(moduli.delta_lb * bs)))
    upper = -bs + float(np.sum(market.budgets * np.log(moduli.r_inf * bs)))
    return lower, upper


def subgradient_restricted(market: Market, p, tie: TieRule = UNIFORM,
                           tie_tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
    """One generalized gradient of f restricted to the budget hyperplane.

    This is just the mean-centered excess demand for the tie rule's selection;
    at CES (or untied linear) prices it is the exact restricted gradient.
    """
    return relative_excess_demand(market, p, tie, tie_tol)


def hyperplane_basis(m: int) -> np.ndarray:
    """Orthonormal (m-1, m) basis of the zero-sum subspace.

    Built by Gram-Schmidt from {e_j - e_{j+1}} so finite differences taken
    along it stay on the budget hyperplane.
    """
    raw = np.zeros((m - 1, m))
    for j in range(m - 1):
        raw[j, j] = 1.0
        raw[j, j + 1] = -1.0
    basis = []
    for v in raw:
        for u in basis:
            v = v - (v @ u) * u
        v = v / np.linalg.norm(v)
        basis.append(v)
    return np.vstack(basis)


def restricted_fd_gradient(market: Market, p, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of f along the hyperplane basis.

    Differences must stay inside the hyperplane or they would measure the
    unrestricted gradient; default h = 1e-6 * ||B||_1.
    """
    p = np.asarray(p, dtype=float)
    if h is None:
        h = 1e-6 * market.budget_sum
    basis = hyperplane_basis(market.m)
    g = np.zeros(market.m)
    for u in basis:
        fp = potential_f(market, p + h * u).f
        fm = potential_f(market, p - h * u).f
        g += ((fp - fm) / (2.0 * h)) * u
    return g


# ---------------------------------------------------------------------------
# Smoothness certificates
# ---------------------------------------------------------------------------

class SmoothnessRegime:
    GLOBAL = "rho_le_2_global"
    LOCAL = "rho_gt_2_local"


@dataclass(frozen=True)
class SmoothnessCertificate:
    """Lipschitz moduli of the gauge-dual gradients and of grad f.

    per_agent_l[i] bounds ||grad d_i^o(p) - grad d_i^o(q)|| / ||p - q|| on the
    certified region. composite_l bounds the same ratio for grad f via
    sum_i B_i (L_i / r_i + R_i (L_i ||B||_1 + R_i) / r_i^2) with
    r_i = delta_lb_i * ||B||_1 a floor on d_i^o over the simplex.
    """

    regime: str
    per_agent_l: np.ndarray
    composite_l: float
    local_radius: float | None
    valid_region: str


def smoothness_certificate(market: Market, moduli: Moduli | None = None
                           ) -> SmoothnessCertificate:
    """Certify smoothness constants for an all-CES market.

    rho in (1, 2]: global on the simplex with
    L_i = 2 m (max_j d_ij)^(1/rho) / ((rho - 1)(min_j d_ij)^(2/rho) ||B||_1).
    rho > 2: local on {p : p_j >= ell0/2} with L_i = L(ell0/2), where
    L(r) = (sigma-1)/||B||_1^(sigma-1) (max d)^((1-sigma)^2/sigma)
    (min d)^(1-sigma) / r + (sigma-1)/||B||_1 (max d)^((1-sigma)(1-2sigma)/sigma)
    (min d)^(2(1-sigma)).
    """
    if any(s.is_linear for s in market.disutilities):
        raise LinearUnsupported("linear gauge duals are nonsmooth at ties")
    if moduli is None:
        moduli = compute_moduli(market)
    bs = market.budget_sum
    any_rho_gt2 = any(s.rho > 2.0 for s in market.disutilities)
    r = 0.5 * moduli.ell0 if any_rho_gt2 else None

    l_agents = np.empty(market.n)
    for i, s in enumerate(market.disutilities):
        dmin, dmax = float(s.weights.min()), float(s.weights.max())
        if s.rho <= 2.0:
            l_agents[i] = (2.0 * market.m * dmax ** (1.0 / s.rho)
                           / ((s.rho - 1.0) * dmin ** (2.0 / s.rho) * bs))
        else:
            sig = s.sigma
            l_agents[i] = (
                (sig - 1.0) / bs ** (sig - 1.0)
                * dmax ** ((1.0 - sig) ** 2 / sig) * dmin ** (1.0 - sig) / r
                + (sig - 1.0) / bs
                * dmax ** ((1.0 - sig) * (1.0 - 2.0 * sig) / sig)
                * dmin ** (2.0 * (1.0 - sig))
            )

    r_floor = moduli.delta_lb * bs
    comp = float(np.sum(market.budgets * (
        l_agents / r_floor
        + moduli.r_inf * (l_agents * bs + moduli.r_inf) / r_floor**2
    )))
    regime = SmoothnessRegime.LOCAL if any_rho_gt2 else SmoothnessRegime.GLOBAL
    region = ("{p on simplex : p_j >= ell0/2 for all j}" if any_rho_gt2
              else "full price simplex")
    return SmoothnessCertificate(regime=regime, per_agent_l=l_agents,
                                 composite_l=comp, local_radius=r,
                                 valid_region=region)
