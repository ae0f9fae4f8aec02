"""Per-agent best-response layer: disutilities, gauge duals, MPB sets, demand.

The gauge dual d^o(p) = max{<p, x> : x >= 0, d(x) <= 1} is the agent's maximum
earning per unit disutility. Demand at prices p with budget B is B times the
earning-maximizing unit-disutility bundle, i.e. B * grad d^o(p) / d^o(p) where
the gradient exists; at linear ties a tie rule selects from the correspondence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AllMPBPricesZero,
    NonPositivePrice,
    NotApplicableCES,
    NotApplicableLinear,
    ZeroPriceVector,
)
from .model import DisutilitySpec

DEFAULT_TIE_TOL = 1e-9

# Below this rho the CES exponent 1/(rho-1) is large enough that demand weights
# are computed in log space to avoid overflow.
_LOG_SPACE_RHO = 1.01
# Above this sigma the CES gauge dual sums d^(1-sigma) p^sigma in log space.
_LOG_SPACE_SIGMA = 50.0


@dataclass(frozen=True)
class TieRule:
    """Selection rule from a linear agent's optimal-demand correspondence.

    kind is one of "uniform" (equal budget shares over the MPB set), "lowest"
    (whole budget on the lowest-index MPB chore), or "weighted" (budget shares
    proportional to a fixed nonnegative chore weighting, renormalized on the
    MPB set; falls back to uniform where the weighting vanishes on the set).
    """

    kind: str
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "lowest", "weighted"):
            raise ValueError(f"unknown tie rule kind {self.kind!r}")
        if self.kind == "weighted":
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not math.isclose(float(w.sum()), 1.0, rel_tol=1e-12):
                raise ValueError("weighted tie rule needs nonnegative weights summing to 1")
            object.__setattr__(self, "weights", w)

    @staticmethod
    def uniform_split() -> "TieRule":
        return TieRule("uniform")

    @staticmethod
    def lowest_index() -> "TieRule":
        return TieRule("lowest")

    @staticmethod
    def weighted(weights) -> "TieRule":
        return TieRule("weighted", np.asarray(weights, dtype=float))


UNIFORM = TieRule.uniform_split()


@dataclass(frozen=True)
class MPBSet:
    """Minimum-pain-per-buck chores of one agent at given prices."""

    chores: tuple[int, ...]
    mpb_value: float
    agent: int | None = None


def _check_prices(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0 or not np.any(p > 0):
        raise ZeroPriceVector(f"need a nonzero nonnegative price vector, got {p!r}")
    return p


def disutility(spec: DisutilitySpec, x) -> float:
    """d(x): weighted sum (linear) or weighted ell_rho norm (CES)."""
    x = np.asarray(x, dtype=float)
    if spec.is_linear:
        return float(spec.weights @ x)
    return float(np.sum(spec.weights * np.power(x, spec.rho)) ** (1.0 / spec.rho))


def log_gauge_dual(spec: DisutilitySpec, p) -> float:
    """log d^o(p), stable for sigma large (rho near 1)."""
    p = _check_prices(p)
    if spec.is_linear:
        return float(np.log(np.max(p / spec.weights)))
    sigma = spec.sigma
    with np.errstate(divide="ignore"):
        t = sigma * np.log(p) + (1.0 - sigma) * np.log(spec.weights)
    t = t[p > 0]
    tmax = t.max()
    return float(tmax + np.log(np.sum(np.exp(t - tmax)))) / sigma


def gauge_dual(spec: DisutilitySpec, p) -> float:
    """d^o(p) = max{<p,x> : x >= 0, d(x) <= 1}.

    Closed forms: max_j p_j/d_j for linear; (sum_j d_j^(1-sigma) p_j^sigma)^(1/sigma)
    for CES with sigma = rho/(rho-1).
    """
    p = _check_prices(p)
    if spec.is_linear:
        return float(np.max(p / spec.weights))
    sigma = spec.sigma
    if sigma > _LOG_SPACE_SIGMA:
        return math.exp(log_gauge_dual(spec, p))
    s = np.sum(spec.weights ** (1.0 - sigma) * np.power(p, sigma))
    return float(s ** (1.0 / sigma))


def gauge_dual_gradient(spec: DisutilitySpec, p) -> np.ndarray:
    """grad d^o(p) for a CES spec; equals the earning-maximizing bundle at
    unit disutility. Requires p > 0 componentwise."""
    if spec.is_linear:
        raise NotApplicableLinear("linear gauge duals are not differentiable at ties")
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise NonPositivePrice("gauge dual gradient needs strictly positive prices")
    sigma = spec.sigma
    if sigma > _LOG_SPACE_SIGMA:
        logd = log_gauge_dual(spec, p)
        logg = (1.0 - sigma) * logd + (1.0 - sigma) * np.log(spec.weights) \
            + (sigma - 1.0) * np.log(p)
        return np.exp(logg)
    dual = gauge_dual(spec, p)
    return dual ** (1.0 - sigma) * spec.weights ** (1.0 - sigma) * p ** (sigma - 1.0)


def mpb_set(spec: DisutilitySpec, p, tie_tol: float = DEFAULT_TIE_TOL,
            agent: int | None = None) -> MPBSet:
    """Chores attaining max_j p_j / d_j within relative tolerance tie_tol."""
    if not spec.is_linear:
        raise NotApplicableCES("MPB sets are a linear-disutility notion")
    p = _check_prices(p)
    ratio = p / spec.weights
    best = float(ratio.max())
    chores = tuple(int(j) for j in np.nonzero(ratio >= best * (1.0 - tie_tol))[0])
    return MPBSet(chores=chores, mpb_value=best, agent=agent)


def tie_shares(tie: TieRule, chores: tuple[int, ...]) -> np.ndarray:
    """Budget shares over a tie set under the given rule (sum to 1)."""
    k = len(chores)
    if tie.kind == "lowest":
        s = np.zeros(k)
        s[int(np.argmin(chores))] = 1.0
        return s
    if tie.kind == "weighted":
        w = tie.weights[list(chores)]
        tot = w.sum()
        if tot <= 0:
            return np.full(k, 1.0 / k)
        return w / tot
    return np.full(k, 1.0 / k)


def demand(spec: DisutilitySpec, p, budget: float, tie: TieRule = UNIFORM,
           tie_tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
    """Disutility-minimizing bundle earning exactly `budget` at prices p.

    Linear agents split the budget over the MPB set per the tie rule; CES
    demand is the unique x_j proportional to (p_j/d_j)^(1/(rho-1)), rescaled
    so <p, x> = budget holds exactly. Chores priced at zero get zero demand.
    """
    p = _check_prices(p)
    x = np.zeros_like(p)
    if spec.is_linear:
        s = mpb_set(spec, p, tie_tol)
        priced = tuple(j for j in s.chores if p[j] > 0)
        if not priced:
            raise AllMPBPricesZero("all MPB chores have zero price")
        shares = tie_shares(tie, priced)
        for share, j in zip(shares, priced):
            x[j] = share * budget / p[j]
        return x
    pos = p > 0
    if spec.rho < _LOG_SPACE_RHO:
        lw = (np.log(p[pos]) - np.log(spec.weights[pos])) / (spec.rho - 1.0)
        t = lw + np.log(p[pos])
        tmax = t.max()
        logden = tmax + math.log(np.sum(np.exp(t - tmax)))
        x[pos] = budget * np.exp(lw - logden)
    else:
        w = (p[pos] / spec.weights[pos]) ** (1.0 / (spec.rho - 1.0))
        x[pos] = w
        x *= budget / float(p @ x)
    return x
