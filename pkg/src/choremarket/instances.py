"""Canonical and random market instances used by the demos and tests."""

from __future__ import annotations

import numpy as np

from .model import DisutilitySpec, Market, validate


def crossed_linear_2x2() -> Market:
    """Two agents, two chores, unit budgets, weights 1 on own chore, 2 across.

    The workhorse demo instance: three equilibria at prices (4/3, 2/3), (1, 1)
    and (2/3, 4/3), the symmetric one unstable and the other two stable with
    higher Nash welfare.
    """
    return validate([1.0, 1.0], [
        DisutilitySpec.linear([1.0, 2.0]),
        DisutilitySpec.linear([2.0, 1.0]),
    ])


def single_agent_two_chores(rho: float = 1.0, budget: float = 1.0) -> Market:
    """One agent, two chores, equal weights; unique CE at (B/2, B/2).

    The naive dynamics strictly inflate the price sum on this instance from
    any start with sum(p) >= ||B||_1 off the equilibrium, for every rho >= 1.
    """
    spec = (DisutilitySpec.linear([1.0, 1.0]) if rho == 1.0
            else DisutilitySpec.ces([1.0, 1.0], rho))
    return validate([budget], [spec])


def symmetric_ces(m: int, rho: float, budget: float = 1.0) -> Market:
    """One CES agent with all-ones weights over m chores; uniform CE prices."""
    return validate([budget], [DisutilitySpec.ces([1.0] * m, rho)])


def three_chore_showcase() -> Market:
    """Three linear agents over three chores with distinct stable equilibria.

    A documented synthetic instance for ternary-grid output; budgets and
    weights chosen so the potential landscape has several basins.
    """
    return validate([1.0, 1.0, 1.0], [
        DisutilitySpec.linear([1.0, 2.0, 2.0]),
        DisutilitySpec.linear([2.0, 1.0, 2.0]),
        DisutilitySpec.linear([2.0, 2.0, 1.0]),
    ])


def rate_study_family(rho: float) -> list[Market]:
    """Small well-conditioned CES instances for iteration-count studies.

    Kept at m = 2 with weights near one: the constant-step cap scales like
    (4 n m^2)^(-2(rho-1)), so larger or lopsided instances push iteration
    counts beyond desk scale.
    """
    fam = [
        validate([1.0], [DisutilitySpec.ces([1.0, 1.0], rho)]),
        validate([1.0], [DisutilitySpec.ces([1.0, 1.3], rho)]),
        validate([1.2], [DisutilitySpec.ces([0.9, 1.1], rho)]),
        validate([0.6, 0.6], [DisutilitySpec.ces([1.0, 1.2], rho),
                              DisutilitySpec.ces([1.2, 1.0], rho)]),
        validate([0.5, 0.7], [DisutilitySpec.ces([1.0, 0.8], rho),
                              DisutilitySpec.ces([0.9, 1.1], rho)]),
    ]
    return fam


def random_linear_market(rng: np.random.Generator, n_max: int = 4,
                         m_max: int = 4) -> Market:
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(2, m_max + 1))
    weights = np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=(n, m)))
    budgets = rng.uniform(0.5, 2.0, size=n)
    return validate(budgets, [DisutilitySpec.linear(w) for w in weights])


def random_ces_market(rng: np.random.Generator, rho: float, n_max: int = 4,
                      m_max: int = 4, weight_spread: float = 2.0) -> Market:
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(2, m_max + 1))
    lo, hi = np.log(1.0 / weight_spread), np.log(weight_spread)
    weights = np.exp(rng.uniform(lo, hi, size=(n, m)))
    budgets = rng.uniform(0.5, 2.0, size=n)
    return validate(budgets, [DisutilitySpec.ces(w, rho) for w in weights])


def uniform_simplex_point(market: Market) -> np.ndarray:
    """The barycenter of the price simplex, the default starting point."""
    return np.full(market.m, market.budget_sum / market.m)
