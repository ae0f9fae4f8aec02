"""Aggregate excess demand, its mean-centered form, and tie-polytope selections.

For linear agents the demand correspondence is set-valued at minimum-pain-per-
buck ties, so the relative excess demand at a price vector is a polytope. The
stationarity measure used by the dynamics and the flow fields emitted for
simplex grids both need its minimum-Euclidean-norm element; that point is the
solution of a tiny convex QP over per-agent budget-share simplices, solved
exactly here by an active-set method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .demand import DEFAULT_TIE_TOL, UNIFORM, TieRule, demand, mpb_set
from .model import Market


def agent_demands(market: Market, p, tie: TieRule = UNIFORM,
                  tie_tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
    """(n, m) matrix of per-agent demand selections at prices p."""
    p = np.asarray(p, dtype=float)
    return np.vstack([
        demand(s, p, float(b), tie, tie_tol)
        for s, b in zip(market.disutilities, market.budgets)
    ])


def excess_demand(market: Market, p, tie: TieRule = UNIFORM,
                  tie_tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
    """z = sum_i x_i - 1 for the selection induced by the tie rule."""
    return agent_demands(market, p, tie, tie_tol).sum(axis=0) - 1.0


def center(z: np.ndarray) -> np.ndarray:
    """z - mean(z), with the residual sum compensated down to ~1 ulp."""
    z = np.asarray(z, dtype=float)
    zt = z - math.fsum(z) / z.size
    return zt - math.fsum(zt) / z.size


def relative_excess_demand(market: Market, p, tie: TieRule = UNIFORM,
                           tie_tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
    """Mean-centered excess demand; sums to zero up to compensated rounding."""
    return center(excess_demand(market, p, tie, tie_tol))


# ---------------------------------------------------------------------------
# Tie structure and the minimum-norm selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TieStructure:
    """Which agents are tied at p and over which chores.

    fixed_demand sums the uniquely-determined demands (CES agents and linear
    agents with singleton MPB sets); tied_agents holds (agent index, chores)
    for the rest.
    """

    fixed_demand: np.ndarray
    tied_agents: tuple[tuple[int, tuple[int, ...]], ...]
    mpb_sets: tuple[tuple[int, ...] | None, ...]


def tie_structure(market: Market, p, tie_tol: float = DEFAULT_TIE_TOL) -> TieStructure:
    p = np.asarray(p, dtype=float)
    fixed = np.zeros(market.m)
    tied = []
    sets: list[tuple[int, ...] | None] = []
    for i, (spec, b) in enumerate(zip(market.disutilities, market.budgets)):
        if spec.is_linear:
            s = mpb_set(spec, p, tie_tol, agent=i)
            chores = tuple(j for j in s.chores if p[j] > 0)
            sets.append(chores)
            if len(chores) > 1:
                tied.append((i, chores))
            else:
                fixed[chores[0]] += b / p[chores[0]]
        else:
            sets.append(None)
            fixed += demand(spec, p, float(b))
    return TieStructure(fixed_demand=fixed, tied_agents=tuple(tied), mpb_sets=tuple(sets))


@dataclass(frozen=True)
class StationarityCertificate:
    """One element of the relative excess demand correspondence at p.

    value is its Euclidean norm (an upper bound on the distance from zero to
    the correspondence; exact at the active-set optimum). allocation is the
    full (n, m) demand matrix realizing it.
    """

    value: float
    zt: np.ndarray
    z: np.ndarray
    allocation: np.ndarray
    exact: bool


def min_norm_certificate(market: Market, p, tie_tol: float = DEFAULT_TIE_TOL
                         ) -> StationarityCertificate:
    """Minimum-norm relative excess demand over the MPB tie polytope at p.

    Chores within relative tolerance tie_tol of an agent's best pain-per-buck
    ratio count as tied. With no ties this is just the unique selection.
    """
    p = np.asarray(p, dtype=float)
    ts = tie_structure(market, p, tie_tol)
    base = ts.fixed_demand - 1.0
    if not ts.tied_agents:
        z = base
        zt = center(z)
        x = agent_demands(market, p, UNIFORM, tie_tol)
        return StationarityCertificate(float(np.linalg.norm(zt)), zt, z, x, True)

    edges = [(a_pos, j) for a_pos, (_, chores) in enumerate(ts.tied_agents)
             for j in chores]
    budgets = np.array([market.budgets[i] for i, _ in ts.tied_agents])
    b_opt, exact = _min_norm_splits(p, base, edges, budgets, len(ts.tied_agents), market.m)

    x = np.zeros((market.n, market.m))
    for i, spec in enumerate(market.disutilities):
        if ts.mpb_sets[i] is None:
            x[i] = demand(spec, p, float(market.budgets[i]))
        elif len(ts.mpb_sets[i]) == 1:
            j = ts.mpb_sets[i][0]
            x[i, j] = market.budgets[i] / p[j]
    for e, (a_pos, j) in enumerate(edges):
        i = ts.tied_agents[a_pos][0]
        x[i, j] += b_opt[e] / p[j]
    z = x.sum(axis=0) - 1.0
    zt = center(z)
    return StationarityCertificate(float(np.linalg.norm(zt)), zt, z, x, exact)


def _min_norm_splits(p, base, edges, budgets, n_tied, m,
                     max_pivots: int | None = None):
    """Active-set solve of min ||C(base + E b)||^2 over the budget simplices.

    Variables are budget amounts b_e >= 0 on (tied agent, chore) edges, with
    each tied agent's edges summing to her budget. Returns (b, exact) where
    exact=False only if the pivot cap was hit (b is then still feasible, so
    its norm remains a valid upper bound).
    """
    nE = len(edges)
    E = np.zeros((m, nE))
    for e, (_, j) in enumerate(edges):
        E[j, e] = 1.0 / p[j]
    C = np.eye(m) - np.full((m, m), 1.0 / m)
    CE = C @ E
    H = 2.0 * CE.T @ CE
    cbase = C @ base
    clin = 2.0 * CE.T @ cbase

    A = np.zeros((n_tied, nE))
    for e, (a_pos, _) in enumerate(edges):
        A[a_pos, e] = 1.0

    per_agent = [np.nonzero(A[a])[0] for a in range(n_tied)]
    b = np.zeros(nE)
    for a in range(n_tied):
        b[per_agent[a]] = budgets[a] / len(per_agent[a])

    scale = float(budgets.max())
    tol = 1e-12 * max(scale, 1.0)
    active = np.zeros(nE, dtype=bool)
    if max_pivots is None:
        max_pivots = 3 * nE + 12

    for _ in range(max_pivots):
        free = np.nonzero(~active)[0]
        k = free.size
        kkt = np.zeros((k + n_tied, k + n_tied))
        kkt[:k, :k] = H[np.ix_(free, free)]
        kkt[:k, k:] = A[:, free].T
        kkt[k:, :k] = A[:, free]
        rhs = np.concatenate([-clin[free], budgets])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        b_star = np.zeros(nE)
        b_star[free] = sol[:k]

        if np.all(b_star[free] >= -tol):
            b = np.clip(b_star, 0.0, None)
            grad = H @ b + clin
            done = True
            worst, worst_e = -tol * 0.0, -1
            for a in range(n_tied):
                fa = [e for e in per_agent[a] if not active[e]]
                mu = min(grad[e] for e in fa)
                for e in per_agent[a]:
                    if active[e] and grad[e] < mu - 1e-9 * max(1.0, abs(mu)):
                        viol = grad[e] - mu
                        if viol < worst:
                            worst, worst_e = viol, e
                        done = False
            if done:
                return b, True
            active[worst_e] = False
            continue

        # Step toward b_star until the first bound blocks, then pin it.
        d = b_star - b
        alpha, block = 1.0, -1
        for e in free:
            if d[e] < -tol and b[e] + d[e] < 0.0:
                a_e = b[e] / -d[e]
                if a_e < alpha:
                    alpha, block = a_e, e
        b = np.clip(b + alpha * d, 0.0, None)
        if block >= 0:
            b[block] = 0.0
            active[block] = True
        else:  # numerical corner: accept clipped point
            return b, False
    return b, False


def min_direction_inner(market: Market, p, direction,
                        tie_tol: float = DEFAULT_TIE_TOL) -> float:
    """min over z in Z(p) of <z, direction>.

    The functional is linear in each tied agent's budget split, so the minimum
    decomposes per agent: each tied agent puts her whole budget on the tie
    chore minimizing direction_j / p_j.
    """
    p = np.asarray(p, dtype=float)
    nu = np.asarray(direction, dtype=float)
    ts = tie_structure(market, p, tie_tol)
    total = float(ts.fixed_demand @ nu) - float(nu.sum())
    for i, chores in ts.tied_agents:
        total += market.budgets[i] * min(nu[j] / p[j] for j in chores)
    return total
