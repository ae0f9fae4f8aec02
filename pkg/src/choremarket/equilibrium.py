"""Equilibrium certification, enumeration, Nash welfare, and local stability.

A price/allocation pair is an (eps-)competitive equilibrium when every agent
holds a disutility-minimizing bundle meeting her budget and every chore is
allocated to within eps. For linear markets, local stability of an equilibrium
under the relative dynamics is decided two independent ways: a combinatorial
cut condition on the minimum-pain-per-buck structure (for every split of the
chores some agent's MPB set straddles it with positive allocation on the far
side), and a variational sign test <z, p - p*> >= 0 on sampled nearby prices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .demand import DEFAULT_TIE_TOL, demand, mpb_set
from .dynamics import Mode, PriceVector, StepSchedule, StopReason, run
from .errors import DimensionMismatch, NotACE, NotApplicableCES, TooManyChores
from .excess import center, min_direction_inner
from .grids import barycentric_grid
from .model import Market, compute_moduli


class StabilityVerdict(Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    NOT_CLASSIFIED = "not_classified"


@dataclass
class CEReport:
    """Candidate equilibrium with its certificate and classification."""

    prices: PriceVector
    allocation: np.ndarray
    eps: float
    nash_welfare: float
    stability: StabilityVerdict = StabilityVerdict.NOT_CLASSIFIED
    criteria_detail: dict = field(default_factory=dict)

    @property
    def is_ce(self) -> bool:
        return bool(self.criteria_detail.get("optimal_bundles")) and bool(
            self.criteria_detail.get("market_clearance"))


@dataclass(frozen=True)
class MPBGraph:
    """Agent-chore incidence at given prices: MPB edges and support edges."""

    mpb_edges: tuple[tuple[int, int], ...]
    support_edges: tuple[tuple[int, int], ...]
    n: int
    m: int

    def is_connected(self) -> bool:
        """Connectivity of the bipartite MPB graph over agents and chores."""
        adj: dict[int, set[int]] = {v: set() for v in range(self.n + self.m)}
        for i, j in self.mpb_edges:
            adj[i].add(self.n + j)
            adj[self.n + j].add(i)
        seen = {0}
        stack = [0]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n + self.m


def mpb_graph(market: Market, p, x=None,
              tie_tol: float = DEFAULT_TIE_TOL,
              support_tol: float = 1e-12) -> MPBGraph:
    edges = []
    for i, spec in enumerate(market.disutilities):
        for j in mpb_set(spec, p, tie_tol).chores:
            edges.append((i, j))
    supp = []
    if x is not None:
        x = np.asarray(x, dtype=float)
        for i in range(market.n):
            for j in range(market.m):
                if x[i, j] > support_tol:
                    supp.append((i, j))
    return MPBGraph(tuple(edges), tuple(supp), market.n, market.m)


def nash_welfare(market: Market, x) -> float:
    """Product of the agents' disutilities at the allocation."""
    from .demand import disutility

    x = np.asarray(x, dtype=float)
    prod = 1.0
    for i, spec in enumerate(market.disutilities):
        prod *= disutility(spec, x[i])
    return float(prod)


def check_ce(market: Market, p, x, eps_tol: float = 1e-9,
             tie_tol: float = DEFAULT_TIE_TOL,
             support_tol: float = 1e-12,
             budget_rtol: float = 1e-8) -> CEReport:
    """Certify (p, x) as an eps-CE.

    Optimality: linear agents must spend only on MPB chores (within tie_tol)
    and exactly their budget; CES agents must match the closed-form demand to
    1e-8. eps is filled with the worst clearing violation max_j |sum_i x_ij - 1|
    whether or not it is below eps_tol.
    """
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    if p.shape != (market.m,) or x.shape != (market.n, market.m):
        raise DimensionMismatch(
            f"expected p of length {market.m} and x of shape "
            f"({market.n}, {market.m}), got {p.shape} and {x.shape}")

    per_agent_ok = []
    for i, (spec, b) in enumerate(zip(market.disutilities, market.budgets)):
        if spec.is_linear:
            chores = set(mpb_set(spec, p, tie_tol).chores)
            support_ok = all(
                (j in chores and p[j] > 0) or x[i, j] <= support_tol
                for j in range(market.m))
            spend_ok = abs(float(p @ x[i]) - b) <= budget_rtol * b
            per_agent_ok.append(support_ok and spend_ok)
        else:
            xd = demand(spec, p, float(b))
            per_agent_ok.append(bool(
                np.all(np.abs(x[i] - xd) <= 1e-8 * np.maximum(1.0, np.abs(xd)))))

    totals = x.sum(axis=0)
    eps = float(np.max(np.abs(totals - 1.0)))
    optimal = all(per_agent_ok)
    detail = {
        "optimal_bundles": optimal,
        "market_clearance": eps <= eps_tol,
        "per_agent_optimal": per_agent_ok,
        "eps_tol": eps_tol,
    }
    return CEReport(
        prices=PriceVector.wrap(p, market.budget_sum),
        allocation=x,
        eps=eps,
        nash_welfare=nash_welfare(market, x),
        stability=StabilityVerdict.NOT_CLASSIFIED,
        criteria_detail=detail,
    )


# ---------------------------------------------------------------------------
# Equilibrium allocations of a linear market (budget-flow polytope)
# ---------------------------------------------------------------------------

def _require_linear(market: Market) -> None:
    if not market.is_linear:
        raise NotApplicableCES("stability classification covers linear markets only")


def equilibrium_flow(market: Market, p, tie_tol: float = DEFAULT_TIE_TOL):
    """Equilibrium budget flows at prices p, or None when p clears nothing.

    Returns (edges, allocation, edge_positive) where edges are the MPB pairs
    (i, j), allocation is a relative-interior equilibrium allocation (positive
    on every edge that any equilibrium allocation uses), and edge_positive
    maps each edge to whether some equilibrium allocation puts weight on it.
    """
    _require_linear(market)
    p = np.asarray(p, dtype=float)
    if abs(math.fsum(p) - market.budget_sum) > 1e-7 * market.budget_sum:
        return None
    if np.any(p <= 0):
        return None
    edges = []
    for i, spec in enumerate(market.disutilities):
        for j in mpb_set(spec, p, tie_tol).chores:
            edges.append((i, j))
    ne = len(edges)
    a_eq = np.zeros((market.n + market.m, ne))
    for e, (i, j) in enumerate(edges):
        a_eq[i, e] = 1.0
        a_eq[market.n + j, e] = 1.0
    b_eq = np.concatenate([market.budgets, p])

    sols = []
    edge_positive = {}
    tol = 1e-9 * market.budget_sum
    for e in range(ne):
        c = np.zeros(ne)
        c[e] = -1.0
        res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if not res.success:
            return None
        edge_positive[edges[e]] = bool(res.x[e] > tol)
        sols.append(res.x)
    flows = np.mean(sols, axis=0)
    x = np.zeros((market.n, market.m))
    for e, (i, j) in enumerate(edges):
        x[i, j] = flows[e] / p[j]
    return edges, x, edge_positive


# ---------------------------------------------------------------------------
# Stability classifiers
# ---------------------------------------------------------------------------

def classify_stability_combinatorial(
    market: Market, p_star, x_star=None,
    tie_tol: float = DEFAULT_TIE_TOL,
    search_allocations: bool = True,
    max_chores: int = 20,
    force: bool = False,
):
    """Cut-condition classifier over all chore subsets.

    Stable iff every nonempty proper subset J of chores admits an agent whose
    MPB set meets both J and its complement with positive weight on the
    complement side. By default the positive-weight test quantifies over all
    equilibrium allocations (per-edge support search); pass
    search_allocations=False to pin it to the given x_star.

    Returns (verdict, witness) with witness the violating subset when unstable.
    """
    _require_linear(market)
    p_star = np.asarray(p_star, dtype=float)
    if market.m > max_chores and not force:
        raise TooManyChores(f"m={market.m} exceeds the 2^m guard ({max_chores})")

    flow = equilibrium_flow(market, p_star, tie_tol)
    if flow is None:
        raise NotACE("no equilibrium allocation exists at these prices")
    edges, x_interior, edge_positive = flow
    if x_star is None:
        x_star = x_interior
    else:
        x_star = np.asarray(x_star, dtype=float)
        rep = check_ce(market, p_star, x_star, eps_tol=max(tie_tol, 1e-9),
                       tie_tol=max(tie_tol, 1e-9))
        if not rep.is_ce:
            raise NotACE(f"supplied allocation fails certification (eps={rep.eps})")

    if search_allocations:
        supported = edge_positive
    else:
        supported = {(i, j): bool(x_star[i, j] > 1e-12) for (i, j) in edges}

    mpb_sets = [frozenset(mpb_set(s, p_star, tie_tol).chores)
                for s in market.disutilities]

    m = market.m
    for mask in range(1, (1 << m) - 1):
        j_in = [j for j in range(m) if mask >> j & 1]
        j_out = [j for j in range(m) if not mask >> j & 1]
        ok = False
        for i in range(market.n):
            s = mpb_sets[i]
            if not s.intersection(j_in):
                continue
            if any(jp in s and supported.get((i, jp), False) for jp in j_out):
                ok = True
                break
        if not ok:
            return StabilityVerdict.UNSTABLE, tuple(j_in)
    return StabilityVerdict.STABLE, None


def _subset_rays(p_star: np.ndarray):
    """Tie-preserving perturbation rays, one per nonempty proper chore subset.

    Raising the prices inside J proportionally (and lowering the complement
    proportionally) keeps every MPB tie that lies within J or within its
    complement. Escape directions of marginally unstable equilibria are
    confined to these rays, so random sampling alone can miss them.
    """
    m = p_star.size
    for mask in range(1, (1 << m) - 1):
        j_in = np.array([bool(mask >> j & 1) for j in range(m)])
        nu = np.where(j_in, p_star / p_star[j_in].sum(),
                      -p_star / p_star[~j_in].sum())
        yield nu / np.linalg.norm(nu)


def classify_stability_variational(
    market: Market, p_star,
    n_samples: int = 10_000,
    radius: float = 1e-3,
    seed: int | np.random.Generator | None = 0,
    tie_tol: float = DEFAULT_TIE_TOL,
    margin: float = 1e-10,
) -> StabilityVerdict:
    """Sign test of <z, p - p*> over perturbations on the budget hyperplane.

    Probes n_samples random hyperplane directions plus the subset-proportional
    rays (which carry the escape directions of tie-structured equilibria),
    each at several step lengths up to `radius`. At every probe the minimum of
    the inner product over the whole excess demand correspondence is evaluated
    exactly (it decomposes over agents' tie vertices); any value below -margin
    certifies instability, and a clean sweep is reported Stable. Consistency
    with the combinatorial verdict is asserted in tests.
    """
    _require_linear(market)
    p_star = np.asarray(p_star, dtype=float)
    if equilibrium_flow(market, p_star, tie_tol) is None:
        raise NotACE("no equilibrium allocation exists at these prices")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    radius = min(radius, 0.49 * float(p_star.min()))

    def _bad(nu, h):
        pp = p_star + h * nu
        if np.any(pp < 0):
            return False
        return min_direction_inner(market, pp, pp - p_star, tie_tol) < -margin

    if market.m <= 16:
        for nu in _subset_rays(p_star):
            for h in (radius, radius / 3.0, radius / 9.0, radius / 27.0):
                if _bad(nu, h):
                    return StabilityVerdict.UNSTABLE
    for _ in range(n_samples):
        nu = center(rng.standard_normal(market.m))
        norm = np.linalg.norm(nu)
        if norm < 1e-12:
            continue
        h = (1.0 - rng.uniform(0.0, 1.0)) * radius  # in (0, radius]
        if _bad(nu / norm, h):
            return StabilityVerdict.UNSTABLE
    return StabilityVerdict.STABLE


# ---------------------------------------------------------------------------
# Enumeration: grid seeding, dynamics refinement, exact snapping
# ---------------------------------------------------------------------------

_SNAP_TOLS = (1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


def snap_linear_ce(market: Market, p_approx,
                   max_move: float | None = None) -> np.ndarray | None:
    """Solve the near-tie structure at p_approx for exact equilibrium prices.

    Chores tied through some agent's near-MPB set must keep fixed price
    ratios; each connected component's price scale is pinned by the budgets
    of the agents spending inside it. Candidate structures are tried from
    tight to loose tie tolerances and verified from scratch (ratio-graph
    consistency, MPB maximality, clearing-flow feasibility). A candidate
    further than max_move from p_approx is rejected: reading a genuine tie as
    a singleton can otherwise solve to a different, distant equilibrium that
    still verifies. Returns None if nothing verifies.
    """
    _require_linear(market)
    p_approx = np.asarray(p_approx, dtype=float)
    if max_move is None:
        max_move = 0.01 * market.budget_sum
    for tau in _SNAP_TOLS:
        snapped = _try_snap(market, p_approx, tau)
        if snapped is not None and np.linalg.norm(snapped - p_approx) <= max_move:
            return snapped
    return None


def _try_snap(market: Market, p, tau: float) -> np.ndarray | None:
    m = market.m
    sets = [mpb_set(s, p, tau).chores for s in market.disutilities]

    parent = list(range(m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    ratio_edges = []
    for i, chores in enumerate(sets):
        w = market.disutilities[i].weights
        for a, b in zip(chores, chores[1:]):
            ratio_edges.append((a, b, w[b] / w[a]))  # p_b = p_a * d_ib/d_ia
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb

    comp = [find(j) for j in range(m)]
    g = np.full(m, np.nan)
    for root in set(comp):
        g[root] = 1.0
    changed = True
    while changed:
        changed = False
        for a, b, r in ratio_edges:
            if not np.isnan(g[a]) and np.isnan(g[b]):
                g[b] = g[a] * r
                changed = True
            elif not np.isnan(g[b]) and np.isnan(g[a]):
                g[a] = g[b] / r
                changed = True
    for a, b, r in ratio_edges:  # cycle consistency
        if abs(g[b] - g[a] * r) > 1e-9 * abs(g[b]):
            return None

    mass = {root: 0.0 for root in set(comp)}
    for i, chores in enumerate(sets):
        mass[comp[chores[0]]] += float(market.budgets[i])
    denom = {root: 0.0 for root in set(comp)}
    for j in range(m):
        denom[comp[j]] += g[j]
    snapped = np.empty(m)
    for j in range(m):
        if mass[comp[j]] <= 0.0:
            return None
        snapped[j] = g[j] * mass[comp[j]] / denom[comp[j]]
    if np.any(snapped <= 0) or not np.all(np.isfinite(snapped)):
        return None

    # MPB maximality: each agent's tie set must still attain her best ratio.
    for i, chores in enumerate(sets):
        w = market.disutilities[i].weights
        inside = snapped[chores[0]] / w[chores[0]]
        best = float(np.max(snapped / w))
        if inside < best * (1.0 - 1e-9):
            return None
    if equilibrium_flow(market, snapped, tie_tol=1e-9) is None:
        return None
    return snapped


def polish_ces_ce(market: Market, p_approx, tol: float = 1e-12,
                  max_steps: int = 40) -> np.ndarray:
    """Newton refinement of a CES dynamics limit.

    Solves zt(p) = 0 in hyperplane coordinates with a finite-difference
    Jacobian and backtracking; zt is the restricted gradient of the potential,
    so near a nondegenerate equilibrium this converges quadratically where the
    capped constant-step dynamics would need millions of iterations.
    """
    from .excess import relative_excess_demand
    from .potential import hyperplane_basis

    basis = hyperplane_basis(market.m)
    p = np.asarray(p_approx, dtype=float).copy()
    fd = 1e-7 * market.budget_sum

    def reduced(pv):
        return basis @ relative_excess_demand(market, pv)

    for _ in range(max_steps):
        gv = reduced(p)
        gnorm = np.linalg.norm(gv)
        if gnorm <= tol:
            break
        h = min(fd, 0.25 * float(p.min()))
        jac = np.empty((market.m - 1, market.m - 1))
        for c, u in enumerate(basis):
            jac[:, c] = (reduced(p + h * u) - reduced(p - h * u)) / (2.0 * h)
        try:
            step = np.linalg.solve(jac, gv)
        except np.linalg.LinAlgError:
            break
        t, improved = 1.0, False
        for _ in range(30):
            cand = p - basis.T @ (t * step)
            if np.all(cand > 0) and np.linalg.norm(reduced(cand)) < gnorm:
                p, improved = cand, True
                break
            t *= 0.5
        if not improved:
            break
    return p


def find_ce_grid(
    market: Market,
    resolution: float,
    refine_iters: int = 300_000,
    eps_refine: float = 1e-6,
    seeds=None,
    harmonic_mass: float = 0.25,
    cert_eps_tol: float = 1e-7,
    tie_tol: float = DEFAULT_TIE_TOL,
) -> list[CEReport]:
    """Heuristic equilibrium enumeration: grid seeds, dynamics, snap, dedup.

    Relative dynamics run from every barycentric seed (m in {2, 3} unless
    seeds are supplied); limits are snapped to exact equilibria, clustered at
    1e-6 * ||B||_1, and each representative is certified independently.
    Completeness is not claimed: equilibria repelling the dynamics are found
    only when a seed lands on them exactly.
    """
    if seeds is None:
        if market.m not in (2, 3):
            raise DimensionMismatch("exhaustive grids support m in {2, 3}; "
                                    "pass explicit seeds for larger markets")
        seeds = barycentric_grid(market.m, resolution, market.budget_sum)
    moduli = compute_moduli(market)
    cap = moduli.step_cap(market.budget_sum)
    c = max(cap, harmonic_mass * market.budget_sum)
    # CES limits get a Newton polish, so the dynamics only need to reach its
    # basin; linear limits are snapped from their near-tie structure.
    eps_run = eps_refine if market.is_linear else max(eps_refine, 1e-3)

    limits = []
    for p0 in seeds:
        traj = run(market, p0, StepSchedule.capped_harmonic(c),
                   mode=Mode.RELATIVE, eps=eps_run, max_iters=refine_iters,
                   record_every=0, moduli=moduli)
        limits.append(traj.final_prices)

    reps = []
    for lim in limits:
        if market.is_linear:
            snapped = snap_linear_ce(market, lim)
            reps.append(lim if snapped is None else snapped)
        else:
            reps.append(polish_ces_ce(market, lim))

    clusters: list[np.ndarray] = []
    radius = 1e-6 * market.budget_sum
    for r in sorted(reps, key=lambda v: tuple(v)):
        if not any(np.linalg.norm(r - cpt) <= radius for cpt in clusters):
            clusters.append(r)

    reports = []
    for pr in clusters:
        if market.is_linear:
            flow = equilibrium_flow(market, pr, tie_tol)
            if flow is None:
                continue
            x = flow[1]
        else:
            x = np.vstack([demand(s, pr, float(b))
                           for s, b in zip(market.disutilities, market.budgets)])
        rep = check_ce(market, pr, x, eps_tol=cert_eps_tol, tie_tol=max(tie_tol, 1e-9))
        if rep.is_ce:
            reports.append(rep)
    reports.sort(key=lambda r: tuple(r.prices.p))
    return reports


@dataclass
class ClassificationTable:
    """classify_all output: one classified report per equilibrium found."""

    reports: list[CEReport]
    max_nw_index: int | None
    max_nw_is_stable: bool
    classifiers_agree: bool


def classify_all(
    market: Market,
    resolution: float,
    variational_samples: int = 10_000,
    variational_radius: float = 1e-3,
    seed: int = 0,
    **grid_kwargs,
) -> ClassificationTable:
    """Enumerate equilibria and classify each with both stability criteria.

    The Nash-welfare maximizer among the found equilibria is flagged, and the
    table records (rather than silently trusts) whether it was classified
    stable and whether the two classifiers agreed everywhere.
    """
    _require_linear(market)
    reports = find_ce_grid(market, resolution, **grid_kwargs)
    agree = True
    for rep in reports:
        verdict, witness = classify_stability_combinatorial(market, rep.prices.p)
        var = classify_stability_variational(
            market, rep.prices.p, n_samples=variational_samples,
            radius=variational_radius, seed=seed)
        rep.stability = verdict
        rep.criteria_detail["combinatorial"] = verdict.value
        rep.criteria_detail["variational"] = var.value
        if witness is not None:
            rep.criteria_detail["witness_J"] = list(witness)
        agree = agree and (verdict == var)
    if reports:
        idx = int(np.argmax([r.nash_welfare for r in reports]))
        max_nw_stable = reports[idx].stability is StabilityVerdict.STABLE
        for k, r in enumerate(reports):
            r.criteria_detail["max_nw"] = k == idx
    else:
        idx, max_nw_stable = None, False
    return ClassificationTable(reports=reports, max_nw_index=idx,
                               max_nw_is_stable=max_nw_stable,
                               classifiers_agree=agree)
