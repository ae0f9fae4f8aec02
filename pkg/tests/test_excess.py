import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choremarket.demand import TieRule
from choremarket.excess import (
    center,
    excess_demand,
    min_direction_inner,
    min_norm_certificate,
    relative_excess_demand,
    tie_structure,
)
from choremarket.instances import random_ces_market, random_linear_market
from choremarket.model import DisutilitySpec, validate


def test_excess_demand_single_agent():
    mkt = validate([1.0], [DisutilitySpec.linear([1.0, 1.0])])
    z = excess_demand(mkt, np.array([0.6, 0.5]))
    assert np.allclose(z, [1.0 / 0.6 - 1.0, -1.0])
    zt = relative_excess_demand(mkt, np.array([0.6, 0.5]))
    mean = (1.0 / 0.6 - 2.0) / 2.0
    assert np.allclose(zt, [1.0 / 0.6 - 1.0 - mean, -1.0 - mean])


def test_excess_demand_pure_function(example_market):
    p = np.array([1.1, 0.9])
    z1 = excess_demand(example_market, p)
    z2 = excess_demand(example_market, p)
    assert np.array_equal(z1, z2)


def test_center_uniform_vector_is_zero():
    assert np.allclose(center(np.full(5, 3.7)), 0.0, atol=1e-16)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_centered_sum_is_tiny(seed):
    r = np.random.default_rng(seed)
    z = r.uniform(-1e3, 1e3, int(r.integers(2, 9)))
    zt = center(z)
    assert abs(math.fsum(zt)) <= 1e-12 * max(1.0, np.abs(z).max())


def test_example_market_clears_at_equilibrium(example_market):
    p = np.array([4.0 / 3.0, 2.0 / 3.0])
    cert = min_norm_certificate(example_market, p)
    assert cert.value <= 1e-12
    assert np.allclose(cert.allocation, [[0.75, 0.0], [0.25, 1.0]], atol=1e-9)
    # the uniform-split selection is a different, nonzero element
    sel = relative_excess_demand(example_market, p)
    assert np.allclose(sel, [3.0 / 16.0, -3.0 / 16.0])


def test_tie_structure_no_ties(example_market):
    ts = tie_structure(example_market, np.array([1.0, 1.0]))
    assert not ts.tied_agents
    assert ts.mpb_sets == ((0,), (1,))


# --- minimum-norm selection against brute force --------------------------------

def _min_norm_bruteforce(mkt, p, tie_tol, npts=2001):
    ts = tie_structure(mkt, p, tie_tol)
    base = ts.fixed_demand - 1.0
    assert len(ts.tied_agents) == 1, "brute force covers one tied agent"
    i, chores = ts.tied_agents[0]
    assert len(chores) == 2
    b = mkt.budgets[i]
    best = np.inf
    for t in np.linspace(0.0, 1.0, npts):
        z = base.copy()
        z[chores[0]] += t * b / p[chores[0]]
        z[chores[1]] += (1 - t) * b / p[chores[1]]
        best = min(best, np.linalg.norm(center(z)))
    return best


def test_min_norm_matches_bruteforce_on_segments(rng):
    for _ in range(10):
        w_other = rng.uniform(0.4, 2.5, 3)
        tied_w = np.array([1.0, 1.0, rng.uniform(1.5, 3.0)])
        mkt = validate(rng.uniform(0.4, 2.0, 2),
                       [DisutilitySpec.linear(tied_w),
                        DisutilitySpec.linear(w_other)])
        # price the first two chores so agent 0 is exactly tied
        p = np.array([1.0, 1.0, rng.uniform(0.1, 0.3)])
        p = p / p.sum() * mkt.budget_sum
        cert = min_norm_certificate(mkt, p, tie_tol=1e-9)
        if not tie_structure(mkt, p, 1e-9).tied_agents:
            continue
        brute = _min_norm_bruteforce(mkt, p, 1e-9)
        assert cert.value <= brute + 1e-6
        assert cert.value >= brute - 1e-3  # grid resolution slack
        assert cert.exact


def test_min_norm_kkt_conditions(rng):
    # Optimality of the active-set solution: equal gradients on the support,
    # no smaller gradient on a pinned edge.
    for _ in range(15):
        mkt = random_linear_market(rng)
        p = rng.dirichlet(np.full(mkt.m, 1.5)) * mkt.budget_sum
        cert = min_norm_certificate(mkt, p, tie_tol=0.3)  # force wide ties
        ts = tie_structure(mkt, p, 0.3)
        if not ts.tied_agents:
            continue
        x = cert.allocation
        assert np.all(x >= -1e-12)
        for i, b in enumerate(mkt.budgets):
            assert float(p @ x[i]) == pytest.approx(float(b), rel=1e-9)
        grad = 2.0 * cert.zt / p  # d||zt||^2 / d b_ij for j in the tie set
        for i, chores in ts.tied_agents:
            gvals = np.array([grad[j] for j in chores])
            bvals = np.array([x[i, j] * p[j] for j in chores])
            mu = gvals[bvals > 1e-9].min() if np.any(bvals > 1e-9) else gvals.min()
            assert np.all(gvals >= mu - 1e-7 * max(1.0, abs(mu)))
            on = bvals > 1e-9
            assert np.allclose(gvals[on], mu, atol=1e-7 * max(1.0, abs(mu)))


def test_min_norm_unique_demand_markets(rng):
    for rho in (1.5, 2.0):
        mkt = random_ces_market(rng, rho)
        p = rng.dirichlet(np.full(mkt.m, 2.0)) * mkt.budget_sum
        cert = min_norm_certificate(mkt, p)
        zt = relative_excess_demand(mkt, p)
        assert np.allclose(cert.zt, zt, atol=1e-12)
        assert cert.value == pytest.approx(float(np.linalg.norm(zt)), rel=1e-12)


# --- directional minimum --------------------------------------------------------

def _min_inner_enumerated(mkt, p, nu, tie_tol):
    ts = tie_structure(mkt, p, tie_tol)
    base = ts.fixed_demand - 1.0
    combos = [np.zeros(mkt.m)]
    for i, chores in ts.tied_agents:
        new = []
        for zadd in combos:
            for j in chores:
                e = zadd.copy()
                e[j] += mkt.budgets[i] / p[j]
                new.append(e)
        combos = new
    return min(float((base + zadd) @ nu) for zadd in combos)


def test_min_direction_inner_matches_enumeration(rng):
    for _ in range(10):
        mkt = random_linear_market(rng, n_max=3, m_max=3)
        p = rng.dirichlet(np.full(mkt.m, 1.5)) * mkt.budget_sum
        nu = center(rng.standard_normal(mkt.m))
        got = min_direction_inner(mkt, p, nu, tie_tol=0.2)
        want = _min_inner_enumerated(mkt, p, nu, 0.2)
        assert got == pytest.approx(want, rel=1e-10, abs=1e-12)
