import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choremarket.errors import (
    DimensionMismatch,
    InstanceFormatError,
    NonPositiveBudget,
    NonPositiveWeight,
    RhoOutOfRange,
)
from choremarket.model import (
    DisutilitySpec,
    compute_moduli,
    compute_nu,
    market_from_dict,
    validate,
)


def test_validate_example_market(example_market):
    assert example_market.n == 2
    assert example_market.m == 2
    assert example_market.budget_sum == 2.0


def test_validate_smallest_ces():
    mkt = validate([1.0], [DisutilitySpec.ces([1.0, 1.0], 2.0)])
    assert mkt.m == 2 and mkt.disutilities[0].rho == 2.0


@pytest.mark.parametrize("budgets, specs, err", [
    ([0.0, 1.0], [DisutilitySpec.linear([1, 2]), DisutilitySpec.linear([2, 1])],
     NonPositiveBudget),
    ([1.0], [DisutilitySpec.linear([1.0, -2.0])], NonPositiveWeight),
    ([1.0], [DisutilitySpec.ces([1.0, 1.0], 1.0)], RhoOutOfRange),
    ([1.0], [DisutilitySpec.ces([1.0, 1.0], 0.5)], RhoOutOfRange),
    ([1.0], [DisutilitySpec.linear([1.0])], DimensionMismatch),
    ([1.0, 1.0], [DisutilitySpec.linear([1, 2])], DimensionMismatch),
    ([1.0, 1.0], [DisutilitySpec.linear([1, 2]), DisutilitySpec.linear([2, 1, 3])],
     DimensionMismatch),
])
def test_validate_rejections(budgets, specs, err):
    with pytest.raises(err):
        validate(budgets, specs)


# --- nu ---------------------------------------------------------------------

def _nu_linear_bruteforce(weights):
    return min(weights[j] / weights[k]
               for j, k in itertools.product(range(len(weights)), repeat=2))


def test_nu_linear_example(example_market):
    nu = compute_nu(example_market)
    assert np.allclose(nu, [0.5, 0.5])
    for i, spec in enumerate(example_market.disutilities):
        assert nu[i] == pytest.approx(_nu_linear_bruteforce(spec.weights), abs=1e-15)


def test_nu_equal_weights_is_one():
    mkt = validate([2.0], [DisutilitySpec.linear([3.0, 3.0, 3.0])])
    assert compute_nu(mkt)[0] == 1.0


def test_nu_ces_small_instance_matches_gradient_ratio_search():
    # n=1, m=2, B=1, equal weights, rho=2. The marginal-ratio region is
    # {x_j >= 1/(2nm), x_j' <= 2 m B / ||B||_1}; CES gradient ratios reduce to
    # (d_j/d_j') (x_j/x_j')^(rho-1), so the floor is (1/4 / 4)^1 = 1/16.
    mkt = validate([1.0], [DisutilitySpec.ces([1.0, 1.0], 2.0)])
    nu = compute_nu(mkt)[0]
    assert nu == pytest.approx(1.0 / 16.0, rel=1e-12)

    rho, n, m, b, bsum = 2.0, 1, 2, 1.0, 1.0
    lo_j = 1.0 / (2 * n * m)
    hi_jp = 2 * m * b / bsum
    grid_j = np.linspace(lo_j, 8.0, 400)
    grid_jp = np.linspace(1e-3, hi_jp, 400)
    ratios = (grid_j[:, None] / grid_jp[None, :]) ** (rho - 1.0)
    assert ratios.min() == pytest.approx(nu, rel=1e-6)


def test_nu_permutation_invariant(rng):
    w = rng.uniform(0.5, 2.0, size=(3, 4))
    perm = rng.permutation(4)
    m1 = validate([1.0, 2.0, 0.5], [DisutilitySpec.ces(wi, 1.5) for wi in w])
    m2 = validate([1.0, 2.0, 0.5], [DisutilitySpec.ces(wi[perm], 1.5) for wi in w])
    assert np.allclose(compute_nu(m1), compute_nu(m2))


# --- moduli ------------------------------------------------------------------

def test_ell0_example(example_market):
    mod = compute_moduli(example_market)
    assert mod.ell0 == pytest.approx(1.0 / 6.0, rel=1e-14)


def test_ell0_scales_with_budgets_linear(example_market):
    scaled = validate(np.asarray(example_market.budgets) * 7.0,
                      example_market.disutilities)
    m1, m2 = compute_moduli(example_market), compute_moduli(scaled)
    assert np.allclose(m1.nu, m2.nu)
    assert m2.ell0 == pytest.approx(7.0 * m1.ell0, rel=1e-14)


def _sup_norm_on_unit_sublevel(weights, rho):
    # Brute force over the boundary of {x >= 0 : d(x) <= 1} for m = 2.
    d1, d2 = weights
    x1 = np.linspace(0.0, d1 ** (-1.0 / rho), 20001)
    x2 = ((1.0 - d1 * x1**rho).clip(0.0) / d2) ** (1.0 / rho)
    return max(x1.max(), x2.max())


@pytest.mark.parametrize("weights, rho, expected", [
    ((1.0, 1.0), 2.0, 1.0),
    ((1.0, 4.0), 2.0, 1.0),
])
def test_r_inf_closed_form(weights, rho, expected):
    mkt = validate([1.0], [DisutilitySpec.ces(list(weights), rho)])
    mod = compute_moduli(mkt)
    assert mod.r_inf[0] == pytest.approx(expected, rel=1e-12)
    assert mod.r_inf[0] == pytest.approx(
        _sup_norm_on_unit_sublevel(weights, rho), abs=1e-6)


def test_r_inf_matches_bruteforce_random(rng):
    for _ in range(5):
        w = rng.uniform(0.3, 3.0, size=2)
        rho = rng.uniform(1.2, 4.0)
        mkt = validate([1.0], [DisutilitySpec.ces(w, rho)])
        assert compute_moduli(mkt).r_inf[0] == pytest.approx(
            _sup_norm_on_unit_sublevel(w, rho), abs=1e-6)


def test_delta_lb():
    lin = validate([1.0], [DisutilitySpec.linear([1.0, 3.0])])
    assert compute_moduli(lin).delta_lb[0] == pytest.approx(0.25)
    ces = validate([1.0], [DisutilitySpec.ces([1.0, 1.0], 2.0)])
    assert compute_moduli(ces).delta_lb[0] == pytest.approx(2 ** -0.5)
    # the bound is feasible: d(delta * 1) <= 1
    from choremarket.demand import disutility
    for mkt in (lin, ces):
        mod = compute_moduli(mkt)
        assert disutility(mkt.disutilities[0],
                          np.full(2, mod.delta_lb[0])) <= 1.0 + 1e-12


def test_warm_start_step_equals_cap():
    # ||B||_1 (min nu)^2 / (18 m^2) is algebraically the cap ell0^2/(2||B||_1).
    mkt = validate([1.0, 0.5], [DisutilitySpec.ces([1.0, 2.0], 3.0),
                                DisutilitySpec.ces([2.0, 1.0], 3.0)])
    mod = compute_moduli(mkt)
    warm = mkt.budget_sum * float(mod.nu.min()) ** 2 / (18.0 * mkt.m**2)
    assert warm == pytest.approx(mod.step_cap(mkt.budget_sum), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(2, 4), st.integers(0, 10**6))
def test_moduli_positive(n, m, seed):
    r = np.random.default_rng(seed)
    specs = [DisutilitySpec.ces(r.uniform(0.2, 5.0, m), r.uniform(1.01, 4.0))
             if r.random() < 0.5 else DisutilitySpec.linear(r.uniform(0.2, 5.0, m))
             for _ in range(n)]
    mkt = validate(r.uniform(0.1, 3.0, n), specs)
    mod = compute_moduli(mkt)
    assert mod.ell0 > 0
    assert np.all(mod.nu > 0) and np.all(mod.r_inf > 0) and np.all(mod.delta_lb > 0)
    assert np.all(mod.delta_lb <= mod.r_inf + 1e-15)


# --- JSON format -------------------------------------------------------------

def _doc():
    return {
        "chores": 2,
        "agents": [
            {"budget": 1.0, "disutility": {"kind": "linear", "d": [1.0, 2.0]}},
            {"budget": 1.0, "disutility": {"kind": "ces", "d": [2.0, 1.0], "rho": 2.0}},
        ],
    }


def test_market_from_dict_roundtrip():
    mkt = market_from_dict(_doc())
    assert mkt.n == 2 and not mkt.disutilities[0].rho
    assert market_from_dict(mkt.to_dict()).budget_sum == mkt.budget_sum


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(extra=1),
    lambda d: d["agents"][0].update(name="a"),
    lambda d: d["agents"][0]["disutility"].update(kind="quadratic"),
    lambda d: d["agents"][0]["disutility"].update(rho=1.0),   # rho on linear
    lambda d: d["agents"][1]["disutility"].pop("rho"),
    lambda d: d.pop("chores"),
    lambda d: d["agents"][0].pop("budget"),
    lambda d: d["agents"][0]["disutility"].update(d="nope"),
])
def test_market_from_dict_rejects(mutate):
    doc = _doc()
    mutate(doc)
    with pytest.raises(InstanceFormatError):
        market_from_dict(doc)
