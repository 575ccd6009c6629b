import warnings

import numpy as np
import pytest

from mobistore.dispatch import solve_mped_s, solve_rapid_mped_s
from mobistore.fixtures import example1, example2, example3
from mobistore.marginal import (BindingPattern, MarginalValueWarning, binding_pattern, marginal_value_report,
                                mv_general, mv_rapid, mv_stationary, mv_wire, positive_increments,
                                radial_decomposition_check, reconstruct_duals, solve_price_arbitrage)
from mobistore.storage import MobileStorageUnit


def test_positive_increments_close_with_zero():
    np.testing.assert_allclose(positive_increments([1.0, 3.0, 2.0]), [2.0, 0.0, 0.0])
    np.testing.assert_allclose(positive_increments([-2.0]), [2.0])


def test_rapid_value_equals_upper_soc_duals():
    inst = example2()
    sol = solve_rapid_mped_s(inst.network, inst.fleet, inst.trajectories)
    mv = mv_rapid(sol, 1)
    assert mv.value == pytest.approx(14.0, abs=1e-6)
    assert mv.agrees
    assert mv_stationary(sol, 0).value == pytest.approx(7.0, abs=1e-6)
    assert mv_stationary(sol, 0, k=0).value == pytest.approx(7.0, abs=1e-5)


def test_example3_relation():
    inst = example3()
    sol = solve_rapid_mped_s(inst.network, inst.fleet, inst.trajectories)
    check = radial_decomposition_check(sol, 2, 0, 0)
    assert (check.mobile, check.wires, check.stationary) == pytest.approx((13.0, 8.0, 6.0), abs=1e-5)
    assert check.relation == "<" and not check.hypotheses_hold  # loop network


def test_radial_equality_holds_on_a_line():
    inst = example1()
    sol = solve_rapid_mped_s(inst.network, inst.fleet, inst.trajectories)
    check = radial_decomposition_check(sol, 0, 1, 0)
    assert check.hypotheses_hold and check.equality


def test_wire_values_are_line_duals():
    inst = example2()
    sol = solve_rapid_mped_s(inst.network, inst.fleet, inst.trajectories)
    per, total = mv_wire(sol)
    np.testing.assert_allclose(per, sol.beta)
    assert total[0] == pytest.approx(sol.beta[:, 0].sum())


def test_binding_pattern_and_dual_reconstruction():
    # rating 0.6 * capacity: charge 0.6 then top up 0.4, sell 0.6 then the last 0.4,
    # so revenue is (-0.6*1 - 0.4*2 + 0.6*9 + 0.4*8) * capacity = 7.2 * capacity
    unit = MobileStorageUnit(1.0, 0.6, 0.0, (0,), 0)
    prices = np.array([1.0, 2.0, 9.0, 8.0])
    arb = solve_price_arbitrage(unit, prices)
    np.testing.assert_allclose(arb.u, [0.6, 0.4, -0.6, -0.4], atol=1e-7)
    pat = arb.pattern
    assert pat.reliable and pat.closes_at_end
    assert pat.energy == (1, 3) and pat.power == (0, 2)
    mu, opp = reconstruct_duals(pat, prices)
    np.testing.assert_allclose(opp[[0, 2]], [1.0, 1.0])
    assert mu.sum() + unit.rating_derivative * opp.sum() == pytest.approx(7.2)


def test_ambiguous_period_when_emptied_at_full_power():
    unit = MobileStorageUnit(1.0, 0.5, 0.0, (0,), 0)
    arb = solve_price_arbitrage(unit, np.array([1.0, 5.0, 2.0, 8.0]))
    assert arb.pattern.ambiguous == (1, 3) and not arb.pattern.reliable


def test_pattern_flags_free_periods():
    unit = MobileStorageUnit(1.0, 0.25, 0.0, (0,), 0)
    pat = binding_pattern(np.array([0.1, 0.0, -0.1]), unit)
    assert pat.free and not pat.reliable


def test_pattern_from_energy_set_sigma():
    pat = BindingPattern.from_energy_set([1, 3], 4)
    assert pat.energy == (1, 3) and pat.power == (0, 2)
    assert pat.sigma == {0: 1, 2: 3}


def test_general_value_matches_reconstruction():
    from mobistore.dispatch import solve_dispatch
    from mobistore.fixtures import random_dispatch_instance

    checked = 0
    for seed in range(40):
        inst = random_dispatch_instance(seed, 3, 4)
        sol = solve_dispatch(inst.network, inst.fleet, inst.trajectories)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MarginalValueWarning)
            mvs = [mv_general(sol, k) for k in range(2)]
        for mv in mvs:
            if mv.reconstructed is not None:
                checked += 1
                assert mv.agrees, (seed, mv.dual_value, mv.reconstructed)
    assert checked >= 10


def test_degenerate_dispatch_skips_reconstruction():
    from dataclasses import replace
    from mobistore.storage import Fleet

    inst = example2()
    units = tuple(replace(u, power_slope=0.8, power_intercept=0.0) for u in inst.fleet)
    sol = solve_mped_s(inst.network, Fleet(units), inst.trajectories)
    assert sol.degenerate
    with pytest.warns(MarginalValueWarning, match="degenerate"):
        mv = mv_general(sol, 1)
    assert mv.reconstructed is None and mv.agrees is None


def test_report_collects_everything():
    inst = example2()
    sol = solve_rapid_mped_s(inst.network, inst.fleet, inst.trajectories)
    rep = marginal_value_report(sol)
    assert set(rep.mobile) == {0, 1}
    np.testing.assert_allclose(rep.stationary, [7.0, 0.0, 0.0], atol=1e-6)
    assert rep.wire.shape == (6,)


def test_arbitrage_revenue_nonnegative_and_bounded():
    rng = np.random.default_rng(7)
    unit = MobileStorageUnit(2.0, 0.3, 0.0, (0,), 0)
    for _ in range(10):
        p = rng.uniform(-10, 10, 5)
        arb = solve_price_arbitrage(unit, p, check_unique=False)
        assert arb.objective >= -1e-8
        assert arb.objective <= unit.capacity * positive_increments(p).sum() + 1e-6
