import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobistore.dispatch import (DispatchInfeasible, lmps, operation_cost, solve_dispatch, solve_mped_s,
                                solve_rapid_mped_s)
from mobistore.fixtures import example2, random_dispatch_instance
from mobistore.network import Line, PowerNetwork
from mobistore.storage import Fleet, MobileStorageUnit, TransportModel, stationary_unit


def test_example_prices_and_congestion():
    inst = example2()
    sol = solve_rapid_mped_s(inst.network, inst.fleet, inst.trajectories)
    np.testing.assert_allclose(sol.lmp, [[9, 1, 2], [16, 1, 1]], atol=1e-6)
    np.testing.assert_allclose(sol.beta[0], [6, 0, 9, 0, 0, 0], atol=1e-6)
    np.testing.assert_allclose(lmps(sol), sol.lmp)
    # both storage units end empty and were full in period 1
    np.testing.assert_allclose(sol.soc[:, 0], [0.5, 0.5], atol=1e-7)
    np.testing.assert_allclose(sol.soc[:, 1], [0.0, 0.0], atol=1e-7)


def test_general_model_with_large_rating_matches_rapid():
    inst = example2()
    a = solve_rapid_mped_s(inst.network, inst.fleet, inst.trajectories)
    b = solve_mped_s(inst.network, inst.fleet, inst.trajectories)
    assert a.objective == pytest.approx(b.objective, abs=1e-6)
    np.testing.assert_allclose(a.lmp, b.lmp, atol=1e-5)
    assert a.omega is None and b.omega is not None


def test_no_storage_single_period_is_economic_dispatch():
    # two generators, uncongested: equal marginal cost 2 a g + b at both buses
    net = PowerNetwork([1.0, 2.0], [0.0, 0.0], [Line(0, 1, 1.0, 100.0)], [[0.0, 3.0]])
    sol = solve_dispatch(net, Fleet(()), [])
    np.testing.assert_allclose(sol.g[0], [2.0, 1.0], atol=1e-7)
    np.testing.assert_allclose(sol.lmp[0], [4.0, 4.0], atol=1e-6)


def test_kkt_residuals_of_dispatch_are_small():
    inst = random_dispatch_instance(3, 3, 4)
    sol = solve_dispatch(inst.network, inst.fleet, inst.trajectories)
    assert max(sol.qp.stationarity, sol.qp.primal_infeasibility, sol.qp.complementarity) < 1e-6


def test_infeasible_dispatch_names_rows():
    # bus 1 has no generator and the only line cannot carry its load
    net = PowerNetwork([1.0, 1.0], [0.0, 0.0], [Line(0, 1, 1.0, 0.5)], [[0.0, 2.0]], gen_max=[np.inf, 0.0])
    with pytest.raises(DispatchInfeasible) as err:
        solve_dispatch(net, Fleet(()), [])
    assert any(lbl[0] == "line" for lbl in err.value.binding)


def test_travel_time_limits_power():
    net = PowerNetwork([1.0, 1.0], [0.0, 0.0], [Line(0, 1, 1.0, 100.0)], [[1.0, 0.0], [5.0, 0.0]])
    D = np.array([[0.0, 0.5], [0.5, 0.0]])
    unit = MobileStorageUnit(10.0, 0.0, 1.0, (0, 1), 0)
    sol = solve_mped_s(net, Fleet((unit,), TransportModel(D)), [(0, 1)])
    np.testing.assert_allclose(sol.operating_time[0], [0.5, 1.0])
    assert abs(sol.u[0, 0]) <= 0.5 + 1e-7


def test_licq_flag_on_parallel_congested_lines():
    lines = [Line(0, 1, 1.0, 0.5), Line(0, 1, 1.0, 0.5)]
    parallel = solve_dispatch(PowerNetwork([1.0, 3.0], [0.0, 0.0], lines, [[0.0, 5.0]]), Fleet(()), [])
    single = solve_dispatch(PowerNetwork([1.0, 3.0], [0.0, 0.0], lines[:1], [[0.0, 5.0]]), Fleet(()), [])
    assert parallel.degenerate and not single.degenerate
    # prices stay well defined even though the line duals are not
    np.testing.assert_allclose(parallel.lmp, [[2.0, 24.0]], atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 5), st.booleans())
def test_storage_never_increases_cost(seed, rapid):
    inst = random_dispatch_instance(seed, 3, 3, rapid=rapid)
    with_storage = operation_cost(inst.network, inst.fleet, inst.trajectories, rapid=rapid)
    without = operation_cost(inst.network, inst.fleet, inst.trajectories, [1e-9, 1e-9], rapid=rapid)
    assert with_storage <= without + 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 5))
def test_dispatch_balances_and_respects_limits(seed):
    inst = random_dispatch_instance(seed, 3, 4)
    sol = solve_dispatch(inst.network, inst.fleet, inst.trajectories)
    np.testing.assert_allclose(sol.g.sum(axis=1) - sol.u.sum(axis=0), inst.network.loads.sum(axis=1), atol=1e-6)
    assert np.all(sol.flows <= sol.shift.limits + 1e-6)
    caps = np.array([u.capacity for u in inst.fleet])[:, None]
    assert np.all(sol.soc >= -1e-7) and np.all(sol.soc <= caps + 1e-7)
