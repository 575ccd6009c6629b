import os
import subprocess
import sys
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobistore import _kernels_py
from mobistore.fixtures import random_price_instance
from mobistore.graph import TimeExpandedGraph, bellman_ford, longest_path, shortest_path
from mobistore.relocation import (RelocationError, RelocationWarning, approx_bound, brute_force_relocation,
                                  enumerate_patterns, relocate, relocate_approx, relocate_exact,
                                  relocate_fleet, relocate_rapid)
from mobistore.storage import Fleet, MobileStorageUnit, TransportModel, stationary_unit
from oracles import brute_paths

try:
    from mobistore import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _random_graph(seed, layers, width):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(layers - 1, width, width))
    W[rng.uniform(size=W.shape) < 0.3] = np.inf
    term = rng.normal(size=width)
    return TimeExpandedGraph(W, term, int(rng.integers(width)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 6), st.integers(1, 5))
def test_shortest_path_matches_edge_relaxation(seed, layers, width):
    g = _random_graph(seed, layers, width)
    ref = bellman_ford(g)
    if not np.isfinite(ref):
        with pytest.raises(ValueError):
            shortest_path(g)
        return
    res = shortest_path(g)
    assert res.cost == pytest.approx(ref, abs=1e-9)
    walked = sum(g.weights[l, a, b] for l, (a, b) in enumerate(zip(res.nodes[:-1], res.nodes[1:])))
    assert walked + g.terminal[res.nodes[-1]] == pytest.approx(res.cost, abs=1e-9)


def test_longest_path_is_negated_shortest():
    g = TimeExpandedGraph(np.array([[[1.0, 5.0], [0.0, 2.0]]]), np.array([0.0, -1.0]), 0)
    assert longest_path(g).cost == pytest.approx(4.0)
    assert longest_path(g).nodes == (0, 1)


def test_graph_rejects_bad_weights():
    with pytest.raises(ValueError):
        TimeExpandedGraph(np.zeros((1, 2, 3)), np.zeros(2), 0)
    with pytest.raises(ValueError):
        TimeExpandedGraph(np.full((1, 2, 2), -np.inf), np.zeros(2), 0)


@pytest.mark.skipif(_kernels_c is None, reason="compiled kernels not built")
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 5), st.integers(1, 4))
def test_compiled_kernels_match_numpy(seed, layers, width):
    g = _random_graph(seed, layers, width)
    ca, cb = _kernels_c.backward_min_plus(g.weights, g.terminal)
    pa, pb = _kernels_py.backward_min_plus(g.weights, g.terminal)
    np.testing.assert_allclose(ca, pa)
    finite = np.isfinite(pa[:-1])
    np.testing.assert_array_equal(np.asarray(cb)[finite], np.asarray(pb)[finite])

    rng = np.random.default_rng(seed)
    n, z = width, 3
    D = rng.uniform(0, 0.5, (n, n))
    np.fill_diagonal(D, 0.0)
    limits = rng.uniform(0.1, 1.0, (n, n))
    adm = rng.uniform(size=n) < 0.8
    args = (rng.normal(size=n), D, 1.5, limits, 0.25, z, adm)
    np.testing.assert_allclose(_kernels_c.soc_edge_weights(*args), _kernels_py.soc_edge_weights(*args))


def test_pure_python_switch():
    env = dict(os.environ, MOBISTORE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import mobistore.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_rapid_matches_enumeration(seed):
    inst = random_price_instance(seed, 3, 4)
    unit = MobileStorageUnit(inst.unit.capacity, 1.0, 0.0, inst.unit.admissible_buses, inst.unit.initial_bus)
    fast = relocate_rapid(unit, inst.prices, inst.transport)
    ref = brute_force_relocation(unit, inst.prices, inst.transport, evaluator="rapid")
    assert fast.objective == pytest.approx(ref.objective, abs=1e-9)
    assert fast.diagnostics["path_weight"] == pytest.approx(-fast.objective, abs=1e-9)


def test_rapid_stays_put_when_travel_is_expensive():
    prices = np.array([[1.0, 0.0], [2.0, 10.0]])
    unit = MobileStorageUnit(1.0, 1.0, 0.0, (0, 1), 0)
    cheap = relocate_rapid(unit, prices, TransportModel(np.array([[0, .5], [.5, 0]]), 1.0, 1.0))
    dear = relocate_rapid(unit, prices, TransportModel(np.array([[0, .5], [.5, 0]]), 1.0, 40.0))
    assert cheap.trajectory == (0, 1) and cheap.objective == pytest.approx(8.5)
    assert dear.trajectory == (0, 0) and dear.objective == pytest.approx(1.0)


def test_exact_on_admissible_instances_matches_enumeration():
    hits = 0
    for seed in range(60):
        inst = random_price_instance(seed, 3, 4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RelocationWarning)
            try:
                res = relocate_exact(inst.unit, inst.prices, inst.transport)
            except RelocationError:
                continue
        if res.algorithm != "exact":
            continue
        hits += 1
        value, _ = brute_paths(inst.unit, inst.prices, inst.transport)
        assert res.objective == pytest.approx(value, abs=1e-6), seed
    assert hits >= 5


def test_exact_guards_horizon():
    inst = random_price_instance(0, 2, 5)
    with pytest.raises(RelocationError, match="horizon"):
        relocate_exact(inst.unit, inst.prices, inst.transport, max_horizon=4)


def test_pattern_enumeration_counts():
    pats = list(enumerate_patterns(4))
    assert len({p.key for p in pats}) == len(pats) > 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_approx_within_bound_of_optimum(seed):
    inst = random_price_instance(seed, 3, 4)
    opt, _ = brute_paths(inst.unit, inst.prices, inst.transport)
    res = relocate_approx(inst.unit, inst.prices, inst.transport, inst.unit.capacity / 8)
    assert res.objective <= opt + 1e-6
    assert res.objective >= opt - res.bound - 1e-6
    assert res.bound == pytest.approx(approx_bound(inst.prices, inst.unit.initial_bus, res.soc_step))
    # reported value is what the schedule actually earns
    assert res.objective == pytest.approx(res.diagnostics["dp_value"], abs=1e-9)
    soc = res.soc
    assert np.all(soc >= -1e-9) and np.all(soc <= inst.unit.capacity + 1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_approx_conventions_agree_and_refine(seed):
    inst = random_price_instance(seed, 3, 4)
    args = (inst.unit, inst.prices, inst.transport)
    coarse = relocate_approx(*args, inst.unit.capacity / 4)
    floor = relocate_approx(*args, inst.unit.capacity / 4, convention="floor")
    fine = relocate_approx(*args, inst.unit.capacity / 8)
    assert floor.objective == pytest.approx(coarse.objective, abs=1e-9)
    assert fine.objective >= coarse.objective - 1e-9  # nested grids


def test_approx_rejects_bad_step():
    inst = random_price_instance(1)
    with pytest.raises(ValueError):
        relocate_approx(inst.unit, inst.prices, inst.transport, 0.0)
    with pytest.raises(ValueError):
        relocate_approx(inst.unit, inst.prices, inst.transport, 0.1, convention="ceil")


def test_dispatcher_and_errors():
    inst = random_price_instance(2)
    args = (inst.unit, inst.prices, inst.transport)
    assert relocate(*args, "approx", soc_step=0.25).soc_step == pytest.approx(0.25)
    assert relocate(*args, "brute").algorithm == "brute-lp"
    with pytest.raises(ValueError, match="unknown algorithm"):
        relocate(*args, "greedy")
    with pytest.raises(ValueError, match="buses"):
        relocate_rapid(inst.unit, inst.prices[:, :2], inst.transport)
    with pytest.raises(RelocationError, match="enumeration limit"):
        brute_force_relocation(*args, limit=5)


def test_fleet_routing_is_per_unit():
    inst = random_price_instance(4)
    fleet = Fleet((inst.unit, stationary_unit(1, 1.0)), inst.transport)
    serial = relocate_fleet(fleet, inst.prices, "approx", soc_step=0.25)
    threaded = relocate_fleet(fleet, inst.prices, "approx", soc_step=0.25, workers=2)
    assert [r.trajectory for r in serial] == [r.trajectory for r in threaded]
    assert serial[1].trajectory == (1,) * inst.prices.shape[0]
    assert serial[1].travel_cost == 0.0
