import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobistore.fixtures import random_network, triangle_network
from mobistore.network import Line, NetworkError, PowerNetwork, build_shift_factors, validate


def _two_bus(limit=1.0):
    return PowerNetwork([1.0, 1.0], [0.0, 0.0], [Line(0, 1, 2.0, limit)], [[0.0, 1.0]])


def test_two_bus_shift_factors():
    sf = build_shift_factors(_two_bus())
    # slack at bus 0: injecting at bus 1 pushes flow 1 -> 0, i.e. negative on the 0 -> 1 line
    np.testing.assert_allclose(sf.H, [[0.0, -1.0], [0.0, 1.0]])
    np.testing.assert_allclose(sf.limits, [1.0, 1.0])


def test_triangle_splits_flow_by_impedance():
    net = triangle_network([[0.0, 0.0, 0.0]])
    sf = build_shift_factors(net)
    # one unit from bus 3 to bus 1: 2/3 direct, 1/3 via bus 2
    p = np.array([-1.0, 0.0, 1.0])
    np.testing.assert_allclose(sf.forward @ p, [2 / 3, 1 / 3, 1 / 3], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 6))
def test_reference_choice_does_not_change_balanced_flows(seed, n):
    rng = np.random.default_rng(seed)
    net = random_network(rng, n, 1)
    p = rng.normal(size=n)
    p -= p.mean()
    a = build_shift_factors(net, "slack").H @ p
    b = build_shift_factors(net, "distributed").H @ p
    np.testing.assert_allclose(a, b, atol=1e-9)
    # directed rows come in +/- pairs
    np.testing.assert_allclose(a[0::2], -a[1::2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 6))
def test_flows_conserve_injections(seed, n):
    rng = np.random.default_rng(seed)
    net = random_network(rng, n, 1)
    p = rng.normal(size=n)
    p -= p.mean()
    f = build_shift_factors(net).forward @ p
    inc = np.zeros((net.n_lines, n))
    for j, ln in enumerate(net.lines):
        inc[j, ln.from_bus], inc[j, ln.to_bus] = 1.0, -1.0
    np.testing.assert_allclose(inc.T @ f, p, atol=1e-9)


def test_validate_reports_problems():
    net = PowerNetwork([1.0, 0.0, 1.0], [0, 0, 0], [Line(0, 1, -1.0, 1.0), Line(0, 0, 1.0, 0.0)],
                       [[0.0, 0.0, 0.0]], slack=5)
    codes = {v.code for v in validate(net)}
    assert {"NonStrictlyConvexCost", "BadSusceptance", "SelfLoop", "BadLimit", "SlackOutOfRange",
            "Disconnected"} <= codes


def test_valid_network_has_no_violations():
    assert validate(triangle_network([[1.0, 0.0, 0.0]])) == []


def test_disconnected_network_rejected_by_shift_factors():
    net = PowerNetwork([1.0] * 3, [0.0] * 3, [Line(0, 1, 1.0, 1.0)], [[0.0] * 3])
    with pytest.raises(NetworkError, match="disconnected"):
        build_shift_factors(net)


def test_tree_detection():
    assert _two_bus().is_tree()
    assert not triangle_network([[0.0] * 3]).is_tree()


def test_network_arrays_are_read_only():
    net = _two_bus()
    with pytest.raises(ValueError):
        net.loads[0, 0] = 3.0
