import numpy as np
import pandas as pd
import pytest

from mobistore.casestudy import (FIXTURES, MODEL_3, SEMI, CaseStudyError, VehicleProfile, dataset_from_frames,
                                 fixture_paths, haversine_miles, ingest_lmps, lmp_spread, load_fixture,
                                 run_case_study, stationary_comparison, synthetic_frames, travel_matrices,
                                 unreachable_pairs, vehicle_unit)
from mobistore.storage import TransportModel
from oracles import milp_relocation

DAY = "2021-05-04"


def _frames(values, names=("A", "B"), hours=24, spacing_mi=25.0):
    step = float(np.degrees(spacing_mi / 3958.8))
    stamps = pd.date_range(DAY, periods=hours, freq="h")
    lam = np.broadcast_to(np.asarray(values, dtype=float), (hours, len(names)))
    prices = pd.DataFrame({"timestamp": np.repeat(stamps, len(names)), "node": list(names) * hours,
                           "lmp_usd_per_mwh": lam.ravel()})
    meta = pd.DataFrame({"node": list(names), "lat": [39.0 + k * step for k in range(len(names))],
                         "lon": [-77.0] * len(names)})
    return prices, meta


def test_missing_hours_are_listed():
    prices, meta = _frames([10.0, 20.0])
    gappy = prices[~((prices.timestamp == pd.Timestamp(f"{DAY} 05:00")) & (prices.node == "B"))]
    gappy = gappy[gappy.timestamp != pd.Timestamp(f"{DAY} 07:00")]
    with pytest.raises(CaseStudyError, match="missing hours") as err:
        dataset_from_frames(gappy, meta)
    assert "05:00" in str(err.value) and "07:00" in str(err.value)


def test_duplicates_and_unknown_nodes_rejected():
    prices, meta = _frames([10.0, 20.0])
    with pytest.raises(CaseStudyError, match="duplicate"):
        dataset_from_frames(pd.concat([prices, prices.iloc[:1]]), meta)
    extra = pd.concat([prices, pd.DataFrame({"timestamp": [prices.timestamp[0]], "node": ["Z"],
                                             "lmp_usd_per_mwh": [1.0]})])
    with pytest.raises(CaseStudyError, match="not in metadata"):
        dataset_from_frames(extra, meta)
    with pytest.raises(CaseStudyError, match="without prices"):
        dataset_from_frames(prices[prices.node == "A"], meta)


def test_ingest_requires_columns(tmp_path):
    prices, meta = _frames([1.0, 2.0])
    p, m = tmp_path / "p.csv", tmp_path / "m.csv"
    prices.rename(columns={"lmp_usd_per_mwh": "price"}).to_csv(p, index=False)
    meta.to_csv(m, index=False)
    with pytest.raises(CaseStudyError):
        ingest_lmps(p, m)


def test_day_needs_full_coverage():
    ds = dataset_from_frames(*_frames([1.0, 2.0], hours=30))
    assert len(ds.dates) == 2
    stamps, lam = ds.day(DAY)
    assert lam.shape == (24, 2)
    with pytest.raises(CaseStudyError):
        ds.day("2021-05-05")


def test_travel_times_and_costs():
    ds = dataset_from_frames(*_frames([1.0, 2.0], spacing_mi=50.0))
    D, cost = travel_matrices(ds, MODEL_3)
    assert D[0, 1] == pytest.approx(1.0, rel=1e-9)
    assert cost[0, 1] == pytest.approx(2.0, rel=1e-9)
    _, semi_cost = travel_matrices(ds, SEMI)
    assert semi_cost[0, 1] == pytest.approx(8.0, rel=1e-9)
    assert MODEL_3.kappa_usd_per_h == pytest.approx(2.0)


def test_far_pairs_are_unreachable_and_colocated_free():
    ds = dataset_from_frames(*_frames([1.0, 2.0, 3.0], names=("A", "B", "C"), spacing_mi=30.0))
    D, cost = travel_matrices(ds, MODEL_3)
    assert np.isinf(D[0, 2]) and np.isinf(cost[2, 0])
    assert unreachable_pairs(ds, MODEL_3) == [("A", "C"), ("C", "A")]
    assert haversine_miles(39.0, -77.0, 39.0, -77.0) == 0.0


def test_vehicle_profile_validation_and_units():
    with pytest.raises(CaseStudyError):
        VehicleProfile("bad", 10.0, 5.0, initial_soc_fraction=1.5)
    ds = load_fixture("synthetic2")
    unit = vehicle_unit(ds, MODEL_3)
    assert unit.capacity == pytest.approx(0.05)
    assert unit.power_rating() == pytest.approx(0.011) and unit.rating_derivative == 0.0
    assert unit.initial_soc == pytest.approx(0.02)
    pinned = vehicle_unit(ds, MODEL_3, stationary_at="B")
    assert pinned.admissible_buses == (1,) and pinned.initial_bus == 1


def test_flat_prices_earn_nothing():
    ds = dataset_from_frames(*_frames([30.0, 30.0]))
    empty = VehicleProfile("empty", 50.0, 11.0)
    rep = run_case_study(ds, empty, DAY)
    assert rep.net_usd == pytest.approx(0.0, abs=1e-9)
    assert set(rep.trajectory) == {0} and rep.travel_usd == 0.0


def test_two_node_fixture_matches_milp():
    ds = load_fixture("synthetic2")
    rep = run_case_study(ds, MODEL_3, DAY)
    _, lam = ds.day(DAY)
    unit = vehicle_unit(ds, MODEL_3)
    D, _ = travel_matrices(ds, MODEL_3)
    value, _, _ = milp_relocation(unit, lam, TransportModel(D, 1.0, MODEL_3.kappa_usd_per_h))
    assert rep.net_usd == pytest.approx(value, abs=1e-6)
    # sell one hour at full power at the spike, pay one 25 mile trip
    assert rep.net_usd == pytest.approx(0.011 * 100.0 - 1.0, abs=1e-6)
    assert rep.gross_usd - rep.travel_usd == pytest.approx(rep.net_usd)


def test_report_tables_are_consistent():
    ds = load_fixture("synthetic3")
    rep = run_case_study(ds, MODEL_3, DAY)
    trace = rep.trace_frame()
    assert len(trace) == 24
    assert trace.soc_mwh.between(-1e-9, 0.05 + 1e-9).all()
    assert np.all(np.abs(trace.charge_mwh) <= 0.011 + 1e-9)
    table = rep.table_frame()
    assert table.value_usd.sum() == pytest.approx(rep.gross_usd)
    assert table.soc_change_mwh.sum() == pytest.approx(trace.soc_mwh.iloc[-1] - 0.02)
    assert rep.summary()["trajectory"] == list(trace.node)
    assert rep.bound_usd > 0


def test_mobile_beats_every_stationary_battery():
    ds = load_fixture("synthetic3")
    out = stationary_comparison(ds, MODEL_3, DAY, h=0.0005)
    # the pinned batteries start at their own node, so compare like with like
    assert out["mobile"] >= out[ds.nodes[0]] - 1e-9
    for node in ds.nodes:
        mobile = run_case_study(ds, MODEL_3, DAY, h=0.0005, start=node).net_usd
        assert mobile >= out[node] - 1e-9


def test_spread_quantiles():
    ds = dataset_from_frames(*_frames([10.0, 20.0, 40.0], names=("A", "B", "C"), spacing_mi=10.0))
    spread = lmp_spread(ds, DAY)
    row = spread.iloc[0]
    assert (row["min"], row.q1, row["median"], row.q3, row["max"]) == (10.0, 15.0, 20.0, 30.0, 40.0)


@pytest.mark.parametrize("name", FIXTURES)
def test_shipped_csvs_match_generator(name):
    prices, meta = synthetic_frames(name)
    p_path, m_path = fixture_paths(name)
    on_disk = pd.read_csv(p_path)
    pd.testing.assert_frame_equal(on_disk, prices.reset_index(drop=True), check_dtype=False)
    pd.testing.assert_frame_equal(pd.read_csv(m_path), meta, check_dtype=False)


def test_unknown_fixture():
    with pytest.raises(CaseStudyError):
        fixture_paths("nowhere")


def test_empty_vehicle_charges_moves_once_and_sells_at_the_spike():
    ds = load_fixture("synthetic2")
    empty = VehicleProfile("empty", 50.0, 11.0)
    rep = run_case_study(ds, empty, DAY)
    moves = [t for t in range(23) if rep.trajectory[t] != rep.trajectory[t + 1]]
    assert len(moves) == 1 and rep.trajectory[-1] == 1
    trace = rep.trace_frame()
    assert trace.charge_mwh[trace.node == "A"].min() >= -1e-12
    assert trace.charge_mwh[18] == pytest.approx(-0.011)
    _, lam = ds.day(DAY)
    D, _ = travel_matrices(ds, empty)
    value, _, _ = milp_relocation(vehicle_unit(ds, empty), lam, TransportModel(D, 1.0, empty.kappa_usd_per_h))
    assert rep.net_usd == pytest.approx(value, abs=1e-6) and rep.net_usd == pytest.approx(0.1, abs=1e-9)


@pytest.mark.parametrize("vehicle", [MODEL_3, SEMI])
def test_more_power_never_hurts(vehicle):
    ds = load_fixture("synthetic3")
    fast = {MODEL_3.name: 100.0, SEMI.name: 750.0}[vehicle.name]
    slow = run_case_study(ds, vehicle, DAY).net_usd
    assert run_case_study(ds, vehicle.with_power(fast), DAY).net_usd >= slow - 1e-9


def test_spread_edge_cases():
    flat = lmp_spread(dataset_from_frames(*_frames([5.0, 5.0, 5.0], names=("A", "B", "C"), spacing_mi=1.0)), DAY)
    assert (flat.q3 - flat.q1).abs().max() == 0.0
    ramp = lmp_spread(dataset_from_frames(*_frames([1.0, 2.0, 3.0], names=("A", "B", "C"), spacing_mi=1.0)), DAY)
    assert (ramp["median"] == 2.0).all()
    row = ramp.iloc[0]
    assert row["min"] <= row.q1 <= row["median"] <= row.q3 <= row["max"]
