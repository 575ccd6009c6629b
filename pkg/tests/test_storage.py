import numpy as np
import pytest

from mobistore.storage import (Fleet, MobileStorageUnit, StorageError, TransportModel, relocation_cost,
                               snapshot_matrices, stationary_unit, trajectories_from_snapshots, travel_split)


def test_power_rating_is_affine():
    u = MobileStorageUnit(2.0, 0.5, 0.1, (0, 1), 0)
    assert u.power_rating() == pytest.approx(1.1)
    assert u.power_rating(4.0) == pytest.approx(2.1)
    assert u.rating_derivative == 0.5
    assert u.mobile and not stationary_unit(0, 1.0).mobile


def test_unit_invariants():
    with pytest.raises(StorageError):
        MobileStorageUnit(1.0, 0.5, 0.0, (0,), 0, initial_soc=2.0)
    with pytest.raises(StorageError):
        MobileStorageUnit(1.0, 0.5, 0.0, (1,), 0)
    with pytest.raises(StorageError):
        MobileStorageUnit(1.0, 0.0, 0.0, (0,), 0)


def test_trajectory_validation():
    u = MobileStorageUnit(1.0, 1.0, 0.0, (0, 2), 0)
    assert u.validate_trajectory([0, 2, 2]) == (0, 2, 2)
    with pytest.raises(StorageError, match="non-admissible"):
        u.validate_trajectory([0, 1])
    with pytest.raises(StorageError, match="starts"):
        u.validate_trajectory([2, 0])


def test_snapshot_round_trip():
    trajs = [(0, 1, 1), (2, 2, 0)]
    E = snapshot_matrices(trajs, 3)
    assert E.shape == (3, 3, 2)
    np.testing.assert_array_equal(E.sum(axis=1), 1.0)
    assert trajectories_from_snapshots(E) == trajs


def test_travel_split_and_cost():
    D = np.array([[0.0, 0.25, np.inf], [0.25, 0.0, 0.5], [np.inf, 0.5, 0.0]])
    tm = TransportModel(D, 1.0, 4.0)
    moving, operating = travel_split([0, 1, 2, 2], tm)
    np.testing.assert_allclose(moving, [0.25, 0.5, 0.0, 0.0])
    np.testing.assert_allclose(operating, [0.75, 0.5, 1.0, 1.0])
    total, per = relocation_cost([(0, 1, 2, 2), (2, 2, 2, 2)], tm)
    assert total == pytest.approx(3.0) and per == pytest.approx([3.0, 0.0])
    with pytest.raises(StorageError):
        travel_split([0, 2], tm)


def test_transport_model_checks():
    with pytest.raises(StorageError):
        TransportModel(np.array([[0.0, 2.0], [2.0, 0.0]]), 1.0)
    with pytest.raises(StorageError):
        TransportModel(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(StorageError):
        TransportModel(np.zeros((2, 2)), 1.0, kappa=-1.0)
    assert TransportModel.static(3).reachable.all()


def test_fleet_checks_trajectories():
    fleet = Fleet((MobileStorageUnit(1.0, 1.0, 0.0, (0, 1), 0), stationary_unit(1, 1.0)))
    assert len(fleet) == 2
    fleet.validate_trajectories([(0, 1), (1, 1)], 2, 2)
    with pytest.raises(StorageError):
        fleet.validate_trajectories([(0, 1)], 2)
    with pytest.raises(StorageError):
        fleet.validate_trajectories([(0, 1, 1), (1, 1, 1)], 2, 2)
    caps = fleet.with_capacities([3.0, 4.0])
    assert [u.capacity for u in caps] == [3.0, 4.0]
