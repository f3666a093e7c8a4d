import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ci_dkf.errors import ModelError
from ci_dkf.graph import TimeVaryingGraph
from ci_dkf.model import (PlantModel, Schedule, SensorModel, SystemSchedule, builtin_cv2d,
                          cv2d_matrices, dt_cos_pi, dt_sin, sample_trajectories, sample_trajectory)


def test_cv2d_printed_values_at_unit_dt():
    A, Q = cv2d_matrices(1.0, 0.2)
    np.testing.assert_array_equal(A[0], [1, 1, 0, 0])
    np.testing.assert_array_equal(A[2], [0, 0, 1, 1])
    assert Q[0, 0] == pytest.approx(0.2 / 3)
    assert Q[0, 1] == pytest.approx(0.1)
    assert Q[1, 1] == pytest.approx(0.2)
    assert np.all(np.linalg.eigvalsh(Q) > 0)


def test_cv2d_standard_variant_is_singular_and_rejected():
    _, Q = cv2d_matrices(1.0, 0.2, "standard")
    assert np.linalg.eigvalsh(Q)[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ModelError):
        builtin_cv2d(1.0, 0.2, variant="standard")


def test_cv2d_small_dt_limit():
    A, Q = cv2d_matrices(1e-6, 0.2)
    np.testing.assert_allclose(A, np.eye(4), atol=1e-6)
    assert np.abs(Q).max() < 1e-12


def test_builtin_follows_dt_schedule():
    plant = builtin_cv2d(dt_sin(1.0, 0.1), 0.2)
    for k in (0, 1, 7, 33):
        A = plant.A(k)
        assert A[0, 1] == A[2, 3] == pytest.approx(1 + 0.1 * math.sin(k))
        assert np.allclose(np.tril(A, -1), 0)


@pytest.mark.parametrize("Sw", [0.0, -1.0])
def test_nonpositive_spectral_density_rejected(Sw):
    with pytest.raises(ModelError):
        builtin_cv2d(1.0, Sw)


def test_nonpositive_dt_rejected():
    with pytest.raises(ModelError):
        builtin_cv2d(lambda k: 1.0 - 0.1 * k, 0.2)


def test_plant_rejects_singular_Q_and_A():
    with pytest.raises(ModelError):
        PlantModel(np.eye(2), np.zeros((2, 2)), [0, 0], np.eye(2))
    with pytest.raises(ModelError):
        PlantModel(np.zeros((2, 2)), np.eye(2), [0, 0], np.eye(2))


def test_sensor_rejects_bad_R():
    with pytest.raises(ModelError):
        SensorModel([[1.0, 0.0]], [[-1.0]])


def test_dimension_mismatch_rejected():
    plant = PlantModel(np.eye(2), np.eye(2), [0, 0], np.eye(2))
    with pytest.raises(ModelError):
        sample_trajectories(plant, [SensorModel([[1.0, 0, 0]], [[1.0]])], 3, 0)


def test_general_table_does_not_extrapolate():
    s = Schedule.table([np.eye(2), 2 * np.eye(2)])
    assert s(1)[0, 0] == 2
    with pytest.raises(ModelError):
        s(2)


def test_periodic_schedule_bit_equal():
    dt = dt_cos_pi(1.0, 0.1)
    plant = builtin_cv2d(dt, 0.2)
    for k in range(12):
        assert plant.A(k) is plant.A(k + 2)
        assert np.array_equal(plant.Q(k), plant.Q(k + 4))


def test_with_period_rejects_aperiodic_component():
    plant = builtin_cv2d(dt_sin(1.0, 0.1), 0.2)
    s = SensorModel(np.eye(4)[:2], np.eye(2))
    with pytest.raises(ModelError):
        SystemSchedule(plant, (s,), TimeVaryingGraph.static(1, [(0, 0)]), period=4)


def test_sample_shapes():
    plant = PlantModel(np.eye(2), 0.1 * np.eye(2), [0, 0], np.eye(2))
    states, zs = sample_trajectory(plant, [SensorModel([[1.0, 0.0]], [[1.0]])], 3, seed=0)
    assert states.shape == (4, 2)
    assert zs[0].shape == (4, 1)
    assert np.isnan(zs[0][0]).all()


def test_reproducible_and_batch_invariant():
    plant = builtin_cv2d(dt_sin(1.0, 0.1), 0.2)
    sensors = [SensorModel(np.eye(4)[:2], np.eye(2))]
    a = sample_trajectories(plant, sensors, 20, seed=5, trials=6)
    b = sample_trajectories(plant, sensors, 20, seed=5, trials=6)
    assert a.states.tobytes() == b.states.tobytes()
    c = sample_trajectories(plant, sensors, 20, seed=5, trials=2, first_trial=4)
    assert c.states.tobytes() == a.states[4:].tobytes()
    d = sample_trajectories(plant, sensors, 20, seed=6, trials=6)
    assert not np.array_equal(a.states, d.states)


def test_scalar_first_step_moments():
    plant = PlantModel([[1.0]], [[1.0]], [0.0], [[1.0]])
    batch = sample_trajectories(plant, [SensorModel([[1.0]], [[1.0]])], 1, seed=11, trials=100_000)
    x1 = batch.states[:, 1, 0]
    assert abs(x1.mean()) < 0.02
    assert abs(x1.var() - 2.0) < 0.05


def test_state_covariance_matches_propagation():
    plant = builtin_cv2d(dt_sin(1.0, 0.1), 0.2)
    K = 6
    batch = sample_trajectories(plant, [SensorModel(np.eye(4)[:2], np.eye(2))], K, 3, 20_000)
    P = plant.P0.copy()
    for k in range(K):
        P = plant.A(k) @ P @ plant.A(k).T + plant.Q(k)
    emp = np.cov(batch.states[:, K].T)
    assert np.linalg.norm(emp - P) / np.linalg.norm(P) < 0.05


def test_noiseless_mode():
    plant = PlantModel(np.eye(2) * 1.1, np.eye(2), [1.0, -1.0], np.eye(2))
    batch = sample_trajectories(plant, [SensorModel(np.eye(2), np.eye(2))], 4, 0, noise=False)
    np.testing.assert_allclose(batch.states[0, 4], [1.1**4, -1.1**4])
    np.testing.assert_allclose(batch.measurements[0][0, 1:], batch.states[0, 1:])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 40))
def test_periodic_table_wraps(T, k):
    tables = [np.eye(2) * (t + 1) for t in range(T)]
    s = Schedule.periodic(tables)
    assert np.array_equal(s(k), s(k + T))
    assert s(k)[0, 0] == (k % T) + 1
