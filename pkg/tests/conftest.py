from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from ci_dkf.closed_loop import ErrorSystemMatrices, assemble_error_system
from ci_dkf.graph import TimeVaryingGraph, WeightSchedule
from ci_dkf.harness import Scenario, load_scenario
from ci_dkf.model import PlantModel, SensorModel, SystemSchedule
from ci_dkf.periodic import (PeriodicFixpoint, SteadyParams, StackedOperatorData, solve_fixpoint,
                             steady_filter_params)


def random_spd(rng, n, scale=1.0, floor=0.1):
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T / n + floor * np.eye(n))


def scalar_system(a=1.0, q=1.0, c=1.0, r=1.0, P0=1.0):
    plant = PlantModel([[a]], [[q]], [0.0], [[P0]])
    sensor = SensorModel([[c]], [[r]], 0)
    return SystemSchedule(plant, (sensor,), TimeVaryingGraph.static(1, [(0, 0)]), period=1)


def static_system(A, Q, Cs, Rs, edges, P0=None, period=1, weights=None):
    n = np.asarray(A).shape[0]
    plant = PlantModel(A, Q, np.zeros(n), np.eye(n) if P0 is None else P0)
    sensors = tuple(SensorModel(C, R, i) for i, (C, R) in enumerate(zip(Cs, Rs)))
    N = len(sensors)
    g = TimeVaryingGraph.static(N, list(edges) + [(i, i) for i in range(N)])
    return SystemSchedule(plant, sensors, g, weights or WeightSchedule.uniform(), period=period)


@dataclass
class PeriodicAnalysis:
    scenario: Scenario
    data: StackedOperatorData
    fix: PeriodicFixpoint
    params: SteadyParams
    mats: ErrorSystemMatrices


@pytest.fixture(scope="session")
def general():
    return load_scenario("sec5_general")


@pytest.fixture(scope="session")
def degraded():
    return load_scenario("sec5_degraded")


@pytest.fixture(scope="session")
def periodic_analysis():
    sc = load_scenario("sec5_periodic")
    data = StackedOperatorData.from_system(sc.system)
    fix = solve_fixpoint(data)
    params = steady_filter_params(fix, sc.system)
    return PeriodicAnalysis(sc, data, fix, params, assemble_error_system(params, sc.system))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
