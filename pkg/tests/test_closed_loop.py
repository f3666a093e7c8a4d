import math

import numpy as np
import pytest

from ci_dkf.closed_loop import (ErrorSystemMatrices, assemble_error_system, cyclic_product,
                                error_propagation_check, fit_decay_rate, gain_determinants,
                                spectral_check, subspace_spectral_radius)
from ci_dkf.graph import TimeVaryingGraph
from ci_dkf.model import PlantModel, SensorModel, SystemSchedule
from ci_dkf.periodic import (PeriodicFixpoint, StackedOperatorData, compose_Lhat, solve_fixpoint,
                             steady_filter_params)

from conftest import scalar_system


def test_scalar_closed_loop_factor():
    sys_ = scalar_system()
    fix = solve_fixpoint(StackedOperatorData.from_system(sys_), tol=1e-14)
    mats = assemble_error_system(steady_filter_params(fix, sys_), sys_)
    assert mats.F[0, 0, 0] == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-12)
    assert abs(mats.F[0, 0, 0]) < 1
    assert spectral_check(mats).stable


def test_scalar_twin_run_exact_from_steady_state():
    sys_ = scalar_system()
    fix = solve_fixpoint(StackedOperatorData.from_system(sys_), tol=1e-14)
    mats = assemble_error_system(steady_filter_params(fix, sys_), sys_)
    rep = error_propagation_check(sys_, mats, trials=3, steps=50, burn_in=0,
                                  P_hat0=fix.P_hat[0], tol=1e-12)
    assert rep.passed


def _no_measurement_fixpoint(data):
    """Picard from I; starting at 0 stays at the trivial fixed point when C = 0."""
    X = np.eye(data.dim)
    for _ in range(500):
        X = compose_Lhat(data, 0, X)
    Xs = [X]
    from ci_dkf.periodic import apply_L
    for t in range(1, data.T):
        Xs.append(apply_L(data, t - 1, Xs[-1]))
    P = np.array([np.linalg.inv(x) for x in Xs])
    return PeriodicFixpoint(np.array(Xs), P, data.N, data.n, 500, 0.0, (0.0,) * data.T, 0.0, 1e-10)


@pytest.mark.parametrize("T", [1, 2, 3])
def test_zero_gain_filter_rho(T):
    plant = PlantModel(0.5 * np.eye(2), np.eye(2), np.zeros(2), np.eye(2))
    sensors = tuple(SensorModel(np.zeros((1, 2)), np.eye(1), i) for i in range(2))
    g = TimeVaryingGraph.static(2, [(0, 0), (1, 1), (0, 1), (1, 0)])
    sys_ = SystemSchedule(plant, sensors, g, period=T)
    data = StackedOperatorData.from_system(sys_)
    params = steady_filter_params(_no_measurement_fixpoint(data), sys_)
    assert np.abs(params.gains[0]).max() == 0.0
    verdict = spectral_check(assemble_error_system(params, sys_))
    assert verdict.rho[0] == pytest.approx(0.5**T, rel=1e-9)


def test_sparsity_mirrors_graph(periodic_analysis):
    mats = periodic_analysis.mats
    g = periodic_analysis.scenario.system.graph
    for t in range(mats.T):
        adj = g.adjacency(t)
        for i in range(mats.N):
            for j in range(mats.N):
                if not adj[j, i]:
                    assert not mats.block(t, i, j).any()


def test_block_row_identity(periodic_analysis):
    mats, sys_ = periodic_analysis.mats, periodic_analysis.scenario.system
    p = periodic_analysis.params
    for t in range(mats.T):
        A = sys_.A(t)
        for i in range(mats.N):
            K, C = p.gains[i][(t + 1) % 4], sys_.C(i, t + 1)
            row = sum(mats.block(t, i, j) for j in range(mats.N))
            np.testing.assert_allclose(row, A - K @ C @ A, atol=1e-9)


def test_rotations_share_rho(periodic_analysis):
    v = spectral_check(periodic_analysis.mats)
    assert v.stable and v.margin > 0
    assert v.rotation_spread < 1e-9
    assert abs(v.power_rho - v.rho[0]) / v.rho[0] < 1e-6


def test_subspace_iteration_on_known_spectrum(rng):
    Q = np.linalg.qr(rng.standard_normal((6, 6)))[0]
    M = Q @ np.diag([0.9, -0.8, 0.5, 0.1, 0.0, 0.3]) @ Q.T
    assert subspace_spectral_radius(M, block=3) == pytest.approx(0.9, rel=1e-10)
    assert subspace_spectral_radius(np.zeros((3, 3))) == 0.0


def test_cyclic_product_order():
    F = np.array([[[1.0, 1.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 1.0]]])
    mats = ErrorSystemMatrices(F, np.zeros((2, 2, 2)), (np.zeros((2, 1)),) * 2, 1, 2)
    np.testing.assert_array_equal(cyclic_product(mats, 0), F[1] @ F[0])
    np.testing.assert_array_equal(cyclic_product(mats, 1), F[0] @ F[1])


def test_gain_determinants_positive(periodic_analysis):
    d = gain_determinants(periodic_analysis.params, periodic_analysis.scenario.system)
    sys_ = periodic_analysis.scenario.system
    p = periodic_analysis.params
    for t in range(4):
        for i in range(10):
            direct = np.linalg.det(np.eye(4) - p.gains[i][t] @ sys_.C(i, t))
            assert d[t, i] == pytest.approx(direct, rel=1e-9)
    assert (d > 0).all()


def test_twin_run(periodic_analysis):
    sc = periodic_analysis.scenario
    rep = error_propagation_check(sc.system, periodic_analysis.mats, trials=2, steps=300,
                                  burn_in=200, P_hat0=sc.P_hat0)
    assert rep.passed, rep.max_deviation


def test_decay_rate(periodic_analysis):
    rho = spectral_check(periodic_analysis.mats).rho[0]
    fit = fit_decay_rate(periodic_analysis.scenario.system, periodic_analysis.fix, seed=3)
    assert abs(fit.rate - rho) / rho < 0.1


def test_degraded_has_no_steady_state_analysis(degraded):
    # general, non-periodic data: the steady machinery does not apply
    from ci_dkf.errors import ModelError
    with pytest.raises(ModelError):
        StackedOperatorData.from_system(degraded.system)
