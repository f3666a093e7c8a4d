"""Steady periodic error system of the filter and its Schur-stability check.

The stacked local error ``e(k) = [x(k) - x_1(k|k); ...; x(k) - x_N(k|k)]``
obeys::

    e(k) = F(k-1) e(k-1) + H(k) w(k-1) - K(k) v(k)
    F_ij(k) = (A(k) - K_i(k+1) C_i(k+1) A(k)) W_ij(k)

``F[t]`` is the steady value of ``F(k)`` for ``k = t mod T``; it maps the
phase-``t`` error to the phase-``t+1`` error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .errors import NumericalError
from .filter import run_filter
from .model import SystemSchedule, sample_trajectories
from .periodic import PeriodicFixpoint, SteadyParams

STABILITY_MARGIN = 1e-9


@dataclass(frozen=True)
class ErrorSystemMatrices:
    F: np.ndarray
    H: np.ndarray
    K: tuple[np.ndarray, ...]
    N: int
    n: int

    @property
    def T(self):
        return self.F.shape[0]

    def block(self, t, i, j):
        n = self.n
        return self.F[t, i * n:(i + 1) * n, j * n:(j + 1) * n]


def assemble_error_system(params: SteadyParams, system: SystemSchedule) -> ErrorSystemMatrices:
    T, N, n = params.T, params.N, system.n
    F = np.zeros((T, N * n, N * n))
    H = np.zeros((T, N * n, n))
    Ks = []
    for t in range(T):
        A = system.A(t)
        for i in range(N):
            K_next, C_next = params.gains[i][(t + 1) % T], system.C(i, t + 1)
            G = A - K_next @ C_next @ A
            for j in range(N):
                if params.weights[t, j, i] != 0:
                    F[t, i * n:(i + 1) * n, j * n:(j + 1) * n] = G @ params.W[t, i, j]
            H[t, i * n:(i + 1) * n] = np.eye(n) - params.gains[i][t] @ system.C(i, t)
        Ks.append(la.block_diag([params.gains[i][t] for i in range(N)]))
    return ErrorSystemMatrices(F, H, tuple(Ks), N, n)


def gain_determinants(params: SteadyParams, system: SystemSchedule) -> np.ndarray:
    """``Det(I - K_i C_i)`` per phase and node, via ``Det(R) / Det(C P_prior C^T + R)``."""
    T, N = params.T, params.N
    out = np.empty((T, N))
    for t in range(T):
        for i in range(N):
            C, R = system.C(i, t), system.R(i, t)
            s1, ld_R = np.linalg.slogdet(R)
            s2, ld_S = np.linalg.slogdet(C @ params.P_prior[t, i] @ C.T + R)
            out[t, i] = s1 * s2 * np.exp(ld_R - ld_S)
    return out


def cyclic_product(mats: ErrorSystemMatrices, phase: int) -> np.ndarray:
    """``F[t-1] ... F[0] F[T-1] ... F[t]``."""
    M = np.eye(mats.F.shape[1])
    for s in range(mats.T):
        M = mats.F[(phase + s) % mats.T] @ M
    return M


def subspace_spectral_radius(M, block=8, tol=1e-13, max_iters=20_000, seed=0):
    """Dominant eigenvalue modulus by orthogonal subspace iteration with Ritz values.

    Used as a check that does not rely on a full eigen-decomposition.
    """
    n = M.shape[0]
    p = min(block, n)
    V = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, p)))[0]
    prev = np.inf
    for _ in range(max_iters):
        W = M @ V
        if not np.any(W):
            return 0.0
        V = np.linalg.qr(W)[0]
        rho = float(np.max(np.abs(np.linalg.eigvals(V.T @ M @ V))))
        if abs(rho - prev) <= tol * max(rho, 1e-300):
            return rho
        prev = rho
    return rho


@dataclass(frozen=True)
class SpectralVerdict:
    rho: tuple[float, ...]
    power_rho: float

    @property
    def spectral_radius(self) -> float:
        return self.rho[0]

    @property
    def stable(self) -> bool:
        return max(self.rho) < 1.0 - STABILITY_MARGIN

    @property
    def margin(self) -> float:
        return 1.0 - max(self.rho)

    @property
    def rotation_spread(self) -> float:
        return max(self.rho) - min(self.rho)


def spectral_check(mats: ErrorSystemMatrices) -> SpectralVerdict:
    """Spectral radius of every cyclic rotation of the period product."""
    try:
        rho = tuple(float(np.max(np.abs(np.linalg.eigvals(cyclic_product(mats, t)))))
                    for t in range(mats.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue solver failed: {exc}") from exc
    return SpectralVerdict(rho, subspace_spectral_radius(cyclic_product(mats, 0)))


@dataclass(frozen=True)
class ErrorPropagationReport:
    deviations: np.ndarray
    burn_in: int
    tol: float

    @property
    def max_deviation(self) -> float:
        tail = self.deviations[self.burn_in + 1:]
        return float(np.max(tail)) if tail.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_deviation < self.tol


def _stack_nodes(a):
    """``(M, K+1, N, n) -> (M, K+1, N*n)``."""
    return a.reshape(a.shape[0], a.shape[1], -1)


def error_propagation_check(system: SystemSchedule, mats: ErrorSystemMatrices, *, trials: int = 4,
                            steps: int = 400, seed: int = 0, burn_in: int = 200,
                            x_hat0=None, P_hat0=None, tol: float = 1e-6) -> ErrorPropagationReport:
    """Compare live filter errors with the steady error recursion driven by the same noise.

    The recursion starts from the live local error at ``k = 1``. Agreement is
    checked for ``k > burn_in``, once the live gains have settled.
    """
    T = mats.T
    batch = sample_trajectories(system.plant, system.sensors, steps, seed, trials)
    run = run_filter(system, batch.measurements, x_hat0=x_hat0, P_hat0=P_hat0)
    x_loc = run.x_local
    e_live = _stack_nodes(batch.states[:, :, None, :] - x_loc)
    v = np.concatenate(batch.measurement_noise, axis=-1)
    e = np.empty_like(e_live)
    e[:, 1] = e_live[:, 1]
    for k in range(2, steps + 1):
        e[:, k] = (e[:, k - 1] @ mats.F[(k - 1) % T].T
                   + batch.process_noise[:, k - 1] @ mats.H[k % T].T
                   - v[:, k] @ mats.K[k % T].T)
    dev = np.zeros(steps + 1)
    dev[1:] = np.max(np.abs(e[:, 1:] - e_live[:, 1:]), axis=(0, 2))
    return ErrorPropagationReport(dev, burn_in, tol)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    norms: np.ndarray
    fit_range: tuple[int, int]


def fit_decay_rate(system: SystemSchedule, fix: PeriodicFixpoint, *, periods: int = 400,
                   seed: int = 0, floor: float = 1e-150) -> DecayFit:
    """Per-period decay rate of the noiseless error, from a log-linear fit.

    The filter starts at the steady fused covariances with an offset initial
    estimate. The fit uses the last half of the samples (taken at multiples
    of ``T``) whose norm is still above ``floor`` times the initial norm.
    """
    T, N, n = fix.T, fix.N, fix.n
    steps = periods * T
    batch = sample_trajectories(system.plant, system.sensors, steps, seed, 1, noise=False)
    offset = np.random.default_rng(seed).standard_normal(n)
    P_hat0 = np.array([fix.block(0, i) for i in range(N)])
    run = run_filter(system, batch.measurements, x_hat0=system.plant.x0_mean + offset,
                     P_hat0=P_hat0)
    err = batch.states[0][:, None, :] - run.x_local[0]
    norms = np.array([np.linalg.norm(err[j * T]) for j in range(1, periods + 1)])
    norms = np.concatenate([[np.linalg.norm(offset) * np.sqrt(N)], norms])
    alive = np.flatnonzero(norms > floor * norms[0])
    last = int(alive[-1])
    first = max(1, last // 2)
    if last - first < 2:
        raise NumericalError("error decays too fast to fit a rate; lower the floor")
    j = np.arange(first, last + 1)
    slope = np.polyfit(j, np.log(norms[first:last + 1]), 1)[0]
    return DecayFit(float(np.exp(slope)), norms, (first, last))
