"""Covariance-intersection distributed Kalman filter.

Each node runs a local Kalman update from its own previous *fused* estimate,
then fuses the local estimates of its in-neighbors by covariance
intersection with weights ``pi_ji(k)``.

Estimates may carry a batch of Monte Carlo trials: ``x`` is either ``(n,)``
or ``(M, n)``. Covariances and gains do not depend on the data, so one pass
serves every trial in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from . import _linalg as la
from .errors import ModelError, NumericalError
from .model import SystemSchedule

FUSION_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class NodeEstimate:
    """An estimate ``x`` with covariance bound ``P``.

    Local estimates also keep the prior covariance ``P(k|k-1)`` and the gain
    ``K(k)`` that produced them.
    """

    x: np.ndarray
    P: np.ndarray
    prior: np.ndarray | None = None
    gain: np.ndarray | None = None


@dataclass(frozen=True)
class NetworkFilterState:
    k: int
    fused: tuple[NodeEstimate, ...]
    local: tuple[NodeEstimate, ...] | None = None
    weights: np.ndarray | None = None

    @property
    def N(self):
        return len(self.fused)

    def fused_blockdiag(self) -> np.ndarray:
        """``P_hat(k|k) = P_hat_1 (+) ... (+) P_hat_N``."""
        return la.block_diag([e.P for e in self.fused])


def _per_node(value, N, shape, what):
    arr = np.asarray(value, dtype=float)
    if arr.shape == shape:
        return [arr.copy() for _ in range(N)]
    if arr.shape == (N,) + shape:
        return [a.copy() for a in arr]
    raise ModelError(f"{what} has shape {arr.shape}; expected {shape} or {(N,) + shape}")


def init(plant, N: int, x_hat0=None, P_hat0=None) -> NetworkFilterState:
    """Step 0: every node starts from ``(x_hat0_i, P_hat0_i)``.

    Defaults are the plant's prior mean and covariance. ``P_hat0`` may be
    singular but must be symmetric PSD.
    """
    n = plant.n
    xs = _per_node(plant.x0_mean if x_hat0 is None else x_hat0, N, (n,), "x_hat0")
    Ps = _per_node(plant.P0 if P_hat0 is None else P_hat0, N, (n, n), "P_hat0")
    for i, P in enumerate(Ps):
        if not la.is_psd(P):
            raise ModelError(f"P_hat0 of node {i} is not symmetric positive semidefinite")
    return NetworkFilterState(0, tuple(NodeEstimate(x, P) for x, P in zip(xs, Ps)))


def local_update(state: NetworkFilterState, node: int, z, system: SystemSchedule) -> NodeEstimate:
    """Kalman predict from the fused pair at ``k-1``, then update with ``z_i(k)``."""
    k = state.k + 1
    prev = state.fused[node]
    A, Q = system.A(k - 1), system.Q(k - 1)
    C, R = system.C(node, k), system.R(node, k)
    x_pred = prev.x @ A.T
    P_pred = la.symmetrize(A @ prev.P @ A.T + Q)
    S = C @ P_pred @ C.T + R
    try:
        cho = la.cho_factor(S, "innovation covariance")
    except NumericalError as exc:
        raise NumericalError(f"node {node}, k={k}: {exc}") from exc
    K = linalg.cho_solve(cho, C @ P_pred).T
    x = x_pred + (np.asarray(z, dtype=float) - x_pred @ C.T) @ K.T
    P = la.symmetrize(P_pred - K @ C @ P_pred)
    return NodeEstimate(x, P, prior=P_pred, gain=K)


def _check_weights(weights, count):
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != count:
        raise ModelError(f"{w.size} weights for {count} estimates")
    if (w < 0).any() or not (w > 0).any():
        raise ModelError("CI weights must be nonnegative with at least one positive")
    if abs(w.sum() - 1.0) > FUSION_WEIGHT_TOL:
        raise ModelError(f"CI weights sum to {w.sum()!r}, not 1")
    return w


def _information(est: NodeEstimate):
    """``(P^-1, P^-1 x)`` with ``x`` possibly batched along the first axis."""
    n = est.P.shape[0]
    cho = la.cho_factor(est.P, "local covariance")
    info = la.symmetrize(linalg.cho_solve(cho, np.eye(n)))
    y = linalg.cho_solve(cho, np.asarray(est.x).T).T
    return info, y


def _fuse_information(infos, ys, weights):
    info = sum(w * I for w, I in zip(weights, infos) if w != 0)
    y = sum(w * v for w, v in zip(weights, ys) if w != 0)
    P = la.spd_inv(info, "fused information matrix")
    return NodeEstimate(y @ P, P)


def ci_fuse(locals_: Sequence[NodeEstimate], weights) -> NodeEstimate:
    """Covariance intersection: ``P = (sum_j w_j P_j^-1)^-1``, ``x = P sum_j w_j P_j^-1 x_j``."""
    w = _check_weights(weights, len(locals_))
    for j, est in enumerate(locals_):
        if w[j] > 0 and not la.is_spd(est.P):
            raise NumericalError(f"covariance of source {j} is singular or not symmetric")
    infos, ys = zip(*(_information(e) if wj > 0 else (None, None) for e, wj in zip(locals_, w)))
    return _fuse_information(infos, ys, w)


def ci_fuse_covariance_form(locals_: Sequence[NodeEstimate], weights) -> NodeEstimate:
    """Reference evaluation of CI fusion with explicit inverses, term by term."""
    w = _check_weights(weights, len(locals_))
    P = np.linalg.inv(sum(wj * np.linalg.inv(e.P) for wj, e in zip(w, locals_) if wj > 0))
    P = la.symmetrize(P)
    x = sum(wj * (P @ np.linalg.inv(e.P) @ np.asarray(e.x).T).T
            for wj, e in zip(w, locals_) if wj > 0)
    return NodeEstimate(x, P)


def step(state: NetworkFilterState, measurements: Sequence, system: SystemSchedule) -> NetworkFilterState:
    """Local updates, exchange with in-neighbors and CI fusion for step ``state.k + 1``."""
    k = state.k + 1
    if len(measurements) != system.N:
        raise ModelError(f"{len(measurements)} measurement vectors for {system.N} nodes")
    locals_, infos, ys = [], [], []
    for i in range(system.N):
        est = local_update(state, i, measurements[i], system)
        try:
            info, y = _information(est)
        except NumericalError as exc:
            raise NumericalError(f"node {i}, k={k}: {exc}") from exc
        locals_.append(est)
        infos.append(info)
        ys.append(y)
    Pi = system.weight_matrix(k)
    fused = []
    for i in range(system.N):
        try:
            fused.append(_fuse_information(infos, ys, Pi[:, i]))
        except NumericalError as exc:
            raise NumericalError(f"node {i}, k={k}: {exc}") from exc
    return NetworkFilterState(k, tuple(fused), tuple(locals_), Pi)


def fused_info_recursion(prev_P_hat: Sequence[np.ndarray], system: SystemSchedule, k: int) -> list:
    """``P_hat_i(k|k)^-1`` computed directly from the fused covariances at ``k-1``.

    ``sum_j pi_ji(k) [(A P_hat_j A^T + Q)^-1 + C_j^T R_j^-1 C_j]`` with every
    matrix taken at the step it belongs to.
    """
    A, Q = system.A(k - 1), system.Q(k - 1)
    Pi = system.weight_matrix(k)
    terms = []
    for j, P in enumerate(prev_P_hat):
        if not la.is_spd(P):
            raise NumericalError(f"fused covariance of node {j} at k={k - 1} is singular")
        C, R = system.C(j, k), system.R(j, k)
        terms.append(la.spd_inv(A @ P @ A.T + Q) + C.T @ la.spd_solve(R, C))
    return [la.symmetrize(sum(Pi[j, i] * terms[j] for j in range(system.N) if Pi[j, i] != 0))
            for i in range(system.N)]


@dataclass(frozen=True)
class FilterRun:
    """A full filter pass over steps ``0..K``.

    Covariance arrays are ``(K+1, N, n, n)``; estimate arrays are
    ``(M, K+1, N, n)`` (the trial axis is dropped for unbatched input).
    Local quantities at ``k = 0`` are NaN.
    """

    P_hat: np.ndarray
    P_local: np.ndarray
    P_prior: np.ndarray
    gains: tuple[np.ndarray, ...]
    weights: np.ndarray
    x_hat: np.ndarray
    x_local: np.ndarray

    @property
    def steps(self):
        return self.P_hat.shape[0] - 1

    def trace_fused(self):
        return np.trace(self.P_hat, axis1=-2, axis2=-1)

    def trace_local(self):
        return np.trace(self.P_local, axis1=-2, axis2=-1)


def run_filter(system: SystemSchedule, measurements: Sequence[np.ndarray], steps: int | None = None,
               x_hat0=None, P_hat0=None) -> FilterRun:
    """Run the filter over ``measurements[i][..., k, :]`` for ``k = 1..steps``."""
    zs = [np.asarray(z, dtype=float) for z in measurements]
    batched = zs[0].ndim == 3
    if not batched:
        zs = [z[None] for z in zs]
    M = zs[0].shape[0]
    K = zs[0].shape[1] - 1 if steps is None else int(steps)
    N, n = system.N, system.n
    state = init(system.plant, N, x_hat0, P_hat0)

    P_hat = np.empty((K + 1, N, n, n))
    P_local = np.full((K + 1, N, n, n), np.nan)
    P_prior = np.full((K + 1, N, n, n), np.nan)
    gains = [np.full((K + 1, n, system.sensors[i].m), np.nan) for i in range(N)]
    weights = np.full((K + 1, N, N), np.nan)
    x_hat = np.empty((M, K + 1, N, n))
    x_local = np.full((M, K + 1, N, n), np.nan)
    for i, e in enumerate(state.fused):
        P_hat[0, i] = e.P
        x_hat[:, 0, i] = e.x
    for k in range(1, K + 1):
        state = step(state, [z[:, k] for z in zs], system)
        weights[k] = state.weights
        for i in range(N):
            f, loc = state.fused[i], state.local[i]
            P_hat[k, i] = f.P
            P_local[k, i] = loc.P
            P_prior[k, i] = loc.prior
            gains[i][k] = loc.gain
            x_hat[:, k, i] = f.x
            x_local[:, k, i] = loc.x
    if not batched:
        x_hat, x_local = x_hat[0], x_local[0]
    return FilterRun(P_hat, P_local, P_prior, tuple(gains), weights, x_hat, x_local)
