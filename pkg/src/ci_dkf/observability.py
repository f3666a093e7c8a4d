"""Transition products, observability Gramians and uniform-observability checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _linalg as la
from .errors import ModelError, NumericalError
from .graph import ReachabilitySets
from .model import SystemSchedule

# Relative floor on the Gramian's smallest eigenvalue, scaled by max ||C^T C||.
OBSERVABILITY_RTOL = 1e-8
DEFAULT_GENERAL_HORIZON = 512
WINDOW_SWEEP = (4, 8, 16)


def phi(X: Callable[[int], np.ndarray], start: int, offset: int) -> np.ndarray:
    """Ordered transition product ``Phi_X(start + offset, start)``.

    ``X(start+offset-1) ... X(start)`` for positive offsets, the identity for
    zero, and ``X(start+offset)^-1 ... X(start-1)^-1`` for negative offsets.
    """
    n = np.asarray(X(max(start, 0))).shape[0]
    out = np.eye(n)
    if offset > 0:
        for s in range(start, start + offset):
            out = X(s) @ out
    elif offset < 0:
        for s in range(start - 1, start + offset - 1, -1):
            M = X(s)
            if np.linalg.cond(M) > 1e12:
                raise NumericalError(f"X({s}) is singular; cannot step backwards")
            out = np.linalg.inv(M) @ out
    return out


class TransitionProduct:
    """Cached ``Phi_X(end, start)`` for ``end >= start``, built incrementally."""

    def __init__(self, X: Callable[[int], np.ndarray]):
        self.X = X
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def __call__(self, end: int, start: int) -> np.ndarray:
        if end < start:
            return phi(self.X, start, end - start)
        key = (end, start)
        if key not in self._cache:
            if end == start:
                n = np.asarray(self.X(start)).shape[0]
                self._cache[key] = np.eye(n)
            else:
                self._cache[key] = self.X(end - 1) @ self(end - 1, start)
        return self._cache[key]


def stacked_C(sensors, subset: Sequence[int], k: int) -> np.ndarray:
    """Row-stack of ``C_j(k)`` for ``j`` in ascending order of ``subset``."""
    nodes = sorted(set(int(j) for j in subset))
    if not nodes:
        raise ModelError("stacked_C needs a nonempty node subset")
    return np.vstack([sensors[j].C(k) for j in nodes])


def gramian(C: Callable[[int], np.ndarray], A: Callable[[int], np.ndarray], start: int,
            window: int) -> np.ndarray:
    """``sum_{i<window} Phi_A(start+i, start)^T C(start+i)^T C(start+i) Phi_A(start+i, start)``."""
    if window < 1:
        raise ModelError(f"window must be >= 1, got {window}")
    n = np.asarray(A(start)).shape[0]
    G = np.zeros((n, n))
    Phi = np.eye(n)
    for i in range(window):
        if i:
            Phi = A(start + i - 1) @ Phi
        CP = C(start + i) @ Phi
        G += CP.T @ CP
    return la.symmetrize(G)


@dataclass(frozen=True)
class GramianReport:
    node: int
    subset: tuple[int, ...]
    window: int
    starts: tuple[int, ...]
    min_eigs: np.ndarray
    threshold: float
    exhaustive: bool

    @property
    def min_eig(self) -> float:
        return float(np.min(self.min_eigs))

    @property
    def margin(self) -> float:
        return self.min_eig - self.threshold

    @property
    def observable(self) -> bool:
        return self.min_eig >= self.threshold

    @property
    def label(self) -> str:
        if self.exhaustive:
            return "all k (periodic)"
        return f"verified on [{self.starts[0]}, {self.starts[-1]}]"


def _starts(system, horizon, start=0):
    if system.is_periodic:
        return tuple(range(system.period)), True
    horizon = DEFAULT_GENERAL_HORIZON if horizon is None else int(horizon)
    if horizon < 1:
        raise ModelError(f"horizon must be positive, got {horizon}")
    return tuple(range(start, start + horizon)), False


def check_uniform_observability(system: SystemSchedule, node: int, reach: ReachabilitySets | Sequence[int],
                                window: int | None = None, horizon: int | None = None) -> GramianReport:
    """Gramian test for the pair ``([C(k)]_{R_i}, A(k))`` over every start ``k`` checked.

    A periodic system is checked over one period, which covers every start
    ``k``. A general system is checked on ``[0, horizon)`` and the report
    says so.
    """
    subset = tuple(sorted(reach[node] if isinstance(reach, ReachabilitySets) else reach))
    if window is None:
        if not system.is_periodic:
            raise ModelError("window is required for non-periodic systems")
        window = system.n * system.period
    starts, exhaustive = _starts(system, horizon)

    def C(k):
        return stacked_C(system.sensors, subset, k)

    scale = max(la.max_eig(C(k).T @ C(k)) for k in range(starts[0], starts[-1] + window))
    threshold = OBSERVABILITY_RTOL * max(scale, np.finfo(float).tiny)
    mins = np.array([la.min_eig(gramian(C, system.A, k, window)) for k in starts])
    return GramianReport(int(node), subset, int(window), starts, mins, threshold, exhaustive)


@dataclass(frozen=True)
class AssumptionConstants:
    """Tightest constants of the standing bounds found over the checked range."""

    a_l: float
    a_u: float
    q_l: float
    q_u: float
    c_u: tuple[float, ...]
    r_l: tuple[float, ...]
    r_u: tuple[float, ...]
    pi_l: float
    steps: tuple[int, int]

    @property
    def ok(self) -> bool:
        return (self.a_l > 0 and self.q_l > 0 and min(self.r_l) > 0 and self.pi_l > 0
                and np.isfinite([self.a_u, self.q_u, *self.c_u, *self.r_u]).all())

    def warnings(self) -> list[str]:
        out = []
        if not self.a_l > 0:
            out.append("A(k) A(k)^T is not bounded away from singular")
        if not self.q_l > 0:
            out.append("Q(k) is not uniformly positive definite")
        if not min(self.r_l) > 0:
            out.append("some R_i(k) is not uniformly positive definite")
        if not self.pi_l > 0:
            out.append("some active CI weight is zero")
        return out


def lint(system: SystemSchedule, horizon: int | None = None) -> AssumptionConstants:
    """Scan ``A, Q, C_i, R_i`` and the CI weights and report their bounds."""
    if system.is_periodic:
        ks = range(system.period)
    else:
        ks = range(DEFAULT_GENERAL_HORIZON if horizon is None else int(horizon))
    a_l = q_l = pi_l = np.inf
    a_u = q_u = 0.0
    N = system.N
    c_u, r_l, r_u = [0.0] * N, [np.inf] * N, [0.0] * N
    for k in ks:
        A, Q = system.A(k), system.Q(k)
        w = np.linalg.eigvalsh(la.symmetrize(A @ A.T))
        a_l, a_u = min(a_l, w[0]), max(a_u, w[-1])
        w = np.linalg.eigvalsh(Q)
        q_l, q_u = min(q_l, w[0]), max(q_u, w[-1])
        Pi = system.weight_matrix(k + 1)
        active = Pi[system.graph.adjacency(k + 1)]
        pi_l = min(pi_l, float(active.min()))
        for i in range(N):
            C, R = system.C(i, k + 1), system.R(i, k + 1)
            c_u[i] = max(c_u[i], la.max_eig(C @ C.T))
            w = np.linalg.eigvalsh(R)
            r_l[i], r_u[i] = min(r_l[i], w[0]), max(r_u[i], w[-1])
    return AssumptionConstants(float(a_l), float(a_u), float(q_l), float(q_u), tuple(c_u),
                               tuple(r_l), tuple(r_u), float(pi_l), (ks.start, ks.stop - 1))
