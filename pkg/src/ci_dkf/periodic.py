"""Riccati-like operators on the stacked information space of a periodic network.

For phase ``t`` the operator ``L_t`` maps ``X(k)`` (the block-diagonal stack
of fused information matrices ``P_hat_i(k|k)^-1``) to ``X(k+1)`` when
``k = t mod T``::

    L_t(X) = sum_i S_i^T ( Abar^-T X Abar^-1 + Cbar^T R^-1 Cbar
                           - Abar^-T X (X + Qbar)^-1 X Abar^-1 ) S_i

with ``Abar = I (x) A(t)``, ``Qbar = Abar^T (I (x) Q(t))^-1 Abar``, measurement
data taken at ``t + 1`` and selectors ``S_i = (sqrt(Pi(t+1)) (x) I) E_i``,
where ``E_i`` keeps block column ``i``. Data at ``t + 1`` for ``t = T - 1``
wraps to phase 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _linalg as la
from .errors import ConvergenceError, ModelError, NumericalError
from .model import SystemSchedule

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 100_000
MAX_COND_A = 1e12


@dataclass(frozen=True)
class PhaseOperator:
    phase: int
    A_bar: np.ndarray
    A_bar_inv: np.ndarray
    Q_bar: np.ndarray
    Q_blocks: np.ndarray
    C_bar: np.ndarray
    R_inv: np.ndarray
    meas_info: np.ndarray
    Pi: np.ndarray
    selectors: tuple[np.ndarray, ...]
    cond_A: float

    def select_sum(self, M: np.ndarray) -> np.ndarray:
        """``sum_i S_i^T M S_i``."""
        return sum(S.T @ M @ S for S in self.selectors)


@dataclass(frozen=True)
class StackedOperatorData:
    phases: tuple[PhaseOperator, ...]
    N: int
    n: int

    @property
    def T(self) -> int:
        return len(self.phases)

    @property
    def dim(self) -> int:
        return self.N * self.n

    def __getitem__(self, phase) -> PhaseOperator:
        return self.phases[phase % self.T]

    @classmethod
    def from_system(cls, system: SystemSchedule) -> "StackedOperatorData":
        if not system.is_periodic:
            raise ModelError("stacked operators need a periodic system")
        N, n = system.N, system.n
        I_N = np.eye(N)
        phases = []
        for t in range(system.period):
            A, Q = system.A(t), system.Q(t)
            cond = float(np.linalg.cond(A))
            if cond > MAX_COND_A:
                raise ModelError(f"A({t}) has condition number {cond:.3g} > {MAX_COND_A:g}")
            A_bar = np.kron(I_N, A)
            A_bar_inv = np.kron(I_N, np.linalg.inv(A))
            Q_blocks = np.kron(I_N, Q)
            Q_bar = la.symmetrize(A_bar.T @ np.kron(I_N, la.spd_inv(Q, "Q")) @ A_bar)
            C_bar = la.block_diag([system.C(i, t + 1) for i in range(N)])
            R_inv = la.block_diag([la.spd_inv(system.R(i, t + 1), "R") for i in range(N)])
            meas_info = la.symmetrize(C_bar.T @ R_inv @ C_bar)
            Pi = system.weight_matrix(t + 1)
            spread = np.kron(np.sqrt(Pi), np.eye(n))
            selectors = []
            for i in range(N):
                E = np.zeros((N * n, N * n))
                E[i * n:(i + 1) * n, i * n:(i + 1) * n] = np.eye(n)
                selectors.append(spread @ E)
            phases.append(PhaseOperator(t, A_bar, A_bar_inv, Q_bar, Q_blocks, C_bar, R_inv,
                                        meas_info, Pi, tuple(selectors), cond))
        return cls(tuple(phases), N, n)


def apply_L(data: StackedOperatorData, phase: int, X: np.ndarray) -> np.ndarray:
    """One phase of the Riccati-like map, valid for any symmetric PSD ``X``."""
    op = data[phase]
    Ai = op.A_bar_inv
    try:
        shrink = la.spd_solve(X + op.Q_bar, X, "X + Qbar")
    except NumericalError as exc:
        raise NumericalError(f"phase {op.phase}: internal fault, {exc}") from exc
    inner = Ai.T @ (X - X @ shrink) @ Ai + op.meas_info
    return la.symmetrize(op.select_sum(la.symmetrize(inner)))


def apply_L_info_form(data: StackedOperatorData, phase: int, X: np.ndarray) -> np.ndarray:
    """The same map written as ``sum_i S_i^T ((Abar X^-1 Abar^T + I(x)Q)^-1 + Cbar^T R^-1 Cbar) S_i``.

    Requires ``X`` positive definite.
    """
    op = data[phase]
    P = la.spd_inv(X, "X")
    pred = la.spd_inv(op.A_bar @ P @ op.A_bar.T + op.Q_blocks, "predicted covariance")
    return la.symmetrize(op.select_sum(pred + op.meas_info))


def compose_Lhat(data: StackedOperatorData, phase: int, X: np.ndarray) -> np.ndarray:
    """``L_{t-1} o ... o L_0 o L_{T-1} o ... o L_t`` (for ``t = 0``: ``L_{T-1} o ... o L_0``)."""
    for s in range(data.T):
        X = apply_L(data, (phase + s) % data.T, X)
    return X


@dataclass(frozen=True)
class PeriodicFixpoint:
    """Per-phase fixed points ``X_t`` and steady fused covariances ``P_hat_t = X_t^-1``."""

    X: np.ndarray
    P_hat: np.ndarray
    N: int
    n: int
    iterations: int
    residual: float
    phase_residuals: tuple[float, ...]
    chain_residual: float
    tol: float
    residual_history: tuple[float, ...] = ()
    monotone_defect: float = 0.0
    uniqueness_deviation: float | None = None

    @property
    def T(self) -> int:
        return self.X.shape[0]

    def block(self, phase: int, i: int) -> np.ndarray:
        n = self.n
        return self.P_hat[phase % self.T, i * n:(i + 1) * n, i * n:(i + 1) * n]

    def traces(self) -> np.ndarray:
        """``Tr P_hat_i`` per phase and node, shape ``(T, N)``."""
        return np.array([[np.trace(self.block(t, i)) for i in range(self.N)] for t in range(self.T)])


def _picard(data, X, tol, max_iters, track_monotone=False):
    history = []
    defect = 0.0
    for it in range(1, max_iters + 1):
        Xn = compose_Lhat(data, 0, X)
        scale = np.linalg.norm(Xn)
        res = float(np.linalg.norm(Xn - X) / scale) if scale else 0.0
        history.append(res)
        if track_monotone:
            defect = min(defect, la.min_eig(Xn - X) / max(1.0, la.max_eig(Xn)))
        X = Xn
        if res <= tol:
            return X, it, history, defect
    raise ConvergenceError(f"no convergence after {max_iters} composite applications "
                           f"(last residual {history[-1]:.3g})", history)


def _chain(data, X0):
    Xs = [X0]
    for t in range(1, data.T):
        Xs.append(apply_L(data, t - 1, Xs[-1]))
    return np.array(Xs)


def solve_fixpoint(data: StackedOperatorData, tol: float = DEFAULT_TOL,
                   max_iters: int = DEFAULT_MAX_ITERS, *, verify: bool = True) -> PeriodicFixpoint:
    """Plain Picard iteration ``X <- Lhat_0(X)`` from ``X = 0``.

    The other phases follow by forward chaining ``X_t = L_{t-1}(X_{t-1})``.
    With ``verify`` the solve is repeated from ``I`` and ``1e3 I``; if any
    phase then deviates by more than ``10 tol`` (relative) the call raises
    :class:`ConvergenceError`.
    """
    dim = data.dim
    X0, iters, history, defect = _picard(data, np.zeros((dim, dim)), tol, max_iters, True)
    Xs = _chain(data, X0)
    phase_res = tuple(la.rel_err(compose_Lhat(data, t, Xs[t]), Xs[t]) for t in range(data.T))
    chain_res = la.rel_err(apply_L(data, data.T - 1, Xs[-1]), Xs[0])
    P_hat = []
    for t, X in enumerate(Xs):
        w = np.linalg.eigvalsh(X)
        if not w[0] > 1e-13 * w[-1]:
            raise NumericalError(f"X_{t} is numerically singular (min eigenvalue {w[0]:.3g}); "
                                 f"some node is probably not uniformly observable")
        P_hat.append(la.spd_inv(X, f"X_{t}"))
    deviation = None
    if verify:
        deviation = 0.0
        for kappa in (1.0, 1e3):
            Y0, _, _, _ = _picard(data, kappa * np.eye(dim), tol, max_iters)
            Ys = _chain(data, Y0)
            deviation = max(deviation, max(la.rel_err(Ys[t], Xs[t]) for t in range(data.T)))
        if deviation > 10 * tol:
            raise ConvergenceError(f"fixed point depends on the initial condition: relative "
                                   f"deviation {deviation:.3g} > {10 * tol:.3g}", history)
    return PeriodicFixpoint(Xs, np.array(P_hat), data.N, data.n, iters, history[-1], phase_res,
                            chain_res, tol, tuple(history), defect, deviation)


def fixpoint_to_dict(fix: PeriodicFixpoint) -> dict:
    return {
        "period": fix.T,
        "N": fix.N,
        "n": fix.n,
        "tol": fix.tol,
        "iterations": fix.iterations,
        "residual": fix.residual,
        "chain_residual": fix.chain_residual,
        "uniqueness_deviation": fix.uniqueness_deviation,
        "phases": [
            {"phase": t, "residual": fix.phase_residuals[t],
             "trace_P_hat": fix.traces()[t].tolist(),
             "X": fix.X[t].tolist(), "P_hat": fix.P_hat[t].tolist()}
            for t in range(fix.T)
        ],
    }


def fixpoint_from_dict(d: dict) -> PeriodicFixpoint:
    phases = sorted(d["phases"], key=lambda p: p["phase"])
    return PeriodicFixpoint(
        X=np.array([p["X"] for p in phases], dtype=float),
        P_hat=np.array([p["P_hat"] for p in phases], dtype=float),
        N=int(d["N"]), n=int(d["n"]), iterations=int(d["iterations"]),
        residual=float(d["residual"]),
        phase_residuals=tuple(float(p["residual"]) for p in phases),
        chain_residual=float(d["chain_residual"]), tol=float(d["tol"]),
        uniqueness_deviation=d.get("uniqueness_deviation"),
    )


@dataclass(frozen=True)
class SteadyParams:
    """Steady filter quantities indexed ``[phase, node, ...]``.

    ``P_prior[t, i]`` is the predicted covariance entering phase ``t``,
    ``gains[i][t]`` the local gain at phase ``t``, ``P_post[t, i]`` the local
    posterior and ``W[t, i, j] = pi_ji(t) P_hat_i P_j^-1``.
    """

    P_hat: np.ndarray
    P_prior: np.ndarray
    P_post: np.ndarray
    gains: tuple[np.ndarray, ...]
    W: np.ndarray
    weights: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.P_hat.shape[0]

    @property
    def N(self):
        return self.P_hat.shape[1]


def steady_filter_params(fix: PeriodicFixpoint, system: SystemSchedule) -> SteadyParams:
    """Gains, priors, local posteriors and fusion matrices of the periodic steady state."""
    T, N, n = fix.T, fix.N, fix.n
    if system.period != T or system.N != N or system.n != n:
        raise ModelError("fixpoint does not match the system's period or dimensions")
    P_hat = np.array([[fix.block(t, i) for i in range(N)] for t in range(T)])
    P_prior = np.empty_like(P_hat)
    P_post = np.empty_like(P_hat)
    gains = [np.empty((T, n, system.sensors[i].m)) for i in range(N)]
    W = np.zeros((T, N, N, n, n))
    weights = np.array([system.weight_matrix(t) for t in range(T)])
    for t in range(T):
        A, Q = system.A((t - 1) % T), system.Q((t - 1) % T)
        for i in range(N):
            Pp = la.symmetrize(A @ P_hat[(t - 1) % T, i] @ A.T + Q)
            C, R = system.C(i, t), system.R(i, t)
            S = C @ Pp @ C.T + R
            try:
                K = la.spd_solve(S, C @ Pp, "innovation covariance").T
            except NumericalError as exc:
                raise NumericalError(f"phase {t}, node {i}: {exc}") from exc
            P_prior[t, i] = Pp
            gains[i][t] = K
            P_post[t, i] = la.symmetrize(Pp - K @ C @ Pp)
        for i in range(N):
            for j in range(N):
                if weights[t, j, i] != 0:
                    W[t, i, j] = weights[t, j, i] * la.spd_solve(P_post[t, j], P_hat[t, i]).T
    return SteadyParams(P_hat, P_prior, P_post, tuple(gains), W, weights)
