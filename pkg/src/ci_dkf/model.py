"""Time-varying linear-Gaussian plant, sensor models and trajectory sampling.

Time indexing follows the filter: the state evolves as
``x(k) = A(k-1) x(k-1) + w(k-1)`` and node ``i`` measures
``z_i(k) = C_i(k) x(k) + v_i(k)`` for ``k >= 1``.
Node indices are 0-based in the Python API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _linalg as la
from .errors import ModelError
from .graph import TimeVaryingGraph, WeightSchedule

# Number of steps validated eagerly for generator-backed schedules.
EAGER_CHECK_STEPS = 64
CV2D_VARIANTS = ("printed", "standard")


class Schedule:
    """A total map ``k -> array`` on ``k >= 0``.

    Backed either by a generator function or by tables. A periodic schedule
    evaluates its generator at ``k mod period`` so that ``value(k)`` and
    ``value(k + period)`` are the very same array. A finite general table
    raises for ``k`` past its end instead of extrapolating.
    """

    def __init__(self, fn: Callable[[int], np.ndarray], *, period: int | None = None,
                 length: int | None = None, name: str = "schedule", checks=()):
        if period is not None and period < 1:
            raise ModelError(f"{name}: period must be >= 1, got {period}")
        self._fn = fn
        self.period = period
        self.length = length
        self.name = name
        self._checks = tuple(checks)
        self._cache: dict[int, np.ndarray] = {}

    @classmethod
    def constant(cls, value, name="constant"):
        value = np.array(value, dtype=float)
        return cls(lambda k: value, period=1, name=name)

    @classmethod
    def periodic(cls, tables: Sequence, name="periodic"):
        tables = [np.array(t, dtype=float) for t in tables]
        if not tables:
            raise ModelError(f"{name}: empty phase table")
        return cls(lambda k: tables[k], period=len(tables), name=name)

    @classmethod
    def table(cls, tables: Sequence, name="table"):
        tables = [np.array(t, dtype=float) for t in tables]
        return cls(lambda k: tables[k], length=len(tables), name=name)

    @classmethod
    def coerce(cls, value, name="schedule"):
        """Accept a Schedule, a callable ``k -> matrix`` or a constant matrix."""
        if isinstance(value, Schedule):
            return value
        if callable(value):
            return cls(value, name=name)
        return cls.constant(value, name=name)

    def __call__(self, k: int) -> np.ndarray:
        k = int(k)
        if k < 0:
            raise ModelError(f"{self.name}: negative time index {k}")
        if self.length is not None and k >= self.length:
            raise ModelError(f"{self.name}: k={k} is past the end of a {self.length}-step table")
        key = k % self.period if self.period else k
        try:
            return self._cache[key]
        except KeyError:
            pass
        value = np.array(self._fn(key), dtype=float)
        for check in self._checks:
            check(value, key)
        value.setflags(write=False)
        self._cache[key] = value
        return value

    def with_checks(self, *checks):
        return Schedule(self._fn, period=self.period, length=self.length, name=self.name,
                        checks=self._checks + checks)

    def with_period(self, T: int):
        """Re-express the schedule with period ``T`` (which must be compatible)."""
        if self.period is not None:
            if T % self.period:
                raise ModelError(f"{self.name}: period {self.period} does not divide {T}")
        else:
            for k in range(2 * T):
                if not np.array_equal(self._fn(k), self._fn(k + T)):
                    raise ModelError(f"{self.name}: value at k={k} differs from k={k + T}; "
                                     f"not {T}-periodic")
        fn = self._fn
        if self.period is not None:
            p = self.period
            return Schedule(lambda k: fn(k % p), period=T, name=self.name, checks=self._checks)
        return Schedule(fn, period=T, name=self.name, checks=self._checks)

    def eager_steps(self):
        if self.period is not None:
            return range(self.period)
        if self.length is not None:
            return range(self.length)
        return range(EAGER_CHECK_STEPS)

    def __repr__(self):
        kind = f"period={self.period}" if self.period else (
            f"length={self.length}" if self.length else "general")
        return f"Schedule({self.name!r}, {kind})"


def _spd_check(what):
    def check(M, k):
        if not la.is_spd(M):
            raise ModelError(f"{what}({k}) is not symmetric positive definite")
    return check


def _shape_check(what, shape):
    def check(M, k):
        if M.shape != shape:
            raise ModelError(f"{what}({k}) has shape {M.shape}, expected {shape}")
    return check


def _invertible_check(what):
    def check(M, k):
        if M.shape[0] != M.shape[1] or np.linalg.cond(M) > 1e12:
            raise ModelError(f"{what}({k}) is singular or too ill-conditioned")
    return check


def _eager_validate(schedule):
    for k in schedule.eager_steps():
        schedule(k)


@dataclass(frozen=True)
class PlantModel:
    """``x(k) = A(k-1) x(k-1) + w(k-1)``, ``w(k) ~ N(0, Q(k))``, ``x(0) ~ N(x0_mean, P0)``."""

    A: Schedule
    Q: Schedule
    x0_mean: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        x0 = np.array(self.x0_mean, dtype=float).reshape(-1)
        n = x0.size
        P0 = np.array(self.P0, dtype=float)
        if P0.shape != (n, n):
            raise ModelError(f"P0 has shape {P0.shape}, expected {(n, n)}")
        if not la.is_psd(P0):
            raise ModelError("P0 must be symmetric positive semidefinite")
        A = Schedule.coerce(self.A, "A").with_checks(_shape_check("A", (n, n)), _invertible_check("A"))
        Q = Schedule.coerce(self.Q, "Q").with_checks(_shape_check("Q", (n, n)), _spd_check("Q"))
        _eager_validate(A)
        _eager_validate(Q)
        x0.setflags(write=False)
        P0.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "x0_mean", x0)
        object.__setattr__(self, "P0", P0)

    @property
    def n(self) -> int:
        return self.x0_mean.size


@dataclass(frozen=True)
class SensorModel:
    """``z_i(k) = C(k) x(k) + v_i(k)`` with ``v_i(k) ~ N(0, R(k))``."""

    C: Schedule
    R: Schedule
    node_id: int | None = None

    def __post_init__(self):
        C = Schedule.coerce(self.C, "C")
        R = Schedule.coerce(self.R, "R")
        C0 = C(next(iter(C.eager_steps())))
        if C0.ndim != 2:
            raise ModelError(f"C must be a matrix, got shape {C0.shape}")
        m, n = C0.shape
        C = C.with_checks(_shape_check("C", (m, n)))
        R = R.with_checks(_shape_check("R", (m, m)), _spd_check("R"))
        _eager_validate(C)
        _eager_validate(R)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", R)

    @property
    def m(self) -> int:
        return self.C(0).shape[0]

    @property
    def n(self) -> int:
        return self.C(0).shape[1]


@dataclass(frozen=True)
class SystemSchedule:
    """Everything the filter needs at a given step: plant, sensors, graph and CI weights.

    With ``period`` set, every component is checked to satisfy
    ``value(k) == value(k + period)`` bit-for-bit and is then wrapped so the
    identity holds for all ``k``.
    """

    plant: PlantModel
    sensors: tuple[SensorModel, ...]
    graph: TimeVaryingGraph
    weights: WeightSchedule = field(default_factory=WeightSchedule.uniform)
    period: int | None = None

    def __post_init__(self):
        sensors = tuple(self.sensors)
        if len(sensors) != self.graph.N:
            raise ModelError(f"{len(sensors)} sensors but the graph has {self.graph.N} nodes")
        for i, s in enumerate(sensors):
            if s.n != self.plant.n:
                raise ModelError(f"sensor {i}: C has {s.n} columns, plant state has {self.plant.n}")
        object.__setattr__(self, "sensors", sensors)
        T = self.period
        if T is not None:
            T = int(T)
            if T < 1:
                raise ModelError(f"period must be >= 1, got {T}")
            plant = PlantModel(self.plant.A.with_period(T), self.plant.Q.with_period(T),
                               self.plant.x0_mean, self.plant.P0)
            sensors = tuple(SensorModel(s.C.with_period(T), s.R.with_period(T), s.node_id)
                            for s in sensors)
            object.__setattr__(self, "plant", plant)
            object.__setattr__(self, "sensors", sensors)
            object.__setattr__(self, "graph", self.graph.with_period(T))
            object.__setattr__(self, "weights", self.weights.with_period(T, self.graph))
            object.__setattr__(self, "period", T)

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def N(self) -> int:
        return self.graph.N

    @property
    def is_periodic(self) -> bool:
        return self.period is not None

    def A(self, k):
        return self.plant.A(k)

    def Q(self, k):
        return self.plant.Q(k)

    def C(self, i, k):
        return self.sensors[i].C(k)

    def R(self, i, k):
        return self.sensors[i].R(k)

    def weight_matrix(self, k):
        return self.weights.matrix(self.graph, k)

    def in_neighbors(self, i, k):
        return self.graph.in_neighbors(i, k)

    def replace_sensor(self, i, sensor: SensorModel) -> "SystemSchedule":
        sensors = list(self.sensors)
        sensors[i] = sensor
        return SystemSchedule(self.plant, tuple(sensors), self.graph, self.weights, self.period)


# -- builtin constant-velocity target ------------------------------------------------

def dt_constant(base: float) -> Schedule:
    return Schedule.constant(float(base), name="dt")


def dt_sin(base: float, amp: float) -> Schedule:
    """``dt_k = base + amp * sin(k)`` (not periodic in k)."""
    return Schedule(lambda k: base + amp * math.sin(k), name="dt")


def dt_cos_pi(base: float, amp: float) -> Schedule:
    """``dt_k = base + amp * cos(pi k)``, evaluated exactly as ``base +/- amp``."""
    return Schedule(lambda k: base + (amp if k % 2 == 0 else -amp), period=2, name="dt")


def cv2d_matrices(dt: float, Sw: float, variant: str = "printed"):
    """Transition and process-noise matrices of the planar constant-velocity target.

    State order is ``[px, vx, py, vy]``. ``variant="printed"`` uses ``dt^4/3``
    in the position-variance slot; ``"standard"`` uses the white-noise
    acceleration value ``dt^4/4``, which makes ``Q`` singular.
    """
    if variant not in CV2D_VARIANTS:
        raise ModelError(f"unknown cv2d variant {variant!r}; expected one of {CV2D_VARIANTS}")
    c = 1.0 / 3.0 if variant == "printed" else 0.25
    A = np.eye(4)
    A[0, 1] = A[2, 3] = dt
    q = Sw * np.array([[c * dt**4, dt**3 / 2.0],
                       [dt**3 / 2.0, dt**2]])
    Q = np.zeros((4, 4))
    Q[:2, :2] = q
    Q[2:, 2:] = q
    return A, Q


def builtin_cv2d(dt_schedule, Sw: float, *, x0_mean=None, P0=None,
                 variant: str = "printed") -> PlantModel:
    """Planar constant-velocity plant with sampling period ``dt_schedule(k)``.

    ``P0`` defaults to ``10 I`` and ``x0_mean`` to zero.
    """
    if not Sw > 0:
        raise ModelError(f"Sw must be positive, got {Sw}")
    dt = dt_schedule if isinstance(dt_schedule, Schedule) else (
        Schedule(dt_schedule, name="dt") if callable(dt_schedule) else dt_constant(dt_schedule))

    def step_dt(k):
        value = float(dt(k))
        if not value > 0:
            raise ModelError(f"dt({k}) = {value} must be positive")
        return value

    if variant == "standard":
        raise ModelError("the dt^4/4 variant has a rank-deficient Q(k); the plant requires "
                         "Q(k) positive definite (use cv2d_matrices for the raw matrices)")
    A = Schedule(lambda k: cv2d_matrices(step_dt(k), Sw, variant)[0], period=dt.period, name="A")
    Q = Schedule(lambda k: cv2d_matrices(step_dt(k), Sw, variant)[1], period=dt.period, name="Q")
    x0 = np.zeros(4) if x0_mean is None else x0_mean
    P0 = 10.0 * np.eye(4) if P0 is None else P0
    return PlantModel(A, Q, x0, P0)


# -- sampling -------------------------------------------------------------------------

_INITIAL, _PROCESS, _MEASUREMENT = 0, 1, 2


def _stream(seed, trial, kind, node=0):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial), kind, int(node)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TrajectoryBatch:
    """Sampled trials stacked on the leading axis.

    ``states[t, k]`` is ``x(k)``; ``process_noise[t, k]`` is ``w(k)``;
    ``measurements[i][t, k]`` is ``z_i(k)`` with row ``k = 0`` set to NaN.
    """

    states: np.ndarray
    measurements: tuple[np.ndarray, ...]
    process_noise: np.ndarray
    measurement_noise: tuple[np.ndarray, ...]

    @property
    def trials(self):
        return self.states.shape[0]

    @property
    def horizon(self):
        return self.states.shape[1] - 1


def sample_trajectories(plant: PlantModel, sensors: Sequence[SensorModel], horizon: int,
                        seed: int, trials: int = 1, *, first_trial: int = 0,
                        noise: bool = True) -> TrajectoryBatch:
    """Draw ``trials`` independent realizations of the plant and all sensors.

    Trial ``t`` uses its own counter-based streams keyed by
    ``(seed, first_trial + t, kind, node)``, so a trial's draws do not depend on
    which batch it is sampled in. ``noise=False`` starts at ``x0_mean`` and sets
    every ``w`` and ``v`` to zero.
    """
    if horizon < 1:
        raise ModelError(f"horizon must be >= 1, got {horizon}")
    if trials < 1:
        raise ModelError(f"trials must be >= 1, got {trials}")
    n = plant.n
    ms = [s.m for s in sensors]
    for i, s in enumerate(sensors):
        if s.n != n:
            raise ModelError(f"sensor {i}: C has {s.n} columns, plant state has {n}")
    M = trials
    xi0 = np.zeros((M, n))
    xiw = np.zeros((M, horizon, n))
    xiv = [np.zeros((M, horizon, m)) for m in ms]
    if noise:
        for t in range(M):
            tid = first_trial + t
            xi0[t] = _stream(seed, tid, _INITIAL).standard_normal(n)
            xiw[t] = _stream(seed, tid, _PROCESS).standard_normal((horizon, n))
            for i, m in enumerate(ms):
                xiv[i][t] = _stream(seed, tid, _MEASUREMENT, i).standard_normal((horizon, m))

    x = np.empty((M, horizon + 1, n))
    w = np.empty((M, horizon, n))
    x[:, 0] = plant.x0_mean + xi0 @ la.psd_sqrt_factor(plant.P0).T
    for k in range(1, horizon + 1):
        Lq = la.cho_factor(plant.Q(k - 1), "Q")[0]
        w[:, k - 1] = xiw[:, k - 1] @ np.tril(Lq).T
        x[:, k] = x[:, k - 1] @ plant.A(k - 1).T + w[:, k - 1]

    zs, vs = [], []
    for i, s in enumerate(sensors):
        z = np.full((M, horizon + 1, ms[i]), np.nan)
        v = np.full((M, horizon + 1, ms[i]), np.nan)
        for k in range(1, horizon + 1):
            Lr = np.tril(la.cho_factor(s.R(k), "R")[0])
            v[:, k] = xiv[i][:, k - 1] @ Lr.T
            z[:, k] = x[:, k] @ s.C(k).T + v[:, k]
        zs.append(z)
        vs.append(v)
    return TrajectoryBatch(x, tuple(zs), w, tuple(vs))


def sample_trajectory(plant: PlantModel, sensors: Sequence[SensorModel], horizon: int,
                      seed: int, *, noise: bool = True):
    """Single realization: ``(states, measurements)``.

    ``states`` has ``horizon + 1`` rows; ``measurements[i]`` has the same number
    of rows with row 0 undefined (NaN) because measurements start at ``k = 1``.
    """
    batch = sample_trajectories(plant, sensors, horizon, seed, trials=1, noise=noise)
    return batch.states[0], [z[0] for z in batch.measurements]
