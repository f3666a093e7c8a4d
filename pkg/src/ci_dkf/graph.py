"""Time-varying directed communication graphs, CI weights and joint reachability.

An edge ``(j, i)`` active at step ``k`` means node ``j`` sends its local
estimate to node ``i`` at ``k``. Nodes are 0-based. Every node always keeps
a self-loop: the graph adds any missing self-loop and warns once.

A reachability or connectivity *window* counts graphs. ``window=w`` unions
``G(k), ..., G(k + w - 1)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ModelError

WEIGHT_SUM_TOL = 1e-12
DEFAULT_GENERAL_WINDOW = 64
DEFAULT_GENERAL_HORIZON = 1024


class TimeVaryingGraph:
    """Directed graph sequence ``k -> E(k)`` over nodes ``0..N-1``."""

    def __init__(self, N: int, edges: Callable[[int], Iterable[tuple[int, int]]], *,
                 period: int | None = None, length: int | None = None, name: str = "graph"):
        if N < 1:
            raise ModelError(f"graph needs at least one node, got N={N}")
        self.N = int(N)
        self._edges_fn = edges
        self.period = period
        self.length = length
        self.name = name
        self._cache: dict[int, frozenset] = {}
        self._warned = False

    @classmethod
    def static(cls, N, edges, name="static"):
        edges = frozenset((int(j), int(i)) for j, i in edges)
        return cls(N, lambda k: edges, period=1, name=name)

    @classmethod
    def periodic(cls, N, phases: Sequence[Iterable[tuple[int, int]]], name="periodic"):
        tables = [frozenset((int(j), int(i)) for j, i in ph) for ph in phases]
        if not tables:
            raise ModelError("periodic graph needs at least one phase")
        return cls(N, lambda k: tables[k], period=len(tables), name=name)

    @classmethod
    def from_rules(cls, N, rules: Sequence[tuple[int, int, Callable[[int], bool] | None]],
                   *, period=None, name="rules"):
        """Edges ``(j, i)`` gated by a predicate of ``k`` (``None`` means always on)."""
        rules = [(int(j), int(i), rule) for j, i, rule in rules]

        def edges(k):
            return frozenset((j, i) for j, i, rule in rules if rule is None or rule(k))
        return cls(N, edges, period=period, name=name)

    def edges(self, k: int) -> frozenset:
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
        raw = frozenset(self._edges_fn(key))
        for j, i in raw:
            if not (0 <= j < self.N and 0 <= i < self.N):
                raise ModelError(f"{self.name}: edge ({j}, {i}) at k={k} outside 0..{self.N - 1}")
        loops = frozenset((i, i) for i in range(self.N))
        if not loops <= raw:
            if not self._warned:
                warnings.warn(f"{self.name}: missing self-loops were added (every node fuses "
                              f"its own estimate)", stacklevel=2)
                self._warned = True
            raw = raw | loops
        self._cache[key] = raw
        return raw

    def adjacency(self, k: int) -> np.ndarray:
        """Boolean matrix with ``adj[j, i]`` set iff ``(j, i)`` is an edge at ``k``."""
        adj = np.zeros((self.N, self.N), dtype=bool)
        for j, i in self.edges(k):
            adj[j, i] = True
        return adj

    def in_neighbors(self, i: int, k: int) -> tuple[int, ...]:
        self._check_node(i)
        return tuple(sorted(j for j, t in self.edges(k) if t == i))

    def out_neighbors(self, i: int, k: int) -> tuple[int, ...]:
        self._check_node(i)
        return tuple(sorted(t for j, t in self.edges(k) if j == i))

    def with_period(self, T: int) -> "TimeVaryingGraph":
        if self.period is not None:
            if T % self.period:
                raise ModelError(f"{self.name}: period {self.period} does not divide {T}")
        else:
            for k in range(2 * T):
                if self.edges(k) != self.edges(k + T):
                    raise ModelError(f"{self.name}: edge set at k={k} differs from k={k + T}")
        g = TimeVaryingGraph(self.N, self.edges, period=T, name=self.name)
        g._warned = True
        return g

    def _check_node(self, i):
        if not 0 <= i < self.N:
            raise ModelError(f"node {i} outside 0..{self.N - 1}")

    def __repr__(self):
        return f"TimeVaryingGraph({self.name!r}, N={self.N}, period={self.period})"


def cosine_rule(a: float, threshold: float = -0.5) -> Callable[[int], bool]:
    """Edge active at ``k`` iff ``cos(a k) >= threshold``."""
    return lambda k: math.cos(a * k) >= threshold


def in_neighbors(g: TimeVaryingGraph, i: int, k: int) -> tuple[int, ...]:
    return g.in_neighbors(i, k)


class WeightSchedule:
    """CI weights ``pi_ji(k)``.

    ``policy="uniform"`` splits weight equally over the in-neighbors of each
    node. ``policy="explicit"`` reads ``N x N`` tables whose entry ``(j, i)``
    is ``pi_ji``; a periodic table repeats, a general one ends.
    """

    def __init__(self, policy: str = "uniform", tables=None, *, periodic: bool = True,
                 lower_bound: float | None = None):
        if policy not in ("uniform", "explicit"):
            raise ModelError(f"unknown weight policy {policy!r}")
        if policy == "explicit":
            if not tables:
                raise ModelError("explicit weight policy needs at least one table")
            tables = [np.array(t, dtype=float) for t in tables]
        self.policy = policy
        self.tables = tables
        self.periodic = periodic
        self.lower_bound = lower_bound

    @classmethod
    def uniform(cls, lower_bound=None):
        return cls("uniform", lower_bound=lower_bound)

    @classmethod
    def explicit(cls, tables, *, periodic=True, lower_bound=None):
        return cls("explicit", tables, periodic=periodic, lower_bound=lower_bound)

    def matrix(self, g: TimeVaryingGraph, k: int) -> np.ndarray:
        adj = g.adjacency(k)
        if self.policy == "uniform":
            Pi = adj / adj.sum(axis=0, keepdims=True)
        else:
            if self.periodic:
                Pi = self.tables[k % len(self.tables)].copy()
            elif k < len(self.tables):
                Pi = self.tables[k].copy()
            else:
                raise ModelError(f"weight table has {len(self.tables)} steps; k={k} requested")
            if Pi.shape != (g.N, g.N):
                raise ModelError(f"weight table at k={k} has shape {Pi.shape}, expected {(g.N, g.N)}")
            bad = (Pi != 0) & ~adj
            if bad.any():
                j, i = map(int, np.argwhere(bad)[0])
                raise ModelError(f"weight pi_{j}{i} at k={k} refers to an inactive edge")
        _validate_weights(Pi, adj, k, self.lower_bound)
        return Pi

    def with_period(self, T: int, g: TimeVaryingGraph) -> "WeightSchedule":
        if self.policy == "explicit":
            if not self.periodic:
                for k in range(min(len(self.tables), 2 * T)):
                    if k + T < len(self.tables) and not np.array_equal(self.tables[k], self.tables[k + T]):
                        raise ModelError(f"weight table at k={k} differs from k={k + T}")
                tables = [self.tables[k] for k in range(T)]
            elif T % len(self.tables):
                raise ModelError(f"weight table period {len(self.tables)} does not divide {T}")
            else:
                tables = self.tables
            return WeightSchedule("explicit", tables, periodic=True, lower_bound=self.lower_bound)
        return self


def _validate_weights(Pi, adj, k, lower_bound):
    if (Pi < 0).any():
        raise ModelError(f"negative CI weight at k={k}")
    sums = Pi.sum(axis=0)
    if np.max(np.abs(sums - 1.0)) > WEIGHT_SUM_TOL:
        i = int(np.argmax(np.abs(sums - 1.0)))
        raise ModelError(f"CI weights into node {i} sum to {sums[i]!r} at k={k}")
    if lower_bound is not None:
        active = Pi[adj]
        if active.size and active.min() < lower_bound:
            raise ModelError(f"active CI weight {active.min()} below declared bound {lower_bound} at k={k}")


def weight_matrix(w: WeightSchedule, g: TimeVaryingGraph, k: int) -> np.ndarray:
    """``Pi(k)`` with entry ``(j, i) = pi_ji(k)``; every column sums to one."""
    return w.matrix(g, k)


def weight_product(w: WeightSchedule, g: TimeVaryingGraph, k: int, iota: int) -> np.ndarray:
    """``Pi(k, k + iota) = Pi(k) Pi(k + 1) ... Pi(k + iota)``."""
    P = w.matrix(g, k)
    for s in range(k + 1, k + iota + 1):
        P = P @ w.matrix(g, s)
    return P


# -- reachability ------------------------------------------------------------------

def transitive_closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure of a boolean adjacency; ``out[j, i]``: path j -> i."""
    reach = adj.astype(bool) | np.eye(adj.shape[0], dtype=bool)
    while True:
        r = reach.astype(np.int64)
        nxt = reach | ((r @ r) > 0)
        if np.array_equal(nxt, reach):
            return reach
        reach = nxt


def _window_closures(g: TimeVaryingGraph, window: int, start: int, horizon: int):
    """Yield the closure of the union graph over ``[k, k + window)`` for each start k."""
    counts = np.zeros((g.N, g.N), dtype=np.int64)
    for s in range(start, start + window):
        counts += g.adjacency(s)
    for k in range(start, start + horizon):
        yield k, transitive_closure(counts > 0)
        counts -= g.adjacency(k)
        counts += g.adjacency(k + window)


def _defaults(g, window, horizon):
    if window is None:
        window = g.N * g.period if g.period else DEFAULT_GENERAL_WINDOW
    if horizon is None:
        horizon = g.period if g.period else DEFAULT_GENERAL_HORIZON
    if window < 1 or horizon < 1:
        raise ModelError(f"window and horizon must be positive, got {window}, {horizon}")
    return int(window), int(horizon)


@dataclass(frozen=True)
class ReachabilitySets:
    """For each node ``i`` the set of nodes from which ``i`` is jointly reachable."""

    sets: tuple[frozenset, ...]
    window: int
    start: int
    horizon: int
    exhaustive: bool

    def __getitem__(self, i) -> frozenset:
        return self.sets[i]

    def __len__(self):
        return len(self.sets)

    def sorted(self, i) -> list[int]:
        return sorted(self.sets[i])

    @property
    def label(self) -> str:
        if self.exhaustive:
            return "exact for all k (periodic graph)"
        return f"verified on [{self.start}, {self.start + self.horizon - 1}]"


def joint_reachability(g: TimeVaryingGraph, window: int | None = None, start: int = 0,
                       horizon: int | None = None) -> ReachabilitySets:
    """Nodes ``j`` from which each node ``i`` is reachable in every windowed union graph.

    Checks every start time in ``[start, start + horizon)``. For a periodic
    graph, one full period of start times covers every possible window, and
    the result is then labelled exhaustive.
    """
    window, horizon = _defaults(g, window, horizon)
    R = np.ones((g.N, g.N), dtype=bool)
    for _, closure in _window_closures(g, window, start, horizon):
        R &= closure
    sets = tuple(frozenset(int(j) for j in np.flatnonzero(R[:, i])) for i in range(g.N))
    exhaustive = g.period is not None and horizon >= g.period
    return ReachabilitySets(sets, window, start, horizon, exhaustive)


def is_jointly_strongly_connected(g: TimeVaryingGraph, window: int, horizon: int | None = None,
                                  start: int = 0) -> bool:
    """True iff every union of ``window`` consecutive graphs is strongly connected."""
    window, horizon = _defaults(g, window, horizon)
    return all(c.all() for _, c in _window_closures(g, window, start, horizon))
