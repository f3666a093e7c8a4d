"""Scenario files: JSON description of plant, sensors, graph, weights and initial conditions.

Node numbers in scenario files are 1-based; the Python objects built from them
are 0-based.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import ModelError
from ..graph import TimeVaryingGraph, WeightSchedule, cosine_rule
from ..model import (PlantModel, Schedule, SensorModel, SystemSchedule, builtin_cv2d,
                     dt_constant, dt_cos_pi, dt_sin)

BUNDLED = ("sec5_general", "sec5_degraded", "sec5_periodic")


@dataclass(frozen=True)
class Scenario:
    name: str
    system: SystemSchedule
    x_hat0: np.ndarray | None
    P_hat0: np.ndarray | None
    noise: bool
    raw: dict

    @property
    def hash(self) -> str:
        return scenario_hash(self.raw)

    @property
    def N(self):
        return self.system.N

    @property
    def period(self):
        return self.system.period


def scenario_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _matrix(value, what):
    arr = np.array(value, dtype=float)
    if arr.ndim == 1 and what.endswith("x0_mean"):
        return arr
    if arr.ndim not in (2, 3):
        raise ModelError(f"{what}: expected a matrix (rows) or a list of matrices, got ndim={arr.ndim}")
    return arr


def _schedule(value, what, period):
    arr = _matrix(value, what)
    if arr.ndim == 2:
        return Schedule.constant(arr, name=what)
    if period is not None:
        return Schedule.periodic(list(arr), name=what)
    return Schedule.table(list(arr), name=what)


def _dt_schedule(spec):
    kind = spec.get("kind", "constant")
    base = float(spec.get("base", 1.0))
    amp = float(spec.get("amp", 0.0))
    if kind == "constant":
        return dt_constant(base)
    if kind == "sin":
        return dt_sin(base, amp)
    if kind == "cos_pi":
        return dt_cos_pi(base, amp)
    raise ModelError(f"unknown dt kind {kind!r}")


def _plant(spec, init, period):
    x0 = init.get("x0_mean")
    P0 = init.get("P0")
    if "builtin" in spec:
        if spec["builtin"] != "cv2d":
            raise ModelError(f"unknown builtin plant {spec['builtin']!r}")
        return builtin_cv2d(_dt_schedule(spec.get("dt", {})), float(spec.get("Sw", 0.2)),
                            x0_mean=x0, P0=P0, variant=spec.get("variant", "printed"))
    A = _schedule(spec["A"], "A", period)
    Q = _schedule(spec["Q"], "Q", period)
    n = A(0).shape[0]
    return PlantModel(A, Q, np.zeros(n) if x0 is None else x0, np.eye(n) if P0 is None else P0)


def _rule(spec):
    if spec is None:
        return None
    kind = spec.get("kind")
    if kind == "cos":
        return cosine_rule(float(spec["a"]), float(spec.get("threshold", -0.5)))
    if kind == "phases":
        on = frozenset(int(p) for p in spec["active"])
        T = int(spec["period"])
        return lambda k: k % T in on
    raise ModelError(f"unknown edge rule kind {kind!r}")


def _node(v, N, what):
    v = int(v)
    if not 1 <= v <= N:
        raise ModelError(f"{what}: node {v} outside 1..{N}")
    return v - 1


def _graph(spec):
    N = int(spec["N"])
    loops = [(i, i) for i in range(N)] if spec.get("self_loops", False) else []
    if "phases" in spec:
        phases = [[(_node(a, N, "graph"), _node(b, N, "graph")) for a, b in ph] + loops
                  for ph in spec["phases"]]
        return TimeVaryingGraph.periodic(N, phases, name="scenario graph")
    rules = [(_node(e["from"], N, "graph"), _node(e["to"], N, "graph"), _rule(e.get("rule")))
             for e in spec.get("edges", [])]
    rules += [(i, i, None) for i, _ in loops]
    return TimeVaryingGraph.from_rules(N, rules, name="scenario graph")


def _weights(spec):
    if not spec or spec.get("policy", "uniform") == "uniform":
        return WeightSchedule.uniform(spec.get("lower_bound") if spec else None)
    if spec["policy"] == "explicit":
        return WeightSchedule.explicit(spec["tables"], periodic=spec.get("periodic", True),
                                       lower_bound=spec.get("lower_bound"))
    raise ModelError(f"unknown weight policy {spec['policy']!r}")


def scenario_from_dict(raw: dict) -> Scenario:
    try:
        period = raw.get("period")
        init = raw.get("initial", {})
        plant = _plant(raw["plant"], init, period)
        sensors = tuple(SensorModel(_schedule(s["C"], f"C_{i + 1}", period),
                                    _schedule(s["R"], f"R_{i + 1}", period), i)
                        for i, s in enumerate(raw["sensors"]))
        system = SystemSchedule(plant, sensors, _graph(raw["graph"]), _weights(raw.get("weights")),
                                period)
    except KeyError as exc:
        raise ModelError(f"scenario is missing key {exc}") from exc
    x_hat0 = init.get("x_hat0")
    P_hat0 = init.get("P_hat0")
    return Scenario(raw.get("name", "scenario"), system,
                    None if x_hat0 is None else np.array(x_hat0, dtype=float),
                    None if P_hat0 is None else np.array(P_hat0, dtype=float),
                    bool(raw.get("noise", True)), raw)


def load_scenario(source: str | Path) -> Scenario:
    """Load a scenario from a JSON file path or a bundled scenario name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    else:
        name = path.name[:-5] if path.name.endswith(".json") else path.name
        if name not in BUNDLED:
            raise ModelError(f"no scenario file {str(source)!r} and no bundled scenario of that "
                             f"name (bundled: {', '.join(BUNDLED)})")
        text = resources.files("ci_dkf.scenarios").joinpath(f"{name}.json").read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{source}: invalid JSON ({exc})") from exc
    return scenario_from_dict(raw)
