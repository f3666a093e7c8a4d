"""Monte Carlo driver, metrics and CSV/SVG output."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ModelError
from ..filter import run_filter
from ..model import sample_trajectories
from .scenario import Scenario

DIVERGENCE_THRESHOLD = 1e12
CHUNK_TRIALS = 100
CSV_COLUMNS = ("k", "node", "mse", "trace_phat", "trace_plocal")


@dataclass(frozen=True)
class ExperimentResult:
    """Per-step, per-node metrics; rows are indexed by ``k = 0..steps``.

    ``mse`` and ``se`` average over the trials not flagged divergent for that
    node. ``divergent[t, i]`` is set when ``||x - x_hat_i||^2`` exceeded the
    threshold (or became non-finite) at some step of trial ``t``.
    """

    mse: np.ndarray
    se: np.ndarray
    trace_phat: np.ndarray
    trace_plocal: np.ndarray
    divergent: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.mse.shape[0] - 1

    @property
    def N(self) -> int:
        return self.mse.shape[1]

    @property
    def trials(self) -> int:
        return self.divergent.shape[0]

    def divergence_counts(self) -> np.ndarray:
        return self.divergent.sum(axis=0)


def _run_chunk(scenario: Scenario, steps, seed, first, count):
    system = scenario.system
    batch = sample_trajectories(system.plant, system.sensors, steps, seed, count,
                                first_trial=first, noise=scenario.noise)
    run = run_filter(system, batch.measurements, x_hat0=scenario.x_hat0, P_hat0=scenario.P_hat0)
    err = batch.states[:, :, None, :] - run.x_hat
    return np.sum(err * err, axis=-1), run


def _threads(threads):
    env = os.environ.get("CI_DKF_THREADS")
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ModelError(f"CI_DKF_THREADS must be an integer, got {env!r}") from None
    return max(1, int(threads or 1))


def run_experiment(scenario: Scenario, steps: int, trials: int = 200, seed: int = 0,
                   threads: int | None = None) -> ExperimentResult:
    """Average ``||x(k) - x_hat_i(k|k)||^2`` over ``trials`` independent runs.

    Trials are processed in fixed chunks with per-trial noise streams, so the
    result does not depend on ``threads``. Covariances do not depend on the
    data; their traces are taken from the first chunk.
    """
    if trials < 1:
        raise ModelError(f"trials must be >= 1, got {trials}")
    if steps < 0:
        raise ModelError(f"steps must be >= 0, got {steps}")
    N = scenario.N
    meta = {"scenario": scenario.name, "scenario_hash": scenario.hash, "trials": int(trials),
            "seed": int(seed), "steps": int(steps)}
    if steps == 0:
        empty = np.empty((1, N))
        return ExperimentResult(empty * np.nan, empty * np.nan, empty * np.nan, empty * np.nan,
                                np.zeros((trials, N), dtype=bool), meta)
    chunks = [(s, min(CHUNK_TRIALS, trials - s)) for s in range(0, trials, CHUNK_TRIALS)]
    workers = min(_threads(threads), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outs = list(pool.map(lambda c: _run_chunk(scenario, steps, seed, *c), chunks))
    else:
        outs = [_run_chunk(scenario, steps, seed, *c) for c in chunks]
    sq = np.concatenate([o[0] for o in outs], axis=0)
    run = outs[0][1]
    with np.errstate(invalid="ignore", over="ignore"):
        divergent = ~np.all(np.isfinite(sq) & (sq <= DIVERGENCE_THRESHOLD), axis=1)
    keep = ~divergent[:, None, :]
    count = keep.sum(axis=0)
    masked = np.where(keep, sq, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mse = masked.sum(axis=0) / count
        var = np.where(keep, (sq - mse) ** 2, 0.0).sum(axis=0) / np.maximum(count - 1, 1)
        se = np.sqrt(var / count)
    meta["divergent_trials"] = divergent.sum(axis=0).tolist()
    return ExperimentResult(mse, se, run.trace_fused(), run.trace_local(), divergent, meta)


def consistency_violations(result: ExperimentResult, ks, n_se: float = 3.0):
    """``(k, node, mse, bound)`` wherever ``mse > Tr P_hat_i(k|k) + n_se * SE``."""
    out = []
    for k in ks:
        for i in range(result.N):
            bound = result.trace_phat[k, i] + n_se * result.se[k, i]
            if not result.mse[k, i] <= bound:
                out.append((int(k), i, float(result.mse[k, i]), float(bound)))
    return out


@dataclass(frozen=True)
class PeriodicityReport:
    defect: np.ndarray
    period: int
    tail: int
    tol: float

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defect))

    @property
    def converged(self) -> bool:
        return self.max_defect < self.tol


def periodicity_report(result: ExperimentResult, T: int, tail: int = 100,
                       tol: float = 1e-8) -> PeriodicityReport:
    """Largest ``|Tr P_hat_i(k) - Tr P_hat_i(k - T)|`` over the last ``tail`` steps."""
    if T < 1 or tail < 1:
        raise ModelError(f"period and tail must be positive, got {T}, {tail}")
    if result.steps < 2 * T + tail:
        raise ModelError(f"run has {result.steps} steps; periodicity check needs at least "
                         f"{2 * T + tail} (2T + tail)")
    tr = result.trace_phat
    ks = np.arange(result.steps - tail + 1, result.steps + 1)
    defect = np.max(np.abs(tr[ks] - tr[ks - T]), axis=0)
    return PeriodicityReport(defect, int(T), int(tail), float(tol))


def write_csv(result: ExperimentResult, fh) -> None:
    """One row per ``(k, node)`` for ``k = 1..steps``; nodes are written 1-based."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for k in range(1, result.steps + 1):
        for i in range(result.N):
            w.writerow((k, i + 1, repr(float(result.mse[k, i])),
                        repr(float(result.trace_phat[k, i])),
                        repr(float(result.trace_plocal[k, i]))))


def emit_csv(result: ExperimentResult, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            write_csv(result, fh)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def emit_plot(result: ExperimentResult, path, *, log_scale: bool = True) -> None:
    """Per-node MSE against ``k`` as an SVG line chart."""
    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ks = np.arange(1, result.steps + 1)
    for i in range(result.N):
        ax.plot(ks, result.mse[1:, i], lw=0.9, label=f"node {i + 1}")
    if log_scale and result.steps and np.all(result.mse[1:] > 0):
        ax.set_yscale("log")
    ax.set_xlabel("k")
    ax.set_ylabel("MSE")
    ax.set_title(result.metadata.get("scenario", ""))
    if result.N:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise OSError(f"cannot write plot to {path}: {exc}") from exc
    finally:
        plt.close(fig)
