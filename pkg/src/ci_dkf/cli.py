"""Command-line interface: ``ci-dkf <verb> --scenario FILE [options]``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 negative verdict (``spectral``; ``gramian --strict``).
Node numbers on the command line and in output are 1-based.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ModelError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_NEGATIVE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Output:
    """Collects report lines and writes them to ``--out`` or stdout."""

    def __init__(self, path):
        self.path = path
        self.lines = []

    def __call__(self, line=""):
        self.lines.append(str(line))

    def flush(self):
        text = "\n".join(self.lines) + "\n"
        if self.path:
            try:
                Path(self.path).write_text(text)
            except OSError as exc:
                raise OSError(f"cannot write {self.path}: {exc}") from exc
        else:
            sys.stdout.write(text)


def _load(args):
    from .harness import load_scenario
    return load_scenario(args.scenario)


def _fmt_set(s):
    return "{" + ", ".join(str(j + 1) for j in sorted(s)) + "}"


def cmd_simulate(args):
    from .harness import emit_csv, emit_plot, run_experiment, write_csv
    sc = _load(args)
    res = run_experiment(sc, args.steps, args.trials, args.seed, args.threads)
    if args.out:
        emit_csv(res, args.out)
    else:
        write_csv(res, sys.stdout)
    if args.plot:
        emit_plot(res, args.plot)
    div = res.divergence_counts()
    if div.any():
        nodes = ", ".join(f"{i + 1}:{int(c)}" for i, c in enumerate(div) if c)
        print(f"divergent trials per node: {nodes}", file=sys.stderr)
    return EXIT_OK


def cmd_reach(args):
    from .graph import joint_reachability
    sc = _load(args)
    reach = joint_reachability(sc.system.graph, args.window, args.start, args.horizon)
    out = _Output(args.out)
    out(f"window={reach.window} ({reach.label})")
    for i in range(len(reach)):
        out(f"R_{i + 1} = {_fmt_set(reach[i])}")
    out.flush()
    return EXIT_OK


def cmd_gramian(args):
    from .graph import joint_reachability
    from .observability import WINDOW_SWEEP, check_uniform_observability
    sc = _load(args)
    system = sc.system
    if args.all_nodes == (args.node is not None):
        raise ModelError("give exactly one of --node or --all-nodes")
    nodes = range(system.N) if args.all_nodes else [args.node - 1]
    for i in nodes:
        if not 0 <= i < system.N:
            raise ModelError(f"--node must be in 1..{system.N}")
    reach = joint_reachability(system.graph, args.reach_window)
    windows = args.window or list(WINDOW_SWEEP)
    out = _Output(args.out)
    negative = False
    for i in nodes:
        for w in windows:
            rep = check_uniform_observability(system, i, reach, window=w, horizon=args.horizon)
            if not args.all_nodes:
                for k, e in zip(rep.starts, rep.min_eigs):
                    out(f"node {i + 1} window {w} k {k} min_eig {e:.6e}")
            verdict = "observable" if rep.observable else "NOT observable"
            out(f"node {i + 1} subset {_fmt_set(rep.subset)} window {w}: min_eig {rep.min_eig:.6e} "
                f"threshold {rep.threshold:.3e} margin {rep.margin:.3e} -> {verdict} ({rep.label})")
            negative |= not rep.observable
    out.flush()
    return EXIT_NEGATIVE if (negative and args.strict) else EXIT_OK


def cmd_fixpoint(args):
    from .periodic import StackedOperatorData, fixpoint_to_dict, solve_fixpoint
    sc = _load(args)
    fix = solve_fixpoint(StackedOperatorData.from_system(sc.system), args.tol, args.max_iters)
    if args.out:
        try:
            Path(args.out).write_text(json.dumps(fixpoint_to_dict(fix), indent=1) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write {args.out}: {exc}") from exc
    print(f"converged in {fix.iterations} composite iterations, residual {fix.residual:.3e}, "
          f"uniqueness deviation {fix.uniqueness_deviation:.3e}")
    for t, tr in enumerate(fix.traces()):
        print(f"phase {t}: residual {fix.phase_residuals[t]:.3e} Tr P_hat = "
              + " ".join(f"{v:.6g}" for v in tr))
    return EXIT_OK


def cmd_spectral(args):
    from .closed_loop import assemble_error_system, gain_determinants, spectral_check
    from .periodic import (StackedOperatorData, fixpoint_from_dict, solve_fixpoint,
                           steady_filter_params)
    sc = _load(args)
    if args.fix:
        try:
            fix = fixpoint_from_dict(json.loads(Path(args.fix).read_text()))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ModelError(f"cannot read fixpoint file {args.fix}: {exc}") from exc
    else:
        fix = solve_fixpoint(StackedOperatorData.from_system(sc.system))
    params = steady_filter_params(fix, sc.system)
    mats = assemble_error_system(params, sc.system)
    verdict = spectral_check(mats)
    out = _Output(args.out)
    for t, rho in enumerate(verdict.rho):
        out(f"phase {t}: rho {rho:.12f} margin {1.0 - rho:.3e}")
    out(f"subspace-iteration rho {verdict.power_rho:.12f}")
    out(f"min Det(I - K C) {float(np.min(gain_determinants(params, sc.system))):.6e}")
    out(f"verdict: {'STABLE' if verdict.stable else 'NOT STABLE'}")
    out.flush()
    return EXIT_OK if verdict.stable else EXIT_NEGATIVE


def cmd_lint(args):
    from .observability import lint
    sc = _load(args)
    c = lint(sc.system, args.horizon)
    out = _Output(args.out)
    out(f"checked k in [{c.steps[0]}, {c.steps[1]}]")
    out(f"a_l {c.a_l:.6g}  a_u {c.a_u:.6g}  q_l {c.q_l:.6g}  q_u {c.q_u:.6g}  pi_l {c.pi_l:.6g}")
    for i in range(len(c.c_u)):
        out(f"node {i + 1}: c_u {c.c_u[i]:.6g}  r_l {c.r_l[i]:.6g}  r_u {c.r_u[i]:.6g}")
    for w in c.warnings():
        out(f"warning: {w}")
    out("ok" if c.ok else "assumption bounds violated")
    out.flush()
    return EXIT_OK


def cmd_periodicity(args):
    from .harness import periodicity_report, run_experiment
    sc = _load(args)
    T = args.period or sc.period
    if T is None:
        raise ModelError("scenario has no period; pass --period")
    res = run_experiment(sc, args.steps, 1, args.seed, args.threads)
    rep = periodicity_report(res, T, args.tail, args.tol)
    out = _Output(args.out)
    for i, d in enumerate(rep.defect):
        out(f"node {i + 1}: defect {d:.3e}")
    out(f"max defect {rep.max_defect:.3e} over the last {rep.tail} of {res.steps} steps: "
        f"{'converged' if rep.converged else 'NOT converged'} (tol {rep.tol:g})")
    out.flush()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help="scenario JSON file or bundled name (sec5_general, sec5_degraded, sec5_periodic)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for Monte Carlo trials (CI_DKF_THREADS overrides)")

    p = _Parser(prog="ci-dkf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo MSE experiment -> CSV")
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--plot", help="also write a per-node MSE chart (SVG)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reach", parents=[common], help="joint reachability sets")
    s.add_argument("--window", type=int)
    s.add_argument("--horizon", type=int)
    s.add_argument("--start", type=int, default=0)
    s.set_defaults(func=cmd_reach)

    s = sub.add_parser("gramian", parents=[common], help="uniform observability of ([C]_R_i, A)")
    s.add_argument("--node", type=int)
    s.add_argument("--all-nodes", action="store_true")
    s.add_argument("--window", type=int, action="append",
                   help="Gramian window; repeat for a sweep (default 4, 8, 16)")
    s.add_argument("--horizon", type=int, default=512)
    s.add_argument("--reach-window", type=int, help="window for the reachability sets")
    s.add_argument("--strict", action="store_true", help="exit 3 if any check is negative")
    s.set_defaults(func=cmd_gramian)

    s = sub.add_parser("fixpoint", parents=[common], help="periodic fixed point X_t and P_hat_t")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iters", type=int, default=100_000)
    s.set_defaults(func=cmd_fixpoint)

    s = sub.add_parser("spectral", parents=[common], help="Schur stability of the steady error system")
    s.add_argument("--fix", help="fixpoint JSON written by 'fixpoint' (solved if omitted)")
    s.set_defaults(func=cmd_spectral)

    s = sub.add_parser("lint", parents=[common], help="bounds on A, Q, C, R and CI weights")
    s.add_argument("--horizon", type=int)
    s.set_defaults(func=cmd_lint)

    s = sub.add_parser("periodicity", parents=[common], help="periodicity defect of Tr P_hat")
    s.add_argument("--steps", type=int, default=800)
    s.add_argument("--tail", type=int, default=100)
    s.add_argument("--period", type=int)
    s.add_argument("--tol", type=float, default=1e-8)
    s.set_defaults(func=cmd_periodicity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
