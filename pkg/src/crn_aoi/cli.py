"""Batch front end: ``crn-aoi {solve,cmdp,simulate,sweep,verify}``.

Every command reads an optional ``key = value`` config file; command-line
flags override it.  Outputs go to ``--out`` (default ``.``).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .cmdp import SOLVERS, constraint_curve, lagrangian_dual, solve_cmdp
from .model import Action, ModelParams, ParameterError, StateType, classify, enumerate_states, transition
from .oracle import DenseMDP, enumerate_policy_costs, lp_optimal_gain, neighbourhood_costs, policy_bits
from .simulator import Metrics, SimConfig, baseline_policy, compare, convergence_log, simulate, trace
from .solver import (
    ConvergenceError,
    StructureError,
    bellman_residual,
    extract_thresholds,
    policy_evaluation,
    verify_value_structure,
)

# flag dest -> config key
_FLAG_KEYS = {
    "p": "p", "k": "k", "ce": "c_e", "d": "d", "delta": "delta", "epsilon": "epsilon",
    "lam": "lambda", "seed": "seed", "horizon": "horizon", "reps": "reps",
    "warmup": "warmup", "solver": "solver", "mode": "mode",
}
_DEFAULTS = {"lambda": "0.9", "seed": "0", "horizon": "1000000", "reps": "20", "warmup": "0",
             "solver": "rvi", "mode": "unconstrained"}


class UsageError(Exception):
    pass


def _settings(args) -> dict[str, str]:
    merged = dict(_DEFAULTS)
    if args.config:
        merged.update(io.read_config(args.config))
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            merged[key] = str(value)
    if getattr(args, "relay_energy", False):
        merged["charge_relay_energy"] = "true"
    return merged


def _sim_config(cfg: dict, truncate: bool) -> SimConfig:
    return SimConfig(horizon=int(cfg["horizon"]), seed=int(cfg["seed"]), replications=int(cfg["reps"]),
                     warmup=int(cfg["warmup"]), untruncated_ages=not truncate)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threshold_text(t):
    return "never" if t is None else t


def cmd_solve(args) -> int:
    cfg = _settings(args)
    params = io.params_from_mapping(cfg)
    lam = float(cfg["lambda"])
    out = _out(args)
    table, policy = SOLVERS[cfg["solver"]](params, lam)
    stamp = io.params_stamp(params, **{"lambda": lam, "solver": cfg["solver"]})
    io.write_json(out / "policy.json", io.policy_document(policy, table))
    space = policy.space
    io.write_csv(out / "grid.csv", ["a_p", "a_s", "state_type", "action"],
                 ([s.a_p, s.a_s, int(classify(s)), int(a)] for s, a in zip(space.states, policy.array)
                  if classify(s) is not StateType.TYPE3), stamp)
    io.write_csv(out / "values.csv", ["a_p", "a_s", "lam_p", "lam_s", "value"],
                 ([*s, float(v)] for s, v in zip(space.states, table.array)), stamp)
    try:
        summary = extract_thresholds(policy)
    except StructureError as exc:
        print(f"warning: {exc}; witnesses {exc.witnesses[:3]}", file=sys.stderr)
        summary = None
    if summary is not None:
        rows = [[1, a_p, _threshold_text(summary.eta)] for a_p in range(1, params.delta + 1)]
        rows += [[2, a_p, _threshold_text(t)] for a_p, t in sorted(summary.type2_thresholds.items())]
        io.write_csv(out / "thresholds.csv", ["state_type", "a_p", "threshold"], rows, stamp)
        print(f"eta={_threshold_text(summary.eta)} gain={table.gain_estimate:.6f} iterations={table.iterations}")
    return 0


def cmd_cmdp(args) -> int:
    cfg = _settings(args)
    params = io.params_from_mapping(cfg)
    out = _out(args)
    mix, report = solve_cmdp(params, cfg["solver"])
    io.write_json(out / "mixture.json", io.mixture_document(mix))
    io.write_json(out / "report.json", io.report_document(report, params))
    duals = lagrangian_dual(report.trace, params.d)
    io.write_csv(out / "lambda_trace.csv", ["lambda", "gain", "constraint_avg", "dual_value"],
                 ([p.lam, p.gain, p.constraint_avg, float(v)] for p, v in zip(report.trace, duals)),
                 io.params_stamp(params, solver=cfg["solver"]))
    print(f"{report.status}: lambda*={report.lambda_star:.6g} alpha={report.alpha:.6g} "
          f"primal={report.primal_estimate:.6g} gap={report.duality_gap:.3g}")
    return 0


def _policy_for(args, cfg, params):
    if args.policy:
        return io.load_policy(args.policy)
    if args.baseline:
        return baseline_policy(params)
    if cfg["mode"] == "constrained":
        return solve_cmdp(params, cfg["solver"])[0]
    return SOLVERS[cfg["solver"]](params, float(cfg["lambda"]))[1]


def cmd_simulate(args) -> int:
    cfg = _settings(args)
    params = io.params_from_mapping(cfg)
    out = _out(args)
    policy = _policy_for(args, cfg, params)
    if policy.params != params:
        params = policy.params
    sim = _sim_config(cfg, args.truncate)
    metrics = simulate(policy, params, sim)
    stamp = io.params_stamp(params, seed=sim.seed, horizon=sim.horizon, reps=sim.replications,
                            warmup=sim.warmup, untruncated_ages=sim.untruncated_ages,
                            nonstationary=metrics.nonstationary)
    rows = [[name, getattr(metrics, name).mean, getattr(metrics, name).half_width] for name in Metrics.FIELDS]
    io.write_csv(out / "metrics.csv", ["metric", "mean", "half_width"], rows, stamp)
    if args.trace:
        recs = trace(policy, params, sim, args.trace)
        io.write_csv(out / "trace.csv", ["t", "a_p", "a_s", "lam_p", "lam_s", "action", "cost", "charge"],
                     recs, stamp)
    for name, mean, hw in rows:
        print(f"{name} {mean:.6g} +- {hw:.3g}")
    if metrics.nonstationary:
        print("warning: ages did not reset during the run; averages grow with the horizon", file=sys.stderr)
    return 0


def _grid(text):
    return [float(x) for x in text.split(",") if x.strip()] if text else []


def cmd_sweep(args) -> int:
    cfg = _settings(args)
    params = io.params_from_mapping(cfg)
    p_grid, lam_grid = _grid(args.p_grid), _grid(args.lambda_grid)
    if not p_grid and not lam_grid:
        raise UsageError("sweep needs a non-empty --p-grid or --lambda-grid")
    out = _out(args)
    if p_grid:
        sim = _sim_config(cfg, args.truncate)
        grid = [params.replace(p=p) for p in p_grid]
        lam = float(cfg["lambda"])
        rows = compare(grid, sim, mode=cfg["mode"], lam=lam, solver=cfg["solver"])
        stamp = io.params_stamp(params, p=p_grid, **{"lambda": lam, "mode": cfg["mode"], "seed": sim.seed,
                                                      "horizon": sim.horizon, "reps": sim.replications})
        io.write_csv(out / "comparison.csv", list(rows[0]._fields), rows, stamp)
        conv = []
        for pr in grid:
            _, proposed = SOLVERS[cfg["solver"]](pr, lam)
            for name, pol in (("proposed", proposed), ("baseline", baseline_policy(pr))):
                conv += [[pr.p, name, t, c] for t, c in convergence_log(pol, pr, sim)]
        io.write_csv(out / "convergence.csv", ["p", "policy", "slots", "running_avg_cost"], conv, stamp)
        for r in rows:
            print(f"p={r.p:g} proposed={r.cost_proposed:.5g} baseline={r.cost_baseline:.5g} "
                  f"improvement={100 * r.improvement_ratio:.1f}%")
    if lam_grid:
        curve = constraint_curve(params, lam_grid, cfg["solver"])
        duals = lagrangian_dual(curve, params.d)
        io.write_csv(out / "curve.csv", ["lambda", "gain", "constraint_avg", "dual_value"],
                     ([p.lam, p.gain, p.constraint_avg, float(v)] for p, v in zip(curve, duals)),
                     io.params_stamp(params, solver=cfg["solver"]))
        for p in curve:
            print(f"lambda={p.lam:g} gain={p.gain:.6g} constraint={p.constraint_avg:.6g}")
    return 0


def _check_model(params: ModelParams) -> tuple[bool, str]:
    states = set(enumerate_states(params))
    worst = 0.0
    for s in states:
        acts = (Action.FORCED,) if classify(s) is StateType.TYPE3 else (Action.UPDATE, Action.SILENT)
        for a in acts:
            dist = transition(s, a, params)
            worst = max(worst, abs(sum(pr for _, pr in dist) - 1.0))
            if any(nxt not in states for nxt, _ in dist):
                return False, f"transition from {s} leaves the space"
    return worst <= 1e-12, f"max |sum - 1| = {worst:.2g} over {len(states)} states"


def _check_oracle(params: ModelParams, lam: float) -> list[tuple[str, bool, str]]:
    out = []
    small = params.replace(delta=3)
    _, pol = SOLVERS["rvi"](small, lam)
    g = policy_evaluation(pol).lagrangian(lam)
    costs, _ = enumerate_policy_costs(small, lam)
    out.append(("oracle_enumeration_delta3", g <= costs.min() + 1e-9,
                f"rvi {g:.12g} vs min over {costs.size} policies {costs.min():.12g}"))
    four = params.replace(delta=4)
    _, pol = SOLVERS["rvi"](four, lam)
    g = policy_evaluation(pol).lagrangian(lam)
    lp = lp_optimal_gain(four, lam)
    nb = neighbourhood_costs(four, lam, policy_bits(DenseMDP(four, lam), pol.actions))
    out.append(("oracle_lp_delta4", g <= lp + 1e-9, f"rvi {g:.12g} vs LP {lp:.12g}"))
    out.append(("oracle_neighbourhood_delta4", g <= nb.min() + 1e-9,
                f"rvi {g:.12g} vs best of {nb.size} nearby policies {nb.min():.12g}"))
    return out


def cmd_verify(args) -> int:
    cfg = _settings(args)
    params = io.params_from_mapping(cfg)
    lam = float(cfg["lambda"])
    results: list[tuple[str, bool, str]] = []
    if args.policy:
        policy = io.load_policy(args.policy)
        try:
            s = extract_thresholds(policy)
            results.append(("policy_structure", True, f"eta={_threshold_text(s.eta)}"))
        except StructureError as exc:
            results.append(("policy_structure", False, f"StructureError: {exc}; witnesses {exc.witnesses[:3]}"))
    else:
        t0 = time.perf_counter()
        ok, msg = _check_model(params)
        results.append(("transition_kernel", ok, msg))
        table, policy = SOLVERS["rvi"](params, lam)
        stable, spolicy = SOLVERS["structured"](params, lam)
        dv = float(np.abs(table.array - stable.array).max())
        results.append(("structured_equivalence", policy == spolicy and dv <= 2 * params.epsilon,
                        f"policies equal={policy == spolicy}, max value diff {dv:.2g}, "
                        f"skipped {stable.skipped_minimizations}"))
        res = bellman_residual(table, lam)
        results.append(("bellman_residual", res <= 2 * params.epsilon, f"{res:.2g}"))
        try:
            s = extract_thresholds(policy)
            results.append(("threshold_structure", s.type2_nondecreasing(),
                            f"eta={_threshold_text(s.eta)}, type2 nondecreasing={s.type2_nondecreasing()}"))
        except StructureError as exc:
            results.append(("threshold_structure", False, f"StructureError: {exc}"))
        report = verify_value_structure(table)
        for name, (ok, worst) in report.checks.items():
            results.append((f"value_{name}", ok, f"worst {worst:.2g}"))
        results += _check_oracle(params, lam)
        results.append(("elapsed", True, f"{time.perf_counter() - t0:.1f}s"))
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {msg}" for name, ok, msg in results]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        _out(args)
        (Path(args.out) / "verify.txt").write_text(text)
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value parameter file")
    common.add_argument("--p", type=float)
    common.add_argument("--k", type=float)
    common.add_argument("--ce", type=float)
    common.add_argument("--d", type=float)
    common.add_argument("--delta", type=int)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--reps", type=int)
    common.add_argument("--warmup", type=int)
    common.add_argument("--solver", choices=sorted(SOLVERS))
    common.add_argument("--mode", choices=("constrained", "unconstrained"))
    common.add_argument("--relay-energy", action="store_true", help="charge k*C_e for relaying")
    common.add_argument("--out", default=".")

    parser = argparse.ArgumentParser(prog="crn-aoi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the MDP at one multiplier").set_defaults(func=cmd_solve)
    sub.add_parser("cmdp", parents=[common], help="solve the constrained problem").set_defaults(func=cmd_cmdp)
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo metrics for a policy")
    p.add_argument("--policy", help="policy or mixture JSON; default solves one")
    p.add_argument("--baseline", action="store_true", help="simulate the zero-wait baseline")
    p.add_argument("--trace", type=int, default=0, metavar="N", help="also write an N-slot trace")
    p.add_argument("--truncate", action="store_true", help="cap simulated ages at delta")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("sweep", parents=[common], help="baseline comparison over p or multiplier curve")
    p.add_argument("--p-grid", help="comma-separated arrival probabilities")
    p.add_argument("--lambda-grid", help="comma-separated multipliers")
    p.add_argument("--truncate", action="store_true")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("verify", parents=[common], help="run the structural and oracle checks")
    p.add_argument("--policy", help="check the structure of this policy file instead")
    p.set_defaults(func=cmd_verify, out=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ParameterError, ConvergenceError, StructureError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
