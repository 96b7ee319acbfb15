"""Acceptance gate: one PASS/FAIL line per criterion in the terminal summary."""

import hashlib
import time

import numpy as np
import pytest

from crn_aoi.cli import main
from crn_aoi.cmdp import robbins_monro_lambda, solve_cmdp
from crn_aoi.model import ModelParams
from crn_aoi.oracle import DenseMDP, enumerate_policy_costs, lp_optimal_gain, neighbourhood_costs, policy_bits
from crn_aoi.simulator import SimConfig, compare, simulate
from crn_aoi.solver import (
    StructureError,
    extract_thresholds,
    policy_evaluation,
    rvi_solve,
    structured_rvi_solve,
    verify_value_structure,
)

K_SWEEP = (0.05, 0.1, 0.2, 0.5, 1.0)
LAM = 0.9
CMDP_INSTANCE = ModelParams(p=0.5, k=0.1, c_e=8, d=1.0, delta=6)


@pytest.fixture(scope="module")
def structure_runs():
    t0 = time.perf_counter()
    runs = {k: rvi_solve(ModelParams(p=0.5, k=k, c_e=8, delta=20), LAM) for k in K_SWEEP}
    return runs, time.perf_counter() - t0


def test_c1_type1_threshold(structure_runs, record):
    runs, elapsed = structure_runs
    etas, violations = {}, 0
    for k, (_, policy) in runs.items():
        try:
            etas[k] = extract_thresholds(policy).eta
        except StructureError as exc:
            violations += sum(1 for w in exc.witnesses if w[0].lam_p == 0)
    hit = [k for k, eta in etas.items() if eta in (3, 4)]
    ok = violations == 0 and len(etas) == len(K_SWEEP) and bool(hit) and elapsed < 10
    detail = f"eta by k {etas}, violations {violations}, threshold in {{3,4}} at k={hit}, {elapsed:.2f}s"
    assert record("C1 Type1 a_p-independent threshold", ok, detail), detail


def test_c2_type2_switch(structure_runs, record):
    runs, _ = structure_runs
    bad = []
    for k, (_, policy) in runs.items():
        g2 = policy.grid(1) == 1
        switch_violations = int((g2[:, :-1] & ~g2[:, 1:]).sum())
        nondecreasing = extract_thresholds(policy).type2_nondecreasing() if switch_violations == 0 else False
        if switch_violations or not nondecreasing:
            bad.append((k, switch_violations, nondecreasing))
    ok = not bad
    detail = "switch violations 0 and thresholds nondecreasing for every k" if ok else f"failures {bad}"
    assert record("C2 Type2 switch structure", ok, detail), detail


def test_c3_value_audit(structure_runs, record):
    runs, _ = structure_runs
    worst = {"monotone": 0.0, "separable": 0.0, "type3_constant": 0.0}
    ok = True
    for table, _ in runs.values():
        rep = verify_value_structure(table)
        ok &= rep.passed
        for name, (_, w) in rep.checks.items():
            worst[name] = max(worst[name], w)
    eps = 1e-6
    detail = (f"worst monotone drop {worst['monotone']:.2g} (tol {2 * eps:g}), "
              f"separability residual {worst['separable']:.2g} (tol {10 * eps:g}), "
              f"Type3 spread {worst['type3_constant']:.2g} (tol {2 * eps:g})")
    assert record("C3 value-function audit", ok, detail), detail


def test_c4_structured_equivalence(record):
    rng = np.random.default_rng(20240611)
    rows = []
    for _ in range(10):
        params = ModelParams(p=float(rng.uniform(0.1, 0.9)), k=float(rng.uniform(0.05, 1.5)),
                             c_e=float(rng.uniform(1, 10)), delta=int(rng.integers(10, 21)))
        lam = float(rng.uniform(0, 3))
        t1, p1 = rvi_solve(params, lam)
        t2, p2 = structured_rvi_solve(params, lam)
        rows.append((p1 == p2, float(np.abs(t1.array - t2.array).max()), t2.skipped_minimizations))
    ok = all(same and dv <= 2e-6 and sk > 0 for same, dv, sk in rows)
    detail = (f"10 random sets: policies equal {sum(r[0] for r in rows)}/10, "
              f"max value diff {max(r[1] for r in rows):.2g}, min skipped {min(r[2] for r in rows)}")
    assert record("C4 structured RVI equivalence", ok, detail), detail


def test_c5_small_instance_oracle(record):
    t0 = time.perf_counter()
    lam = LAM
    base = ModelParams(p=0.5, k=0.1, c_e=8)
    # full enumeration is feasible at delta=3 (2**18 policies)
    p3 = base.replace(delta=3)
    g3 = policy_evaluation(rvi_solve(p3, lam)[1]).lagrangian(lam)
    costs, _ = enumerate_policy_costs(p3, lam)
    # at delta=4 there are 2**32 policies; certify with the LP and a radius-2 neighbourhood
    p4 = base.replace(delta=4)
    pol4 = rvi_solve(p4, lam)[1]
    g4 = policy_evaluation(pol4).lagrangian(lam)
    lp = lp_optimal_gain(p4, lam)
    nb = neighbourhood_costs(p4, lam, policy_bits(DenseMDP(p4, lam), pol4.actions))
    elapsed = time.perf_counter() - t0
    ok = g3 <= costs.min() + 1e-9 and g4 <= lp + 1e-9 and g4 <= nb.min() + 1e-9 and elapsed < 60
    detail = (f"delta=3 rvi {g3:.10f} vs min of {costs.size} {costs.min():.10f}; delta=4 rvi {g4:.10f} vs "
              f"LP {lp:.10f} and best of {nb.size} neighbours {nb.min():.10f}; {elapsed:.1f}s")
    assert record("C5 small-instance oracle", ok, detail), detail


@pytest.mark.parametrize("d", [1.0, 0.5, 0.2])
def test_c6_cmdp(d, record):
    params = CMDP_INSTANCE.replace(d=d)
    mix, rep = solve_cmdp(params)
    binds = rep.status == "constraint binding"
    meets = abs(rep.blended_constraint - d) <= 1e-6 if binds else rep.blended_constraint <= d
    gap_ok = rep.duality_gap <= 1e-3 * rep.primal_estimate
    rm = robbins_monro_lambda(params, steps=200, horizon=10**5, seed=0)
    mid = 0.5 * (rep.lambda_low + rep.lambda_high)
    rm_ok = abs(rm[-1] - mid) <= 0.1
    ok = meets and gap_ok and rm_ok
    detail = (f"d={d}: {rep.status}, blended constraint {rep.blended_constraint:.9f}, alpha {rep.alpha:.4f}, "
              f"gap {rep.duality_gap:.2g} (primal {rep.primal_estimate:.4f}), "
              f"RM lambda {rm[-1]:.4f} vs midpoint {mid:.4f}")
    label = "C6 CMDP correctness" + ("" if d == 1.0 else " (binding variant)")
    assert record(label, ok, detail), detail


@pytest.fixture(scope="module")
def cmdp_policy():
    return solve_cmdp(CMDP_INSTANCE)[0]


def test_c7_analytic_vs_simulation(cmdp_policy, record):
    ev = policy_evaluation(cmdp_policy)
    m = simulate(cmdp_policy, CMDP_INSTANCE, SimConfig(horizon=10**6, replications=20, untruncated_ages=False))
    names = ("avg_cost", "avg_constraint", "avg_aoi_su", "avg_aoi_pu")
    inside = {n: getattr(m, n).covers(getattr(ev, n)) for n in names}
    ok = all(inside.values())
    detail = ", ".join(
        f"{n} {getattr(ev, n):.5f} in {getattr(m, n).mean:.5f}+-{getattr(m, n).half_width:.2g}: {inside[n]}"
        for n in names)
    assert record("C7 analytic vs simulation (ages capped)", ok, detail), detail


def test_c7_uncapped_ages_note(cmdp_policy, record):
    # informational: with uncapped ages the simulator measures a slightly different system
    ev = policy_evaluation(cmdp_policy)
    m = simulate(cmdp_policy, CMDP_INSTANCE, SimConfig(horizon=10**6, replications=20))
    names = ("avg_cost", "avg_constraint", "avg_aoi_su", "avg_aoi_pu")
    shifts = {n: getattr(m, n).mean - getattr(ev, n) for n in names}
    record("C7 note, ages uncapped", True,
           ", ".join(f"{n} shift {v:+.4f}" for n, v in shifts.items()), info=True)


def test_c8_baseline_comparison(record):
    t0 = time.perf_counter()
    grid = [ModelParams(p=p, k=0.5, c_e=8, delta=200) for p in (0.2, 0.5, 0.8)]
    rows = compare(grid, SimConfig(horizon=10**6, replications=20), lam=LAM)
    elapsed = time.perf_counter() - t0
    dominates = [r.cost_proposed <= r.cost_baseline + r.diff_half_width for r in rows]
    best = max(rows, key=lambda r: r.improvement_ratio)
    ok = all(dominates) and elapsed < 600
    detail = ("; ".join(f"p={r.p}: {r.cost_proposed:.3f} vs {r.cost_baseline:.3f} "
                        f"({100 * r.improvement_ratio:.1f}%)" for r in rows)
              + f"; best improvement {100 * best.improvement_ratio:.1f}% at p={best.p}; {elapsed:.0f}s")
    assert record("C8 proposed beats baseline over p", ok, detail), detail


def _digest(folder):
    return {f.name: hashlib.sha256(f.read_bytes()).hexdigest() for f in sorted(folder.iterdir())}


def test_c9_determinism(tmp_path, record):
    (tmp_path / "cfg.txt").write_text("p = 0.5\nk = 0.3\nd = 0.5\ndelta = 8\nseed = 5\nhorizon = 20000\nreps = 4\n")
    cfg = ["--config", str(tmp_path / "cfg.txt")]
    commands = {
        "solve": ["solve"],
        "cmdp": ["cmdp"],
        "simulate": ["simulate", "--trace", "200"],
        "sweep": ["sweep", "--p-grid", "0.3,0.7", "--lambda-grid", "0,0.5,2"],
        "verify": ["verify", "--delta", "4"],
    }
    differing = []
    for name, argv in commands.items():
        digests = []
        for run in (1, 2):
            out = tmp_path / f"{name}{run}"
            assert main([*argv, *cfg, "--out", str(out)]) == 0
            digests.append(_digest(out))
        if name == "verify":
            # the report carries a wall-clock line; compare the check lines only
            a, b = ((tmp_path / f"verify{r}" / "verify.txt").read_text().splitlines()[:-1] for r in (1, 2))
            if a != b:
                differing.append(name)
        elif digests[0] != digests[1]:
            differing.append(name)
    ok = not differing
    n_files = sum(len(_digest(tmp_path / f"{n}1")) for n in commands)
    detail = f"{n_files} files across {len(commands)} commands byte-identical" if ok else f"differ: {differing}"
    assert record("C9 determinism", ok, detail), detail
