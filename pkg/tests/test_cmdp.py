import numpy as np
import pytest

from crn_aoi.cmdp import (
    BracketError,
    MixturePolicy,
    bisect_lambda,
    build_mixture,
    constraint_curve,
    lagrangian_dual,
    mixing_weight,
    robbins_monro_lambda,
    solve_cmdp,
)
from crn_aoi.model import Action, ModelParams, ParameterError
from crn_aoi.solver import policy_evaluation, rvi_solve

SMALL = ModelParams(p=0.5, k=0.1, c_e=8, d=0.5, delta=6)


@pytest.fixture(scope="module")
def curve():
    return constraint_curve(SMALL, [0.0, 0.01, 0.02, 0.05, 0.1, 0.3, 0.6, 1.0, 2.0, 5.0, 20.0])


def test_constraint_nonincreasing_in_multiplier(curve):
    charges = [p.constraint_avg for p in curve]
    assert all(a >= b - 1e-12 for a, b in zip(charges, charges[1:]))
    costs = [p.avg_cost for p in curve]
    assert all(a <= b + 1e-12 for a, b in zip(costs, costs[1:]))


def test_dual_function_is_concave(curve):
    # the pointwise minimum of affine functions of lam: check against every solved policy
    lams = np.array([p.lam for p in curve])
    g = lagrangian_dual(curve, SMALL.d)
    for p in curve:
        line = p.avg_cost + lams * (p.constraint_avg - SMALL.d)
        assert np.all(g <= line + 1e-6)


def test_huge_multiplier_silences_type2():
    params = SMALL
    _, policy = rvi_solve(params, 1e4)
    assert (policy.grid(1) == Action.SILENT).all()
    assert policy_evaluation(policy).avg_constraint == 0.0


def test_mixing_weight():
    assert mixing_weight(1.4, 0.6, 1.0) == pytest.approx(0.5)
    assert mixing_weight(1.4, 0.6, 1.4) == pytest.approx(1.0)
    assert mixing_weight(1.4, 0.6, 0.6) == pytest.approx(0.0)
    assert mixing_weight(0.7, 0.7, 0.7) == 1.0


def test_mixture_validation():
    _, lo = rvi_solve(SMALL, 0.0)
    _, hi = rvi_solve(SMALL, 1.0)
    with pytest.raises(ParameterError):
        MixturePolicy(lo, hi, 1.5)
    with pytest.raises(ParameterError):
        MixturePolicy(hi, lo, 0.5)
    mix = MixturePolicy(lo, hi, 0.25)
    assert mix.draw(0.1) is lo and mix.draw(0.9) is hi


def test_bisection_brackets_the_bound():
    lam1, lam2 = bisect_lambda(SMALL, 0.0, 1.0, tol=1e-6)
    assert 0 < lam2 - lam1 <= 1e-6 or lam1 == lam2
    c1 = policy_evaluation(rvi_solve(SMALL, lam1)[1]).avg_constraint
    c2 = policy_evaluation(rvi_solve(SMALL, lam2)[1]).avg_constraint
    assert c1 >= SMALL.d >= c2


def test_bisection_slack_at_zero():
    assert bisect_lambda(SMALL.replace(d=10.0), 0.0, 1.0) == (0.0, 0.0)


def test_bisection_rejects_bad_bracket():
    with pytest.raises(BracketError):
        bisect_lambda(SMALL, 0.5, 1.0)
    with pytest.raises(BracketError):
        bisect_lambda(SMALL, 1.0, 1.0)


def test_mixture_meets_bound():
    lam1, lam2 = bisect_lambda(SMALL, 0.0, 1.0, tol=1e-3)
    mix = build_mixture(SMALL, lam1, lam2)
    assert policy_evaluation(mix).avg_constraint == pytest.approx(SMALL.d, abs=1e-9)


def test_mixture_rejects_one_sided_bracket():
    with pytest.raises(BracketError):
        build_mixture(SMALL, 1.0, 2.0)


def test_solve_cmdp_slack():
    mix, report = solve_cmdp(SMALL.replace(d=1e6))
    assert report.status == "constraint slack at lambda=0"
    assert report.lambda_star == 0.0
    assert report.duality_gap == pytest.approx(0.0, abs=1e-9)
    assert mix.alpha == 1.0


def test_solve_cmdp_binding():
    mix, report = solve_cmdp(SMALL)
    assert report.status == "constraint binding"
    assert report.blended_constraint == pytest.approx(SMALL.d, abs=1e-6)
    assert 0 <= report.duality_gap <= 1e-3 * report.primal_estimate
    assert report.lambda_low <= report.lambda_star <= report.lambda_high
    assert set(report.as_dict()) >= {"duality_gap", "trace", "alpha"}


def test_solve_cmdp_zero_budget():
    mix, report = solve_cmdp(SMALL.replace(d=0.0))
    assert report.blended_constraint == pytest.approx(0.0, abs=1e-9)
    assert policy_evaluation(mix).avg_constraint == pytest.approx(0.0, abs=1e-9)


def test_structured_solver_gives_same_cmdp():
    _, a = solve_cmdp(SMALL)
    _, b = solve_cmdp(SMALL, solver="structured")
    assert a.lambda_star == pytest.approx(b.lambda_star, abs=1e-6)
    assert a.alpha == pytest.approx(b.alpha, abs=1e-6)


def test_unknown_solver():
    with pytest.raises(ParameterError):
        solve_cmdp(SMALL, solver="magic")


def test_robbins_monro_with_exact_estimator_settles_on_root():
    # a deterministic estimator with a known root at lam = 2
    trace = robbins_monro_lambda(SMALL, lam0=0.0, steps=400, estimator=lambda lam, pol, n: SMALL.d + (2.0 - lam))
    assert trace[0] == 0.0 and len(trace) == 401
    assert trace[-1] == pytest.approx(2.0, abs=1e-6)


def test_robbins_monro_slack_stays_at_zero():
    trace = robbins_monro_lambda(SMALL.replace(d=10.0), steps=5, horizon=10**4)
    assert trace == [0.0] * 6


def test_robbins_monro_rejects_negative_start():
    with pytest.raises(ParameterError):
        robbins_monro_lambda(SMALL, lam0=-1.0)


def test_mixture_no_worse_than_feasible_endpoint():
    mix, report = solve_cmdp(SMALL)
    ev_mix = policy_evaluation(mix)
    ev_high = policy_evaluation(mix.pi_high)
    assert ev_high.avg_constraint <= SMALL.d
    assert ev_mix.avg_cost <= ev_high.avg_cost + 1e-12


def test_charge_nonincreasing_on_full_size_grid():
    params = ModelParams(p=0.5, k=0.1, c_e=8, delta=20)
    pts = constraint_curve(params, [0, 0.3, 0.9, 3, 10])
    charges = [p.constraint_avg for p in pts]
    assert all(a >= b - 1e-9 for a, b in zip(charges, charges[1:]))
