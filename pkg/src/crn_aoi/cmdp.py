"""Constrained problem: Lagrange multiplier search and policy mixing.

The PU constraint is priced with a multiplier ``lam``.  Raising ``lam`` can
only lower the long-run constraint charge of the optimal unconstrained
policy, so the multiplier where the charge crosses ``d`` is located by
bisection and the two policies on either side are mixed with a weight that
meets the bound exactly.  A Robbins-Monro iteration on simulated charges is
offered as an alternative multiplier estimator.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, NamedTuple

import numpy as np

from .model import ModelParams, ParameterError
from .solver import EvalResult, Policy, policy_evaluation, rvi_solve, structured_rvi_solve

BRACKET_CAP = 2.0**20
MATCH_TOL = 1e-9

SOLVERS = {"rvi": rvi_solve, "structured": structured_rvi_solve}


class BracketError(ValueError):
    pass


@dataclasses.dataclass
class MixturePolicy:
    """Randomises once per episode: ``pi_low`` with probability ``alpha``, else ``pi_high``."""

    pi_low: Policy
    pi_high: Policy
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"mixing weight {self.alpha} outside [0, 1]")
        if self.pi_low.lam > self.pi_high.lam:
            raise ParameterError("pi_low must be solved at the smaller multiplier")
        if self.pi_low.params != self.pi_high.params:
            raise ParameterError("mixture components use different parameters")

    @property
    def params(self) -> ModelParams:
        return self.pi_low.params

    @property
    def space(self):
        return self.pi_low.space

    def draw(self, u: float) -> Policy:
        """Component selected by a uniform draw ``u``."""
        return self.pi_low if u < self.alpha else self.pi_high


class CurvePoint(NamedTuple):
    lam: float
    gain: float
    constraint_avg: float
    avg_cost: float


@dataclasses.dataclass
class DualSolveReport:
    lambda_star: float
    lambda_low: float
    lambda_high: float
    alpha: float
    primal_estimate: float
    dual_value: float
    duality_gap: float
    blended_constraint: float
    status: str
    trace: list[CurvePoint]

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["trace"] = [p._asdict() for p in self.trace]
        return out


class _Oracle:
    """Solves and exactly evaluates ``pi*_lam``, caching by multiplier."""

    def __init__(self, params: ModelParams, solver: str = "rvi"):
        if solver not in SOLVERS:
            raise ParameterError(f"unknown solver {solver!r}")
        self.params = params
        self.solve = SOLVERS[solver]
        self.cache: dict[float, tuple[Policy, EvalResult]] = {}
        self.trace: list[CurvePoint] = []
        self._warm = None

    def __call__(self, lam: float) -> tuple[Policy, EvalResult]:
        lam = float(lam)
        if lam not in self.cache:
            table, policy = self.solve(self.params, lam, initial=self._warm)
            self._warm = table.array
            ev = policy_evaluation(policy)
            self.cache[lam] = (policy, ev)
            self.trace.append(CurvePoint(lam, ev.lagrangian(lam), ev.avg_constraint, ev.avg_cost))
        return self.cache[lam]

    def charge(self, lam: float) -> float:
        return self(lam)[1].avg_constraint


def constraint_curve(params: ModelParams, lambdas, solver: str = "rvi") -> list[CurvePoint]:
    """Exact ``(lam, gain, constraint_avg)`` of the optimal policy at each multiplier.

    ``gain`` is the exact long-run Lagrangian cost of the solved policy.
    """
    lambdas = sorted(float(x) for x in lambdas)
    if not lambdas:
        raise ParameterError("empty multiplier grid")
    if lambdas[0] < 0:
        raise ParameterError("multipliers must be nonnegative")
    oracle = _Oracle(params, solver)
    for lam in lambdas:
        oracle(lam)
    return sorted({p.lam: p for p in oracle.trace}.values())


def _bisect(oracle: _Oracle, lo: float, hi: float, tol: float) -> tuple[float, float]:
    d = oracle.params.d
    if lo == 0.0 and oracle.charge(0.0) <= d:
        return 0.0, 0.0
    if not lo < hi:
        raise BracketError(f"need lo < hi, got [{lo}, {hi}]")
    c_lo, c_hi = oracle.charge(lo), oracle.charge(hi)
    if not c_lo >= d >= c_hi:
        raise BracketError(
            f"[{lo}, {hi}] does not bracket d={d}: charges {c_lo:.6g}, {c_hi:.6g}; "
            "check lam=0 (constraint may already hold) or widen hi"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        c = oracle.charge(mid)
        if abs(c - d) <= MATCH_TOL:
            return mid, mid
        if c > d:
            lo = mid
        else:
            hi = mid
    return lo, hi


def bisect_lambda(params: ModelParams, lo: float, hi: float, tol: float = 1e-6,
                  solver: str = "rvi") -> tuple[float, float]:
    """Shrink a multiplier bracket whose charges straddle ``d``.

    Returns ``(lam1, lam2)`` where the optimal policy at ``lam1`` charges at
    least ``d`` and the one at ``lam2`` at most ``d``.
    """
    return _bisect(_Oracle(params, solver), lo, hi, tol)


def _mixture(oracle: _Oracle, lam1: float, lam2: float) -> MixturePolicy:
    if lam1 > lam2:
        raise ParameterError("need lam1 <= lam2")
    d = oracle.params.d
    pi1, ev1 = oracle(lam1)
    pi2, ev2 = oracle(lam2)
    c1, c2 = ev1.avg_constraint, ev2.avg_constraint
    if not ((lam1 == 0.0 or c1 >= d - MATCH_TOL) and c2 <= d + MATCH_TOL):
        # near the crossing the two actions tie to within solver accuracy, so a
        # re-solve can land on the other side; widen the bracket
        raise BracketError(f"charges {c1:.6g} at {lam1} and {c2:.6g} at {lam2} do not straddle d={d}")
    alpha = min(1.0, max(0.0, mixing_weight(c1, c2, d)))
    return MixturePolicy(pi1, pi2, alpha)


def build_mixture(params: ModelParams, lam1: float, lam2: float, solver: str = "rvi") -> MixturePolicy:
    """Mix the optimal policies at ``lam1`` and ``lam2`` so the charge equals ``d``."""
    return _mixture(_Oracle(params, solver), lam1, lam2)


def mixing_weight(c1: float, c2: float, d: float) -> float:
    return (d - c2) / (c1 - c2) if c1 > c2 else 1.0


def solve_cmdp(params: ModelParams, solver: str = "rvi", tol: float = 1e-6) -> tuple[MixturePolicy, DualSolveReport]:
    """Full pipeline: feasibility at ``lam=0``, bracket doubling, bisection, mixing."""
    oracle = _Oracle(params, solver)
    d = params.d
    if oracle.charge(0.0) <= d:
        lam1 = lam2 = 0.0
        status = "constraint slack at lambda=0"
    else:
        lo, hi = 0.0, 1.0
        while oracle.charge(hi) > d:
            lo, hi = hi, 2.0 * hi
            if hi > BRACKET_CAP:
                raise BracketError(f"no multiplier up to {BRACKET_CAP} meets d={d}")
        lam1, lam2 = _bisect(oracle, lo, hi, tol)
        status = "constraint binding"
    mix = _mixture(oracle, lam1, lam2)
    ev = policy_evaluation(mix)
    dual = max(p.gain - p.lam * d for p in oracle.trace)
    report = DualSolveReport(
        lambda_star=0.5 * (lam1 + lam2),
        lambda_low=lam1,
        lambda_high=lam2,
        alpha=mix.alpha,
        primal_estimate=ev.avg_cost,
        dual_value=dual,
        duality_gap=ev.avg_cost - dual,
        blended_constraint=ev.avg_constraint,
        status=status,
        trace=sorted({p.lam: p for p in oracle.trace}.values()),
    )
    return mix, report


def robbins_monro_lambda(
    params: ModelParams,
    lam0: float = 0.0,
    steps: int = 200,
    step_sizes: Callable[[int], float] | None = None,
    horizon: int = 10**5,
    seed: int = 0,
    estimator: Callable[[float, Policy, int], float] | None = None,
    solver: str = "rvi",
) -> list[float]:
    """Stochastic-approximation multiplier iterates ``lam_0, ..., lam_steps``.

    ``lam <- max(0, lam + a_n * (C_hat - d))`` where ``C_hat`` is the simulated
    average charge of the optimal policy at the current multiplier.  The
    default step size is ``1/n``.  ``estimator(lam, policy, n)`` replaces the
    simulation when given.
    """
    from .simulator import SimConfig, simulate

    if lam0 < 0:
        raise ParameterError("lam0 must be nonnegative")
    step_sizes = step_sizes or (lambda n: 1.0 / n)
    solve = SOLVERS[solver]
    if estimator is None:
        def estimator(lam, policy, n):
            cfg = SimConfig(horizon=horizon, seed=seed + n, replications=1, untruncated_ages=False)
            return simulate(policy, params, cfg).avg_constraint.mean

    lam = float(lam0)
    trace = [lam]
    warm = None
    for n in range(1, steps + 1):
        table, policy = solve(params, lam, initial=warm)
        warm = table.array
        c_hat = estimator(lam, policy, n)
        lam = max(0.0, lam + step_sizes(n) * (c_hat - params.d))
        trace.append(lam)
    return trace


def lagrangian_dual(points, d: float) -> np.ndarray:
    """``gain - lam * d`` along a computed curve."""
    return np.array([p.gain - p.lam * d for p in points])
