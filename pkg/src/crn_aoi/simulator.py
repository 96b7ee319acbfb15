"""Slot-level Monte Carlo simulation of the PU/SU system.

Each replication starts from ``(1, 1, 0, 0)`` and draws its arrival stream
from the counter-based ``Philox(seed + replication)`` generator, so two
policies simulated with the same configuration see identical arrivals
(common random numbers).  Ages are tracked without a cap by default; the
policy is looked up at the capped state.
"""

from __future__ import annotations

import dataclasses
from typing import NamedTuple

import numba
import numpy as np
from scipy import stats

from .cmdp import MixturePolicy, solve_cmdp, SOLVERS
from .model import INITIAL_STATE, Action, ModelParams, ParameterError, SystemState, successor
from .model import constraint_cost, energy_cost, stage_cost, state_space
from .solver import Policy

UNBOUNDED = -1


class PolicyCoverageError(LookupError):
    pass


@dataclasses.dataclass(frozen=True)
class SimConfig:
    horizon: int = 10**6
    seed: int = 0
    replications: int = 20
    warmup: int = 0
    untruncated_ages: bool = True

    def __post_init__(self):
        if not self.horizon > self.warmup >= 0:
            raise ParameterError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ParameterError("need at least one replication")


class Estimate(NamedTuple):
    mean: float
    half_width: float
    values: tuple

    def covers(self, x: float) -> bool:
        return abs(x - self.mean) <= self.half_width


def estimate(values) -> Estimate:
    """Mean with a 95% Student-t half-width across replications."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return Estimate(float(v.mean()), float("nan"), tuple(v.tolist()))
    hw = stats.t.ppf(0.975, v.size - 1) * v.std(ddof=1) / np.sqrt(v.size)
    return Estimate(float(v.mean()), float(hw), tuple(v.tolist()))


@dataclasses.dataclass
class Metrics:
    avg_cost: Estimate
    avg_aoi_su: Estimate
    avg_aoi_pu: Estimate
    avg_energy: Estimate
    avg_constraint: Estimate
    nonstationary: bool = False

    FIELDS = ("avg_cost", "avg_aoi_su", "avg_aoi_pu", "avg_energy", "avg_constraint")


@numba.njit(cache=True)
def _step(a_p, a_s, lam_p, lam_s, action, arrival, cap):
    """Next state after one slot; ``cap < 0`` disables the age cap."""
    if cap < 0:
        np_inc = a_p + 1
        ns_inc = a_s + 1
    else:
        np_inc = min(a_p + 1, cap)
        ns_inc = min(a_s + 1, cap)
    if lam_s == 1:
        return (1 if lam_p == 1 else 2), ns_inc, arrival, 0
    if action == 1:
        return np_inc, 1, arrival, lam_p
    if lam_p == 1:
        return 1, ns_inc, arrival, 0
    return np_inc, ns_inc, arrival, 0


@numba.njit(cache=True)
def _run(table, delta, energy_unit, charge_relay, arrivals, warmup, cap, record):
    # table[lam_s, lam_p, a_p, a_s] holds action codes, ages clipped to delta
    a_p, a_s, lam_p, lam_s = 1, 1, 0, 0
    sums = np.zeros(5)  # cost, aoi_su, aoi_pu, energy, charge
    horizon = arrivals.shape[0]
    for t in range(horizon):
        if lam_s == 1:
            action = 3
        else:
            action = table[0, lam_p, min(a_p, delta), min(a_s, delta)]
            if action <= 0:
                return sums, a_p, a_s, t
        energy = 0.0
        if action == 1 or (action == 3 and charge_relay):
            energy = energy_unit
        charge = a_p if (lam_p == 1 and action == 1) else 0
        b_p, b_s, b_lp, b_ls = _step(a_p, a_s, lam_p, lam_s, action, arrivals[t], cap)
        cost = (1.0 if action == 1 else (a_s + 1.0 if cap < 0 else min(a_s + 1.0, cap))) + energy
        if record.shape[0] > 0:
            record[t] = cost
        if t >= warmup:
            sums[0] += cost
            sums[1] += a_s
            sums[2] += a_p
            sums[3] += energy
            sums[4] += charge
        a_p, a_s, lam_p, lam_s = b_p, b_s, b_lp, b_ls
    return sums, a_p, a_s, -1


def _lookup_table(policy: Policy) -> np.ndarray:
    space = policy.space
    d = space.params.delta
    table = np.zeros((2, 2, d + 1, d + 1), dtype=np.int64)
    table[space.lam_s, space.lam_p, space.a_p, space.a_s] = policy.array
    return table


def _arrivals(rng: np.random.Generator, horizon: int, p: float) -> np.ndarray:
    return (rng.random(horizon) < p).astype(np.int64)


def _components(policy):
    if isinstance(policy, MixturePolicy):
        return policy.pi_low, policy.pi_high, policy.alpha
    return policy, policy, 1.0


def _run_one(policy, params, cfg, rep, record=None):
    low, high, alpha = _components(policy)
    rng = np.random.Generator(np.random.Philox(cfg.seed + rep))
    arrivals = _arrivals(rng, cfg.horizon, params.p)
    pure = low if rng.random() < alpha else high
    if pure.params != params:
        raise ParameterError("policy was built for different parameters")
    cap = UNBOUNDED if cfg.untruncated_ages else params.delta
    rec = np.zeros(0) if record is None else record
    sums, a_p, a_s, failed = _run(
        _lookup_table(pure), params.delta, params.energy_unit, params.charge_relay_energy,
        arrivals, cfg.warmup, cap, rec,
    )
    if failed >= 0:
        raise PolicyCoverageError(f"policy has no entry for a state visited at slot {failed}")
    return sums / (cfg.horizon - cfg.warmup), a_p, a_s


def simulate(policy, params: ModelParams, cfg: SimConfig) -> Metrics:
    """Replicated simulation of a deterministic or mixture policy."""
    per_rep = []
    stuck = False
    window = cfg.horizon - cfg.warmup
    for rep in range(cfg.replications):
        avgs, a_p, a_s = _run_one(policy, params, cfg, rep)
        per_rep.append(avgs)
        # an age that never reset over half the window means averages drift with the horizon
        stuck |= max(a_p, a_s) > window // 2
    per_rep = np.array(per_rep)
    return Metrics(*(estimate(per_rep[:, i]) for i in range(5)), nonstationary=bool(stuck))


def convergence_log(policy, params: ModelParams, cfg: SimConfig, points: int = 50) -> list[tuple[int, float]]:
    """Running average cost of replication 0 at log-spaced slot counts."""
    record = np.zeros(cfg.horizon)
    _run_one(policy, params, cfg, 0, record)
    running = np.cumsum(record) / np.arange(1, cfg.horizon + 1)
    ticks = np.unique(np.geomspace(1, cfg.horizon, points).astype(int))
    return [(int(t), float(running[t - 1])) for t in ticks]


def baseline_policy(params: ModelParams) -> Policy:
    """Zero-wait style rule: update whenever the PU is idle, never relay."""
    space = state_space(params)
    acts = np.where(space.lam_p == 1, Action.SILENT, Action.UPDATE).astype(np.int8)
    acts[space.forced] = Action.FORCED
    return Policy(space, acts, 0.0)


class ComparisonRow(NamedTuple):
    p: float
    cost_proposed: float
    hw_proposed: float
    cost_baseline: float
    hw_baseline: float
    diff_half_width: float
    improvement_ratio: float


def compare(params_grid, cfg: SimConfig, mode: str = "unconstrained", lam: float = 0.9,
            solver: str = "rvi") -> list[ComparisonRow]:
    """Simulate the solved policy against the baseline at each parameter point.

    Both policies share arrival streams.  ``diff_half_width`` is the 95%
    half-width of the paired per-replication difference (baseline minus
    proposed).  ``improvement_ratio`` is ``1 - proposed / baseline``.
    """
    params_grid = list(params_grid)
    if not params_grid:
        raise ParameterError("empty parameter grid")
    if mode not in ("constrained", "unconstrained"):
        raise ParameterError(f"unknown mode {mode!r}")
    rows = []
    for params in params_grid:
        if mode == "constrained":
            proposed, _ = solve_cmdp(params, solver)
        else:
            _, proposed = SOLVERS[solver](params, lam)
        mp = simulate(proposed, params, cfg)
        mb = simulate(baseline_policy(params), params, cfg)
        diff = estimate(np.subtract(mb.avg_cost.values, mp.avg_cost.values))
        rows.append(ComparisonRow(
            params.p, mp.avg_cost.mean, mp.avg_cost.half_width,
            mb.avg_cost.mean, mb.avg_cost.half_width, diff.half_width,
            1.0 - mp.avg_cost.mean / mb.avg_cost.mean,
        ))
    return rows


class TraceRecord(NamedTuple):
    t: int
    a_p: int
    a_s: int
    lam_p: int
    lam_s: int
    action: int
    cost: float
    charge: float


def trace(policy, params: ModelParams, cfg: SimConfig, length: int) -> list[TraceRecord]:
    """Slot-by-slot log of replication 0, using the same arrival stream as :func:`simulate`."""
    if length > 10**5:
        raise ParameterError("trace length is limited to 1e5 slots")
    low, high, alpha = _components(policy)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    arrivals = _arrivals(rng, max(length, 1), params.p)
    pure = low if rng.random() < alpha else high
    cap = None if cfg.untruncated_ages else params.delta
    d = params.delta
    s = INITIAL_STATE
    out = []
    for t in range(length):
        key = SystemState(min(s.a_p, d), min(s.a_s, d), s.lam_p, s.lam_s)
        a = pure[key]
        nxt = successor(s, a, int(arrivals[t]), cap)
        cost = stage_cost(key, a, params)
        if cap is None and a != Action.UPDATE:
            cost = float(s.a_s + 1) + energy_cost(key, a, params)
        out.append(TraceRecord(t, *s, int(a), cost, float(s.a_p) if constraint_cost(key, a) else 0.0))
        s = nxt
    return out
