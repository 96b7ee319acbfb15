"""Average-cost solvers for the Lagrangian-relaxed MDP.

Two value-iteration variants are provided: plain relative value iteration and
a structure-aware version that stops minimising over actions once a
threshold has been crossed within the current sweep.  Both return a
:class:`ValueTable` and a greedy :class:`Policy`.  :func:`policy_evaluation`
computes exact long-run averages for any stationary policy from its
stationary distribution.
"""

from __future__ import annotations

import dataclasses
from typing import Iterator, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .model import (
    INITIAL_STATE,
    Action,
    ActionError,
    ModelParams,
    ParameterError,
    StateSpace,
    SystemState,
    available_actions,
    state_space,
)

TIE_TOL = 1e-12
DAMPING = 0.5
STALL_WINDOW = 1000


class ConvergenceError(RuntimeError):
    def __init__(self, message, span=None):
        super().__init__(message)
        self.span = span


class StructureError(ValueError):
    """A policy violates the threshold/switch structure."""

    def __init__(self, message, witnesses=()):
        super().__init__(message)
        self.witnesses = list(witnesses)


class EvaluationError(ValueError):
    """The chain induced by a policy has no unique stationary distribution."""


class _StateTable(Mapping):
    # read-only SystemState -> value view over an array aligned with the space
    def __init__(self, space: StateSpace, data: np.ndarray, wrap=lambda x: x):
        self._space = space
        self._data = data
        self._wrap = wrap

    def __getitem__(self, s):
        return self._wrap(self._data[self._space.index[SystemState(*s)]])

    def __iter__(self) -> Iterator[SystemState]:
        return iter(self._space.states)

    def __len__(self):
        return self._space.n


@dataclasses.dataclass
class ValueTable:
    space: StateSpace
    array: np.ndarray
    reference_state: SystemState
    gain_estimate: float
    iterations: int
    converged: bool
    span: float = 0.0
    skipped_minimizations: int = 0

    @property
    def values(self) -> Mapping[SystemState, float]:
        return _StateTable(self.space, self.array, float)

    def __getitem__(self, s) -> float:
        return self.values[s]


@dataclasses.dataclass
class Policy:
    """Deterministic stationary policy over the truncated state space."""

    space: StateSpace
    array: np.ndarray  # Action codes aligned with space.states
    lam: float = 0.0

    def __post_init__(self):
        self.array = np.asarray(self.array, dtype=np.int8)
        forced = self.space.forced
        if self.array.shape != (self.space.n,):
            raise ValueError("policy array does not match the state space")
        ok_forced = np.all(self.array[forced] == Action.FORCED)
        ok_free = np.all(np.isin(self.array[~forced], (Action.UPDATE, Action.SILENT)))
        if not (ok_forced and ok_free):
            bad = next(
                s for s, a in zip(self.space.states, self.array)
                if Action(a) not in available_actions(s)
            )
            raise ActionError(f"policy assigns an unavailable action in state {bad}")

    @classmethod
    def from_function(cls, params: ModelParams, fn, lam: float = 0.0) -> "Policy":
        space = state_space(params)
        return cls(space, np.array([fn(s) for s in space.states], dtype=np.int8), lam)

    @property
    def params(self) -> ModelParams:
        return self.space.params

    @property
    def actions(self) -> Mapping[SystemState, Action]:
        return _StateTable(self.space, self.array, Action)

    def __getitem__(self, s) -> Action:
        return self.actions[s]

    def columns(self) -> np.ndarray:
        return self.space.column(self.array)

    def grid(self, lam_p: int) -> np.ndarray:
        """``(a_p, a_s)`` grid of action codes for Type1 (lam_p=0) or Type2 (lam_p=1)."""
        return self.array[self.space.grid_index(lam_p, 0)]

    def __eq__(self, other):
        if not isinstance(other, Policy):
            return NotImplemented
        return self.space.params == other.space.params and np.array_equal(self.array, other.array)


@dataclasses.dataclass
class ThresholdSummary:
    eta: int | None  # None means Type1 never updates
    type2_thresholds: dict[int, int | None]

    def type2_nondecreasing(self) -> bool:
        never = float("inf")
        seq = [never if t is None else t for _, t in sorted(self.type2_thresholds.items())]
        return all(a <= b for a, b in zip(seq, seq[1:]))


@dataclasses.dataclass
class EvalResult:
    space: StateSpace
    stationary: np.ndarray
    avg_cost: float
    avg_constraint: float
    avg_aoi_su: float
    avg_aoi_pu: float
    avg_energy: float

    @property
    def stationary_dist(self) -> Mapping[SystemState, float]:
        return _StateTable(self.space, self.stationary, float)

    def lagrangian(self, lam: float) -> float:
        return self.avg_cost + lam * self.avg_constraint


def _reference_index(space: StateSpace, reference) -> int:
    ref = SystemState(*reference)
    if ref not in space.index:
        raise ParameterError(f"reference state {ref} is not in the truncated space")
    return space.index[ref]


def _greedy(q: np.ndarray, forced: np.ndarray) -> np.ndarray:
    update = q[:, 0] < q[:, 1] - TIE_TOL
    acts = np.where(update, Action.UPDATE, Action.SILENT).astype(np.int8)
    acts[forced] = Action.FORCED
    return acts


def _iterate(params, lam, reference, max_iter, initial, sweep):
    """Shared RVI loop; ``sweep(values) -> (T values, skipped)``."""
    space = state_space(params)
    r = _reference_index(space, reference)
    eps = params.epsilon
    v = np.zeros(space.n) if initial is None else np.array(initial, dtype=float)
    v -= v[r]
    damped = False
    checkpoint = np.inf
    skipped = 0
    span = np.inf
    for it in range(1, max_iter + 1):
        tv, sk = sweep(v)
        skipped += sk
        new = tv - tv[r]
        if damped:
            new = (1.0 - DAMPING) * v + DAMPING * new
        diff = new - v
        span = float(diff.max() - diff.min())
        v = new
        if np.abs(diff).max() <= eps:
            return space, v, it, skipped, span
        # a span that stops shrinking signals a periodic chain; damping breaks the period
        if it % STALL_WINDOW == 0:
            if span > 0.5 * checkpoint:
                damped = True
            checkpoint = span
    raise ConvergenceError(
        f"relative value iteration did not converge in {max_iter} sweeps (span {span:.3g})", span
    )


def rvi_solve(
    params: ModelParams,
    lam: float,
    reference: SystemState = INITIAL_STATE,
    max_iter: int = 10**6,
    initial: np.ndarray | None = None,
) -> tuple[ValueTable, Policy]:
    """Relative value iteration for the average Lagrangian cost.

    Iterates ``V <- T V - (T V)(s0)`` until successive tables differ by at most
    ``params.epsilon`` in every state.  The returned policy is greedy with
    respect to the converged table, breaking exact ties toward Silent.
    """
    space = state_space(params)
    cost = space.lagrangian(lam)

    def sweep(v):
        return (cost + space.expected(v)).min(axis=1), 0

    space, v, it, _, span = _iterate(params, lam, reference, max_iter, initial, sweep)
    q = cost + space.expected(v)
    r = _reference_index(space, reference)
    table = ValueTable(space, v, SystemState(*reference), float(q[r].min() - v[r]), it, True, span)
    return table, Policy(space, _greedy(q, space.forced), lam)


def _structured_decide(space: StateSpace, cost: np.ndarray, v: np.ndarray):
    """One structured sweep against ``v``; returns (T values, actions, skipped)."""
    d = space.params.delta
    p = space.params.p
    tv = np.empty(space.n)
    acts = np.empty(space.n, dtype=np.int8)
    skipped = 0

    t3 = np.flatnonzero(space.forced)
    tv[t3] = cost[t3, 0] + p * v[space.next_arrival[t3, 0]] + (1 - p) * v[space.next_quiet[t3, 0]]
    acts[t3] = Action.FORCED

    def q(idx, col):
        return (cost[idx, col] + p * v[space.next_arrival[idx, col]]
                + (1 - p) * v[space.next_quiet[idx, col]])

    grid1 = space.grid_index(0, 0)
    grid2 = space.grid_index(1, 0)
    type1_seen = False
    type2_seen = np.zeros(d, dtype=bool)
    for j in range(d):  # ascending a_s
        # Type1: an Update at any smaller a_s (any a_p) forces Update
        idx = grid1[:, j]
        if type1_seen:
            tv[idx] = q(idx, 0)
            acts[idx] = Action.UPDATE
            skipped += d
        else:
            qu, qs = q(idx, 0), q(idx, 1)
            upd = qu < qs - TIE_TOL
            tv[idx] = np.where(upd, qu, qs)
            acts[idx] = np.where(upd, Action.UPDATE, Action.SILENT)
            type1_seen = bool(upd.any())

        # Type2: an Update at a smaller a_s with the same a_p forces Update
        idx = grid2[:, j]
        tv[idx[type2_seen]] = q(idx[type2_seen], 0)
        acts[idx[type2_seen]] = Action.UPDATE
        skipped += int(type2_seen.sum())
        free = idx[~type2_seen]
        qu, qs = q(free, 0), q(free, 1)
        upd = qu < qs - TIE_TOL
        tv[free] = np.where(upd, qu, qs)
        acts[free] = np.where(upd, Action.UPDATE, Action.SILENT)
        newly = np.zeros(d, dtype=bool)
        newly[~type2_seen] = upd
        type2_seen |= newly
    return tv, acts, skipped


def structured_rvi_solve(
    params: ModelParams,
    lam: float,
    reference: SystemState = INITIAL_STATE,
    max_iter: int = 10**6,
    initial: np.ndarray | None = None,
) -> tuple[ValueTable, Policy]:
    """Relative value iteration that exploits the threshold structure.

    States are swept in ascending SU age.  Once Update has been chosen for a
    Type1 state at some SU age, every Type1 state with larger SU age takes
    Update without comparing actions; Type2 states do the same per PU age.
    The number of skipped comparisons is recorded on the value table.
    """
    space = state_space(params)
    cost = space.lagrangian(lam)

    def sweep(v):
        tv, _, sk = _structured_decide(space, cost, v)
        return tv, sk

    space, v, it, skipped, span = _iterate(params, lam, reference, max_iter, initial, sweep)
    r = _reference_index(space, reference)
    tv, acts, _ = _structured_decide(space, cost, v)
    table = ValueTable(space, v, SystemState(*reference), float(tv[r] - v[r]), it, True, span, skipped)
    return table, Policy(space, acts, lam)


def bellman_residual(table: ValueTable, lam: float) -> float:
    """``max_s |min_a Q(s, a) - V(s) - gain|`` for the stored table."""
    space = table.space
    q = space.lagrangian(lam) + space.expected(table.array)
    return float(np.abs(q.min(axis=1) - table.array - table.gain_estimate).max())


def _monotone_row(actions: np.ndarray) -> bool:
    upd = actions == Action.UPDATE
    return bool(np.all(upd[1:] >= upd[:-1]))


def _first_update(actions: np.ndarray) -> int | None:
    hits = np.flatnonzero(actions == Action.UPDATE)
    return int(hits[0]) + 1 if hits.size else None


def extract_thresholds(policy: Policy, params: ModelParams | None = None) -> ThresholdSummary:
    """Read the Type1 threshold and per-PU-age Type2 thresholds off a policy.

    Raises :class:`StructureError` if Type1 actions depend on the PU age or are
    not monotone in the SU age, or if a Type2 row is not switch-type.
    """
    space = policy.space
    g1 = policy.grid(0)
    g2 = policy.grid(1)
    witnesses = []
    for i, row in enumerate(g1):
        if not _monotone_row(row):
            j = int(np.flatnonzero((row[:-1] == Action.UPDATE) & (row[1:] == Action.SILENT))[0])
            witnesses.append((SystemState(i + 1, j + 1, 0, 0), SystemState(i + 1, j + 2, 0, 0)))
    rows_differ = np.flatnonzero(np.any(g1 != g1[0], axis=1))
    for i in rows_differ:
        j = int(np.flatnonzero(g1[i] != g1[0])[0])
        witnesses.append((SystemState(1, j + 1, 0, 0), SystemState(int(i) + 1, j + 1, 0, 0)))
    if witnesses:
        raise StructureError("Type1 policy is not a PU-age-independent threshold", witnesses)
    for i, row in enumerate(g2):
        if not _monotone_row(row):
            j = int(np.flatnonzero((row[:-1] == Action.UPDATE) & (row[1:] == Action.SILENT))[0])
            witnesses.append((SystemState(i + 1, j + 1, 1, 0), SystemState(i + 1, j + 2, 1, 0)))
    if witnesses:
        raise StructureError("Type2 policy violates the switch structure", witnesses)
    d = space.params.delta
    return ThresholdSummary(
        eta=_first_update(g1[0]),
        type2_thresholds={a_p: _first_update(g2[a_p - 1]) for a_p in range(1, d + 1)},
    )


@dataclasses.dataclass
class StructureReport:
    checks: dict[str, tuple[bool, float]]

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def __str__(self):
        return "\n".join(
            f"{'PASS' if ok else 'FAIL'} {name}: {worst:.3g}" for name, (ok, worst) in self.checks.items()
        )


def verify_value_structure(
    values: ValueTable,
    params: ModelParams | None = None,
    margin: int = 2,
    mono_tol: float | None = None,
    sep_tol: float | None = None,
) -> StructureReport:
    """Audit monotonicity, additive separability and Type3 constancy of ``V``.

    Only states with both ages ``<= delta - margin`` are audited for the
    first two properties.  Tolerances default to ``2*epsilon`` for monotonicity
    and constancy and ``10*epsilon`` for the separability residual.
    """
    space = values.space
    params = params or space.params
    eps = params.epsilon
    mono_tol = 2 * eps if mono_tol is None else mono_tol
    sep_tol = 10 * eps if sep_tol is None else sep_tol
    v = values.array
    m = params.delta - margin
    checks = {}

    worst = 0.0
    for lam_p in (0, 1):
        g = v[space.grid_index(lam_p, 0)][:m, :m]
        worst = max(worst, -np.diff(g, axis=0).min(initial=0.0), -np.diff(g, axis=1).min(initial=0.0))
    for lam_p in (0, 1):
        g = v[space.grid_index(lam_p, 1)][:m, 0]
        worst = max(worst, -np.diff(g).min(initial=0.0))
    checks["monotone"] = (worst <= mono_tol, float(worst))

    g = v[space.grid_index(0, 0)][:m, :m]
    fit = g.mean(axis=1, keepdims=True) + g.mean(axis=0, keepdims=True) - g.mean()
    resid = float(np.abs(g - fit).max())
    checks["separable"] = (resid <= sep_tol, resid)

    worst = 0.0
    for lam_p in (0, 1):
        g = v[space.grid_index(lam_p, 1)][:, 0]
        worst = max(worst, float(np.abs(g - g[0]).max()))
    checks["type3_constant"] = (worst <= mono_tol, worst)
    return StructureReport(checks)


def transition_matrix(policy: Policy) -> sp.csr_matrix:
    space = policy.space
    p = space.params.p
    cols = policy.columns()
    rows = np.arange(space.n)
    data = np.concatenate([np.full(space.n, p), np.full(space.n, 1.0 - p)])
    nxt = np.concatenate([space.next_arrival[rows, cols], space.next_quiet[rows, cols]])
    return sp.csr_matrix((data, (np.concatenate([rows, rows]), nxt)), shape=(space.n, space.n))


def closed_class(P: sp.csr_matrix, start: int) -> np.ndarray:
    """Members of the unique closed class reachable from ``start``.

    Raises :class:`EvaluationError` when ``start`` reaches several closed classes.
    """
    P = sp.csr_matrix(P)
    P.eliminate_zeros()
    reach = np.sort(csgraph.breadth_first_order(P, start, return_predecessors=False))
    sub = P[reach][:, reach]
    ncomp, label = csgraph.connected_components(sub, directed=True, connection="strong")
    # a class is closed when no edge leaves it
    coo = sub.tocoo()
    leaks = np.zeros(ncomp, dtype=bool)
    leaks[label[coo.row[label[coo.row] != label[coo.col]]]] = True
    closed = np.flatnonzero(~leaks)
    if closed.size != 1:
        classes = [reach[label == c].tolist()[:5] for c in closed]
        raise EvaluationError(f"{closed.size} closed classes reachable from {start}: {classes}")
    return reach[label == closed[0]]


def stationary_distribution(policy: Policy, start: SystemState = INITIAL_STATE) -> np.ndarray:
    """Stationary distribution of the chain restricted to states reachable from ``start``."""
    space = policy.space
    P = transition_matrix(policy)
    try:
        members = closed_class(P, space.index[SystemState(*start)])
    except EvaluationError as exc:
        raise EvaluationError(f"policy has no unique stationary distribution: {exc}") from None
    pc = P[members][:, members]
    k = members.size
    A = (pc.T - sp.identity(k)).tolil()
    A[k - 1, :] = np.ones(k)
    b = np.zeros(k)
    b[-1] = 1.0
    pi = spsolve(A.tocsc(), b) if k > 1 else np.ones(1)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    out = np.zeros(space.n)
    out[members] = pi
    return out


def policy_evaluation(policy, params: ModelParams | None = None) -> EvalResult:
    """Exact long-run averages under a deterministic or mixture policy.

    A mixture is randomised once per episode, so its averages are the
    ``alpha``-weighted blend of the two component policies.
    """
    from .cmdp import MixturePolicy

    if isinstance(policy, MixturePolicy):
        lo = policy_evaluation(policy.pi_low)
        hi = policy_evaluation(policy.pi_high)
        a = policy.alpha
        fields = ("stationary", "avg_cost", "avg_constraint", "avg_aoi_su", "avg_aoi_pu", "avg_energy")
        blend = {f: a * getattr(lo, f) + (1 - a) * getattr(hi, f) for f in fields}
        return EvalResult(lo.space, **blend)

    if params is not None and params != policy.params:
        raise ParameterError("policy was built for different parameters")
    space = policy.space
    pi = stationary_distribution(policy)
    rows = np.arange(space.n)
    cols = policy.columns()
    return EvalResult(
        space=space,
        stationary=pi,
        avg_cost=float(pi @ space.cost[rows, cols]),
        avg_constraint=float(pi @ space.charge[rows, cols]),
        avg_aoi_su=float(pi @ space.a_s),
        avg_aoi_pu=float(pi @ space.a_p),
        avg_energy=float(pi @ space.energy[rows, cols]),
    )
