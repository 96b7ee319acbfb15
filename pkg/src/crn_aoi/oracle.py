"""Independent optimality checks for small instances.

Everything here is built directly from :func:`model.transition` and the cost
functions as dense matrices; nothing goes through the solver's array form.

* :func:`enumerate_policy_costs` evaluates every deterministic stationary
  policy (``2**m`` of them for ``m`` decision states) exactly.
* :func:`lp_optimal_gain` solves the occupation-measure linear program,
  whose optimum is the minimum average cost over all stationary policies.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linprog

from .model import INITIAL_STATE, Action, ModelParams, StateType, classify, enumerate_states, lagrangian_cost, transition


class DenseMDP:
    def __init__(self, params: ModelParams, lam: float):
        self.params = params
        self.states = enumerate_states(params)
        self.index = {s: i for i, s in enumerate(self.states)}
        n = len(self.states)
        self.decision = [i for i, s in enumerate(self.states) if classify(s) is not StateType.TYPE3]
        # per action: transition matrix and cost vector; Type3 rows repeat Forced
        self.P = np.zeros((2, n, n))
        self.c = np.zeros((2, n))
        for i, s in enumerate(self.states):
            acts = (Action.UPDATE, Action.SILENT) if i in self.decision else (Action.FORCED,) * 2
            for j, a in enumerate(acts):
                for nxt, prob in transition(s, a, params):
                    self.P[j, i, self.index[nxt]] += prob
                self.c[j, i] = lagrangian_cost(s, a, lam, params)

    def action_choice(self, bits: np.ndarray) -> np.ndarray:
        """Column choice (0 Update, 1 Silent) per state for rows of decision bits (1 = Update)."""
        bits = np.atleast_2d(bits)
        choice = np.zeros((bits.shape[0], len(self.states)), dtype=np.int64)
        choice[:, self.decision] = 1 - bits
        return choice

    def gains(self, bits: np.ndarray) -> np.ndarray:
        """Exact long-run average cost per policy, started from ``(1, 1, 0, 0)``."""
        choice = self.action_choice(bits)
        n = len(self.states)
        rows = np.arange(n)
        P = self.P[choice, rows[None, :], :]  # (batch, n, n)
        c = self.c[choice, rows[None, :]]
        # pi (I - P + E) = 1^T has a unique solution iff the chain is unichain
        A = np.eye(n)[None] - P + 1.0
        out = np.full(len(bits), np.nan)
        try:
            pi = np.linalg.solve(np.transpose(A, (0, 2, 1)), np.ones((len(bits), n, 1)))[..., 0]
        except np.linalg.LinAlgError:
            pi = np.full((len(bits), n), np.nan)
            for b in range(len(bits)):
                try:
                    pi[b] = np.linalg.solve(A[b].T, np.ones(n))
                except np.linalg.LinAlgError:
                    pass
        # singular or badly conditioned systems give garbage; reject them
        resid = np.abs(np.einsum("bi,bij->bj", pi, P) - pi).max(axis=1)
        ok = (pi.min(axis=1) > -1e-9) & (np.abs(pi.sum(axis=1) - 1) < 1e-9) & (resid < 1e-9)
        out[ok] = np.einsum("bi,bi->b", pi[ok], c[ok])
        # fallback: long-run average from the start state via the Cesaro limit,
        # i.e. a high power of the lazy chain (I + P) / 2
        start = self.index[INITIAL_STATE]
        for b in np.flatnonzero(~ok):
            M = 0.5 * (np.eye(n) + P[b])
            for _ in range(48):
                M = M @ M
                M /= M.sum(axis=1, keepdims=True)
            out[b] = M[start] @ c[b]
        return out


def policy_bits(mdp: DenseMDP, actions: dict) -> np.ndarray:
    """Decision bits of a policy given as ``{state: Action}``."""
    return np.array([int(actions[mdp.states[i]] == Action.UPDATE) for i in mdp.decision])


def enumerate_policy_costs(params: ModelParams, lam: float, chunk: int = 8192):
    """Average Lagrangian cost of every deterministic stationary policy.

    Returns ``(costs, decode)`` where ``decode(i)`` gives the bit vector of
    policy ``i``.  Feasible for up to ~20 decision states.
    """
    mdp = DenseMDP(params, lam)
    m = len(mdp.decision)
    if m > 24:
        raise ValueError(f"{m} decision states: 2**{m} policies is too many to enumerate")
    total = 1 << m
    shifts = np.arange(m)
    costs = np.empty(total)
    for start in range(0, total, chunk):
        ids = np.arange(start, min(total, start + chunk))
        bits = (ids[:, None] >> shifts[None, :]) & 1
        costs[start:start + len(ids)] = mdp.gains(bits)

    def decode(i):
        return (int(i) >> shifts) & 1

    return costs, decode


def neighbourhood_costs(params: ModelParams, lam: float, bits: np.ndarray, radius: int = 2) -> np.ndarray:
    """Costs of all policies differing from ``bits`` in at most ``radius`` decision states."""
    mdp = DenseMDP(params, lam)
    m = len(mdp.decision)
    variants = [np.array(bits)]
    for r in range(1, radius + 1):
        for flip in itertools.combinations(range(m), r):
            b = np.array(bits)
            b[list(flip)] ^= 1
            variants.append(b)
    return mdp.gains(np.array(variants))


def lp_optimal_gain(params: ModelParams, lam: float) -> float:
    """Minimum average cost over stationary policies via the occupation-measure LP."""
    mdp = DenseMDP(params, lam)
    n = len(mdp.states)
    # variables x[j, i] flattened; Type3 states use only column 0
    cols = [(j, i) for i in range(n) for j in ((0, 1) if i in mdp.decision else (0,))]
    c = np.array([mdp.c[j, i] for j, i in cols])
    A = np.zeros((n + 1, len(cols)))
    for k, (j, i) in enumerate(cols):
        A[i, k] += 1.0
        A[:n, k] -= mdp.P[j, i]
        A[n, k] = 1.0
    b = np.zeros(n + 1)
    b[n] = 1.0
    res = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"LP failed: {res.message}")
    return float(res.fun)
