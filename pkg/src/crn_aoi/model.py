"""State space, dynamics and costs of the PU/SU status-update problem.

A state is ``(a_p, a_s, lam_p, lam_s)``: the AoI of the primary and secondary
user at the destination, whether a primary packet arrived at the start of the
slot, and whether the SU holds a buffered primary packet to relay.

States fall into three types:

* Type1 ``(., ., 0, 0)`` -- channel free, SU may update or stay silent.
* Type2 ``(., ., 1, 0)`` -- primary packet arrived; SU may update (and buffer
  the primary packet for relaying next slot) or stay silent (PU transmits).
* Type3 ``(., 1, ., 1)`` -- SU holds a primary packet; it is relayed unless a
  fresh primary packet arrived, in which case the PU sends that one directly
  and the buffered copy is dropped.  No decision is made here.

AoI values are capped at ``delta`` so that the state space is finite.
"""

from __future__ import annotations

import dataclasses
import enum
from functools import lru_cache
from typing import NamedTuple

import numpy as np


class ParameterError(ValueError):
    """Invalid model parameters or arguments."""


class ActionError(ValueError):
    """Action not admissible in the given state."""


class SystemState(NamedTuple):
    a_p: int
    a_s: int
    lam_p: int
    lam_s: int

    def __str__(self):
        return f"({self.a_p},{self.a_s},{self.lam_p},{self.lam_s})"


class StateType(enum.IntEnum):
    TYPE1 = 1
    TYPE2 = 2
    TYPE3 = 3


class Action(enum.IntEnum):
    UPDATE = 1
    SILENT = 2
    FORCED = 3


INITIAL_STATE = SystemState(1, 1, 0, 0)


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Parameters of the approximate (truncated) MDP.

    ``k * c_e`` is charged every time the SU generates a packet.  ``d`` bounds
    the long-run average AoI charge imposed on the PU by relaying.  ``delta``
    caps both ages and ``epsilon`` is the value-iteration stopping tolerance.
    """

    p: float = 0.5
    k: float = 0.1
    c_e: float = 8.0
    d: float = 1.0
    delta: int = 20
    epsilon: float = 1e-6
    charge_relay_energy: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ParameterError(f"arrival probability p={self.p} outside [0, 1]")
        if self.k < 0 or self.c_e < 0:
            raise ParameterError("k and c_e must be nonnegative")
        if self.d < 0:
            raise ParameterError(f"constraint bound d={self.d} is negative")
        if int(self.delta) != self.delta or self.delta < 3:
            raise ParameterError(f"delta={self.delta} must be an integer >= 3")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon={self.epsilon} must be positive")
        object.__setattr__(self, "delta", int(self.delta))

    @property
    def energy_unit(self) -> float:
        return self.k * self.c_e

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def is_valid_state(s: SystemState, delta: int | None = None) -> bool:
    if s.a_p < 1 or s.a_s < 1 or s.lam_p not in (0, 1) or s.lam_s not in (0, 1):
        return False
    if s.lam_s == 1 and s.a_s != 1:
        return False
    if delta is not None and (s.a_p > delta or s.a_s > delta):
        return False
    return True


def enumerate_states(params: ModelParams) -> list[SystemState]:
    """All states of the truncated space, sorted by ``(lam_s, lam_p, a_p, a_s)``.

    There are ``2 * delta**2 + 2 * delta`` of them.
    """
    if params.delta < 3:
        raise ParameterError("delta must be >= 3")
    n = params.delta
    out = []
    for lam_s in (0, 1):
        for lam_p in (0, 1):
            for a_p in range(1, n + 1):
                for a_s in (range(1, n + 1) if lam_s == 0 else (1,)):
                    out.append(SystemState(a_p, a_s, lam_p, lam_s))
    return out


def classify(s: SystemState) -> StateType:
    if s.lam_s == 1:
        return StateType.TYPE3
    return StateType.TYPE2 if s.lam_p == 1 else StateType.TYPE1


def available_actions(s: SystemState) -> frozenset[Action]:
    if classify(s) is StateType.TYPE3:
        return frozenset({Action.FORCED})
    return frozenset({Action.UPDATE, Action.SILENT})


def _check_action(s: SystemState, a: Action) -> None:
    if a not in available_actions(s):
        raise ActionError(f"action {Action(a).name} not available in state {s}")


def successor(s: SystemState, a: Action, arrival: int, cap: int | None) -> SystemState:
    """Next state given the arrival flag of the next slot.

    ``cap=None`` leaves ages unbounded (used by the simulator).
    """
    def inc(x):
        return x + 1 if cap is None else min(x + 1, cap)

    kind = classify(s)
    if kind is StateType.TYPE3:
        # relay completes (PU age 2) or fresh packet sent directly (PU age 1)
        return SystemState(1 if s.lam_p else 2, inc(s.a_s), arrival, 0)
    if a == Action.UPDATE:
        return SystemState(inc(s.a_p), 1, arrival, int(kind is StateType.TYPE2))
    if kind is StateType.TYPE2:
        return SystemState(1, inc(s.a_s), arrival, 0)
    return SystemState(inc(s.a_p), inc(s.a_s), arrival, 0)


def transition(s: SystemState, a: Action, params: ModelParams) -> list[tuple[SystemState, float]]:
    """Next-state distribution as ``[(state, prob), ...]`` with at most two entries."""
    _check_action(s, a)
    p = params.p
    out = []
    for arrival, prob in ((1, p), (0, 1.0 - p)):
        if prob > 0.0:
            out.append((successor(s, a, arrival, params.delta), prob))
    return out


def _generates_packet(a: Action, params: ModelParams) -> bool:
    return a == Action.UPDATE or (a == Action.FORCED and params.charge_relay_energy)


def stage_cost(s: SystemState, a: Action, params: ModelParams) -> float:
    """SU age after the slot plus the energy charge of generating a packet."""
    _check_action(s, a)
    next_age = 1 if a == Action.UPDATE else min(s.a_s + 1, params.delta)
    return float(next_age) + (params.energy_unit if _generates_packet(a, params) else 0.0)


def energy_cost(s: SystemState, a: Action, params: ModelParams) -> float:
    _check_action(s, a)
    return params.energy_unit if _generates_packet(a, params) else 0.0


def constraint_cost(s: SystemState, a: Action) -> float:
    """AoI charged to the PU: its current age when its packet is taken for relaying."""
    _check_action(s, a)
    return float(s.a_p) if (s.lam_p == 1 and a == Action.UPDATE) else 0.0


def lagrangian_cost(s: SystemState, a: Action, lam: float, params: ModelParams) -> float:
    if lam < 0:
        raise ParameterError(f"Lagrange multiplier {lam} is negative")
    return stage_cost(s, a, params) + lam * constraint_cost(s, a)


class StateSpace:
    """Array form of the truncated MDP used by the solvers.

    Column 0 of the per-action arrays describes Update and column 1 Silent.
    In Type3 states both columns hold the single Forced behaviour.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        self.states = enumerate_states(params)
        self.index = {s: i for i, s in enumerate(self.states)}
        n = len(self.states)
        self.n = n
        arr = np.array(self.states, dtype=np.int64)
        self.a_p, self.a_s, self.lam_p, self.lam_s = arr.T
        self.kind = np.array([classify(s) for s in self.states], dtype=np.int8)
        self.forced = self.kind == StateType.TYPE3

        self.next_arrival = np.zeros((n, 2), dtype=np.int64)
        self.next_quiet = np.zeros((n, 2), dtype=np.int64)
        self.cost = np.zeros((n, 2))
        self.charge = np.zeros((n, 2))
        self.energy = np.zeros((n, 2))
        for i, s in enumerate(self.states):
            acts = (Action.FORCED,) * 2 if self.forced[i] else (Action.UPDATE, Action.SILENT)
            for j, a in enumerate(acts):
                self.next_arrival[i, j] = self.index[successor(s, a, 1, params.delta)]
                self.next_quiet[i, j] = self.index[successor(s, a, 0, params.delta)]
                self.cost[i, j] = stage_cost(s, a, params)
                self.charge[i, j] = constraint_cost(s, a)
                self.energy[i, j] = energy_cost(s, a, params)

    def __len__(self):
        return self.n

    def lagrangian(self, lam: float) -> np.ndarray:
        if lam < 0:
            raise ParameterError(f"Lagrange multiplier {lam} is negative")
        return self.cost + lam * self.charge

    def expected(self, values: np.ndarray) -> np.ndarray:
        """``E[V(s')]`` for both action columns, shape ``(n, 2)``."""
        p = self.params.p
        return p * values[self.next_arrival] + (1.0 - p) * values[self.next_quiet]

    def column(self, actions: np.ndarray) -> np.ndarray:
        """Map an array of :class:`Action` codes to column indices."""
        return np.where(actions == Action.SILENT, 1, 0)

    def grid_index(self, lam_p: int, lam_s: int) -> np.ndarray:
        """Indices of the ``(lam_p, lam_s)`` slice as an ``(a_p, a_s)`` grid.

        Shape ``(delta, delta)`` for ``lam_s = 0`` and ``(delta, 1)`` otherwise.
        """
        d = self.params.delta
        offset = lam_s * 2 * d * d + lam_p * (d * d if lam_s == 0 else d)
        width = d if lam_s == 0 else 1
        return offset + np.arange(d * width).reshape(d, width)


@lru_cache(maxsize=16)
def state_space(params: ModelParams) -> StateSpace:
    return StateSpace(params)
