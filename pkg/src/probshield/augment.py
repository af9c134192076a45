"""Risk-augmented CMDP: states carry a running risk budget, actions an allocated risk."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cmdp import Cmdp, sample_next
from .critic import QTable

RULES = ("q_relative", "cost_relative")


class AugState(NamedTuple):
    base_state: int
    risk: float


class AugAction(NamedTuple):
    base_action: int
    allocated_risk: float


def risk_bound(cmdp: Cmdp) -> float:
    """Largest attainable discounted cost: ``c_max/(1-gamma_c)``, or ``c_max*horizon_cap`` when undiscounted."""
    if cmdp.gamma_c < 1.0:
        return cmdp.c_max / (1.0 - cmdp.gamma_c)
    return cmdp.c_max * cmdp.horizon_cap


@dataclass(frozen=True, eq=False)
class AugEnv:
    cmdp: Cmdp
    q: QTable
    rule: str
    c_max_bound: float

    def __post_init__(self):
        object.__setattr__(self, "_floors", self.q.floors())

    @property
    def floors(self) -> np.ndarray:
        return self._floors

    def next_risk(self, s, a, y, s2):
        """Risk after executing ``(a, y)`` in ``s`` and landing in ``s2``; also
        returns whether clamping to ``[-c_max_bound, c_max_bound]`` fired."""
        if self.rule == "q_relative":
            raw = y - self.q.values[s, a] + self._floors[s2]
        else:
            raw = y - self.cmdp.cost[s, a]
        x2 = np.clip(raw, -self.c_max_bound, self.c_max_bound)
        return x2, x2 != raw

    def step_batch(self, s, a, y, rng):
        s2 = sample_next(self.cmdp, s, a, rng)
        x2, clamped = self.next_risk(s, a, y, s2)
        return s2, x2, clamped


def augment(cmdp: Cmdp, q: QTable, rule: str = "q_relative") -> AugEnv:
    if rule not in RULES:
        raise ValueError(f"unknown risk rule {rule!r}")
    if q.values.shape != (cmdp.n_states, cmdp.max_actions) or np.any(q.mask != cmdp.mask):
        raise ValueError("Q-table must be defined on exactly the CMDP's state-action pairs")
    if rule == "cost_relative" and not cmdp.is_deterministic:
        raise ValueError("cost_relative risk updates need a deterministic CMDP")
    return AugEnv(cmdp, q, rule, risk_bound(cmdp))


def aug_step(env: AugEnv, st: AugState, act: AugAction, rng: np.random.Generator):
    """Sample one augmented transition; returns ``(next_state, reward, cost)``."""
    s, x = st
    a, y = act
    if not 0 <= a < env.cmdp.n_actions[s]:
        raise ValueError(f"action {a} not available in state {s}")
    s2 = int(sample_next(env.cmdp, np.array([s]), np.array([a]), rng)[0])
    x2, _ = env.next_risk(s, a, y, s2)
    return AugState(s2, float(x2)), float(env.cmdp.reward[s, a]), float(env.cmdp.cost[s, a])


def transition_record(st: AugState, act: AugAction, r: float, c: float, nxt: AugState) -> str:
    return json.dumps({"s": int(st[0]), "x": float(st[1]), "a": int(act[0]), "y": float(act[1]),
                       "r": float(r), "c": float(c), "s2": int(nxt[0]), "x2": float(nxt[1])})


AUG_TRAJ_HEADER = json.dumps({"schema": "aug_trajectory/1",
                              "columns": ["s", "x", "a", "y", "r", "c", "s2", "x2"]})
