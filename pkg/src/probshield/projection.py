"""Running an augmented policy on the base CMDP with one scalar of memory."""
from __future__ import annotations

import numpy as np

from .augment import risk_bound
from .cmdp import Cmdp
from .critic import QTable


class ProjectedPolicy:
    """Base-CMDP policy that remembers the current risk ``m``.

    At each step it samples ``(a, y)`` from the augmented sampler at ``(s, m)``,
    plays ``a`` and, once the successor ``s'`` is observed, sets
    ``m <- y - Q(s, a) + gamma_c * min_a' Q(s', a')`` (clamped to the risk
    bound), or ``m <- y - c(s, a)`` under the cost-relative rule.
    """

    def __init__(self, sampler, cmdp: Cmdp, q: QTable, x0: float, rule: str = "q_relative"):
        if rule not in ("q_relative", "cost_relative"):
            raise ValueError(f"unknown risk rule {rule!r}")
        self.sampler, self.cmdp, self.q, self.x0, self.rule = sampler, cmdp, q, float(x0), rule
        self.bound = risk_bound(cmdp)
        self.floors = q.gamma_c * q.values.min(axis=1)
        self.start(1)

    def _update(self, m, s, a, y, s2):
        if self.rule == "q_relative":
            m = y - self.q.values[s, a] + self.floors[s2]
        else:
            m = y - self.cmdp.cost[s, a]
        return np.clip(m, -self.bound, self.bound)

    # batch interface used by cmdp.simulate
    def start(self, n: int) -> None:
        self.memory = np.full(n, self.x0)
        self.pending = np.zeros(n)

    def act_batch(self, states, idx, rng):
        m = self.memory[idx]
        if not np.all(np.isfinite(m)):
            raise ValueError("risk memory left the policy's domain")
        a, y, _ = self.sampler.sample_batch(states, m, rng)
        self.pending[idx] = y
        return a

    def observe_batch(self, idx, states, actions, next_states) -> None:
        self.memory[idx] = self._update(self.memory[idx], states, actions, self.pending[idx],
                                        next_states)

    # scalar interface used by cmdp.rollout
    def reset(self) -> None:
        self.start(1)

    def act(self, s: int, rng) -> int:
        return int(self.act_batch(np.array([s]), np.array([0]), rng)[0])

    def observe(self, s: int, a: int, s2: int) -> None:
        self.observe_batch(np.array([0]), np.array([s]), np.array([a]), np.array([s2]))


def project(policy, q: QTable, cmdp: Cmdp, x0: float, rule: str = "q_relative") -> ProjectedPolicy:
    """Base-CMDP view of a (shielded) augmented sampler started at risk ``x0``."""
    return ProjectedPolicy(policy, cmdp, q, x0, rule)
