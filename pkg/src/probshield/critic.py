"""Minimal-cost Q-values: exact solution, tabular learning, controlled perturbation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .cmdp import Cmdp, _freeze


@dataclass(frozen=True, eq=False)
class QTable:
    """State-action cost estimates. Entries outside ``A(s)`` hold ``+inf``."""

    values: np.ndarray  # (S, A)
    gamma_c: float
    provenance: str = "exact"
    terminal: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values))
        if self.terminal is not None:
            object.__setattr__(self, "terminal", _freeze(self.terminal))

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    def min_value(self) -> np.ndarray:
        return self.values.min(axis=1)

    def backup_actions(self) -> np.ndarray:
        return self.values.argmin(axis=1)

    def floors(self) -> np.ndarray:
        """``gamma_c * min_a Q(s, a)`` for every state."""
        return self.gamma_c * self.values.min(axis=1)

    def sup_distance(self, other: "QTable") -> float:
        m = self.mask
        return float(np.max(np.abs(self.values[m] - other.values[m])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "a", "value"])
        for s, a in zip(*np.nonzero(self.mask)):
            w.writerow([int(s), int(a), repr(float(self.values[s, a]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, cmdp: Cmdp, provenance: str = "loaded") -> "QTable":
        values = np.full((cmdp.n_states, cmdp.max_actions), np.inf)
        rows = csv.DictReader(io.StringIO(text))
        for row in rows:
            values[int(row["s"]), int(row["a"])] = float(row["value"])
        if np.any(np.isfinite(values) != cmdp.mask):
            raise ValueError("CSV does not cover exactly the CMDP's state-action pairs")
        return cls(values, cmdp.gamma_c, provenance, cmdp.terminal)


def _empty(cmdp: Cmdp) -> np.ndarray:
    return np.where(cmdp.mask, 0.0, np.inf)


def bellman(cmdp: Cmdp, values: np.ndarray) -> np.ndarray:
    """One application of the minimal-cost Bellman operator."""
    floor = cmdp.gamma_c * values.min(axis=1)
    out = cmdp.cost + cmdp.transition @ floor
    return np.where(cmdp.mask, out, np.inf)


def bellman_residual(cmdp: Cmdp, q: QTable) -> float:
    m = cmdp.mask
    return float(np.max(np.abs(bellman(cmdp, q.values)[m] - q.values[m])))


def cost_value_iteration(cmdp: Cmdp, tol: float = 1e-12, max_iter: int = 1_000_000) -> QTable:
    """Fixed point of ``Q = c + gamma_c * P min_a' Q``; provenance ``exact``."""
    if cmdp.gamma_c >= 1.0 and not cmdp.is_episodic():
        raise ValueError("undiscounted cost iteration needs an episodic CMDP")
    m = cmdp.mask
    q = _empty(cmdp)
    for _ in range(max_iter):
        nxt = bellman(cmdp, q)
        done = np.max(np.abs(nxt[m] - q[m])) < tol
        q = nxt
        if done:
            break
    if cmdp.gamma_c < 1.0:
        # polish with one exact evaluation of the greedy policy
        pi = q.argmin(axis=1)
        S = cmdp.n_states
        P_pi = cmdp.transition[np.arange(S), pi]
        v = np.linalg.solve(np.eye(S) - cmdp.gamma_c * P_pi, cmdp.cost[np.arange(S), pi])
        cand = np.where(m, cmdp.cost + cmdp.gamma_c * cmdp.transition @ v, np.inf)
        if np.max(np.abs(bellman(cmdp, cand)[m] - cand[m])) <= np.max(np.abs(bellman(cmdp, q)[m] - q[m])):
            q = cand
    q[cmdp.terminal] = np.where(m[cmdp.terminal], 0.0, np.inf)
    return QTable(q, cmdp.gamma_c, "exact", cmdp.terminal)


def backup_policy(q: QTable, s: int) -> tuple[int, float]:
    """Safest action at ``s`` (lowest index on ties) and the floor ``gamma_c * min_a Q``."""
    row = q.values[s]
    a = int(np.argmin(row))
    return a, float(q.gamma_c * row[a])


def perturb(q: QTable, delta: float, rng: np.random.Generator) -> QTable:
    """Add uniform noise in ``[-delta, delta]``, clipped at zero.

    Terminal rows stay at zero, so the result still satisfies the QTable
    invariants; the sup-norm distance to ``q`` is at most ``delta``.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    noise = rng.uniform(-delta, delta, size=q.values.shape)
    vals = np.where(q.mask, np.maximum(q.values + noise, 0.0), np.inf)
    if q.terminal is not None:
        vals[q.terminal] = np.where(q.mask[q.terminal], 0.0, np.inf)
    if delta == 0:
        vals = np.array(q.values, copy=True)
    return QTable(vals, q.gamma_c, f"perturbed({delta:g})", q.terminal,
                  {"delta": delta, "base": q.provenance})


@dataclass(frozen=True)
class CostLearnConfig:
    episodes: int = 20_000
    alpha: float = 0.5
    alpha_power: float = 0.0  # step size alpha / n(s,a)**alpha_power
    epsilon: float = 0.2
    beta: float = 0.75
    horizon: int | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0 or self.alpha_power < 0:
            raise ValueError("step sizes must lie in (0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


def blended_target(c: float, gamma_c: float, q1_next: float, q2_next: float, beta: float) -> float:
    """``c + gamma_c [beta min_j Q_j + (1 - beta)/2 sum_j Q_j]`` at the backup action."""
    return c + gamma_c * (beta * min(q1_next, q2_next) + 0.5 * (1.0 - beta) * (q1_next + q2_next))


def q_learning_cost(cmdp: Cmdp, config: CostLearnConfig, rng: np.random.Generator,
                    oracle: QTable | None = None) -> QTable:
    """Twin-table Q-learning of the minimal discounted cost.

    Each step updates one head, chosen by a fair coin, toward the blended
    target evaluated at the backup action of head 1. Behaviour is
    epsilon-greedy around that backup action. Returns head 1.
    """
    if cmdp.gamma_c >= 1.0 and not cmdp.is_episodic():
        raise ValueError("undiscounted cost learning needs an episodic CMDP")
    horizon = cmdp.horizon_cap if config.horizon is None else config.horizon
    n_act = [int(k) for k in cmdp.n_actions]
    q = [np.zeros((cmdp.n_states, cmdp.max_actions)), np.zeros((cmdp.n_states, cmdp.max_actions))]
    visits = np.zeros((cmdp.n_states, cmdp.max_actions))
    cum = np.cumsum(cmdp.transition, axis=2)
    cost, terminal, g = cmdp.cost, cmdp.terminal, cmdp.gamma_c
    beta, eps = config.beta, config.epsilon
    for _ in range(config.episodes):
        s = cmdp.initial_state
        for _ in range(horizon):
            if terminal[s]:
                break
            k = n_act[s]
            if rng.random() < eps:
                a = int(rng.integers(k))
            else:
                a = int(np.argmin(q[0][s, :k]))
            s2 = int(min(np.searchsorted(cum[s, a], rng.random(), side="right"),
                         cmdp.n_states - 1))
            if terminal[s2]:
                target = float(cost[s, a])
            else:
                ab = int(np.argmin(q[0][s2, :n_act[s2]]))
                target = blended_target(cost[s, a], g, q[0][s2, ab], q[1][s2, ab], beta)
            visits[s, a] += 1
            step = config.alpha / visits[s, a] ** config.alpha_power
            head = q[int(rng.integers(2))]
            head[s, a] += step * (target - head[s, a])
            s = s2
    vals = np.where(cmdp.mask, q[0], np.inf)
    meta = {"episodes": config.episodes, "beta": beta}
    out = QTable(vals, cmdp.gamma_c, "learned", cmdp.terminal, meta)
    if oracle is not None:
        meta["sup_dist"] = out.sup_distance(oracle)
    return out
