"""Finite constrained MDPs, built-in environments, sampling and evaluation.

States and actions are dense integer indices. Actions are local to a state:
action ``a`` at state ``s`` is valid iff ``a < n_actions[s]``. Per-pair arrays
are padded to shape ``(n_states, max_actions)``; padded entries are never
sampled and are ignored by every evaluation routine.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ROW_TOL = 1e-12


def default_horizon(gamma: float, eps: float = 1e-6) -> int:
    """Truncation length whose tail mass is below ``eps`` of the geometric sum."""
    if gamma >= 1.0:
        raise ValueError("default horizon only defined for gamma < 1")
    if gamma <= 0.0:
        return 1
    return int(math.ceil(math.log(eps * (1.0 - gamma)) / math.log(gamma)))


def _freeze(arr) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Cmdp:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    cost: np.ndarray  # (S, A)
    n_actions: np.ndarray  # (S,)
    gamma_r: float
    gamma_c: float
    budget_d: float
    initial_state: int
    terminal: np.ndarray  # (S,) bool
    horizon_cap: int
    state_names: tuple = ()
    action_names: tuple = ()
    name: str = "cmdp"

    def __post_init__(self):
        for attr in ("transition", "reward", "cost", "n_actions", "terminal"):
            object.__setattr__(self, attr, _freeze(getattr(self, attr)))
        S = self.transition.shape[0]
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"s{i}" for i in range(S)))
        if not self.action_names:
            names = tuple(tuple(f"a{j}" for j in range(int(k))) for k in self.n_actions)
            object.__setattr__(self, "action_names", names)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def max_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.max_actions)[None, :] < self.n_actions[:, None]

    @property
    def c_max(self) -> float:
        return float(np.max(np.where(self.mask, self.cost, 0.0)))

    @property
    def is_deterministic(self) -> bool:
        P = self.transition[self.mask]
        return bool(np.all(np.isclose(P.max(axis=1), 1.0, atol=ROW_TOL, rtol=0)))

    def is_episodic(self, horizon: int | None = None) -> bool:
        """True iff every path from every state hits a terminal within ``horizon`` steps."""
        horizon = self.horizon_cap if horizon is None else horizon
        succ = (self.transition > 0) & self.mask[:, :, None]
        alive = ~self.terminal.copy()
        for _ in range(horizon):
            # states from which some path survives one more step
            reach = succ.any(axis=1)
            alive = ~self.terminal & (reach & alive[None, :]).any(axis=1)
            if not alive.any():
                return True
        return not alive.any()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.transition, self.reward, self.cost, self.n_actions, self.terminal):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.gamma_r, self.gamma_c, self.budget_d, self.initial_state,
                       self.horizon_cap, self.state_names, self.action_names)).encode())
        return h.hexdigest()

    def with_budget(self, d: float) -> "Cmdp":
        return Cmdp(self.transition, self.reward, self.cost, self.n_actions, self.gamma_r,
                    self.gamma_c, d, self.initial_state, self.terminal, self.horizon_cap,
                    self.state_names, self.action_names, self.name)


def validate(cmdp: Cmdp) -> list[str]:
    """Return a list of violated invariants; empty iff ``cmdp`` is well formed."""
    problems = []
    S, A = cmdp.n_states, cmdp.max_actions
    if cmdp.transition.shape != (S, A, S):
        return [f"transition shape {cmdp.transition.shape} != {(S, A, S)}"]
    for arr, label in ((cmdp.reward, "reward"), (cmdp.cost, "cost")):
        if arr.shape != (S, A):
            problems.append(f"{label} shape {arr.shape} != {(S, A)}")
    if problems:
        return problems
    if np.any(cmdp.n_actions < 1) or np.any(cmdp.n_actions > A):
        problems.append("every state needs between 1 and max_actions actions")
    mask = cmdp.mask
    for s, a in zip(*np.nonzero(mask)):
        row = cmdp.transition[s, a]
        if np.any(row < 0) or abs(row.sum() - 1.0) > ROW_TOL:
            problems.append(f"transition row ({s},{a}) sums to {row.sum():.12g}")
        if cmdp.cost[s, a] < 0:
            problems.append(f"negative cost {cmdp.cost[s, a]} at ({s},{a})")
    for s in np.nonzero(cmdp.terminal)[0]:
        if cmdp.n_actions[s] != 1 or cmdp.transition[s, 0, s] != 1.0 \
                or cmdp.reward[s, 0] != 0 or cmdp.cost[s, 0] != 0:
            problems.append(f"terminal state {s} must have a single zero self-loop")
    for g, label in ((cmdp.gamma_r, "gamma_r"), (cmdp.gamma_c, "gamma_c")):
        if not 0.0 < g <= 1.0:
            problems.append(f"{label}={g} outside (0, 1]")
    if cmdp.budget_d < 0:
        problems.append(f"budget_d={cmdp.budget_d} is negative")
    if not 0 <= cmdp.initial_state < S:
        problems.append(f"initial_state {cmdp.initial_state} out of range")
    if cmdp.horizon_cap < 1:
        problems.append("horizon_cap must be positive")
    if (cmdp.gamma_r == 1.0 or cmdp.gamma_c == 1.0) and not cmdp.is_episodic():
        problems.append("undiscounted CMDP does not terminate within horizon_cap")
    return problems


# --------------------------------------------------------------------------
# environments


def _build(rows, terminal=()):
    """Assemble a Cmdp from ``rows[s] = [(action_name, next_dist, r, c), ...]``."""
    S = len(rows)
    A = max(len(r) for r in rows)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    C = np.zeros((S, A))
    n_act = np.zeros(S, dtype=np.int64)
    anames = []
    for s, acts in enumerate(rows):
        n_act[s] = len(acts)
        anames.append(tuple(a[0] for a in acts))
        for j, (_, nxt, r, c) in enumerate(acts):
            for sp, p in nxt.items():
                P[s, j, sp] += p
            R[s, j] = r
            C[s, j] = c
        for j in range(len(acts), A):
            P[s, j, s] = 1.0
    term = np.zeros(S, dtype=bool)
    term[list(terminal)] = True
    return P, R, C, n_act, term, tuple(anames)


def make_m1(gamma: float = 1.0, budget: float = 0.5) -> Cmdp:
    # states s0, s1, s2, s4 (index 3); s4 terminal
    rows = [
        [("a0", {1: 1.0}, 1.0, 1.0), ("a1", {2: 1.0}, 0.0, 0.0)],
        [("a2", {3: 1.0}, 0.0, 0.0)],
        [("a3", {3: 1.0}, 0.0, 0.0)],
        [("stay", {3: 1.0}, 0.0, 0.0)],
    ]
    P, R, C, n_act, term, anames = _build(rows, terminal=[3])
    return Cmdp(P, R, C, n_act, gamma, gamma, budget, 0, term, 2,
                ("s0", "s1", "s2", "s4"), anames, "m1")


def make_chain(n: int = 5, rewards: Sequence[float] | float = 1.0,
               costs: Sequence[float] | float = 0.0, gamma: float = 1.0,
               budget: float = 1.0, shortcut: tuple[float, float] | None = None) -> Cmdp:
    """Deterministic line ``0 -> 1 -> ... -> n-1`` with state ``n-1`` terminal.

    ``shortcut=(reward, cost)`` adds a second action at state 0 that jumps
    straight to the terminal state.
    """
    if n < 1:
        raise ValueError("chain needs n >= 1")
    steps = n - 1
    rewards = [float(rewards)] * steps if np.isscalar(rewards) else [float(v) for v in rewards]
    costs = [float(costs)] * steps if np.isscalar(costs) else [float(v) for v in costs]
    if len(rewards) != steps or len(costs) != steps:
        raise ValueError(f"chain with n={n} needs {steps} per-step rewards and costs")
    rows = []
    for s in range(steps):
        acts = [("fwd", {s + 1: 1.0}, rewards[s], costs[s])]
        if s == 0 and shortcut is not None:
            acts.append(("shortcut", {n - 1: 1.0}, float(shortcut[0]), float(shortcut[1])))
        rows.append(acts)
    rows.append([("stay", {n - 1: 1.0}, 0.0, 0.0)])
    horizon = max(steps, 1) if gamma == 1.0 else max(default_horizon(gamma), steps, 1)
    P, R, C, n_act, term, anames = _build(rows, terminal=[n - 1])
    return Cmdp(P, R, C, n_act, gamma, gamma, budget, 0, term, horizon, (), anames, "chain")


def make_loop(costs: Sequence[float] = (1.0,), rewards: Sequence[float] | None = None,
              gamma: float = 0.9, budget: float = 5.0) -> Cmdp:
    """Single non-terminal state whose every action loops back to itself."""
    if gamma >= 1.0:
        raise ValueError("loop needs gamma < 1")
    costs = [float(c) for c in costs]
    rewards = [0.0] * len(costs) if rewards is None else [float(r) for r in rewards]
    if len(rewards) != len(costs) or not costs:
        raise ValueError("loop needs matching non-empty rewards and costs")
    rows = [[(f"a{j}", {0: 1.0}, rewards[j], costs[j]) for j in range(len(costs))]]
    P, R, C, n_act, term, anames = _build(rows)
    return Cmdp(P, R, C, n_act, gamma, gamma, budget, 0, term, default_horizon(gamma),
                ("s0",), anames, "loop")


def make_random(seed: int = 0, n_states: int = 5, n_actions: int = 3, sparsity: float = 0.5,
                gamma: float = 0.9, terminal_prob: float = 0.2, deterministic: bool = False,
                budget: float = 1.0, zero_cost_frac: float = 0.3) -> Cmdp:
    """Garnet-style random CMDP with an absorbing terminal state appended.

    Each (s, a) moves to the terminal with probability ``terminal_prob`` and
    otherwise to a random subset of ``ceil((1 - sparsity) * n_states)``
    states with Dirichlet weights. ``deterministic=True`` replaces every
    row by a single successor (terminal with probability ``terminal_prob``).
    """
    if n_states < 1 or n_actions < 1:
        raise ValueError("random needs n_states >= 1 and n_actions >= 1")
    if not 0.0 <= sparsity < 1.0 or not 0.0 <= terminal_prob <= 1.0:
        raise ValueError("sparsity must be in [0, 1) and terminal_prob in [0, 1]")
    if not 0.0 < gamma < 1.0:
        raise ValueError("random CMDPs need 0 < gamma < 1")
    rng = np.random.default_rng(seed)
    T = n_states
    k = max(1, int(math.ceil((1.0 - sparsity) * n_states)))
    rows = []
    for s in range(n_states):
        acts = []
        for a in range(n_actions):
            if deterministic:
                nxt = {T: 1.0} if rng.random() < terminal_prob else {int(rng.integers(n_states)): 1.0}
            else:
                support = rng.choice(n_states, size=k, replace=False)
                w = rng.dirichlet(np.ones(k)) * (1.0 - terminal_prob)
                nxt = {int(sp): float(p) for sp, p in zip(support, w)}
                if terminal_prob > 0:
                    nxt[T] = nxt.get(T, 0.0) + terminal_prob
            r = float(rng.random())
            c = 0.0 if rng.random() < zero_cost_frac else float(rng.random())
            acts.append((f"a{a}", nxt, r, c))
        rows.append(acts)
    rows.append([("stay", {T: 1.0}, 0.0, 0.0)])
    P, R, C, n_act, term, anames = _build(rows, terminal=[T])
    # renormalise rows against float drift from the Dirichlet scaling
    P = P / P.sum(axis=2, keepdims=True)
    return Cmdp(P, R, C, n_act, gamma, gamma, budget, 0, term, default_horizon(gamma), (), anames,
                f"random{seed}")


_FACTORIES = {"m1": make_m1, "chain": make_chain, "random": make_random, "loop": make_loop}


def env_factory(name: str, seed: int | None = None, **params) -> Cmdp:
    """Build a named environment. ``seed`` only matters for ``random``."""
    key = name.lower()
    if key not in _FACTORIES:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(_FACTORIES)}")
    if key == "random":
        params["seed"] = 0 if seed is None else seed
    return _FACTORIES[key](**params)


def _parse_value(text: str):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    if "," in text:
        return [_parse_value(t) for t in text.split(",") if t.strip()]
    return text


def parse_env_section(items: Iterable[tuple[str, str]]) -> tuple[str, int | None, dict]:
    params = {k.replace("-", "_"): _parse_value(v) for k, v in items}
    name = params.pop("name", "m1")
    seed = params.pop("seed", None)
    if "shortcut" in params and params["shortcut"] is not None:
        params["shortcut"] = tuple(params["shortcut"])
    for key in ("rewards", "costs"):
        if isinstance(params.get(key), (int, float)) and name in ("loop",):
            params[key] = [params[key]]
    return name, seed, params


def load_env_config(text: str) -> Cmdp:
    """Build an environment from a ``[env]`` section of key = value lines."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "env" not in cp:
        raise ValueError("config has no [env] section")
    name, seed, params = parse_env_section(cp["env"].items())
    return env_factory(name, seed=seed, **params)


# --------------------------------------------------------------------------
# policies and trajectories


@dataclass(frozen=True, eq=False)
class MemorylessPolicy:
    probs: np.ndarray  # (S, A)

    def __post_init__(self):
        object.__setattr__(self, "probs", _freeze(self.probs))

    @classmethod
    def deterministic(cls, cmdp: Cmdp, actions: Sequence[int]) -> "MemorylessPolicy":
        probs = np.zeros((cmdp.n_states, cmdp.max_actions))
        probs[np.arange(cmdp.n_states), np.asarray(actions)] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, cmdp: Cmdp) -> "MemorylessPolicy":
        m = cmdp.mask.astype(float)
        return cls(m / m.sum(axis=1, keepdims=True))

    @classmethod
    def random(cls, cmdp: Cmdp, rng: np.random.Generator) -> "MemorylessPolicy":
        w = rng.random((cmdp.n_states, cmdp.max_actions)) * cmdp.mask
        w[w.sum(axis=1) == 0, 0] = 1.0
        return cls(w / w.sum(axis=1, keepdims=True))

    def check(self, cmdp: Cmdp) -> None:
        if self.probs.shape != (cmdp.n_states, cmdp.max_actions):
            raise ValueError("policy shape does not match the CMDP")
        if np.any(self.probs[~cmdp.mask] != 0) or np.any(self.probs < 0):
            raise ValueError("policy puts mass outside A(s)")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError("policy rows must sum to 1")

    # scalar interface
    def act(self, s: int, rng: np.random.Generator) -> int:
        p = self.probs[s]
        return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))

    # batch interface
    def start(self, n: int) -> None:
        pass

    def act_batch(self, states, idx, rng):
        cum = np.cumsum(self.probs[states], axis=1)
        u = rng.random(len(states))
        a = (cum <= u[:, None]).sum(axis=1)
        return np.minimum(a, self.probs.shape[1] - 1)

    def observe_batch(self, idx, states, actions, next_states) -> None:
        pass


@dataclass
class Trajectory:
    steps: list = field(default_factory=list)  # (s, a, r, c)
    terminated: bool = False
    final_state: int | None = None

    def __len__(self):
        return len(self.steps)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"schema": "trajectory/1", "columns": ["s", "a", "r", "c"]})]
        lines += [json.dumps({"s": int(s), "a": int(a), "r": float(r), "c": float(c)})
                  for s, a, r, c in self.steps]
        return "\n".join(lines) + "\n"


def rollout(cmdp: Cmdp, policy, horizon: int | None, rng: np.random.Generator) -> Trajectory:
    """Sample one path. ``policy`` needs ``act(s, rng)``; ``reset()`` and
    ``observe(s, a, s_next)`` are called when present."""
    horizon = cmdp.horizon_cap if horizon is None else horizon
    if horizon > cmdp.horizon_cap:
        raise ValueError(f"horizon {horizon} exceeds horizon_cap {cmdp.horizon_cap}")
    if hasattr(policy, "reset"):
        policy.reset()
    s = cmdp.initial_state
    traj = Trajectory(final_state=s)
    if cmdp.terminal[s]:
        traj.terminated = True
        return traj
    for _ in range(horizon):
        a = policy.act(s, rng)
        if not 0 <= a < cmdp.n_actions[s]:
            raise ValueError(f"policy chose action {a} outside A({s})")
        row = cmdp.transition[s, a]
        s2 = int(min(np.searchsorted(np.cumsum(row), rng.random(), side="right"),
                     cmdp.n_states - 1))
        traj.steps.append((s, int(a), float(cmdp.reward[s, a]), float(cmdp.cost[s, a])))
        if hasattr(policy, "observe"):
            policy.observe(s, a, s2)
        s = s2
        traj.final_state = s
        if cmdp.terminal[s]:
            traj.terminated = True
            break
    return traj


def discounted_sums(traj: Trajectory, gamma_r: float, gamma_c: float) -> tuple[float, float]:
    R = sum(gamma_r ** t * r for t, (_, _, r, _) in enumerate(traj.steps))
    C = sum(gamma_c ** t * c for t, (_, _, _, c) in enumerate(traj.steps))
    return float(R), float(C)


def sample_next(cmdp: Cmdp, states: np.ndarray, actions: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    rows = cmdp.transition[states, actions]
    cum = np.cumsum(rows, axis=1)
    u = rng.random(len(states))
    return np.minimum((cum <= u[:, None]).sum(axis=1), cmdp.n_states - 1)


def simulate(cmdp: Cmdp, policy, n: int, horizon: int | None,
             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised rollouts; returns per-rollout discounted (reward, cost).

    ``policy`` implements ``start(n)``, ``act_batch(states, idx, rng)`` and
    ``observe_batch(idx, states, actions, next_states)``, where ``idx`` are
    the ids of the still-running rollouts.
    """
    horizon = cmdp.horizon_cap if horizon is None else horizon
    R = np.zeros(n)
    C = np.zeros(n)
    policy.start(n)
    idx = np.arange(n)
    s = np.full(n, cmdp.initial_state)
    keep = ~cmdp.terminal[s]
    idx, s = idx[keep], s[keep]
    gr = gc = 1.0
    for _ in range(horizon):
        if idx.size == 0:
            break
        a = np.asarray(policy.act_batch(s, idx, rng))
        if np.any(a >= cmdp.n_actions[s]) or np.any(a < 0):
            raise ValueError("policy chose an action outside A(s)")
        R[idx] += gr * cmdp.reward[s, a]
        C[idx] += gc * cmdp.cost[s, a]
        s2 = sample_next(cmdp, s, a, rng)
        policy.observe_batch(idx, s, a, s2)
        keep = ~cmdp.terminal[s2]
        idx, s = idx[keep], s2[keep]
        gr *= cmdp.gamma_r
        gc *= cmdp.gamma_c
    return R, C


# --------------------------------------------------------------------------
# exact evaluation


def _policy_chain(cmdp: Cmdp, probs: np.ndarray):
    P_pi = np.einsum("sa,sat->st", probs, cmdp.transition)
    r_pi = np.einsum("sa,sa->s", probs, np.where(cmdp.mask, cmdp.reward, 0.0))
    c_pi = np.einsum("sa,sa->s", probs, np.where(cmdp.mask, cmdp.cost, 0.0))
    return P_pi, r_pi, c_pi


def _chain_value(cmdp: Cmdp, P_pi, vec, gamma) -> np.ndarray:
    if gamma < 1.0:
        return np.linalg.solve(np.eye(cmdp.n_states) - gamma * P_pi, vec)
    if not cmdp.is_episodic():
        raise ValueError("undiscounted evaluation needs an episodic CMDP")
    v = np.zeros(cmdp.n_states)
    for _ in range(cmdp.horizon_cap):
        v = vec + gamma * P_pi @ v
    return v


def state_values(cmdp: Cmdp, policy: MemorylessPolicy) -> tuple[np.ndarray, np.ndarray]:
    P_pi, r_pi, c_pi = _policy_chain(cmdp, np.asarray(policy.probs))
    return (_chain_value(cmdp, P_pi, r_pi, cmdp.gamma_r),
            _chain_value(cmdp, P_pi, c_pi, cmdp.gamma_c))


def exact_eval(cmdp: Cmdp, policy: MemorylessPolicy) -> tuple[float, float]:
    """Discounted reward and cost of ``policy`` from the initial state."""
    policy.check(cmdp)
    vr, vc = state_values(cmdp, policy)
    s0 = cmdp.initial_state
    return float(vr[s0]), float(vc[s0])
