"""Exhaustive constrained optimum over mixtures of deterministic memoryless policies."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp, MemorylessPolicy

MAX_POLICIES = 10**6


@dataclass(frozen=True)
class OracleResult:
    r_star: float
    c_star: float
    pi1: tuple[int, ...]
    pi2: tuple[int, ...]
    alpha: float  # weight on pi1

    def policies(self, cmdp: Cmdp) -> tuple[MemorylessPolicy, MemorylessPolicy]:
        return (MemorylessPolicy.deterministic(cmdp, self.pi1),
                MemorylessPolicy.deterministic(cmdp, self.pi2))


def enumerate_policies(cmdp: Cmdp, limit: int = MAX_POLICIES) -> np.ndarray:
    """All deterministic memoryless policies as an ``(N, S)`` action array.

    Terminal states always take action 0.
    """
    choices = [range(1) if cmdp.terminal[s] else range(int(cmdp.n_actions[s]))
               for s in range(cmdp.n_states)]
    total = int(np.prod([len(c) for c in choices], dtype=float))
    if total > limit:
        raise ValueError(f"{total} deterministic policies exceed the enumeration limit {limit}")
    return np.array(list(itertools.product(*choices)), dtype=int).reshape(total, cmdp.n_states)


def evaluate_all(cmdp: Cmdp, pols: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Exact initial-state (reward, cost) of every row of ``pols``."""
    S = cmdp.n_states
    s_idx = np.arange(S)
    s0 = cmdp.initial_state
    R = np.empty(len(pols))
    C = np.empty(len(pols))
    reward = np.where(cmdp.mask, cmdp.reward, 0.0)
    cost = np.where(cmdp.mask, cmdp.cost, 0.0)
    for lo in range(0, len(pols), chunk):
        pa = pols[lo:lo + chunk]
        P = cmdp.transition[s_idx, pa]  # (n, S, S)
        r = reward[s_idx, pa]
        c = cost[s_idx, pa]
        out = []
        for vec, gamma in ((r, cmdp.gamma_r), (c, cmdp.gamma_c)):
            if gamma < 1.0:
                v = np.linalg.solve(np.eye(S) - gamma * P, vec[..., None])[..., 0]
            else:
                if not cmdp.is_episodic():
                    raise ValueError("undiscounted evaluation needs an episodic CMDP")
                v = np.zeros_like(vec)
                for _ in range(cmdp.horizon_cap):
                    v = vec + gamma * np.einsum("nst,nt->ns", P, v)
            out.append(v[:, s0])
        R[lo:lo + chunk], C[lo:lo + chunk] = out
    return R, C


def _upper_envelope(c: np.ndarray, r: np.ndarray) -> list[int]:
    """Vertices of the upper concave envelope of the points ``(c, r)``, by increasing cost."""
    order = np.lexsort((-r, c))
    pts: list[int] = []
    last = None
    for i in order:
        if c[i] == last:
            continue
        last = c[i]
        while len(pts) >= 2:
            i0, i1 = pts[-2], pts[-1]
            if (c[i1] - c[i0]) * (r[i] - r[i0]) - (r[i1] - r[i0]) * (c[i] - c[i0]) >= 0:
                pts.pop()
            else:
                break
        pts.append(int(i))
    return pts


def best_mixture(R: np.ndarray, C: np.ndarray, d: float) -> tuple[float, int, int, float]:
    """Maximise ``alpha R_i + (1-alpha) R_j`` subject to ``alpha C_i + (1-alpha) C_j <= d``.

    The optimum lies on the upper concave envelope of ``{(C_i, R_i)}`` at cost
    ``min(d, cost of the best unconstrained point)``.
    """
    if not np.any(C <= d):
        raise ValueError(f"no policy meets the budget {d}")
    hull = _upper_envelope(C, R)
    # only the rising part matters
    top = int(np.argmax([R[i] for i in hull]))
    hull = hull[:top + 1]
    for k, i in enumerate(hull):
        if C[i] > d:
            j = hull[k - 1]
            alpha = (C[i] - d) / (C[i] - C[j])
            return float(alpha * R[j] + (1 - alpha) * R[i]), j, i, float(alpha)
    i = hull[-1]
    return float(R[i]), i, i, 1.0


def brute_force_oracle(cmdp: Cmdp, d: float, limit: int = MAX_POLICIES) -> OracleResult:
    """Best initial-state mixture of two deterministic memoryless policies under budget ``d``.

    Exact for the constrained problem when ``gamma_r == gamma_c``; otherwise a lower bound.
    """
    pols = enumerate_policies(cmdp, limit)
    R, C = evaluate_all(cmdp, pols)
    r_star, i, j, alpha = best_mixture(R, C, d)
    c_star = alpha * C[i] + (1 - alpha) * C[j]
    return OracleResult(r_star, float(c_star), tuple(map(int, pols[i])), tuple(map(int, pols[j])), alpha)


def reward_range(cmdp: Cmdp, limit: int = MAX_POLICIES) -> float:
    """Spread of initial-state rewards over deterministic memoryless policies."""
    R, _ = evaluate_all(cmdp, enumerate_policies(cmdp, limit))
    return float(R.max() - R.min())
