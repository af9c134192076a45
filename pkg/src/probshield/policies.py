"""Augmented (risk-valued) policies and their vectorised simulation.

A *proposer* maps a batch of augmented states to padded atom arrays via
``proposal_batch(s, x) -> (a, y, p)`` of shape ``(n, K)``. Wrapping a proposer
in ``Shielded`` passes every proposal through the shield before sampling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugEnv
from .critic import QTable
from .shield import (ProposedDistribution, is_shielded, mix_with_noise, sample_atoms, shield,
                     shield_batch)


def _pad(rows: list[list[tuple[int, float, float]]]):
    k = max(len(r) for r in rows)
    a = np.zeros((len(rows), k), dtype=int)
    y = np.zeros((len(rows), k))
    p = np.zeros((len(rows), k))
    for i, r in enumerate(rows):
        for j, (aa, yy, pp) in enumerate(r):
            a[i, j], y[i, j], p[i, j] = aa, yy, pp
    return a, y, p


def atoms_from_row(a, y, p):
    return tuple((int(aa), float(yy), float(pp)) for aa, yy, pp in zip(a, y, p) if pp > 0)


class FixedProposer:
    """Proposal that depends on the base state only: ``atoms[s]`` is a list of ``(a, y, p)``."""

    def __init__(self, atoms: dict[int, list[tuple[int, float, float]]] | list, n_states: int | None = None):
        if isinstance(atoms, dict):
            n_states = n_states if n_states is not None else max(atoms) + 1
            rows = [list(atoms.get(s, [(0, 0.0, 1.0)])) for s in range(n_states)]
        else:
            rows = [list(r) for r in atoms]
        self.a, self.y, self.p = _pad(rows)

    def proposal_batch(self, s, x):
        s = np.asarray(s)
        return self.a[s], self.y[s], self.p[s]


class BackupProposer:
    """Dirac on the backup action. ``carry=True`` allocates the current risk
    (hybrid-episode actor); otherwise the backup's own Q-value."""

    def __init__(self, q: QTable, carry: bool = False):
        self.actions = q.backup_actions()
        self.qb = q.values[np.arange(q.values.shape[0]), self.actions]
        self.carry = carry

    def proposal_batch(self, s, x):
        s = np.asarray(s)
        y = np.asarray(x, dtype=float) if self.carry else self.qb[s]
        return self.actions[s][:, None], np.asarray(y, dtype=float)[:, None], np.ones((len(s), 1))


class UniformProposer:
    """Uniform over a per-state list of candidate ``(a, y)`` pairs."""

    def __init__(self, candidates: list[list[tuple[int, float]]]):
        self.a, self.y, self.p = _pad([[(a, y, 1.0 / len(c)) for a, y in c] for c in candidates])

    def proposal_batch(self, s, x):
        s = np.asarray(s)
        return self.a[s], self.y[s], self.p[s]


class MixedProposer:
    """``(1 - xi) * first + xi * second`` at the proposal level."""

    def __init__(self, first, second, xi: float):
        if not 0.0 <= xi <= 1.0:
            raise ValueError("xi must lie in [0, 1]")
        self.first, self.second, self.xi = first, second, xi

    def proposal_batch(self, s, x):
        a1, y1, p1 = self.first.proposal_batch(s, x)
        a2, y2, p2 = self.second.proposal_batch(s, x)
        return (np.concatenate([a1, a2], 1), np.concatenate([y1, y2], 1),
                np.concatenate([(1 - self.xi) * p1, self.xi * p2], 1))


# --------------------------------------------------------------------------
# samplers: proposal -> executed augmented action


def proposal_at(proposer, s: int, x: float) -> ProposedDistribution:
    a, y, p = proposer.proposal_batch(np.array([s]), np.array([x]))
    return ProposedDistribution(atoms_from_row(a[0], y[0], p[0]))


@dataclass
class Shielded:
    proposer: object
    q: QTable

    def distribution(self, s: int, x: float):
        return shield(proposal_at(self.proposer, s, x), (s, x), self.q)

    def sample_batch(self, s, x, rng):
        a, y, p = self.proposer.proposal_batch(s, x)
        a, y, p, lam, _ = shield_batch(a, y, p, s, x, self.q)
        aa, yy = sample_atoms(a, y, p, rng)
        return aa, yy, lam


@dataclass
class Unshielded:
    """Samples the raw proposal; used to exercise the safety precondition guard."""

    proposer: object

    def distribution(self, s: int, x: float):
        return proposal_at(self.proposer, s, x)

    def sample_batch(self, s, x, rng):
        a, y, p = self.proposer.proposal_batch(s, x)
        aa, yy = sample_atoms(a, y, p, rng)
        return aa, yy, np.zeros(len(aa))


@dataclass
class NoisyMixture:
    """Per-state mixture ``(1 - xi) * base + xi * noise`` of two samplers."""

    base: object
    noise: object
    xi: float

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError("xi must lie in [0, 1]")

    def distribution(self, s: int, x: float):
        return mix_with_noise(self.base.distribution(s, x), self.noise.distribution(s, x), self.xi)

    def sample_batch(self, s, x, rng):
        a1, y1, l1 = self.base.sample_batch(s, x, rng)
        a2, y2, l2 = self.noise.sample_batch(s, x, rng)
        pick = rng.random(len(a1)) < self.xi
        return np.where(pick, a2, a1), np.where(pick, y2, y1), np.where(pick, l2, l1)


# --------------------------------------------------------------------------
# simulation


@dataclass
class AugRun:
    reward: np.ndarray
    cost: np.ndarray
    clamp_events: int
    mean_lambda: float


def simulate_aug(env: AugEnv, sampler, x0: float, n: int, horizon: int | None,
                 rng: np.random.Generator) -> AugRun:
    """Vectorised rollouts of an augmented policy from ``(s0, x0)``."""
    cmdp = env.cmdp
    horizon = cmdp.horizon_cap if horizon is None else horizon
    R = np.zeros(n)
    C = np.zeros(n)
    idx = np.arange(n)
    s = np.full(n, cmdp.initial_state)
    x = np.full(n, float(x0))
    if cmdp.terminal[cmdp.initial_state]:
        return AugRun(R, C, 0, 0.0)
    gr = gc = 1.0
    clamps = 0
    lam_sum, lam_n = 0.0, 0
    for _ in range(horizon):
        if idx.size == 0:
            break
        a, y, lam = sampler.sample_batch(s, x, rng)
        R[idx] += gr * cmdp.reward[s, a]
        C[idx] += gc * cmdp.cost[s, a]
        lam_sum += float(lam.sum())
        lam_n += lam.size
        s2, x2, clamped = env.step_batch(s, a, y, rng)
        clamps += int(clamped.sum())
        keep = ~cmdp.terminal[s2]
        idx, s, x = idx[keep], s2[keep], x2[keep]
        gr *= cmdp.gamma_r
        gc *= cmdp.gamma_c
    return AugRun(R, C, clamps, lam_sum / max(lam_n, 1))


def audit_shielded(env: AugEnv, sampler, x0: float, n_paths: int, rng: np.random.Generator,
                   horizon: int | None = None, tol: float = 2e-8) -> tuple[bool, int]:
    """Check ``is_shielded`` of ``sampler.distribution`` at every visited
    augmented state of ``n_paths`` sampled paths (distinct states checked once).

    Returns ``(ok, n_checked)``.
    """
    cmdp = env.cmdp
    horizon = cmdp.horizon_cap if horizon is None else horizon
    seen: set[tuple[int, float]] = set()
    s = np.full(n_paths, cmdp.initial_state)
    x = np.full(n_paths, float(x0))
    alive = ~cmdp.terminal[s]
    for _ in range(horizon):
        if not alive.any():
            break
        s, x = s[alive], x[alive]
        for si, xi in zip(s.tolist(), x.tolist()):
            if (si, xi) in seen:
                continue
            seen.add((si, xi))
            if not is_shielded(sampler.distribution(si, xi), (si, xi), env.q, tol):
                return False, len(seen)
        a, y, _ = sampler.sample_batch(s, x, rng)
        s, x, _ = env.step_batch(s, a, y, rng)
        alive = ~cmdp.terminal[s]
    return True, len(seen)
