"""The shield map over risk-valued action distributions, and the shielded predicate."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .critic import QTable, backup_policy

ETA = 1e-8
PROB_TOL = 1e-12
CASES = ("pass_through", "fallback", "mixed")

Atom = tuple[int, float, float]  # (action, allocated risk, probability)


def _merge(atoms) -> tuple[Atom, ...]:
    """Sum probabilities of atoms sharing ``(a, y)``, drop zero mass, keep first-seen order."""
    acc: dict[tuple[int, float], float] = {}
    for a, y, p in atoms:
        key = (int(a), float(y))
        acc[key] = acc.get(key, 0.0) + float(p)
    return tuple((a, y, p) for (a, y), p in acc.items() if p > 0.0)


@dataclass(frozen=True)
class ProposedDistribution:
    atoms: tuple[Atom, ...]

    def __post_init__(self):
        atoms = tuple((int(a), float(y), float(p)) for a, y, p in self.atoms)
        if not atoms:
            raise ValueError("empty proposal")
        if any(p < 0 for _, _, p in atoms):
            raise ValueError("negative probability")
        if abs(sum(p for _, _, p in atoms) - 1.0) > PROB_TOL:
            raise ValueError("probabilities must sum to one")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def dirac(cls, a: int, y: float) -> "ProposedDistribution":
        return cls(((a, y, 1.0),))

    def check_actions(self, n_actions: int) -> None:
        for a, _, _ in self.atoms:
            if not 0 <= a < n_actions:
                raise ValueError(f"action {a} not available")

    def expected_risk(self) -> float:
        return sum(p * y for _, y, p in self.atoms)


@dataclass(frozen=True)
class ShieldedDistribution:
    atoms: tuple[Atom, ...]
    lam: float
    case: str

    def expected_risk(self) -> float:
        return sum(p * y for _, y, p in self.atoms)

    def action_marginal(self, n_actions: int) -> np.ndarray:
        out = np.zeros(n_actions)
        for a, _, p in self.atoms:
            out[a] += p
        return out


def _as_atoms(dist) -> tuple[Atom, ...]:
    return dist.atoms if hasattr(dist, "atoms") else tuple(dist)


def shield(proposal: ProposedDistribution, st, q: QTable) -> ShieldedDistribution:
    s, x = int(st[0]), float(st[1])
    g = q.gamma_c
    row = q.values[s]
    if not proposal.atoms:
        raise ValueError("empty proposal")
    proposal.check_actions(int(np.isfinite(row).sum()))
    clamped = tuple((a, max(y, float(row[a])), p) for a, y, p in proposal.atoms)
    t = g * sum(p * y for _, y, p in clamped)
    if t <= x:
        return ShieldedDistribution(clamped, 0.0, "pass_through")
    ab, floor = backup_policy(q, s)
    if x < floor:
        return ShieldedDistribution(((ab, x / g, 1.0),), 1.0, "fallback")
    qb = float(row[ab])
    if x <= g * qb:
        lam = 1.0
    else:
        lam = min(max((t - x) / (t - g * qb + ETA), 0.0), 1.0)
    atoms = [(a, y, (1.0 - lam) * p) for a, y, p in clamped] + [(ab, qb, lam)]
    return ShieldedDistribution(_merge(atoms), lam, "mixed")


def is_shielded(dist, st, q: QTable, tol: float = 2 * ETA) -> bool:
    """Budget and per-action admissibility of ``dist`` at augmented state ``st``."""
    s, x = int(st[0]), float(st[1])
    atoms = _as_atoms(dist)
    row = q.values[s]
    n_act = int(np.isfinite(row).sum())
    if not atoms or any(not 0 <= a < n_act or p < 0 for a, _, p in atoms):
        return False
    if abs(sum(p for _, _, p in atoms) - 1.0) > max(tol, PROB_TOL):
        return False
    ab, floor = backup_policy(q, s)
    if x >= floor:
        if any(p > 0 and y < row[a] - tol for a, y, p in atoms):
            return False
        return x + tol >= q.gamma_c * sum(p * y for _, y, p in atoms)
    live = [(a, y) for a, y, p in atoms if p > 0]
    return len(live) == 1 and live[0][0] == ab and q.gamma_c * live[0][1] <= x + tol


def mix_with_noise(dist, noise, xi: float):
    """``(1 - xi) * dist + xi * noise`` with identical atoms merged."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    if xi == 0.0:
        return dist
    if xi == 1.0:
        return noise
    atoms = [(a, y, (1 - xi) * p) for a, y, p in _as_atoms(dist)]
    atoms += [(a, y, xi * p) for a, y, p in _as_atoms(noise)]
    return ProposedDistribution(_merge(atoms))


def decision_record(st, out: ShieldedDistribution) -> str:
    """One JSON line describing a shield decision."""
    return json.dumps({"s": int(st[0]), "x": float(st[1]), "case": out.case, "lambda": out.lam,
                       "atoms": [[a, y, p] for a, y, p in out.atoms]})


def shield_batch(a, y, p, s, x, q: QTable):
    """Vectorised shield over ``n`` proposals with ``K`` padded atoms each.

    ``a, y, p`` have shape ``(n, K)`` (padding atoms carry ``p = 0``).
    Returns arrays of shape ``(n, K + 1)`` whose last column is the backup
    atom, plus ``lam`` and a case code (index into ``CASES``) per row.
    Atoms are not merged; the induced distribution equals ``shield``'s.
    """
    g = q.gamma_c
    vals = q.values
    s = np.asarray(s)
    x = np.asarray(x, dtype=float)
    yc = np.maximum(y, vals[s[:, None], a])
    t = g * np.where(p > 0, p * yc, 0.0).sum(axis=1)
    ab = vals[s].argmin(axis=1)
    qb = vals[s, ab]
    floor = g * qb
    passing = t <= x
    fallback = ~passing & (x < floor)
    mixed = ~passing & ~fallback
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.clip((t - x) / (t - g * qb + ETA), 0.0, 1.0)
    lam = np.where(mixed & (x <= g * qb), 1.0, lam)
    lam = np.where(passing, 0.0, np.where(fallback, 1.0, lam))
    keep = np.where(fallback, 0.0, 1.0 - lam)
    a_out = np.concatenate([a, ab[:, None]], axis=1)
    y_out = np.concatenate([yc, np.where(fallback, x / g, qb)[:, None]], axis=1)
    p_out = np.concatenate([p * keep[:, None], lam[:, None]], axis=1)
    case = np.where(passing, 0, np.where(fallback, 1, 2))
    return a_out, y_out, p_out, lam, case


def sample_atoms(a, y, p, rng: np.random.Generator):
    """Draw one atom per row from padded ``(n, K)`` atom arrays."""
    cum = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cum[:, -1]
    k = np.minimum((cum <= u[:, None]).sum(axis=1), p.shape[1] - 1)
    # never land on a zero-mass padding column
    bad = p[np.arange(len(p)), k] <= 0
    if np.any(bad):
        k[bad] = np.argmax(p[bad] > 0, axis=1)
    rows = np.arange(len(p))
    return a[rows, k], y[rows, k]
