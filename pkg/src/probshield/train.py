"""Shielded tabular Q-learning on the risk-augmented CMDP.

Each state carries a finite ladder of candidate augmented actions ``(a, y)``
with ``y`` running from ``Q_b(s, a)`` up to the risk bound. The learned table
``qbar[s, k]`` estimates the discounted reward of executing candidate ``k``.
Because the next augmented state depends only on ``(s, a, y, s')``, the table
does not need the current risk as an index: the budget enters through the
greedy step, which maximises ``sum p_k qbar[s, k]`` subject to
``gamma_c * sum p_k y_k <= x``. That linear program is solved by the upper
concave envelope of the points ``(y_k, qbar[s, k])``; its optimum mixes at most
two adjacent envelope vertices (a flipping proposal) and the envelope
breakpoints form the risk grid of the returned policy.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .augment import AugEnv
from .critic import QTable
from .shield import ProposedDistribution, is_shielded, mix_with_noise, shield

LOG_COLUMNS = ("episode", "steps", "disc_reward", "disc_cost", "clamp_events", "mean_lambda",
               "switch_step")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 5000
    alpha: float = 0.2
    alpha_power: float = 0.0  # step size alpha / visits**alpha_power
    xi: float = 0.2  # weight of uniform exploration before shielding
    hybrid_delay: int = 4
    policy_delay: int = 1
    x0: float = 0.0
    risk_bins: int = 32  # resolution of the exported risk grid
    risk_levels: int = 9  # ladder size per action
    risk_span: float | None = None  # ladder height above Q_b(s, a); None: up to the risk bound
    horizon: int | None = None
    length_window: int = 100
    check_shielded: bool = True

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")
        if not 0.0 < self.alpha <= 1.0 or self.alpha_power < 0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError("xi must lie in [0, 1]")
        if self.hybrid_delay < 1 or self.policy_delay < 1:
            raise ValueError("hybrid_delay and policy_delay must be >= 1")
        if self.risk_levels < 2 or self.risk_bins < 1:
            raise ValueError("need at least two risk levels and one risk bin")
        if self.risk_span is not None and self.risk_span <= 0:
            raise ValueError("risk_span must be positive")
        if not math.isfinite(self.x0):
            raise ValueError("x0 must be finite")

    def check_env(self, env: AugEnv) -> None:
        if abs(self.x0) > env.c_max_bound:
            raise ValueError(f"x0={self.x0} outside [-{env.c_max_bound:g}, {env.c_max_bound:g}]")


def hybrid_schedule(ep_number: int, hybrid_delay: int, recent_lengths,
                    rng: np.random.Generator) -> float:
    """Step after which a hybrid episode hands control to the backup actor."""
    if hybrid_delay < 1:
        raise ValueError("hybrid_delay must be >= 1")
    if ep_number % hybrid_delay:
        return math.inf
    lengths = list(recent_lengths)
    top = int(math.floor(sum(lengths) / len(lengths))) if lengths else 0
    return int(rng.integers(0, top + 1))


def candidate_ladder(q: QTable, bound: float, levels: int, span: float | None):
    """Per-state lists of ``(a, y)`` candidates, lowest risk first per action."""
    out = []
    for s in range(q.values.shape[0]):
        cands = []
        for a in np.nonzero(q.mask[s])[0]:
            lo = float(q.values[s, a])
            hi = bound if span is None else min(bound, lo + span)
            if hi <= lo:
                cands.append((int(a), lo))
                continue
            cands.extend((int(a), lo + j * (hi - lo) / (levels - 1)) for j in range(levels))
        out.append(cands)
    return out


def upper_hull(w: np.ndarray, v: np.ndarray) -> list[int]:
    """Indices of the nondecreasing part of the upper concave envelope of ``(w, v)``."""
    order = np.lexsort((-v, w))
    pts: list[int] = []
    last_w = None
    for i in order:
        if w[i] == last_w:
            continue
        last_w = w[i]
        while len(pts) >= 2:
            i0, i1 = pts[-2], pts[-1]
            cross = (w[i1] - w[i0]) * (v[i] - v[i0]) - (v[i1] - v[i0]) * (w[i] - w[i0])
            if cross >= 0:
                pts.pop()
            else:
                break
        pts.append(int(i))
    cut = 1
    while cut < len(pts) and v[pts[cut]] > v[pts[cut - 1]]:
        cut += 1
    return pts[:cut]


class _Hull:
    __slots__ = ("w", "v", "a", "k")

    def __init__(self, w, v, a, k):
        self.w, self.v, self.a, self.k = w, v, a, k

    @classmethod
    def build(cls, cand_a, cand_y, qbar):
        idx = upper_hull(cand_y, qbar)
        return cls(cand_y[idx], qbar[idx], cand_a[idx], np.asarray(idx))

    def locate(self, b: float):
        """``(j, frac)``: the budget lies a fraction ``frac`` past vertex ``j``."""
        w = self.w
        if b <= w[0]:
            return 0, 0.0
        if b >= w[-1]:
            return len(w) - 1, 0.0
        j = int(np.searchsorted(w, b, side="right")) - 1
        return j, (b - w[j]) / (w[j + 1] - w[j])

    def value(self, b: float) -> float:
        j, f = self.locate(b)
        return float(self.v[j] if f == 0.0 else (1 - f) * self.v[j] + f * self.v[j + 1])

    def atoms(self, b: float):
        j, f = self.locate(b)
        if f == 0.0:
            return [(int(self.a[j]), float(self.w[j]), 1.0)]
        return [(int(self.a[j]), float(self.w[j]), 1.0 - f), (int(self.a[j + 1]), float(self.w[j + 1]), f)]


@dataclass(frozen=True, eq=False)
class TabularAugPolicy:
    """Greedy flipping proposal stored as per-state envelope vertices.

    Row ``s`` of ``w``/``value``/``action`` lists the vertices in increasing
    risk, padded with ``+inf``/``nan``/``-1``. The proposal at ``(s, x)`` mixes
    the two vertices bracketing the budget ``x / gamma_c`` so that the expected
    allocated risk is exactly ``x`` (or is the nearest vertex outside the range).
    """

    w: np.ndarray
    value: np.ndarray
    action: np.ndarray
    gamma_c: float
    c_max_bound: float
    risk_bins: int = 32
    log: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> np.ndarray:
        return np.isfinite(self.w).sum(axis=1)

    @property
    def risk_grid(self) -> np.ndarray:
        """Budgets at which some state's proposal changes its support, within ``[-C_max, C_max]``."""
        b = self.c_max_bound
        pts = self.gamma_c * self.w[np.isfinite(self.w)]
        pts = pts[(pts > -b) & (pts < b)]
        return np.unique(np.concatenate([[-b, b], pts]))

    def proposal_batch(self, s, x):
        s = np.asarray(s)
        b = np.asarray(x, dtype=float) / self.gamma_c
        W = self.w[s]
        nv = self.n_vertices[s]
        j = (W <= b[:, None]).sum(axis=1) - 1
        lo = np.clip(j, 0, nv - 1)
        hi = np.minimum(lo + 1, nv - 1)
        rows = np.arange(len(s))
        wl, wh = W[rows, lo], W[rows, hi]
        inside = (j >= 0) & (j < nv - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(inside, (b - wl) / (wh - wl), 0.0)
        a = np.stack([self.action[s, lo], self.action[s, hi]], axis=1)
        y = np.stack([wl, wh], axis=1)
        p = np.stack([1.0 - f, f], axis=1)
        return a, y, p

    def proposal(self, s: int, x: float) -> ProposedDistribution:
        a, y, p = self.proposal_batch(np.array([s]), np.array([x]))
        atoms = [(int(a[0, k]), float(y[0, k]), float(p[0, k])) for k in range(2) if p[0, k] > 0]
        return ProposedDistribution(tuple(atoms))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["s", "vertex", "a", "y", "value"])
        for s in range(self.w.shape[0]):
            for k in range(int(self.n_vertices[s])):
                wr.writerow([s, k, int(self.action[s, k]), repr(float(self.w[s, k])),
                             repr(float(self.value[s, k]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n_states: int, gamma_c: float, c_max_bound: float) -> "TabularAugPolicy":
        rows = list(csv.DictReader(io.StringIO(text)))
        J = 1 + max(int(r["vertex"]) for r in rows)
        w = np.full((n_states, J), np.inf)
        v = np.full((n_states, J), np.nan)
        act = np.full((n_states, J), -1)
        for r in rows:
            s, k = int(r["s"]), int(r["vertex"])
            w[s, k], v[s, k], act[s, k] = float(r["y"]), float(r["value"]), int(r["a"])
        return cls(w, v, act, gamma_c, c_max_bound)

    def grid_csv(self) -> str:
        """Proposals materialised at the lower edge of ``risk_bins`` uniform bins."""
        b = self.c_max_bound
        edges = np.linspace(-b, b, self.risk_bins + 1)[:-1]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["s", "x", "a1", "y1", "p1", "a2", "y2", "p2"])
        S = self.w.shape[0]
        for s in range(S):
            a, y, p = self.proposal_batch(np.full(len(edges), s), edges)
            for i, x in enumerate(edges):
                wr.writerow([s, repr(float(x)), int(a[i, 0]), repr(float(y[i, 0])), repr(float(p[i, 0])),
                             int(a[i, 1]), repr(float(y[i, 1])), repr(float(p[i, 1]))])
        return buf.getvalue()


def _pack(hulls: list[_Hull], gamma_c: float, bound: float, bins: int, log, meta) -> TabularAugPolicy:
    J = max(len(h.w) for h in hulls)
    S = len(hulls)
    w = np.full((S, J), np.inf)
    v = np.full((S, J), np.nan)
    act = np.full((S, J), -1)
    for s, h in enumerate(hulls):
        n = len(h.w)
        w[s, :n], v[s, :n], act[s, :n] = h.w, h.v, h.a
    return TabularAugPolicy(w, v, act, gamma_c, bound, bins, tuple(log), meta)


def training_log_csv(log) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(LOG_COLUMNS)
    for row in log:
        wr.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4], repr(row[5]),
                     "inf" if row[6] == math.inf else row[6]])
    return buf.getvalue()


def shielded_q_train(env: AugEnv, q_b: QTable, cfg: TrainConfig,
                     rng: np.random.Generator) -> TabularAugPolicy:
    """Off-policy Q-learning where every executed action is drawn from the shield.

    Behaviour: ``shield((1 - xi) * greedy + xi * uniform_candidates)``; in
    hybrid episodes the proposal after ``switch_step`` is the backup action
    carrying the current risk. Executed actions that are not ladder candidates
    (fallback and hybrid atoms) are not used for table updates.
    """
    cmdp = env.cmdp
    cfg.check_env(env)
    if q_b.values.shape != (cmdp.n_states, cmdp.max_actions):
        raise ValueError("q_b does not cover the CMDP")
    g_c, g_r = q_b.gamma_c, cmdp.gamma_r
    horizon = cmdp.horizon_cap if cfg.horizon is None else min(cfg.horizon, cmdp.horizon_cap)
    ladder = candidate_ladder(q_b, env.c_max_bound, cfg.risk_levels, cfg.risk_span)
    cand_a = [np.array([a for a, _ in c]) for c in ladder]
    cand_y = [np.array([y for _, y in c]) for c in ladder]
    lookup = [{c: k for k, c in enumerate(cands)} for cands in ladder]
    noise = [ProposedDistribution(tuple((a, y, 1.0 / len(c)) for a, y in c)) for c in ladder]
    qbar = [np.zeros(len(c)) for c in ladder]
    visits = [np.zeros(len(c)) for c in ladder]
    terminal = cmdp.terminal
    backup = q_b.backup_actions()

    critic: list[_Hull | None] = [None] * cmdp.n_states

    def critic_hull(s):
        h = critic[s]
        if h is None:
            h = critic[s] = _Hull.build(cand_a[s], cand_y[s], qbar[s])
        return h

    actor = [critic_hull(s) for s in range(cmdp.n_states)]
    lengths: deque[int] = deque(maxlen=cfg.length_window)
    log = []
    n_updates = 0
    for ep in range(cfg.episodes):
        if ep % cfg.policy_delay == 0:
            actor = [critic_hull(s) for s in range(cmdp.n_states)]
        switch = hybrid_schedule(ep, cfg.hybrid_delay, lengths, rng)
        s, x = cmdp.initial_state, float(cfg.x0)
        disc_r = disc_c = 0.0
        gr = gc = 1.0
        clamps = 0
        lam_sum = 0.0
        t = 0
        while t < horizon and not terminal[s]:
            if t > switch:
                prop = ProposedDistribution.dirac(int(backup[s]), x)
            else:
                greedy = ProposedDistribution(tuple(actor[s].atoms(x / g_c)))
                prop = mix_with_noise(greedy, noise[s], cfg.xi)
            out = shield(prop, (s, x), q_b)
            if cfg.check_shielded and not is_shielded(out, (s, x), q_b):
                raise AssertionError(f"unshielded action distribution at {(s, x)}: {out}")
            probs = np.array([p for _, _, p in out.atoms])
            a, y, _ = out.atoms[int(rng.choice(len(probs), p=probs / probs.sum()))]
            s2 = int(np.minimum(np.searchsorted(np.cumsum(cmdp.transition[s, a]), rng.random(),
                                                side="right"), cmdp.n_states - 1))
            x2, clamped = env.next_risk(s, a, y, s2)
            x2 = float(x2)
            clamps += int(clamped)
            lam_sum += out.lam
            r = float(cmdp.reward[s, a])
            disc_r += gr * r
            disc_c += gc * float(cmdp.cost[s, a])
            k = lookup[s].get((a, y))
            if k is not None:
                nxt = 0.0 if terminal[s2] else critic_hull(s2).value(x2 / g_c)
                visits[s][k] += 1
                step = cfg.alpha / visits[s][k] ** cfg.alpha_power
                qbar[s][k] += step * (r + g_r * nxt - qbar[s][k])
                critic[s] = None
                n_updates += 1
            gr *= g_r
            gc *= g_c
            s, x = s2, x2
            t += 1
        lengths.append(t)
        log.append((ep, t, disc_r, disc_c, clamps, lam_sum / t if t else 0.0, switch))
    hulls = [critic_hull(s) for s in range(cmdp.n_states)]
    meta = {"episodes": cfg.episodes, "updates": n_updates, "x0": cfg.x0}
    return _pack(hulls, g_c, env.c_max_bound, cfg.risk_bins, log, meta)
