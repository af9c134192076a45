"""Monte Carlo estimates and checks of the shielding safety/optimality bounds."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .augment import AugEnv
from .cmdp import Cmdp, simulate
from .oracle import brute_force_oracle
from .policies import NoisyMixture, audit_shielded, simulate_aug
from .projection import project

Z95 = 1.96


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two samples")

    @property
    def ci95(self) -> float:
        return Z95 * self.std_error

    @classmethod
    def of(cls, samples: np.ndarray) -> "McEstimate":
        samples = np.asarray(samples, dtype=float)
        if samples.size < 2:
            raise ValueError("need at least two samples")
        return cls(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size)),
                   int(samples.size))


@dataclass(frozen=True)
class CheckReport:
    check: str
    bound: float
    estimate: McEstimate
    margin: float
    passed: bool
    params: dict = field(default_factory=dict)
    note: str = ""

    def to_json(self) -> str:
        def num(v):
            return v if not isinstance(v, float) or math.isfinite(v) else None
        row = {"check": self.check, "bound": num(self.bound), "mean": self.estimate.mean,
               "ci95": self.estimate.ci95, "margin": num(self.margin), "pass": self.passed,
               "params": {k: num(v) for k, v in self.params.items()}}
        if self.note:
            row["note"] = self.note
        return json.dumps(row, sort_keys=False)


REPORT_HEADER = json.dumps({"schema": "check_report/1",
                            "columns": ["check", "bound", "mean", "ci95", "margin", "pass", "params"]})


def summary_table(reports) -> str:
    lines = [f"{'check':<14}{'bound':>12}{'mean':>12}{'ci95':>10}  result"]
    for r in reports:
        lines.append(f"{r.check:<14}{r.bound:>12.5g}{r.estimate.mean:>12.5g}{r.estimate.ci95:>10.3g}  "
                     f"{'PASS' if r.passed else 'FAIL'}{'  ' + r.note if r.note else ''}")
    return "\n".join(lines)


def mc_estimate(env, policy, n: int, horizon: int | None, rng: np.random.Generator,
                x0: float | None = None) -> tuple[McEstimate, McEstimate]:
    """``(cost, reward)`` estimates. ``env`` is a base Cmdp (memoryless or
    projected ``policy``) or an AugEnv (augmented sampler started at ``x0``)."""
    if n < 2:
        raise ValueError("need at least two rollouts")
    if isinstance(env, AugEnv):
        if x0 is None:
            raise ValueError("augmented estimates need an initial risk x0")
        run = simulate_aug(env, policy, x0, n, horizon, rng)
        R, C = run.reward, run.cost
    else:
        R, C = simulate(env, policy, n, horizon, rng)
    return McEstimate.of(C), McEstimate.of(R)


def _slack(delta_b: float, gamma_c: float, k: float) -> float:
    if delta_b == 0:
        return 0.0
    return math.inf if gamma_c >= 1.0 else k * delta_b / (1.0 - gamma_c)


def safety_bound(x0: float, floor0: float, gamma_c: float, delta_b: float) -> tuple[float, str]:
    """Proved cost bound from ``(s0, x0)`` and the branch it came from."""
    if x0 >= floor0:
        return x0 / gamma_c + _slack(delta_b, gamma_c, 2.0), "budget"
    return floor0 / gamma_c + _slack(delta_b, gamma_c, 3.0), "low_budget"


def check_safety(env: AugEnv, policy, x0: float, n: int, rng: np.random.Generator,
                 delta_b: float = 0.0, horizon: int | None = None,
                 n_audit: int = 256) -> CheckReport:
    """Cost of a shielded augmented policy against the proved bound.

    The shielded precondition is audited on sampled paths first; a policy that
    fails it is reported as failing without a bound comparison.
    """
    g = env.q.gamma_c
    s0 = env.cmdp.initial_state
    floor0 = float(env.floors[s0])
    bound, branch = safety_bound(x0, floor0, g, delta_b)
    short_form = x0 + _slack(delta_b, g, 2.0)
    params = {"gamma_c": g, "delta_b": delta_b, "x0": x0, "xi": 0.0,
              "branch": branch, "x0_ge_floor_over_gamma": bool(x0 >= floor0 / g),
              "short_form_bound": short_form}
    ok, n_checked = audit_shielded(env, policy, x0, n_audit, rng, horizon)
    params["audited_states"] = n_checked
    if not ok:
        est = McEstimate(math.nan, math.nan, max(n, 2))
        return CheckReport("safety", bound, est, 0.0, False, params, "is_shielded precondition failed")
    cost, _ = mc_estimate(env, policy, n, horizon, rng, x0)
    passed = cost.mean <= bound + cost.ci95
    params["short_form_pass"] = bool(cost.mean <= short_form + cost.ci95)
    return CheckReport("safety", bound, cost, cost.ci95, bool(passed), params)


def check_preservation(env: AugEnv, aug_policy, x0: float, n: int, rng: np.random.Generator,
                       horizon: int | None = None) -> CheckReport:
    """Augmented rollouts and their base-CMDP projection agree in cost and reward."""
    c_aug, r_aug = mc_estimate(env, aug_policy, n, horizon, rng, x0)
    proj = project(aug_policy, env.q, env.cmdp, x0, env.rule)
    c_pro, r_pro = mc_estimate(env.cmdp, proj, n, horizon, rng)
    dc, dr = abs(c_pro.mean - c_aug.mean), abs(r_pro.mean - r_aug.mean)
    mc, mr = c_aug.ci95 + c_pro.ci95, r_aug.ci95 + r_pro.ci95
    passed = dc <= mc and dr <= mr
    params = {"gamma_c": env.q.gamma_c, "x0": x0, "cost_aug": c_aug.mean, "cost_proj": c_pro.mean,
              "reward_aug": r_aug.mean, "reward_proj": r_pro.mean, "reward_diff": dr,
              "reward_margin": mr}
    diff = McEstimate(dc, math.hypot(c_aug.std_error, c_pro.std_error), n)
    return CheckReport("preservation", 0.0, diff, mc, bool(passed), params)


def noise_slack(xi: float, c_max: float, gamma_c: float) -> float:
    if xi == 0:
        return 0.0
    if gamma_c >= 1.0:
        return math.inf
    return xi * c_max / ((1.0 - gamma_c) * (1.0 - (1.0 - xi) * gamma_c))


def check_noise(env: AugEnv, base, noise, xi: float, x0: float, n: int,
                rng: np.random.Generator, horizon: int | None = None) -> CheckReport:
    """Cost of ``(1 - xi) * base + xi * noise`` against the base cost plus the noise slack."""
    mix = NoisyMixture(base, noise, xi)
    c_base, _ = mc_estimate(env, base, n, horizon, rng, x0)
    c_mix, _ = mc_estimate(env, mix, n, horizon, rng, x0)
    slack = noise_slack(xi, env.cmdp.c_max, env.q.gamma_c)
    bound = c_base.mean + slack
    margin = c_base.ci95 + c_mix.ci95
    params = {"gamma_c": env.q.gamma_c, "x0": x0, "xi": xi, "slack": slack, "base_cost": c_base.mean}
    return CheckReport("noise", bound, c_mix, margin, bool(c_mix.mean <= bound + margin), params)


def optimality_cost_bound(d: float, delta_b: float, gamma_c: float) -> float:
    """``d + 2 delta + 2 delta gamma / (1 - gamma)``, i.e. ``d + 2 delta / (1 - gamma)``."""
    return d + _slack(delta_b, gamma_c, 2.0)


def conservative_x0(d: float, delta_b: float, gamma_c: float) -> float:
    """Initial risk whose safety bound is exactly ``d``: ``gamma_c d - 2 delta gamma_c / (1 - gamma_c)``."""
    return gamma_c * d - gamma_c * _slack(delta_b, gamma_c, 2.0)


def check_optimality(env: AugEnv, policy, d: float, delta_b: float, x0: float, n: int,
                     rng: np.random.Generator, tol: float = 0.02,
                     horizon: int | None = None) -> CheckReport:
    """Trained reward close to the brute-force optimum at budget ``d`` while the
    cost stays within ``d`` plus the critic-error slack."""
    cmdp: Cmdp = env.cmdp
    if not cmdp.is_deterministic:
        raise ValueError("optimality check needs a deterministic CMDP")
    oracle = brute_force_oracle(cmdp, d)
    cost, reward = mc_estimate(env, policy, n, horizon, rng, x0)
    cbound = optimality_cost_bound(d, delta_b, env.q.gamma_c)
    reward_ok = reward.mean >= oracle.r_star - tol
    cost_ok = cost.mean <= cbound + cost.ci95
    params = {"gamma_c": env.q.gamma_c, "delta_b": delta_b, "x0": x0, "d": d,
              "r_star": oracle.r_star, "reward": reward.mean, "reward_ci95": reward.ci95,
              "gap": oracle.r_star - reward.mean, "tol": tol, "cost_ok": bool(cost_ok),
              "reward_ok": bool(reward_ok)}
    return CheckReport("optimality", cbound, cost, cost.ci95, bool(reward_ok and cost_ok), params)
