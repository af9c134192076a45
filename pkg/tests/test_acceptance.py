"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines, or execute this
file directly.
"""
import filecmp
import time

import numpy as np
import pytest

from probshield.augment import augment, risk_bound
from probshield.cli import main as cli_main
from probshield.cmdp import make_chain, make_loop, make_m1, make_random
from probshield.critic import (CostLearnConfig, bellman_residual, cost_value_iteration, perturb,
                               q_learning_cost)
from probshield.oracle import brute_force_oracle, enumerate_policies, evaluate_all
from probshield.policies import BackupProposer, FixedProposer, Shielded, Unshielded, simulate_aug
from probshield.shield import ETA, ProposedDistribution, is_shielded, shield
from probshield.train import TrainConfig, shielded_q_train
from probshield.verify import (check_noise, check_preservation, check_safety, conservative_x0,
                               mc_estimate)

N_MC = 100_000
LINES: list[str] = []  # echoed in the pytest terminal summary


def report(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    LINES.append(line)
    print(line, flush=True)


def rng(*key):
    return np.random.default_rng(list(key))


# --------------------------------------------------------------------------


def test_criterion_1_m1_golden():
    t0 = time.perf_counter()
    m1 = make_m1()
    res = brute_force_oracle(m1, 0.5)
    q = cost_value_iteration(m1)
    env = augment(m1, q)
    pol = shielded_q_train(env, q, TrainConfig(episodes=50_000, x0=0.5), rng(1, 1))
    cost, reward = mc_estimate(env, Shielded(pol, q), N_MC, None, rng(1, 2), x0=0.5)
    elapsed = time.perf_counter() - t0
    ok = (res.r_star == 0.5 and res.c_star == 0.5 and reward.mean >= 0.48 and cost.mean <= 0.52
          and elapsed < 60)
    report(1, ok, f"R*={res.r_star} C*={res.c_star}; trained reward {reward.mean:.4f}, "
                  f"cost {cost.mean:.4f}; {elapsed:.1f}s")
    assert ok


def _fuzz_tables():
    tables = [cost_value_iteration(make_m1())]
    for seed in range(20):
        exact = cost_value_iteration(make_random(seed, n_states=5, n_actions=3))
        tables += [perturb(exact, d, rng(2, seed)) for d in (0.0, 0.05, 0.2)]
    return tables


def test_criterion_2_shield_soundness():
    tables = _fuzz_tables()
    gen = rng(2)
    n, bad, lam_bad, identity_bad, n_pass = 100_000, 0, 0, 0, 0
    for _ in range(n):
        q = tables[gen.integers(len(tables))]
        S = q.values.shape[0]
        s = int(gen.integers(S))
        n_act = int(np.isfinite(q.values[s]).sum())
        k = int(gen.integers(1, 5))
        w = gen.random(k) + 1e-3
        w = w / w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        acts = gen.integers(n_act, size=k)
        scale = 1.0 / (1.0 - q.gamma_c) if q.gamma_c < 1 else 2.0
        ys = gen.uniform(-scale, scale, size=k)
        if gen.random() < 0.3:  # already admissible proposals
            ys = q.values[s, acts] + gen.random(k) * scale
        prop = ProposedDistribution(tuple(zip(acts.tolist(), ys.tolist(), w.tolist())))
        t = q.gamma_c * sum(p * max(y, q.values[s, a]) for a, y, p in prop.atoms)
        roll = gen.random()
        if roll < 0.1:
            x = float(q.floors()[s])
        elif roll < 0.2:
            x = float(t)
        elif roll < 0.25:
            x = 0.0
        else:
            x = float(gen.uniform(-scale, scale))
        out = shield(prop, (s, x), q)
        if not is_shielded(out, (s, x), q, 2 * ETA):
            bad += 1
        if not 0.0 <= out.lam <= 1.0:
            lam_bad += 1
        if out.case == "pass_through":
            n_pass += 1
            admissible = all(y >= q.values[s, a] for a, y, _ in prop.atoms)
            again = shield(ProposedDistribution(out.atoms), (s, x), q)
            if again.atoms != out.atoms or again.lam != 0.0 or (admissible and out.atoms != prop.atoms):
                identity_bad += 1
    ok = bad == 0 and lam_bad == 0 and identity_bad == 0
    report(2, ok, f"{n} triples: {bad} unshielded, {lam_bad} lambda out of range, "
                  f"{identity_bad}/{n_pass} pass-through identity failures")
    assert ok


def test_criterion_3_safety_under_critic_error():
    violations = []
    cells = 0
    worst = -np.inf
    for env_seed in range(20):
        cmdp = make_random(env_seed)
        exact = cost_value_iteration(cmdp)
        for delta in (0.0, 0.05, 0.2):
            for seed in range(3):
                q = perturb(exact, delta, rng(3, env_seed, seed))
                env = augment(cmdp, q)
                measured = q.sup_distance(exact)
                x0 = 0.25 + 0.5 * seed
                pol = shielded_q_train(env, q, TrainConfig(episodes=600, x0=x0), rng(3, env_seed, seed, 1))
                rep = check_safety(env, Shielded(pol, q), x0, N_MC, rng(3, env_seed, seed, 2), measured)
                cells += 1
                worst = max(worst, rep.estimate.mean - rep.bound)
                if not rep.passed:
                    violations.append((env_seed, delta, seed, rep.estimate.mean, rep.bound))
    ok = not violations
    report(3, ok, f"{cells} cells, {len(violations)} violations; max(mean - bound) = {worst:.4g}"
                  + (f"; {violations}" if violations else ""))
    assert ok


def _preservation_fixtures():
    m1 = make_m1()
    q1 = cost_value_iteration(m1)
    flip = Shielded(FixedProposer({0: [(0, 1.0, 0.5), (1, 0.0, 0.5)]}, 4), q1)
    env1 = augment(m1, q1)
    yield "m1-flipping", env1, flip, 0.5
    yield "m1-trained", env1, Shielded(shielded_q_train(env1, q1, TrainConfig(episodes=2000, x0=0.3),
                                                        rng(4, 0)), q1), 0.3
    r7 = make_random(7)
    q7 = perturb(cost_value_iteration(r7), 0.05, rng(4, 7))
    env7 = augment(r7, q7)
    yield "random7-trained", env7, Shielded(shielded_q_train(env7, q7, TrainConfig(episodes=1000, x0=0.6),
                                                             rng(4, 1)), q7), 0.6
    yield "random7-backup", env7, Shielded(BackupProposer(q7), q7), 0.6
    loop = make_loop((0.0, 1.0), rewards=(0.0, 1.0), gamma=0.9)
    ql = cost_value_iteration(loop)
    envl = augment(loop, ql)
    yield "loop-trained", envl, Shielded(shielded_q_train(envl, ql, TrainConfig(episodes=300, x0=2.0),
                                                          rng(4, 2)), ql), 2.0
    chain = make_chain(5, rewards=1.0, costs=[0.2, 0.0, 0.3, 0.1], gamma=0.9)
    qc = cost_value_iteration(chain)
    envc = augment(chain, qc, "cost_relative")
    yield "chain-cost-relative", envc, Shielded(shielded_q_train(envc, qc, TrainConfig(episodes=300, x0=0.5),
                                                                 rng(4, 3)), qc), 0.5


def test_criterion_4_projection_preserves_returns():
    failures, names = [], []
    for k, (name, env, pol, x0) in enumerate(_preservation_fixtures()):
        rep = check_preservation(env, pol, x0, N_MC, rng(4, 100 + k))
        names.append(name)
        if not rep.passed:
            failures.append((name, rep.params))
    ok = not failures
    report(4, ok, f"{len(names)} fixtures ({', '.join(names)}); {len(failures)} mismatches"
                  + (f": {failures}" if failures else ""))
    assert ok


def test_criterion_5_noise_slack():
    cells, failures = 0, []
    loop = make_loop((0.0, 1.0), rewards=(0.0, 1.0), gamma=0.9)
    ql = cost_value_iteration(loop)
    envl = augment(loop, ql)
    base_l = Shielded(shielded_q_train(envl, ql, TrainConfig(episodes=300, x0=2.0), rng(5, 0)), ql)
    worst_l = Unshielded(FixedProposer([[(1, risk_bound(loop), 1.0)]]))
    m1 = make_m1()
    q1 = cost_value_iteration(m1)
    env1 = augment(m1, q1)
    base_1 = Shielded(shielded_q_train(env1, q1, TrainConfig(episodes=2000, x0=0.5), rng(5, 1)), q1)
    worst_1 = Unshielded(FixedProposer({0: [(0, 2.0, 1.0)]}, 4))
    for name, env, base, noise, x0 in (("loop", envl, base_l, worst_l, 2.0), ("m1", env1, base_1, worst_1, 0.5)):
        for j, xi in enumerate((0.01, 0.1, 0.5)):
            rep = check_noise(env, base, noise, xi, x0, N_MC, rng(5, 10 + j, len(name)))
            cells += 1
            if not rep.passed:
                failures.append((name, xi, rep.estimate.mean, rep.bound))
    ok = not failures
    report(5, ok, f"{cells} cells (loop gamma_c=0.9; M1 gamma_c=1 has an unbounded slack), "
                  f"{len(failures)} failures" + (f": {failures}" if failures else ""))
    assert ok


def _trend_fixtures():
    yield "m1", make_m1(gamma=0.8, budget=0.8), 5000
    yield "chain-shortcut", make_chain(4, rewards=1.0, costs=0.0, gamma=0.8, shortcut=(4.0, 1.0),
                                       budget=0.7), 5000
    det = make_random(6, n_states=4, n_actions=2, deterministic=True, gamma=0.8)
    R, C = evaluate_all(det, enumerate_policies(det))
    d = float(C.min() + 0.5 * (C[np.argmax(R)] - C.min()))
    yield "random6-deterministic", det.with_budget(d), 20_000


def test_criterion_6_asymptotic_optimality_trend():
    ok = True
    parts = []
    for k, (name, cmdp, episodes) in enumerate(_trend_fixtures()):
        d = cmdp.budget_d
        exact = cost_value_iteration(cmdp)
        R, _ = evaluate_all(cmdp, enumerate_policies(cmdp))
        r_range = float(R.max() - R.min())
        r_star = brute_force_oracle(cmdp, d).r_star
        gaps = []
        for delta in (0.2, 0.1, 0.05, 0.0):
            q = perturb(exact, delta, rng(6, k))
            env = augment(cmdp, q)
            measured = q.sup_distance(exact)
            x0 = max(conservative_x0(d, measured, cmdp.gamma_c), -env.c_max_bound)
            pol = shielded_q_train(env, q, TrainConfig(episodes=episodes, x0=x0), rng(6, k, 1))
            _, reward = mc_estimate(env, Shielded(pol, q), N_MC, None, rng(6, k, 2), x0=x0)
            gaps.append((r_star - reward.mean, reward.ci95))
        monotone = all(g2 <= g1 + c1 + c2 for (g1, c1), (g2, c2) in zip(gaps, gaps[1:]))
        final = gaps[-1][0] <= 0.02 * r_range
        ok &= monotone and final
        parts.append(f"{name} gaps " + "/".join(f"{g:.3f}" for g, _ in gaps)
                     + f" (limit {0.02 * r_range:.3f})")
    report(6, ok, "; ".join(parts))
    assert ok


def test_criterion_7_backup_critic_convergence():
    fixtures = [make_m1(), make_m1(gamma=0.8), make_chain(), make_chain(4, shortcut=(4.0, 1.0), gamma=0.8),
                make_loop(), make_loop((0.0, 1.0), gamma=0.9)]
    fixtures += [make_random(s) for s in range(20)]
    fixtures += [make_random(s, deterministic=True) for s in range(5)]
    residual = max(bellman_residual(c, cost_value_iteration(c)) for c in fixtures)
    m1 = make_m1()
    exact = cost_value_iteration(m1)
    dists = [q_learning_cost(m1, CostLearnConfig(episodes=20_000), rng(7, s), exact).meta["sup_dist"]
             for s in range(3)]
    ok = residual < 1e-10 and all(d <= 0.05 for d in dists)
    report(7, ok, f"max Bellman residual {residual:.2e} over {len(fixtures)} fixtures; "
                  f"M1 Q-learning sup distances {', '.join(f'{d:.2e}' for d in dists)}")
    assert ok


def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[env]\nname = random\nseed = 3\n\n[critic]\nmode = perturbed(0.05)\n\n"
                   "[run]\nseeds = 0, 1\nn_rollouts = 5000\nx0 = 0.5\n\n[train]\nepisodes = 300\n\n"
                   "[sweep]\ndelta_b = 0, 0.05\nxi = 0, 0.1\n")
    codes = []
    for run in ("a", "b"):
        for cmd in ("solve", "train", "verify", "sweep"):
            codes.append(cli_main([cmd, str(cfg), "--out", str(tmp_path / run / cmd)]))
    mismatched = []
    n_files = 0
    for cmd in ("solve", "train", "verify", "sweep"):
        a, b = tmp_path / "a" / cmd, tmp_path / "b" / cmd
        names = sorted(p.name for p in a.iterdir())
        n_files += len(names)
        _, mism, errs = filecmp.cmpfiles(a, b, names, shallow=False)
        mismatched += mism + errs
    ok = not mismatched and all(c in (0, 1) for c in codes) and n_files > 0
    report(8, ok, f"{n_files} output files compared across two runs, {len(mismatched)} differ")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-s", "-q"]))
