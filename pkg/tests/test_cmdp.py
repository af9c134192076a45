import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probshield.cmdp import (MemorylessPolicy, default_horizon, discounted_sums, env_factory,
                             exact_eval, load_env_config, make_chain, make_loop, make_m1,
                             make_random, rollout, simulate, validate)


def test_builtin_environments_validate():
    envs = [make_m1(), make_m1(gamma=0.8), make_chain(), make_chain(4, shortcut=(3.0, 1.0), gamma=0.8),
            make_loop(), make_loop((0.0, 1.0), gamma=0.5)]
    envs += [make_random(seed) for seed in range(5)]
    envs += [make_random(seed, deterministic=True) for seed in range(5)]
    for env in envs:
        assert validate(env) == [], env.name


def test_m1_layout(m1):
    assert m1.n_states == 4
    assert list(m1.n_actions) == [2, 1, 1, 1]
    assert m1.reward[0, 0] == 1.0 and m1.cost[0, 0] == 1.0
    assert m1.reward[0, 1] == 0.0 and m1.cost[0, 1] == 0.0
    assert m1.terminal.tolist() == [False, False, False, True]
    assert m1.is_deterministic and m1.is_episodic()


def test_m1_exact_values(m1):
    always_a0 = MemorylessPolicy.deterministic(m1, [0, 0, 0, 0])
    always_a1 = MemorylessPolicy.deterministic(m1, [1, 0, 0, 0])
    half = MemorylessPolicy(np.array([[0.5, 0.5], [1, 0], [1, 0], [1, 0]]))
    assert exact_eval(m1, always_a0) == (1.0, 1.0)
    assert exact_eval(m1, always_a1) == (0.0, 0.0)
    assert exact_eval(m1, half) == (0.5, 0.5)


def test_validate_reports_broken_rows(m1):
    from dataclasses import replace
    P = np.array(m1.transition)
    P[0, 0, 1] = 0.9
    assert any("sums to" in p for p in validate(replace(m1, transition=P)))
    C = np.array(m1.cost)
    C[0, 0] = -1
    assert any("negative cost" in p for p in validate(replace(m1, cost=C)))


def test_random_requires_discount():
    with pytest.raises(ValueError):
        make_random(0, gamma=1.0)


def test_loop_exact_cost():
    loop = make_loop((1.0,), gamma=0.9)
    r, c = exact_eval(loop, MemorylessPolicy.uniform(loop))
    assert c == pytest.approx(10.0)
    assert r == 0.0


def test_default_horizon_tail():
    h = default_horizon(0.9)
    assert 0.9 ** h <= 1e-6 * 0.1 < 0.9 ** (h - 1)


def test_env_config_roundtrip():
    cmdp = load_env_config("[env]\nname = chain\nn = 4\nshortcut = 3.0, 1.0\ngamma = 0.8\n")
    assert cmdp.name == "chain" and cmdp.n_states == 4 and cmdp.n_actions[0] == 2
    assert env_factory("random", seed=3).fingerprint() == make_random(3).fingerprint()
    with pytest.raises(ValueError):
        env_factory("nope")


def test_rollout_on_m1_and_jsonl(m1, rng):
    pol = MemorylessPolicy.deterministic(m1, [0, 0, 0, 0])
    traj = rollout(m1, pol, None, rng)
    assert traj.terminated and len(traj) == 2 and traj.final_state == 3
    assert discounted_sums(traj, 1.0, 1.0) == (1.0, 1.0)
    lines = traj.to_jsonl().splitlines()
    assert json.loads(lines[0])["schema"].startswith("trajectory/")
    assert len(lines) == 3
    with pytest.raises(ValueError):
        rollout(m1, pol, 5, rng)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_simulate_matches_exact_eval(seed):
    cmdp = make_random(seed % 50, n_states=4, n_actions=2)
    pol = MemorylessPolicy.random(cmdp, np.random.default_rng(seed))
    R, C = simulate(cmdp, pol, 20_000, None, np.random.default_rng(seed + 1))
    r, c = exact_eval(cmdp, pol)
    # six standard errors keeps the false-alarm rate negligible across examples
    assert abs(R.mean() - r) <= 6 * R.std() / np.sqrt(R.size) + 1e-9
    assert abs(C.mean() - c) <= 6 * C.std() / np.sqrt(C.size) + 1e-9


def test_fingerprint_depends_on_content():
    assert make_m1().fingerprint() == make_m1().fingerprint()
    assert make_m1().fingerprint() != make_m1(budget=0.25).fingerprint()
