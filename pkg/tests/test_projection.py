import numpy as np
import pytest

from probshield.augment import augment
from probshield.cmdp import make_chain, make_m1, make_random, rollout, simulate
from probshield.critic import cost_value_iteration
from probshield.policies import BackupProposer, FixedProposer, Shielded
from probshield.projection import project
from probshield.verify import check_preservation


def flipping(q):
    return Shielded(FixedProposer({0: [(0, 1.0, 0.5), (1, 0.0, 0.5)]}, 4), q)


def test_m1_flipping_projection(m1, q_m1):
    pol = project(flipping(q_m1), q_m1, m1, 0.5)
    R, C = simulate(m1, pol, 100_000, None, np.random.default_rng(0))
    assert R.mean() == pytest.approx(0.5, abs=0.01)
    assert np.array_equal(R, C)


def test_memory_follows_rule(m1, q_m1, rng):
    pol = project(flipping(q_m1), q_m1, m1, 0.5)
    traj = rollout(m1, pol, None, rng)
    assert pol.memory[0] == 0.0  # x' = y - Q(s, a) + Q_b(s') is zero on both branches
    assert len(traj) == 2


def test_backup_projection_is_backup_policy():
    cmdp = make_random(2)
    q = cost_value_iteration(cmdp)
    pol = project(Shielded(BackupProposer(q), q), q, cmdp, 0.7)
    states = np.arange(cmdp.n_states - 1)
    pol.start(len(states))
    for _ in range(3):
        a = pol.act_batch(states, np.arange(len(states)), np.random.default_rng(0))
        assert np.array_equal(a, q.backup_actions()[states])
        pol.observe_batch(np.arange(len(states)), states, a, states)


def test_single_step_environment():
    chain = make_chain(2, rewards=[1.0], costs=[0.3])
    q = cost_value_iteration(chain)
    env = augment(chain, q)
    pol = Shielded(FixedProposer({0: [(0, 0.3, 1.0)]}, 2), q)
    rep = check_preservation(env, pol, 0.3, 1000, np.random.default_rng(0))
    assert rep.passed and rep.estimate.mean == 0.0


def test_coupled_streams_give_identical_paths(m1, q_m1, env_m1):
    # both simulators draw (action, successor) in the same order, so sharing a
    # seed couples the augmented run and its projection path by path
    from probshield.policies import simulate_aug
    aug = simulate_aug(env_m1, flipping(q_m1), 0.5, 5000, None, np.random.default_rng(3))
    R, C = simulate(m1, project(flipping(q_m1), q_m1, m1, 0.5), 5000, None, np.random.default_rng(3))
    assert np.array_equal(aug.reward, R) and np.array_equal(aug.cost, C)
