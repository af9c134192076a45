import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probshield.cmdp import make_chain, make_loop, make_m1, make_random
from probshield.critic import (CostLearnConfig, QTable, backup_policy, bellman_residual,
                               blended_target, cost_value_iteration, perturb, q_learning_cost)
from probshield.oracle import enumerate_policies

FIXTURES = [make_m1(), make_m1(gamma=0.8), make_chain(), make_chain(4, shortcut=(3.0, 1.0), gamma=0.8),
            make_loop((1.0, 0.2), gamma=0.9)] + [make_random(s) for s in range(4)]


def min_cost_by_enumeration(cmdp):
    """Q*(s, a) = c(s, a) + gamma * sum_s' P(s'|s,a) min_pi V_c^pi(s'), by brute force."""
    S = cmdp.n_states
    best = np.full(S, np.inf)
    for pol in enumerate_policies(cmdp):
        P = cmdp.transition[np.arange(S), pol]
        c = cmdp.cost[np.arange(S), pol]
        if cmdp.gamma_c < 1:
            v = np.linalg.solve(np.eye(S) - cmdp.gamma_c * P, c)
        else:
            v = np.zeros(S)
            for _ in range(cmdp.horizon_cap):
                v = c + P @ v
        best = np.minimum(best, v)
    q = cmdp.cost + cmdp.gamma_c * cmdp.transition @ best
    return np.where(cmdp.mask, q, np.inf)


def test_m1_qstar(q_m1):
    assert q_m1.values[0, 0] == 1.0
    assert q_m1.values[0, 1] == 0.0
    assert backup_policy(q_m1, 0) == (1, 0.0)
    assert q_m1.provenance == "exact"


@pytest.mark.parametrize("cmdp", FIXTURES, ids=lambda c: c.name)
def test_value_iteration_matches_enumeration(cmdp):
    q = cost_value_iteration(cmdp)
    ref = min_cost_by_enumeration(cmdp)
    m = cmdp.mask & ~cmdp.terminal[:, None]
    np.testing.assert_allclose(q.values[m], ref[m], atol=1e-9)
    assert bellman_residual(cmdp, q) < 1e-10


def test_backup_ties_take_lowest_index():
    loop = make_loop((0.5, 0.5), gamma=0.9)
    q = cost_value_iteration(loop)
    assert backup_policy(q, 0)[0] == 0


def test_blended_target():
    assert blended_target(1.0, 0.5, 2.0, 4.0, 1.0) == 1.0 + 0.5 * 2.0
    assert blended_target(1.0, 0.5, 2.0, 4.0, 0.0) == 1.0 + 0.5 * 3.0
    assert blended_target(0.0, 1.0, 2.0, 4.0, 0.75) == pytest.approx(0.75 * 2 + 0.125 * 6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 1000), delta=st.floats(0.0, 1.0))
def test_perturb_stays_within_delta(seed, delta):
    cmdp = make_random(seed % 7)
    q = cost_value_iteration(cmdp)
    p = perturb(q, delta, np.random.default_rng(seed))
    assert p.sup_distance(q) <= delta + 1e-15
    m = q.mask
    assert np.all(p.values[m] >= 0)
    assert np.all(p.values[cmdp.terminal][m[cmdp.terminal]] == 0)
    assert np.array_equal(np.isfinite(p.values), m)


def test_perturb_zero_is_identity(q_m1, rng):
    p = perturb(q_m1, 0.0, rng)
    assert np.array_equal(p.values, q_m1.values)
    assert p.provenance == "perturbed(0)"


def test_csv_roundtrip(q_m1, m1):
    back = QTable.from_csv(q_m1.to_csv(), m1)
    assert np.array_equal(back.values, q_m1.values)
    assert q_m1.to_csv().splitlines()[0] == "s,a,value"


def test_q_learning_m1_converges(m1, q_m1):
    q = q_learning_cost(m1, CostLearnConfig(episodes=2000), np.random.default_rng(0), q_m1)
    assert q.provenance == "learned"
    assert q.meta["sup_dist"] <= 0.05


def test_config_validation():
    with pytest.raises(ValueError):
        CostLearnConfig(alpha=0.0)
    with pytest.raises(ValueError):
        CostLearnConfig(beta=1.5)
