import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from probshield.cmdp import make_random
from probshield.critic import cost_value_iteration, perturb
from probshield.shield import (ETA, ProposedDistribution, decision_record, is_shielded,
                               mix_with_noise, shield, shield_batch)

HALF = ProposedDistribution(((0, 1.0, 0.5), (1, 0.0, 0.5)))


def test_pass_through_on_m1(q_m1):
    out = shield(HALF, (0, 0.5), q_m1)
    assert out.case == "pass_through" and out.lam == 0.0
    assert out.atoms == HALF.atoms


def test_mixed_on_m1(q_m1):
    out = shield(HALF, (0, 0.25), q_m1)
    assert out.case == "mixed"
    assert out.lam == pytest.approx(0.5, abs=1e-7)
    marg = dict(((a, y), p) for a, y, p in out.atoms)
    assert marg[(0, 1.0)] == pytest.approx(0.25, abs=1e-7)
    assert marg[(1, 0.0)] == pytest.approx(0.75, abs=1e-7)  # proposal atom merged with backup
    assert out.expected_risk() == pytest.approx(0.25, abs=1e-7)


def test_zero_budget_gives_pure_backup(q_m1):
    out = shield(HALF, (0, 0.0), q_m1)
    assert out.lam == 1.0 and out.atoms == ((1, 0.0, 1.0),)


def test_fallback_below_floor():
    cmdp = make_random(4)
    q = cost_value_iteration(cmdp)
    s = int(np.argmax(q.floors()))
    floor = q.floors()[s]
    assume_ok = floor > 0
    assert assume_ok
    out = shield(ProposedDistribution.dirac(0, 5.0), (s, floor / 2), q)
    assert out.case == "fallback" and out.lam == 1.0
    assert out.atoms == ((int(q.backup_actions()[s]), floor / 2 / q.gamma_c, 1.0),)


def test_is_shielded_examples(q_m1):
    assert not is_shielded([(0, 0.5, 1.0)], (0, 1.0), q_m1)
    assert is_shielded([(1, 0.0, 1.0)], (0, 0.0), q_m1)
    assert not is_shielded([(0, 1.0, 1.0)], (0, 0.5), q_m1)  # over budget


def test_empty_and_invalid_proposals():
    with pytest.raises(ValueError):
        ProposedDistribution(())
    with pytest.raises(ValueError):
        ProposedDistribution(((0, 1.0, 0.7),))


def test_mix_with_noise_examples():
    a = ProposedDistribution.dirac(0, 1.0)
    b = ProposedDistribution.dirac(1, 0.0)
    assert mix_with_noise(a, b, 0.0) is a
    assert mix_with_noise(a, b, 1.0) is b
    assert mix_with_noise(a, b, 0.5).atoms == ((0, 1.0, 0.5), (1, 0.0, 0.5))
    assert mix_with_noise(a, a, 0.3).atoms == ((0, 1.0, 1.0),)
    with pytest.raises(ValueError):
        mix_with_noise(a, b, 1.5)


def test_decision_record(q_m1):
    rec = json.loads(decision_record((0, 0.25), shield(HALF, (0, 0.25), q_m1)))
    assert rec["case"] == "mixed" and rec["s"] == 0 and len(rec["atoms"]) == 2


# --------------------------------------------------------------------------
# fuzzed properties

QTABLES = {}


def qtable(seed, delta):
    key = (seed, delta)
    if key not in QTABLES:
        cmdp = make_random(seed, n_states=4, n_actions=3)
        QTABLES[key] = perturb(cost_value_iteration(cmdp), delta, np.random.default_rng(seed))
    return QTABLES[key]


@st.composite
def shield_inputs(draw):
    q = qtable(draw(st.integers(0, 5)), draw(st.sampled_from([0.0, 0.05, 0.2])))
    s = draw(st.integers(0, 3))
    k = draw(st.integers(1, 4))
    w = np.array(draw(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k)))
    atoms = tuple((draw(st.integers(0, 2)), draw(st.floats(-3.0, 12.0)), p)
                  for p in (w / w.sum()).tolist())
    assume(abs(sum(p for _, _, p in atoms) - 1.0) <= 1e-12)
    x = draw(st.floats(-3.0, 12.0))
    return q, s, x, ProposedDistribution(atoms)


@settings(max_examples=400, deadline=None)
@given(shield_inputs())
def test_shield_output_is_shielded(args):
    q, s, x, prop = args
    out = shield(prop, (s, x), q)
    assert 0.0 <= out.lam <= 1.0
    assert is_shielded(out, (s, x), q, 2 * ETA)
    assert abs(sum(p for _, _, p in out.atoms) - 1.0) < 1e-12


@settings(max_examples=200, deadline=None)
@given(shield_inputs())
def test_pass_through_idempotent(args):
    q, s, x, prop = args
    out = shield(prop, (s, x), q)
    if out.case == "pass_through":
        again = shield(ProposedDistribution(out.atoms), (s, x), q)
        assert again.atoms == out.atoms and again.lam == 0.0


@settings(max_examples=100, deadline=None)
@given(shield_inputs())
def test_lambda_non_increasing_in_budget(args):
    q, s, _, prop = args
    lams = [shield(prop, (s, x), q).lam for x in np.linspace(-1.0, 12.0, 200)]
    assert all(b <= a + 1e-12 for a, b in zip(lams, lams[1:]))


@settings(max_examples=100, deadline=None)
@given(shield_inputs())
def test_backup_mass_continuous_above_floor(args):
    q, s, _, prop = args
    ab = int(q.backup_actions()[s])
    g = q.gamma_c
    qb = q.values[s, ab]
    t = g * sum(p * max(y, q.values[s, a]) for a, y, p in prop.atoms)
    floor = q.floors()[s]
    xs = np.linspace(floor, max(t, floor) + 1.0, 400)
    mass = []
    for x in xs:
        out = shield(prop, (s, x), q)
        mass.append(out.lam)
    mass = np.array(mass)
    # lambda(x) = (t - x)/(t - g qb): slope bounded by 1/(t - g qb) once the mixture is non-degenerate
    if t - g * qb > 1e-3:
        step = xs[1] - xs[0]
        assert np.max(np.abs(np.diff(mass))) <= step / (t - g * qb) + 1e-6
    assert mass[-1] == 0.0


@settings(max_examples=200, deadline=None)
@given(shield_inputs())
def test_batch_shield_matches_scalar(args):
    q, s, x, prop = args
    a = np.array([[aa for aa, _, _ in prop.atoms]])
    y = np.array([[yy for _, yy, _ in prop.atoms]])
    p = np.array([[pp for _, _, pp in prop.atoms]])
    ab, yb, pb, lam, case = shield_batch(a, y, p, np.array([s]), np.array([x]), q)
    out = shield(prop, (s, x), q)
    assert lam[0] == pytest.approx(out.lam, abs=1e-15)
    assert ("pass_through", "fallback", "mixed")[case[0]] == out.case
    merged = {}
    for aa, yy, pp in zip(ab[0], yb[0], pb[0]):
        if pp > 0:
            merged[(int(aa), float(yy))] = merged.get((int(aa), float(yy)), 0.0) + pp
    ref = {}
    for aa, yy, pp in out.atoms:
        ref[(aa, yy)] = ref.get((aa, yy), 0.0) + pp
    assert merged.keys() == ref.keys()
    for k in ref:
        assert merged[k] == pytest.approx(ref[k], abs=1e-12)
