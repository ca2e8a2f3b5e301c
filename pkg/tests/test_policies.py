import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p3olab.errors import UnknownHistoryAtom, ValidationError
from p3olab.policies import (BehaviorPolicy, FeatureMapPsi, HistoryClass,
                             LinearSoftmax, PolicySet, TablePolicy,
                             TargetPolicy, finite_history, full_history,
                             negative_controls, obs_action_features,
                             policy_from_json, policy_to_json, reactive,
                             sample_policy_set, uniform_policy)


def test_negative_controls_reactive():
    assert negative_controls(reactive(), 3) == (2, 3)
    assert negative_controls(reactive(), 1) == (0, 1)


def test_negative_controls_full_history():
    assert negative_controls(full_history(), 5) == (0, 5)
    assert negative_controls(full_history(), 2) == (0, 2)


def test_negative_controls_finite_history():
    assert negative_controls(finite_history(2), 1) == (0, 1)
    assert negative_controls(finite_history(2), 4) == (1, 4)
    assert negative_controls(finite_history(1), 3) == (1, 3)


@pytest.mark.parametrize("h", [2, 3, 4, 5])
@pytest.mark.parametrize("k", [4, 6])
def test_wide_window_matches_full_history(h, k):
    # window of length >= H-1 never truncates, so the control obs is O_0
    assert negative_controls(finite_history(k), h) == \
        negative_controls(full_history(), h)


def test_history_class_validation():
    with pytest.raises(ValidationError):
        HistoryClass("finite", None)
    with pytest.raises(ValidationError):
        HistoryClass("finite", 0)
    with pytest.raises(ValidationError):
        HistoryClass("reactive", 2)
    with pytest.raises(ValidationError):
        HistoryClass("windowed")


def test_zero_beta_gives_uniform_probabilities():
    pol = uniform_policy(reactive(), n_obs=3, n_actions=4)
    for o in range(3):
        probs = pol.action_probs(1, o, ())
        assert probs == pytest.approx([0.25] * 4, abs=1e-12)


def test_table_policy_lookup():
    tables = {(1, 0, ()): np.array([0.3, 0.7])}
    pol = TargetPolicy(reactive(), TablePolicy(tables))
    assert pol.action_prob(1, 0, 0, ()) == pytest.approx(0.3)
    assert pol.action_prob(1, 1, 0, ()) == pytest.approx(0.7)
    with pytest.raises(UnknownHistoryAtom):
        pol.action_prob(1, 0, 1, ())


def test_one_hot_softmax_matches_hand_computation():
    psi = obs_action_features(n_obs=2, n_actions=2)
    L = 3.0
    beta = np.zeros(psi.dim)
    beta[0] = L  # feature index of (a=0, o=0)
    form = LinearSoftmax(beta=beta, psi=psi, norm_bound=L, n_actions=2)
    pol = TargetPolicy(reactive(), form)
    e = np.exp([L, 0.0])
    assert pol.action_prob(1, 0, 0, ()) == pytest.approx(e[0] / e.sum(),
                                                         abs=1e-12)
    assert pol.action_probs(1, 1, ()) == pytest.approx([0.5, 0.5], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=5),
       st.floats(-50, 50))
def test_softmax_shift_invariance(logits, shift):
    """Adding a constant to every logit leaves the distribution unchanged."""
    n = len(logits)

    def make(offset):
        def func(h, a, o, window):
            v = np.zeros(n)
            v[a] = 1.0
            return v
        # encode logits through beta directly; offset added to every logit
        return LinearSoftmax(
            beta=np.array(logits) + offset,
            psi=FeatureMapPsi(dim=n, func=func, name="unit"),
            norm_bound=1e9, n_actions=n)

    base, shifted = make(0.0), make(shift)
    p0 = base.probs(1, 0, ())
    p1 = shifted.probs(1, 0, ())
    assert np.abs(p0 - p1).max() < 1e-12
    assert int(np.argmax(p0)) == int(np.argmax(p1))
    assert p0.sum() == pytest.approx(1.0, abs=1e-12)


def test_sample_policy_set_anchor_and_determinism():
    a = sample_policy_set(reactive(), 5, seed=9, n_obs=2, n_actions=2)
    b = sample_policy_set(reactive(), 5, seed=9, n_obs=2, n_actions=2)
    ja = json.dumps([policy_to_json(p) for p in a], sort_keys=True)
    jb = json.dumps([policy_to_json(p) for p in b], sort_keys=True)
    assert ja == jb
    single = sample_policy_set(reactive(), 1, seed=0, n_obs=2, n_actions=2)
    assert np.allclose(single[0].form.beta, 0.0)


def test_sample_policy_set_respects_norm_bound():
    ps = sample_policy_set(reactive(), 20, seed=7, n_obs=3, n_actions=2,
                           norm_bound=5.0)
    betas = [p.form.beta for p in ps]
    assert len({tuple(b) for b in betas}) == 20
    for b in betas:
        assert np.linalg.norm(b) <= 5.0 + 1e-12


def test_policy_set_invariants():
    with pytest.raises(ValidationError):
        PolicySet(history_class=reactive(), members=(), provenance="x")
    mixed = (uniform_policy(reactive(), 2, 2),
             uniform_policy(full_history(), 2, 2))
    with pytest.raises(ValidationError):
        PolicySet(history_class=reactive(), members=mixed, provenance="x")


def test_policy_json_round_trip():
    ps = sample_policy_set(reactive(), 3, seed=4, n_obs=2, n_actions=3)
    for pol in ps:
        doc = policy_to_json(pol)
        back = policy_from_json(json.loads(json.dumps(doc)), n_obs=2)
        assert np.allclose(back.form.beta, pol.form.beta)
        assert back.history_class == pol.history_class

    table = TargetPolicy(finite_history(1), TablePolicy(
        {(2, 1, ((0, 1),)): np.array([0.25, 0.75])}))
    back = policy_from_json(json.loads(json.dumps(policy_to_json(table))))
    assert back.action_prob(2, 1, 1, ((0, 1),)) == pytest.approx(0.75)


def test_behavior_policy_validation():
    good = BehaviorPolicy(np.full((1, 2, 2), 0.5))
    good.validate()
    with pytest.raises(ValidationError, match=r"behavior.probs\[0\]\[1\]"):
        BehaviorPolicy(np.array([[[0.5, 0.5], [0.6, 0.6]]])).validate()
    with pytest.raises(ValidationError, match="min_behavior_prob"):
        BehaviorPolicy(np.array([[[0.99, 0.01], [0.5, 0.5]]])).validate(
            min_behavior_prob=0.05, strict_coverage=True)
