import json

import numpy as np
import pytest

from conftest import make_identity_mdp, uniform_behavior
from p3olab.errors import FormatError
from p3olab.occupancy import exact_trajectory_law
from p3olab.policies import BehaviorPolicy
from p3olab.pomdp import TabularPOMDP, validate
from p3olab.simulate import empirical_mean, generate, load, save


def degenerate_model():
    """Single latent state, single observation: fully deterministic data."""
    m = TabularPOMDP(
        n_states=1, n_obs=1, n_actions=2, horizon=2,
        mu1=np.array([1.0]),
        trans=np.ones((2, 1, 2, 1)),
        emit=np.ones((2, 1, 1)),
        emit0=np.ones((1, 1)),
        reward=np.array([[[0.5, 0.1]], [[0.5, 0.9]]]),
        gamma=1.0,
    )
    validate(m)
    return m


def test_degenerate_chain_trajectories_identical():
    m = degenerate_model()
    b = BehaviorPolicy(np.array([[[1.0, 0.0]], [[1.0, 0.0]]]))
    ds = generate(m, b, 50, seed=0)
    assert np.all(ds.act == 0)
    assert np.all(ds.rew == 0.5)
    assert np.all(ds.obs == 0)


def test_generation_is_deterministic_in_seed():
    m = make_identity_mdp()
    b = uniform_behavior(m)
    assert generate(m, b, 200, seed=3) == generate(m, b, 200, seed=3)
    assert generate(m, b, 200, seed=3) != generate(m, b, 200, seed=4)


def test_dataset_prefix_stable_in_n():
    m = make_identity_mdp()
    b = uniform_behavior(m)
    small = generate(m, b, 64, seed=11)
    big = generate(m, b, 512, seed=11)
    assert np.array_equal(small.obs, big.obs[:64])
    assert np.array_equal(small.act, big.act[:64])
    assert np.array_equal(small.o0, big.o0[:64])


def test_first_step_action_frequencies_match_population():
    rng = np.random.default_rng(2)
    m = make_identity_mdp(horizon=2, n=2)
    probs = rng.uniform(0.2, 1.0, size=(2, 2, 2))
    probs /= probs.sum(axis=-1, keepdims=True)
    b = BehaviorPolicy(probs)
    n = 100_000
    ds = generate(m, b, n, seed=1)
    for a in range(2):
        pop = float(sum(m.mu1[s] * probs[0, s, a] for s in range(2)))
        emp = float(np.mean(ds.act[:, 0] == a))
        se = np.sqrt(pop * (1 - pop) / n)
        assert abs(emp - pop) <= 3 * se


def test_empirical_mean_basics():
    m = degenerate_model()
    b = BehaviorPolicy(np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))
    ds = generate(m, b, 40, seed=0)
    assert empirical_mean(ds, lambda t: 1.0) == pytest.approx(1.0)
    assert empirical_mean(ds, lambda t: t.steps[0].r) == pytest.approx(0.5)
    m2 = make_identity_mdp()
    ds2 = generate(m2, uniform_behavior(m2), 500, seed=7)
    hand = sum(1 for i in range(500) if ds2.act[i, 0] == 0) / 500
    assert empirical_mean(
        ds2, lambda t: float(t.steps[0].a == 0)) == pytest.approx(hand)


def test_round_trip_identity(tmp_path):
    m = make_identity_mdp()
    ds = generate(m, uniform_behavior(m), 100, seed=5)
    path = tmp_path / "data.jsonl"
    save(ds, path)
    assert load(path) == ds
    # byte-identical rewrite
    second = tmp_path / "again.jsonl"
    save(load(path), second)
    assert path.read_bytes() == second.read_bytes()


def test_load_rejects_truncated_file(tmp_path):
    m = make_identity_mdp()
    ds = generate(m, uniform_behavior(m), 10, seed=5)
    path = tmp_path / "data.jsonl"
    save(ds, path)
    lines = path.read_text().splitlines()
    (tmp_path / "short.jsonl").write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(FormatError):
        load(tmp_path / "short.jsonl")


def test_load_rejects_non_finite_reward(tmp_path):
    m = make_identity_mdp()
    ds = generate(m, uniform_behavior(m), 3, seed=5)
    path = tmp_path / "data.jsonl"
    save(ds, path)
    text = path.read_text().splitlines()
    rec = json.loads(text[1])
    rec["steps"][0]["r"] = None
    text[1] = json.dumps(rec).replace("null", "NaN")
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(FormatError, match="non-finite"):
        load(path)


def test_schema_has_no_latent_state_slot(tmp_path):
    m = make_identity_mdp()
    ds = generate(m, uniform_behavior(m), 5, seed=2)
    path = tmp_path / "data.jsonl"
    save(ds, path)
    lines = path.read_text().splitlines()
    for line in lines[1:]:
        rec = json.loads(line)
        assert set(rec.keys()) == {"o0", "steps"}
        for st in rec["steps"]:
            assert set(st.keys()) == {"o", "a", "r"}


def test_law_of_large_numbers_harness():
    """|empirical - exact population mean| <= 4 sup|f| / sqrt(n) for at
    least 99 of 100 seeds at n = 10^4 (statistical, not per-seed hard)."""
    rng = np.random.default_rng(8)
    m = make_identity_mdp(horizon=2, n=2)
    probs = rng.uniform(0.2, 1.0, size=(2, 2, 2))
    probs /= probs.sum(axis=-1, keepdims=True)
    b = BehaviorPolicy(probs)
    law = exact_trajectory_law(m, b)

    functionals = [
        ("total reward / 2", lambda o0, steps: sum(r for (_, _, r) in steps) / 2,
         1.0),
        ("first action is 0", lambda o0, steps: float(steps[0][1] == 0), 1.0),
        ("o0 equals last obs", lambda o0, steps: float(o0 == steps[-1][0]),
         1.0),
    ]
    n = 10_000
    for name, f, sup in functionals:
        pop = sum(p * f(o0, steps) for (o0, steps), p in law.items())
        hits = 0
        for seed in range(100):
            ds = generate(m, b, n, seed=seed)
            vals = np.array([
                f(int(ds.o0[i]),
                  tuple((int(ds.obs[i, h]), int(ds.act[i, h]),
                         float(ds.rew[i, h])) for h in range(2)))
                for i in range(n)
            ])
            if abs(vals.mean() - pop) <= 4 * sup / np.sqrt(n):
                hits += 1
        assert hits >= 99, f"{name}: only {hits}/100 seeds within bound"
