import numpy as np
import pytest

from p3olab.instances import benchmark_instance, confounded_showcase
from p3olab.policies import BehaviorPolicy
from p3olab.pomdp import TabularPOMDP, validate


@pytest.fixture(scope="session")
def benchmark():
    return benchmark_instance()


@pytest.fixture(scope="session")
def showcase():
    return confounded_showcase()


def make_identity_mdp(horizon=2, n=2, gamma=1.0, rewards=None, trans=None):
    """MDP disguised as a POMDP: the observation reveals the state."""
    eye = np.eye(n)
    if trans is None:
        rng = np.random.default_rng(12)
        trans = rng.uniform(0.1, 1.0, size=(horizon, n, n, n))
        trans /= trans.sum(axis=-1, keepdims=True)
    if rewards is None:
        rng = np.random.default_rng(13)
        rewards = rng.uniform(0.0, 1.0, size=(horizon, n, n))
    model = TabularPOMDP(
        n_states=n, n_obs=n, n_actions=n, horizon=horizon,
        mu1=np.full(n, 1.0 / n),
        trans=np.asarray(trans, dtype=float),
        emit=np.stack([eye] * horizon),
        emit0=eye,
        reward=np.asarray(rewards, dtype=float),
        gamma=gamma,
    )
    validate(model)
    return model


@pytest.fixture
def identity_mdp():
    return make_identity_mdp()


def uniform_behavior(model):
    return BehaviorPolicy(np.full(
        (model.horizon, model.n_states, model.n_actions),
        1.0 / model.n_actions))


def brute_force_value(model, policy):
    """Exhaustive latent-path enumeration of the expected discounted return.

    Independent of the package's occupancy engine: expands every
    (o0, s_1, o_1, a_1, s_2, ...) path explicitly and sums rewards.
    """
    H = model.horizon
    out = 0.0
    for s1 in range(model.n_states):
        for o0 in range(model.n_obs):
            p0 = model.mu1[s1] * model.emit0[s1][o0]
            if p0 == 0:
                continue
            frontier = [(p0, s1, (), 0.0)]
            for h in range(1, H + 1):
                nxt = []
                for (p, s, hist, acc) in frontier:
                    for o in range(model.n_obs):
                        pe = model.emit[h - 1][s][o]
                        if pe == 0:
                            continue
                        for a in range(model.n_actions):
                            pa = policy.action_prob(h, a, o, hist)
                            if pa == 0:
                                continue
                            acc2 = acc + (model.gamma ** (h - 1)
                                          * model.reward[h - 1][s][a])
                            pp = p * pe * pa
                            if h == H:
                                nxt.append((pp, s, hist, acc2))
                            else:
                                for s2 in range(model.n_states):
                                    pt = model.trans[h - 1][s][a][s2]
                                    if pt > 0:
                                        nxt.append((pp * pt, s2,
                                                    hist + ((o, a),), acc2))
                frontier = nxt
            out += sum(p * acc for (p, _, _, acc) in frontier)
    return out
