"""Built-in instances: a confounded benchmark, a showcase where naive
observation-level evaluation picks the wrong policy, and a corpus of
full-rank instances for exact identification checks.

Instances keep their kernels bounded away from zero so rank conditions hold
with margin, and behavior policies genuinely condition on the latent state
(the confounding mechanism under study).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .minimax import FeatureMap, one_hot_features
from .pessimism import P3OConfig
from .policies import (BehaviorPolicy, HistoryClass, LinearSoftmax, PolicySet,
                       TargetPolicy, finite_history, full_history,
                       obs_action_features, reactive, uniform_policy)
from .pomdp import TabularPOMDP, rank_diagnostics, validate
from .rngs import substream


@dataclass(frozen=True)
class LabInstance:
    """A model with its behavior policy, candidate set, and estimation knobs."""

    name: str
    model: TabularPOMDP
    behavior: BehaviorPolicy
    policy_set: PolicySet
    feature_map: FeatureMap
    config: P3OConfig


def _softmax_member(history_class, n_obs, n_actions, logits_by_obs,
                    norm_bound=8.0) -> TargetPolicy:
    """Reactive-table member expressed as a softmax over (a, o) indicators."""
    psi = obs_action_features(n_obs, n_actions)
    beta = np.zeros(psi.dim)
    for o in range(n_obs):
        for a in range(n_actions):
            beta[a * n_obs + o] = logits_by_obs[o][a]
    norm = np.linalg.norm(beta)
    if norm > norm_bound:
        beta *= norm_bound / norm
    form = LinearSoftmax(beta=beta, psi=psi, norm_bound=norm_bound,
                         n_actions=n_actions)
    return TargetPolicy(history_class=history_class, form=form)


def benchmark_instance() -> LabInstance:
    """Two-state confounded benchmark with a reactive candidate set.

    The behavior policy knows the latent state and leans toward the action
    that is good in that state; observations are informative but noisy, so
    candidate policies can only partly recover the state.
    """
    H = 2
    emit = np.array([[[0.8, 0.2], [0.25, 0.75]]] * H)
    trans = np.array([
        [
            [[0.85, 0.15], [0.35, 0.65]],
            [[0.6, 0.4], [0.2, 0.8]],
        ]
    ] * H)
    reward = np.array([
        [[0.9, 0.3], [0.2, 0.7]],
        [[0.85, 0.25], [0.15, 0.75]],
    ])
    model = TabularPOMDP(
        n_states=2, n_obs=2, n_actions=2, horizon=H,
        mu1=np.array([0.55, 0.45]),
        trans=trans,
        emit=emit,
        emit0=np.array(emit[0]),
        reward=reward,
        gamma=1.0,
    )
    validate(model)
    behavior = BehaviorPolicy(np.array([
        [[0.62, 0.38], [0.4, 0.6]],
        [[0.6, 0.4], [0.38, 0.62]],
    ]))
    behavior.validate()

    def toward_best(t):
        # interpolates uniform -> the best deterministic observation map
        return _softmax_member(reactive(), 2, 2,
                               {0: [3 * t, -3 * t], 1: [-3 * t, 3 * t]})

    members = [
        uniform_policy(reactive(), 2, 2),
        toward_best(0.08),
        toward_best(0.15),
        toward_best(0.3),
        toward_best(1.0),  # the optimal member
        _softmax_member(reactive(), 2, 2, {0: [3.0, -3.0], 1: [3.0, -3.0]}),
        _softmax_member(reactive(), 2, 2, {0: [-3.0, 3.0], 1: [-3.0, 3.0]}),
        _softmax_member(reactive(), 2, 2, {0: [-1.0, 1.0], 1: [1.0, -1.0]}),
    ]
    policy_set = PolicySet(history_class=reactive(), members=tuple(members),
                           provenance="benchmark")
    fm = one_hot_features(2, 2, L_b=8.0, L_g=8.0, M_B=2.0, M_G=2.0)
    config = P3OConfig(lam=1.0, C1=0.05, delta=0.1, L_pi=4.0, n_perturb=16,
                       perturb_radius=1.5, grid_seed=7)
    return LabInstance(name="benchmark", model=model, behavior=behavior,
                       policy_set=policy_set, feature_map=fm, config=config)


def confounded_showcase() -> LabInstance:
    """Simpson-style instance: the latent state drives both action choice
    and reward, so observation-level evaluation inverts the action ranking.

    Under the behavior law the treated action looks better (it is taken
    mostly in the responsive state); causally it is worse on average, and
    the near-uniform emission gives naive evaluation almost nothing to
    condition on.
    """
    H = 2
    emit = np.array([[[0.8, 0.2], [0.2, 0.8]]] * H)
    trans = np.array([
        [
            [[0.7, 0.3], [0.35, 0.65]],
            [[0.6, 0.4], [0.3, 0.7]],
        ]
    ] * H)
    reward = np.array([
        [[0.55, 0.8], [0.5, 0.05]],
        [[0.55, 0.8], [0.5, 0.05]],
    ])
    model = TabularPOMDP(
        n_states=2, n_obs=2, n_actions=2, horizon=H,
        mu1=np.array([0.5, 0.5]),
        trans=trans,
        emit=emit,
        emit0=np.array(emit[0]),
        reward=reward,
        gamma=1.0,
    )
    validate(model)
    behavior = BehaviorPolicy(np.array([
        [[0.1, 0.9], [0.9, 0.1]],
        [[0.1, 0.9], [0.9, 0.1]],
    ]))
    behavior.validate()
    members = [
        uniform_policy(reactive(), 2, 2),
        _softmax_member(reactive(), 2, 2, {0: [3.0, -3.0], 1: [3.0, -3.0]}),
        _softmax_member(reactive(), 2, 2, {0: [-3.0, 3.0], 1: [-3.0, 3.0]}),
        _softmax_member(reactive(), 2, 2, {0: [3.0, -3.0], 1: [-3.0, 3.0]}),
        _softmax_member(reactive(), 2, 2, {0: [-3.0, 3.0], 1: [3.0, -3.0]}),
        _softmax_member(reactive(), 2, 2, {0: [1.0, -1.0], 1: [1.0, -1.0]}),
    ]
    policy_set = PolicySet(history_class=reactive(), members=tuple(members),
                           provenance="showcase")
    fm = one_hot_features(2, 2, L_b=8.0, L_g=8.0, M_B=2.0, M_G=2.0)
    config = P3OConfig(lam=1.0, C1=0.05, delta=0.1, L_pi=5.0, n_perturb=24,
                       perturb_radius=2.5, grid_seed=11)
    return LabInstance(name="showcase", model=model, behavior=behavior,
                       policy_set=policy_set, feature_map=fm, config=config)


# -- random full-rank instances ------------------------------------------------

def _rand_rows(rng, shape, ncols, low=0.1):
    m = rng.uniform(low, 1.0, size=(*shape, ncols))
    return m / m.sum(axis=-1, keepdims=True)


def random_instance(seed: int, n_states: int, n_obs: int, n_actions: int,
                    horizon: int, max_tries: int = 20) -> tuple:
    """Random validated instance passing both rank diagnostics."""
    for t in range(max_tries):
        rng = substream(seed, t)
        model = TabularPOMDP(
            n_states=n_states, n_obs=n_obs, n_actions=n_actions,
            horizon=horizon,
            mu1=_rand_rows(rng, (), n_states),
            trans=_rand_rows(rng, (horizon, n_states, n_actions), n_states),
            emit=_rand_rows(rng, (horizon, n_states), n_obs),
            emit0=_rand_rows(rng, (n_states,), n_obs),
            reward=rng.uniform(0.0, 1.0, size=(horizon, n_states, n_actions)),
            gamma=float(rng.uniform(0.85, 1.0)),
        )
        behavior = BehaviorPolicy(
            _rand_rows(rng, (horizon, n_states), n_actions, low=0.2))
        validate(model)
        behavior.validate()
        if rank_diagnostics(model, behavior.probs).all_ok:
            return model, behavior
    raise RankDeficient(0, f"no full-rank instance after {max_tries} tries")


def _random_member(history_class: HistoryClass, seed: int, n_obs: int,
                   n_actions: int, norm_bound: float = 4.0) -> TargetPolicy:
    """Random softmax member on (a, o) indicators; a member of any class."""
    psi = obs_action_features(n_obs, n_actions)
    rng = substream(seed, 905)
    beta = rng.normal(size=psi.dim)
    beta *= norm_bound * rng.uniform() ** (1.0 / psi.dim) / np.linalg.norm(beta)
    form = LinearSoftmax(beta=beta, psi=psi, norm_bound=norm_bound,
                         n_actions=n_actions)
    return TargetPolicy(history_class=history_class, form=form)


@dataclass(frozen=True)
class CorpusEntry:
    label: str
    model: TabularPOMDP
    behavior: BehaviorPolicy
    policy: TargetPolicy


def identification_corpus(seed: int = 314) -> list:
    """Instances on which exact value identification must hold.

    Reactive entries carry arbitrary random members; finite- and
    full-history entries carry history-independent members of those classes
    (softmax on (a, o) indicators). For genuinely history-dependent members
    the weight-bridge moment system is inconsistent on generic instances,
    so the bridge assumption itself fails and no estimator-independent
    identity is available to test against.
    """
    shapes_reactive = [
        (2, 2, 2, 2), (2, 3, 2, 3), (3, 3, 2, 3), (3, 4, 3, 4),
        (4, 4, 2, 3), (4, 5, 2, 2), (5, 6, 3, 2), (6, 6, 2, 2),
    ]
    shapes_finite = {
        1: [(2, 3, 2, 3), (3, 3, 2, 3), (2, 2, 2, 4)],
        2: [(2, 3, 2, 4), (3, 4, 2, 3), (2, 2, 2, 2)],
    }
    shapes_full = [
        (2, 3, 2, 3), (3, 3, 2, 3), (2, 2, 2, 4),
        (3, 4, 2, 2), (2, 4, 2, 3), (4, 4, 2, 2),
    ]
    corpus = []
    counter = 0
    for (S, O, A, H) in shapes_reactive:
        model, behavior = random_instance(seed + counter, S, O, A, H)
        policy = _random_member(reactive(), seed + counter, O, A)
        corpus.append(CorpusEntry(
            label=f"reactive S{S} O{O} A{A} H{H}", model=model,
            behavior=behavior, policy=policy))
        counter += 1
    for k, shapes in shapes_finite.items():
        for (S, O, A, H) in shapes:
            model, behavior = random_instance(seed + counter, S, O, A, H)
            policy = _random_member(finite_history(k), seed + counter, O, A)
            corpus.append(CorpusEntry(
                label=f"finite(k={k}) S{S} O{O} A{A} H{H}", model=model,
                behavior=behavior, policy=policy))
            counter += 1
    for (S, O, A, H) in shapes_full:
        model, behavior = random_instance(seed + counter, S, O, A, H)
        policy = _random_member(full_history(), seed + counter, O, A)
        corpus.append(CorpusEntry(
            label=f"full S{S} O{O} A{A} H{H}", model=model,
            behavior=behavior, policy=policy))
        counter += 1
    return corpus


BUILDERS = {
    "benchmark": benchmark_instance,
    "showcase": confounded_showcase,
}
