"""Exact forward enumeration of per-step joint laws on a tabular POMDP.

Population quantities in this laboratory are never Monte-Carlo estimates:
each step h carries an exact joint law over atoms (z, s, window), where z is
the value of the negative-control observation for the chosen history class,
s the latent state, and window the visible history slice. The window update
is Markov, and so is the z update: when the window is full, the observation
that slides out of it becomes the next step's control observation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import HistoryExplosion
from .policies import FULL, REACTIVE, BehaviorPolicy, HistoryClass, TargetPolicy
from .pomdp import TabularPOMDP

DEFAULT_ATOM_CAP = 10 ** 6

# driver(h, s, o, window) -> probability vector over actions
ActionDriver = Callable[[int, int, int, tuple], np.ndarray]


@dataclass(frozen=True)
class StepLaw:
    """Exact joint law at one step: atoms (z, s, window) -> probability."""

    step: int
    atoms: dict

    def marginal_state_window(self) -> dict:
        out = {}
        for (z, s, tau), p in self.atoms.items():
            out[(s, tau)] = out.get((s, tau), 0.0) + p
        return out

    def total(self) -> float:
        return float(sum(self.atoms.values()))


def behavior_driver(behavior: BehaviorPolicy) -> ActionDriver:
    probs = behavior.probs

    def driver(h, s, o, window):
        return probs[h - 1, s]

    return driver


def target_driver(policy: TargetPolicy) -> ActionDriver:
    def driver(h, s, o, window):
        return policy.form.probs(h, o, window)

    return driver


def step_laws(model: TabularPOMDP, history_class: HistoryClass,
              driver: ActionDriver, cap: int = DEFAULT_ATOM_CAP) -> list:
    """Forward-compute StepLaw for h = 1..H under the given action driver.

    Raises HistoryExplosion when the enumerated support would exceed cap.
    """
    H = model.horizon
    kind, k = history_class.kind, history_class.k
    emit, emit0, trans, mu1 = model.emit, model.emit0, model.trans, model.mu1
    nO, nA, nS = model.n_obs, model.n_actions, model.n_states

    atoms = {}
    for s in range(nS):
        if mu1[s] <= 0:
            continue
        for z in range(nO):
            p = mu1[s] * emit0[s, z]
            if p > 0:
                atoms[(z, s, ())] = atoms.get((z, s, ()), 0.0) + p
    laws = [StepLaw(step=1, atoms=atoms)]

    for h in range(1, H):
        nxt = {}
        for (z, s, tau), p in atoms.items():
            for o in range(nO):
                pe = emit[h - 1, s, o]
                if pe <= 0:
                    continue
                aw = driver(h, s, o, tau)
                for a in range(nA):
                    pa = aw[a]
                    if pa <= 0:
                        continue
                    if kind == REACTIVE:
                        tau2, z2 = (), o
                    elif kind == FULL:
                        tau2, z2 = tau + ((o, a),), z
                    else:
                        grown = tau + ((o, a),)
                        if len(grown) > k:
                            tau2, z2 = grown[1:], grown[0][0]
                        else:
                            tau2, z2 = grown, z
                    w = p * pe * pa
                    row = trans[h - 1, s, a]
                    for s2 in range(nS):
                        pt = row[s2]
                        if pt <= 0:
                            continue
                        key = (z2, s2, tau2)
                        nxt[key] = nxt.get(key, 0.0) + w * pt
            if len(nxt) > cap:
                raise HistoryExplosion(len(nxt), cap)
        atoms = nxt
        laws.append(StepLaw(step=h + 1, atoms=atoms))
    return laws


def occupancy(model: TabularPOMDP, behavior: BehaviorPolicy,
              history_class: HistoryClass,
              cap: int = DEFAULT_ATOM_CAP) -> list:
    """Exact joint distributions over (S_h, window) under the behavior law."""
    laws = step_laws(model, history_class, behavior_driver(behavior), cap=cap)
    return [law.marginal_state_window() for law in laws]


def exact_trajectory_law(model: TabularPOMDP, behavior: BehaviorPolicy,
                         cap: int = DEFAULT_ATOM_CAP) -> dict:
    """Exact law of the full observable record under the behavior policy.

    Returns {(o0, ((o_1, a_1, r_1), ..., (o_H, a_H, r_H))): probability}.
    Rewards are deterministic in the latent pair, so distinct latent paths
    emitting the same observables but different rewards stay distinct atoms.
    Intended for small models in tests and law-of-large-numbers harnesses.
    """
    H = model.horizon
    nO, nA, nS = model.n_obs, model.n_actions, model.n_states
    atoms = {}
    for s in range(nS):
        if model.mu1[s] <= 0:
            continue
        for o0 in range(nO):
            p = model.mu1[s] * model.emit0[s, o0]
            if p > 0:
                atoms[(o0, (), s)] = atoms.get((o0, (), s), 0.0) + p

    for h in range(1, H + 1):
        nxt = {}
        for (o0, steps, s), p in atoms.items():
            for o in range(nO):
                pe = model.emit[h - 1, s, o]
                if pe <= 0:
                    continue
                for a in range(nA):
                    pa = behavior.probs[h - 1, s, a]
                    if pa <= 0:
                        continue
                    r = float(model.reward[h - 1, s, a])
                    rec = steps + ((o, a, r),)
                    w = p * pe * pa
                    if h == H:
                        key = (o0, rec, -1)
                        nxt[key] = nxt.get(key, 0.0) + w
                    else:
                        row = model.trans[h - 1, s, a]
                        for s2 in range(nS):
                            pt = row[s2]
                            if pt <= 0:
                                continue
                            key = (o0, rec, s2)
                            nxt[key] = nxt.get(key, 0.0) + w * pt
            if len(nxt) > cap:
                raise HistoryExplosion(len(nxt), cap)
        atoms = nxt

    out = {}
    for (o0, steps, _), p in atoms.items():
        out[(o0, steps)] = out.get((o0, steps), 0.0) + p
    return out
