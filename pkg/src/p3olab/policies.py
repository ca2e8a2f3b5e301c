"""Behavior and target policies, history classes, negative-control choices.

Behavior policies act on the latent state (the confounding mechanism);
target policies act on observables only. A target policy's history class
fixes both the inputs the policy may read and which past observation serves
as the negative-control action at each step.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import FormatError, UnknownHistoryAtom, ValidationError
from .rngs import substream

PROB_TOL = 1e-12

REACTIVE = "reactive"
FINITE = "finite"
FULL = "full"


@dataclass(frozen=True)
class HistoryClass:
    """Which part of the observable past a target policy may read.

    kind is one of ``reactive`` (current observation only), ``finite``
    (window of the last k (observation, action) pairs), or ``full``.
    """

    kind: str
    k: int | None = None

    def __post_init__(self):
        if self.kind not in (REACTIVE, FINITE, FULL):
            raise ValidationError(f"history_class.kind {self.kind!r}")
        if self.kind == FINITE and (self.k is None or self.k < 1):
            raise ValidationError("history_class.k")
        if self.kind != FINITE and self.k is not None:
            raise ValidationError("history_class.k set for non-finite kind")

    def window_start(self, h: int) -> int:
        """First step l whose (o, a) pair is visible at step h."""
        if self.kind == REACTIVE:
            return h
        if self.kind == FINITE:
            return max(1, h - self.k)
        return 1

    def window(self, h: int, history: tuple) -> tuple:
        """Truncate a full history ((o_1,a_1),...,(o_{h-1},a_{h-1}))."""
        l = self.window_start(h)
        return tuple(history[l - 1 : h - 1])

    def label(self) -> str:
        if self.kind == FINITE:
            return f"finite({self.k})"
        return self.kind

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "HistoryClass":
        return cls(kind=d["kind"], k=d.get("k"))


def reactive() -> HistoryClass:
    return HistoryClass(REACTIVE)


def finite_history(k: int) -> HistoryClass:
    return HistoryClass(FINITE, k)


def full_history() -> HistoryClass:
    return HistoryClass(FULL)


class NegativeControls(NamedTuple):
    """Absolute observation indices playing Z_h and W_h (0 means O_0)."""

    z_obs: int
    w_obs: int


def negative_controls(history_class: HistoryClass, h: int) -> NegativeControls:
    """Negative-control action/outcome sources at step h.

    The control action Z_h is the observation just before the visible
    window, O_{l-1}; the control outcome W_h is always the current
    observation O_h.
    """
    if h < 1:
        raise ValueError(f"step {h} out of range")
    return NegativeControls(z_obs=history_class.window_start(h) - 1, w_obs=h)


# -- behavior policy --------------------------------------------------------

@dataclass(frozen=True)
class BehaviorPolicy:
    """Latent-state policy pi_h^b(a | s), indexed probs[h][s][a]."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    def validate(self, min_behavior_prob: float = 0.0,
                 strict_coverage: bool = False) -> None:
        p = self.probs
        if p.ndim != 3:
            raise ValidationError("behavior.probs must be [H][S][A]")
        for h in range(p.shape[0]):
            for s in range(p.shape[1]):
                row = p[h, s]
                if np.any(row < 0) or abs(row.sum() - 1.0) > PROB_TOL:
                    raise ValidationError(f"behavior.probs[{h}][{s}]")
                if strict_coverage and np.any(row < min_behavior_prob):
                    raise ValidationError(
                        f"behavior.probs[{h}][{s}] below min_behavior_prob")

    def fingerprint(self) -> str:
        payload = json.dumps(self.probs.tolist()).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


# -- target policy forms -----------------------------------------------------

@dataclass(frozen=True)
class TablePolicy:
    """Explicit action probabilities per (step, observation, window atom)."""

    tables: dict  # (h, o, window_atom) -> np.ndarray over actions

    def __post_init__(self):
        for key, row in self.tables.items():
            row = np.asarray(row, dtype=float)
            if np.any(row < 0) or abs(row.sum() - 1.0) > PROB_TOL:
                raise ValidationError(f"table row {key} is not a distribution")

    def probs(self, h: int, o: int, window: tuple) -> np.ndarray:
        key = (h, o, window)
        try:
            return self.tables[key]
        except KeyError:
            raise UnknownHistoryAtom(f"no table row for {key}") from None

    def to_dict(self) -> dict:
        rows = [
            {"h": h, "o": o, "window": [list(p) for p in window],
             "probs": list(np.asarray(v, dtype=float))}
            for (h, o, window), v in sorted(self.tables.items())
        ]
        return {"form": "table", "rows": rows}


class FeatureMapPsi(NamedTuple):
    """Policy feature map: (h, a, o, window) -> d-vector, unit-ball bounded."""

    dim: int
    func: Callable[[int, int, int, tuple], np.ndarray]
    name: str


def obs_action_features(n_obs: int, n_actions: int) -> FeatureMapPsi:
    """One-hot on (a, o); ignores the window, so members using it are
    history-independent elements of whatever class they are declared in."""
    d = n_obs * n_actions

    def func(h, a, o, window):
        v = np.zeros(d)
        v[a * n_obs + o] = 1.0
        return v

    return FeatureMapPsi(dim=d, func=func, name="obs_action")


def windowed_features(n_obs: int, n_actions: int, k: int) -> FeatureMapPsi:
    """One-hot on (a, o, truncated-history atom) with window length <= k.

    Atom indices hash the padded window; absent steps (h <= k) pad with a
    sentinel so the dimension is fixed across steps.
    """
    n_pair = n_obs * n_actions + 1  # +1 for the pad sentinel
    n_atoms = n_pair ** k
    d = n_actions * n_obs * n_atoms

    def atom_index(window):
        idx = 0
        padded = ((None,) * (k - len(window))) + tuple(window)
        for (o, a) in (p if p is not None else (None, None) for p in padded):
            code = 0 if o is None else 1 + o * n_actions + a
            idx = idx * n_pair + code
        return idx

    def func(h, a, o, window):
        v = np.zeros(d)
        v[(a * n_obs + o) * n_atoms + atom_index(window)] = 1.0
        return v

    return FeatureMapPsi(dim=d, func=func, name=f"windowed({k})")


@dataclass(frozen=True)
class LinearSoftmax:
    """Softmax-linear policy: probabilities proportional to exp(<psi, beta>)."""

    beta: np.ndarray
    psi: FeatureMapPsi
    norm_bound: float
    n_actions: int

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        if b.shape != (self.psi.dim,):
            raise ValidationError("beta dimension mismatch with psi")
        if np.linalg.norm(b) > self.norm_bound * (1 + 1e-12):
            raise ValidationError("beta norm exceeds bound")

    def probs(self, h: int, o: int, window: tuple) -> np.ndarray:
        logits = np.array([
            float(self.psi.func(h, a, o, window) @ self.beta)
            for a in range(self.n_actions)
        ])
        logits -= logits.max()
        e = np.exp(logits)
        return e / e.sum()

    def to_dict(self) -> dict:
        return {"form": "linear_softmax", "beta": self.beta.tolist(),
                "psi": self.psi.name, "norm_bound": self.norm_bound,
                "n_actions": self.n_actions}


@dataclass(frozen=True)
class TargetPolicy:
    """Observable-information policy: history class plus a concrete form."""

    history_class: HistoryClass
    form: TablePolicy | LinearSoftmax

    def action_probs(self, h: int, o: int, history: tuple) -> np.ndarray:
        """Distribution over actions given the full available history.

        The history is truncated to the class window internally, so callers
        may always pass ((o_1, a_1), ..., (o_{h-1}, a_{h-1})).
        """
        window = self.history_class.window(h, history)
        return self.form.probs(h, o, window)

    def action_prob(self, h: int, a: int, o: int, history: tuple) -> float:
        return float(self.action_probs(h, o, history)[a])

    def to_dict(self) -> dict:
        return {"history_class": self.history_class.to_dict(),
                **self.form.to_dict()}


def action_prob(policy: TargetPolicy, a: int, o: int, history: tuple,
                h: int = 1) -> float:
    """Module-level convenience wrapper around TargetPolicy.action_prob."""
    return policy.action_prob(h, a, o, history)


def uniform_policy(history_class: HistoryClass, n_obs: int,
                   n_actions: int) -> TargetPolicy:
    psi = obs_action_features(n_obs, n_actions)
    form = LinearSoftmax(beta=np.zeros(psi.dim), psi=psi, norm_bound=1.0,
                         n_actions=n_actions)
    return TargetPolicy(history_class=history_class, form=form)


# -- policy sets -------------------------------------------------------------

@dataclass(frozen=True)
class PolicySet:
    """Finite ordered set of target policies sharing one history class."""

    history_class: HistoryClass
    members: tuple
    provenance: str

    def __post_init__(self):
        if not self.members:
            raise ValidationError("PolicySet must be nonempty")
        for i, p in enumerate(self.members):
            if p.history_class != self.history_class:
                raise ValidationError(f"member {i} has mismatched history class")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i):
        return self.members[i]


def sample_policy_set(history_class: HistoryClass, count: int, seed: int,
                      n_obs: int, n_actions: int, norm_bound: float = 5.0,
                      feature_kind: str = "obs_action") -> PolicySet:
    """Sample a deterministic softmax policy set anchored by the uniform one.

    Member 0 is always the uniform policy; the remaining members draw beta
    uniformly in the norm ball from a counter-based stream keyed by
    (seed, member index), so set prefixes are stable in count.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    if feature_kind == "obs_action":
        psi = obs_action_features(n_obs, n_actions)
    elif feature_kind == "windowed":
        k = history_class.k if history_class.kind == FINITE else 1
        psi = windowed_features(n_obs, n_actions, k)
    else:
        raise ValidationError(f"unknown feature_kind {feature_kind!r}")

    members = [uniform_policy(history_class, n_obs, n_actions)]
    for i in range(1, count):
        rng = substream(seed, i)
        direction = rng.normal(size=psi.dim)
        direction /= np.linalg.norm(direction)
        radius = norm_bound * rng.uniform() ** (1.0 / psi.dim)
        form = LinearSoftmax(beta=radius * direction, psi=psi,
                             norm_bound=norm_bound, n_actions=n_actions)
        members.append(TargetPolicy(history_class=history_class, form=form))
    return PolicySet(history_class=history_class, members=tuple(members),
                     provenance=f"sampled(seed={seed})")


# -- policy file I/O ---------------------------------------------------------

def policy_to_json(policy: TargetPolicy) -> dict:
    return policy.to_dict()


def policy_from_json(d: dict, n_obs: int | None = None) -> TargetPolicy:
    hc = HistoryClass.from_dict(d["history_class"])
    if d["form"] == "table":
        tables = {}
        for row in d["rows"]:
            window = tuple((int(o), int(a)) for o, a in row["window"])
            tables[(int(row["h"]), int(row["o"]), window)] = np.asarray(
                row["probs"], dtype=float)
        return TargetPolicy(history_class=hc, form=TablePolicy(tables))
    if d["form"] == "linear_softmax":
        beta = np.asarray(d["beta"], dtype=float)
        n_actions = int(d["n_actions"])
        if d["psi"] == "obs_action":
            if n_obs is None:
                n_obs = beta.size // n_actions
            psi = obs_action_features(n_obs, n_actions)
        elif d["psi"].startswith("windowed"):
            k = int(d["psi"].split("(")[1].rstrip(")"))
            if n_obs is None:
                raise FormatError("windowed policy file needs n_obs")
            psi = windowed_features(n_obs, n_actions, k)
        else:
            raise FormatError(f"unknown psi {d['psi']!r}")
        form = LinearSoftmax(beta=beta, psi=psi,
                             norm_bound=float(d["norm_bound"]),
                             n_actions=n_actions)
        return TargetPolicy(history_class=hc, form=form)
    raise FormatError(f"unknown policy form {d['form']!r}")


def save_policy_set(policy_set: PolicySet, path) -> None:
    doc = {
        "history_class": policy_set.history_class.to_dict(),
        "provenance": policy_set.provenance,
        "members": [policy_to_json(p) for p in policy_set],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def load_policy_set(path, n_obs: int | None = None) -> PolicySet:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    hc = HistoryClass.from_dict(doc["history_class"])
    members = tuple(policy_from_json(d, n_obs=n_obs) for d in doc["members"])
    return PolicySet(history_class=hc, members=members,
                     provenance=doc.get("provenance", "loaded"))
