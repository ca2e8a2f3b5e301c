"""Confounded offline dataset generation and persistence.

Generation uses a counter-based Philox stream keyed by the seed: trajectory
i consumes exactly the uniforms [i * stride, (i + 1) * stride) of the
stream, with stride = 2 + 3 * horizon (initial state, prior observation,
then observation/action/next-state per step; the final next-state draw is
reserved but unused). Output therefore does not depend on generation order
or batching, and datasets with the same seed agree on their common prefix
of trajectories.

Latent states are consumed during sampling and never stored: the dataset
schema has no state slot.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import FormatError, ValidationError
from .policies import BehaviorPolicy
from .pomdp import TabularPOMDP


class StepRecord(NamedTuple):
    o: int
    a: int
    r: float


@dataclass(frozen=True)
class Trajectory:
    o0: int
    steps: tuple  # of StepRecord, length exactly horizon


@dataclass(frozen=True)
class OfflineDataset:
    """n confounded trajectories plus provenance fingerprints."""

    model_fingerprint: str
    behavior_fingerprint: str
    seed: int
    horizon: int
    o0: np.ndarray  # (n,) int
    obs: np.ndarray  # (n, H) int
    act: np.ndarray  # (n, H) int
    rew: np.ndarray  # (n, H) float

    def __post_init__(self):
        for name in ("o0", "obs", "act", "rew"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return int(self.o0.shape[0])

    def __len__(self) -> int:
        return self.n

    def trajectory(self, i: int) -> Trajectory:
        steps = tuple(
            StepRecord(int(self.obs[i, h]), int(self.act[i, h]),
                       float(self.rew[i, h]))
            for h in range(self.horizon)
        )
        return Trajectory(o0=int(self.o0[i]), steps=steps)

    def trajectories(self):
        return (self.trajectory(i) for i in range(self.n))

    def window_atoms(self, history_class, h: int) -> list:
        """Visible history window of every trajectory at step h (1-based)."""
        l = history_class.window_start(h)
        out = []
        for i in range(self.n):
            out.append(tuple(
                (int(self.obs[i, j - 1]), int(self.act[i, j - 1]))
                for j in range(l, h)
            ))
        return out

    def z_values(self, history_class, h: int) -> np.ndarray:
        """Negative-control observation of every trajectory at step h."""
        z_obs = history_class.window_start(h) - 1
        if z_obs == 0:
            return np.asarray(self.o0)
        return np.asarray(self.obs[:, z_obs - 1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return (self.model_fingerprint == other.model_fingerprint
                and self.behavior_fingerprint == other.behavior_fingerprint
                and self.seed == other.seed
                and self.horizon == other.horizon
                and np.array_equal(self.o0, other.o0)
                and np.array_equal(self.obs, other.obs)
                and np.array_equal(self.act, other.act)
                and np.array_equal(self.rew, other.rew))


def _rows_categorical(prob_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Sample index per row of a (n, K) probability matrix from uniforms."""
    c = np.cumsum(prob_rows, axis=1)
    idx = (u[:, None] > c).sum(axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1)


def generate(model: TabularPOMDP, behavior: BehaviorPolicy, n: int,
             seed: int) -> OfflineDataset:
    """Draw n i.i.d. trajectories under the latent-state behavior policy."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    H = model.horizon
    stride = 2 + 3 * H
    rng = np.random.Generator(np.random.Philox(key=seed))
    U = rng.random((n, stride))

    s = _rows_categorical(np.broadcast_to(model.mu1, (n, model.n_states)),
                          U[:, 0])
    o0 = _rows_categorical(model.emit0[s], U[:, 1])
    obs = np.empty((n, H), dtype=np.int64)
    act = np.empty((n, H), dtype=np.int64)
    rew = np.empty((n, H), dtype=float)
    for h in range(H):
        base = 2 + 3 * h
        o = _rows_categorical(model.emit[h][s], U[:, base])
        a = _rows_categorical(behavior.probs[h][s], U[:, base + 1])
        obs[:, h] = o
        act[:, h] = a
        rew[:, h] = model.reward[h][s, a]
        s = _rows_categorical(model.trans[h][s, a], U[:, base + 2])
    return OfflineDataset(
        model_fingerprint=model.fingerprint(),
        behavior_fingerprint=behavior.fingerprint(),
        seed=int(seed),
        horizon=H,
        o0=o0,
        obs=obs,
        act=act,
        rew=rew,
    )


def empirical_mean(dataset: OfflineDataset,
                   f: Callable[[Trajectory], float]) -> float:
    """Arithmetic mean of a trajectory functional over the dataset."""
    total = 0.0
    for traj in dataset.trajectories():
        total += f(traj)
    return total / dataset.n


def save(dataset: OfflineDataset, path) -> None:
    header = {
        "model_fingerprint": dataset.model_fingerprint,
        "behavior_fingerprint": dataset.behavior_fingerprint,
        "seed": dataset.seed,
        "n": dataset.n,
        "horizon": dataset.horizon,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(dataset.n):
            rec = {
                "o0": int(dataset.o0[i]),
                "steps": [
                    {"o": int(dataset.obs[i, h]), "a": int(dataset.act[i, h]),
                     "r": float(dataset.rew[i, h])}
                    for h in range(dataset.horizon)
                ],
            }
            fh.write(json.dumps(rec) + "\n")


def load(path) -> OfflineDataset:
    def parse(line_no: int, text: str) -> dict:
        try:
            return json.loads(
                text,
                parse_constant=lambda s: (_ for _ in ()).throw(
                    FormatError(f"non-finite value {s!r}", line=line_no)),
            )
        except json.JSONDecodeError as e:
            raise FormatError(str(e), line=line_no) from e

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty dataset file", line=1)
    header = parse(1, lines[0])
    for key in ("model_fingerprint", "behavior_fingerprint", "seed", "n",
                "horizon"):
        if key not in header:
            raise FormatError(f"header missing {key!r}", line=1)
    n, H = int(header["n"]), int(header["horizon"])
    if len(lines) - 1 != n:
        raise FormatError(f"expected {n} trajectories, found {len(lines) - 1}",
                          line=len(lines))
    o0 = np.empty(n, dtype=np.int64)
    obs = np.empty((n, H), dtype=np.int64)
    act = np.empty((n, H), dtype=np.int64)
    rew = np.empty((n, H), dtype=float)
    for i in range(n):
        line_no = i + 2
        rec = parse(line_no, lines[i + 1])
        if set(rec.keys()) != {"o0", "steps"}:
            raise FormatError(f"unexpected keys {sorted(rec.keys())}",
                              line=line_no)
        if len(rec["steps"]) != H:
            raise FormatError(
                f"expected {H} steps, found {len(rec['steps'])}", line=line_no)
        o0[i] = int(rec["o0"])
        for h, st in enumerate(rec["steps"]):
            if set(st.keys()) != {"o", "a", "r"}:
                raise FormatError(f"unexpected step keys {sorted(st.keys())}",
                                  line=line_no)
            r = float(st["r"])
            if not math.isfinite(r):
                raise FormatError("non-finite reward", line=line_no)
            if not (0.0 <= r <= 1.0):
                raise FormatError(f"reward {r} outside [0, 1]", line=line_no)
            o, a = int(st["o"]), int(st["a"])
            if o < 0 or a < 0 or int(rec["o0"]) < 0:
                raise FormatError("negative index", line=line_no)
            obs[i, h] = o
            act[i, h] = a
            rew[i, h] = r
    return OfflineDataset(
        model_fingerprint=header["model_fingerprint"],
        behavior_fingerprint=header["behavior_fingerprint"],
        seed=int(header["seed"]),
        horizon=H,
        o0=o0,
        obs=obs,
        act=act,
        rew=rew,
    )
