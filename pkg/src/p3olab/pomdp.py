"""Finite episodic POMDP model: tabular kernels, validation, rank diagnostics.

The model is the ground-truth object of the laboratory. Everything downstream
(simulation, oracle computations, benchmarks) treats a validated model as
immutable; arrays are frozen at construction.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

PROB_TOL = 1e-12
RANK_TOL = 1e-8


def _freeze(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TabularPOMDP:
    """Tabular POMDP over finite state/observation/action spaces.

    Kernels are indexed step-first and row-major:

    - ``mu1[s]``: initial latent state distribution,
    - ``trans[h][s][a][s']``: latent transition at step h+1 (0-based h),
    - ``emit[h][s][o]``: observation emission at step h+1,
    - ``emit0[s][o]``: law of the prior observation given the first state,
    - ``reward[h][s][a]``: deterministic reward in [0, 1].
    """

    n_states: int
    n_obs: int
    n_actions: int
    horizon: int
    mu1: np.ndarray
    trans: np.ndarray
    emit: np.ndarray
    emit0: np.ndarray
    reward: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("mu1", "trans", "emit", "emit0", "reward"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "TabularPOMDP":
        try:
            return cls(
                n_states=int(d["n_states"]),
                n_obs=int(d["n_obs"]),
                n_actions=int(d["n_actions"]),
                horizon=int(d["horizon"]),
                mu1=d["mu1"],
                trans=d["trans"],
                emit=d["emit"],
                emit0=d["emit0"],
                reward=d["reward"],
                gamma=float(d["gamma"]),
            )
        except KeyError as e:
            raise FormatError(f"missing model key {e.args[0]!r}") from e

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_obs": self.n_obs,
            "n_actions": self.n_actions,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "mu1": self.mu1.tolist(),
            "trans": self.trans.tolist(),
            "emit": self.emit.tolist(),
            "emit0": self.emit0.tolist(),
            "reward": self.reward.tolist(),
        }

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    # -- derived latent laws ----------------------------------------------

    def latent_marginals(self, behavior_probs: np.ndarray) -> np.ndarray:
        """P_h^b(S_h) for h = 1..H under a latent-state behavior policy."""
        out = np.empty((self.horizon, self.n_states))
        out[0] = self.mu1
        for h in range(1, self.horizon):
            # K[s, s'] = sum_a pi_b(a|s) P(s'|s, a)
            K = np.einsum("sa,sat->st", behavior_probs[h - 1], self.trans[h - 1])
            out[h] = out[h - 1] @ K
        return out

    def backward_obs_matrix(self, behavior_probs: np.ndarray, h: int) -> np.ndarray:
        """P_h^b(O_{h-1} = o | S_h = s) as an (S, O) matrix; h is 1-based.

        At h = 1 the previous observation is the prior one, whose law is
        emit0 by definition.
        """
        if h == 1:
            return np.array(self.emit0)
        marg = self.latent_marginals(behavior_probs)
        prev = marg[h - 2]
        K = np.einsum("sa,sat->st", behavior_probs[h - 2], self.trans[h - 2])
        joint = prev[:, None] * K  # (s_{h-1}, s_h)
        cur = joint.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            post = np.where(cur[None, :] > 0, joint / cur[None, :], 0.0)
        return post.T @ self.emit[h - 2]


def validate(model: TabularPOMDP) -> None:
    """Raise ValidationError naming the first violated field, else return."""
    m = model
    if m.horizon < 1:
        raise ValidationError("horizon")
    for n, v in (("n_states", m.n_states), ("n_obs", m.n_obs),
                 ("n_actions", m.n_actions)):
        if v < 1:
            raise ValidationError(n)
    if not (0.0 < m.gamma <= 1.0):
        raise ValidationError("gamma")

    def check_shape(name, arr, shape):
        if arr.shape != shape:
            raise ValidationError(f"{name} shape {arr.shape} != {shape}")

    S, O, A, H = m.n_states, m.n_obs, m.n_actions, m.horizon
    check_shape("mu1", m.mu1, (S,))
    check_shape("trans", m.trans, (H, S, A, S))
    check_shape("emit", m.emit, (H, S, O))
    check_shape("emit0", m.emit0, (S, O))
    check_shape("reward", m.reward, (H, S, A))

    for name, arr in (("mu1", m.mu1), ("trans", m.trans), ("emit", m.emit),
                      ("emit0", m.emit0), ("reward", m.reward)):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"{name} contains non-finite entries")

    def check_rows(name, rows):
        # rows: (..., ncols); names index the row, not the entry
        flat = rows.reshape(-1, rows.shape[-1])
        idx = np.ndindex(rows.shape[:-1])
        for i, row in zip(idx, flat):
            label = name + "".join(f"[{j}]" for j in i)
            if np.any(row < 0):
                raise ValidationError(label)
            if abs(row.sum() - 1.0) > PROB_TOL:
                raise ValidationError(label)

    if abs(m.mu1.sum() - 1.0) > PROB_TOL or np.any(m.mu1 < 0):
        raise ValidationError("mu1")
    check_rows("trans", m.trans)
    check_rows("emit", m.emit)
    check_rows("emit0", m.emit0)
    if np.any(m.reward < 0) or np.any(m.reward > 1):
        bad = np.argwhere((m.reward < 0) | (m.reward > 1))[0]
        raise ValidationError("reward" + "".join(f"[{j}]" for j in bad))


@dataclass(frozen=True)
class RankDiagnostics:
    """Singular values of the per-step forward/backward observation matrices.

    ``forward[h-1]`` holds the singular values of P_h^b(O_h | S_h) and
    ``backward[h-1]`` those of P_h^b(O_{h-1} | S_h); ``rank_ok[h-1]`` is true
    iff both matrices have numerical rank equal to the number of latent
    states (smallest singular value above ``rank_tol`` relative to the
    largest).
    """

    forward: list = field(default_factory=list)
    backward: list = field(default_factory=list)
    rank_ok: list = field(default_factory=list)
    rank_tol: float = RANK_TOL

    @property
    def all_ok(self) -> bool:
        return all(self.rank_ok)


def _numerical_rank(svals: np.ndarray, tol: float) -> int:
    if svals.size == 0 or svals[0] <= 0:
        return 0
    return int(np.sum(svals > tol * svals[0]))


def rank_diagnostics(model: TabularPOMDP, behavior_probs: np.ndarray,
                     rank_tol: float = RANK_TOL) -> RankDiagnostics:
    """Check the two full-rank conditions under which bridge systems solve."""
    fwd, bwd, ok = [], [], []
    for h in range(1, model.horizon + 1):
        f = np.linalg.svd(model.emit[h - 1], compute_uv=False)
        b = np.linalg.svd(model.backward_obs_matrix(behavior_probs, h),
                          compute_uv=False)
        fwd.append(f)
        bwd.append(b)
        ok.append(_numerical_rank(f, rank_tol) == model.n_states
                  and _numerical_rank(b, rank_tol) == model.n_states)
    return RankDiagnostics(forward=fwd, backward=bwd, rank_ok=ok,
                           rank_tol=rank_tol)


# -- model file I/O --------------------------------------------------------

def _reject_nonfinite(s: str):
    raise FormatError(f"non-finite number {s!r}")


def load_model(path) -> TabularPOMDP:
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f, parse_constant=_reject_nonfinite)
        except json.JSONDecodeError as e:
            raise FormatError(str(e), line=e.lineno) from e
    model = TabularPOMDP.from_dict(d)
    validate(model)
    return model


def save_model(model: TabularPOMDP, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, sort_keys=True, indent=1)
        f.write("\n")
