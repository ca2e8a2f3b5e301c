"""Exact population computations: policy value, bridge functions, coverage.

All quantities here come from exact enumeration of the step laws; nothing is
sampled. Bridge functions are solved per step and action as linear systems
in the conditional moments of the data-generating process:

- the value bridge b_h(a, w) solves the conditional-moment system indexed by
  the negative-control observation z (minimum-norm when underdetermined),
- the weight bridge q_h(a, z) solves the system indexed by the latent
  (state, window) atoms whose right side is the density ratio over the
  behavior propensity.

Residuals are always reported; an inconsistent system raises rather than
silently returning a least-squares compromise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BridgeResidualError, RankDeficient, ZeroBehaviorProb
from .occupancy import (DEFAULT_ATOM_CAP, StepLaw, behavior_driver, step_laws,
                        target_driver)
from .policies import BehaviorPolicy, HistoryClass, TargetPolicy
from .pomdp import TabularPOMDP, _numerical_rank, rank_diagnostics

SOLVE_TOL = 1e-9


def _relative_residual(mat: np.ndarray, x: np.ndarray, rhs: np.ndarray) -> float:
    return float(np.linalg.norm(mat @ x - rhs) / (1.0 + np.linalg.norm(rhs)))


def _policy_obs_matrix(policy: TargetPolicy, h: int, tau: tuple,
                       n_obs: int, cache: dict) -> np.ndarray:
    """pi_h(a | o, tau) stacked as an (O, A) matrix, cached per (h, tau)."""
    key = (h, tau)
    mat = cache.get(key)
    if mat is None:
        mat = np.stack([policy.form.probs(h, o, tau) for o in range(n_obs)])
        cache[key] = mat
    return mat


def _continuation(model: TabularPOMDP, b_next: np.ndarray | None,
                  h: int) -> np.ndarray:
    """G(s, a) = R_h(s, a) + gamma * E[sum_a' b_{h+1}(a', W_{h+1}) | s, a]."""
    G = np.array(model.reward[h - 1])
    if b_next is not None and h < model.horizon:
        v_next = model.emit[h] @ b_next.sum(axis=0)  # (s',)
        G = G + model.gamma * (model.trans[h - 1] @ v_next)
    return G


def _value_system(model: TabularPOMDP, behavior: BehaviorPolicy,
                  policy: TargetPolicy, law: StepLaw,
                  b_next: np.ndarray | None, h: int, pi_cache: dict):
    """Accumulate the step-h conditional-moment system per action.

    Returns (den, T, rhs) with den[a, z] = P(A_h=a, Z_h=z),
    T[a, z, w] * den = E-weighted emission rows, and rhs[a, z] * den the
    weighted right side of the bridge equation.
    """
    nA, nO = model.n_actions, model.n_obs
    den = np.zeros((nA, nO))
    T = np.zeros((nA, nO, nO))
    rhs = np.zeros((nA, nO))
    G = _continuation(model, b_next, h)
    emit_h = model.emit[h - 1]
    bp = behavior.probs[h - 1]
    for (z, s, tau), p in law.atoms.items():
        wa = p * bp[s]  # joint weight per action
        pi_mat = _policy_obs_matrix(policy, h, tau, nO, pi_cache)
        mvec = emit_h[s] @ pi_mat  # E[pi_h(a | O_h, tau) | s]
        den[:, z] += wa
        T[:, z, :] += wa[:, None] * emit_h[s][None, :]
        rhs[:, z] += wa * (mvec * G[s])
    return den, T, rhs


@dataclass(frozen=True)
class ValueBridgeExact:
    """Per-step tables b_h(a, w) with the solver residual for each step."""

    tables: tuple  # length H of (A, O) arrays
    residuals: tuple
    solve_tol: float = SOLVE_TOL
    convention: str = "min-norm"

    def chain(self) -> list:
        return [np.array(t) for t in self.tables]


@dataclass(frozen=True)
class WeightBridgeExact:
    """Per-step tables q_h(a, z) with the solver residual for each step."""

    tables: tuple
    residuals: tuple
    solve_tol: float = SOLVE_TOL
    convention: str = "min-norm"


@dataclass(frozen=True)
class CoverageReport:
    """Second moments of the weight bridge under the behavior law."""

    c_pi: float
    per_step: tuple
    finite: bool

    def to_dict(self) -> dict:
        return {"c_pi": self.c_pi, "per_step": list(self.per_step),
                "finite": self.finite}


@dataclass(frozen=True)
class IdentificationCheck:
    lhs: float  # true policy value
    rhs: float  # value identified through the step-1 bridge
    gap: float
    value_residuals: tuple

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "gap": self.gap,
                "value_residuals": list(self.value_residuals)}


def true_value(model: TabularPOMDP, policy: TargetPolicy,
               cap: int = DEFAULT_ATOM_CAP) -> float:
    """Exact J(pi) by forward enumeration over (state, window) atoms."""
    laws = step_laws(model, policy.history_class, target_driver(policy), cap=cap)
    total = 0.0
    cache: dict = {}
    for h, law in enumerate(laws, start=1):
        emit_h = model.emit[h - 1]
        R = model.reward[h - 1]
        step_val = 0.0
        for (z, s, tau), p in law.atoms.items():
            pi_mat = _policy_obs_matrix(policy, h, tau, model.n_obs, cache)
            mvec = emit_h[s] @ pi_mat
            step_val += p * float(mvec @ R[s])
        total += model.gamma ** (h - 1) * step_val
    return total


def solve_value_bridge(model: TabularPOMDP, behavior: BehaviorPolicy,
                       policy: TargetPolicy, solve_tol: float = SOLVE_TOL,
                       cap: int = DEFAULT_ATOM_CAP,
                       laws: list | None = None) -> ValueBridgeExact:
    """Backward-solve the value bridge tables for every step.

    Each step solves, per action, the conditional-moment system indexed by
    the control observation; underdetermined systems take the minimum-norm
    solution (any solution yields the same identified value under the rank
    conditions, so the convention only pins the representative).
    """
    diag = rank_diagnostics(model, behavior.probs)
    for h, ok in enumerate(diag.rank_ok, start=1):
        if not ok:
            raise RankDeficient(h, "emission rank conditions fail")
    if laws is None:
        laws = step_laws(model, policy.history_class,
                         behavior_driver(behavior), cap=cap)
    H = model.horizon
    tables = [None] * H
    residuals = [0.0] * H
    b_next = None
    pi_cache: dict = {}
    for h in range(H, 0, -1):
        den, T, rhs = _value_system(model, behavior, policy, laws[h - 1],
                                    b_next, h, pi_cache)
        bh = np.zeros((model.n_actions, model.n_obs))
        worst = 0.0
        for a in range(model.n_actions):
            mask = den[a] > 0
            if not np.any(mask):
                continue
            Tc = T[a][mask] / den[a][mask, None]
            rc = rhs[a][mask] / den[a][mask]
            sol, *_ = np.linalg.lstsq(Tc, rc, rcond=None)
            bh[a] = sol
            worst = max(worst, _relative_residual(Tc, sol, rc))
        if worst > solve_tol:
            raise BridgeResidualError(h, worst, solve_tol)
        tables[h - 1] = bh
        residuals[h - 1] = worst
        b_next = bh
    return ValueBridgeExact(tables=tuple(tables), residuals=tuple(residuals),
                            solve_tol=solve_tol)


def population_head_value(model: TabularPOMDP, b1_table: np.ndarray) -> float:
    """E over the behavior law of sum_a b_1(a, W_1), computed exactly.

    W_1 depends on the initial state only, so the value needs just mu1 and
    the first emission row regardless of the behavior policy.
    """
    colsum = np.asarray(b1_table).sum(axis=0)  # over actions, indexed by w
    return float(model.mu1 @ (model.emit[0] @ colsum))


def identified_value(model: TabularPOMDP, behavior: BehaviorPolicy,
                     bridge: ValueBridgeExact, laws: list | None = None,
                     history_class: HistoryClass | None = None,
                     cap: int = DEFAULT_ATOM_CAP) -> float:
    """Identified policy value: the first-step bridge functional."""
    return population_head_value(model, bridge.tables[0])


def identification_check(model: TabularPOMDP, behavior: BehaviorPolicy,
                         policy: TargetPolicy, solve_tol: float = SOLVE_TOL,
                         cap: int = DEFAULT_ATOM_CAP) -> IdentificationCheck:
    """Compare J(pi) with the bridge-identified value; both sides exact."""
    laws = step_laws(model, policy.history_class, behavior_driver(behavior),
                     cap=cap)
    bridge = solve_value_bridge(model, behavior, policy, solve_tol=solve_tol,
                                cap=cap, laws=laws)
    lhs = true_value(model, policy, cap=cap)
    rhs = identified_value(model, behavior, bridge, laws=laws)
    return IdentificationCheck(lhs=lhs, rhs=rhs, gap=abs(lhs - rhs),
                               value_residuals=bridge.residuals)


def solve_weight_bridge(model: TabularPOMDP, behavior: BehaviorPolicy,
                        policy: TargetPolicy, solve_tol: float = SOLVE_TOL,
                        cap: int = DEFAULT_ATOM_CAP) -> WeightBridgeExact:
    """Solve q_h(a, z) from density ratios over behavior propensities.

    Rows are the latent (state, window) atoms of the behavior law; the
    right side divides the target/behavior density ratio by the behavior
    propensity. Raises ZeroBehaviorProb when the target reaches an atom the
    behavior cannot act on, RankDeficient when the control observation
    cannot distinguish latent states, and BridgeResidualError when the
    system is inconsistent (the bridge assumption fails for this policy).
    """
    b_laws = step_laws(model, policy.history_class, behavior_driver(behavior),
                       cap=cap)
    t_laws = step_laws(model, policy.history_class, target_driver(policy),
                       cap=cap)
    H = model.horizon
    nA, nO, nS = model.n_actions, model.n_obs, model.n_states
    tables, residuals = [], []
    for h in range(1, H + 1):
        atoms = b_laws[h - 1].atoms
        # z-law per (s, tau) row and the l-aware backward rank check
        rows: dict = {}
        joint_zs = np.zeros((nS, nO))
        for (z, s, tau), p in atoms.items():
            vec = rows.get((s, tau))
            if vec is None:
                vec = np.zeros(nO)
                rows[(s, tau)] = vec
            vec[z] += p
            joint_zs[s, z] += p
        state_mass = joint_zs.sum(axis=1, keepdims=True)
        cond = np.divide(joint_zs, state_mass, out=np.zeros_like(joint_zs),
                         where=state_mass > 0)
        svals = np.linalg.svd(cond, compute_uv=False)
        if _numerical_rank(svals, 1e-8) < nS:
            raise RankDeficient(h, "control observation rank below n_states")

        target_marg = t_laws[h - 1].marginal_state_window()
        bp = behavior.probs[h - 1]
        qh = np.zeros((nA, nO))
        worst = 0.0
        for a in range(nA):
            M, r = [], []
            for (s, tau), vec in rows.items():
                pb = vec.sum()
                mu = target_marg.get((s, tau), 0.0) / pb
                if bp[s, a] <= 0:
                    if mu > 0:
                        raise ZeroBehaviorProb(h, s, a)
                    continue
                M.append(vec / pb)
                r.append(mu / bp[s, a])
            if not M:
                continue
            M = np.asarray(M)
            r = np.asarray(r)
            sol, *_ = np.linalg.lstsq(M, r, rcond=None)
            qh[a] = sol
            worst = max(worst, _relative_residual(M, sol, r))
        if worst > solve_tol:
            raise BridgeResidualError(h, worst, solve_tol)
        tables.append(qh)
        residuals.append(worst)
    return WeightBridgeExact(tables=tuple(tables), residuals=tuple(residuals),
                             solve_tol=solve_tol)


def concentrability(model: TabularPOMDP, behavior: BehaviorPolicy,
                    policy: TargetPolicy, solve_tol: float = SOLVE_TOL,
                    cap: int = DEFAULT_ATOM_CAP) -> CoverageReport:
    """C^pi = max_h E_behavior[q_h(A_h, Z_h)^2], exactly enumerated."""
    try:
        weights = solve_weight_bridge(model, behavior, policy,
                                      solve_tol=solve_tol, cap=cap)
    except ZeroBehaviorProb:
        return CoverageReport(c_pi=float("inf"),
                              per_step=tuple([float("inf")] * model.horizon),
                              finite=False)
    laws = step_laws(model, policy.history_class, behavior_driver(behavior),
                     cap=cap)
    per_step = []
    for h in range(1, model.horizon + 1):
        q = weights.tables[h - 1]
        bp = behavior.probs[h - 1]
        val = 0.0
        for (z, s, tau), p in laws[h - 1].atoms.items():
            val += p * float(bp[s] @ (q[:, z] ** 2))
        per_step.append(val)
    return CoverageReport(c_pi=float(max(per_step)), per_step=tuple(per_step),
                          finite=True)


def bellman_residual_moments(model: TabularPOMDP, behavior: BehaviorPolicy,
                             policy: TargetPolicy, b_h: np.ndarray,
                             b_next: np.ndarray | None, h: int,
                             laws: list | None = None,
                             cap: int = DEFAULT_ATOM_CAP):
    """Conditional Bellman residual ell(a, z) and its weights P(a, z).

    ell is the conditional expectation, given (A_h, Z_h), of the one-step
    bridge-equation defect of (b_h, b_{h+1}); used for exact residual mean
    squared error and for dual-equivalence checks.
    """
    if laws is None:
        laws = step_laws(model, policy.history_class,
                         behavior_driver(behavior), cap=cap)
    den, T, rhs = _value_system(model, behavior, policy, laws[h - 1],
                                b_next, h, {})
    nA, nO = model.n_actions, model.n_obs
    ell = np.zeros((nA, nO))
    for a in range(nA):
        mask = den[a] > 0
        if not np.any(mask):
            continue
        Tc = T[a][mask] / den[a][mask, None]
        rc = rhs[a][mask] / den[a][mask]
        ell[a][mask] = Tc @ np.asarray(b_h[a], dtype=float) - rc
    return ell, den
