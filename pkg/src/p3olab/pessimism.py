"""Pessimistic policy selection over coupled confidence regions.

For each policy, the fitted bridge chain seeds a finite candidate grid per
step (fitted, zero, and seeded perturbations). The confidence region keeps,
per step and continuation candidate, every candidate whose empirical
minimax value is within xi of the best in the grid column; the pessimistic
value is the smallest first-step functional over chains that stay feasible
at every step, found by backward reachability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyRegion, P3OError
from .minimax import (FeatureMap, LinearBridge, _dual_eig, fit_chain,
                      inner_max_from_moments, step_moments, zero_bridge)
from .policies import PolicySet, TargetPolicy
from .rngs import substream
from .simulate import OfflineDataset


def xi_schedule(n: int, d: int, H: int, M_B: float, M_G: float, L_b: float,
                L_pi: float, delta: float, C1: float = 1.0) -> float:
    """Confidence width for linear classes at sample size n.

    xi = C1 * M_B^2 * M_G^2 * d * H * log(1 + L_b * L_pi * H * n / delta) / n.
    """
    if n < 1 or d < 1 or H < 1:
        raise ValueError("n, d, H must be positive")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if min(M_B, M_G, L_b, L_pi) <= 0:
        raise ValueError("class bounds must be positive")
    return (C1 * M_B ** 2 * M_G ** 2 * d * H
            * math.log(1.0 + L_b * L_pi * H * n / delta) / n)


@dataclass(frozen=True)
class CandidateGrid:
    """Ordered bridge candidates per step; member 0 is always the fitted
    chain element and member 1 the zero bridge."""

    layers: tuple  # length H, each a tuple of LinearBridge
    provenance: str

    @property
    def horizon(self) -> int:
        return len(self.layers)

    def sizes(self) -> tuple:
        return tuple(len(layer) for layer in self.layers)

    def with_injected(self, chain: list) -> tuple:
        """Append one extra candidate per layer; returns (grid, indices)."""
        layers, idx = [], []
        for layer, bridge in zip(self.layers, chain):
            layers.append(tuple(layer) + (bridge,))
            idx.append(len(layer))
        return (CandidateGrid(layers=tuple(layers),
                              provenance=self.provenance + "+injected"),
                tuple(idx))


def make_grid(fits: list, fm: FeatureMap, n_perturb: int = 16,
              radius: float = 1.0, seed: int = 0) -> CandidateGrid:
    """Fitted chain + zero bridge + seeded ball perturbations per layer.

    Perturbation offsets depend only on (seed, step, index), so identical
    fitted chains produce identical grids regardless of which policy they
    came from.
    """
    layers = []
    for fit in fits:
        h = fit.step
        cands = [fit.bridge, zero_bridge(fm.dim, h)]
        for i in range(n_perturb):
            rng = substream(seed, h, i)
            g = rng.normal(size=fm.dim)
            g *= radius * rng.uniform() ** (1.0 / fm.dim) / np.linalg.norm(g)
            theta = fit.bridge.theta + g
            norm = np.linalg.norm(theta)
            if norm > fm.L_b:
                theta = theta * (fm.L_b / norm)
            cands.append(LinearBridge(theta=theta, step=h))
        layers.append(tuple(cands))
    return CandidateGrid(layers=tuple(layers),
                         provenance=f"fitted+perturbed(seed={seed}, "
                                    f"radius={radius})")


@dataclass(frozen=True)
class ConfidenceRegion:
    """Per-step minimax values and feasibility over grid candidate pairs.

    pair_values[h-1] has shape (m_h, m_{h+1}) for h < H and (m_H, 1) at the
    terminal layer, whose single column is the zero continuation.
    """

    xi: float
    pair_values: tuple
    feasible: tuple

    def column_minima(self, h: int) -> np.ndarray:
        return self.pair_values[h - 1].min(axis=0)


def build_region(dataset: OfflineDataset, policy: TargetPolicy,
                 grid: CandidateGrid, lam: float, xi: float, fm: FeatureMap,
                 gamma: float = 1.0, ridge_scale: float = 1e-8) -> ConfidenceRegion:
    """Evaluate the empirical minimax value on every candidate pair.

    Grid columns index the continuation candidate; a pair is feasible when
    its value is within xi of the column minimum, so each column minimizer
    is feasible whenever xi >= 0.
    """
    H = dataset.horizon
    pair_values, feasible = [], []
    for h in range(1, H + 1):
        mom = step_moments(dataset, policy, h, fm, gamma)
        eig = _dual_eig(mom.sigma, ridge_scale)
        rows = grid.layers[h - 1]
        cols = grid.layers[h] if h < H else (None,)
        vals = np.empty((len(rows), len(cols)))
        for j, cont in enumerate(cols):
            c_vec = mom.c0 + (gamma * (mom.C_mat @ cont.theta)
                              if cont is not None else 0.0)
            for i, cand in enumerate(rows):
                u_hat = mom.A_mat @ cand.theta - c_vec
                vals[i, j] = inner_max_from_moments(
                    u_hat, mom.sigma, lam, fm.L_g, ridge_scale=ridge_scale,
                    eig=eig).value
        pair_values.append(vals)
        feasible.append(vals - vals.min(axis=0, keepdims=True) <= xi)
    return ConfidenceRegion(xi=xi, pair_values=tuple(pair_values),
                            feasible=tuple(feasible))


def first_step_functional(dataset: OfflineDataset, fm: FeatureMap) -> np.ndarray:
    """Gradient of F_hat: mean over trajectories of sum_a phi(a, W_1)."""
    W1 = dataset.obs[:, 0]
    return fm.phi_table[:, W1, :].sum(axis=0).mean(axis=0)


@dataclass(frozen=True)
class PessimisticValue:
    value: float
    chain: tuple  # candidate index per layer
    reachable_counts: tuple


def pessimistic_value(dataset: OfflineDataset, region: ConfidenceRegion,
                      grid: CandidateGrid, fm: FeatureMap) -> PessimisticValue:
    """Minimum F_hat over feasible chains via backward reachability.

    reach_H(i) holds iff candidate i is feasible against the terminal zero
    continuation; reach_h(i) iff some feasible edge leads to a reachable
    continuation. Ties everywhere break to the lowest index. Raises
    EmptyRegion when no first-layer candidate is reachable (possible only
    for xi < 0, since column minimizers are always feasible).
    """
    H = grid.horizon
    reach = [None] * H
    reach[H - 1] = region.feasible[H - 1][:, 0]
    for h in range(H - 1, 0, -1):
        reach[h - 1] = (region.feasible[h - 1]
                        & reach[h][None, :]).any(axis=1)
    if not reach[0].any():
        raise EmptyRegion("no reachable candidate chain at the given xi")

    fvec = first_step_functional(dataset, fm)
    fvals = np.array([b.theta @ fvec for b in grid.layers[0]])
    masked = np.where(reach[0], fvals, np.inf)
    c = int(np.argmin(masked))
    chain = [c]
    for h in range(1, H):
        nxt_ok = region.feasible[h - 1][chain[-1]] & reach[h]
        chain.append(int(np.argmax(nxt_ok)))
    return PessimisticValue(value=float(fvals[c]), chain=tuple(chain),
                            reachable_counts=tuple(int(r.sum()) for r in reach))


# -- full per-policy-set selection ----------------------------------------------

@dataclass(frozen=True)
class P3OConfig:
    """Knobs for the end-to-end pessimistic selection."""

    lam: float = 1.0
    C1: float = 1.0
    delta: float = 0.1
    L_pi: float = 5.0
    n_perturb: int = 16
    perturb_radius: float = 1.0
    grid_seed: int = 0
    ridge_scale: float = 1e-8


@dataclass(frozen=True)
class PolicyEvaluation:
    index: int
    j_pess: float
    chain: tuple = ()
    reachable_counts: tuple = ()
    fitted_m_hats: tuple = ()
    j_true: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "j_pess": self.j_pess,
            "chain": list(self.chain),
            "reachable_counts": list(self.reachable_counts),
            "fitted_m_hats": list(self.fitted_m_hats),
            "j_true": self.j_true,
            "error": self.error,
        }


@dataclass(frozen=True)
class PessimismReport:
    """Per-policy pessimistic values, the selected index, and ground truth
    when the generating model is available."""

    evaluations: tuple
    selected: int
    xi: float
    n: int
    subopt: float | None = None
    j_star: float | None = None

    def to_dict(self) -> dict:
        return {
            "evaluations": [e.to_dict() for e in self.evaluations],
            "selected": self.selected,
            "xi": self.xi,
            "n": self.n,
            "subopt": self.subopt,
            "j_star": self.j_star,
        }

    def table(self) -> str:
        lines = ["index  j_pess        j_true        reachable"]
        for e in self.evaluations:
            jt = "-" if e.j_true is None else f"{e.j_true:+.6f}"
            jp = "-inf" if e.j_pess == -math.inf else f"{e.j_pess:+.6f}"
            mark = " <- selected" if e.index == self.selected else ""
            err = f"  ERROR: {e.error}" if e.error else ""
            lines.append(f"{e.index:5d}  {jp:>12s}  {jt:>12s}  "
                         f"{'/'.join(map(str, e.reachable_counts)) or '-'}"
                         f"{mark}{err}")
        return "\n".join(lines)


def p3o(dataset: OfflineDataset, policy_set: PolicySet, fm: FeatureMap,
        config: P3OConfig = P3OConfig(), gamma: float = 1.0,
        model=None, behavior=None) -> PessimismReport:
    """Pessimistic selection: argmax over policies of the pessimistic value.

    Per-policy failures are recorded with a -inf sentinel (never selected
    unless every policy fails); ties break to the lowest index. When the
    generating model and behavior are supplied, evaluations carry exact
    policy values and the report carries the realized suboptimality.
    """
    xi = xi_schedule(dataset.n, fm.dim, dataset.horizon, fm.M_B, fm.M_G,
                     fm.L_b, config.L_pi, config.delta, config.C1)
    evals = []
    for idx, policy in enumerate(policy_set):
        j_true = None
        if model is not None:
            from .oracle import true_value
            j_true = true_value(model, policy)
        try:
            fits = fit_chain(dataset, policy, config.lam, fm, fm.L_g, fm.L_b,
                             gamma=gamma, ridge_scale=config.ridge_scale)
            grid = make_grid(fits, fm, n_perturb=config.n_perturb,
                             radius=config.perturb_radius,
                             seed=config.grid_seed)
            region = build_region(dataset, policy, grid, config.lam, xi, fm,
                                  gamma=gamma,
                                  ridge_scale=config.ridge_scale)
            pv = pessimistic_value(dataset, region, grid, fm)
            evals.append(PolicyEvaluation(
                index=idx, j_pess=pv.value, chain=pv.chain,
                reachable_counts=pv.reachable_counts,
                fitted_m_hats=tuple(f.m_hat for f in fits),
                j_true=j_true))
        except P3OError as e:
            evals.append(PolicyEvaluation(index=idx, j_pess=-math.inf,
                                          j_true=j_true, error=str(e)))
    best = 0
    for e in evals:
        if e.j_pess > evals[best].j_pess:
            best = e.index
    subopt = j_star = None
    if model is not None:
        j_star = max(e.j_true for e in evals)
        subopt = j_star - evals[best].j_true
    return PessimismReport(evaluations=tuple(evals), selected=best, xi=xi,
                           n=dataset.n, subopt=subopt, j_star=j_star)
