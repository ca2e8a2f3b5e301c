"""Minimax estimation of value bridge functions from offline data.

The estimator works entirely in linear classes: primal bridge candidates are
linear in features phi(a, w), dual witnesses linear in nu(a, z). The inner
maximization over the dual ball has a closed form: unconstrained it is a
ridged quadratic; when the norm bound binds, the exact boundary solution is
found by root-finding the secular equation in the eigenbasis of the dual
second-moment matrix (bisection on the multiplier, never projection).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateDual, DegeneratePrimal
from .policies import TargetPolicy
from .simulate import OfflineDataset

RIDGE_SCALE = 1e-8
SECULAR_TOL = 1e-12


# -- feature maps ------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMap:
    """Primal/dual feature tables over the finite (action, obs) grids.

    phi_table[a, w] and nu_table[a, z] are d-vectors; pointwise norms must
    not exceed one. Class bounds: L_b / L_g are coefficient-norm bounds,
    M_B bounds sup_w |sum_a b(a, w)|, M_G bounds sup |g|.
    """

    dim: int
    phi_table: np.ndarray  # (A, O, d)
    nu_table: np.ndarray  # (A, O, d)
    L_b: float
    L_g: float
    M_B: float
    M_G: float
    name: str = "custom"

    def __post_init__(self):
        for nm in ("phi_table", "nu_table"):
            arr = np.asarray(getattr(self, nm), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, nm, arr)
        for nm in ("phi_table", "nu_table"):
            norms = np.linalg.norm(getattr(self, nm), axis=-1)
            if norms.max() > 1.0 + 1e-12:
                raise ValueError(f"{nm} is not normalized to the unit ball")

    def bridge_table(self, theta: np.ndarray) -> np.ndarray:
        """b(a, w) = <phi(a, w), theta> over the whole grid."""
        return self.phi_table @ np.asarray(theta, dtype=float)

    def theta_from_table(self, table: np.ndarray) -> np.ndarray:
        """Least-squares coefficients reproducing a tabular bridge."""
        A = self.phi_table.reshape(-1, self.dim)
        sol, *_ = np.linalg.lstsq(A, np.asarray(table, dtype=float).ravel(),
                                  rcond=None)
        return sol

    def action_sum_bound(self, theta: np.ndarray) -> float:
        """sup_w |sum_a b(a, w)| for the membership diagnostic."""
        return float(np.abs(self.bridge_table(theta).sum(axis=0)).max())


def one_hot_features(n_actions: int, n_obs: int, L_b: float = 10.0,
                     L_g: float = 10.0, M_B: float | None = None,
                     M_G: float | None = None) -> FeatureMap:
    """Indicator features on (a, w) and (a, z); dimension |A| * |O|.

    In the tabular full-rank case these satisfy completeness and
    realizability exactly, with zero approximation slack.
    """
    d = n_actions * n_obs
    eye = np.eye(d)
    table = eye.reshape(n_actions, n_obs, d)
    return FeatureMap(dim=d, phi_table=table, nu_table=table, L_b=L_b,
                      L_g=L_g, M_B=M_B if M_B is not None else L_b,
                      M_G=M_G if M_G is not None else L_g,
                      name="one_hot")


@dataclass(frozen=True)
class LinearBridge:
    """One bridge candidate: coefficients theta at step h."""

    theta: np.ndarray
    step: int

    def __post_init__(self):
        arr = np.asarray(self.theta, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "theta", arr)

    def norm(self) -> float:
        return float(np.linalg.norm(self.theta))


def zero_bridge(dim: int, step: int) -> LinearBridge:
    return LinearBridge(theta=np.zeros(dim), step=step)


# -- per-step data arrays ----------------------------------------------------

class StepArrays(NamedTuple):
    """Per-trajectory pieces of the step-h residual, precomputed once."""

    phi_aw: np.ndarray  # (n, d)  phi(A_h, W_h)
    sum_phi_next: np.ndarray  # (n, d)  sum_a' phi(a', W_{h+1}); zeros at h=H
    pi_vals: np.ndarray  # (n,)  pi_h(A_h | O_h, window)
    rewards: np.ndarray  # (n,)
    nu_az: np.ndarray  # (n, d)  nu(A_h, Z_h)


def step_arrays(dataset: OfflineDataset, policy: TargetPolicy, h: int,
                fm: FeatureMap) -> StepArrays:
    n, H = dataset.n, dataset.horizon
    A = dataset.act[:, h - 1]
    W = dataset.obs[:, h - 1]
    Z = dataset.z_values(policy.history_class, h)
    windows = dataset.window_atoms(policy.history_class, h)

    cache: dict = {}
    pi_vals = np.empty(n)
    for i in range(n):
        key = (W[i], windows[i])
        row = cache.get(key)
        if row is None:
            row = policy.form.probs(h, int(W[i]), windows[i])
            cache[key] = row
        pi_vals[i] = row[A[i]]

    phi_aw = fm.phi_table[A, W]
    nu_az = fm.nu_table[A, Z]
    if h < H:
        W_next = dataset.obs[:, h]
        sum_phi_next = fm.phi_table[:, W_next, :].sum(axis=0)
    else:
        sum_phi_next = np.zeros((n, fm.dim))
    return StepArrays(phi_aw=phi_aw, sum_phi_next=sum_phi_next,
                      pi_vals=pi_vals, rewards=np.asarray(dataset.rew[:, h - 1]),
                      nu_az=nu_az)


# -- residual samples ---------------------------------------------------------

class ResidualSample(NamedTuple):
    varsigma: float
    nu: np.ndarray


@dataclass(frozen=True)
class ResidualBatch:
    """Per-trajectory residual scalars with their dual feature rows."""

    varsigma: np.ndarray  # (n,)
    nu: np.ndarray  # (n, d)

    def __len__(self):
        return self.varsigma.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield ResidualSample(float(self.varsigma[i]), self.nu[i])

    def bound_violations(self, m_b: float) -> int:
        """Count of samples with |varsigma| above the 2 * M_B class bound."""
        return int(np.sum(np.abs(self.varsigma) > 2.0 * m_b + 1e-12))


def residuals(dataset: OfflineDataset, policy: TargetPolicy,
              b_h: LinearBridge, b_next: LinearBridge | None, h: int,
              fm: FeatureMap, gamma: float = 1.0,
              arrays: StepArrays | None = None) -> ResidualBatch:
    """One residual sample per trajectory at step h.

    varsigma = b_h(A, W) - R * pi - gamma * sum_a' b_{h+1}(a', W') * pi,
    with the continuation forced to zero at the terminal step.
    """
    arr = arrays if arrays is not None else step_arrays(dataset, policy, h, fm)
    cont = arr.sum_phi_next @ b_next.theta if b_next is not None else 0.0
    varsigma = (arr.phi_aw @ b_h.theta
                - arr.rewards * arr.pi_vals
                - gamma * cont * arr.pi_vals)
    return ResidualBatch(varsigma=varsigma, nu=arr.nu_az)


# -- inner maximization --------------------------------------------------------

class InnerMax(NamedTuple):
    value: float
    omega: np.ndarray
    constraint_active: bool
    ridge: float


def _secular_root(evals: np.ndarray, v_coords: np.ndarray, radius: float,
                  tol: float = SECULAR_TOL) -> float:
    """Multiplier mu >= 0 with ||(diag(evals) + mu I)^-1 v|| = radius.

    Assumes the norm at mu = 0 exceeds radius; the norm is strictly
    decreasing in mu, so plain bisection converges.
    """
    lo = 0.0
    hi = float(np.linalg.norm(v_coords)) / radius
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        norm = np.linalg.norm(v_coords / (evals + mid))
        if norm > radius:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def inner_max_from_moments(u_hat: np.ndarray, sigma_hat: np.ndarray,
                           lam: float, L_g: float,
                           ridge_scale: float = RIDGE_SCALE,
                           eig: tuple | None = None) -> InnerMax:
    """Maximize u'w - lam * w' Sigma w over the L_g ball, exactly.

    Sigma is ridged by ridge_scale * trace / d; the unconstrained optimum is
    Sigma^-1 u / (2 lam), and a binding norm constraint is resolved on the
    boundary through the secular equation in Sigma's eigenbasis.
    """
    d = u_hat.shape[0]
    if eig is None:
        ridge = ridge_scale * float(np.trace(sigma_hat)) / d
        if not np.isfinite(ridge) or ridge <= 0.0:
            raise DegenerateDual("dual second-moment matrix has zero trace")
        evals, evecs = np.linalg.eigh(sigma_hat + ridge * np.eye(d))
    else:
        ridge, evals, evecs = eig
    if evals[0] <= 0.0:
        raise DegenerateDual("dual second-moment matrix is singular")

    u_rot = evecs.T @ u_hat
    omega_rot = u_rot / (2.0 * lam * evals)
    active = bool(np.linalg.norm(omega_rot) > L_g)
    if active:
        mu = _secular_root(2.0 * lam * evals, u_rot, L_g)
        omega_rot = u_rot / (2.0 * lam * evals + mu)
    value = float(u_rot @ omega_rot - lam * np.sum(evals * omega_rot ** 2))
    return InnerMax(value=value, omega=evecs @ omega_rot,
                    constraint_active=active, ridge=ridge)


def inner_max(samples: ResidualBatch, lam: float, L_g: float,
              ridge_scale: float = RIDGE_SCALE) -> InnerMax:
    """Empirical dual maximization from residual samples."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    n = len(samples)
    u_hat = samples.nu.T @ samples.varsigma / n
    sigma_hat = samples.nu.T @ samples.nu / n
    return inner_max_from_moments(u_hat, sigma_hat, lam, L_g,
                                  ridge_scale=ridge_scale)


# -- outer minimization ---------------------------------------------------------

@dataclass(frozen=True)
class MinimaxFit:
    """Fitted bridge at one step with its achieved inner-max value."""

    step: int
    bridge: LinearBridge
    m_hat: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"step": self.step, "theta": self.bridge.theta.tolist(),
                "m_hat": self.m_hat, "diagnostics": dict(self.diagnostics)}


class StepMoments(NamedTuple):
    """Dual-weighted moments sufficient for every (b_h, b_next) pair.

    u_hat(theta, theta_next) = A_mat @ theta - c0 - gamma * C_mat @ theta_next.
    """

    A_mat: np.ndarray  # (d, d)  mean nu phi(A, W)'
    c0: np.ndarray  # (d,)  mean nu R pi
    C_mat: np.ndarray  # (d, d)  mean nu pi sum_phi_next'
    sigma: np.ndarray  # (d, d)  mean nu nu'
    fhat_vec: np.ndarray  # (d,)  gradient of F_hat in theta_1


def step_moments(dataset: OfflineDataset, policy: TargetPolicy, h: int,
                 fm: FeatureMap, gamma: float,
                 arrays: StepArrays | None = None) -> StepMoments:
    arr = arrays if arrays is not None else step_arrays(dataset, policy, h, fm)
    n = dataset.n
    A_mat = arr.nu_az.T @ arr.phi_aw / n
    c0 = arr.nu_az.T @ (arr.rewards * arr.pi_vals) / n
    C_mat = arr.nu_az.T @ (arr.pi_vals[:, None] * arr.sum_phi_next) / n
    W1 = dataset.obs[:, 0]
    fhat_vec = fm.phi_table[:, W1, :].sum(axis=0).mean(axis=0)
    return StepMoments(A_mat=A_mat, c0=c0, C_mat=C_mat,
                       sigma=arr.nu_az.T @ arr.nu_az / n, fhat_vec=fhat_vec)


def _dual_eig(sigma: np.ndarray, ridge_scale: float):
    d = sigma.shape[0]
    ridge = ridge_scale * float(np.trace(sigma)) / d
    if not np.isfinite(ridge) or ridge <= 0.0:
        raise DegenerateDual("dual second-moment matrix has zero trace")
    evals, evecs = np.linalg.eigh(sigma + ridge * np.eye(d))
    return ridge, evals, evecs


def fit_step(dataset: OfflineDataset, policy: TargetPolicy,
             b_next: LinearBridge | None, lam: float, L_g: float, L_b: float,
             h: int, fm: FeatureMap, gamma: float = 1.0,
             ridge_scale: float = RIDGE_SCALE,
             moments: StepMoments | None = None) -> MinimaxFit:
    """Closed-form outer minimization at step h given the continuation.

    With the dual ball slack, the objective in theta is the ridged quadratic
    (A theta - c)' Sigma^-1 (A theta - c) / (4 lam); the norm bound on theta
    is enforced exactly on the boundary via the secular equation. The
    returned m_hat honors the dual ball.
    """
    mom = moments if moments is not None else step_moments(
        dataset, policy, h, fm, gamma)
    c_vec = mom.c0 + (gamma * (mom.C_mat @ b_next.theta)
                      if b_next is not None else 0.0)
    ridge, evals, evecs = _dual_eig(mom.sigma, ridge_scale)
    # Sigma^-1 via the eigen decomposition shared with the dual solve
    sigma_inv = evecs @ ((1.0 / evals)[:, None] * evecs.T)
    P = mom.A_mat.T @ sigma_inv @ mom.A_mat
    b_lin = mom.A_mat.T @ sigma_inv @ c_vec
    p_ridge = ridge_scale * float(np.trace(P)) / fm.dim
    if not np.isfinite(p_ridge) or p_ridge <= 0.0:
        raise DegeneratePrimal("primal normal matrix has zero trace")
    Pr = P + p_ridge * np.eye(fm.dim)
    theta = np.linalg.solve(Pr, b_lin)
    theta_active = bool(np.linalg.norm(theta) > L_b)
    if theta_active:
        p_evals, p_evecs = np.linalg.eigh(Pr)
        if p_evals[0] <= 0.0:
            raise DegeneratePrimal("primal normal matrix is singular")
        v = p_evecs.T @ b_lin
        mu = _secular_root(p_evals, v, L_b)
        theta = p_evecs @ (v / (p_evals + mu))
    u_hat = mom.A_mat @ theta - c_vec
    im = inner_max_from_moments(u_hat, mom.sigma, lam, L_g,
                                ridge_scale=ridge_scale,
                                eig=(ridge, evals, evecs))
    bridge = LinearBridge(theta=theta, step=h)
    action_sum = fm.action_sum_bound(theta)
    diag = {
        "dual_ridge": ridge,
        "primal_ridge": p_ridge,
        "theta_constraint_active": theta_active,
        "omega_constraint_active": im.constraint_active,
        "action_sum_bound": action_sum,
        "m_b_violated": action_sum > fm.M_B + 1e-9,
    }
    return MinimaxFit(step=h, bridge=bridge, m_hat=im.value, diagnostics=diag)


def fit_chain(dataset: OfflineDataset, policy: TargetPolicy, lam: float,
              fm: FeatureMap, L_g: float, L_b: float, gamma: float = 1.0,
              ridge_scale: float = RIDGE_SCALE) -> list:
    """Backward recursion of fit_step from the terminal step to the first.

    Returns fits indexed by step (element h-1 is step h); the terminal
    continuation is the zero function.
    """
    fits: list = [None] * dataset.horizon
    b_next = None
    for h in range(dataset.horizon, 0, -1):
        fit = fit_step(dataset, policy, b_next, lam, L_g, L_b, h, fm,
                       gamma=gamma, ridge_scale=ridge_scale)
        fits[h - 1] = fit
        b_next = fit.bridge
    return fits


# -- exact population counterparts ---------------------------------------------

def population_rmse(model, behavior, policy, b_h_table: np.ndarray,
                    b_next_table: np.ndarray | None, h: int,
                    laws: list | None = None) -> float:
    """Exact residual mean squared error E[(ell_h)^2] by enumeration."""
    from .oracle import bellman_residual_moments
    ell, den = bellman_residual_moments(model, behavior, policy,
                                        np.asarray(b_h_table),
                                        None if b_next_table is None
                                        else np.asarray(b_next_table),
                                        h, laws=laws)
    return float(np.sum(den * ell ** 2))


def population_phi_max(model, behavior, policy, b_h_table: np.ndarray,
                       b_next_table: np.ndarray | None, h: int, lam: float,
                       L_g: float, laws: list | None = None,
                       ridge_scale: float = 1e-14) -> float:
    """Population inner-max value with indicator dual features.

    Feeds the exact conditional residual moments through the same dual
    solver used on samples, so it exercises the optimization path while
    staying Monte-Carlo-free.
    """
    from .oracle import bellman_residual_moments
    ell, den = bellman_residual_moments(model, behavior, policy,
                                        np.asarray(b_h_table),
                                        None if b_next_table is None
                                        else np.asarray(b_next_table),
                                        h, laws=laws)
    u_hat = (den * ell).ravel()
    sigma = np.diag(den.ravel())
    return inner_max_from_moments(u_hat, sigma, lam, L_g,
                                  ridge_scale=ridge_scale).value
