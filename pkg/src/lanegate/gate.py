"""High-confidence policy improvement gate.

A candidate policy is scored on held-out trajectories collected under the
current policy: each trajectory contributes an importance-weighted
normalized return, and the candidate is adopted only when a
bias-corrected accelerated (BCa) bootstrap lower confidence bound on the
mean of those values exceeds the current policy's mean normalized
return. The comparison is strict, so ties keep the current policy.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .policy import GaussianPolicy, Trajectory

__all__ = [
    "NormalizationBounds",
    "GateDecision",
    "gaussian_cdf",
    "gaussian_quantile",
    "default_bounds",
    "normalized_return",
    "trajectory_log_weight",
    "importance_weighted_return",
    "bca_lower_bound",
    "current_performance",
    "improvement_gate",
    "LOG_WEIGHT_CLAMP",
]

LOG_WEIGHT_CLAMP = 30.0


def gaussian_cdf(x):
    """Standard normal CDF through the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=np.float64) / np.sqrt(2.0))


def gaussian_quantile(p):
    """Inverse standard normal CDF, exact to machine precision."""
    return special.ndtri(np.asarray(p, dtype=np.float64))


@dataclass(frozen=True)
class NormalizationBounds:
    """Return range [lower, upper] used to map sums into [-1, 1]."""
    lower: float
    upper: float

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError("upper bound must exceed lower bound")


def default_bounds(episode_steps: int, gamma: float, w_efficiency: float,
                   w_jerk: float, w_steer: float, w_front_risk: float,
                   w_rear_risk: float, w_collision: float,
                   jerk_max: float, steer_max: float) -> NormalizationBounds:
    """Analytic worst/best-case discounted sums for one episode.

    The best case earns the full efficiency term every step; the worst
    case pays every penalty at its per-step maximum plus one collision.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    horizon_sum = (1.0 - gamma ** episode_steps) / (1.0 - gamma)
    upper = horizon_sum * w_efficiency
    per_step_floor = (w_jerk * jerk_max + w_steer * steer_max
                      + w_front_risk + w_rear_risk)
    lower = horizon_sum * per_step_floor + w_collision
    return NormalizationBounds(lower=lower, upper=upper)


def normalized_return(rewards: np.ndarray, gamma: float,
                      bounds: NormalizationBounds) -> tuple[float, bool]:
    """Map the discounted reward sum affinely into [-1, 1].

    Returns (value, clamped); clamped is True when the raw sum fell
    outside the configured bounds and had to be cut off.
    """
    L = rewards.shape[0]
    total = float(np.dot(rewards, gamma ** np.arange(L)))
    span = bounds.upper - bounds.lower
    value = 2.0 * (total - bounds.lower) / span - 1.0
    clamped = value < -1.0 or value > 1.0
    return float(np.clip(value, -1.0, 1.0)), clamped


def trajectory_log_weight(logp_can: np.ndarray, logp_cur: np.ndarray,
                          clamp: float = LOG_WEIGHT_CLAMP) -> tuple[float, bool]:
    """Log importance weight of one trajectory, clamped symmetrically.

    The weight is the product over steps of candidate/current action
    densities, accumulated in log space for numerical stability.
    """
    logw = float(np.sum(logp_can) - np.sum(logp_cur))
    clamped = abs(logw) > clamp
    return float(np.clip(logw, -clamp, clamp)), clamped


def importance_weighted_return(traj: Trajectory, policy_can: GaussianPolicy,
                               gamma: float, bounds: NormalizationBounds,
                               clamp: float = LOG_WEIGHT_CLAMP) -> tuple[float, float, int]:
    """(x, log weight, clamp events) for one held-out trajectory.

    x is the importance weight times the normalized return, an unbiased
    sample of the candidate's expected normalized return as long as no
    clamp engages.
    """
    L = len(traj)
    logp_can = policy_can.log_density(traj.obs[:L], traj.actions)
    logw, w_clamped = trajectory_log_weight(logp_can, traj.log_probs, clamp)
    r_norm, r_clamped = normalized_return(traj.rewards, gamma, bounds)
    clamps = int(w_clamped) + int(r_clamped)
    return float(np.exp(logw) * r_norm), logw, clamps


def bca_lower_bound(x: np.ndarray, delta: float, n_bootstrap: int,
                    rng: np.random.Generator) -> float:
    """One-sided BCa bootstrap lower bound on the mean of x.

    With confidence delta the true mean exceeds the returned value. The
    bias correction comes from the proportion of bootstrap means below
    the sample mean, the acceleration from jackknife skewness. The
    adjusted percentile is taken from the sorted bootstrap means with
    linear interpolation. A degenerate all-equal sample returns the
    common value exactly. If the acceleration correction leaves its
    valid domain the most conservative percentile (the minimum) is used.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two values for a bootstrap bound")
    if not 0.5 < delta < 1.0:
        raise ValueError("delta must lie in (0.5, 1)")
    if n_bootstrap < 100:
        raise ValueError("n_bootstrap must be at least 100")
    if np.all(x == x[0]):
        return float(x[0])
    x_bar = float(x.mean())
    idx = rng.integers(0, n, size=(n_bootstrap, n))
    boot_means = x[idx].mean(axis=1)

    prop = float((boot_means < x_bar).sum()) / n_bootstrap
    prop = min(max(prop, 1.0 / n_bootstrap), 1.0 - 1.0 / n_bootstrap)
    z0 = float(gaussian_quantile(prop))

    loo_means = (n * x_bar - x) / (n - 1)
    d = loo_means.mean() - loo_means
    denom = 6.0 * float(np.sum(d * d)) ** 1.5
    accel = float(np.sum(d ** 3)) / denom if denom > 0.0 else 0.0

    u = z0 + float(gaussian_quantile(1.0 - delta))
    adj_denom = 1.0 - accel * u
    if adj_denom <= 0.0 or not np.isfinite(adj_denom):
        beta = 0.0
    else:
        beta = float(gaussian_cdf(z0 + u / adj_denom))
    return float(np.percentile(boot_means, 100.0 * beta, method="linear"))


def current_performance(trajectories: list[Trajectory], gamma: float,
                        bounds: NormalizationBounds) -> float:
    """Mean normalized return of the held-out set under its own policy."""
    if not trajectories:
        raise ValueError("no held-out trajectories")
    values = [normalized_return(t.rewards, gamma, bounds)[0] for t in trajectories]
    return float(np.mean(values))


@dataclass
class GateDecision:
    accepted: bool
    chosen: str                # "candidate" or "current"
    rho_lower: float
    rho_cur: float
    delta: float
    n: int
    log_omega_min: float
    log_omega_max: float
    clamp_count: int
    message: str = ""


def improvement_gate(held_out: list[Trajectory], policy_can: GaussianPolicy,
                     gamma: float, bounds: NormalizationBounds, delta: float,
                     n_bootstrap: int, rng: np.random.Generator,
                     clamp: float = LOG_WEIGHT_CLAMP) -> GateDecision:
    """Accept the candidate only when its lower confidence bound beats
    the current policy's mean normalized return (strictly).

    Fewer than two held-out trajectories auto-rejects with a diagnostic
    instead of attempting a bound.
    """
    n = len(held_out)
    if n < 2:
        return GateDecision(
            accepted=False, chosen="current", rho_lower=float("nan"),
            rho_cur=float("nan"), delta=delta, n=n,
            log_omega_min=float("nan"), log_omega_max=float("nan"),
            clamp_count=0, message="not enough held-out trajectories")
    xs = np.empty(n)
    logws = np.empty(n)
    clamp_count = 0
    for i, traj in enumerate(held_out):
        xs[i], logws[i], clamps = importance_weighted_return(
            traj, policy_can, gamma, bounds, clamp)
        clamp_count += clamps
    rho_lower = bca_lower_bound(xs, delta, n_bootstrap, rng)
    rho_cur = current_performance(held_out, gamma, bounds)
    accepted = bool(rho_lower > rho_cur)
    return GateDecision(
        accepted=accepted, chosen="candidate" if accepted else "current",
        rho_lower=rho_lower, rho_cur=rho_cur, delta=delta, n=n,
        log_omega_min=float(logws.min()), log_omega_max=float(logws.max()),
        clamp_count=clamp_count)
