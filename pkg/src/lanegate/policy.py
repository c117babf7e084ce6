"""Stochastic policy, value function, losses, and candidate training.

The actor is a diagonal Gaussian over raw actions: means come from a
DenseNet, the log standard deviations are free state-independent
parameters. Raw actions live in scaled units (one unit is half the
physical command range); densities are always evaluated on the raw,
pre-clamp values. The environment applies the physical clamps.

Losses return analytic gradients so the whole training path is
finite-difference checkable.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .nets import DenseNet, NonFiniteGradientError, OptimizerState

__all__ = [
    "RlConfig",
    "GaussianPolicy",
    "ValueFunction",
    "Trajectory",
    "ReplayBuffer",
    "TransitionBatch",
    "NonFiniteRatioError",
    "nstep_advantages",
    "actor_loss_and_grads",
    "critic_loss_and_grads",
    "train_candidate",
    "TrainStats",
]

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
ENTROPY_CONST = 0.5 * float(np.log(2.0 * np.pi * np.e))  # per dimension
ADV_STD_GUARD = 1e-8


class NonFiniteRatioError(ValueError):
    """Probability ratio of a batch is NaN or inf."""


@dataclass
class RlConfig:
    gamma: float = 0.995
    epsilon_clip: float = 0.2
    entropy_coef: float = 0.01
    epochs: int = 10
    batch_size: int = 64
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lookahead_T: int = 16
    sigma_init: float = 0.5
    target_kl: float | None = 0.015


def _gaussian_logp(act: np.ndarray, means: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    z = (act - means) / sigma
    return -0.5 * (z * z).sum(axis=-1) - np.log(sigma).sum() - 0.5 * act.shape[-1] * LOG_2PI


class GaussianPolicy:
    """Diagonal-Gaussian actor with a fixed observation scaling."""

    def __init__(self, net: DenseNet, log_sigma: np.ndarray, obs_scale: np.ndarray,
                 act_center: np.ndarray, act_half: np.ndarray):
        if net.out_dim != log_sigma.shape[0]:
            raise ValueError("log_sigma size does not match the network output")
        if obs_scale.shape != (net.in_dim,):
            raise ValueError("obs_scale size does not match the network input")
        self.net = net
        self.log_sigma = np.asarray(log_sigma, dtype=np.float64)
        self.obs_scale = np.asarray(obs_scale, dtype=np.float64)
        self.act_center = np.asarray(act_center, dtype=np.float64)
        self.act_half = np.asarray(act_half, dtype=np.float64)

    @classmethod
    def create(cls, layer_dims: list[int], rng: np.random.Generator,
               obs_scale: np.ndarray | None = None,
               act_center: np.ndarray | None = None,
               act_half: np.ndarray | None = None,
               sigma_init: float = 0.5) -> "GaussianPolicy":
        net = DenseNet.create(layer_dims, rng)
        d_act = layer_dims[-1]
        if obs_scale is None:
            obs_scale = np.ones(layer_dims[0])
        if act_center is None:
            act_center = np.zeros(d_act)
        if act_half is None:
            act_half = np.ones(d_act)
        log_sigma = np.full(d_act, np.log(sigma_init))
        return cls(net, log_sigma, np.asarray(obs_scale, dtype=np.float64),
                   np.asarray(act_center, dtype=np.float64),
                   np.asarray(act_half, dtype=np.float64))

    def parameters(self) -> list[np.ndarray]:
        return self.net.parameters() + [self.log_sigma]

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def mean_raw(self, obs: np.ndarray) -> np.ndarray:
        return self.net.forward(np.asarray(obs, dtype=np.float64) * self.obs_scale)

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        """Draw one raw action and its log density."""
        mean = self.mean_raw(obs)
        raw = mean + self.sigma * rng.standard_normal(mean.shape[0])
        logp = _gaussian_logp(raw, mean, self.sigma)
        return raw, float(logp)

    def sample_given_mean(self, mean: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        """Sampling split out so rollouts can batch the mean computation."""
        raw = mean + self.sigma * rng.standard_normal(mean.shape[0])
        return raw, float(_gaussian_logp(raw, mean, self.sigma))

    def log_density(self, obs: np.ndarray, act_raw: np.ndarray) -> np.ndarray:
        means = self.mean_raw(obs)
        return _gaussian_logp(np.asarray(act_raw, dtype=np.float64), means, self.sigma)

    def to_physical(self, raw: np.ndarray) -> np.ndarray:
        """Scaled units to physical command units (no clamping here)."""
        return self.act_center + self.act_half * np.asarray(raw, dtype=np.float64)

    def entropy(self) -> float:
        return float(ENTROPY_CONST * self.log_sigma.shape[0] + self.log_sigma.sum())

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.net.copy(), self.log_sigma.copy(), self.obs_scale.copy(),
                              self.act_center.copy(), self.act_half.copy())


class ValueFunction:
    """State-value estimator sharing the observation scaling scheme."""

    def __init__(self, net: DenseNet, obs_scale: np.ndarray):
        if net.out_dim != 1:
            raise ValueError("value network must have a single output")
        self.net = net
        self.obs_scale = np.asarray(obs_scale, dtype=np.float64)

    @classmethod
    def create(cls, layer_dims: list[int], rng: np.random.Generator,
               obs_scale: np.ndarray | None = None) -> "ValueFunction":
        if obs_scale is None:
            obs_scale = np.ones(layer_dims[0])
        return cls(DenseNet.create(layer_dims, rng), np.asarray(obs_scale, dtype=np.float64))

    def value(self, obs: np.ndarray) -> np.ndarray:
        out = self.net.forward(np.asarray(obs, dtype=np.float64) * self.obs_scale)
        return out[..., 0]

    def copy(self) -> "ValueFunction":
        return ValueFunction(self.net.copy(), self.obs_scale.copy())


@dataclass
class Trajectory:
    """One episode: L steps, with obs holding L+1 rows (final state last)."""
    obs: np.ndarray
    actions: np.ndarray        # raw actions, (L, d_act)
    log_probs: np.ndarray      # behavior-policy densities at collection time
    rewards: np.ndarray
    terminal: bool             # episode reached a true end (always the case here)
    collided: bool
    policy_tag: int            # identity of the policy that produced the data
    seed: int
    advantages: np.ndarray | None = None

    def __len__(self) -> int:
        return self.actions.shape[0]

    def discounted_return(self, gamma: float) -> float:
        L = self.rewards.shape[0]
        return float(np.dot(self.rewards, gamma ** np.arange(L)))


@dataclass
class TransitionBatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray           # 1.0 on the last transition of an episode
    advantages: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


class ReplayBuffer:
    """Ordered trajectory store for one side of the train/test split."""

    def __init__(self):
        self.trajectories: list[Trajectory] = []

    def __len__(self) -> int:
        return len(self.trajectories)

    def append(self, traj: Trajectory) -> None:
        self.trajectories.append(traj)

    def clear(self) -> None:
        self.trajectories = []

    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def policy_tags(self) -> set[int]:
        return {t.policy_tag for t in self.trajectories}

    def flatten(self) -> TransitionBatch:
        if not self.trajectories:
            raise ValueError("cannot flatten an empty buffer")
        obs, acts, logps, rews, nobs, done, advs = [], [], [], [], [], [], []
        for t in self.trajectories:
            if t.advantages is None:
                raise ValueError("trajectory lacks advantages")
            L = len(t)
            obs.append(t.obs[:L])
            nobs.append(t.obs[1:L + 1])
            acts.append(t.actions)
            logps.append(t.log_probs)
            rews.append(t.rewards)
            advs.append(t.advantages)
            d = np.zeros(L)
            d[-1] = 1.0
            done.append(d)
        return TransitionBatch(
            obs=np.concatenate(obs), actions=np.concatenate(acts),
            log_probs=np.concatenate(logps), rewards=np.concatenate(rews),
            next_obs=np.concatenate(nobs), done=np.concatenate(done),
            advantages=np.concatenate(advs),
        )


def nstep_advantages(traj: Trajectory, critic: ValueFunction, gamma: float, T: int) -> np.ndarray:
    """Lookahead advantage: discounted T-step reward sum plus a bootstrap
    value, truncated at the episode end with terminal value zero."""
    L = len(traj)
    values = critic.value(traj.obs)            # (L+1,)
    discounts = gamma ** np.arange(T)
    adv = np.empty(L)
    for t in range(L):
        k = min(T, L - t)
        total = float(np.dot(traj.rewards[t:t + k], discounts[:k]))
        if t + T < L:
            total += (gamma ** T) * values[t + T]
        adv[t] = total - values[t]
    return adv


def actor_loss_and_grads(policy: GaussianPolicy, obs: np.ndarray, act_raw: np.ndarray,
                         logp_old: np.ndarray, advantages: np.ndarray,
                         clip_eps: float, entropy_coef: float) -> tuple[float, list[np.ndarray]]:
    """Clipped-surrogate loss with an entropy bonus.

    Advantages enter as constants (no gradient flows through them).
    Returns (loss, gradients) with gradients matching policy.parameters().
    """
    n = obs.shape[0]
    scaled = np.asarray(obs, dtype=np.float64) * policy.obs_scale
    means, cache = policy.net.forward_cached(scaled)
    sigma = policy.sigma
    z = (act_raw - means) / sigma
    logp_new = -0.5 * (z * z).sum(axis=1) - policy.log_sigma.sum() - 0.5 * means.shape[1] * LOG_2PI
    ratio = np.exp(logp_new - logp_old)
    if not np.isfinite(ratio).all():
        raise NonFiniteRatioError("non-finite probability ratio in batch")
    surr_raw = ratio * advantages
    surr_clip = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    objective = np.minimum(surr_raw, surr_clip)
    entropy = ENTROPY_CONST * policy.log_sigma.shape[0] + policy.log_sigma.sum()
    loss = -float(objective.mean()) - entropy_coef * float(entropy)

    # d objective / d logp is ratio * A on the unclipped branch, else 0
    active = surr_raw <= surr_clip
    g_logp = np.where(active, ratio * advantages, 0.0)
    d_logp = -g_logp / n
    upstream = d_logp[:, None] * (z / sigma)
    grads = policy.net.backward(cache, upstream)
    d_log_sigma = (d_logp[:, None] * (z * z - 1.0)).sum(axis=0) - entropy_coef
    return loss, grads.arrays() + [d_log_sigma]


def critic_loss_and_grads(critic: ValueFunction, obs: np.ndarray, rewards: np.ndarray,
                          next_obs: np.ndarray, done: np.ndarray,
                          gamma: float) -> tuple[float, list[np.ndarray]]:
    """One-step temporal-difference loss with a constant target."""
    n = obs.shape[0]
    scaled = np.asarray(obs, dtype=np.float64) * critic.obs_scale
    v, cache = critic.net.forward_cached(scaled)
    v = v[:, 0]
    v_next = critic.value(next_obs)
    target = rewards + gamma * v_next * (1.0 - done)
    delta = target - v
    loss = 0.5 * float((delta * delta).mean())
    upstream = (-delta / n)[:, None]
    grads = critic.net.backward(cache, upstream)
    return loss, grads.arrays()


def standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / max(float(x.std()), ADV_STD_GUARD)


@dataclass
class TrainStats:
    actor_loss: float = 0.0
    critic_loss: float = 0.0
    batches: int = 0
    rejected_batches: int = 0
    approx_kl: float = 0.0
    kl_stopped: bool = False
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _approx_kl(policy: GaussianPolicy, obs, act, behavior_logp) -> float:
    """Estimated KL(behavior || policy) on a batch: mean[(g-1) - ln g]
    with g the density ratio at the sampled actions, behavior densities
    taken from the values recorded at collection time. Returns nan when
    the evaluation is non-finite so the caller falls through to the
    update path and its explicit error handling."""
    diff = np.asarray(policy.log_density(obs, act)) - np.asarray(behavior_logp)
    if not np.isfinite(diff).all():
        return float("nan")
    with np.errstate(over="ignore"):
        kl = np.expm1(diff) - diff
    return float(kl.mean())


def train_candidate(policy: GaussianPolicy, critic: ValueFunction, data: TransitionBatch,
                    cfg: RlConfig, opt_actor: OptimizerState, opt_critic: OptimizerState,
                    rng: np.random.Generator) -> TrainStats:
    """Refine the candidate in place: up to cfg.epochs passes of shuffled
    minibatches, actor and critic updated on each minibatch.

    A trust-region brake keeps the candidate within evaluating distance
    of the policy that collected the data: before each update the
    estimated KL from the recorded behavior densities to the current
    parameters is measured on the minibatch, and once it exceeds
    1.5 * target_kl refinement stops for this call. The first minibatch
    of a call is always applied, so a warm-started candidate parked at
    the edge of the trust region still creeps by one update per call
    instead of freezing outright.

    Batches with non-finite ratios or gradients are skipped and counted;
    an epoch in which every batch fails raises RuntimeError.
    """
    n = len(data)
    if n == 0:
        raise ValueError("empty training batch")
    stats = TrainStats()
    actor_losses, critic_losses = [], []
    stop = False
    for _ in range(cfg.epochs):
        if stop:
            break
        perm = rng.permutation(n)
        epoch_ok = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if cfg.target_kl is not None and stats.batches > 0:
                kl = _approx_kl(policy, data.obs[idx], data.actions[idx],
                                data.log_probs[idx])
                if np.isfinite(kl):
                    stats.approx_kl = kl
                    if kl > 1.5 * cfg.target_kl:
                        stats.kl_stopped = True
                        stop = True
                        break
            adv = standardize(data.advantages[idx])
            try:
                a_loss, a_grads = actor_loss_and_grads(
                    policy, data.obs[idx], data.actions[idx], data.log_probs[idx],
                    adv, cfg.epsilon_clip, cfg.entropy_coef)
                opt_actor.step(policy.parameters(), a_grads)
                c_loss, c_grads = critic_loss_and_grads(
                    critic, data.obs[idx], data.rewards[idx], data.next_obs[idx],
                    data.done[idx], cfg.gamma)
                opt_critic.step(critic.net.parameters(), c_grads)
            except (NonFiniteRatioError, NonFiniteGradientError) as err:
                stats.rejected_batches += 1
                log.warning("skipping batch: %s", err)
                continue
            epoch_ok += 1
            stats.batches += 1
            actor_losses.append(a_loss)
            critic_losses.append(c_loss)
        if epoch_ok == 0 and not stop:
            raise RuntimeError("every batch in an epoch was rejected as non-finite")
    stats.actor_loss = float(np.mean(actor_losses)) if actor_losses else float("nan")
    stats.critic_loss = float(np.mean(critic_losses)) if critic_losses else float("nan")
    stats.sigma = policy.sigma.copy()
    return stats
