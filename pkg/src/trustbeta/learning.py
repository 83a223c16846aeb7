"""Policy and reward learning from demonstrations.

Behavior cloning fits the Gaussian policy by a variance-weighted negative
log-likelihood whose variance penalty weight ``eta`` grows linearly over the
epochs. The reward network is fitted by maximum entropy: demonstrations
should score higher than what the current policy produces, with the
partition function estimated by importance sampling over policy rollouts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import Trajectory, seeded_rng
from .diffnet import (
    Adam,
    PolicyNet,
    RewardNet,
    gaussian_logpdf,
    init_params,
    policy_spec,
    reward_spec,
)
from .env import TaskConfig, reset, rollout_batch
from .errors import DomainError, NumericalError, TrainingDivergence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    K: int = 300
    batch_size: int = 64
    eta_min: float = 0.05
    eta_max: float = 1.00
    M: int = 32
    N: int = 30
    lr_policy: float = 1e-3
    lr_reward: float = 1e-4
    maxent_steps: int = 1
    hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 < self.eta_min <= self.eta_max:
            raise DomainError("need 0 < eta_min <= eta_max")
        if self.K < 1 or self.M < 1 or self.N < 1 or self.batch_size < 1 or self.maxent_steps < 0:
            raise DomainError("K, M, N and batch_size must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def eta_schedule(k: int, config: TrainConfig) -> float:
    """Variance-penalty weight at epoch k: linear from eta_min (k=0) to eta_max (k=K)."""
    if not 0 <= k <= config.K:
        raise DomainError(f"epoch {k} outside 0..{config.K}")
    if k == config.K:
        return float(config.eta_max)
    return config.eta_min + (k / config.K) * (config.eta_max - config.eta_min)


# ---------------------------------------------------------------------------
# Behavior cloning


def bc_loss(policy: PolicyNet, states, actions, eta: float):
    """0.5 * mean[eta * log var(s) + |a - mu(s)|^2 / var(s)] and its gradient
    w.r.t. the policy parameters."""
    states = np.atleast_2d(states)
    actions = np.atleast_2d(actions)
    if len(states) == 0:
        raise DomainError("empty batch")
    out, cache = policy.forward(states, return_cache=True)
    mu, logvar = out["mu"], out["logvar"][:, 0]
    inv_var = np.exp(-logvar)
    diff = actions - mu
    sq = np.sum(diff * diff, axis=1)
    B = len(states)
    loss = 0.5 * float(np.mean(eta * logvar + sq * inv_var))
    g_mu = -(diff * inv_var[:, None]) / B
    g_logvar = 0.5 * (eta - sq * inv_var) / B
    grad, _ = policy.backward(cache, {"mu": g_mu, "logvar": g_logvar[:, None]})
    return loss, grad


def demo_pairs(demos: Sequence[Trajectory]):
    return np.concatenate([d.states for d in demos]), np.concatenate([d.actions for d in demos])


# ---------------------------------------------------------------------------
# Reward and partition function


def _stack_steps(trajs):
    states = np.concatenate([t.states for t in trajs])
    actions = np.concatenate([t.actions for t in trajs])
    lengths = [len(t) for t in trajs]
    return states, actions, lengths


def step_rewards(reward: RewardNet, traj: Trajectory) -> np.ndarray:
    return reward.reward(traj.states, traj.actions)


def trajectory_reward(reward: RewardNet, traj: Trajectory) -> float:
    """Mean per-step reward over the trajectory; lies in (-1, 1)."""
    return float(np.mean(step_rewards(reward, traj)))


def trajectory_rewards(reward: RewardNet, trajs: Sequence[Trajectory]) -> np.ndarray:
    states, actions, lengths = _stack_steps(trajs)
    r = reward.reward(states, actions)
    return np.array([seg.mean() for seg in np.split(r, np.cumsum(lengths)[:-1])])


def trajectory_log_prob(policy: PolicyNet, traj: Trajectory) -> float:
    """log p(traj; theta) = sum_t log N(a_t; mu(s_t), var(s_t) I). The start
    state density is left out."""
    mu, var = policy.mean_var(traj.states)
    return float(np.sum(gaussian_logpdf(traj.actions, mu, var)))


def trajectory_log_probs(policy: PolicyNet, trajs: Sequence[Trajectory]) -> np.ndarray:
    states, actions, lengths = _stack_steps(trajs)
    mu, var = policy.mean_var(states)
    lp = gaussian_logpdf(actions, mu, var)
    return np.array([seg.sum() for seg in np.split(lp, np.cumsum(lengths)[:-1])])


def log_importance_estimate(returns, log_probs) -> float:
    """log of (1/M) sum_j exp(R_j) / p_j, computed with log-sum-exp."""
    returns = np.asarray(returns, dtype=np.float64)
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if returns.shape != log_probs.shape or returns.size == 0:
        raise DomainError("need matching, non-empty returns and log densities")
    bad = ~np.isfinite(log_probs)
    if np.any(bad):
        idx = np.flatnonzero(bad)
        raise NumericalError(
            f"non-finite trajectory log-density for samples {idx.tolist()[:5]} "
            f"(values {log_probs[idx][:5].tolist()})"
        )
    return float(logsumexp(returns - log_probs) - math.log(returns.size))


def log_partition_estimate(reward: RewardNet, policy: PolicyNet, rollouts: Sequence[Trajectory]) -> float:
    if len(rollouts) < 1:
        raise DomainError("need at least one rollout")
    return log_importance_estimate(trajectory_rewards(reward, rollouts), trajectory_log_probs(policy, rollouts))


def partition_estimate(reward: RewardNet, policy: PolicyNet, rollouts: Sequence[Trajectory]) -> float:
    """Importance-sampled partition function (1/M) sum_j exp(R(xi_j)) / p(xi_j)."""
    return math.exp(log_partition_estimate(reward, policy, rollouts))


def maxent_loss(reward: RewardNet, demos, rollouts, policy: PolicyNet = None, rollout_log_probs=None):
    """-mean_demos R(xi) + log Z and its gradient w.r.t. the reward parameters.

    Rollouts are fixed samples: their log-densities under the policy carry no
    gradient, so they may be passed precomputed via ``rollout_log_probs``.
    """
    if len(demos) == 0:
        raise DomainError("need at least one demonstration")
    if rollout_log_probs is None:
        rollout_log_probs = trajectory_log_probs(policy, rollouts)
    trajs = list(demos) + list(rollouts)
    states, actions, lengths = _stack_steps(trajs)
    x = np.concatenate([states, actions], axis=1)
    out, cache = reward.forward(x, return_cache=True)
    r = out["r"][:, 0]
    splits = np.split(r, np.cumsum(lengths)[:-1])
    R = np.array([seg.mean() for seg in splits])
    n = len(demos)
    R_demo, R_roll = R[:n], R[n:]
    log_z = log_importance_estimate(R_roll, rollout_log_probs)
    loss = -float(np.mean(R_demo)) + log_z

    logw = R_roll - np.asarray(rollout_log_probs)
    w = np.exp(logw - logsumexp(logw))
    traj_coef = np.concatenate([np.full(n, -1.0 / n), w])
    upstream = np.repeat(traj_coef / np.array(lengths), lengths)
    grad, _ = reward.backward(cache, {"r": upstream[:, None]})
    return loss, grad


# ---------------------------------------------------------------------------
# Stage-2 training loop


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "eta", "bc_loss", "maxent_loss", "mean_demo_R", "mean_rollout_R")

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for row in self.rows:
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in self.COLUMNS))
        return "\n".join(lines) + "\n"


def train_stage2(demos: Sequence[Trajectory], config: TrainConfig, task: TaskConfig):
    """Alternate one behavior-cloning epoch (eta from :func:`eta_schedule`)
    with ``maxent_steps`` reward updates on M fresh stochastic rollouts, for
    k = 0..K. Returns frozen copies of the policy and reward networks plus
    the per-epoch report."""
    demos = list(demos)
    if not demos:
        raise DomainError("no demonstrations")
    for d in demos:
        if len(d) != task.T:
            raise DomainError(f"demonstration has {len(d)} steps, expected {task.T}")
    rng = seeded_rng(config.seed)
    init_rng, shuffle_rng, roll_rng = rng.spawn(3)
    policy = PolicyNet(policy_spec(config.hidden), init_params(policy_spec(config.hidden), init_rng))
    reward = RewardNet(reward_spec(config.hidden), init_params(reward_spec(config.hidden), init_rng))
    opt_pi = Adam(policy.spec.n_params, lr=config.lr_policy)
    opt_r = Adam(reward.spec.n_params, lr=config.lr_reward)
    S, A = demo_pairs(demos)
    report = TrainReport()
    last_good = (policy.params.copy(), reward.params.copy())

    for k in range(config.K + 1):
        eta = eta_schedule(k, config)
        order = shuffle_rng.permutation(len(S))
        losses = []
        for i in range(0, len(S), config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, grad = bc_loss(policy, S[idx], A[idx], eta)
            losses.append(loss * len(idx))
            opt_pi.step(policy.params, grad)
        bc = float(np.sum(losses) / len(S))

        starts = [reset(task, roll_rng) for _ in range(config.M)]
        rollouts = rollout_batch(policy, starts, task, roll_rng, stochastic=True)
        logp = trajectory_log_probs(policy, rollouts)
        me = float("nan")
        for _ in range(config.maxent_steps):
            me, grad = maxent_loss(reward, demos, rollouts, rollout_log_probs=logp)
            opt_r.step(reward.params, grad)
        if config.maxent_steps == 0:
            me, _ = maxent_loss(reward, demos, rollouts, rollout_log_probs=logp)

        if not (np.isfinite(bc) and np.isfinite(me) and np.all(np.isfinite(policy.params))
                and np.all(np.isfinite(reward.params))):
            raise TrainingDivergence(
                f"non-finite loss at epoch {k} (bc={bc}, maxent={me})",
                checkpoint={"epoch": k - 1, "policy": last_good[0], "reward": last_good[1]},
            )
        last_good = (policy.params.copy(), reward.params.copy())
        row = {
            "epoch": k,
            "eta": float(eta),
            "bc_loss": bc,
            "maxent_loss": me,
            "mean_demo_R": float(np.mean(trajectory_rewards(reward, demos))),
            "mean_rollout_R": float(np.mean(trajectory_rewards(reward, rollouts))),
        }
        report.rows.append(row)
        if k % 50 == 0 or k == config.K:
            log.info("epoch %d eta=%.3f bc=%.4f maxent=%.4f R_demo=%.3f R_roll=%.3f", k, eta, bc, me,
                     row["mean_demo_R"], row["mean_rollout_R"])

    policy.params.flags.writeable = False
    reward.params.flags.writeable = False
    return policy, reward, report
