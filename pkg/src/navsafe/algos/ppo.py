"""Clipped-surrogate PPO with GAE on plain numpy MLPs."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from ..mlp import AdamState, Gradient, Mlp, adam_step, backward_batch, forward_batch


class NonFiniteLoss(FloatingPointError):
    """Loss or gradient went NaN/inf; the update is aborted."""


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.9
    clip: float = 0.2
    gae_lambda: float = 0.97
    update_epochs: int = 10
    update_frequency: int = 5  # completed episodes per update
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    minibatch_size: int = 64
    lr: float = 3e-4
    max_grad_norm: float | None = 0.5
    hidden: int = 64

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.gae_lambda < 1.0:
            raise ValueError(f"gae_lambda must lie in [0, 1), got {self.gae_lambda}")
        if not self.clip > 0:
            raise ValueError("clip must be positive")
        if self.update_epochs < 1 or self.update_frequency < 1 or self.minibatch_size < 1:
            raise ValueError("epochs, update frequency and minibatch size must be >= 1")
        if self.entropy_coef < 0 or self.value_coef < 0 or self.lr <= 0:
            raise ValueError("coefficients must be >= 0 and lr > 0")


# -------------------------------------------------------------------- GAE
def gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Advantages and returns.  ``last_value`` bootstraps a truncated tail."""
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    dones = np.ascontiguousarray(dones, dtype=np.float64)
    if not (rewards.ndim == values.ndim == dones.ndim == 1):
        raise ValueError("rewards, values and dones must be 1-D")
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError(
            f"length mismatch: rewards {len(rewards)}, values {len(values)}, dones {len(dones)}"
        )
    if len(rewards) == 0:
        return np.zeros(0), np.zeros(0)
    return _kernels.gae(rewards, values, dones, float(last_value), float(gamma), float(lam))


# ------------------------------------------------------------------ policy
def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_step(actor: Mlp, obs, rng: np.random.Generator) -> tuple[int, float]:
    """Sample an action; returns (action, log-probability)."""
    logp = log_softmax(forward_batch(actor, np.asarray(obs, dtype=np.float64)[None])[0])
    p = np.exp(logp)
    a = int(rng.choice(len(p), p=p / p.sum()))
    return a, float(logp[a])


def greedy_action(actor: Mlp, obs) -> int:
    return int(np.argmax(forward_batch(actor, np.asarray(obs, dtype=np.float64)[None])[0]))


# ----------------------------------------------------------------- rollout
@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    rewards: list = field(default_factory=list)  # shaped
    raw_rewards: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    bootstraps: list = field(default_factory=list)  # V(s') on truncated episode ends, else 0

    def add(self, obs, action, logp, reward, raw_reward, cost, violation, value, done, bootstrap=0.0):
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.actions.append(int(action))
        self.logp.append(float(logp))
        self.rewards.append(float(reward))
        self.raw_rewards.append(float(raw_reward))
        self.costs.append(float(cost))
        self.violations.append(float(violation))
        self.values.append(float(value))
        self.dones.append(bool(done))
        self.bootstraps.append(float(bootstrap))

    def __len__(self) -> int:
        return len(self.actions)

    def clear(self):
        for v in vars(self).values():
            v.clear()


@dataclass
class PpoBatch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / max(float(adv.std()), 1e-8)


# -------------------------------------------------------------------- loss
@dataclass
class PpoLoss:
    total: float
    policy: float
    value: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_loss_and_grads(actor: Mlp, critic: Mlp, batch: PpoBatch, cfg: PpoConfig):
    """Loss report plus parameter gradients for actor and critic."""
    n = len(batch.actions)
    idx = np.arange(n)
    logits = forward_batch(actor, batch.obs)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    logp = logp_all[idx, batch.actions]
    ratio = np.exp(logp - batch.logp_old)
    A = batch.advantages
    s1 = ratio * A
    s2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * A
    policy_loss = -float(np.mean(np.minimum(s1, s2)))
    ent_rows = -(p * logp_all).sum(axis=1)
    entropy = float(ent_rows.mean())

    v = forward_batch(critic, batch.obs)[:, 0]
    err = v - batch.returns
    value_loss = float(np.mean(err * err))
    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    # the min picks the unclipped branch whenever s1 <= s2; otherwise it is flat in ratio
    d_ratio = np.where(s1 <= s2, -A / n, 0.0)
    d_logp = d_ratio * ratio
    g_logits = -p * d_logp[:, None]
    g_logits[idx, batch.actions] += d_logp
    # entropy: dH/dz_j = -p_j (log p_j + H)
    g_logits += (cfg.entropy_coef / n) * p * (logp_all + ent_rows[:, None])
    g_actor = backward_batch(actor, batch.obs, g_logits)
    g_critic = backward_batch(critic, batch.obs, (cfg.value_coef * 2.0 / n * err)[:, None])

    report = PpoLoss(
        total=total,
        policy=policy_loss,
        value=value_loss,
        entropy=entropy,
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
        approx_kl=float(np.mean(batch.logp_old - logp)),
    )
    return report, g_actor, g_critic


def clip_gradient(g: Gradient, max_norm: float | None) -> Gradient:
    if max_norm is None:
        return g
    norm = g.global_norm()
    return g.scaled(max_norm / norm) if norm > max_norm else g


@dataclass
class PpoLearner:
    actor: Mlp
    critic: Mlp
    actor_opt: AdamState
    critic_opt: AdamState

    @classmethod
    def create(cls, actor: Mlp, critic: Mlp) -> "PpoLearner":
        return cls(actor, critic, AdamState.for_net(actor), AdamState.for_net(critic))


def build_batch(rollout: RolloutBuffer, advantages: np.ndarray, returns: np.ndarray) -> PpoBatch:
    return PpoBatch(
        obs=np.stack(rollout.obs),
        actions=np.asarray(rollout.actions, dtype=np.int64),
        logp_old=np.asarray(rollout.logp),
        advantages=normalize_advantages(np.asarray(advantages, dtype=np.float64)),
        returns=np.asarray(returns, dtype=np.float64),
    )


def ppo_update(learner: PpoLearner, batch: PpoBatch, cfg: PpoConfig, rng: np.random.Generator):
    """Run ``update_epochs`` passes of shuffled minibatches.  Returns (learner, mean loss)."""
    n = len(batch.actions)
    if n == 0:
        raise ValueError("empty rollout")
    actor, critic = learner.actor, learner.critic
    a_opt, c_opt = learner.actor_opt, learner.critic_opt
    reports = []
    for epoch in range(cfg.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            j = order[start:start + cfg.minibatch_size]
            mb = PpoBatch(batch.obs[j], batch.actions[j], batch.logp_old[j],
                          batch.advantages[j], batch.returns[j])
            rep, ga, gc = ppo_loss_and_grads(actor, critic, mb, cfg)
            if not (np.isfinite(rep.total) and ga.is_finite() and gc.is_finite()):
                raise NonFiniteLoss(
                    f"non-finite PPO loss at epoch {epoch}, offset {start}: "
                    f"policy={rep.policy} value={rep.value} entropy={rep.entropy}"
                )
            actor, a_opt = adam_step(actor, clip_gradient(ga, cfg.max_grad_norm), a_opt, cfg.lr)
            critic, c_opt = adam_step(critic, clip_gradient(gc, cfg.max_grad_norm), c_opt, cfg.lr)
            reports.append(rep)
    mean = PpoLoss(*(float(np.mean([getattr(r, f) for r in reports])) for f in PpoLoss.__dataclass_fields__))
    return PpoLearner(actor, critic, a_opt, c_opt), mean
