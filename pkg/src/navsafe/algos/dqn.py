"""Dueling double DQN with a ring replay buffer and soft target updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mlp import AdamState, Mlp, MlpSpec, ShapeError, adam_step, backward_batch, forward_batch
from .ppo import clip_gradient


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.99
    tau: float = 0.05
    buffer_capacity: int = 10_000
    batch_size: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.2  # of total steps spent annealing
    lr: float = 3e-4
    learning_starts: int = 64
    train_every: int = 1
    max_grad_norm: float | None = 10.0
    hidden: int = 64

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.buffer_capacity < self.batch_size or self.batch_size < 1:
            raise ValueError("buffer capacity must be >= batch size >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not (0.0 <= self.eps_end <= 1.0 and 0.0 <= self.eps_start <= 1.0):
            raise ValueError("epsilon values must lie in [0, 1]")
        if not 0.0 <= self.eps_fraction <= 1.0:
            raise ValueError("eps_fraction must lie in [0, 1]")


def epsilon_at(step: int, total_steps: int, cfg: DqnConfig) -> float:
    """Linear anneal from eps_start to eps_end over the first eps_fraction of training."""
    horizon = cfg.eps_fraction * total_steps
    if horizon <= 0 or step >= horizon:
        return cfg.eps_end
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * step / horizon


def dueling_spec(n_inputs: int = 13, n_actions: int = 5, hidden: int = 64) -> MlpSpec:
    """Shared trunk; output 0 is the state value, outputs 1.. the advantage head."""
    return MlpSpec((n_inputs, hidden, hidden, 1 + n_actions))


def duel_q_values(out: np.ndarray) -> np.ndarray:
    out = np.asarray(out, dtype=np.float64)
    if out.shape[-1] < 2:
        raise ShapeError("need one value output and at least one advantage output")
    v = out[..., :1]
    adv = out[..., 1:]
    return v + adv - adv.mean(axis=-1, keepdims=True)


def q_network(dueling: Mlp) -> Mlp:
    """Plain Q-network computing the dueling aggregation in its last layer."""
    n = dueling.spec.n_outputs - 1
    agg = np.zeros((n + 1, n))
    agg[0, :] = 1.0
    agg[1:, :] = np.eye(n) - 1.0 / n
    sizes = (*dueling.spec.layer_sizes[:-1], n)
    return Mlp(MlpSpec(sizes), [*dueling.weights[:-1], dueling.weights[-1] @ agg],
               [*dueling.biases[:-1], dueling.biases[-1] @ agg])


class ReplayBuffer:
    """Fixed-capacity FIFO of (s, a, r, s', done)."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, s, a, r, s_next, done):
        i = self._next
        self.obs[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_obs[i] = s_next
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> "Transitions":
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from {self._size} transitions")
        j = rng.integers(0, self._size, size=batch_size)
        return Transitions(self.obs[j], self.actions[j], self.rewards[j], self.next_obs[j], self.dones[j])


@dataclass
class Transitions:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray


def ddqn_targets(online: Mlp, target: Mlp, batch: Transitions, gamma: float) -> np.ndarray:
    """Online net picks the next action, target net evaluates it."""
    a_next = np.argmax(duel_q_values(forward_batch(online, batch.next_obs)), axis=1)
    q_next = duel_q_values(forward_batch(target, batch.next_obs))[np.arange(len(a_next)), a_next]
    return batch.rewards + gamma * (1.0 - batch.dones) * q_next


def ddqn_loss_and_grad(online: Mlp, target: Mlp, batch: Transitions, gamma: float):
    n = len(batch.actions)
    idx = np.arange(n)
    y = ddqn_targets(online, target, batch, gamma)
    out = forward_batch(online, batch.obs)
    q = duel_q_values(out)[idx, batch.actions]
    err = q - y
    loss = float(np.mean(err * err))
    g = 2.0 * err / n
    n_act = out.shape[1] - 1
    g_out = np.empty_like(out)
    g_out[:, 0] = g
    g_out[:, 1:] = -g[:, None] / n_act
    g_out[idx, 1 + batch.actions] += g
    return loss, backward_batch(online, batch.obs, g_out)


def soft_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    return Mlp(
        target.spec,
        [tau * w + (1.0 - tau) * t for w, t in zip(online.weights, target.weights)],
        [tau * b + (1.0 - tau) * t for b, t in zip(online.biases, target.biases)],
    )


@dataclass
class DqnLearner:
    online: Mlp
    target: Mlp
    opt: AdamState

    @classmethod
    def create(cls, online: Mlp) -> "DqnLearner":
        return cls(online, online.copy(), AdamState.for_net(online))


def ddqn_update(learner: DqnLearner, replay: ReplayBuffer, cfg: DqnConfig,
                rng: np.random.Generator) -> tuple[DqnLearner, float]:
    if len(replay) < cfg.batch_size:
        raise ValueError("replay holds fewer transitions than one batch")
    batch = replay.sample(cfg.batch_size, rng)
    loss, grad = ddqn_loss_and_grad(learner.online, learner.target, batch, cfg.gamma)
    if not np.isfinite(loss) or not grad.is_finite():
        raise FloatingPointError(f"non-finite DDQN loss {loss}")
    online, opt = adam_step(learner.online, clip_gradient(grad, cfg.max_grad_norm), learner.opt, cfg.lr)
    target = soft_update(learner.target, online, cfg.tau)
    return DqnLearner(online, target, opt), loss
