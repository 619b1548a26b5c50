"""Learners, reward shaping and the training loop."""
# ruff: noqa: F401
from .dqn import (
    DqnConfig, DqnLearner, ReplayBuffer, Transitions, ddqn_loss_and_grad, ddqn_targets,
    ddqn_update, duel_q_values, dueling_spec, epsilon_at, q_network, soft_update,
)
from .penalty import (
    LPPO_THRESHOLDS, LagrangianState, PenaltyMode, apply_penalty, lagrangian_reward,
    lagrangian_step,
)
from .ppo import (
    NonFiniteLoss, PpoBatch, PpoConfig, PpoLearner, PpoLoss, RolloutBuffer, build_batch, gae,
    greedy_action, log_softmax, normalize_advantages, policy_step, ppo_loss_and_grads, ppo_update,
)
from .train import AGENT_KINDS, METRIC_COLUMNS, TrainConfig, TrainResult, read_metrics, train, write_metrics
