"""Reward shaping: indicator-cost and violation penalties, Lagrangian multiplier."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace


class PenaltyMode(str, enum.Enum):
    NONE = "none"
    COST = "cost"
    VIOLATION = "violation"

    @classmethod
    def parse(cls, value) -> "PenaltyMode":
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown penalty mode {value!r}; expected none, cost or violation")


def _check_omega(omega: float):
    if not math.isfinite(omega) or omega < 0:
        raise ValueError(f"omega must be finite and >= 0, got {omega}")


def apply_penalty(reward: float, cost_flag: float, violation: float, mode, omega: float = 1.0) -> float:
    """Shaped reward ``reward - omega * Z`` where Z is the cost flag or the violation."""
    _check_omega(omega)
    mode = PenaltyMode.parse(mode)
    if mode is PenaltyMode.NONE:
        return reward
    if mode is PenaltyMode.COST:
        if cost_flag not in (0, 1):
            raise ValueError(f"cost flag must be 0 or 1, got {cost_flag}")
        return reward - omega * cost_flag
    if not 0.0 <= violation <= 1.0:
        raise ValueError(f"violation must lie in [0, 1], got {violation}")
    return reward - omega * violation


# Cost thresholds per task for the constrained baseline.
LPPO_THRESHOLDS = {
    "Fixed_obs_T": 0.48,
    "Dynamic_obs_T": 0.98,
    "Fixed_obs_NT": 4.5,
    "Dynamic_obs_NT": 11.0,
}


@dataclass(frozen=True)
class LagrangianState:
    cost_threshold: float
    multiplier: float = 1.0
    multiplier_lr: float = 0.05

    def __post_init__(self):
        if self.multiplier < 0:
            raise ValueError("multiplier must be >= 0")
        if self.multiplier_lr <= 0 or not math.isfinite(self.multiplier_lr):
            raise ValueError("multiplier_lr must be positive")
        if not math.isfinite(self.cost_threshold):
            raise ValueError("cost threshold must be finite")


def lagrangian_step(state: LagrangianState, episode_cost: float) -> tuple[LagrangianState, float]:
    """Projected ascent on the multiplier.  Returns the new state and its multiplier."""
    if episode_cost < 0:
        raise ValueError("episode cost must be >= 0")
    lam = max(0.0, state.multiplier + state.multiplier_lr * (episode_cost - state.cost_threshold))
    return replace(state, multiplier=lam), lam


def lagrangian_reward(reward, cost, multiplier: float):
    """Reward with the multiplier-weighted cost removed, rescaled by 1/(1+lambda)."""
    return (reward - multiplier * cost) / (1.0 + multiplier)
