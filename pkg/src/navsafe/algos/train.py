"""Single-seed training loop shared by PPO, Lagrangian PPO and dueling DDQN."""
from __future__ import annotations

import csv
import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .. import _kernels, mlp
from ..env import NavEnv, Outcome, make_task
from ..mlp import Mlp, MlpSpec, forward_batch
from ..properties import (
    DEFAULT_EPSILON,
    PropertySet,
    active_properties,
    approximate_violation,
    dump_properties,
    generate_online_property,
    merge_online,
    navigation_property_set,
)
from .dqn import DqnConfig, DqnLearner, ReplayBuffer, ddqn_update, dueling_spec, epsilon_at, q_network
from .penalty import (
    LPPO_THRESHOLDS,
    LagrangianState,
    PenaltyMode,
    apply_penalty,
    lagrangian_reward,
    lagrangian_step,
)
from .ppo import PpoConfig, PpoLearner, RolloutBuffer, build_batch, gae, policy_step, ppo_update

AGENT_KINDS = ("ppo", "lppo", "dueldqn")
METRIC_COLUMNS = (
    "step", "episode", "success_rate_1k", "cost_1k", "violation_1k", "reward_1k",
    "lambda", "active_property_count",
)


@dataclass(frozen=True)
class TrainConfig:
    agent: str = "ppo"
    task: str = "Fixed_obs_NT"
    penalty: str = "none"
    seed: int = 0
    total_steps: int = 10_000
    omega: float = 1.0
    samples: int = 1000  # m for the per-step estimate
    epsilon: float = DEFAULT_EPSILON
    online_properties: bool = True
    log_every: int = 1000
    window: int = 1000
    checkpoint_every: int = 0
    lppo_threshold: float | None = None
    multiplier_init: float = 1.0
    multiplier_lr: float = 0.05
    ppo: PpoConfig = field(default_factory=PpoConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ValueError(f"unknown agent {self.agent!r}; choose from {', '.join(AGENT_KINDS)}")
        mode = PenaltyMode.parse(self.penalty)
        object.__setattr__(self, "penalty", mode.value)
        if self.agent == "lppo" and mode is not PenaltyMode.NONE:
            raise ValueError("lppo shapes rewards with its own multiplier; use penalty 'none'")
        if self.agent == "lppo" and self.threshold() is None:
            raise ValueError(f"no default cost threshold for task {self.task}; set lppo_threshold")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.samples < 1 or self.log_every < 1 or self.window < 1:
            raise ValueError("samples, log_every and window must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if not math.isfinite(self.omega) or self.omega < 0:
            raise ValueError("omega must be finite and >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        make_task(self.task)  # raises on an unknown task

    def threshold(self) -> float | None:
        if self.lppo_threshold is not None:
            return float(self.lppo_threshold)
        return LPPO_THRESHOLDS.get(self.task)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {', '.join(sorted(unknown))}")
        if isinstance(d.get("ppo"), dict):
            d["ppo"] = PpoConfig(**d["ppo"])
        if isinstance(d.get("dqn"), dict):
            d["dqn"] = DqnConfig(**d["dqn"])
        return cls(**d)


@dataclass
class TrainResult:
    config: TrainConfig
    metrics: list[dict]
    unsafe_log: list[tuple[int, int]]  # (step, |P'| at that unsafe step)
    properties: PropertySet
    policy: Mlp
    nets: dict[str, Mlp]
    summary: dict


# ------------------------------------------------------------------ agents
class _PpoAgent:
    def __init__(self, cfg: TrainConfig, rng_init, rng_act, rng_upd):
        p = cfg.ppo
        actor = Mlp.init(MlpSpec.actor(hidden=p.hidden), rng_init)
        critic = Mlp.init(MlpSpec.critic(hidden=p.hidden), rng_init)
        self.learner = PpoLearner.create(actor, critic)
        self.cfg = cfg
        self.rollout = RolloutBuffer()
        self.rng_act = rng_act
        self.rng_upd = rng_upd
        self.episodes_in_rollout = 0
        self.updates = 0

    @property
    def policy(self) -> Mlp:
        return self.learner.actor

    def act(self, obs, step):
        a, logp = policy_step(self.learner.actor, obs, self.rng_act)
        return a, logp

    def value(self, obs) -> float:
        return float(forward_batch(self.learner.critic, np.asarray(obs)[None])[0, 0])

    def record(self, obs, a, logp, shaped, raw, cost, viol, next_obs, done, truncated):
        boot = self.value(next_obs) if truncated else 0.0
        self.rollout.add(obs, a, logp, shaped, raw, cost, viol, self.value(obs), done, boot)

    def gae_rewards(self) -> np.ndarray:
        return np.asarray(self.rollout.rewards)

    def end_episode(self, episode_cost: float):
        self.episodes_in_rollout += 1
        if self.episodes_in_rollout >= self.cfg.ppo.update_frequency:
            self._update()

    def _update(self):
        r = self.rollout
        p = self.cfg.ppo
        rewards = self.gae_rewards() + p.gamma * np.asarray(r.bootstraps)
        adv, ret = gae(rewards, r.values, r.dones, p.gamma, p.gae_lambda)
        self.learner, _ = ppo_update(self.learner, build_batch(r, adv, ret), p, self.rng_upd)
        r.clear()
        self.episodes_in_rollout = 0
        self.updates += 1

    @property
    def multiplier(self):
        return None

    def nets(self) -> dict[str, Mlp]:
        return {"policy": self.learner.actor, "critic": self.learner.critic}


class _LppoAgent(_PpoAgent):
    def __init__(self, cfg: TrainConfig, *rngs):
        super().__init__(cfg, *rngs)
        self.lagrange = LagrangianState(cfg.threshold(), cfg.multiplier_init, cfg.multiplier_lr)

    def end_episode(self, episode_cost: float):
        self.lagrange, _ = lagrangian_step(self.lagrange, episode_cost)
        super().end_episode(episode_cost)

    def gae_rewards(self) -> np.ndarray:
        r = self.rollout
        return lagrangian_reward(np.asarray(r.raw_rewards), np.asarray(r.costs), self.lagrange.multiplier)

    @property
    def multiplier(self):
        return self.lagrange.multiplier


class _DqnAgent:
    def __init__(self, cfg: TrainConfig, rng_init, rng_act, rng_upd):
        d = cfg.dqn
        self.cfg = cfg
        self.learner = DqnLearner.create(Mlp.init(dueling_spec(hidden=d.hidden), rng_init))
        self.replay = ReplayBuffer(d.buffer_capacity, self.learner.online.spec.n_inputs)
        self.rng_act = rng_act
        self.rng_upd = rng_upd
        self.updates = 0
        self.ticks = 0
        self._folded = None

    @property
    def policy(self) -> Mlp:
        if self._folded is None:
            self._folded = q_network(self.learner.online)
        return self._folded

    def act(self, obs, step):
        eps = epsilon_at(step, self.cfg.total_steps, self.cfg.dqn)
        if self.rng_act.random() < eps:
            return int(self.rng_act.integers(0, self.policy.spec.n_outputs)), 0.0
        q = forward_batch(self.policy, np.asarray(obs)[None])[0]
        return int(np.argmax(q)), 0.0

    def record(self, obs, a, logp, shaped, raw, cost, viol, next_obs, done, truncated):
        d = self.cfg.dqn
        self.replay.push(obs, a, shaped, next_obs, done and not truncated)
        self.ticks += 1
        if len(self.replay) >= max(d.learning_starts, d.batch_size) and self.ticks % d.train_every == 0:
            self.learner, _ = ddqn_update(self.learner, self.replay, d, self.rng_upd)
            self._folded = None
            self.updates += 1

    def end_episode(self, episode_cost: float):
        pass

    @property
    def multiplier(self):
        return None

    def nets(self) -> dict[str, Mlp]:
        return {"policy": self.policy, "dueling": self.learner.online}


def _make_agent(cfg: TrainConfig, seed: int):
    rngs = [np.random.default_rng([seed, i]) for i in (0, 1, 3)]
    return {"ppo": _PpoAgent, "lppo": _LppoAgent, "dueldqn": _DqnAgent}[cfg.agent](cfg, *rngs)


# ---------------------------------------------------------------- metrics
class _Window:
    """Running statistics over the last ``size`` steps."""

    def __init__(self, size: int):
        self.goals = deque(maxlen=size)
        self.fails = deque(maxlen=size)
        self.costs = deque(maxlen=size)
        self.viol = deque(maxlen=size)
        self.rewards = deque(maxlen=size)
        self.active = deque(maxlen=size)  # |P'| on unsafe steps, None otherwise

    def push(self, goal, fail, cost, viol, reward, active):
        self.goals.append(goal)
        self.fails.append(fail)
        self.costs.append(cost)
        self.viol.append(viol)
        self.rewards.append(reward)
        self.active.append(active)

    def row(self, step, episode, lam) -> dict:
        goals = sum(self.goals)
        attempts = goals + sum(self.fails)
        act = [a for a in self.active if a is not None]
        return {
            "step": step,
            "episode": episode,
            "success_rate_1k": goals / attempts if attempts else 0.0,
            "cost_1k": float(np.mean(self.costs)),
            "violation_1k": float(np.mean(self.viol)),
            "reward_1k": float(np.mean(self.rewards)),
            "lambda": "" if lam is None else lam,
            "active_property_count": float(np.mean(act)) if act else "",
        }


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def write_metrics(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
    return path


def read_metrics(path) -> list[dict]:
    out = []
    with Path(path).open(newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                if k in ("step", "episode"):
                    row[k] = int(v)
                else:
                    row[k] = float(v) if v != "" else None
            out.append(row)
    return out


# ------------------------------------------------------------------- train
def train(cfg: TrainConfig, out_dir=None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Run one seed.  With ``out_dir`` set, writes metrics.csv, unsafe_steps.csv,
    properties.jsonl, summary.json and checkpoints there."""
    t0 = time.perf_counter()
    seed = cfg.seed
    mode = PenaltyMode.parse(cfg.penalty)
    out = Path(out_dir) if out_dir is not None else None
    env = NavEnv(make_task(cfg.task, seed), seed=seed)
    agent = _make_agent(cfg, seed)
    rng_viol = np.random.default_rng([seed, 2])
    props = navigation_property_set()

    window = _Window(cfg.window)
    rows: list[dict] = []
    unsafe_log: list[tuple[int, int]] = []
    totals = dict(cost=0.0, goals=0, violation=0.0, reward=0.0, shaped=0.0)
    episode = 0
    ep_cost = 0.0

    obs = env.reset(seed) if cfg.total_steps > 0 else None
    for step in range(cfg.total_steps):
        a, logp = agent.act(obs, step)
        res = env.step(a)
        active_n = None
        if res.collision:
            active = active_properties(props, obs)
            if len(active) == 0 and cfg.online_properties:
                props = merge_online(props, generate_online_property(obs, a, cfg.epsilon))
                active = active_properties(props, obs)
            active_n = len(active)
            unsafe_log.append((step, active_n))
        viol = approximate_violation(agent.policy, props, obs, cfg.samples, rng_viol).value
        shaped = apply_penalty(res.reward, res.cost, viol, mode, cfg.omega)

        goal = res.outcome is Outcome.GOAL_REACHED
        truncated = res.done and res.outcome is not Outcome.COLLISION
        # an episode that ends without reaching the current goal counts as a failed attempt
        fail = res.done and not goal
        agent.record(obs, a, logp, shaped, res.reward, res.cost, viol, res.obs, res.done, truncated)

        totals["cost"] += res.cost
        totals["goals"] += int(goal)
        totals["violation"] += viol
        totals["reward"] += res.reward
        totals["shaped"] += shaped
        ep_cost += res.cost
        window.push(int(goal), int(fail), res.cost, viol, res.reward, active_n)

        if res.done:
            episode += 1
            agent.end_episode(ep_cost)
            ep_cost = 0.0
            obs = env.reset()
        else:
            obs = res.obs

        n = step + 1
        if n % cfg.log_every == 0:
            row = window.row(n, episode, agent.multiplier)
            rows.append(row)
            if progress is not None:
                progress(row)
        if out is not None and cfg.checkpoint_every and n % cfg.checkpoint_every == 0:
            _save_policy(agent.policy, out / "checkpoints" / f"policy_step{n}.npz", cfg, n)

    steps = cfg.total_steps
    act_counts = [k for _, k in unsafe_log]
    summary = {
        "steps": steps,
        "episodes": episode,
        "total_cost": totals["cost"],
        "total_goals": totals["goals"],
        "mean_cost": totals["cost"] / steps if steps else 0.0,
        "mean_violation": totals["violation"] / steps if steps else 0.0,
        "mean_reward": totals["reward"] / steps if steps else 0.0,
        "mean_shaped_reward": totals["shaped"] / steps if steps else 0.0,
        "unsafe_steps": len(unsafe_log),
        "unsafe_steps_without_property": sum(k == 0 for k in act_counts),
        "mean_active_at_unsafe": float(np.mean(act_counts)) if act_counts else None,
        "n_properties": len(props),
        "n_online_properties": props.n_online,
        "updates": agent.updates,
        "final_lambda": agent.multiplier,
        "backend": _kernels.BACKEND,
        "elapsed_s": time.perf_counter() - t0,
    }
    result = TrainResult(cfg, rows, unsafe_log, props, agent.policy, agent.nets(), summary)
    if out is not None:
        write_artifacts(result, out)
    return result


def _save_policy(net: Mlp, path: Path, cfg: TrainConfig, step: int):
    path.parent.mkdir(parents=True, exist_ok=True)
    mlp.save(net, path, {"agent": cfg.agent, "task": cfg.task, "penalty": cfg.penalty,
                         "seed": cfg.seed, "step": step})


def write_artifacts(result: TrainResult, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    write_metrics(result.metrics, out / "metrics.csv")
    with (out / "unsafe_steps.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "active_property_count"])
        w.writerows(result.unsafe_log)
    dump_properties(result.properties, out / "properties.jsonl")
    for name, net in result.nets.items():
        _save_policy(net, out / f"{name}.npz", cfg, cfg.total_steps)
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True))


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
