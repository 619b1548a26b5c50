"""2D mapless navigation with lidar, in the style of a Turtlebot3 Burger.

The arena spans ``[0, width] x [0, height]``; walls clamp the robot and are
seen by the lidar but do not produce cost.  Obstacles are axis-aligned
rectangles (static) or discs moving between random waypoints.  Lidar rays
that start inside an obstacle do not report it, so an obstacle the robot is
driving through in non-terminal mode is invisible from its own centre.

Observation layout (13 values)::

    [0..10]  lidar, ray 0 leftmost (+fov/2), ray 5 straight ahead, 1 = nothing in range
    [11]     goal distance / arena diagonal, in [0, 1]
    [12]     goal bearing relative to heading / pi, in (-1, 1]
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

N_ACTIONS = 5
# (linear, angular) as fractions of (v_max, w_max); index 4 drives straight.
ACTION_TABLE = (
    (0.0, 1.0),    # 0 turn left in place
    (0.5, 0.5),    # 1 forward-left arc
    (0.5, -0.5),   # 2 forward-right arc
    (0.0, -1.0),   # 3 turn right in place
    (1.0, 0.0),    # 4 straight forward
)

MAX_SPAWN_TRIES = 10_000


class ConfigurationError(ValueError):
    pass


class EpisodeFinished(RuntimeError):
    pass


class Outcome(str, enum.Enum):
    RUNNING = "running"
    GOAL_REACHED = "goal_reached"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class FixedRect:
    center: tuple[float, float]
    half_extents: tuple[float, float]
    terminal: bool = True


@dataclass(frozen=True)
class MovingDisc:
    center: tuple[float, float]
    radius: float
    speed: float = 0.1
    waypoint: tuple[float, float] | None = None
    terminal: bool = True


@dataclass
class EnvConfig:
    arena_size: tuple[float, float] = (4.0, 4.0)
    obstacles: list = field(default_factory=list)
    terminal_mode: str = "NT"
    max_steps: int = 500
    n_rays: int = 11
    lidar_max_range: float = 3.5
    lidar_fov: float = math.pi
    robot_radius: float = 0.105
    goal_radius: float = 0.15
    dt: float = 0.1
    v_max: float = 0.22
    w_max: float = 2.84
    beta: float = 0.0005
    rng_seed: int = 0
    name: str = "custom"

    def validate(self) -> "EnvConfig":
        w, h = self.arena_size
        if not (w > 0 and h > 0):
            raise ConfigurationError("arena size must be positive")
        if self.terminal_mode not in ("T", "NT"):
            raise ConfigurationError(f"terminal_mode must be 'T' or 'NT', got {self.terminal_mode!r}")
        if self.max_steps < 1 or self.n_rays < 1:
            raise ConfigurationError("max_steps and n_rays must be positive")
        for v in (self.lidar_max_range, self.lidar_fov, self.robot_radius, self.goal_radius,
                  self.dt, self.v_max, self.w_max):
            if not v > 0:
                raise ConfigurationError("physical parameters must be positive")
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        for ob in self.obstacles:
            if isinstance(ob, FixedRect):
                (cx, cy), (hx, hy) = ob.center, ob.half_extents
                if hx <= 0 or hy <= 0 or cx - hx < 0 or cy - hy < 0 or cx + hx > w or cy + hy > h:
                    raise ConfigurationError(f"rectangle {ob} not inside arena")
            elif isinstance(ob, MovingDisc):
                (cx, cy), r = ob.center, ob.radius
                if r <= 0 or cx - r < 0 or cy - r < 0 or cx + r > w or cy + r > h:
                    raise ConfigurationError(f"disc {ob} not inside arena")
                if not ob.speed > 0:
                    raise ConfigurationError("moving discs need positive speed")
            else:
                raise ConfigurationError(f"unknown obstacle {ob!r}")
        return self

    @property
    def diagonal(self) -> float:
        return math.hypot(*self.arena_size)

    @property
    def n_inputs(self) -> int:
        return self.n_rays + 2

    # -- structured text
    def to_dict(self) -> dict:
        d = asdict(self)
        d["arena_size"] = list(self.arena_size)
        d["obstacles"] = [
            {"kind": "rect", **asdict(o)} if isinstance(o, FixedRect) else {"kind": "disc", **asdict(o)}
            for o in self.obstacles
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        obs = []
        for o in d.pop("obstacles", []):
            o = dict(o)
            kind = o.pop("kind")
            if kind == "rect":
                obs.append(FixedRect(tuple(o["center"]), tuple(o["half_extents"]), o.get("terminal", True)))
            elif kind == "disc":
                wp = o.get("waypoint")
                obs.append(MovingDisc(tuple(o["center"]), o["radius"], o.get("speed", 0.1),
                                      tuple(wp) if wp is not None else None, o.get("terminal", True)))
            else:
                raise ConfigurationError(f"unknown obstacle kind {kind!r}")
        d["arena_size"] = tuple(d.get("arena_size", (4.0, 4.0)))
        return cls(obstacles=obs, **d).validate()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "EnvConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    collision: bool
    done: bool
    outcome: Outcome

    @property
    def cost(self) -> float:
        return 1.0 if self.collision else 0.0


# ------------------------------------------------------------------ geometry
def wrap_angle(a: float) -> float:
    """Map to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    return a + 2.0 * math.pi if a <= -math.pi else a


def _rect_array(obstacles) -> np.ndarray:
    rows = [(*o.center, *o.half_extents) for o in obstacles if isinstance(o, FixedRect)]
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def _disc_array(obstacles) -> np.ndarray:
    rows = [(*o.center, o.radius) for o in obstacles if isinstance(o, MovingDisc)]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def goal_features(pose: Pose, goal, config: EnvConfig) -> tuple[float, float]:
    dx = goal[0] - pose.x
    dy = goal[1] - pose.y
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0
    heading = wrap_angle(math.atan2(dy, dx) - pose.theta) / math.pi
    return min(dist / config.diagonal, 1.0), heading


def _rect_gap(px, py, cx, cy, hx, hy) -> float:
    """Distance from a point to a rectangle (0 inside)."""
    ex = max(abs(px - cx) - hx, 0.0)
    ey = max(abs(py - cy) - hy, 0.0)
    return math.hypot(ex, ey)


# ----------------------------------------------------------------------- env
class NavEnv:
    def __init__(self, config: EnvConfig, seed: int | None = None):
        self.config = config.validate()
        self.rng = np.random.default_rng(config.rng_seed if seed is None else seed)
        self._rects = _rect_array(config.obstacles)
        self._rect_terminal = np.array([o.terminal for o in config.obstacles if isinstance(o, FixedRect)], bool)
        discs = [o for o in config.obstacles if isinstance(o, MovingDisc)]
        self._disc_init = _disc_array(discs)
        self._disc_speed = np.array([o.speed for o in discs], dtype=np.float64)
        self._disc_terminal = np.array([o.terminal for o in discs], bool)
        self._disc_wp_fixed = [o.waypoint for o in discs]
        self.discs = self._disc_init.copy()
        self.waypoints = np.zeros((len(discs), 2))
        self.pose = Pose(0.0, 0.0, 0.0)
        self.goal = (0.0, 0.0)
        self.steps = 0
        self.done = True
        self._dist = 0.0

    # -- state helpers
    @property
    def obstacles(self) -> list:
        """Obstacles at their current positions."""
        rects = [o for o in self.config.obstacles if isinstance(o, FixedRect)]
        out = list(rects)
        for i, (cx, cy, r) in enumerate(self.discs):
            out.append(MovingDisc((float(cx), float(cy)), float(r), float(self._disc_speed[i]),
                                  tuple(self.waypoints[i]), bool(self._disc_terminal[i])))
        return out

    def _inset(self, margin: float):
        w, h = self.config.arena_size
        return margin, w - margin, margin, h - margin

    def _overlaps(self, x: float, y: float, radius: float) -> tuple[bool, bool]:
        """(any overlap, overlap with a terminal obstacle)."""
        hit = term = False
        for i in range(self._rects.shape[0]):
            cx, cy, hx, hy = self._rects[i]
            if _rect_gap(x, y, cx, cy, hx, hy) < radius:
                hit = True
                term = term or bool(self._rect_terminal[i])
        for i in range(self.discs.shape[0]):
            cx, cy, r = self.discs[i]
            if math.hypot(x - cx, y - cy) < radius + r:
                hit = True
                term = term or bool(self._disc_terminal[i])
        return hit, term

    def _sample_free_point(self, clearance: float, avoid=None, min_sep: float = 0.0):
        x0, x1, y0, y1 = self._inset(self.config.robot_radius)
        for _ in range(MAX_SPAWN_TRIES):
            x = float(self.rng.uniform(x0, x1))
            y = float(self.rng.uniform(y0, y1))
            if self._overlaps(x, y, clearance)[0]:
                continue
            if avoid is not None and math.hypot(x - avoid[0], y - avoid[1]) <= min_sep:
                continue
            return x, y
        raise ConfigurationError("could not place a free point; arena over-crowded")

    def _new_waypoint(self, i: int) -> np.ndarray:
        r = self.discs[i, 2]
        x0, x1, y0, y1 = self._inset(r)
        return np.array([self.rng.uniform(x0, x1), self.rng.uniform(y0, y1)])

    def _resample_goal(self):
        c = self.config
        self.goal = self._sample_free_point(c.robot_radius, (self.pose.x, self.pose.y), 2 * c.goal_radius)

    # -- API
    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        c = self.config
        self.discs = self._disc_init.copy()
        for i in range(self.discs.shape[0]):
            fixed = self._disc_wp_fixed[i]
            self.waypoints[i] = fixed if fixed is not None else self._new_waypoint(i)
        x, y = self._sample_free_point(c.robot_radius)
        theta = wrap_angle(float(self.rng.uniform(-math.pi, math.pi)))
        self.pose = Pose(x, y, theta)
        self._resample_goal()
        self._dist = math.hypot(self.goal[0] - x, self.goal[1] - y)
        self.steps = 0
        self.done = False
        return self.observe()

    def place(self, pose: Pose, goal=None) -> np.ndarray:
        """Put the robot (and optionally the goal) at a given spot and start a
        fresh episode from there.  Meant for scripted scenarios."""
        self.pose = Pose(float(pose.x), float(pose.y), wrap_angle(float(pose.theta)))
        if goal is not None:
            self.goal = (float(goal[0]), float(goal[1]))
        self._dist = math.hypot(self.goal[0] - self.pose.x, self.goal[1] - self.pose.y)
        self.steps = 0
        self.done = False
        return self.observe()

    def observe(self) -> np.ndarray:
        scan = lidar_scan(self.pose, self.obstacles_for_lidar(), self.config)
        d, hd = goal_features(self.pose, self.goal, self.config)
        return np.concatenate([scan, [d, hd]])

    def obstacles_for_lidar(self):
        return _LidarScene(self._rects, self.discs)

    def _move_discs(self):
        dt = self.config.dt
        for i in range(self.discs.shape[0]):
            step = self._disc_speed[i] * dt
            to = self.waypoints[i] - self.discs[i, :2]
            dist = math.hypot(to[0], to[1])
            if dist <= step:
                self.discs[i, :2] = self.waypoints[i]
                self.waypoints[i] = self._new_waypoint(i)
            else:
                self.discs[i, :2] += to * (step / dist)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeFinished("episode finished; call reset()")
        c = self.config
        lin, ang = ACTION_TABLE[int(action)]
        v = lin * c.v_max
        w = ang * c.w_max
        p = self.pose
        mid = p.theta + 0.5 * w * c.dt
        x0, x1, y0, y1 = self._inset(c.robot_radius)
        x = min(max(p.x + v * c.dt * math.cos(mid), x0), x1)
        y = min(max(p.y + v * c.dt * math.sin(mid), y0), y1)
        self.pose = Pose(x, y, wrap_angle(p.theta + w * c.dt))
        self._move_discs()
        self.steps += 1

        collision, terminal_hit = self._overlaps(x, y, c.robot_radius)
        d = math.hypot(self.goal[0] - x, self.goal[1] - y)
        reached = d <= c.goal_radius
        if reached:
            reward = 1.0
            self._resample_goal()
            self._dist = math.hypot(self.goal[0] - x, self.goal[1] - y)
        else:
            reward = (self._dist - d) - c.beta
            self._dist = d

        outcome = Outcome.RUNNING
        if c.terminal_mode == "T" and terminal_hit:
            outcome = Outcome.COLLISION
            self.done = True
        elif reached:
            outcome = Outcome.GOAL_REACHED
        elif self.steps >= c.max_steps:
            outcome = Outcome.TIMEOUT
        if self.steps >= c.max_steps:
            self.done = True
        return StepResult(self.observe(), reward, collision, self.done, outcome)


class _LidarScene(list):
    """Pre-packed obstacle arrays so the per-step scan skips re-packing."""

    def __init__(self, rects, discs):
        super().__init__()
        self.rects = rects
        self.discs = discs


def _scene_arrays(obstacles):
    if isinstance(obstacles, _LidarScene):
        return obstacles.rects, obstacles.discs
    return _rect_array(obstacles), _disc_array(obstacles)


def lidar_scan(pose: Pose, obstacles, config: EnvConfig) -> np.ndarray:
    """Normalised ranges along ``n_rays`` rays spread evenly over the field of
    view, nearest hit among walls, rectangles (slab test) and discs."""
    rects, discs = _scene_arrays(obstacles)
    return _kernels.lidar(
        float(pose.x), float(pose.y), float(pose.theta), rects, discs,
        float(config.arena_size[0]), float(config.arena_size[1]),
        int(config.n_rays), float(config.lidar_fov), float(config.lidar_max_range),
    )


# ---------------------------------------------------------------------- tasks
_FIXED_4 = [
    ((1.0, 1.0), (0.25, 0.25)),
    ((3.0, 1.0), (0.15, 0.45)),
    ((2.0, 2.0), (0.35, 0.20)),
    ((1.0, 3.0), (0.45, 0.15)),
    ((3.0, 3.0), (0.25, 0.25)),
]
_DYNAMIC_4 = [((1.0, 1.0), 0.15), ((3.0, 1.0), 0.15), ((2.0, 2.0), 0.15), ((1.0, 3.0), 0.15), ((3.0, 3.0), 0.15)]
_EVAL_RECTS_6 = [
    ((1.5, 1.5), (0.30, 0.30)),
    ((4.5, 1.2), (0.20, 0.50)),
    ((3.0, 3.0), (0.50, 0.20)),
    ((1.2, 4.5), (0.50, 0.20)),
    ((4.6, 4.6), (0.30, 0.30)),
]
_EVAL_DISCS_6 = [((2.0, 3.0), 0.20), ((4.0, 3.0), 0.15), ((3.0, 1.5), 0.20), ((3.0, 4.5), 0.15)]
DISC_SPEED = 0.1

TASK_NAMES = ("Fixed_obs_T", "Fixed_obs_NT", "Dynamic_obs_T", "Dynamic_obs_NT", "Evaluation_NT")


def make_task(name: str, seed: int = 0) -> EnvConfig:
    if name not in TASK_NAMES:
        raise KeyError(f"unknown task {name!r}; choose from {', '.join(TASK_NAMES)}")
    mode = "T" if name.endswith("_T") else "NT"
    term = mode == "T"
    if name.startswith("Fixed"):
        obs = [FixedRect(c, h, term) for c, h in _FIXED_4]
        size = (4.0, 4.0)
    elif name.startswith("Dynamic"):
        obs = [MovingDisc(c, r, DISC_SPEED, None, term) for c, r in _DYNAMIC_4]
        size = (4.0, 4.0)
    else:
        obs = [FixedRect(c, h, False) for c, h in _EVAL_RECTS_6]
        obs += [MovingDisc(c, r, DISC_SPEED, None, False) for c, r in _EVAL_DISCS_6]
        size = (6.0, 6.0)
    return EnvConfig(arena_size=size, obstacles=obs, terminal_mode=mode, rng_seed=seed, name=name).validate()


# ---------------------------------------------------------------------- demo
def write_trace(env: NavEnv, policy, n_steps: int, path, seed: int | None = None) -> Path:
    """Roll ``policy(obs) -> action`` and dump pose/obs/reward/cost per step."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    obs = env.reset(seed)
    header = ["step", "episode", "x", "y", "theta", "action", "reward", "cost", "outcome"]
    header += [f"obs_{i}" for i in range(len(obs))]
    episode = 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(n_steps):
            a = int(policy(obs))
            res = env.step(a)
            p = env.pose
            w.writerow([t, episode, repr(p.x), repr(p.y), repr(p.theta), a, repr(res.reward),
                        res.cost, res.outcome.value, *[repr(float(v)) for v in res.obs]])
            obs = res.obs
            if res.done:
                episode += 1
                obs = env.reset()
    return path


__all__ = [
    "ACTION_TABLE", "ConfigurationError", "EnvConfig", "EpisodeFinished", "FixedRect", "MovingDisc",
    "NavEnv", "Outcome", "Pose", "StepResult", "TASK_NAMES", "goal_features", "lidar_scan",
    "make_task", "wrap_angle", "write_trace",
]
