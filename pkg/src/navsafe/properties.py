"""Input-output safety properties and the sample-based violation estimate.

A property pairs a pre-condition box over the network inputs with one action
the policy must never pick inside it.  The policy picks the forbidden action
``k`` at ``x`` exactly when every margin ``y_i(x) - y_k(x)`` is ``<= 0``, ties
included.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .mlp import Mlp, ShapeError, augment_with_margin

N_LIDAR = 11
N_INPUTS = N_LIDAR + 2
GOAL_DIMS = (11, 12)

# Global input domain: lidar readings in [0, 1], goal features in [-1, 1].
DOMAIN_LO = np.array([0.0] * N_LIDAR + [-1.0, -1.0])
DOMAIN_HI = np.ones(N_INPUTS)

# Action indices of the navigation action table.
TURN_LEFT, ARC_LEFT, ARC_RIGHT, TURN_RIGHT, FORWARD = range(5)

# Pre-condition threshold on the guarding lidar ray.
CLOSE = 0.05
FRONT_RAY, LEFT_RAY, RIGHT_RAY = 5, 1, 9

DEFAULT_SAMPLES = 10_000
DEFAULT_EPSILON = 0.05

_CHUNK = 1 << 16


class Interval(NamedTuple):
    lo: float
    hi: float


class Origin(str, enum.Enum):
    HARD_CODED = "hard_coded"
    ONLINE = "online"


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64).reshape(-1)
        hi = np.array(self.hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ShapeError("box bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box has lo > hi")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_intervals(cls, dims: Iterable[tuple[float, float]]) -> "Box":
        dims = list(dims)
        return cls([d[0] for d in dims], [d[1] for d in dims])

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def __getitem__(self, i: int) -> Interval:
        return Interval(float(self.lo[i]), float(self.hi[i]))

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Box)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    def __hash__(self) -> int:
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def contains(self, s) -> bool:
        s = np.asarray(s, dtype=np.float64)
        if s.shape != self.lo.shape:
            raise ShapeError(f"state of shape {s.shape} vs box of dim {self.dim}")
        return bool(np.all((self.lo <= s) & (s <= self.hi)))


@dataclass(frozen=True)
class Property:
    pre: Box
    forbidden_action: int
    origin: Origin = Origin.HARD_CODED
    name: str = ""

    def __post_init__(self):
        if self.forbidden_action < 0:
            raise ValueError("forbidden action must be a non-negative index")
        object.__setattr__(self, "origin", Origin(self.origin))

    def key(self) -> tuple:
        return (self.pre.lo.tobytes(), self.pre.hi.tobytes(), self.forbidden_action)


class PropertySet(Sequence[Property]):
    """Ordered, immutable collection of properties."""

    def __init__(self, props: Iterable[Property] = ()):
        self._props = tuple(props)
        self._bounds = None

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked pre-condition bounds, shape (len, dim); built once."""
        if self._bounds is None:
            if not self._props:
                return np.zeros((0, 0)), np.zeros((0, 0))
            self._bounds = (np.stack([p.pre.lo for p in self._props]),
                            np.stack([p.pre.hi for p in self._props]))
        return self._bounds

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PropertySet(self._props[i])
        return self._props[i]

    def __len__(self) -> int:
        return len(self._props)

    def __iter__(self) -> Iterator[Property]:
        return iter(self._props)

    def __eq__(self, other) -> bool:
        return isinstance(other, PropertySet) and [p.key() for p in self] == [
            p.key() for p in other
        ]

    def __repr__(self) -> str:
        names = ", ".join(p.name or f"a!={p.forbidden_action}" for p in self)
        return f"PropertySet([{names}])"

    @property
    def n_online(self) -> int:
        return sum(p.origin is Origin.ONLINE for p in self)


@dataclass(frozen=True)
class ViolationEstimate:
    value: float
    samples_per_property: int
    active_count: int
    violated_count: int = 0


# --------------------------------------------------------------- hard-coded
def _close_on(ray: int) -> Box:
    lo = DOMAIN_LO.copy()
    hi = DOMAIN_HI.copy()
    hi[ray] = CLOSE
    return Box(lo, hi)


def navigation_property_set() -> PropertySet:
    """Obstacle close in front / left / right => do not go forward / turn left / turn right."""
    return PropertySet(
        [
            Property(_close_on(FRONT_RAY), FORWARD, Origin.HARD_CODED, "p_forward"),
            Property(_close_on(LEFT_RAY), TURN_LEFT, Origin.HARD_CODED, "p_left"),
            Property(_close_on(RIGHT_RAY), TURN_RIGHT, Origin.HARD_CODED, "p_right"),
        ]
    )


# --------------------------------------------------------------- estimator
def active_properties(props: PropertySet, s) -> PropertySet:
    s = np.asarray(s, dtype=np.float64)
    if len(props) == 0:
        return PropertySet()
    lo, hi = props.bounds()
    if lo.shape[1:] != s.shape:
        raise ShapeError(f"state of shape {s.shape} vs boxes of dim {lo.shape[1]}")
    inside = np.all((lo <= s) & (s <= hi), axis=1)
    return PropertySet(props[i] for i in np.flatnonzero(inside))


def sample_box(box: Box, m: int, rng: np.random.Generator) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be at least 1")
    u = rng.random((m, box.dim))
    return box.lo + (box.hi - box.lo) * u


def _count_forbidden(net: Mlp, prop: Property, m: int, rng: np.random.Generator) -> int:
    margin = augment_with_margin(net, prop.forbidden_action)
    count = 0
    left = m
    while left > 0:
        n = min(left, _CHUNK)
        y = margin.forward_batch(sample_box(prop.pre, n, rng))
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("network produced non-finite outputs")
        count += int(np.count_nonzero(y.max(axis=1) <= 0.0))
        left -= n
    return count


def approximate_violation(
    net: Mlp,
    props: PropertySet,
    s,
    m: int = DEFAULT_SAMPLES,
    rng: np.random.Generator | None = None,
) -> ViolationEstimate:
    """Fraction of samples drawn from the active pre-conditions on which the
    forbidden action is selected.  Zero when ``s`` lies in no pre-condition."""
    if m < 1:
        raise ValueError("m must be at least 1")
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (net.spec.n_inputs,):
        raise ShapeError(f"state of shape {s.shape} vs network input {net.spec.n_inputs}")
    active = active_properties(props, s)
    if len(active) == 0:
        return ViolationEstimate(0.0, m, 0, 0)
    rng = np.random.default_rng() if rng is None else rng
    violated = sum(_count_forbidden(net, p, m, rng) for p in active)
    return ViolationEstimate(violated / (m * len(active)), m, len(active), violated)


def property_violation(net: Mlp, prop: Property, m: int, rng: np.random.Generator) -> float:
    """Estimate for a single property over its whole pre-condition."""
    return _count_forbidden(net, prop, m, rng) / m


# ------------------------------------------------------------------ online
def generate_online_property(s, action: int, epsilon: float = DEFAULT_EPSILON) -> Property:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    s = np.asarray(s, dtype=np.float64)
    if s.shape != DOMAIN_LO.shape:
        raise ShapeError(f"state of shape {s.shape}, expected {DOMAIN_LO.shape}")
    lo = np.clip(s - epsilon, DOMAIN_LO, DOMAIN_HI)
    hi = np.clip(s + epsilon, DOMAIN_LO, DOMAIN_HI)
    return Property(Box(lo, hi), int(action), Origin.ONLINE, "online")


def merge_online(props: PropertySet, new: Property) -> PropertySet:
    if any(p.key() == new.key() for p in props):
        return props
    return PropertySet([*props, new])


# ------------------------------------------------------------------- files
def property_to_dict(p: Property) -> dict:
    return {
        "name": p.name,
        "lo": [float(v) for v in p.pre.lo],
        "hi": [float(v) for v in p.pre.hi],
        "forbidden_action": p.forbidden_action,
        "origin": p.origin.value,
    }


def property_from_dict(d: dict) -> Property:
    return Property(Box(d["lo"], d["hi"]), int(d["forbidden_action"]),
                    Origin(d.get("origin", "hard_coded")), d.get("name", ""))


def dump_properties(props: Iterable[Property], path) -> Path:
    """One JSON object per line; floats round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for p in props:
            fh.write(json.dumps(property_to_dict(p)) + "\n")
    return path


def load_properties(path) -> PropertySet:
    out = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(property_from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad property record ({exc})") from exc
    return PropertySet(out)
