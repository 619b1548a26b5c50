"""Provable bounds on the violation ratio of a property.

Interval arithmetic is pushed through the margin network, and the
pre-condition is split until the undecided measure drops below the requested
gap.  The margin layer is folded into the last affine map before propagation;
this is the same function and gives tighter intervals than subtracting two
independently bounded outputs.
"""
from __future__ import annotations

import csv
import enum
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .mlp import MarginNet, Mlp, ShapeError, augment_with_margin
from .properties import Box, Property, PropertySet, property_violation

DEFAULT_GAP = 0.005
DEFAULT_MAX_BOXES = 1_000_000
DEFAULT_BATCH = 4096
MIN_WIDTH = 1e-9


class BoxVerdict(enum.IntEnum):
    UNKNOWN = 0
    ALL_VIOLATED = 1
    NONE_VIOLATED = 2


@dataclass(frozen=True)
class BoundVector:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if np.any(self.lo > self.hi):
            raise ValueError("bound vector with lo > hi")

    def contains(self, y, atol: float = 0.0) -> bool:
        y = np.asarray(y)
        return bool(np.all((self.lo - atol <= y) & (y <= self.hi + atol)))


@dataclass
class VerificationResult:
    violation_lower: float
    violation_upper: float
    boxes_explored: int
    elapsed: float
    budget_exhausted: bool = False
    degenerate_measure: float = 0.0
    unknown_boxes: int = 0

    @property
    def gap(self) -> float:
        return self.violation_upper - self.violation_lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.violation_lower + self.violation_upper)

    @property
    def degenerate(self) -> bool:
        return self.degenerate_measure > 0.0


def bounds_batch(net: Mlp, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interval enclosure of ``net`` over each row-box ``[lo[i], hi[i]]``."""
    lo = np.ascontiguousarray(lo, dtype=np.float64)
    hi = np.ascontiguousarray(hi, dtype=np.float64)
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lo, hi = _kernels.interval_dense(lo, hi, w, b, i < last)
    return lo, hi


def _relax(l, u):
    """ReLU relaxation: lower slope, upper slope, upper intercept."""
    act = l >= 0.0
    unst = (l < 0.0) & (u > 0.0)
    d = np.where(unst, u - l, 1.0)
    up_s = np.where(unst, u / d, act.astype(float))
    up_i = np.where(unst, -u * l / d, 0.0)
    low_s = np.where(unst, (u > -l).astype(float), act.astype(float))
    return low_s, up_s, up_i


def _backsub(net: Mlp, lam, upto: int, pre, lower: bool):
    """Back-substitute ``lam`` (coefficients on the pre-activation of layer
    ``upto``) down to the input.  Returns input coefficients and constant."""
    const = np.einsum("h,nhm->nm", net.biases[upto], lam)
    lam = np.einsum("ih,nhm->nim", net.weights[upto], lam)
    for li in range(upto - 1, -1, -1):
        low_s, up_s, up_i = _relax(*pre[li])
        pos = lam >= 0.0
        if lower:
            slope = np.where(pos, low_s[:, :, None], up_s[:, :, None])
            inter = np.where(pos, 0.0, up_i[:, :, None])
        else:
            slope = np.where(pos, up_s[:, :, None], low_s[:, :, None])
            inter = np.where(pos, up_i[:, :, None], 0.0)
        const = const + (lam * inter).sum(axis=1)
        lam = lam * slope
        const = const + np.einsum("h,nhm->nm", net.biases[li], lam)
        lam = np.einsum("ih,nhm->nim", net.weights[li], lam)
    return lam, const


def _concretize(a, c, lo, hi, lower: bool):
    ctr = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    v = np.einsum("nd,ndm->nm", ctr, a) + c
    r = np.einsum("nd,ndm->nm", rad, np.abs(a))
    slack = _kernels.INTERVAL_SLACK * (np.abs(v) + r + np.einsum("nd,ndm->nm", np.abs(ctr), np.abs(a)) + np.abs(c))
    return v - r - slack if lower else v + r + slack


def linear_bounds_batch(net: Mlp, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Output bounds from back-substituted linear ReLU relaxations,
    intersected with plain interval bounds layer by layer."""
    lo = np.ascontiguousarray(lo, dtype=np.float64)
    hi = np.ascontiguousarray(hi, dtype=np.float64)
    n = lo.shape[0]
    pre = []
    ilo, ihi = lo, hi
    for li in range(net.n_layers):
        w, b = net.weights[li], net.biases[li]
        plo, phi = _kernels.interval_dense(ilo, ihi, w, b, False)
        if li > 0:
            lam = np.broadcast_to(np.eye(w.shape[1]), (n, w.shape[1], w.shape[1]))
            a, c = _backsub(net, lam, li, pre, lower=True)
            plo = np.maximum(plo, _concretize(a, c, lo, hi, True))
            a, c = _backsub(net, lam, li, pre, lower=False)
            phi = np.minimum(phi, _concretize(a, c, lo, hi, False))
        pre.append((plo, phi))
        ilo, ihi = np.maximum(plo, 0.0), np.maximum(phi, 0.0)
    return pre[-1]


BOUND_METHODS = {"ibp": bounds_batch, "linear": linear_bounds_batch}


def _margin_bounds(folded: Mlp, k: int, lo, hi, method: str = "ibp"):
    out_lo, out_hi = BOUND_METHODS[method](folded, lo, hi)
    # y_k - y_k is identically zero; keep it exact rather than slack-widened
    out_lo[:, k] = 0.0
    out_hi[:, k] = 0.0
    return out_lo, out_hi


def interval_forward(net: MarginNet, box: Box) -> BoundVector:
    if box.dim != net.n_inputs:
        raise ShapeError(f"box of dim {box.dim} vs network input {net.n_inputs}")
    lo, hi = _margin_bounds(net.folded(), net.k, box.lo[None, :], box.hi[None, :])
    return BoundVector(lo[0], hi[0])


def _verdicts(out_lo: np.ndarray, out_hi: np.ndarray, k: int) -> np.ndarray:
    all_v = np.all(out_hi <= 0.0, axis=1)
    others = np.delete(out_lo, k, axis=1)
    none_v = np.any(others > 0.0, axis=1) if others.shape[1] else np.zeros(len(out_lo), bool)
    v = np.full(len(out_lo), BoxVerdict.UNKNOWN, dtype=np.int8)
    v[all_v] = BoxVerdict.ALL_VIOLATED
    v[none_v] = BoxVerdict.NONE_VIOLATED
    return v


def decide_box(net: MarginNet, box: Box) -> BoxVerdict:
    b = interval_forward(net, box)
    return BoxVerdict(int(_verdicts(b.lo[None, :], b.hi[None, :], net.k)[0]))


def formal_violation(
    net: Mlp,
    prop: Property,
    gap: float = DEFAULT_GAP,
    max_boxes: int = DEFAULT_MAX_BOXES,
    batch: int = DEFAULT_BATCH,
    trace: Callable[[float, float, float], None] | None = None,
    method: str = "ibp",
) -> VerificationResult:
    """Branch and bound on the pre-condition of ``prop``.

    Boxes are processed breadth-first (largest measure first).  Undecided boxes
    are halved along their widest dimension, widths measured relative to the
    pre-condition; ties go to the lowest index.  ``trace`` receives
    ``(violated, safe, unknown)`` measures after every batch.  ``method``
    picks the bounding procedure: ``"ibp"`` (plain intervals) or ``"linear"``
    (back-substituted ReLU relaxations, tighter and slower).
    """
    if method not in BOUND_METHODS:
        raise ValueError(f"unknown bound method {method!r}")
    if not 0.0 < gap < 1.0:
        raise ValueError("gap must lie in (0, 1)")
    if max_boxes < 1:
        raise ValueError("max_boxes must be positive")
    if prop.pre.dim != net.spec.n_inputs:
        raise ShapeError("property dimension does not match network input")
    if method == "linear":
        batch = min(batch, 1024)  # (batch, 64, 64) temporaries
    t0 = time.perf_counter()
    k = prop.forbidden_action
    margin = augment_with_margin(net, k)
    folded = margin.folded()

    scale = prop.pre.widths.copy()
    live = scale > 0.0
    scale[~live] = 1.0

    queue: deque[tuple[np.ndarray, np.ndarray, np.ndarray]] = deque()
    queue.append((prop.pre.lo[None, :].copy(), prop.pre.hi[None, :].copy(), np.ones(1)))
    violated = 0.0
    safe = 0.0
    unknown = 1.0
    degenerate = 0.0
    explored = 0
    pending = 1

    while queue and unknown > gap and explored < max_boxes:
        take = min(batch, max_boxes - explored)
        lo, hi, meas = _pop(queue, take)
        n = lo.shape[0]
        explored += n
        pending -= n

        width = np.where(live, (hi - lo) / scale, -1.0)
        tiny = np.max(np.where(live, hi - lo, 0.0), axis=1) < MIN_WIDTH
        out_lo, out_hi = _margin_bounds(folded, k, lo, hi, method)
        verdict = _verdicts(out_lo, out_hi, k)

        guard = tiny & (verdict == BoxVerdict.UNKNOWN)
        if np.any(guard):
            centre = margin.forward_batch(0.5 * (lo[guard] + hi[guard]))
            hit = centre.max(axis=1) <= 0.0
            idx = np.flatnonzero(guard)
            verdict[idx[hit]] = BoxVerdict.ALL_VIOLATED
            verdict[idx[~hit]] = BoxVerdict.NONE_VIOLATED
            degenerate += float(meas[guard].sum())

        dv = float(meas[verdict == BoxVerdict.ALL_VIOLATED].sum())
        ds = float(meas[verdict == BoxVerdict.NONE_VIOLATED].sum())
        violated += dv
        safe += ds
        unknown -= dv + ds

        open_ = verdict == BoxVerdict.UNKNOWN
        if np.any(open_):
            lo, hi, meas, width = lo[open_], hi[open_], meas[open_], width[open_]
            axis = np.argmax(width, axis=1)
            rows = np.arange(lo.shape[0])
            mid = 0.5 * (lo[rows, axis] + hi[rows, axis])
            left_hi = hi.copy()
            left_hi[rows, axis] = mid
            right_lo = lo.copy()
            right_lo[rows, axis] = mid
            half = 0.5 * meas
            queue.append((np.concatenate([lo, right_lo]), np.concatenate([left_hi, hi]),
                          np.concatenate([half, half])))
            pending += 2 * lo.shape[0]
        if trace is not None:
            trace(violated, safe, unknown)

    unknown = max(unknown, 0.0)
    return VerificationResult(
        violation_lower=violated,
        violation_upper=min(1.0, violated + unknown),
        boxes_explored=explored,
        elapsed=time.perf_counter() - t0,
        budget_exhausted=unknown > gap,
        degenerate_measure=degenerate,
        unknown_boxes=pending,
    )


def _pop(queue: deque, take: int):
    parts = []
    got = 0
    while queue and got < take:
        lo, hi, meas = queue.popleft()
        need = take - got
        if lo.shape[0] > need:
            queue.appendleft((lo[need:], hi[need:], meas[need:]))
            lo, hi, meas = lo[:need], hi[:need], meas[:need]
        parts.append((lo, hi, meas))
        got += lo.shape[0]
    if len(parts) == 1:
        return parts[0]
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


# ---------------------------------------------------------------- comparison
@dataclass
class ComparisonRow:
    prop: str
    formal_lower: float
    formal_upper: float
    formal_seconds: float
    boxes_explored: int
    budget_exhausted: bool
    estimates: dict[int, float] = field(default_factory=dict)
    estimate_seconds: dict[int, float] = field(default_factory=dict)

    @property
    def formal_mid(self) -> float:
        return 0.5 * (self.formal_lower + self.formal_upper)

    def as_dict(self) -> dict:
        d = {
            "property": self.prop,
            "formal_lower": self.formal_lower,
            "formal_upper": self.formal_upper,
            "formal_mid": self.formal_mid,
            "formal_seconds": self.formal_seconds,
            "boxes_explored": self.boxes_explored,
            "budget_exhausted": int(self.budget_exhausted),
        }
        for m in sorted(self.estimates):
            d[f"estimate_{m}"] = self.estimates[m]
            d[f"estimate_{m}_seconds"] = self.estimate_seconds[m]
        return d


def compare_estimator(
    net: Mlp,
    props: PropertySet,
    m_values: Sequence[int] = (100, 1000, 10_000),
    gap: float = DEFAULT_GAP,
    max_boxes: int = DEFAULT_MAX_BOXES,
    seed: int = 0,
    method: str = "ibp",
) -> list[ComparisonRow]:
    """Formal bounds next to sampled estimates (with wall-clock) per property."""
    if len(props) == 0:
        raise ValueError("no properties to compare")
    rows = []
    for i, p in enumerate(props):
        res = formal_violation(net, p, gap=gap, max_boxes=max_boxes, method=method)
        row = ComparisonRow(p.name or f"property_{i}", res.violation_lower, res.violation_upper,
                            res.elapsed, res.boxes_explored, res.budget_exhausted)
        for m in m_values:
            rng = np.random.default_rng([seed, i, int(m)])
            t0 = time.perf_counter()
            row.estimates[int(m)] = property_violation(net, p, int(m), rng)
            row.estimate_seconds[int(m)] = time.perf_counter() - t0
        rows.append(row)
    return rows


def write_rows(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ValueError("nothing to write")
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    return path


def result_dict(res: VerificationResult) -> dict:
    d = asdict(res)
    d["gap"] = res.gap
    d["midpoint"] = res.midpoint
    return d
