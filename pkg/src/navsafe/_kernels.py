"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version.  The public names bound at import time point to the numba versions
unless ``NAVSAFE_DISABLE_NUMBA`` is set to a truthy value (or numba cannot be
imported).  Both variants stay importable as ``<name>_nb`` / ``<name>_np`` so
tests and ``benchmarks/bench_kernels.py`` can compare them directly.

Both dense variants are row-exact: row ``i`` of a batched call is bit-identical
to a call on row ``i`` alone.  BLAS ``matmul`` does not give that guarantee,
which is why neither path uses it for forward passes.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _flag("NAVSAFE_DISABLE_NUMBA")
BACKEND = "numba" if USE_NUMBA else "numpy"

# Relative outward-rounding slack for interval bounds.  Far above the
# accumulated rounding error of a length-64 dot product (~1e-14).
INTERVAL_SLACK = 1e-12


# ---------------------------------------------------------------- dense layer
@njit(cache=True)
def dense_nb(x, w, b, relu):
    n, k = x.shape
    m = w.shape[1]
    out = np.empty((n, m))
    for r in range(n):
        for c in range(m):
            out[r, c] = b[c]
        for j in range(k):
            xj = x[r, j]
            for c in range(m):
                out[r, c] += xj * w[j, c]
        if relu:
            for c in range(m):
                if out[r, c] < 0.0:
                    out[r, c] = 0.0
    return out


def dense_np(x, w, b, relu):
    out = np.einsum("ij,jk->ik", x, w) + b
    if relu:
        np.maximum(out, 0.0, out=out)
    return out


# ------------------------------------------------------------ interval layer
@njit(cache=True)
def interval_dense_nb(lo, hi, w, b, relu):
    n, k = lo.shape
    m = w.shape[1]
    out_lo = np.empty((n, m))
    out_hi = np.empty((n, m))
    for r in range(n):
        for c in range(m):
            s_lo = b[c]
            s_hi = b[c]
            mag = abs(b[c])
            for j in range(k):
                wj = w[j, c]
                if wj >= 0.0:
                    s_lo += wj * lo[r, j]
                    s_hi += wj * hi[r, j]
                else:
                    s_lo += wj * hi[r, j]
                    s_hi += wj * lo[r, j]
                mag += abs(wj) * max(abs(lo[r, j]), abs(hi[r, j]))
            slack = INTERVAL_SLACK * mag
            s_lo -= slack
            s_hi += slack
            if relu:
                if s_lo < 0.0:
                    s_lo = 0.0
                if s_hi < 0.0:
                    s_hi = 0.0
            out_lo[r, c] = s_lo
            out_hi[r, c] = s_hi
    return out_lo, out_hi


def interval_dense_np(lo, hi, w, b, relu):
    wp = np.maximum(w, 0.0)
    wn = np.minimum(w, 0.0)
    out_lo = lo @ wp + hi @ wn + b
    out_hi = hi @ wp + lo @ wn + b
    mag = np.maximum(np.abs(lo), np.abs(hi)) @ np.abs(w) + np.abs(b)
    slack = INTERVAL_SLACK * mag
    out_lo -= slack
    out_hi += slack
    if relu:
        np.maximum(out_lo, 0.0, out=out_lo)
        np.maximum(out_hi, 0.0, out=out_hi)
    return out_lo, out_hi


# ---------------------------------------------------------------------- GAE
@njit(cache=True)
def gae_nb(rewards, values, dones, last_value, gamma, lam):
    n = rewards.shape[0]
    adv = np.empty(n)
    running = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def gae_np(rewards, values, dones, last_value, gamma, lam):
    n = rewards.shape[0]
    adv = np.empty(n)
    live = 1.0 - dones
    nxt = np.append(values[1:], last_value)
    delta = rewards + gamma * nxt * live - values
    running = 0.0
    for t in range(n - 1, -1, -1):
        running = delta[t] + gamma * lam * live[t] * running
        adv[t] = running
    return adv, adv + values


# -------------------------------------------------------------------- lidar
@njit(cache=True)
def lidar_nb(x, y, theta, rects, discs, arena_w, arena_h, n_rays, fov, max_range):
    out = np.empty(n_rays)
    for i in range(n_rays):
        if n_rays > 1:
            ang = theta + 0.5 * fov - i * fov / (n_rays - 1)
        else:
            ang = theta
        dx = math.cos(ang)
        dy = math.sin(ang)
        best = max_range
        # arena walls, origin always inside
        if dx > 1e-15:
            t = (arena_w - x) / dx
            if t < best:
                best = t
        elif dx < -1e-15:
            t = -x / dx
            if t < best:
                best = t
        if dy > 1e-15:
            t = (arena_h - y) / dy
            if t < best:
                best = t
        elif dy < -1e-15:
            t = -y / dy
            if t < best:
                best = t
        # axis-aligned rectangles: (cx, cy, hx, hy), slab test
        for r in range(rects.shape[0]):
            x0 = rects[r, 0] - rects[r, 2]
            x1 = rects[r, 0] + rects[r, 2]
            y0 = rects[r, 1] - rects[r, 3]
            y1 = rects[r, 1] + rects[r, 3]
            if x0 <= x <= x1 and y0 <= y <= y1:
                continue  # origin inside: the ray does not see this body
            tmin = -np.inf
            tmax = np.inf
            if abs(dx) < 1e-15:
                if x < x0 or x > x1:
                    continue
            else:
                ta = (x0 - x) / dx
                tb = (x1 - x) / dx
                if ta > tb:
                    ta, tb = tb, ta
                tmin = max(tmin, ta)
                tmax = min(tmax, tb)
            if abs(dy) < 1e-15:
                if y < y0 or y > y1:
                    continue
            else:
                ta = (y0 - y) / dy
                tb = (y1 - y) / dy
                if ta > tb:
                    ta, tb = tb, ta
                tmin = max(tmin, ta)
                tmax = min(tmax, tb)
            if tmax >= tmin and tmin >= 0.0 and tmin < best:
                best = tmin
        # discs: (cx, cy, radius), quadratic with unit direction
        for d in range(discs.shape[0]):
            fx = x - discs[d, 0]
            fy = y - discs[d, 1]
            c = fx * fx + fy * fy - discs[d, 2] * discs[d, 2]
            if c <= 0.0:
                continue
            bh = fx * dx + fy * dy
            disc = bh * bh - c
            if disc < 0.0:
                continue
            t = -bh - math.sqrt(disc)
            if t >= 0.0 and t < best:
                best = t
        out[i] = min(best, max_range) / max_range
    return out


def lidar_np(x, y, theta, rects, discs, arena_w, arena_h, n_rays, fov, max_range):
    if n_rays > 1:
        ang = theta + 0.5 * fov - np.arange(n_rays) * fov / (n_rays - 1)
    else:
        ang = np.array([theta])
    dx = np.cos(ang)
    dy = np.sin(ang)
    best = np.full(n_rays, float(max_range))
    with np.errstate(divide="ignore", invalid="ignore"):
        tw = np.where(dx > 1e-15, (arena_w - x) / dx, np.where(dx < -1e-15, -x / dx, np.inf))
        th = np.where(dy > 1e-15, (arena_h - y) / dy, np.where(dy < -1e-15, -y / dy, np.inf))
        best = np.minimum(best, np.minimum(tw, th))
        for cx, cy, hx, hy in rects:
            x0, x1, y0, y1 = cx - hx, cx + hx, cy - hy, cy + hy
            if x0 <= x <= x1 and y0 <= y <= y1:
                continue
            flat_x = np.abs(dx) < 1e-15
            flat_y = np.abs(dy) < 1e-15
            ta, tb = (x0 - x) / dx, (x1 - x) / dx
            txmin = np.where(flat_x, -np.inf, np.minimum(ta, tb))
            txmax = np.where(flat_x, np.inf, np.maximum(ta, tb))
            miss_x = flat_x & ((x < x0) | (x > x1))
            ta, tb = (y0 - y) / dy, (y1 - y) / dy
            tymin = np.where(flat_y, -np.inf, np.minimum(ta, tb))
            tymax = np.where(flat_y, np.inf, np.maximum(ta, tb))
            miss_y = flat_y & ((y < y0) | (y > y1))
            tmin = np.maximum(txmin, tymin)
            tmax = np.minimum(txmax, tymax)
            hit = ~miss_x & ~miss_y & (tmax >= tmin) & (tmin >= 0.0)
            best = np.where(hit & (tmin < best), tmin, best)
        for cx, cy, rad in discs:
            fx, fy = x - cx, y - cy
            c = fx * fx + fy * fy - rad * rad
            if c <= 0.0:
                continue
            bh = fx * dx + fy * dy
            disc = bh * bh - c
            t = -bh - np.sqrt(np.maximum(disc, 0.0))
            hit = (disc >= 0.0) & (t >= 0.0)
            best = np.where(hit & (t < best), t, best)
    return np.minimum(best, max_range) / max_range


if USE_NUMBA:
    dense = dense_nb
    interval_dense = interval_dense_nb
    gae = gae_nb
    lidar = lidar_nb
else:
    dense = dense_np
    interval_dense = interval_dense_np
    gae = gae_np
    lidar = lidar_np

__all__ = ["BACKEND", "USE_NUMBA", "dense", "interval_dense", "gae", "lidar"]
