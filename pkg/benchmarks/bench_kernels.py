"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

``--end-to-end`` also times 2000 environment steps plus one m=10000 violation
estimate in fresh interpreters, once per backend (``NAVSAFE_DISABLE_NUMBA``).
"""
import argparse
import math
import os
import subprocess
import sys
import timeit

import numpy as np

from navsafe import _kernels as K


def cases(rng):
    x = rng.uniform(0, 1, (10_000, 13))
    w1, b1 = rng.normal(size=(13, 64)), rng.normal(size=64)
    h = rng.uniform(0, 1, (10_000, 64))
    w2, b2 = rng.normal(size=(64, 64)), rng.normal(size=64)
    lo = rng.uniform(0, 0.5, (4096, 64))
    n = 2500
    r, v = rng.normal(size=n), rng.normal(size=n)
    d = (rng.random(n) < 0.01).astype(float)
    rects = np.array([[1.0, 1.0, 0.25, 0.25], [3.0, 1.0, 0.15, 0.45], [2.0, 2.0, 0.35, 0.2],
                      [1.0, 3.0, 0.45, 0.15], [3.0, 3.0, 0.25, 0.25]])
    discs = np.array([[2.5, 2.5, 0.15], [1.5, 2.5, 0.15]])
    return {
        "dense 10000x13->64": ("dense", (x, w1, b1, True)),
        "dense 10000x64->64": ("dense", (h, w2, b2, True)),
        "interval 4096x64->64": ("interval_dense", (lo, lo + 0.1, w2, b2, True)),
        "gae T=2500": ("gae", (r, v, d, 0.0, 0.9, 0.97)),
        "lidar 11 rays": ("lidar", (0.5, 0.5, 0.3, rects, discs, 4.0, 4.0, 11, math.pi, 3.5)),
    }


E2E = """
import time, numpy as np
from navsafe import _kernels
from navsafe.env import NavEnv, make_task
from navsafe.properties import navigation_property_set, property_violation
from navsafe.mlp import Mlp, MlpSpec
env = NavEnv(make_task("Fixed_obs_NT"), seed=0); env.reset()
rng = np.random.default_rng(0)
net = Mlp.init(MlpSpec.actor(), rng)
prop = navigation_property_set()[0]
env.step(0); property_violation(net, prop, 10, rng)  # warm-up / JIT
t = time.perf_counter()
for _ in range(2000):
    if env.step(int(rng.integers(0, 5))).done:
        env.reset()
t_env = time.perf_counter() - t
t = time.perf_counter()
property_violation(net, prop, 10_000, rng)
t_est = time.perf_counter() - t
print(f"{_kernels.BACKEND:6s}  2000 env steps {t_env * 1e3:8.1f} ms   m=10000 estimate {t_est * 1e3:8.1f} ms")
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'numba':>12s} {'numpy':>12s} {'speedup':>8s}")
    for name, (kernel, a) in cases(rng).items():
        nb, npf = getattr(K, f"{kernel}_nb"), getattr(K, f"{kernel}_np")
        nb(*a)  # compile outside the timed region
        t_nb = min(timeit.repeat(lambda: nb(*a), number=1, repeat=args.repeat))
        t_np = min(timeit.repeat(lambda: npf(*a), number=1, repeat=args.repeat))
        print(f"{name:24s} {t_nb * 1e6:10.1f}us {t_np * 1e6:10.1f}us {t_np / t_nb:7.2f}x")

    if args.end_to_end:
        for flag in ("", "1"):
            env = dict(os.environ, NAVSAFE_DISABLE_NUMBA=flag)
            subprocess.run([sys.executable, "-c", E2E], env=env, check=True)


if __name__ == "__main__":
    main()
