"""Experiment orchestration: run configs, per-seed training, manifests, reports."""
from __future__ import annotations

import hashlib
import json
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, _kernels, mlp
from .algos.penalty import PenaltyMode
from .algos.ppo import greedy_action
from .algos.train import METRIC_COLUMNS, TrainConfig, read_metrics, train
from .env import NavEnv, Outcome, make_task
from .properties import (
    DEFAULT_EPSILON,
    PropertySet,
    approximate_violation,
    load_properties,
    navigation_property_set,
)
from .verify import DEFAULT_GAP, DEFAULT_MAX_BOXES, compare_estimator, formal_violation, write_rows

REPORT_METRICS = ("success_rate_1k", "cost_1k", "violation_1k", "reward_1k")


def parse_seeds(text) -> list[int]:
    """``"0..2"`` -> [0, 1, 2]; ``"1,4,7"`` -> [1, 4, 7]; ints and lists pass through."""
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ValueError(f"empty seed range {part!r}")
            out.extend(range(a, b + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("no seeds given")
    return out


@dataclass(frozen=True)
class RunConfig:
    task: str = "Fixed_obs_NT"
    agent: str = "ppo"
    penalty: str = "none"
    seeds: tuple[int, ...] = (0,)
    total_steps: int = 10_000
    samples: int = 1000
    epsilon: float = DEFAULT_EPSILON
    omega: float = 1.0
    gap: float = DEFAULT_GAP
    out_dir: str = "runs"
    name: str = ""
    online_properties: bool = True
    checkpoint_every: int = 0
    lppo_threshold: float | None = None
    jobs: int = 1
    plots: bool = False
    ppo: dict = field(default_factory=dict)
    dqn: dict = field(default_factory=dict)

    def __post_init__(self):
        seeds = tuple(parse_seeds(list(self.seeds) if not isinstance(self.seeds, str) else self.seeds))
        if len(set(seeds)) != len(seeds):
            raise ValueError(f"seeds must be distinct, got {seeds}")
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "penalty", PenaltyMode.parse(self.penalty).value)
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if not 0 < self.gap <= 1:
            raise ValueError("gap must lie in (0, 1]")
        self.train_config(seeds[0])  # full validation of the training options

    @property
    def run_name(self) -> str:
        return self.name or f"{self.agent}_{self.penalty}_{self.task}"

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.run_name

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig.from_dict(dict(
            agent=self.agent, task=self.task, penalty=self.penalty, seed=seed,
            total_steps=self.total_steps, omega=self.omega, samples=self.samples,
            epsilon=self.epsilon, online_properties=self.online_properties,
            checkpoint_every=self.checkpoint_every, lppo_threshold=self.lppo_threshold,
            ppo=dict(self.ppo), dqn=dict(self.dqn),
        ))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run options: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        """JSON config file; non-None entries of ``overrides`` win."""
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ValueError(f"{path}: expected a JSON object")
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(d)


# ---------------------------------------------------------------- manifest
def source_hash() -> str:
    """SHA-256 over the package sources, stable across checkouts."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, extra: dict | None = None) -> Path:
    import numba

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv,
        "config": config,
        "package_version": __version__,
        "source_sha256": source_hash(),
        "backend": _kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "created_unix": time.time(),
    }
    manifest.update(extra or {})
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


# ------------------------------------------------------------------- train
def _train_one(args) -> dict:
    run_cfg, seed = args
    out = run_cfg.run_dir / f"seed_{seed}"
    res = train(run_cfg.train_config(seed), out)
    return {"seed": seed, "dir": str(out), "summary": res.summary}


def run_training(cfg: RunConfig, log=print) -> dict:
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir / "manifest.json", "train", cfg.to_dict(),
                   {"train_configs": [cfg.train_config(s).to_dict() for s in cfg.seeds]})
    jobs = [(cfg, s) for s in cfg.seeds]
    done = []
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for r in pool.map(_train_one, jobs):
                log(f"seed {r['seed']} finished in {r['summary']['elapsed_s']:.1f}s")
                done.append(r)
    else:
        for j in jobs:
            r = _train_one(j)
            log(f"seed {r['seed']} finished in {r['summary']['elapsed_s']:.1f}s")
            done.append(r)
    report = aggregate_runs([Path(r["dir"]) for r in done])
    report["run"] = cfg.run_name
    write_report(report, run_dir)
    if cfg.plots:
        for metric in ("success_rate_1k", "cost_1k", "violation_1k"):
            write_svg_plot({f"seed {r['seed']}": read_metrics(Path(r["dir"]) / "metrics.csv")
                            for r in done}, metric, run_dir / f"{metric}.svg")
    return report


# ------------------------------------------------------------------ report
def _mean_std(xs: Sequence[float]) -> dict:
    xs = [x for x in xs if x is not None and not math.isnan(x)]
    if not xs:
        return {"mean": None, "std": None, "n": 0}
    a = np.asarray(xs, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std()), "n": len(xs)}


def seed_statistics(rows: list[dict]) -> dict:
    """Final-row values and whole-run means of each logged metric."""
    out = {}
    for m in REPORT_METRICS:
        vals = [r[m] for r in rows if r[m] is not None]
        out[f"final_{m}"] = vals[-1] if vals else None
        out[f"run_mean_{m}"] = float(np.mean(vals)) if vals else None
    return out


def aggregate_runs(seed_dirs: Sequence[Path]) -> dict:
    """Mean and std across seeds, computed only from each seed's metrics.csv."""
    per_seed = {}
    for d in seed_dirs:
        path = Path(d) / "metrics.csv"
        if not path.exists():
            continue
        per_seed[Path(d).name] = seed_statistics(read_metrics(path))
    keys = sorted({k for s in per_seed.values() for k in s})
    return {
        "completed_seeds": len(per_seed),
        "per_seed": per_seed,
        "aggregate": {k: _mean_std([s[k] for s in per_seed.values()]) for k in keys},
    }


def write_report(report: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    rows = [{"metric": k, **v} for k, v in report["aggregate"].items()]
    if rows:
        write_rows(rows, out_dir / "report.csv")
    return out_dir / "report.json"


def write_svg_plot(series: dict[str, list[dict]], metric: str, path, width=640, height=360) -> Path:
    """Minimal line chart of ``metric`` against step, one polyline per series."""
    path = Path(path)
    pts = {k: [(r["step"], r[metric]) for r in rows if r.get(metric) is not None]
           for k, rows in series.items()}
    xs = [x for p in pts.values() for x, _ in p] or [0, 1]
    ys = [y for p in pts.values() for _, y in p] or [0, 1]
    x0, x1 = min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1
    y0, y1 = min(ys), max(ys) if max(ys) > min(ys) else min(ys) + 1
    pad = 40
    sx = lambda x: pad + (x - x0) / (x1 - x0) * (width - 2 * pad)  # noqa: E731
    sy = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)  # noqa: E731
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{metric}</text>',
        f'<text x="{pad}" y="{height - 10}" font-size="10">{x0}</text>',
        f'<text x="{width - pad}" y="{height - 10}" font-size="10" text-anchor="end">{x1}</text>',
        f'<text x="4" y="{height - pad}" font-size="10">{y0:.3g}</text>',
        f'<text x="4" y="{pad}" font-size="10">{y1:.3g}</text>',
    ]
    for i, (name, p) in enumerate(pts.items()):
        c = colors[i % len(colors)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in p)
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{coords}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * i}" font-size="10" fill="{c}" '
                     f'text-anchor="end">{name}</text>')
    parts.append("</svg>")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts))
    return path


# -------------------------------------------------------------- eval / verify
def resolve_properties(path=None) -> PropertySet:
    if path is None:
        return navigation_property_set()
    props = load_properties(path)
    if len(props) == 0:
        raise ValueError(f"{path}: property file is empty")
    return props


def evaluate_policy(net: mlp.Mlp, task: str = "Evaluation_NT", episodes: int = 10, seed: int = 0,
                    props: PropertySet | None = None, samples: int = 1000) -> dict:
    """Greedy rollouts; mean success rate, cost per episode and per-step violation."""
    props = navigation_property_set() if props is None else props
    env = NavEnv(make_task(task, seed), seed=seed)
    rng = np.random.default_rng([seed, 2])
    goals = fails = 0
    costs, viols = [], []
    for ep in range(episodes):
        obs = env.reset(seed * 100_003 + ep)
        ep_cost = 0.0
        while True:
            viols.append(approximate_violation(net, props, obs, samples, rng).value)
            res = env.step(greedy_action(net, obs))
            ep_cost += res.cost
            goals += res.outcome is Outcome.GOAL_REACHED
            obs = res.obs
            if res.done:
                fails += res.outcome is not Outcome.GOAL_REACHED
                break
        costs.append(ep_cost)
    attempts = goals + fails
    return {
        "episodes": episodes,
        "goals": goals,
        "success_rate": goals / attempts if attempts else 0.0,
        "cost_per_episode": float(np.mean(costs)),
        "violation": float(np.mean(viols)),
    }


def summarize_rows(rows: list[dict], key: str, numeric: Sequence[str]) -> list[dict]:
    """Mean and std of ``numeric`` columns grouped by ``key``."""
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r)
    out = []
    for k, rs in groups.items():
        row = {key: k, "count": len(rs)}
        for c in numeric:
            vals = np.asarray([float(r[c]) for r in rs])
            row[f"{c}_mean"] = float(vals.mean())
            row[f"{c}_std"] = float(vals.std())
        out.append(row)
    return out


def verify_checkpoints(paths: Sequence, props: PropertySet, gap: float = DEFAULT_GAP,
                       max_boxes: int = DEFAULT_MAX_BOXES, method: str = "ibp") -> list[dict]:
    rows = []
    for path in paths:
        net = mlp.load(path)
        for i, p in enumerate(props):
            res = formal_violation(net, p, gap=gap, max_boxes=max_boxes, method=method)
            rows.append({
                "checkpoint": str(path),
                "property": p.name or f"property_{i}",
                "lower": res.violation_lower,
                "upper": res.violation_upper,
                "midpoint": res.midpoint,
                "gap": res.gap,
                "target_gap": gap,
                "boxes_explored": res.boxes_explored,
                "seconds": res.elapsed,
                "budget_exhausted": int(res.budget_exhausted),
                "degenerate_measure": res.degenerate_measure,
            })
    return rows


def compare_checkpoints(paths: Sequence, props: PropertySet, m_values: Sequence[int],
                        gap: float = DEFAULT_GAP, max_boxes: int = DEFAULT_MAX_BOXES,
                        seed: int = 0, method: str = "ibp") -> tuple[list[dict], list[dict]]:
    """Per-checkpoint comparison rows and their per-property mean/std summary."""
    rows = []
    for path in paths:
        net = mlp.load(path)
        for r in compare_estimator(net, props, m_values, gap, max_boxes, seed, method):
            d = r.as_dict()
            for m in m_values:
                d[f"delta_{m}"] = abs(d[f"estimate_{m}"] - d["formal_mid"])
            rows.append({"checkpoint": str(path), **d})
    numeric = [k for k in rows[0] if k not in ("checkpoint", "property")] if rows else []
    return rows, summarize_rows(rows, "property", numeric)


__all__ = [
    "METRIC_COLUMNS", "RunConfig", "aggregate_runs", "compare_checkpoints", "evaluate_policy",
    "parse_seeds", "resolve_properties", "run_training", "seed_statistics", "source_hash",
    "summarize_rows", "verify_checkpoints", "write_manifest", "write_report", "write_svg_plot",
]
