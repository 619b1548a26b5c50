import csv
import json

import numpy as np
import pytest

from conftest import random_net
from navsafe import harness, mlp
from navsafe.algos import read_metrics
from navsafe.cli import main
from navsafe.harness import RunConfig, aggregate_runs, parse_seeds


def test_parse_seeds():
    assert parse_seeds("0..2") == [0, 1, 2]
    assert parse_seeds("1,4, 7") == [1, 4, 7]
    assert parse_seeds(5) == [5]
    with pytest.raises(ValueError):
        parse_seeds("3..1")
    with pytest.raises(ValueError):
        parse_seeds("")


def test_run_config_validation_and_overrides(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(seeds="1,1")
    with pytest.raises(ValueError):
        RunConfig(agent="lppo", penalty="cost")
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"task": "Fixed_obs_T", "seeds": [0, 1], "total_steps": 50}))
    cfg = RunConfig.load(path, {"total_steps": 70, "agent": None})
    assert cfg.total_steps == 70 and cfg.task == "Fixed_obs_T" and cfg.seeds == (0, 1)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    rc = main(["train", "--task", "Fixed_obs_NT", "--agent", "ppo", "--penalty", "violation",
               "--seeds", "0..2", "--steps", "1000", "--out", str(root), "--plots"])
    assert rc == 0
    return root / "ppo_violation_Fixed_obs_NT"


def test_cli_train_writes_per_seed_artifacts(trained):
    for s in range(3):
        d = trained / f"seed_{s}"
        assert (d / "metrics.csv").exists() and (d / "policy.npz").exists()
        header = (d / "metrics.csv").read_text().splitlines()[0]
        assert header == ("step,episode,success_rate_1k,cost_1k,violation_1k,reward_1k,"
                          "lambda,active_property_count")
    report = json.loads((trained / "report.json").read_text())
    assert report["completed_seeds"] == 3
    assert report["aggregate"]["final_cost_1k"]["n"] == 3
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["config"]["seeds"] == [0, 1, 2] and len(manifest["source_sha256"]) == 64
    assert (trained / "violation_1k.svg").read_text().startswith("<svg")


def test_aggregate_is_recomputable_from_csvs(trained):
    stored = json.loads((trained / "report.json").read_text())
    again = aggregate_runs(sorted(trained.glob("seed_*")))
    assert again["aggregate"] == stored["aggregate"]
    costs = [read_metrics(trained / f"seed_{s}" / "metrics.csv")[-1]["cost_1k"] for s in range(3)]
    assert stored["aggregate"]["final_cost_1k"]["mean"] == pytest.approx(np.mean(costs))


def test_manifest_reproduces_run(trained, tmp_path):
    manifest = json.loads((trained / "manifest.json").read_text())
    cfg = RunConfig.from_dict({**manifest["config"], "seeds": [1], "out_dir": str(tmp_path)})
    harness.run_training(cfg, log=lambda s: None)
    a = (trained / "seed_1" / "metrics.csv").read_bytes()
    b = (cfg.run_dir / "seed_1" / "metrics.csv").read_bytes()
    assert a == b


def test_cli_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--agent", "ppo"])
    assert exc.value.code != 0
    assert main(["train", "--task", "Fixed_obs_NT", "--agent", "lppo", "--penalty", "cost"]) != 0
    assert "lppo" in capsys.readouterr().err


def test_cli_verify_and_compare(trained, tmp_path):
    ck = str(trained / "seed_0" / "policy.npz")
    out = tmp_path / "v.csv"
    assert main(["verify", "--checkpoints", ck, "--max-boxes", "300", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["property"] for r in rows] == ["p_forward", "p_left", "p_right"]
    assert all(float(r["lower"]) <= float(r["upper"]) for r in rows)
    assert (tmp_path / "v.manifest.json").exists()
    out = tmp_path / "c.csv"
    assert main(["compare", "--checkpoints", ck, "--m", "100,1000", "--max-boxes", "300",
                 "--out", str(out)]) == 0
    summary = list(csv.DictReader((tmp_path / "c_summary.csv").open()))
    assert len(summary) == 3 and all(float(r["estimate_100_std"]) == 0.0 for r in summary)


def test_cli_verify_errors(tmp_path):
    ck = tmp_path / "n.npz"
    mlp.save(random_net(0), ck)
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    assert main(["verify", "--checkpoints", str(ck), "--properties", str(empty)]) != 0
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"nope")
    assert main(["verify", "--checkpoints", str(bad)]) != 0


def test_cli_eval_is_deterministic(trained, tmp_path):
    ck = str(trained / "seed_0" / "policy.npz")
    outs = []
    for name in ("a.csv", "b.csv"):
        assert main(["eval", "--checkpoints", ck, "--episodes", "1", "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_text())
    assert outs[0] == outs[1]
    row = next(csv.DictReader((tmp_path / "a.csv").open()))
    assert 0.0 <= float(row["success_rate"]) <= 1.0 and 0.0 <= float(row["violation"]) <= 1.0


def test_cli_env_demo_and_props(tmp_path):
    out = tmp_path / "trace.csv"
    assert main(["env-demo", "--steps", "20", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 21
    cfg_path = tmp_path / "env.json"
    from navsafe.env import make_task

    make_task("Evaluation_NT").save(cfg_path)
    assert main(["env-demo", "--config", str(cfg_path), "--steps", "5", "--out", str(out)]) == 0
    assert main(["props", "--out", str(tmp_path / "p.jsonl")]) == 0
    assert len((tmp_path / "p.jsonl").read_text().splitlines()) == 3


def test_svg_plot_handles_empty_series(tmp_path):
    p = harness.write_svg_plot({"a": []}, "cost_1k", tmp_path / "x.svg")
    assert p.read_text().endswith("</svg>")
